import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mollow import io
from mollow.correlation import CorrelationHistogram, G2ModelParams
from mollow.emitter import EmitterParams, emission_spectrum
from mollow.fitting import fit_g2, fit_lorentzian, lorentzian, synthetic_histogram
from mollow.photon_stream import StreamConfig, simulate_dressed_cascade


@pytest.fixture(scope="module")
def stream():
    return simulate_dressed_cascade(EmitterParams(45.5), StreamConfig(2e6, seed=3,
                                                                      detector_jitter_fwhm=400.0))


def test_spectrum_round_trip(tmp_path):
    sp = emission_spectrum(EmitterParams(20.0, 5.0), np.linspace(-60, 60, 1201))
    back = io.read_spectrum(io.write_spectrum(tmp_path / "s.csv", sp))
    assert back.grid.tobytes() == sp.grid.tobytes()
    assert back.intensity.tobytes() == sp.intensity.tobytes()
    assert back.elastic_weight == sp.elastic_weight


@pytest.mark.parametrize("name", ["s.csv", "s.bin"])
def test_stream_round_trip(tmp_path, stream, name):
    back = io.read_stream(io.write_stream(tmp_path / name, stream))
    assert len(stream) > 100
    for attr in ("time", "channel", "detected_time"):
        assert getattr(back, attr).tobytes() == getattr(stream, attr).tobytes()
    assert back.duration == stream.duration


def test_stream_csv_without_sidecar_uses_last_time(tmp_path, stream):
    path = io.write_stream_csv(tmp_path / "s.csv", stream)
    path.with_suffix(".json").unlink()
    assert io.read_stream_csv(path).duration == stream.time.max()
    assert io.read_stream_csv(path, duration=5.0).duration == 5.0


def test_binary_stream_rejects_damage(tmp_path, stream):
    path = io.write_stream_binary(tmp_path / "s.bin", stream)
    raw = path.read_bytes()
    path.write_bytes(raw[:-3])
    with pytest.raises(io.FormatError, match="truncated"):
        io.read_stream_binary(path)
    path.write_bytes(b"XXXXX" + raw[5:])
    with pytest.raises(io.FormatError, match="magic"):
        io.read_stream_binary(path)


def test_stream_csv_bad_channel(tmp_path):
    p = tmp_path / "s.csv"
    p.write_text("t_ps,channel,detected_t_ps\n1,Q,1\n")
    with pytest.raises(io.FormatError):
        io.read_stream_csv(p)


def test_wrong_header(tmp_path):
    p = tmp_path / "x.csv"
    p.write_text("a,b\n1,2\n")
    with pytest.raises(io.FormatError, match="header"):
        io.read_spectrum(p)
    p.write_text("")
    with pytest.raises(io.FormatError, match="empty"):
        io.read_spectrum(p)


def test_histogram_round_trip_with_sidecar(tmp_path):
    h = synthetic_histogram("sideband", G2ModelParams(0.1, 1000.0, 0.2, 5000.0),
                            np.arange(-300, 301) * 100.0, 100.0, 50.0, 400.0, rng=2)
    h.meta["seed"] = 2
    back = io.read_histogram(io.write_histogram(tmp_path / "h.csv", h))
    assert np.array_equal(back.counts, h.counts)  # integers come back as floats
    assert back.norm_basis.tobytes() == h.norm_basis.tobytes()
    assert back.bin_width == h.bin_width and back.meta == {"seed": 2}


@settings(max_examples=20, deadline=None)
@given(st.lists(st.integers(0, 500), min_size=3, max_size=40).filter(lambda c: sum(c) > 0),
       st.floats(10.0, 1000.0))
def test_histogram_without_sidecar_interpolates_baseline(counts, base):
    import tempfile
    from pathlib import Path

    counts = np.array(counts, float)
    tau = (np.arange(counts.size) - counts.size // 2) * 50.0
    h = CorrelationHistogram(tau, counts, np.full(counts.size, base), 50.0)
    with tempfile.TemporaryDirectory() as d:
        path = io.write_histogram(Path(d) / "h.csv", h)
        path.with_suffix(".json").unlink()
        back = io.read_histogram(path)
    assert np.allclose(back.norm_basis, base, rtol=1e-12)
    assert back.bin_width == pytest.approx(50.0)
    assert np.array_equal(back.counts, counts)


def test_histogram_without_counts_is_an_error(tmp_path):
    p = tmp_path / "h.csv"
    p.write_text("tau_ps,counts,g2,g2_err\n0,0,0,0\n1,0,0,0\n")
    with pytest.raises(io.FormatError):
        io.read_histogram(p)


def test_fit_round_trip_with_curves(tmp_path):
    x = np.linspace(-20, 20, 201)
    fit = fit_lorentzian(x, lorentzian(x, 1.0, 4.0, 2.0) + 0.01 * np.cos(x))
    path = io.write_fit(tmp_path / "fit.json", fit, {"model": (x, lorentzian(x, *fit.values))})
    back = io.read_fit(path)
    assert back.names == fit.names and back.free == fit.free
    assert back.values.tobytes() == fit.values.tobytes()
    assert back.sigmas.tobytes() == fit.sigmas.tobytes()
    assert back.converged == fit.converged and back.extras == fit.extras
    tau, g = io.read_model_curve(tmp_path / "fit_model.csv")
    assert np.array_equal(tau, x)


def test_g2_fit_extras_serialize(tmp_path):
    h = synthetic_histogram("central", G2ModelParams(1.0, 1.0, 0.3, 2000.0),
                            np.arange(-200, 201) * 100.0, 100.0, 500.0, 0.0, rng=1)
    fit = fit_g2(h, "central", 0.0)
    back = io.read_fit(io.write_fit(tmp_path / "g.json", fit))
    assert back.extras["g0_deconv"] == fit.extras["g0_deconv"]
    assert back.extras["fixed"] == fit.extras["fixed"]
