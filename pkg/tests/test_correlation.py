import warnings
from contextlib import contextmanager

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats
from scipy.linalg import expm

import oracles
from mollow.correlation import (
    CorrelationHistogram,
    EmptyStreamError,
    G2ModelParams,
    GridMismatchError,
    HomSetup,
    ResolutionError,
    convolve_irf,
    expected_histogram,
    g2_model_cascade,
    g2_model_central,
    g2_model_sideband,
    histogram_g2,
    hom_model,
    hom_simulate,
    two_detector_irf,
    visibility,
)
from mollow.emitter import EmitterParams
from mollow.photon_stream import PhotonStream, StreamConfig, channel_select, simulate_dressed_cascade

params_st = st.builds(G2ModelParams, g0=st.floats(0.0, 1.0), tau_r=st.floats(50.0, 5000.0),
                      b=st.floats(0.0, 3.0), tau_bunch=st.floats(500.0, 5e4),
                      t2=st.floats(10.0, 1000.0))


@contextmanager
def quiet():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        yield


def poisson_stream(rate, duration, seed):
    rng = np.random.default_rng(seed)
    t = np.sort(rng.uniform(0, duration, rng.poisson(rate * duration)))
    return PhotonStream(t, np.zeros(t.size, np.uint8), t.copy(), duration)


# --- histogramming ----------------------------------------------------------------------

def test_uncorrelated_streams_are_flat():
    a = poisson_stream(1e-3, 2e8, 1)
    b = poisson_stream(1e-3, 2e8, 2)
    h = histogram_g2(a, b, 100.0, 10000.0)
    p_chi2, n_out, p_out = oracles.poisson_consistency(h.counts, h.norm_basis)
    assert p_chi2 > 0.01 and p_out > 0.01
    assert np.mean(h.g2) == pytest.approx(1.0, abs=3 * np.sqrt(1 / h.counts.sum()))


def test_beamsplitter_auto_correlation_of_poisson_is_flat():
    h = histogram_g2(poisson_stream(2e-3, 2e8, 3), None, 200.0, 20000.0, seed=5)
    p_chi2, _, p_out = oracles.poisson_consistency(h.counts, h.norm_basis)
    assert p_chi2 > 0.01 and p_out > 0.01


def test_swap_symmetry_is_exact():
    a = poisson_stream(1e-3, 1e8, 4)
    b = poisson_stream(2e-3, 1e8, 5)
    hab = histogram_g2(a, b, 100.0, 5000.0)
    hba = histogram_g2(b, a, 100.0, 5000.0)
    assert np.array_equal(hab.counts, hba.counts[::-1])
    assert np.allclose(hab.norm_basis, hba.norm_basis[::-1], rtol=1e-14)


def test_pair_count_against_brute_force():
    a = poisson_stream(1e-3, 2e6, 6)
    b = poisson_stream(1e-3, 2e6, 7)
    h = histogram_g2(a, b, 250.0, 3000.0)
    d = (b.time[None, :] - a.time[:, None]).ravel()
    idx = np.floor(d / 250.0 + 0.5)
    ref = np.array([np.sum(idx == k) for k in range(-12, 13)])
    assert np.array_equal(h.counts, ref)


def test_empty_stream_and_quantum_warning():
    s = poisson_stream(1e-3, 1e6, 8)
    with pytest.raises(EmptyStreamError):
        histogram_g2(PhotonStream.empty(1e6), s, 100.0, 1000.0)
    with pytest.warns(RuntimeWarning, match="quantum"):
        histogram_g2(s, s, 10.0, 100.0, time_quantum=8.0)


# --- analytic models -------------------------------------------------------------------

@given(params_st)
def test_model_limits(p):
    assert g2_model_sideband(0.0, p) == pytest.approx(p.g0 * (1 + p.b), abs=1e-12)
    assert g2_model_sideband(1e9, p) == pytest.approx(1.0, abs=1e-12)
    assert g2_model_central(p.tau_bunch, p) == pytest.approx(1 + p.b / np.e, rel=1e-12)
    assert g2_model_cascade(0.0, p) == pytest.approx(p.g0 * (1 + p.b), abs=1e-9)
    assert g2_model_cascade(1e9, p) == pytest.approx(1.0, abs=1e-9)


def test_central_model_without_blinking_is_flat():
    assert np.all(g2_model_central(np.linspace(-1e5, 1e5, 11), G2ModelParams(b=0.0)) == 1.0)


@given(params_st)
def test_cascade_reduces_to_product_without_blinking(p):
    q = G2ModelParams(p.g0, p.tau_r, 0.0, p.tau_bunch, p.t2)
    tau = np.linspace(-5 * p.tau_r, 5 * p.tau_r, 41)
    assert np.allclose(g2_model_cascade(tau, q), g2_model_sideband(tau, q), rtol=0, atol=1e-12)


@settings(max_examples=30)
@given(params_st)
def test_cascade_matches_matrix_exponential(p):
    r_off = p.b / ((1 + p.b) * p.tau_bunch)
    r_on = 1 / ((1 + p.b) * p.tau_bunch)
    A = np.array([[-r_off - 1 / p.tau_r, r_off], [r_on, -r_on]])
    for t in (0.0, 0.3 * p.tau_r, p.tau_r, 4 * p.tau_r, p.tau_bunch):
        env = 1 + p.b * np.exp(-t / p.tau_bunch)
        ref = env - (1 - p.g0) * (1 + p.b) * expm(A * t)[0, 0]
        assert g2_model_cascade(t, p) == pytest.approx(ref, abs=1e-10)


def test_hom_ideal_limits_are_exact():
    p = G2ModelParams(0.0, 500.0, 0.0, 1e4, 300.0)
    setup = HomSetup(delay=1e6, overlap=1.0)
    assert hom_model(0.0, p, setup.with_mode("orthogonal")) == pytest.approx(0.5, abs=1e-15)
    assert hom_model(0.0, p, setup.with_mode("parallel")) == pytest.approx(0.0, abs=1e-15)


def test_hom_side_dips_of_depth_quarter():
    p = G2ModelParams(0.0, 500.0, 0.0, 1e4, 300.0)
    setup = HomSetup(delay=13000.0, mode="orthogonal")
    wing = hom_model(60000.0, p, setup)
    assert wing == pytest.approx(1.0, abs=1e-12)
    assert wing - hom_model(13000.0, p, setup) == pytest.approx(0.25, abs=1e-9)


def test_hom_general_splitter_weights():
    p = G2ModelParams(0.0, 500.0, 0.0, 1e4, 300.0)
    s = HomSetup(delay=1e6, r1=0.3, t1=0.7, r2=0.4, t2=0.6, overlap=1.0, mode="orthogonal")
    # same-arm pairs keep g²(0) = 0; cross-arm pairs carry r1·t1 per side
    assert hom_model(0.0, p, s) == pytest.approx(2 * 0.3 * 0.7, abs=1e-12)
    s = s.with_mode("parallel")
    v = 2 * 0.4 * 0.6 / (0.4**2 + 0.6**2)
    assert hom_model(0.0, p, s) == pytest.approx(2 * 0.3 * 0.7 * (1 - v), abs=1e-12)


@settings(max_examples=30)
@given(params_st, st.floats(0.0, 1.0))
def test_parallel_never_above_orthogonal(p, overlap):
    setup = HomSetup(overlap=overlap)
    tau = np.linspace(-40000, 40000, 161)
    with quiet():
        par = hom_model(tau, p, setup.with_mode("parallel"))
        perp = hom_model(tau, p, setup.with_mode("orthogonal"))
    assert np.all(par <= perp + 1e-15)
    v, _ = visibility((tau, perp), (tau, par))
    ok = ~np.isnan(v)
    assert np.all((v[ok] >= -1e-12) & (v[ok] <= 1 + 1e-12))


def test_hom_warns_on_unphysical_coherence():
    with pytest.warns(RuntimeWarning, match="exceeds"):
        hom_model(0.0, G2ModelParams(tau_r=100.0, t2=300.0), HomSetup())


# --- instrument response ---------------------------------------------------------------------

def test_irf_identity_at_zero_width():
    tau = np.linspace(-5000, 5000, 1001)
    y = g2_model_sideband(tau, G2ModelParams(0.0, 540.0, 0.3, 9510.0))
    out = convolve_irf(y, 0.0, tau)
    assert np.array_equal(out, y) and out is not y


def test_perfect_dip_raised_by_irf():
    p = G2ModelParams(0.0, 540.0, 0.0, 1e4)
    f = lambda t: g2_model_sideband(t, p)
    tau = np.arange(-20000, 20001) * 1.0
    conv = convolve_irf(f(tau), 400.0, tau)
    pts = np.array([0.0, 300.0, 1000.0, 3000.0])
    ref = oracles.convolve_quad(f, pts, 400.0, breaks=(0.0,))
    assert np.allclose(conv[np.searchsorted(tau, pts)], ref, rtol=0, atol=5e-6)
    assert ref[0] > 0.2  # visibly raised from zero


def test_irf_preserves_area_and_wings():
    tau = np.arange(-60000, 60001) * 2.0
    y = g2_model_sideband(tau, G2ModelParams(0.05, 540.0, 0.3, 9510.0))
    conv = convolve_irf(y, 566.0, tau)
    inner = np.abs(tau) <= 100000
    assert np.trapezoid(conv[inner], tau[inner]) == pytest.approx(
        np.trapezoid(y[inner], tau[inner]), rel=1e-6)
    flat = g2_model_sideband(tau, G2ModelParams(0.05, 540.0, 0.0, 9510.0))
    conv = convolve_irf(flat, 566.0, tau)
    assert np.allclose(conv[:500], 1.0, rtol=0, atol=1e-12)
    assert np.allclose(conv[-500:], 1.0, rtol=0, atol=1e-12)


def test_irf_on_histogram_keeps_baseline():
    tau = np.arange(-100, 101) * 20.0
    h = CorrelationHistogram(tau, np.full(tau.size, 50.0), np.full(tau.size, 50.0), 20.0)
    c = convolve_irf(h, 200.0)
    assert np.allclose(c.g2, 1.0) and np.array_equal(c.norm_basis, h.norm_basis)


def test_irf_resolution_checks():
    tau = np.arange(-10, 11) * 100.0
    with pytest.raises(ResolutionError):
        convolve_irf(np.ones(tau.size), 400.0, tau)
    with pytest.raises(ResolutionError):
        convolve_irf(np.ones(3), 400.0, np.array([0.0, 1.0, 3.0]))
    with pytest.raises(ValueError):
        convolve_irf(np.ones(3), -1.0, np.arange(3.0))


def test_expected_histogram_against_quadrature():
    p = G2ModelParams(0.02, 540.0, 0.3, 9510.0)
    f = lambda t: g2_model_sideband(t, p)
    grid = np.arange(-30, 31) * 100.0
    tau = np.array([-1000.0, 0.0, 100.0, 2500.0])
    got = expected_histogram(f, grid, 100.0, 566.0, oversample=20)[np.searchsorted(grid, tau)]
    # bin average of the convolved curve by nested quadrature (Simpson over the bin)
    ref = []
    for t in tau:
        u = np.linspace(t - 50, t + 50, 21)
        ref.append(np.trapezoid(oracles.convolve_quad(f, u, 566.0, breaks=(0.0,)), u) / 100.0)
    assert np.allclose(got, ref, rtol=0, atol=2e-5)


def test_two_detector_irf():
    assert two_detector_irf(400.0) == pytest.approx(565.685, abs=1e-3)


# --- visibility ------------------------------------------------------------------------------

def test_visibility_examples():
    assert visibility(0.61, 0.04)[1] == pytest.approx(0.934, abs=5e-4)
    assert visibility(0.3, 0.3)[1] == 0.0
    assert visibility(0.5, 0.0)[1] == 1.0
    v, v0 = visibility(np.array([0.0, 0.5]), np.array([0.0, 0.1]))
    assert np.isnan(v[0]) and v[1] == pytest.approx(0.8)


def test_visibility_grid_mismatch():
    tau = np.arange(5.0)
    with pytest.raises(GridMismatchError):
        visibility(np.ones(5), np.ones(4))
    with pytest.raises(GridMismatchError):
        visibility((tau, np.ones(5)), (tau + 1, np.ones(5)))


# --- Monte-Carlo two-photon interference --------------------------------------------------------

@pytest.fixture(scope="module")
def red_stream():
    p = EmitterParams(45.5)
    s = simulate_dressed_cascade(p, StreamConfig(4e9, seed=12))
    return channel_select(s, "R")


def test_hom_side_dips_in_simulation(red_stream):
    setup = HomSetup(delay=13000.0, mode="orthogonal")
    h = hom_simulate(red_stream, setup, 300.0, seed=1, bin_width=200.0, window=40000.0,
                     use_detected=False)
    wing = h.g2[np.abs(h.tau) > 30000].mean()
    for side in (-13000.0, 13000.0):
        i = np.argmin(np.abs(h.tau - side))
        expect = expected_histogram(
            lambda t: hom_model(t, G2ModelParams(0.0, 2016.0, 0.0, 1e4, 300.0), setup),
            h.tau[i:i + 1], 200.0)[0]
        assert h.g2[i] == pytest.approx(expect, abs=4 * h.g2_err[i])
    assert wing == pytest.approx(1.0, abs=0.01)


def test_hom_parallel_dip_at_fine_bins(red_stream):
    setup = HomSetup(delay=13000.0, overlap=1.0, mode="parallel")
    h = hom_simulate(red_stream, setup, 300.0, seed=2, bin_width=50.0, window=5000.0,
                     use_detected=False)
    i0 = np.argmin(np.abs(h.tau))
    assert h.g2[i0] < 0.05


def test_hom_modes_share_normalization_and_wings(red_stream):
    kw = dict(seed=3, bin_width=200.0, window=40000.0, use_detected=False)
    perp = hom_simulate(red_stream, HomSetup(mode="orthogonal"), 300.0, **kw)
    par = hom_simulate(red_stream, HomSetup(mode="parallel"), 300.0, **kw)
    assert np.array_equal(perp.norm_basis, par.norm_basis)
    far = np.abs(perp.tau) > 3000
    assert np.array_equal(perp.counts[far], par.counts[far])
    assert par.counts[np.argmin(np.abs(par.tau))] < perp.counts[np.argmin(np.abs(perp.tau))]


def test_hom_simulation_matches_model_without_blinking(red_stream):
    setup = HomSetup(delay=13000.0)
    p = G2ModelParams(0.0, 2016.0, 0.0, 1e4, 300.0)
    for mode in ("orthogonal", "parallel"):
        s = setup.with_mode(mode)
        h = hom_simulate(red_stream, s, 300.0, seed=4, bin_width=100.0, window=20000.0,
                         use_detected=False)
        with quiet():
            model = expected_histogram(lambda t: hom_model(t, p, s), h.tau, 100.0)
        p_chi2, _, p_out = oracles.poisson_consistency(h.counts, h.norm_basis * model)
        assert p_chi2 > 0.01 and p_out > 0.01, mode
