import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import synth
from mollow import fitting
from mollow.correlation import G2ModelParams, HomSetup
from mollow.emitter import HBAR, EmitterParams, emission_spectrum
from mollow.fitting import (
    FitError,
    FitResult,
    InsufficientSpanError,
    calibrate_eid,
    chained_fit,
    extract_visibility,
    fit_g2,
    fit_linear_eid,
    fit_lorentzian,
    lorentzian,
    model_values,
    synthetic_histogram,
)

TAU = np.arange(-800, 801) * 100.0


# --- gradients -------------------------------------------------------------------------

@pytest.mark.parametrize("kind", ["lorentzian", "central", "sideband", "hom",
                                  "forward-central", "forward-sideband", "forward-hom"])
def test_analytic_gradients_match_finite_differences(kind):
    assert synth.gradient_error(kind, n=100, seed=1) < 1e-6


# --- Lorentzian --------------------------------------------------------------------------

@settings(max_examples=40, deadline=None)
@given(st.floats(-10, 10), st.floats(1.0, 8.0), st.floats(0.01, 100.0), st.floats(-1.0, 1.0))
def test_noiseless_lorentzian_is_recovered_exactly(center, fwhm, amp, offset):
    x = np.linspace(center - 6 * fwhm, center + 6 * fwhm, 401)
    fit = fit_lorentzian(x, lorentzian(x, center, fwhm, amp, offset * amp))
    assert fit.converged
    assert fit["center"] == pytest.approx(center, rel=1e-6, abs=1e-6 * fwhm)
    assert fit["fwhm"] == pytest.approx(fwhm, rel=1e-6)
    assert fit["amplitude"] == pytest.approx(amp, rel=1e-6)
    assert fit["offset"] == pytest.approx(offset * amp, rel=1e-6, abs=1e-6 * amp)


def test_noisy_lorentzian_width_within_two_percent():
    rng = np.random.default_rng(0)
    x = np.arange(-250, 251) * 0.1
    errors = []
    for _ in range(200):
        y = lorentzian(x, 0.3, 5.0, 1.0, 0.05) + 0.01 * rng.normal(size=x.size)
        fit = fit_lorentzian(x, y)
        assert fit.converged
        errors.append(abs(fit["fwhm"] / 5.0 - 1))
    assert max(errors) < 0.02


def test_lorentzian_reports_t2():
    x = np.linspace(-30, 30, 601)
    fit = fit_lorentzian(x, lorentzian(x, 0.0, 4.99, 1.0))
    assert fit.extras["t2_ps"] == pytest.approx(2 * HBAR / 4.99, rel=1e-6)


def test_flat_segment_is_an_error():
    with pytest.raises(FitError):
        fit_lorentzian(np.linspace(0, 1, 50), np.full(50, 3.0))


def test_undersampled_peak_warns():
    x = np.linspace(-50, 50, 41)
    with pytest.warns(RuntimeWarning, match="FWHM"):
        fit_lorentzian(x, lorentzian(x, 0.0, 5.0, 1.0))


def test_iteration_cap_reports_unconverged(monkeypatch):
    monkeypatch.setattr(fitting, "MAX_ITERATIONS", 1)
    x = np.linspace(-30, 30, 301)
    rng = np.random.default_rng(1)
    y = lorentzian(x, 7.0, 3.0, 1.0) + 0.01 * rng.normal(size=x.size)
    assert not fit_lorentzian(x, y).converged


@settings(max_examples=20, deadline=None)
@given(st.floats(-5, 5), st.floats(1.0, 8.0), st.floats(0.005, 0.05), st.integers(0, 2**32 - 1))
def test_fit_result_invariants(center, fwhm, noise, seed):
    x = np.linspace(center - 8 * fwhm, center + 8 * fwhm, 301)
    y = lorentzian(x, center, fwhm, 1.0) + noise * np.random.default_rng(seed).normal(size=x.size)
    fit = fit_lorentzian(x, y)
    assert np.all(fit.sigmas >= 0) and fit.chi2_reduced >= 0
    if fit.converged:
        r = lorentzian(x, *fit.values) - y
        J = fitting.lorentzian_jacobian(x, *fit.values)
        assert fitting._gradient_cosine(J, r) < fitting.GRADIENT_TOL


# --- FWHM vs Ω² ------------------------------------------------------------------------

def test_two_point_eid_line():
    widths = [2 * HBAR / 264, 2 * HBAR / 237]
    line = fit_linear_eid(np.array([45.5, 53.8]) ** 2, widths)
    assert line["slope"] == pytest.approx(6.89e-4, abs=5e-7)
    # reference given to three decimals (3.5595 truncated), so allow one unit in the last place
    assert line["intercept"] == pytest.approx(3.559, abs=1e-3)


def test_exact_line_has_zero_residual():
    x = np.array([100.0, 400.0, 900.0, 2500.0])
    line = fit_linear_eid(x, 2.0 + 1e-3 * x)
    assert line["slope"] == pytest.approx(1e-3, rel=1e-12)
    assert line["intercept"] == pytest.approx(2.0, rel=1e-12)
    assert line.chi2_reduced == pytest.approx(0.0, abs=1e-24)


def test_singular_design_is_an_error():
    with pytest.raises(FitError):
        fit_linear_eid([100.0, 100.0, 100.0], [1.0, 2.0, 3.0])
    with pytest.raises(FitError):
        fit_linear_eid([100.0], [1.0])


def test_noisy_powers_recover_eid_slope():
    gamma_d0, k_eid, _ = calibrate_eid(1008.0, [45.5, 53.8], [264.0, 237.0])
    rng = np.random.default_rng(3)
    rabi = np.linspace(30.0, 70.0, 10)
    widths = []
    for om in rabi:
        # ±8 μeV around the red line keeps the central line's tail out of the window
        grid = np.arange(-om - 8, -om + 8, 0.05)
        y = emission_spectrum(EmitterParams(om, gamma_d0=gamma_d0, k_eid=k_eid), grid).intensity
        widths.append(fit_lorentzian(grid, y + 0.01 * y.max() * rng.normal(size=y.size))["fwhm"])
    line = fit_linear_eid(rabi**2, widths)
    assert line["slope"] == pytest.approx(k_eid * HBAR, rel=0.05)


# --- correlation fits --------------------------------------------------------------------

SETUP = HomSetup(delay=13000.0)
CASES = {
    "central": (G2ModelParams(1.0, 1.0, 0.3, 9510.0), {}, None),
    "sideband": (G2ModelParams(0.05, 2016.0, 0.25, 9510.0), {}, None),
    "hom": (G2ModelParams(0.1, 2016.0, 0.25, 9510.0, 264.0), {"t2": 264.0}, SETUP),
}


@pytest.mark.parametrize("kind", list(CASES))
@pytest.mark.parametrize("irf", [0.0, 566.0])
def test_noiseless_g2_is_recovered_exactly(kind, irf):
    p, fixed, setup = CASES[kind]
    v = 0.8 if kind == "hom" else None
    h = synthetic_histogram(kind, p, TAU, 100.0, 4000.0, irf, setup, v=v)
    fit = fit_g2(h, kind, irf, fixed=fixed, setup=setup)
    truth = dict(g0=p.g0, tau_r=p.tau_r, b=p.b, tau_bunch=p.tau_bunch, v=v)
    assert fit.converged
    for name in fit.free:
        assert fit[name] == pytest.approx(truth[name], rel=1e-6, abs=1e-9)


def test_deconvolution_removes_the_irf_filling():
    p = G2ModelParams(0.02, 2016.0, 0.0, 1e4)
    h = synthetic_histogram("sideband", p, TAU, 100.0, 4000.0, 566.0, rng=5)
    fit = fit_g2(h, "sideband", 566.0)
    assert fit.extras["g0_deconv"] < 0.05
    assert fit.extras["g0_conv"] > fit.extras["g0_deconv"] + 0.05


def test_deconvolved_value_is_invariant_to_synthesis_irf():
    p = G2ModelParams(0.1, 1500.0, 0.2, 9000.0)
    truth = p.g0 * (1 + p.b)  # the τ = 0 model value carries the bunching envelope
    values = []
    for k, irf in enumerate((300.0, 566.0, 800.0)):
        h = synthetic_histogram("sideband", p, TAU, 100.0, 4000.0, irf, rng=40 + k)
        fit = fit_g2(h, "sideband", irf)
        d, s = fit.extras["g0_deconv"], fit.extras["g0_deconv_sigma"]
        assert abs(d - truth) < 3 * s
        values.append((d, s))
    # mutual consistency within combined sigmas
    (a, sa), (b, sb) = values[0], values[-1]
    assert abs(a - b) < 3 * np.hypot(sa, sb)


def test_fit_is_deterministic():
    p = G2ModelParams(0.05, 1200.0, 0.3, 8000.0)
    h = synthetic_histogram("sideband", p, TAU, 100.0, 1000.0, 566.0, rng=9)
    a, b = fit_g2(h, "sideband", 566.0), fit_g2(h, "sideband", 566.0)
    assert a.values.tobytes() == b.values.tobytes()
    assert a.sigmas.tobytes() == b.sigmas.tobytes()


def test_insufficient_span_is_an_error():
    p = G2ModelParams(1.0, 1.0, 0.3, 9510.0)
    tau = np.arange(-200, 201) * 100.0  # ±20 ns < 5 × 9.51 ns
    h = synthetic_histogram("central", p, tau, 100.0, 4000.0)
    with pytest.raises(InsufficientSpanError):
        fit_g2(h, "central")


def test_bad_model_arguments():
    h = synthetic_histogram("central", G2ModelParams(1.0, 1.0, 0.3, 9510.0), TAU, 100.0, 100.0)
    with pytest.raises(ValueError):
        fit_g2(h, "lorentz")
    with pytest.raises(ValueError):
        fit_g2(h, "hom")
    with pytest.raises(ValueError):
        fit_g2(h, "central", fixed={"omega": 1.0})


@pytest.mark.parametrize("kind", ["central", "sideband", "hom"])
def test_round_trip_coverage_quick(kind):
    # reduced-size version of the acceptance property; the full 200 trials run there
    hits, converged = synth.coverage(kind, 20, seed=100)
    assert converged == 1.0
    assert hits >= 0.85


# --- visibility --------------------------------------------------------------------------

def _hom_result(deconv, conv, sd=0.0, sc=0.0, converged=True):
    return FitResult(("v",), np.zeros(1), np.zeros(1), 1.0, converged, 1,
                     extras={"g0_deconv": deconv, "g0_conv": conv,
                             "g0_deconv_sigma": sd, "g0_conv_sigma": sc})


def test_visibility_reference_example():
    v = extract_visibility(_hom_result(0.61, 0.9), _hom_result(0.04, 0.5))
    assert v.v_deconv == pytest.approx(0.934, abs=5e-4)


def test_equal_traces_give_zero_visibility_with_sigma():
    v = extract_visibility(_hom_result(0.5, 0.6, 0.02, 0.02), _hom_result(0.5, 0.6, 0.02, 0.02))
    assert v.v_deconv == 0.0 and v.v_conv == 0.0
    assert v.sigma_deconv == pytest.approx(np.sqrt(2) * 0.02 / 0.5)


def test_unconverged_fit_blocks_visibility():
    with pytest.raises(FitError):
        extract_visibility(_hom_result(0.5, 0.6, converged=False), _hom_result(0.1, 0.2))


def test_chained_fit_recovers_generator_truth():
    rng = np.random.default_rng(77)
    truth = G2ModelParams(0.03, 2016.0, 0.267, 9510.0, 264.0)
    irf = 566.0
    central = synthetic_histogram("central", G2ModelParams(1.0, 1.0, truth.b, truth.tau_bunch),
                                  TAU, 100.0, 4000.0, irf, rng=rng)
    side = synthetic_histogram("sideband", truth, TAU, 100.0, 4000.0, irf, rng=rng)
    perp = synthetic_histogram("hom", truth, TAU, 100.0, 4000.0, irf, SETUP.with_mode("orthogonal"),
                               rng=rng)
    par = synthetic_histogram("hom", truth, TAU, 100.0, 4000.0, irf, SETUP, rng=rng)
    chain = chained_fit(central, side, perp, par, SETUP, 264.0, irf)
    assert chain.central["tau_bunch"] == pytest.approx(9510.0, rel=0.1)
    assert chain.sideband["tau_r"] == pytest.approx(2016.0, rel=0.1)
    assert chain.hom_par["v"] == pytest.approx(SETUP.interference, abs=0.05)
    assert chain.hom_perp["v"] == 0.0
    theta = fitting.theta_vector(truth, SETUP.interference)
    g_par = model_values("hom", np.zeros(1), theta, SETUP)[0][0]
    g_perp = model_values("hom", np.zeros(1), fitting.theta_vector(truth, 0.0), SETUP)[0][0]
    v_true = (g_perp - g_par) / g_perp
    assert chain.visibility.v_deconv == pytest.approx(v_true, abs=4 * chain.visibility.sigma_deconv + 0.01)
    assert chain.visibility.v_conv < chain.visibility.v_deconv
