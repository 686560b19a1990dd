"""Least-squares fit recipes for line shapes and photon correlations.

All fits are deterministic: fixed initialization rules, no random restarts.
Uncertainties come from the inverse normal matrix scaled by the reduced χ².
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares

from .correlation import (
    CorrelationHistogram,
    G2ModelParams,
    HomSetup,
    gaussian_kernel,
)
from .emitter import eid_from_line, fwhm_from_t2

MAX_ITERATIONS = 200
GRADIENT_TOL = 1e-3  # cosine between residual and any Jacobian column


class FitError(RuntimeError):
    pass


class InsufficientSpanError(FitError):
    pass


@dataclass
class FitResult:
    names: tuple
    values: np.ndarray
    sigmas: np.ndarray
    chi2_reduced: float
    converged: bool
    iterations: int
    free: tuple = ()
    covariance: np.ndarray | None = None
    model: str = ""
    extras: dict = field(default_factory=dict)

    def __getitem__(self, name: str) -> float:
        return float(self.values[self.names.index(name)])

    def sigma(self, name: str) -> float:
        return float(self.sigmas[self.names.index(name)])

    def as_dict(self) -> dict:
        return {n: float(v) for n, v in zip(self.names, self.values)}

    def summary(self) -> str:
        rows = [f"{n:>10s} = {v:.6g} ± {s:.2g}" for n, v, s in zip(self.names, self.values, self.sigmas)]
        rows.append(f"chi2_red = {self.chi2_reduced:.4g}, converged = {self.converged}")
        return "\n".join(rows)


# --- generic engine ------------------------------------------------------------

def _gradient_cosine(jac, resid) -> float:
    rn = np.linalg.norm(resid)
    if rn == 0:
        return 0.0
    cn = np.linalg.norm(jac, axis=0)
    cn[cn == 0] = 1.0
    return float(np.max(np.abs(jac.T @ resid) / (cn * rn)))


def least_squares_fit(residual, jacobian, x0, names, lower=None, upper=None, model=""):
    """Damped least squares on ``residual(x)`` with analytic ``jacobian(x)``.

    Runs an unbounded Levenberg-Marquardt first; if that ends outside the
    box ``[lower, upper]`` it is retried as a bounded trust-region problem.
    """
    x0 = np.asarray(x0, dtype=float)
    n = x0.size
    lower = np.full(n, -np.inf) if lower is None else np.asarray(lower, float)
    upper = np.full(n, np.inf) if upper is None else np.asarray(upper, float)
    with np.errstate(invalid="ignore"):
        margin = np.where(np.isfinite(upper - lower), 1e-9 * (upper - lower), 0.0)
    x0 = np.clip(x0, lower + margin, upper - margin)

    m = residual(x0).size
    if m < n:
        raise FitError(f"{m} residuals cannot determine {n} parameters")
    tol = dict(ftol=1e-12, xtol=1e-12, gtol=1e-12)
    res = least_squares(residual, x0, jac=jacobian, method="lm", x_scale="jac",
                        max_nfev=MAX_ITERATIONS * (n + 1), **tol)
    if np.any(res.x < lower) or np.any(res.x > upper) or not np.all(np.isfinite(res.x)):
        res = least_squares(residual, x0, jac=jacobian, method="trf", bounds=(lower, upper),
                            x_scale="jac", max_nfev=MAX_ITERATIONS, **tol)
    r = res.fun
    J = jacobian(res.x)
    dof = m - n
    chi2 = float(r @ r / dof) if dof > 0 else 0.0
    try:
        cov = np.linalg.inv(J.T @ J) * (chi2 if dof > 0 else 0.0)
        sig = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    except np.linalg.LinAlgError:
        cov, sig = None, np.full(n, np.inf)
    at_bound = np.any(np.isclose(res.x, lower) | np.isclose(res.x, upper))
    # an (almost) exact fit has no meaningful gradient direction left
    exact = float(r @ r) <= 1e-20 * m
    stationary = exact or _gradient_cosine(J, r) < GRADIENT_TOL or at_bound
    converged = bool(res.status > 0 and stationary and np.all(np.isfinite(sig)))
    return FitResult(tuple(names), res.x, sig, chi2, converged, int(res.nfev),
                     tuple(names), cov, model)


# --- Lorentzian ------------------------------------------------------------------

LORENTZ_NAMES = ("center", "fwhm", "amplitude", "offset")


def lorentzian(x, center, fwhm, amplitude, offset=0.0):
    """Peak-height-normalized Lorentzian on a constant offset."""
    h2 = (fwhm / 2) ** 2
    return offset + amplitude * h2 / ((x - center) ** 2 + h2)


def lorentzian_jacobian(x, center, fwhm, amplitude, offset=0.0):
    h = fwhm / 2
    u = x - center
    den = u**2 + h**2
    return np.column_stack([
        amplitude * h**2 * 2 * u / den**2,
        amplitude * h * u**2 / den**2,
        h**2 / den,
        np.ones_like(x),
    ])


def lorentzian_guess(x, y):
    """Moment-style start: baseline, peak height, half-maximum width, centroid."""
    base = min(y[0], y[-1], np.median(np.sort(y)[: max(2, y.size // 10)]))
    amp = y.max() - base
    if not amp > 1e-12 * max(abs(y).max(), 1e-300):
        raise FitError("flat segment: no peak to fit")
    half = base + amp / 2
    above = np.nonzero(y >= half)[0]
    i0, i1 = above[0], above[-1]

    def cross(i, j):
        # linear interpolation of the half-maximum crossing between samples i and j
        if y[j] == y[i]:
            return x[i]
        return x[i] + (half - y[i]) * (x[j] - x[i]) / (y[j] - y[i])

    left = cross(i0 - 1, i0) if i0 > 0 else x[0]
    right = cross(i1, i1 + 1) if i1 < x.size - 1 else x[-1]
    w = y[i0:i1 + 1] - half
    center = float(np.sum(x[i0:i1 + 1] * w) / np.sum(w)) if np.sum(w) > 0 else x[np.argmax(y)]
    fwhm = max(right - left, 2 * np.min(np.diff(x)))
    return np.array([center, fwhm, amp, base])


def fit_lorentzian(x, y, sigma=None) -> FitResult:
    """Fit ``offset + amplitude·(Γ/2)²/((x−x0)² + (Γ/2)²)`` to one dominant peak."""
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    if x.size < 5:
        raise FitError("segment too short")
    w = np.ones_like(y) if sigma is None else 1.0 / np.asarray(sigma, float)
    p0 = lorentzian_guess(x, y)
    if p0[1] < 8 * np.median(np.diff(x)):
        warnings.warn("fewer than 8 samples across the FWHM", RuntimeWarning, stacklevel=2)
    span = x[-1] - x[0]
    lower = [x[0], 1e-9 * span, 0.0, -np.inf]
    upper = [x[-1], 10 * span, np.inf, np.inf]
    res = least_squares_fit(lambda p: (lorentzian(x, *p) - y) * w,
                            lambda p: lorentzian_jacobian(x, *p) * w[:, None],
                            p0, LORENTZ_NAMES, lower, upper, model="lorentzian")
    res.extras["t2_ps"] = 2 * 658.2119569 / res["fwhm"] if res["fwhm"] > 0 else math.inf
    return res


# --- FWHM vs Ω² ---------------------------------------------------------------------

def fit_linear_eid(omega_sq, fwhm) -> FitResult:
    """Ordinary least-squares line FWHM = intercept + slope·Ω²."""
    x = np.asarray(omega_sq, float)
    y = np.asarray(fwhm, float)
    if x.size != y.size or x.size < 2:
        raise FitError("need at least two (Ω², FWHM) points")
    xm, ym = x.mean(), y.mean()
    sxx = np.sum((x - xm) ** 2)
    if sxx <= 1e-12 * max(np.sum(x**2), 1e-300):
        raise FitError("singular design: all Ω² values are equal")
    slope = np.sum((x - xm) * (y - ym)) / sxx
    intercept = ym - slope * xm
    resid = y - (intercept + slope * x)
    dof = x.size - 2
    s2 = float(resid @ resid / dof) if dof > 0 else 0.0
    sig = np.sqrt([s2 / sxx, s2 * (1 / x.size + xm**2 / sxx)])
    cov = s2 * np.array([[1 / sxx, -xm / sxx], [-xm / sxx, 1 / x.size + xm**2 / sxx]])
    return FitResult(("slope", "intercept"), np.array([slope, intercept]), sig, s2, True, 1,
                     ("slope", "intercept"), cov, "linear")


def calibrate_eid(t1: float, rabi, t2) -> tuple[float, float, FitResult]:
    """Dephasing parameters (gamma_d0, k_eid) reproducing sideband T2 values at given Ω."""
    rabi = np.asarray(rabi, float)
    widths = [fwhm_from_t2(t) for t in np.atleast_1d(t2)]
    line = fit_linear_eid(rabi**2, widths)
    gamma_d0, k_eid = eid_from_line(t1, line["slope"], line["intercept"])
    return gamma_d0, k_eid, line


# --- correlation models ---------------------------------------------------------------

G2_NAMES = ("g0", "tau_r", "b", "tau_bunch", "t2", "v")


def _sideband_parts(tau, g0, tau_r, b, tau_bunch):
    a = np.abs(tau)
    d = np.zeros((a.size, 4))
    # unbounded trial steps may probe negative time constants; the bounded retry handles them
    with np.errstate(over="ignore", invalid="ignore"):
        er = np.exp(-a / tau_r)
        eb = np.exp(-a / tau_bunch)
        anti = 1 - (1 - g0) * er
        env = 1 + b * eb
        d[:, 0] = er * env
        d[:, 1] = -(1 - g0) * er * a / tau_r**2 * env
        d[:, 2] = anti * eb
        d[:, 3] = anti * b * eb * a / tau_bunch**2
        return anti * env, d


def model_values(kind: str, tau, theta, setup: HomSetup | None = None):
    """Model value and Jacobian over the full parameter vector G2_NAMES."""
    tau = np.asarray(tau, float)
    g0, tau_r, b, tau_bunch, t2, v = theta
    jac = np.zeros((tau.size, 6))
    if kind == "central":
        eb = np.exp(-np.abs(tau) / tau_bunch)
        jac[:, 2] = eb
        jac[:, 3] = b * eb * np.abs(tau) / tau_bunch**2
        return 1 + b * eb, jac
    if kind == "sideband":
        g, d = _sideband_parts(tau, g0, tau_r, b, tau_bunch)
        jac[:, :4] = d
        return g, jac
    if kind == "hom":
        if setup is None:
            raise ValueError("hom model needs a HomSetup")
        w_same, w_cross = setup.weights
        g_s, d_s = _sideband_parts(tau, g0, tau_r, b, tau_bunch)
        g_m, d_m = _sideband_parts(tau - setup.delay, g0, tau_r, b, tau_bunch)
        g_p, d_p = _sideband_parts(tau + setup.delay, g0, tau_r, b, tau_bunch)
        # unbounded trial steps may probe t2 <= 0; the bounded retry handles them
        with np.errstate(over="ignore", invalid="ignore"):
            e = np.exp(-2 * np.abs(tau) / t2)
            damp = 1 - v * e
            g = w_same * g_s + w_cross * damp * (g_m + g_p)
            jac[:, :4] = w_same * d_s + (w_cross * damp)[:, None] * (d_m + d_p)
            jac[:, 4] = -w_cross * v * e * 2 * np.abs(tau) / t2**2 * (g_m + g_p)
            jac[:, 5] = -w_cross * e * (g_m + g_p)
        return g, jac
    raise ValueError(f"unknown model {kind!r}")


def theta_vector(p: G2ModelParams, v: float) -> np.ndarray:
    """Full parameter vector in G2_NAMES order."""
    return np.array([p.g0, p.tau_r, p.b, p.tau_bunch, p.t2, v], float)


class G2Forward:
    """Histogram-level forward model: IRF convolution followed by bin averaging."""

    def __init__(self, kind: str, tau, bin_width: float, irf_fwhm: float = 0.0,
                 setup: HomSetup | None = None, subsamples: int | None = None):
        self.kind, self.setup = kind, setup
        self.tau = np.asarray(tau, float)
        self.bin_width = float(bin_width)
        self.irf_fwhm = float(irf_fwhm)
        if subsamples is None:
            subsamples = max(10, math.ceil(10 * bin_width / irf_fwhm)) if irf_fwhm > 0 else 10
        self.m = int(subsamples)
        self.h = self.bin_width / self.m
        self.kernel = gaussian_kernel(self.h, irf_fwhm) if irf_fwhm > 0 else np.ones(1)
        self.pad = self.kernel.size // 2
        offs = (np.arange(self.m) + 0.5) * self.h - self.bin_width / 2
        inner = (self.tau[:, None] + offs[None, :]).ravel()
        ext = np.arange(1, self.pad + 1) * self.h
        self.fine = np.concatenate([inner[0] - ext[::-1], inner, inner[-1] + ext])

    def _smooth(self, y):
        if self.pad:
            y = np.apply_along_axis(lambda c: np.convolve(c, self.kernel, mode="valid"), 0, y)
        return y.reshape(self.tau.size, self.m, *y.shape[1:]).mean(axis=1)

    def __call__(self, theta):
        g, _ = model_values(self.kind, self.fine, theta, self.setup)
        return self._smooth(g)

    def jacobian(self, theta):
        _, j = model_values(self.kind, self.fine, theta, self.setup)
        return self._smooth(j)

    def value_at_zero(self, theta, convolved: bool):
        """Point value (and gradient) of the model at τ = 0."""
        if not convolved or self.irf_fwhm == 0:
            g, j = model_values(self.kind, np.zeros(1), theta, self.setup)
            return float(g[0]), j[0]
        t = (np.arange(self.kernel.size) - self.pad) * self.h
        g, j = model_values(self.kind, t, theta, self.setup)
        return float(self.kernel @ g), self.kernel @ j


def predict_histogram(kind: str, p: G2ModelParams, tau, bin_width: float, irf_fwhm: float = 0.0,
                      setup: HomSetup | None = None, v: float | None = None):
    """Expected normalized histogram for model parameters ``p``."""
    if v is None:
        v = setup.interference if setup is not None else 0.0
    return G2Forward(kind, tau, bin_width, irf_fwhm, setup)(theta_vector(p, v))


def synthetic_histogram(kind: str, p: G2ModelParams, tau, bin_width: float, mean_counts: float,
                        irf_fwhm: float = 0.0, setup: HomSetup | None = None, rng=None,
                        v: float | None = None) -> CorrelationHistogram:
    """Poisson-noise histogram with ``mean_counts`` accidentals per bin."""
    g = predict_histogram(kind, p, tau, bin_width, irf_fwhm, setup, v)
    norm = np.full(g.size, float(mean_counts))
    counts = norm * g if rng is None else np.random.default_rng(rng).poisson(norm * g)
    return CorrelationHistogram(np.asarray(tau, float), counts, norm, float(bin_width))


_BOUNDS = {
    "g0": (0.0, 1.0),
    "tau_r": (1.0, 1e6),
    "b": (0.0, 100.0),
    "tau_bunch": (10.0, 1e8),
    "t2": (1.0, 1e5),
    "v": (0.0, 1.0),
}


def _fold(hist: CorrelationHistogram):
    """Average the ±τ halves: (|τ|, g², σ) with |τ| ascending."""
    a = np.abs(hist.tau)
    key, inv = np.unique(np.round(a, 9), return_inverse=True)
    n = np.bincount(inv)
    g = np.bincount(inv, hist.g2) / n
    err = np.sqrt(np.bincount(inv, hist.g2_err**2)) / n
    return key, g, np.maximum(err, 1e-12)


def _decay_run(a, y, err, start, k=3.0):
    """Log-linear fit of y = A·exp(−a/τ) over the run of > kσ points beginning at ``start``.

    Stopping at the first insignificant point keeps the regression on the
    decay itself rather than on the noise floor behind it.  Returns (A, τ)
    or None.
    """
    i = j = int(np.searchsorted(a, start))
    while j < a.size and y[j] > k * err[j]:
        j += 1
    if j - i < 3:
        return None
    # var(log y) ≈ (σ/y)²
    slope, icpt = np.polyfit(a[i:j], np.log(y[i:j]), 1, w=y[i:j] / err[i:j])
    if slope >= 0:
        return None
    return float(np.exp(icpt)), float(-1 / slope)


def g2_initial_guess(kind: str, hist: CorrelationHistogram, irf_fwhm: float, fixed: dict):
    """Start values: log-linear regression on the exponential tails.

    For the sideband model the antibunching recovery is estimated first,
    the bunching tail beyond it, and the recovery once more with the
    bunching envelope divided out.
    """
    a, g, err = _fold(hist)
    span = hist.tau_max
    guess = {"g0": 0.1, "tau_r": span / 20, "b": 0.05, "tau_bunch": span / 10,
             "t2": fixed.get("t2", 300.0), "v": 0.5}
    near = max(2 * irf_fwhm, hist.bin_width)

    def recovery(env):
        tail = _decay_run(a, 1 - g / env, err / env, near)
        if tail is not None:
            guess["tau_r"] = min(tail[1], span / 5)
            guess["g0"] = float(np.clip(1 - tail[0], 0.0, 0.9))

    if kind == "sideband" and "tau_r" not in fixed:
        recovery(1.0)
    if "b" not in fixed or "tau_bunch" not in fixed:
        start = max(3 * irf_fwhm, hist.bin_width)
        if kind == "sideband":
            start = max(start, 5 * fixed.get("tau_r", guess["tau_r"]))
            anti = 1 - (1 - guess["g0"]) * np.exp(-a / fixed.get("tau_r", guess["tau_r"]))
            # only |τ| ≥ start is used; anti may vanish at τ = 0 when g0 = 0
            anti = np.where(a >= start, anti, 1.0)
            y = g / anti - 1
        else:
            anti, y = 1.0, g - 1
        tail = _decay_run(a, y, err / anti, start)
        # bunching is only separable from the recovery when it decays more slowly;
        # a faster "tail" is leftover antibunching edge
        tau_r = fixed.get("tau_r", guess["tau_r"]) if kind == "sideband" else 0.0
        if tail is not None and tail[1] > tau_r:
            guess["b"], guess["tau_bunch"] = min(tail[0], 50.0), min(tail[1], span / 5)
    if kind == "sideband" and "tau_r" not in fixed:
        b = fixed.get("b", guess["b"])
        tau_b = fixed.get("tau_bunch", guess["tau_bunch"])
        recovery(1 + b * np.exp(-a / tau_b))
    if kind == "hom":
        guess["g0"] = 0.05
    guess.update(fixed)
    return guess


def fit_g2(hist: CorrelationHistogram, model: str, irf_fwhm: float = 0.0,
           fixed: dict | None = None, setup: HomSetup | None = None,
           initial: dict | None = None, span_factor: float = 5.0) -> FitResult:
    """Poisson-weighted fit of an IRF-convolved correlation model.

    ``model`` is ``"central"`` (b, tau_bunch), ``"sideband"`` (g0, tau_r, b,
    tau_bunch) or ``"hom"`` (all of those plus t2 and the interference
    strength v).  Names in ``fixed`` are frozen at the given values, which is
    how the central → sideband → HOM chain hands parameters along.  The
    result carries the τ = 0 model value with and without the IRF in
    ``extras`` (``g0_deconv``, ``g0_conv`` and their sigmas).
    """
    fixed = dict(fixed or {})
    free_sets = {"central": ("b", "tau_bunch"),
                 "sideband": ("g0", "tau_r", "b", "tau_bunch"),
                 "hom": ("g0", "tau_r", "b", "tau_bunch", "t2", "v")}
    if model not in free_sets:
        raise ValueError(f"unknown model {model!r}")
    if model == "hom" and setup is None:
        raise ValueError("hom fits need a HomSetup")
    if model == "hom" and setup.mode == "orthogonal":
        fixed.setdefault("v", 0.0)
    defaults = {"g0": 1.0 if model == "central" else 0.0, "tau_r": 1.0, "t2": 300.0, "v": 0.0}
    for k, val in defaults.items():
        if k not in free_sets[model]:
            fixed.setdefault(k, val)
    unknown = set(fixed) - set(G2_NAMES)
    if unknown:
        raise ValueError(f"unknown fixed parameters {sorted(unknown)}")

    guess = g2_initial_guess(model, hist, irf_fwhm, fixed)
    if initial:
        guess.update({k: v for k, v in initial.items() if k not in fixed})
    free = [n for n in G2_NAMES if n not in fixed]
    idx = [G2_NAMES.index(n) for n in free]
    base = np.array([guess[n] for n in G2_NAMES], float)
    lower = np.array([_BOUNDS[n][0] for n in free])
    upper = np.array([_BOUNDS[n][1] for n in free])

    fwd = G2Forward(model, hist.tau, hist.bin_width, irf_fwhm, setup)
    weight = 1.0 / (np.sqrt(np.maximum(hist.counts, 1.0)) / hist.norm_basis)
    data = hist.g2

    def full(x):
        theta = base.copy()
        theta[idx] = x
        return theta

    res = least_squares_fit(lambda x: (fwd(full(x)) - data) * weight,
                            lambda x: fwd.jacobian(full(x))[:, idx] * weight[:, None],
                            base[idx], free, lower, upper, model=model)
    theta = full(res.values)
    sig = np.zeros(6)
    sig[idx] = res.sigmas
    out = FitResult(G2_NAMES, theta, sig, res.chi2_reduced, res.converged, res.iterations,
                    tuple(free), res.covariance, model,
                    {"irf_fwhm": irf_fwhm, "fixed": dict(fixed)})

    cov = res.covariance if res.covariance is not None else np.zeros((len(idx), len(idx)))
    for key, conv in (("g0_deconv", False), ("g0_conv", True)):
        val, grad = fwd.value_at_zero(theta, conv)
        gfree = grad[idx]
        out.extras[key] = val
        out.extras[key + "_sigma"] = float(np.sqrt(max(gfree @ cov @ gfree, 0.0)))

    scales = [theta[1]] if model != "central" else []
    if theta[2] > 0:  # the bunching time only matters with a bunching amplitude
        scales.append(theta[3])
    longest = max(scales, default=0.0)
    if hist.tau_max < span_factor * longest * (1 - 1e-9):
        raise InsufficientSpanError(
            f"histogram reaches {hist.tau_max:.4g} ps, below {span_factor}× the longest "
            f"model timescale {longest:.4g} ps")
    return out


@dataclass(frozen=True)
class VisibilityResult:
    v_deconv: float
    v_conv: float
    sigma_deconv: float
    sigma_conv: float


def _vis(gp, sp, gq, sq):
    v = (gp - gq) / gp
    s = math.hypot(gq / gp**2 * sp, sq / gp)
    return v, s


def extract_visibility(fit_perp: FitResult, fit_par: FitResult) -> VisibilityResult:
    """Visibility at τ = 0 from the deconvolved and IRF-convolved model values."""
    if not (fit_perp.converged and fit_par.converged):
        raise FitError("both HOM fits must have converged")
    vd, sd = _vis(fit_perp.extras["g0_deconv"], fit_perp.extras.get("g0_deconv_sigma", 0.0),
                  fit_par.extras["g0_deconv"], fit_par.extras.get("g0_deconv_sigma", 0.0))
    vc, sc = _vis(fit_perp.extras["g0_conv"], fit_perp.extras.get("g0_conv_sigma", 0.0),
                  fit_par.extras["g0_conv"], fit_par.extras.get("g0_conv_sigma", 0.0))
    return VisibilityResult(vd, vc, sd, sc)


@dataclass
class ChainResult:
    central: FitResult
    sideband: FitResult
    hom_perp: FitResult
    hom_par: FitResult
    visibility: VisibilityResult


def chained_fit(central: CorrelationHistogram, sideband: CorrelationHistogram,
                hom_perp: CorrelationHistogram, hom_par: CorrelationHistogram,
                setup: HomSetup, t2: float, irf_fwhm: float) -> ChainResult:
    """Central-line bunching, then sideband antibunching, then both HOM traces.

    T2 comes from the spectra and is never fitted; each stage freezes what
    the previous stages determined.
    """
    fc = fit_g2(central, "central", irf_fwhm)
    bunch = {"b": fc["b"], "tau_bunch": fc["tau_bunch"]}
    fs = fit_g2(sideband, "sideband", irf_fwhm, fixed=bunch)
    shared = dict(bunch, tau_r=fs["tau_r"], t2=t2)
    fp = fit_g2(hom_perp, "hom", irf_fwhm, fixed=shared, setup=setup.with_mode("orthogonal"))
    fq = fit_g2(hom_par, "hom", irf_fwhm, fixed=shared, setup=setup.with_mode("parallel"))
    return ChainResult(fc, fs, fp, fq, extract_visibility(fp, fq))
