"""Photon correlations: g² histograms, Hong-Ou-Mandel models and simulation.

Time arguments are in ps.  Histogram bins are centred on multiples of the
bin width so that τ = 0 is the centre of the middle bin.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import fftconvolve

from .photon_stream import FWHM_TO_SIGMA, PhotonStream


class EmptyStreamError(ValueError):
    pass


class GridMismatchError(ValueError):
    pass


class ResolutionError(ValueError):
    """Sampling grid too coarse for the requested convolution."""


@dataclass(frozen=True)
class CorrelationHistogram:
    """Coincidence histogram with its accidental-coincidence baseline.

    ``norm_basis[i]`` is the number of coincidences bin ``i`` would collect
    from uncorrelated streams of the same mean rates, so ``g2 = counts /
    norm_basis``.
    """

    tau: np.ndarray
    counts: np.ndarray
    norm_basis: np.ndarray
    bin_width: float
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if np.any(self.norm_basis <= 0):
            raise ValueError("norm_basis must be positive")
        if np.any(self.counts < 0):
            raise ValueError("counts must be non-negative")

    @property
    def g2(self) -> np.ndarray:
        return self.counts / self.norm_basis

    normalized = g2

    @property
    def g2_err(self) -> np.ndarray:
        return np.sqrt(self.counts) / self.norm_basis

    @property
    def tau_min(self) -> float:
        return float(self.tau[0] - self.bin_width / 2)

    @property
    def tau_max(self) -> float:
        return float(self.tau[-1] + self.bin_width / 2)

    def value_at(self, tau: float = 0.0) -> float:
        return float(self.g2[np.argmin(np.abs(self.tau - tau))])


@dataclass(frozen=True)
class G2ModelParams:
    """Parameters shared by the sideband, central and HOM correlation models.

    ``g0`` is the residual g²(0) of the antibunching factor, ``b`` and
    ``tau_bunch`` describe the blinking envelope and ``t2`` enters the HOM
    interference term only.
    """

    g0: float = 0.0
    tau_r: float = 1000.0
    b: float = 0.0
    tau_bunch: float = 10000.0
    t2: float = 300.0

    def __post_init__(self):
        if not 0.0 <= self.g0 <= 1.0:
            raise ValueError(f"g0 must lie in [0, 1], got {self.g0}")
        if not (self.tau_r > 0 and self.tau_bunch > 0 and self.t2 > 0):
            raise ValueError("tau_r, tau_bunch and t2 must be > 0")
        if self.b < 0:
            raise ValueError("b must be >= 0")


@dataclass(frozen=True)
class HomSetup:
    """Unbalanced Mach-Zehnder feeding the HOM beamsplitter.

    ``r1``/``t1`` are the intensity splitting of the input coupler (``t1``
    routes to the long arm), ``r2``/``t2`` that of the HOM beamsplitter
    (``t2`` routes to detector 1).  ``overlap`` is the wavepacket overlap in
    co-polarized operation; orthogonal mode removes interference entirely.
    """

    delay: float = 13000.0
    r1: float = 0.5
    t1: float = 0.5
    r2: float = 0.5
    t2: float = 0.5
    overlap: float = 0.98
    mode: str = "parallel"

    def __post_init__(self):
        if not self.delay > 0:
            raise ValueError("delay must be > 0")
        for r, t in ((self.r1, self.t1), (self.r2, self.t2)):
            if min(r, t) < 0 or abs(r + t - 1) > 0.02:
                raise ValueError(f"splitter ({r}, {t}) is not lossless within 0.02")
        if not 0.0 <= self.overlap <= 1.0:
            raise ValueError("overlap must lie in [0, 1]")
        if self.mode not in ("parallel", "orthogonal"):
            raise ValueError("mode must be 'parallel' or 'orthogonal'")

    @property
    def interference(self) -> float:
        """Fraction of cross-arm coincidences removed at zero delay."""
        if self.mode == "orthogonal":
            return 0.0
        return self.overlap * 2 * self.r2 * self.t2 / (self.r2**2 + self.t2**2)

    @property
    def weights(self) -> tuple[float, float]:
        """(same-arm, per-side cross-arm) weights of the coincidence terms."""
        norm = (self.r1 + self.t1) ** 2
        return (self.r1**2 + self.t1**2) / norm, self.r1 * self.t1 / norm

    def with_mode(self, mode: str) -> "HomSetup":
        return HomSetup(self.delay, self.r1, self.t1, self.r2, self.t2, self.overlap, mode)

    def to_dict(self) -> dict:
        return {"delay_ps": self.delay, "r1": self.r1, "t1": self.t1, "r2": self.r2,
                "t2": self.t2, "overlap": self.overlap, "mode": self.mode}

    @classmethod
    def from_dict(cls, d: dict) -> "HomSetup":
        return cls(float(d.get("delay_ps", 13000.0)), float(d.get("r1", 0.5)),
                   float(d.get("t1", 0.5)), float(d.get("r2", 0.5)), float(d.get("t2", 0.5)),
                   float(d.get("overlap", 0.98)), d.get("mode", "parallel"))


# --- pair engine ---------------------------------------------------------------

def _pair_chunks(ta: np.ndarray, tb: np.ndarray, window: float):
    """Yield ``(i, j, tb[j] - ta[i])`` for all pairs with |difference| < window.

    ``tb`` must be sorted.  Iterates over the k-th partner of every photon in
    ``ta``, so the cost is O(N·k) with k the largest partner count.
    """
    lo = np.searchsorted(tb, ta - window, side="left")
    hi = np.searchsorted(tb, ta + window, side="left")
    active = np.nonzero(hi > lo)[0]
    k = 0
    while active.size:
        j = lo[active] + k
        yield active, j, tb[j] - ta[active]
        k += 1
        active = active[hi[active] > lo[active] + k]


def _bins(bin_width: float, window: float):
    if not bin_width > 0:
        raise ValueError("bin_width must be > 0")
    n = int(round(window / bin_width))
    if n < 1:
        raise ValueError("window must be at least one bin width")
    return n, np.arange(-n, n + 1) * bin_width


def _accumulate(counts, d, bin_width, n):
    idx = np.floor(d / bin_width + 0.5).astype(np.int64) + n
    ok = (idx >= 0) & (idx <= 2 * n)
    counts += np.bincount(idx[ok], minlength=2 * n + 1)


def _normalize(tau, counts, n_a, n_b, duration, bin_width, meta):
    if duration <= 0:
        raise ValueError("duration must be > 0")
    effective = np.clip(duration - np.abs(tau), bin_width, None)
    norm = (n_a / duration) * (n_b / duration) * bin_width * effective
    return CorrelationHistogram(tau, counts, norm, float(bin_width), meta)


def split_hbt(stream: PhotonStream, seed=0) -> tuple[PhotonStream, PhotonStream]:
    """Route each photon to one of two detectors with a fair coin."""
    coin = np.random.default_rng(seed).random(len(stream)) < 0.5
    return stream.take(coin), stream.take(~coin)


def histogram_g2(stream_a: PhotonStream, stream_b: PhotonStream | None, bin_width: float,
                 window: float, seed=0, use_detected: bool = True,
                 time_quantum: float | None = None) -> CorrelationHistogram:
    """Normalized start-stop-free correlation of two streams.

    Counts every pair with ``t_b - t_a`` inside ±window.  Passing ``None``
    for ``stream_b`` correlates ``stream_a`` with itself through a simulated
    50:50 beamsplitter (seeded by ``seed``).
    """
    if stream_b is None:
        stream_a, stream_b = split_hbt(stream_a, seed)
    if len(stream_a) == 0 or len(stream_b) == 0:
        raise EmptyStreamError("cannot correlate an empty stream")
    if time_quantum is not None and bin_width < 2 * time_quantum:
        warnings.warn(f"bin width {bin_width} ps is below twice the time quantum "
                      f"{time_quantum} ps", RuntimeWarning, stacklevel=2)
    n, tau = _bins(bin_width, window)
    key = "detected_time" if use_detected else "time"
    ta = np.sort(getattr(stream_a, key))
    tb = np.sort(getattr(stream_b, key))
    counts = np.zeros(2 * n + 1, np.int64)
    for _, _, d in _pair_chunks(ta, tb, (n + 0.5) * bin_width):
        _accumulate(counts, d, bin_width, n)
    duration = max(stream_a.duration, stream_b.duration)
    return _normalize(tau, counts, ta.size, tb.size, duration, bin_width,
                      {"n_a": int(ta.size), "n_b": int(tb.size), "duration": duration})


# --- analytic models -------------------------------------------------------------

def g2_model_central(tau, p: G2ModelParams):
    """Poissonian line with blinking: 1 + b·exp(-|τ|/τ_bunch)."""
    return 1.0 + p.b * np.exp(-np.abs(tau) / p.tau_bunch)


def g2_model_sideband(tau, p: G2ModelParams):
    """Antibunching recovery times the blinking envelope."""
    a = np.abs(tau)
    return (1.0 - (1.0 - p.g0) * np.exp(-a / p.tau_r)) * (1.0 + p.b * np.exp(-a / p.tau_bunch))


def g2_model_cascade(tau, p: G2ModelParams):
    """Sideband auto-correlation of the blinking dressed-state cascade, exactly.

    The dressed label only evolves while the emitter is bright, so the
    antibunching recovers in accumulated bright time rather than real time.
    With the telegraph generator ``Q`` (bright/dark switching) and the label
    relaxation rate ``1/tau_r``, the recovered fraction is the bright-bright
    element of ``exp((Q - diag(1/tau_r, 0))·|τ|)``.  Equals
    :func:`g2_model_sideband` when ``b = 0``.
    """
    a = np.abs(np.asarray(tau, dtype=float))
    env = 1.0 + p.b * np.exp(-a / p.tau_bunch)
    lam = 1.0 / p.tau_r
    r_off = p.b / ((1 + p.b) * p.tau_bunch)
    r_on = 1.0 / ((1 + p.b) * p.tau_bunch)
    # 2x2 matrix A = [[-r_off - lam, r_off], [r_on, -r_on]]; closed-form exp(A a)[0, 0]
    # written as e^{μ+ a}[(1 + e^{-2δa})/2 + (a11 + r_on)/2 · (1 - e^{-2δa})/(2δ)],
    # which stays finite when the eigenvalues μ± = tr/2 ± δ coincide
    a11 = -r_off - lam
    half = 0.5 * (a11 + r_on)
    delta = math.sqrt(half * half + r_off * r_on)
    mu_p = 0.5 * (a11 - r_on) + delta
    ratio = np.exp(-2 * delta * a)
    sinh_term = -np.expm1(-2 * delta * a) / (2 * delta) if delta > 0 else a
    kept = np.exp(mu_p * a) * (0.5 * (1 + ratio) + half * sinh_term)
    return env - (1.0 - p.g0) * (1 + p.b) * kept


def hom_model(tau, p: G2ModelParams, setup: HomSetup, pair_model=g2_model_sideband):
    """Coincidences behind the HOM beamsplitter, normalized to the far wings.

    Same-arm pairs keep the source statistics g²(τ); cross-arm pairs were
    emitted ``delay`` apart and carry g²(τ ± delay).  Two-photon interference
    removes the fraction ``v·exp(-2|τ|/T2)`` of the cross-arm pairs, where
    ``v`` is ``setup.interference`` (zero for orthogonal polarizations):

        g(τ) = w_s·g²(τ) + w_c·(1 - v·e^{-2|τ|/T2})·[g²(τ-Δτ) + g²(τ+Δτ)]

    with w_s = (r1² + t1²), w_c = r1·t1 (½ and ¼ for 50:50 couplers).
    ``pair_model`` supplies g²(τ) of the input stream.
    """
    if p.t2 > 2 * p.tau_r:
        warnings.warn(f"T2 = {p.t2} ps exceeds twice the recovery time {p.tau_r} ps",
                      RuntimeWarning, stacklevel=2)
    tau = np.asarray(tau, dtype=float)
    w_same, w_cross = setup.weights
    v = setup.interference
    cross = pair_model(tau - setup.delay, p) + pair_model(tau + setup.delay, p)
    g = w_same * pair_model(tau, p) + w_cross * (1 - v * np.exp(-2 * np.abs(tau) / p.t2)) * cross
    return np.clip(g, 0.0, None)


# --- instrument response ---------------------------------------------------------

def gaussian_kernel(step: float, fwhm: float, truncate: float = 8.0) -> np.ndarray:
    sigma = fwhm * FWHM_TO_SIGMA
    half = int(math.ceil(truncate * sigma / step))
    x = np.arange(-half, half + 1) * step
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def _uniform_step(tau) -> float:
    tau = np.asarray(tau, dtype=float)
    if tau.size < 2:
        raise ResolutionError("need at least two grid points")
    d = np.diff(tau)
    if not np.allclose(d, d[0], rtol=1e-9, atol=0):
        raise ResolutionError("convolution grid must be uniform")
    return float(d[0])


def convolve_irf(data, irf_fwhm: float, tau=None):
    """Convolve a curve or histogram with a unit-area Gaussian of ``irf_fwhm`` ps.

    ``data`` is either a :class:`CorrelationHistogram` (its counts are
    convolved, the baseline is kept) or an array sampled on the uniform grid
    ``tau``.  The curve is extended with its edge values, so flat wings keep
    their level.  The grid must be at least ten times finer than the FWHM.
    """
    if irf_fwhm < 0:
        raise ValueError("irf_fwhm must be >= 0")
    if isinstance(data, CorrelationHistogram):
        counts = convolve_irf(data.counts.astype(float), irf_fwhm, data.tau)
        return CorrelationHistogram(data.tau, counts, data.norm_basis, data.bin_width,
                                    dict(data.meta, irf_fwhm=irf_fwhm))
    y = np.asarray(data, dtype=float)
    if irf_fwhm == 0:
        return y.copy()
    if tau is None:
        raise ValueError("tau grid required for array input")
    step = _uniform_step(tau)
    if step > irf_fwhm / 10:
        raise ResolutionError(f"grid step {step} ps is coarser than FWHM/10 = {irf_fwhm / 10} ps")
    k = gaussian_kernel(step, irf_fwhm)
    half = k.size // 2
    padded = np.pad(y, half, mode="edge")
    return fftconvolve(padded, k, mode="valid")


def expected_histogram(model, tau, bin_width: float, irf_fwhm: float = 0.0,
                       oversample: int = 10) -> np.ndarray:
    """Bin-averaged, IRF-convolved expectation of ``model(τ)`` on histogram bins.

    ``model`` is any vectorized callable of τ (ps).  It is sampled on a grid
    ``oversample`` times finer than the bins (and at least ten times finer
    than the IRF), convolved, then averaged over each bin.
    """
    tau = np.asarray(tau, dtype=float)
    m = max(int(oversample), math.ceil(10 * bin_width / irf_fwhm) if irf_fwhm > 0 else 1)
    h = bin_width / m
    pad = int(math.ceil(8 * irf_fwhm * FWHM_TO_SIGMA / h)) + 1 if irf_fwhm > 0 else 0
    offs = (np.arange(m) + 0.5) * h - bin_width / 2
    inner = (tau[:, None] + offs[None, :]).ravel()
    ext = np.arange(1, pad + 1) * h
    fine = np.concatenate([inner[0] - ext[::-1], inner, inner[-1] + ext])
    g = convolve_irf(model(fine), irf_fwhm, fine) if irf_fwhm > 0 else model(fine)
    return g[pad:pad + inner.size].reshape(tau.size, m).mean(axis=1)


def two_detector_irf(jitter_fwhm: float) -> float:
    """Correlation IRF of two independent detectors with Gaussian jitter."""
    return math.sqrt(2.0) * jitter_fwhm


# --- Hong-Ou-Mandel simulation -----------------------------------------------------

def hom_simulate(stream: PhotonStream, setup: HomSetup, t2: float, seed=0,
                 bin_width: float = 100.0, window: float = 50000.0,
                 use_detected: bool = True) -> CorrelationHistogram:
    """Monte-Carlo cw two-photon interference of a single-channel stream.

    Each photon takes the long arm (delay ``setup.delay``) with probability
    ``t1`` and reaches detector 1 with probability ``t2``.  A coincidence
    between photons from different arms at true output separation δt is
    dropped with probability ``setup.interference·exp(-2|δt|/T2)``.  Routing
    uses the same random draws in both modes, so parallel and orthogonal
    runs with equal seeds share their singles and their normalization.
    """
    if len(stream) == 0:
        raise EmptyStreamError("cannot correlate an empty stream")
    if not t2 > 0:
        raise ValueError("t2 must be > 0")
    rng = np.random.default_rng(seed)
    n_ph = len(stream)
    long_arm = rng.random(n_ph) < setup.t1
    to_one = rng.random(n_ph) < setup.t2
    shift = setup.delay * long_arm
    true_t = stream.time + shift
    det_t = (stream.detected_time if use_detected else stream.time) + shift

    sides = []
    for mask in (to_one, ~to_one):
        order = np.argsort(det_t[mask], kind="stable")
        sides.append((det_t[mask][order], true_t[mask][order], long_arm[mask][order]))
    (da, ta, la), (db, tb, lb) = sides
    if da.size == 0 or db.size == 0:
        raise EmptyStreamError("one detector received no photons")

    n, tau = _bins(bin_width, window)
    counts = np.zeros(2 * n + 1, np.int64)
    v = setup.interference
    reject_rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(1,)))
    for i, j, d in _pair_chunks(da, db, (n + 0.5) * bin_width):
        if v > 0:
            cross = la[i] != lb[j]
            p_drop = v * np.exp(-2.0 * np.abs(tb[j] - ta[i]) / t2)
            drop = cross & (reject_rng.random(d.size) < p_drop)
            d = d[~drop]
        _accumulate(counts, d, bin_width, n)
    duration = stream.duration
    return _normalize(tau, counts, da.size, db.size, duration, bin_width,
                      {"mode": setup.mode, "n_a": int(da.size), "n_b": int(db.size),
                       "duration": duration})


# --- visibility ---------------------------------------------------------------------

def _curve(obj):
    if isinstance(obj, CorrelationHistogram):
        return obj.tau, obj.g2
    if isinstance(obj, tuple) and len(obj) == 2:
        return np.asarray(obj[0], float), np.asarray(obj[1], float)
    y = np.atleast_1d(np.asarray(obj, dtype=float))
    return None, y


def visibility(g_perp, g_par, eps: float = 1e-6):
    """Two-photon interference visibility (g⊥ − g∥)/g⊥.

    Accepts histograms, ``(tau, values)`` pairs or plain arrays/scalars.
    Returns ``(V, V0)``: the pointwise visibility with NaN wherever g⊥ ≤ eps,
    and its value at the point nearest τ = 0.
    """
    tau_p, yp = _curve(g_perp)
    tau_q, yq = _curve(g_par)
    if yp.shape != yq.shape:
        raise GridMismatchError("g_perp and g_par have different shapes")
    if tau_p is not None and tau_q is not None and not np.allclose(tau_p, tau_q):
        raise GridMismatchError("g_perp and g_par are sampled on different grids")
    tau = tau_p if tau_p is not None else tau_q
    with np.errstate(divide="ignore", invalid="ignore"):
        v = np.where(yp > eps, (yp - yq) / yp, np.nan)
    i0 = int(np.argmin(np.abs(tau))) if tau is not None else 0
    return v, float(v[i0])
