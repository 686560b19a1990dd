"""Driven two-level emitter: dressed states, Bloch dynamics and the Mollow spectrum.

Units are fixed project-wide: energies in μeV, times in ps, rates in 1/ps.
Energies enter the Bloch equations as angular frequencies ``E / HBAR``.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import expm

HBAR = 658.2119569  # μeV·ps
C_LIGHT = 0.299792458  # mm/ps
HBAR_C = HBAR * C_LIGHT  # μeV·mm, numerically equal to eV·nm

# eigenvector matrices worse than this are treated as defective; the
# eigen-route error grows like eps·cond, so this keeps it near 1e-10
_DEFECTIVE_COND = 1e6


class InvalidParameterError(ValueError):
    """Raised when a physical parameter is outside its allowed range."""


class DegenerateInputError(ValueError):
    """Raised when the inputs leave a quantity undefined (e.g. zero splitting)."""


@dataclass(frozen=True)
class EmitterParams:
    """Physical parameters of the emitter and its drive.

    Parameters
    ----------
    rabi : float
        Rabi energy Ω in μeV.
    detuning : float
        Laser detuning Δ in μeV.
    t1 : float
        Radiative lifetime in ps.
    gamma_d0 : float
        Power independent pure-dephasing rate in 1/ps.
    k_eid : float
        Excitation-induced dephasing coefficient in 1/(ps·μeV²); the pure
        dephasing rate is ``gamma_d0 + k_eid * rabi**2``.
    blink_off_rate, blink_on_rate : float
        Bright→dark and dark→bright switching rates in 1/ps.
    """

    rabi: float
    detuning: float = 0.0
    t1: float = 1008.0
    gamma_d0: float = 0.0
    k_eid: float = 0.0
    blink_off_rate: float = 0.0
    blink_on_rate: float = 0.0

    def __post_init__(self):
        if not self.rabi >= 0:
            raise InvalidParameterError(f"rabi must be >= 0, got {self.rabi}")
        if not self.t1 > 0:
            raise InvalidParameterError(f"t1 must be > 0, got {self.t1}")
        for name in ("gamma_d0", "k_eid", "blink_off_rate", "blink_on_rate"):
            if not getattr(self, name) >= 0:
                raise InvalidParameterError(f"{name} must be >= 0, got {getattr(self, name)}")
        if not np.isfinite(self.detuning):
            raise InvalidParameterError("detuning must be finite")

    @property
    def pure_dephasing(self) -> float:
        return self.gamma_d0 + self.k_eid * self.rabi**2

    @property
    def gamma1(self) -> float:
        return 1.0 / self.t1

    @property
    def gamma2(self) -> float:
        """Total coherence decay rate 1/T2."""
        return 0.5 / self.t1 + self.pure_dephasing

    @property
    def t2(self) -> float:
        return 1.0 / self.gamma2

    def replace(self, **changes) -> "EmitterParams":
        return replace(self, **changes)


@dataclass(frozen=True)
class DressedState:
    omega_eff: float
    c: float
    s: float


@dataclass(frozen=True)
class SpectralDensity:
    """Emission spectrum on an energy grid (offsets from the laser, μeV).

    ``intensity`` is the incoherent part in 1/μeV; the coherent Rayleigh
    line is a delta peak at zero offset carrying ``elastic_weight``.
    """

    grid: np.ndarray
    intensity: np.ndarray
    elastic_weight: float
    total_weight: float

    @classmethod
    def from_arrays(cls, grid, intensity, elastic_weight=0.0) -> "SpectralDensity":
        grid = np.asarray(grid, dtype=float)
        intensity = np.asarray(intensity, dtype=float)
        if grid.shape != intensity.shape or grid.ndim != 1:
            raise ValueError("grid and intensity must be 1-d arrays of equal length")
        if grid.size > 1 and np.any(np.diff(grid) <= 0):
            raise ValueError("grid must be strictly ascending")
        if np.any(intensity < 0):
            raise ValueError("intensity must be non-negative")
        if not 0.0 <= elastic_weight <= 1.0:
            raise ValueError("elastic_weight must lie in [0, 1]")
        total = float(np.trapezoid(intensity, grid)) + float(elastic_weight)
        return cls(grid, intensity, float(elastic_weight), total)

    @property
    def step(self) -> float:
        return float(np.median(np.diff(self.grid)))

    def weight_between(self, lo: float, hi: float) -> float:
        """Integrated weight in ``[lo, hi]``, including the elastic line if enclosed."""
        m = (self.grid >= lo) & (self.grid <= hi)
        w = float(np.trapezoid(self.intensity[m], self.grid[m])) if m.sum() > 1 else 0.0
        if lo <= 0.0 <= hi:
            w += self.elastic_weight
        return w


def effective_rabi(rabi: float, detuning: float) -> float:
    """Generalized Rabi energy sqrt(Ω² + Δ²)."""
    if rabi < 0:
        raise InvalidParameterError(f"rabi must be >= 0, got {rabi}")
    return float(np.hypot(rabi, detuning))


def dressed_coefficients(rabi: float, detuning: float) -> DressedState:
    omega = effective_rabi(rabi, detuning)
    if omega == 0.0:
        raise DegenerateInputError("rabi and detuning are both zero; dressed basis undefined")
    c = np.sqrt((omega + detuning) / (2 * omega))
    s = np.sqrt((omega - detuning) / (2 * omega))
    return DressedState(omega, float(c), float(s))


def modified_lifetime(t1: float, dressed: DressedState) -> float:
    """Dressed-state emission time t1 / (c⁴ + s⁴)."""
    if not t1 > 0:
        raise InvalidParameterError("t1 must be > 0")
    return t1 / (dressed.c**4 + dressed.s**4)


def t2_from_fwhm(fwhm: float) -> float:
    """Coherence time (ps) of a Lorentzian line with the given FWHM (μeV)."""
    if not fwhm > 0:
        raise InvalidParameterError(f"fwhm must be > 0, got {fwhm}")
    return 2 * HBAR / fwhm


def fwhm_from_t2(t2: float) -> float:
    if not t2 > 0:
        raise InvalidParameterError(f"t2 must be > 0, got {t2}")
    return 2 * HBAR / t2


def sideband_fwhm_eid(params: EmitterParams) -> float:
    """Strong-drive Mollow sideband FWHM (μeV), hbar*(1/T1 + 1/T2).

    Affine in Ω²: the intercept is fixed by t1 and gamma_d0, the slope is
    ``HBAR * k_eid``.
    """
    intercept = HBAR * (1.5 / params.t1 + params.gamma_d0)
    return intercept + HBAR * params.k_eid * params.rabi**2


def eid_from_line(t1: float, slope: float, intercept: float) -> tuple[float, float]:
    """Invert the sideband-width law: (gamma_d0, k_eid) from a FWHM-vs-Ω² line."""
    k_eid = slope / HBAR
    gamma_d0 = intercept / HBAR - 1.5 / t1
    if k_eid < 0 or gamma_d0 < -1e-15:
        raise InvalidParameterError(
            f"line (slope={slope}, intercept={intercept}) is narrower than the "
            f"radiative limit for t1={t1}"
        )
    return max(gamma_d0, 0.0), k_eid


def steady_state(params: EmitterParams) -> tuple[float, float]:
    """Steady-state excited population and coherence magnitude |<σ->|."""
    t2 = params.t2
    s0 = (params.rabi / HBAR) ** 2 * params.t1 * t2
    det = params.detuning / HBAR
    rho = 0.5 * s0 / (1 + (det * t2) ** 2 + s0)
    coh = (params.rabi / HBAR) * (0.5 - rho) / np.hypot(params.gamma2, det)
    return float(rho), float(coh)


def bloch_matrix(params: EmitterParams) -> tuple[np.ndarray, np.ndarray]:
    """Linear system d/dt x = M x + b for x = (<σ->, <σ+>, <σ_ee>)."""
    om = params.rabi / HBAR
    det = params.detuning / HBAR
    g1, g2 = params.gamma1, params.gamma2
    M = np.array(
        [
            [1j * det - g2, 0.0, 1j * om],
            [0.0, -1j * det - g2, -1j * om],
            [0.5j * om, -0.5j * om, -g1],
        ],
        dtype=complex,
    )
    b = np.array([-0.5j * om, 0.5j * om, 0.0], dtype=complex)
    return M, b


def _regression_setup(params: EmitterParams):
    """Steady state and the initial/asymptotic two-time vectors of the regression."""
    M, b = bloch_matrix(params)
    x_ss = np.linalg.solve(M, -b)
    rho = x_ss[2].real
    y0 = np.array([0.0, rho, 0.0], dtype=complex)
    y_inf = x_ss * x_ss[0]
    return M, x_ss, rho, y0 - y_inf, y_inf


def mollow_lines(params: EmitterParams):
    """Complex-Lorentzian decomposition of the normalized first-order coherence.

    Returns ``(eigvals, amplitudes, elastic_weight, defective)`` such that
    ``g1(τ) = elastic_weight + Σ amplitudes·exp(eigvals·τ)``.  ``defective``
    is True when the Bloch matrix is numerically non-diagonalizable; the
    amplitudes are then unusable and callers must take the dense route.
    """
    if params.rabi == 0.0:
        # weak-drive limit Ω -> 0+: coherent fraction T2/2T1, incoherent part
        # is the free decay of the bare transition
        elastic = params.t2 / (2 * params.t1)
        lam = np.array([-params.gamma2 - 1j * params.detuning / HBAR])
        return lam, np.array([1.0 - elastic + 0j]), elastic, False
    M, x_ss, rho, z0, y_inf = _regression_setup(params)
    lam, V = np.linalg.eig(M)
    defective = np.linalg.cond(V) > _DEFECTIVE_COND
    amps = V[1, :] * np.linalg.solve(V, z0) / rho
    elastic = float((y_inf[1] / rho).real)
    return lam, amps, elastic, bool(defective)


def g1_correlation(params: EmitterParams, tau_grid, full_output: bool = False):
    """Normalized two-time coherence <σ+(t+τ)σ-(t)> / ρ_ee on ``tau_grid`` (ps).

    Evaluated from the eigendecomposition of the Bloch matrix; at exceptional
    points the dense matrix exponential is used instead and ``info["dense"]``
    is set when ``full_output`` is requested.
    """
    tau = np.asarray(tau_grid, dtype=float)
    if tau.ndim != 1 or np.any(tau < 0) or np.any(np.diff(tau) < 0):
        raise ValueError("tau_grid must be sorted and non-negative")
    lam, amps, elastic, defective = mollow_lines(params)
    if not defective:
        g1 = elastic + np.exp(np.outer(tau, lam)) @ amps
    else:
        M, _, rho, z0, y_inf = _regression_setup(params)
        g1 = np.array([(expm(M * t) @ z0)[1] for t in tau]) / rho + elastic
    if full_output:
        return g1, {"dense": defective, "elastic_weight": elastic, "eigvals": lam}
    return g1


def emission_spectrum(params: EmitterParams, grid) -> SpectralDensity:
    """Resonance-fluorescence spectrum normalized to one emitted photon.

    The incoherent part is the Fourier transform of the decaying part of
    ``g1``; the Rayleigh line is returned as ``elastic_weight``.
    """
    grid = np.asarray(grid, dtype=float)
    delta = grid / HBAR
    lam, amps, elastic, defective = mollow_lines(params)
    if not defective:
        resp = -(amps[None, :] / (lam[None, :] + 1j * delta[:, None])).sum(axis=1)
    else:
        # resolvent form, valid without diagonalization
        M, _, rho, z0, _ = _regression_setup(params)
        A = M[None, :, :] + 1j * delta[:, None, None] * np.eye(3)[None]
        resp = -np.linalg.solve(A, np.broadcast_to(z0, (delta.size, 3))[..., None])[:, 1, 0] / rho
    intensity = np.clip(resp.real / (np.pi * HBAR), 0.0, None)

    if grid.size > 1:
        narrowest = 2 * HBAR * np.min(np.abs(lam.real))
        if narrowest < 2 * np.min(np.diff(grid)):
            warnings.warn(
                f"grid step {np.min(np.diff(grid)):.3g} μeV does not resolve the "
                f"narrowest line (FWHM {narrowest:.3g} μeV)",
                RuntimeWarning,
                stacklevel=2,
            )
    return SpectralDensity.from_arrays(grid, intensity, min(max(elastic, 0.0), 1.0))


def spectral_weights(params: EmitterParams) -> tuple[float, float]:
    """Analytic (elastic, incoherent) weights of the full, unwindowed spectrum."""
    if params.rabi == 0.0:
        _, _, elastic, _ = mollow_lines(params)
        return elastic, 1.0 - elastic
    _, _, rho, z0, y_inf = _regression_setup(params)
    return float(y_inf[1].real / rho), float(z0[1].real / rho)
