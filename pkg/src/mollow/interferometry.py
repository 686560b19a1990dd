"""Instrument models: Michelson fringe filters and the scanning Fabry-Pérot.

A Michelson with path difference ``d`` transmits ``½(1 + cos(E·d/ħc + φ))``
of a photon with absolute energy ``E``.  Spectra are stored as offsets from
the laser, so every filter needs the absolute centre energy as well.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .emitter import C_LIGHT, HBAR_C, SpectralDensity

HC = 2 * np.pi * HBAR_C  # eV·nm
DEFAULT_WAVELENGTH_NM = 900.0


def wavelength_to_ev(wavelength_nm: float) -> float:
    return HC / wavelength_nm


DEFAULT_CENTER_EV = wavelength_to_ev(DEFAULT_WAVELENGTH_NM)


@dataclass(frozen=True)
class MichelsonSetting:
    d_mm: float
    phi_rad: float = 0.0

    def __post_init__(self):
        if not self.d_mm >= 0:
            raise ValueError(f"path difference must be >= 0, got {self.d_mm}")
        if not 0.0 <= self.phi_rad < 2 * np.pi:
            raise ValueError(f"phase offset must lie in [0, 2π), got {self.phi_rad}")

    def to_dict(self) -> dict:
        return {"d_mm": self.d_mm, "phi_rad": self.phi_rad}

    @classmethod
    def from_dict(cls, data: dict) -> "MichelsonSetting":
        return cls(float(data["d_mm"]), float(data.get("phi_rad", 0.0)))


@dataclass(frozen=True)
class FabryPerotSetting:
    fsr: float = 62.04
    resolution_fwhm: float = 1.0

    def __post_init__(self):
        if not self.fsr > 0:
            raise ValueError("fsr must be > 0")
        if not 0 <= self.resolution_fwhm < self.fsr:
            raise ValueError("resolution_fwhm must lie in [0, fsr)")

    def to_dict(self) -> dict:
        return {"fsr_uev": self.fsr, "res_uev": self.resolution_fwhm}

    @classmethod
    def from_dict(cls, data: dict) -> "FabryPerotSetting":
        return cls(float(data["fsr_uev"]), float(data["res_uev"]))


class FilterCheck(NamedTuple):
    ok: bool
    ratio: float


def wavelength_split(wavelength_nm: float, splitting_uev: float) -> float:
    """Wavelength increment (nm) of a line ``splitting_uev`` below ``wavelength_nm``."""
    energy = wavelength_to_ev(wavelength_nm)
    return HC / (energy - splitting_uev * 1e-6) - wavelength_nm


def michelson_path_difference(wavelength_nm: float, delta_lambda_nm: float) -> float:
    """Path difference (mm) that puts two lines Δλ apart half a fringe apart.

    The line at ``wavelength_nm`` and the one at ``wavelength_nm + delta_lambda_nm``
    then sit on opposite fringe extrema.
    """
    if not wavelength_nm > 0:
        raise ValueError("wavelength must be > 0")
    if delta_lambda_nm == 0:
        raise ZeroDivisionError("delta_lambda = 0: no splitting to filter")
    if delta_lambda_nm < 0:
        raise ValueError("delta_lambda must be > 0")
    d_nm = wavelength_nm * (wavelength_nm + delta_lambda_nm) / (2 * delta_lambda_nm)
    return d_nm * 1e-6


def fringe_phase(d_mm: float, energy_uev):
    return np.asarray(energy_uev) * d_mm / HBAR_C


def tune_michelson(d_mm: float, null_offset: float = 0.0,
                   center_energy: float = DEFAULT_CENTER_EV) -> MichelsonSetting:
    """Setting with path difference ``d_mm`` and a destructive node at ``null_offset`` μeV."""
    phase = fringe_phase(d_mm, center_energy * 1e6 + null_offset)
    return MichelsonSetting(d_mm, float(np.mod(np.pi - phase, 2 * np.pi)))


def michelson_transmission(setting: MichelsonSetting, energy_offset,
                           center_energy: float = DEFAULT_CENTER_EV):
    """Intensity transmission at ``energy_offset`` (μeV) from a line at ``center_energy`` (eV)."""
    energy = center_energy * 1e6 + np.asarray(energy_offset, dtype=float)
    return 0.5 * (1.0 + np.cos(fringe_phase(setting.d_mm, energy) + setting.phi_rad))


def sideband_filters(splitting: float, keep: str = "red",
                     wavelength_nm: float = DEFAULT_WAVELENGTH_NM):
    """Two Michelson stages isolating one Mollow sideband.

    Stage one nulls the central line and passes both sidebands (lines
    ``splitting`` μeV apart on opposite extrema); stage two, with half the
    path difference, nulls the unwanted sideband.  Red is the low-energy side.
    """
    if keep not in ("red", "blue"):
        raise ValueError("keep must be 'red' or 'blue'")
    center = wavelength_to_ev(wavelength_nm)
    d1 = michelson_path_difference(wavelength_nm, wavelength_split(wavelength_nm, splitting))
    d2 = michelson_path_difference(wavelength_nm, wavelength_split(wavelength_nm, 2 * splitting))
    reject = splitting if keep == "red" else -splitting
    return tune_michelson(d1, 0.0, center), tune_michelson(d2, reject, center)


def double_michelson_filter(spectrum: SpectralDensity, stage1: MichelsonSetting,
                            stage2: MichelsonSetting,
                            center_energy: float = DEFAULT_CENTER_EV) -> SpectralDensity:
    t = (michelson_transmission(stage1, spectrum.grid, center_energy)
         * michelson_transmission(stage2, spectrum.grid, center_energy))
    t0 = float(michelson_transmission(stage1, 0.0, center_energy)
               * michelson_transmission(stage2, 0.0, center_energy))
    return SpectralDensity.from_arrays(spectrum.grid, spectrum.intensity * t,
                                       spectrum.elastic_weight * t0)


def coherence_length(t2: float) -> float:
    """Coherence length (mm) of light with coherence time ``t2`` (ps)."""
    if t2 < 0:
        raise ValueError("t2 must be >= 0")
    return C_LIGHT * t2


def check_filterable(t2: float, setting: MichelsonSetting) -> FilterCheck:
    """Whether the path difference stays below the coherence length."""
    lcoh = coherence_length(t2)
    ratio = lcoh / setting.d_mm if setting.d_mm > 0 else math.inf
    return FilterCheck(lcoh > setting.d_mm, ratio)


def periodic_lorentzian(energy, fsr: float, fwhm: float):
    """Sum of unit-area Lorentzians of width ``fwhm`` repeated every ``fsr``."""
    a = np.pi * fwhm / fsr
    return np.sinh(a) / (fsr * (np.cosh(a) - np.cos(2 * np.pi * np.asarray(energy) / fsr)))


def fabry_perot_scan(spectrum: SpectralDensity, setting: FabryPerotSetting,
                     window: tuple[float, float], step: float | None = None) -> SpectralDensity:
    """Spectrum as recorded through a scanning Fabry-Pérot.

    Every order of the interferometer maps the input onto the same scan
    coordinate, so the output is the input folded modulo the free spectral
    range and broadened by the instrument Lorentzian.  The folding runs over
    every order that overlaps the input grid and the broadening is applied as
    an exact circular convolution on one period, so the result is periodic.
    With zero resolution width the elastic delta is carried through unchanged.
    """
    lo, hi = map(float, window)
    if hi <= lo:
        raise ValueError("window must be (lo, hi) with hi > lo")
    fsr = setting.fsr
    if hi - lo > 10 * fsr:
        warnings.warn(f"scan window {hi - lo:.4g} μeV spans more than 10 FSR",
                      RuntimeWarning, stacklevel=2)
    if step is None:
        step = spectrum.step
    n_period = int(math.ceil(fsr / step))
    h = fsr / n_period
    e_period = lo + h * np.arange(n_period)

    g, f = spectrum.grid, spectrum.intensity
    n_lo = int(math.floor((g[0] - e_period[-1]) / fsr))
    n_hi = int(math.ceil((g[-1] - e_period[0]) / fsr))
    folded = np.zeros(n_period)
    for n in range(n_lo, n_hi + 1):
        folded += np.interp(e_period + n * fsr, g, f, left=0.0, right=0.0)

    elastic = spectrum.elastic_weight
    if setting.resolution_fwhm > 0:
        k = np.fft.fftfreq(n_period, d=1.0 / n_period)
        kernel = np.exp(-np.pi * setting.resolution_fwhm * np.abs(k) / fsr)
        folded = np.fft.ifft(np.fft.fft(folded) * kernel).real
        folded += elastic * periodic_lorentzian(e_period, fsr, setting.resolution_fwhm)
        elastic = 0.0
    folded = np.clip(folded, 0.0, None)

    m = np.arange(int(math.floor((hi - lo) / h + 1e-9)) + 1)
    return SpectralDensity.from_arrays(lo + m * h, folded[m % n_period], elastic)
