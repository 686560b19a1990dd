"""Configuration and the end-to-end reproduction chain for data sets I–III.

A run is a pure function of the configuration and the seed: every random
stream is derived from ``stream.seed`` with :class:`numpy.random.SeedSequence`
and no file carries a timestamp.
"""
from __future__ import annotations

import copy
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import io
from .correlation import (
    CorrelationHistogram,
    G2ModelParams,
    HomSetup,
    histogram_g2,
    hom_simulate,
    two_detector_irf,
    visibility,
)
from .emitter import EmitterParams, SpectralDensity, emission_spectrum
from .fitting import (
    FitResult,
    G2Forward,
    calibrate_eid,
    chained_fit,
    fit_lorentzian,
    theta_vector,
)
from .interferometry import (
    FabryPerotSetting,
    MichelsonSetting,
    double_michelson_filter,
    fabry_perot_scan,
    sideband_filters,
    wavelength_to_ev,
)
from .photon_stream import (
    StreamConfig,
    blink_rates,
    cascade_rates,
    channel_select,
    simulate_dressed_cascade,
)

SCHEMA_VERSION = 1
OUTPUT_ENV = "MOLLOW_OUT"

# Reference sideband T2 at two Rabi energies (set I: 264 ps, sets II/III:
# 237 ps); the two points pin the excitation-induced dephasing line.
EID_CALIBRATION = {"rabi": [45.5, 53.8], "t2": [264.0, 237.0]}

# Blinking contrast b of g² = 1 + b·exp(-|τ|/τ_bunch).  Not given directly;
# this value makes the orthogonal HOM trace of set I reach the reference
# g⊥(0) = 0.61 with the same τ=0 residual (0.12) as the sideband
# auto-correlation.
BLINK_AMPLITUDE = 0.267

DEFAULT_CONFIG: dict = {
    "schema_version": SCHEMA_VERSION,
    "emitter": {
        "rabi": 45.5,
        "detuning": 0.0,
        "t1": 1008.0,
        "gamma_d0": None,   # None: calibrated from eid_calibration
        "k_eid": None,
        "eid_calibration": EID_CALIBRATION,
        "tau_bunch": 9510.0,
        "blink_amplitude": BLINK_AMPLITUDE,
    },
    "spectrum": {"span_uev": 150.0, "step_uev": 0.02, "wavelength_nm": 900.0,
                 "keep": "red", "fit_half_width_uev": 10.0},
    "filter": None,  # None: derived from the splitting; else {"stage1": {...}, "stage2": {...}}
    "fabry_perot": {"fsr_uev": 62.04, "res_uev": 1.0, "window_uev": None},
    "stream": {"photons": 1e7, "duration_ps": None, "seed": 42, "jitter_fwhm_ps": 400.0,
               "efficiency": 1.0, "max_events": 1e8, "chunk_ps": None, "workers": 4},
    "correlation": {"bin_width_ps": 100.0, "window_ps": 60000.0, "channel": "R"},
    "hom": {"delay_ps": 13000.0, "r1": 0.5, "t1": 0.5, "r2": 0.5, "t2": 0.5,
            "overlap": 0.98, "mode": "parallel", "coherence_ps": None},
    "fit": {"irf_fwhm_ps": None, "chain": True, "reference_irf_ps": 400.0},
    "output_dir": None,
}


class ConfigError(ValueError):
    pass


def _merge(base: dict, update: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, val in update.items():
        if key not in out:
            raise ConfigError(f"unknown config key {path + key!r}")
        if isinstance(out[key], dict) and isinstance(val, dict) and key != "filter":
            out[key] = _merge(out[key], val, f"{path}{key}.")
        else:
            out[key] = val
    return out


def apply_override(raw: dict, dotted: str, value) -> dict:
    """Set ``section.key`` in a raw config dict (values given as JSON or plain strings)."""
    if isinstance(value, str):
        try:
            value = json.loads(value)
        except json.JSONDecodeError:
            pass
    *head, last = dotted.split(".")
    node = raw
    for k in head:
        if not isinstance(node.get(k), dict):
            raise ConfigError(f"unknown config section {dotted!r}")
        node = node[k]
    if last not in node:
        raise ConfigError(f"unknown config key {dotted!r}")
    node[last] = value
    return raw


@dataclass
class FitOptions:
    irf_fwhm: float | None = None
    chain: bool = True
    reference_irf: float = 400.0


@dataclass
class PipelineConfig:
    emitter: EmitterParams
    filter: tuple[MichelsonSetting, MichelsonSetting]
    fabry_perot: FabryPerotSetting
    fp_window: tuple[float, float]
    stream: StreamConfig
    hom: HomSetup
    fit: FitOptions
    output_dir: Path
    raw: dict = field(repr=False, default_factory=dict)

    @property
    def spectrum_grid(self) -> np.ndarray:
        s = self.raw["spectrum"]
        n = int(round(s["span_uev"] / s["step_uev"]))
        return np.arange(-n, n + 1) * s["step_uev"]

    @property
    def center_energy(self) -> float:
        return wavelength_to_ev(self.raw["spectrum"]["wavelength_nm"])

    @property
    def correlation_irf(self) -> float:
        if self.fit.irf_fwhm is not None:
            return self.fit.irf_fwhm
        return two_detector_irf(self.stream.detector_jitter_fwhm)

    @classmethod
    def from_dict(cls, data: dict | None = None, output_dir=None) -> "PipelineConfig":
        data = dict(data or {})
        version = data.get("schema_version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema_version {version}")
        raw = _merge(DEFAULT_CONFIG, data)
        e = raw["emitter"]
        if e["gamma_d0"] is None or e["k_eid"] is None:
            cal = e["eid_calibration"]
            gd0, k, _ = calibrate_eid(float(e["t1"]), cal["rabi"], cal["t2"])
            gd0 = gd0 if e["gamma_d0"] is None else e["gamma_d0"]
            k = k if e["k_eid"] is None else e["k_eid"]
        else:
            gd0, k = e["gamma_d0"], e["k_eid"]
        off, on = (blink_rates(float(e["tau_bunch"]), float(e["blink_amplitude"]))
                   if e["blink_amplitude"] > 0 else (0.0, 0.0))
        emitter = EmitterParams(float(e["rabi"]), float(e["detuning"]), float(e["t1"]),
                                float(gd0), float(k), off, on)

        sp = raw["spectrum"]
        if raw["filter"] is None:
            filt = sideband_filters(math.hypot(emitter.rabi, emitter.detuning) or 1.0,
                                    sp["keep"], sp["wavelength_nm"])
        else:
            filt = (MichelsonSetting.from_dict(raw["filter"]["stage1"]),
                    MichelsonSetting.from_dict(raw["filter"]["stage2"]))
        fp = FabryPerotSetting.from_dict(raw["fabry_perot"])
        win = raw["fabry_perot"]["window_uev"] or (-fp.fsr / 2, fp.fsr / 2)

        s = raw["stream"]
        duration = s["duration_ps"]
        if duration is None:
            # an undriven emitter has no cascade; any positive duration will do
            driven = math.hypot(emitter.rabi, emitter.detuning) > 0
            rate = cascade_rates(emitter).total_rate if driven else 0.0
            duration = float(s["photons"]) / rate if rate > 0 else 1.0
        stream = StreamConfig(float(duration), int(s["seed"]), float(s["jitter_fwhm_ps"]),
                              float(s["efficiency"]), float(s["max_events"]), s["chunk_ps"],
                              int(s["workers"]))
        hom = HomSetup.from_dict(raw["hom"])
        f = raw["fit"]
        fit = FitOptions(f["irf_fwhm_ps"], bool(f["chain"]), float(f["reference_irf_ps"]))
        out = output_dir or raw["output_dir"] or os.environ.get(OUTPUT_ENV) or "mollow_out"
        return cls(emitter, filt, fp, (float(win[0]), float(win[1])), stream, hom, fit,
                   Path(out), raw)

    def to_dict(self) -> dict:
        return copy.deepcopy(self.raw)


def load_config(path=None, overrides: dict | None = None, output_dir=None) -> PipelineConfig:
    raw = json.loads(Path(path).read_text()) if path else {}
    raw = _merge(DEFAULT_CONFIG, raw)
    for key, val in (overrides or {}).items():
        apply_override(raw, key, val)
    return PipelineConfig.from_dict(raw, output_dir)


# --- data sets ------------------------------------------------------------------------

@dataclass(frozen=True)
class DataSetSpec:
    name: str
    rabi: float            # μeV
    sideband: str          # "red" or "blue"
    t2_spectral: float     # ps, from the power series
    t2_fit: float          # ps, value used in the HOM fits
    tau_r: float           # ps, fitted (not reproduced by the model)
    tau_bunch_ns: float
    g0_auto: float         # deconvolved sideband g²(0)
    v_deconv: float
    v_deconv_err: float
    v_conv: float
    v_conv_err: float
    g_perp: float | None = None
    g_par: float | None = None

    @property
    def channel(self) -> str:
        return "R" if self.sideband == "red" else "B"


# Reference values of the three measured data sets.  Set I also fixes the two
# HOM residuals g⊥(0), g∥(0); the bunching time of sets II/III is in ns.
DATA_SETS = {
    "I": DataSetSpec("I", 45.5, "red", 264.0, 300.0, 540.0, 9.51, 0.12,
                     0.93, 0.01, 0.47, 0.08, 0.61, 0.04),
    "II": DataSetSpec("II", 53.8, "red", 237.0, 237.0, 570.0, 14.3, 0.08,
                      0.97, 0.02, 0.43, 0.07),
    "III": DataSetSpec("III", 53.8, "blue", 237.0, 237.0, 570.0, 14.3, 0.03,
                       0.92, 0.02, 0.39, 0.08),
}


def _hom_zero(theta, setup: HomSetup, irf: float, convolved: bool) -> float:
    fwd = G2Forward("hom", np.zeros(1), 1.0, irf, setup)
    return fwd.value_at_zero(theta, convolved)[0]


def reference_model(spec: DataSetSpec, setup: HomSetup | None = None,
                  b: float = BLINK_AMPLITUDE, irf: float = 400.0) -> dict:
    """HOM model at a data set's reference fit values and its IRF-convolved visibility.

    The τ=0 residual of each polarization trace is chosen so the deconvolved
    values match the reference ones: set I gives g⊥(0) and g∥(0) directly; for
    II/III the orthogonal residual is the sideband auto-correlation value and
    the parallel one follows from the reference visibility.  Both traces are then
    convolved with ``irf`` to give the convoluted visibility.
    """
    setup = setup or HomSetup()
    base = G2ModelParams(0.0, spec.tau_r, b, spec.tau_bunch_ns * 1e3, spec.t2_fit)

    def trace(mode, g0):
        s = setup.with_mode(mode)
        return theta_vector(base, s.interference) + np.array([g0, 0, 0, 0, 0, 0]), s

    def solve(mode, target):
        # the τ=0 value is affine in the residual g0
        t0, s = trace(mode, 0.0)
        t1, _ = trace(mode, 1.0)
        y0, y1 = _hom_zero(t0, s, irf, False), _hom_zero(t1, s, irf, False)
        return (target - y0) / (y1 - y0)

    if spec.g_perp is not None:
        g0_perp = solve("orthogonal", spec.g_perp)
    else:
        g0_perp = spec.g0_auto
    th_p, s_p = trace("orthogonal", g0_perp)
    g_perp = _hom_zero(th_p, s_p, irf, False)
    g_par_target = spec.g_par if spec.g_par is not None else g_perp * (1 - spec.v_deconv)
    g0_par = solve("parallel", g_par_target)
    th_q, s_q = trace("parallel", g0_par)
    g_par = _hom_zero(th_q, s_q, irf, False)
    gp_c = _hom_zero(th_p, s_p, irf, True)
    gq_c = _hom_zero(th_q, s_q, irf, True)
    return {"g0_perp": g0_perp, "g0_par": g0_par, "g_perp": g_perp, "g_par": g_par,
            "g_perp_conv": gp_c, "g_par_conv": gq_c,
            "v_deconv": (g_perp - g_par) / g_perp, "v_conv": (gp_c - gq_c) / gp_c,
            "theta_perp": th_p, "theta_par": th_q}


def rounding_check(g_perp: float, g_par: float, digits: int = 2) -> tuple[float, float]:
    """Visibility from values rounded to the reference precision, and the rounding half-width it carries.

    Returns ``(V, tolerance)`` where the tolerance combines the propagated
    half-unit rounding of both inputs with that of the reference visibility.
    """
    q = 0.5 * 10.0**-digits
    gp, gq = round(g_perp, digits), round(g_par, digits)
    v = (gp - gq) / gp
    tol = q * (abs(gq) / gp**2 + 1 / gp) + q
    return v, tol


# --- commands' building blocks -----------------------------------------------------------

def derived_seed(seed: int, *key: int) -> int:
    return int(np.random.SeedSequence(seed, spawn_key=key).generate_state(1, np.uint64)[0])


def spectra(config: PipelineConfig, emitter: EmitterParams | None = None):
    """(raw, filtered, Fabry-Pérot scanned) spectra for one emitter."""
    emitter = emitter or config.emitter
    raw = emission_spectrum(emitter, config.spectrum_grid)
    filt = double_michelson_filter(raw, *config.filter, config.center_energy)
    scan = fabry_perot_scan(raw, config.fabry_perot, config.fp_window)
    return raw, filt, scan


def sideband_t2(spectrum: SpectralDensity, rabi: float, keep: str, half_width: float) -> FitResult:
    center = -rabi if keep == "red" else rabi
    m = np.abs(spectrum.grid - center) <= half_width
    return fit_lorentzian(spectrum.grid[m], spectrum.intensity[m])


@dataclass
class Check:
    data_set: str
    quantity: str
    expected: str
    achieved: float
    tolerance: str
    passed: bool | None  # None: reported only

    @property
    def status(self) -> str:
        return {True: "PASS", False: "FAIL", None: "info"}[self.passed]


@dataclass
class SetOutcome:
    spec: DataSetSpec
    t2_fit: FitResult
    chain: object
    reference: dict
    histograms: dict
    checks: list


def run_data_set(config: PipelineConfig, spec: DataSetSpec, index: int, out: Path) -> SetOutcome:
    raw = config.raw
    e = raw["emitter"]
    keep = spec.sideband
    cfg_spec = copy.deepcopy(raw)
    cfg_spec["emitter"].update(rabi=spec.rabi, tau_bunch=spec.tau_bunch_ns * 1e3)
    cfg_spec["spectrum"]["keep"] = keep
    cfg_spec["filter"] = None
    set_cfg = PipelineConfig.from_dict(cfg_spec, out)
    emitter = set_cfg.emitter

    d = out / f"set_{spec.name}"
    sp_raw, sp_filt, sp_scan = spectra(set_cfg, emitter)
    io.write_spectrum(d / "spectrum_raw.csv", sp_raw)
    io.write_spectrum(d / "spectrum_filtered.csv", sp_filt)
    io.write_spectrum(d / "spectrum_fp.csv", sp_scan)
    t2fit = sideband_t2(sp_raw, spec.rabi, keep, raw["spectrum"]["fit_half_width_uev"])
    t2 = t2fit.extras["t2_ps"]

    seed = int(raw["stream"]["seed"])
    sc = set_cfg.stream
    stream_cfg = StreamConfig(sc.duration, derived_seed(seed, index, 0), sc.detector_jitter_fwhm,
                              sc.detector_efficiency, sc.max_events, sc.chunk_duration,
                              sc.workers)
    stream = simulate_dressed_cascade(emitter, stream_cfg)
    c = raw["correlation"]
    bw = float(c["bin_width_ps"])
    # the fits need a span of at least five bunching times
    win = max(float(c["window_ps"]), 6 * spec.tau_bunch_ns * 1e3)
    central = channel_select(stream, "C")
    side = channel_select(stream, spec.channel)
    hists = {
        "central": histogram_g2(central, None, bw, win, seed=derived_seed(seed, index, 1)),
        "sideband": histogram_g2(side, None, bw, win, seed=derived_seed(seed, index, 2)),
    }
    setup = config.hom
    coh = raw["hom"]["coherence_ps"] or t2
    for mode, key in (("orthogonal", "hom_perp"), ("parallel", "hom_par")):
        hists[key] = hom_simulate(side, setup.with_mode(mode), coh,
                                  seed=derived_seed(seed, index, 3), bin_width=bw, window=win)
    for key, h in hists.items():
        io.write_histogram(d / f"g2_{key}.csv", h)

    irf = set_cfg.correlation_irf
    chain = chained_fit(hists["central"], hists["sideband"], hists["hom_perp"],
                        hists["hom_par"], setup, coh, irf)
    for key, fit, h in (("central", chain.central, hists["central"]),
                        ("sideband", chain.sideband, hists["sideband"]),
                        ("hom_perp", chain.hom_perp, hists["hom_perp"]),
                        ("hom_par", chain.hom_par, hists["hom_par"])):
        io.write_fit(d / f"fit_{key}.json", fit, fit_curves(fit, h, setup))

    cap = reference_model(spec, setup, e["blink_amplitude"], config.fit.reference_irf)
    checks = _set_checks(spec, t2fit, chain, cap, emitter, setup, config)
    return SetOutcome(spec, t2fit, chain, cap, hists, checks)


def fit_curves(fit: FitResult, hist: CorrelationHistogram, setup: HomSetup | None = None) -> dict:
    """Convolved and deconvolved model curves on the histogram's τ grid."""
    theta = fit.values
    irf = fit.extras.get("irf_fwhm", 0.0)
    conv = G2Forward(fit.model, hist.tau, hist.bin_width, irf, setup)(theta)
    deconv = G2Forward(fit.model, hist.tau, hist.bin_width, 0.0, setup)(theta)
    return {"convolved": (hist.tau, conv), "deconvolved": (hist.tau, deconv)}


def _within(x, target, rel) -> bool:
    return abs(x - target) <= rel * abs(target)


def _set_checks(spec, t2fit, chain, cap, emitter, setup, config) -> list:
    n = spec.name
    t2 = t2fit.extras["t2_ps"]
    tau_mod = 2 * emitter.t1  # resonant drive: c = s = 1/√2
    vis = chain.visibility
    v_true = setup.interference
    checks = [
        Check(n, "T2 from sideband Lorentzian [ps]", f"{spec.t2_spectral:g}", t2, "±5%",
              _within(t2, spec.t2_spectral, 0.05)),
        Check(n, "tau_bunch fit [ps]", f"{spec.tau_bunch_ns * 1e3:g}", chain.central["tau_bunch"],
              "±10%", _within(chain.central["tau_bunch"], spec.tau_bunch_ns * 1e3, 0.10)),
        Check(n, "sideband g2(0) deconvolved", "< 0.05", chain.sideband.extras["g0_deconv"],
              "< 0.05", chain.sideband.extras["g0_deconv"] < 0.05),
        Check(n, "sideband g2(0) convolved", "-", chain.sideband.extras["g0_conv"], "-", None),
        Check(n, "tau_r fit [ps]", f"{tau_mod:g} (2·T1)", chain.sideband["tau_r"], "±10%",
              _within(chain.sideband["tau_r"], tau_mod, 0.10)),
        Check(n, "tau_r reference [ps]", f"{spec.tau_r:g}", chain.sideband["tau_r"],
              "not a target", None),
        Check(n, "V_deconv simulated", f"{v_true:.4g} (configured)", vis.v_deconv,
              f"2σ = {2 * vis.sigma_deconv:.2g}",
              abs(vis.v_deconv - v_true) <= 2 * vis.sigma_deconv),
        Check(n, "V_conv simulated", f"{spec.v_conv:g} ± {spec.v_conv_err:g}", vis.v_conv,
              "-", None),
        Check(n, "V_deconv reference model", f"{spec.v_deconv:g}", cap["v_deconv"], "-", None),
        Check(n, f"V_conv reference model ({config.fit.reference_irf:g} ps IRF)",
              f"{spec.v_conv:g} ± {spec.v_conv_err:g}", cap["v_conv"],
              f"± {spec.v_conv_err:g}",
              abs(cap["v_conv"] - spec.v_conv) <= spec.v_conv_err if n == "I" else None),
    ]
    if spec.g_perp is not None:
        v = visibility(spec.g_perp, spec.g_par)[1]
        checks.append(Check(n, "visibility(g⊥, g∥) reference", f"{spec.v_deconv:g}", v, "±0.001 of 0.934",
                            abs(v - 0.934) <= 1e-3 and abs(v - spec.v_deconv) <= spec.v_deconv_err))
    else:
        v, tol = rounding_check(cap["g_perp"], cap["g_par"])
        checks.append(Check(n, "visibility from 2-digit g⊥, g∥", f"{spec.v_deconv:g}", v,
                            f"±{tol:.3f} (rounding)",
                            abs(v - spec.v_deconv) <= tol if n == "III" else None))
    return checks


@dataclass
class ReproduceReport:
    outcomes: list
    checks: list

    @property
    def passed(self) -> bool:
        return all(c.passed is not False for c in self.checks)

    def table(self) -> str:
        head = f"{'set':<4} {'quantity':<44} {'expected':>22} {'achieved':>12} {'tolerance':>18}  status"
        lines = [head, "-" * len(head)]
        for c in self.checks:
            lines.append(f"{c.data_set:<4} {c.quantity:<44} {c.expected:>22} "
                         f"{c.achieved:>12.5g} {c.tolerance:>18}  {c.status}")
        n_fail = sum(c.passed is False for c in self.checks)
        lines.append(f"\n{'ALL PASS' if n_fail == 0 else f'{n_fail} FAILED'}")
        return "\n".join(lines)


def reproduce(config: PipelineConfig, sets=("I", "II", "III")) -> ReproduceReport:
    out = config.output_dir
    out.mkdir(parents=True, exist_ok=True)
    outcomes = [run_data_set(config, DATA_SETS[name], i, out) for i, name in enumerate(sets)]
    checks = [c for o in outcomes for c in o.checks]
    report = ReproduceReport(outcomes, checks)
    rows = ["data_set,quantity,expected,achieved,tolerance,status"]
    for c in checks:
        rows.append(",".join([c.data_set, f'"{c.quantity}"', f'"{c.expected}"',
                              "%.17g" % c.achieved, f'"{c.tolerance}"', c.status]))
    (out / "summary.csv").write_text("\n".join(rows) + "\n")
    (out / "summary.txt").write_text(report.table() + "\n")
    io.write_json(out / "config.json", config.to_dict())
    return report
