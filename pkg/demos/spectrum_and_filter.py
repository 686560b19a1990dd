"""Resonance-fluorescence spectrum of a strongly driven dot, and sideband filtering.

Computes the Mollow triplet for the default configuration, fits the red
sideband to get its coherence time, separates it with the two-stage
Michelson filter and finally records it through the scanning Fabry-Pérot.

    python3 demos/spectrum_and_filter.py
"""
import numpy as np

from mollow.emitter import dressed_coefficients, modified_lifetime, t2_from_fwhm
from mollow.interferometry import check_filterable, coherence_length
from mollow.pipeline import load_config, sideband_t2, spectra


def peak(spec, lo, hi):
    m = (spec.grid >= lo) & (spec.grid <= hi)
    i = np.argmax(spec.intensity[m])
    return spec.grid[m][i], spec.intensity[m][i]


cfg = load_config()
em = cfg.emitter
print(f"Rabi energy {em.rabi} μeV, T1 {em.t1} ps, T2 {em.t2:.1f} ps (dephasing included)")

d = dressed_coefficients(em.rabi, em.detuning)
print(f"dressed mixing c = {d.c:.4f}, s = {d.s:.4f}; sideband lifetime {modified_lifetime(em.t1, d):.0f} ps")

raw, filt, scan = spectra(cfg)
for name, lo, hi in (("red", -80, -20), ("central", -5, 5), ("blue", 20, 80)):
    e, i = peak(raw, lo, hi)
    print(f"  {name:8s} line at {e:+8.3f} μeV, peak {i:.3e}")

fit = sideband_t2(raw, em.rabi, "red", 10.0)
t2 = t2_from_fwhm(fit["fwhm"])
print(f"red sideband: FWHM {fit['fwhm']:.3f} ± {fit.sigma('fwhm'):.3f} μeV -> T2 = {t2:.1f} ps")

stage1, stage2 = cfg.filter
for label, stage in (("stage 1", stage1), ("stage 2", stage2)):
    ok = check_filterable(t2, stage)
    print(f"  {label}: {stage}; coherence/path ratio {ok.ratio:.1f} -> {'ok' if ok.ok else 'too short'}")
print(f"sideband coherence length: {coherence_length(t2):.1f} mm")

total = np.trapezoid(raw.intensity, raw.grid)
kept = np.trapezoid(filt.intensity, filt.grid)
print(f"filtered spectrum keeps {kept / total:.1%} of the incoherent emission")
e, _ = peak(filt, -80, 80)
print(f"strongest line after filtering: {e:+.3f} μeV")
e, _ = peak(scan, scan.grid.min(), scan.grid.max())
print(f"Fabry-Pérot record: strongest line at {e:+.3f} μeV (free spectral range {cfg.fabry_perot.fsr} μeV)")
