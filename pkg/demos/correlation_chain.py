"""From a simulated photon stream to the two-photon interference visibility.

Simulates the labelled cascade (red, central, blue photons with blinking and
400 ps detector jitter), builds the central-line and red-sideband
auto-correlations and both Hong-Ou-Mandel traces, then runs the chained fit:
central bunching -> sideband antibunching -> HOM with T2 fixed.

    python3 demos/correlation_chain.py [photons]
"""
import sys

from mollow.correlation import hom_simulate, histogram_g2
from mollow.fitting import chained_fit
from mollow.photon_stream import channel_select, simulate_dressed_cascade, stream_statistics
from mollow.pipeline import load_config

photons = float(sys.argv[1]) if len(sys.argv) > 1 else 1e7
cfg = load_config(overrides={"stream.photons": photons})
print(f"simulating {photons:.0e} photons ...")
stream = simulate_dressed_cascade(cfg.emitter, cfg.stream)
print(stream_statistics(stream))

T2 = 264.0        # sideband coherence time from the spectral fit (see spectrum_and_filter.py)
BIN, WINDOW = 100.0, 60000.0
red, central = channel_select(stream, "R"), channel_select(stream, "C")
hists = {
    "central": histogram_g2(central, None, BIN, WINDOW, seed=1),
    "sideband": histogram_g2(red, None, BIN, WINDOW, seed=2),
}
for mode in ("orthogonal", "parallel"):
    hists[mode] = hom_simulate(red, cfg.hom.with_mode(mode), T2, seed=3, bin_width=BIN,
                               window=WINDOW)
for name, h in hists.items():
    print(f"  {name:10s} g2(0) = {h.g2[h.tau.size // 2]:.3f} ± {h.g2_err[h.tau.size // 2]:.3f}")

irf = cfg.correlation_irf
print(f"fitting with a Gaussian IRF of {irf:.0f} ps FWHM")
chain = chained_fit(hists["central"], hists["sideband"], hists["orthogonal"], hists["parallel"],
                    cfg.hom, T2, irf)
c, s = chain.central, chain.sideband
print(f"central:  b = {c['b']:.3f} ± {c.sigma('b'):.3f}, "
      f"tau_bunch = {c['tau_bunch']:.0f} ± {c.sigma('tau_bunch'):.0f} ps")
print(f"sideband: g0 = {s['g0']:.3f} ± {s.sigma('g0'):.3f}, "
      f"tau_r = {s['tau_r']:.0f} ± {s.sigma('tau_r'):.0f} ps  (expected 2·T1 = {2 * cfg.emitter.t1:.0f})")
for name, f in (("HOM ⊥", chain.hom_perp), ("HOM ∥", chain.hom_par)):
    print(f"{name}: g(0) deconvolved {f.extras['g0_deconv']:.3f}, convolved {f.extras['g0_conv']:.3f}")
v = chain.visibility
print(f"visibility: deconvolved {v.v_deconv:.3f} ± {v.sigma_deconv:.3f}, "
      f"convolved {v.v_conv:.3f} ± {v.sigma_conv:.3f}")
