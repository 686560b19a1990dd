"""Command-line entry point: ``mollow <command> [options]``.

Exit codes: 0 success, 2 invalid input or configuration, 3 numerical
failure, 4 reproduction checks failed.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import io
from .correlation import ResolutionError, histogram_g2, hom_simulate
from .fitting import FitError, chained_fit, fit_g2
from .interferometry import double_michelson_filter, fabry_perot_scan
from .emitter import emission_spectrum, sideband_fwhm_eid, t2_from_fwhm
from .photon_stream import StreamSizeError, channel_select, simulate_dressed_cascade
from .pipeline import PipelineConfig, derived_seed, fit_curves, load_config, reproduce, spectra

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC, EXIT_ACCEPTANCE = 0, 2, 3, 4


def _overrides(args) -> dict:
    out = {}
    for item in args.set or []:
        key, sep, val = item.partition("=")
        if not sep:
            raise ValueError(f"--set expects key=value, got {item!r}")
        out[key] = val
    if args.seed is not None:
        out["stream.seed"] = args.seed
    return out


def _config(args, extra: dict | None = None) -> PipelineConfig:
    return load_config(args.config, {**_overrides(args), **(extra or {})}, args.out)


def _sideband_t2(cfg: PipelineConfig) -> float:
    """Coherence time for the HOM traces: configured, else the sideband line width."""
    return cfg.raw["hom"]["coherence_ps"] or t2_from_fwhm(sideband_fwhm_eid(cfg.emitter))


def _plot(path: Path, curves: list, xlabel: str, ylabel: str):
    """Single SVG line chart; ``curves`` holds (x, y, label) triples."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "mollow"  # stable element ids
    fig, ax = plt.subplots(figsize=(6, 4))
    for x, y, label in curves:
        ax.plot(x, y, lw=1, label=label)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if len(curves) > 1:
        ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def _tag(x: float) -> str:
    return f"{x:g}".replace("-", "m")


# --- commands --------------------------------------------------------------------------

def cmd_spectrum(args) -> int:
    base = _config(args)
    out = base.output_dir
    rabis = args.rabi or [base.emitter.rabi]
    for rabi in rabis:
        cfg = _config(args, {"emitter.rabi": rabi})
        raw, filt, scan = spectra(cfg)
        tag = _tag(rabi)
        io.write_spectrum(out / f"spectrum_raw_{tag}.csv", raw)
        io.write_spectrum(out / f"spectrum_filtered_{tag}.csv", filt)
        io.write_spectrum(out / f"spectrum_fp_{tag}.csv", scan)
        if args.plot:
            _plot(out / f"spectrum_{tag}.svg",
                  [(raw.grid, raw.intensity, "raw"), (filt.grid, filt.intensity, "filtered"),
                   (scan.grid, scan.intensity, "FP scan")], "energy offset (μeV)", "intensity")
    print(f"wrote {3 * len(rabis)} spectra to {out}")
    return EXIT_OK


def cmd_filter(args) -> int:
    cfg = _config(args)
    out = cfg.output_dir
    s1, s2 = cfg.filter
    io.write_json(out / "filter_settings.json", {"stage1": s1.to_dict(), "stage2": s2.to_dict()})
    spec = io.read_spectrum(args.input) if args.input else emission_spectrum(cfg.emitter, cfg.spectrum_grid)
    filt = double_michelson_filter(spec, s1, s2, cfg.center_energy)
    io.write_spectrum(out / "spectrum_filtered.csv", filt)
    if args.plot:
        _plot(out / "spectrum_filtered.svg", [(spec.grid, spec.intensity, "input"),
                                              (filt.grid, filt.intensity, "filtered")],
              "energy offset (μeV)", "intensity")
    print(f"stage 1 d = {s1.d_mm:.6g} mm, stage 2 d = {s2.d_mm:.6g} mm")
    return EXIT_OK


def cmd_scan_fp(args) -> int:
    cfg = _config(args)
    out = cfg.output_dir
    spec = io.read_spectrum(args.input) if args.input else emission_spectrum(cfg.emitter, cfg.spectrum_grid)
    scan = fabry_perot_scan(spec, cfg.fabry_perot, cfg.fp_window)
    io.write_json(out / "fp_settings.json", cfg.fabry_perot.to_dict())
    io.write_spectrum(out / "spectrum_fp.csv", scan)
    if args.plot:
        _plot(out / "spectrum_fp.svg", [(scan.grid, scan.intensity, "FP scan")],
              "scan offset (μeV)", "intensity")
    return EXIT_OK


def _simulate(cfg: PipelineConfig):
    return simulate_dressed_cascade(cfg.emitter, cfg.stream)


def cmd_stream(args) -> int:
    cfg = _config(args)
    stream = _simulate(cfg)
    path = cfg.output_dir / ("stream.bin" if args.binary else "stream.csv")
    io.write_stream(path, stream)
    print(f"{len(stream)} photons {stream.counts()} -> {path}")
    return EXIT_OK


def _hist_args(cfg):
    c = cfg.raw["correlation"]
    return float(c["bin_width_ps"]), float(c["window_ps"]), c["channel"]


def cmd_g2(args) -> int:
    cfg = _config(args)
    bw, win, channel = _hist_args(cfg)
    channel = args.channel or channel
    stream = io.read_stream(args.input) if args.input else _simulate(cfg)
    sel = channel_select(stream, channel)
    other = channel_select(stream, args.channel_b) if args.channel_b else None
    hist = histogram_g2(sel, other, bw, win, seed=derived_seed(cfg.stream.seed, 1))
    path = cfg.output_dir / f"g2_{channel}{args.channel_b or ''}.csv"
    io.write_histogram(path, hist)
    if args.plot:
        _plot(path.with_suffix(".svg"), [(hist.tau, hist.g2, "g2")], "τ (ps)", "g²(τ)")
    print(f"g2(0) = {hist.value_at(0.0):.4g} -> {path}")
    return EXIT_OK


def cmd_hom(args) -> int:
    cfg = _config(args)
    bw, win, channel = _hist_args(cfg)
    channel = args.channel or channel
    stream = io.read_stream(args.input) if args.input else _simulate(cfg)
    sel = channel_select(stream, channel)
    coherence = _sideband_t2(cfg)
    modes = [args.mode] if args.mode else ["orthogonal", "parallel"]
    curves = []
    for mode in modes:
        # one routing seed for both modes: the traces share photons and normalization
        hist = hom_simulate(sel, cfg.hom.with_mode(mode), coherence,
                            seed=derived_seed(cfg.stream.seed, 3), bin_width=bw, window=win)
        name = "hom_perp" if mode == "orthogonal" else "hom_par"
        io.write_histogram(cfg.output_dir / f"{name}.csv", hist)
        curves.append((hist.tau, hist.g2, mode))
        print(f"{mode}: g2(0) = {hist.value_at(0.0):.4g}")
    if args.plot:
        _plot(cfg.output_dir / "hom.svg", curves, "τ (ps)", "g²(τ)")
    return EXIT_OK


def _fixed(items) -> dict:
    fixed = {}
    for item in items or []:
        key, sep, val = item.partition("=")
        if not sep:
            raise ValueError(f"--fix expects name=value, got {item!r}")
        fixed[key] = float(val)
    return fixed


def cmd_fit(args) -> int:
    cfg = _config(args)
    out = cfg.output_dir
    irf = args.irf if args.irf is not None else cfg.correlation_irf
    setup = cfg.hom
    if args.chain:
        if len(args.inputs) != 4:
            raise ValueError("--chain needs four histograms: central sideband hom_perp hom_par")
        hists = [io.read_histogram(p) for p in args.inputs]
        t2 = args.t2 if args.t2 is not None else _sideband_t2(cfg)
        chain = chained_fit(*hists, setup, t2, irf)
        for name, fit, h in zip(("central", "sideband", "hom_perp", "hom_par"),
                                (chain.central, chain.sideband, chain.hom_perp, chain.hom_par),
                                hists):
            io.write_fit(out / f"fit_{name}.json", fit, fit_curves(fit, h, setup))
        vis = chain.visibility
        bundle = {"tau_bunch_ps": chain.central["tau_bunch"], "b": chain.central["b"],
                  "tau_r_ps": chain.sideband["tau_r"], "t2_ps_fixed": t2,
                  "v": chain.hom_par["v"], "v_deconv": vis.v_deconv, "v_conv": vis.v_conv,
                  "v_deconv_sigma": vis.sigma_deconv, "v_conv_sigma": vis.sigma_conv}
        io.write_json(out / "fit_chain.json", bundle)
        print(json.dumps(bundle, indent=2))
        return EXIT_OK if all(f.converged for f in (chain.central, chain.sideband,
                                                    chain.hom_perp, chain.hom_par)) else EXIT_NUMERIC
    if len(args.inputs) != 1:
        raise ValueError("fit takes one histogram unless --chain is given")
    hist = io.read_histogram(args.inputs[0])
    s = setup.with_mode(args.mode) if args.mode else setup
    fit = fit_g2(hist, args.model, irf, _fixed(args.fix), s if args.model == "hom" else None)
    stem = Path(args.inputs[0]).stem
    io.write_fit(out / f"fit_{stem}.json", fit, fit_curves(fit, hist, s))
    print(fit.summary())
    print(f"g2(0) deconvolved = {fit.extras['g0_deconv']:.4g}, convolved = {fit.extras['g0_conv']:.4g}")
    return EXIT_OK if fit.converged else EXIT_NUMERIC


def cmd_reproduce(args) -> int:
    cfg = _config(args)
    report = reproduce(cfg, tuple(args.sets))
    print(report.table())
    if args.plot:
        for o in report.outcomes:
            d = cfg.output_dir / f"set_{o.spec.name}"
            for key, fit in (("sideband", o.chain.sideband), ("hom_perp", o.chain.hom_perp),
                             ("hom_par", o.chain.hom_par)):
                h = o.histograms[key]
                c = fit_curves(fit, h, cfg.hom)
                _plot(d / f"g2_{key}.svg", [(h.tau, h.g2, "simulated"),
                                            (*c["convolved"], "fit (convolved)"),
                                            (*c["deconvolved"], "fit (deconvolved)")],
                      "τ (ps)", "g²(τ)")
    return EXIT_OK if report.passed else EXIT_ACCEPTANCE


# --- parser ----------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON configuration file")
    common.add_argument("--seed", type=int, help="master seed (overrides stream.seed)")
    common.add_argument("--out", type=Path,
                        help="output directory (default: config output_dir, $MOLLOW_OUT, ./mollow_out)")
    common.add_argument("--plot", action="store_true", help="also write SVG plots")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a config key, e.g. emitter.rabi=53.8")

    p = argparse.ArgumentParser(prog="mollow", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("spectrum", parents=[common], help="raw, filtered and FP-scanned spectra")
    s.add_argument("--rabi", type=float, nargs="+", help="one or more Rabi energies (μeV)")
    s.set_defaults(func=cmd_spectrum)

    s = sub.add_parser("filter", parents=[common], help="double-Michelson sideband filter")
    s.add_argument("--input", type=Path, help="spectrum CSV (default: simulate from config)")
    s.set_defaults(func=cmd_filter)

    s = sub.add_parser("scan-fp", parents=[common], help="scanning Fabry-Pérot record")
    s.add_argument("--input", type=Path, help="spectrum CSV (default: simulate from config)")
    s.set_defaults(func=cmd_scan_fp)

    s = sub.add_parser("stream", parents=[common], help="simulate a labelled photon stream")
    s.add_argument("--binary", action="store_true", help="write the MLWS1 binary format")
    s.set_defaults(func=cmd_stream)

    s = sub.add_parser("g2", parents=[common], help="auto/cross-correlation histogram")
    s.add_argument("--input", type=Path, help="stream file (default: simulate from config)")
    s.add_argument("--channel", choices=list("RCB"))
    s.add_argument("--channel-b", choices=list("RCB"), help="cross-correlate with this channel")
    s.set_defaults(func=cmd_g2)

    s = sub.add_parser("hom", parents=[common], help="Hong-Ou-Mandel histograms")
    s.add_argument("--input", type=Path, help="stream file (default: simulate from config)")
    s.add_argument("--channel", choices=list("RCB"))
    s.add_argument("--mode", choices=["orthogonal", "parallel"], help="default: both")
    s.set_defaults(func=cmd_hom)

    s = sub.add_parser("fit", parents=[common], help="fit correlation histograms")
    s.add_argument("inputs", nargs="+", type=Path, help="histogram CSV(s)")
    s.add_argument("--model", choices=["central", "sideband", "hom"], default="sideband")
    s.add_argument("--irf", type=float, help="IRF FWHM in ps (default: √2·detector jitter)")
    s.add_argument("--fix", action="append", metavar="NAME=VALUE",
                   help="freeze a parameter (g0, tau_r, b, tau_bunch, t2, v)")
    s.add_argument("--mode", choices=["orthogonal", "parallel"])
    s.add_argument("--chain", action="store_true",
                   help="chained fit of central, sideband, hom_perp, hom_par histograms")
    s.add_argument("--t2", type=float, help="coherence time fixed in the HOM fits (ps)")
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("reproduce", parents=[common], help="run data sets I-III end to end")
    s.add_argument("--sets", nargs="+", default=["I", "II", "III"], choices=["I", "II", "III"])
    s.set_defaults(func=cmd_reproduce)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (FitError, ResolutionError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, KeyError, TypeError, OSError, StreamSizeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
