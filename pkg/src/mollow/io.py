"""Plain-text and binary file formats.

Floats are written with ``%.17g`` so every file reads back bit-identically.
"""
from __future__ import annotations

import csv
import json
import struct
from pathlib import Path

import numpy as np

from .correlation import CorrelationHistogram
from .emitter import SpectralDensity
from .fitting import FitResult
from .photon_stream import CHANNEL_CODES, PhotonStream

STREAM_MAGIC = b"MLWS1"
_RECORD = np.dtype([("t", "<f8"), ("ch", "u1"), ("det", "<f8")])


class FormatError(ValueError):
    pass


def _fmt(x) -> str:
    return "%.17g" % x


def _write_rows(path, header, columns):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in zip(*columns):
            fh.write(",".join(row) + "\n")
    return path


def _read_table(path, header):
    with open(path, newline="") as fh:
        reader = csv.reader(line for line in fh if not line.startswith("#"))
        try:
            got = next(reader)
        except StopIteration:
            raise FormatError(f"{path}: empty file") from None
        got = [h.strip() for h in got]
        if got[: len(header)] != list(header):
            raise FormatError(f"{path}: expected header {','.join(header)}, got {','.join(got)}")
        rows = [r for r in reader if r]
    return [[r[i] for r in rows] for i in range(len(header))]


def _floats(col, path):
    try:
        return np.array([float(x) for x in col], dtype=float)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None


def _sidecar(path) -> Path:
    return Path(path).with_suffix(".json")


# --- spectra -------------------------------------------------------------------------

def write_spectrum(path, spectrum: SpectralDensity) -> Path:
    out = _write_rows(path, ("energy_uev", "intensity"),
                      (map(_fmt, spectrum.grid), map(_fmt, spectrum.intensity)))
    _sidecar(out).write_text(json.dumps({"elastic_weight": float(spectrum.elastic_weight)}) + "\n")
    return out


def read_spectrum(path) -> SpectralDensity:
    e, i = _read_table(path, ("energy_uev", "intensity"))
    side = _sidecar(path)
    elastic = json.loads(side.read_text()).get("elastic_weight", 0.0) if side.exists() else 0.0
    return SpectralDensity.from_arrays(_floats(e, path), _floats(i, path), float(elastic))


# --- photon streams ------------------------------------------------------------------

def write_stream_csv(path, stream: PhotonStream) -> Path:
    labels = [CHANNEL_CODES[c] for c in stream.channel]
    out = _write_rows(path, ("t_ps", "channel", "detected_t_ps"),
                      (map(_fmt, stream.time), labels, map(_fmt, stream.detected_time)))
    _sidecar(out).write_text(json.dumps({"duration_ps": float(stream.duration)}) + "\n")
    return out


def read_stream_csv(path, duration: float | None = None) -> PhotonStream:
    t, ch, det = _read_table(path, ("t_ps", "channel", "detected_t_ps"))
    try:
        codes = np.array([CHANNEL_CODES.index(c.strip().upper()) for c in ch], np.uint8)
    except ValueError:
        raise FormatError(f"{path}: channel must be one of R, C, B") from None
    t = _floats(t, path)
    if duration is None:
        side = _sidecar(path)
        if side.exists():
            duration = json.loads(side.read_text())["duration_ps"]
        else:
            duration = float(t.max()) if t.size else 0.0
    return PhotonStream(t, codes, _floats(det, path), float(duration), {"source": str(path)})


def write_stream_binary(path, stream: PhotonStream) -> Path:
    """``MLWS1`` magic, float64 duration, uint64 count, then packed records."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rec = np.empty(len(stream), _RECORD)
    rec["t"], rec["ch"], rec["det"] = stream.time, stream.channel, stream.detected_time
    with open(path, "wb") as fh:
        fh.write(STREAM_MAGIC)
        fh.write(struct.pack("<dQ", stream.duration, len(stream)))
        fh.write(rec.tobytes())
    return path


def read_stream_binary(path) -> PhotonStream:
    raw = Path(path).read_bytes()
    if raw[:5] != STREAM_MAGIC:
        raise FormatError(f"{path}: missing MLWS1 magic")
    duration, n = struct.unpack_from("<dQ", raw, 5)
    body = raw[5 + 16:]
    if len(body) != n * _RECORD.itemsize:
        raise FormatError(f"{path}: truncated record block")
    rec = np.frombuffer(body, _RECORD)
    return PhotonStream(rec["t"].copy(), rec["ch"].copy(), rec["det"].copy(), duration,
                        {"source": str(path)})


def write_stream(path, stream: PhotonStream) -> Path:
    if str(path).endswith(".bin"):
        return write_stream_binary(path, stream)
    return write_stream_csv(path, stream)


def read_stream(path) -> PhotonStream:
    with open(path, "rb") as fh:
        magic = fh.read(5)
    return read_stream_binary(path) if magic == STREAM_MAGIC else read_stream_csv(path)


# --- correlation histograms -----------------------------------------------------------

def write_histogram(path, hist: CorrelationHistogram) -> Path:
    out = _write_rows(path, ("tau_ps", "counts", "g2", "g2_err"),
                      (map(_fmt, hist.tau), map(_fmt, hist.counts), map(_fmt, hist.g2),
                       map(_fmt, hist.g2_err)))
    meta = {k: v for k, v in hist.meta.items() if isinstance(v, (int, float, str))}
    _sidecar(out).write_text(json.dumps({"bin_width_ps": hist.bin_width, "meta": meta,
                                         "norm_basis": [float(x) for x in hist.norm_basis]},
                                        sort_keys=True) + "\n")
    return out


def read_histogram(path) -> CorrelationHistogram:
    """Read a histogram CSV.

    Files written here keep the exact baseline in the JSON sidecar.
    Externally produced files only need the four columns; bins with zero
    counts then get their baseline interpolated from the neighbours.
    """
    tau, counts, g2, _ = _read_table(path, ("tau_ps", "counts", "g2", "g2_err"))
    tau, counts, g2 = _floats(tau, path), _floats(counts, path), _floats(g2, path)
    if tau.size < 2:
        raise FormatError(f"{path}: need at least two bins")
    side = _sidecar(path)
    info = json.loads(side.read_text()) if side.exists() else {}
    bin_width = float(info.get("bin_width_ps", np.median(np.diff(tau))))
    meta = info.get("meta", {})
    if "norm_basis" in info:
        norm = np.array(info["norm_basis"], float)
        if norm.size != tau.size:
            raise FormatError(f"{path}: sidecar baseline has {norm.size} bins, table {tau.size}")
        return CorrelationHistogram(tau, counts, norm, bin_width, meta)
    ok = (counts > 0) & (g2 > 0)
    if not ok.any():
        raise FormatError(f"{path}: no bins with counts")
    norm = np.empty_like(counts)
    norm[ok] = counts[ok] / g2[ok]
    norm[~ok] = np.interp(tau[~ok], tau[ok], norm[ok])
    return CorrelationHistogram(tau, counts, norm, bin_width, meta)


def write_model_curve(path, tau, g2_model) -> Path:
    return _write_rows(path, ("tau_ps", "g2_model"), (map(_fmt, tau), map(_fmt, g2_model)))


def read_model_curve(path):
    tau, g = _read_table(path, ("tau_ps", "g2_model"))
    return _floats(tau, path), _floats(g, path)


# --- fit results ---------------------------------------------------------------------

def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def fit_to_dict(fit: FitResult) -> dict:
    return {
        "model": fit.model,
        "names": list(fit.names),
        "values": [float(v) for v in fit.values],
        "sigmas": [float(s) for s in fit.sigmas],
        "free": list(fit.free),
        "chi2_reduced": float(fit.chi2_reduced),
        "converged": bool(fit.converged),
        "iterations": int(fit.iterations),
        "extras": _jsonable(fit.extras),
    }


def fit_from_dict(data: dict) -> FitResult:
    return FitResult(tuple(data["names"]), np.array(data["values"], float),
                     np.array(data["sigmas"], float), float(data["chi2_reduced"]),
                     bool(data["converged"]), int(data["iterations"]),
                     tuple(data.get("free", data["names"])), None, data.get("model", ""),
                     dict(data.get("extras", {})))


def write_fit(path, fit: FitResult, curves: dict | None = None) -> Path:
    """FitResult as JSON plus one ``tau_ps,g2_model`` CSV per named curve.

    ``curves`` maps a suffix (e.g. ``"convolved"``) to ``(tau, values)``.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = fit_to_dict(fit)
    files = {}
    for name, (tau, values) in (curves or {}).items():
        side = path.with_name(f"{path.stem}_{name}.csv")
        write_model_curve(side, tau, values)
        files[name] = side.name
    data["curves"] = files
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
    return path


def read_fit(path) -> FitResult:
    return fit_from_dict(json.loads(Path(path).read_text()))


def write_json(path, data) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_jsonable(data), indent=2, sort_keys=True) + "\n")
    return path
