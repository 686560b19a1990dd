"""Monte-Carlo photon time tags from the dressed-state cascade with blinking.

While the emitter is bright the dressed label σ ∈ {+, −} evolves as a
two-state Markov chain: σ=+ emits a red photon and drops to σ=− at rate
γc⁴, σ=− emits a blue photon and returns to σ=+ at rate γs⁴, and both
emit central photons at rate γc²s² without changing σ.  Because the central
rate is the same in both dressed states, central photons form a Poisson
process independent of σ, and the sideband photons are exactly the σ flips.
A dark period freezes everything.  The generator therefore draws the
dressed dynamics on an accumulated bright-time axis and maps it back onto
real time through the blink intervals, which keeps it fully vectorized.
"""
from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .emitter import EmitterParams, dressed_coefficients

RED, CENTRAL, BLUE = 0, 1, 2
CHANNEL_CODES = "RCB"
_CHANNEL_NAMES = {"r": RED, "red": RED, "c": CENTRAL, "central": CENTRAL,
                  "b": BLUE, "blue": BLUE}

FWHM_TO_SIGMA = 1.0 / (2.0 * math.sqrt(2.0 * math.log(2.0)))


class StreamSizeError(RuntimeError):
    """Expected number of events exceeds the configured cap."""


def channel_index(channel) -> int:
    if isinstance(channel, (int, np.integer)):
        if channel not in (RED, CENTRAL, BLUE):
            raise ValueError(f"unknown channel {channel}")
        return int(channel)
    try:
        return _CHANNEL_NAMES[str(channel).lower()]
    except KeyError:
        raise ValueError(f"unknown channel {channel!r}") from None


@dataclass(frozen=True)
class StreamConfig:
    """Run settings for the generator.

    ``chunk_duration`` splits the run into independently seeded pieces
    (seed of chunk ``k`` is ``SeedSequence(seed, spawn_key=(k,))``), so the
    output depends on the chunking but never on ``workers``.
    """

    duration: float
    seed: int = 0
    detector_jitter_fwhm: float = 0.0
    detector_efficiency: float = 1.0
    max_events: int = 100_000_000
    chunk_duration: float | None = None
    workers: int = 1

    def __post_init__(self):
        if not self.duration > 0:
            raise ValueError("duration must be > 0")
        if not 0.0 <= self.detector_efficiency <= 1.0:
            raise ValueError("detector_efficiency must lie in [0, 1]")
        if self.detector_jitter_fwhm < 0:
            raise ValueError("detector_jitter_fwhm must be >= 0")
        if self.chunk_duration is not None and not self.chunk_duration > 0:
            raise ValueError("chunk_duration must be > 0")


@dataclass(frozen=True)
class PhotonStream:
    """Time-ordered photon records; ``channel`` holds RED/CENTRAL/BLUE codes."""

    time: np.ndarray
    channel: np.ndarray
    detected_time: np.ndarray
    duration: float
    meta: dict = field(default_factory=dict, compare=False)

    def __len__(self) -> int:
        return self.time.size

    @classmethod
    def empty(cls, duration: float) -> "PhotonStream":
        return cls(np.empty(0), np.empty(0, np.uint8), np.empty(0), duration)

    def take(self, mask_or_index) -> "PhotonStream":
        return PhotonStream(self.time[mask_or_index], self.channel[mask_or_index],
                            self.detected_time[mask_or_index], self.duration, dict(self.meta))

    def counts(self) -> dict[str, int]:
        n = np.bincount(self.channel, minlength=3)
        return {code: int(n[i]) for i, code in enumerate(CHANNEL_CODES)}


@dataclass(frozen=True)
class CascadeRates:
    central: float  # per dressed state, 1/ps
    red: float  # σ=+ → σ=−
    blue: float  # σ=− → σ=+
    p_plus: float  # stationary probability of σ=+
    bright_fraction: float

    @property
    def mean_rates(self) -> dict[str, float]:
        """Long-run photon rate of each channel (1/ps), blinking included."""
        flips = self.p_plus * self.red
        return {"R": flips * self.bright_fraction,
                "C": self.central * self.bright_fraction,
                "B": flips * self.bright_fraction}

    @property
    def total_rate(self) -> float:
        return sum(self.mean_rates.values())


def blink_rates(tau_bunch: float, amplitude: float) -> tuple[float, float]:
    """(off, on) switching rates giving g² = 1 + amplitude·exp(-|τ|/tau_bunch)."""
    if not tau_bunch > 0 or amplitude < 0:
        raise ValueError("tau_bunch must be > 0 and amplitude >= 0")
    return amplitude / ((1 + amplitude) * tau_bunch), 1.0 / ((1 + amplitude) * tau_bunch)


def cascade_rates(params: EmitterParams) -> CascadeRates:
    ds = dressed_coefficients(params.rabi, params.detuning)
    gamma = 1.0 / params.t1
    c2, s2 = ds.c**2, ds.s**2
    red, blue = gamma * c2**2, gamma * s2**2
    p_plus = blue / (red + blue) if red + blue > 0 else 0.5
    r_off, r_on = params.blink_off_rate, params.blink_on_rate
    bright = 1.0 if r_off == 0 else r_on / (r_off + r_on)
    return CascadeRates(gamma * c2 * s2, red, blue, p_plus, bright)


def _exp_arrivals(rng, rate: float, horizon: float) -> np.ndarray:
    """Poisson arrival times in [0, horizon) from cumulated exponentials."""
    if rate <= 0 or horizon <= 0:
        return np.empty(0)
    mean = rate * horizon
    parts, t = [], 0.0
    while True:
        n = int(mean + 6 * math.sqrt(mean) + 16)
        arr = t + np.cumsum(rng.exponential(1.0 / rate, n))
        parts.append(arr)
        t = arr[-1]
        if t >= horizon:
            break
    out = np.concatenate(parts)
    return out[: np.searchsorted(out, horizon)]


def _alternating_arrivals(rng, rate_first: float, rate_second: float, horizon: float):
    """Switching times of a two-state chain started in the first state."""
    mean_cycle = 0.0
    for r in (rate_first, rate_second):
        mean_cycle += 1.0 / r if r > 0 else math.inf
    if not math.isfinite(mean_cycle):
        # one of the states is absorbing; at most one switch happens
        if rate_first <= 0:
            return np.empty(0)
        t = rng.exponential(1.0 / rate_first)
        return np.array([t]) if t < horizon else np.empty(0)
    parts, t = [], 0.0
    while True:
        n = int(horizon / mean_cycle * 1.1 + 6 * math.sqrt(horizon / mean_cycle) + 8)
        d = np.empty(2 * n)
        d[0::2] = rng.exponential(1.0 / rate_first, n)
        d[1::2] = rng.exponential(1.0 / rate_second, n)
        arr = t + np.cumsum(d)
        parts.append(arr)
        t = arr[-1]
        if t >= horizon:
            break
    out = np.concatenate(parts)
    return out[: np.searchsorted(out, horizon)]


def _bright_intervals(rng, rates: CascadeRates, r_off: float, r_on: float, horizon: float):
    if r_off == 0:
        return np.array([0.0]), np.array([horizon])
    bright0 = rng.random() < rates.bright_fraction
    first, second = (r_off, r_on) if bright0 else (r_on, r_off)
    switches = np.concatenate([[0.0], _alternating_arrivals(rng, first, second, horizon), [horizon]])
    starts, stops = switches[:-1], switches[1:]
    keep = slice(0, None, 2) if bright0 else slice(1, None, 2)
    return starts[keep], stops[keep]


def _simulate_chunk(params: EmitterParams, rates: CascadeRates, horizon: float,
                    t0: float, seed: int, index: int, config: StreamConfig):
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index,)))
    starts, stops = _bright_intervals(rng, rates, params.blink_off_rate,
                                      params.blink_on_rate, horizon)
    lengths = stops - starts
    cum = np.concatenate([[0.0], np.cumsum(lengths)])
    bright_total = cum[-1]

    central = _exp_arrivals(rng, rates.central, bright_total)
    plus0 = rng.random() < rates.p_plus
    first, second = (rates.red, rates.blue) if plus0 else (rates.blue, rates.red)
    flips = _alternating_arrivals(rng, first, second, bright_total)
    flip_labels = np.empty(flips.size, np.uint8)
    flip_labels[0::2] = RED if plus0 else BLUE
    flip_labels[1::2] = BLUE if plus0 else RED
    # cascade rule: sideband labels strictly alternate
    assert flip_labels.size < 2 or np.all(flip_labels[1:] != flip_labels[:-1])

    u = np.concatenate([central, flips])
    labels = np.concatenate([np.full(central.size, CENTRAL, np.uint8), flip_labels])
    order = np.argsort(u, kind="stable")
    u, labels = u[order], labels[order]
    seg = np.searchsorted(cum, u, side="right") - 1
    t = starts[seg] + (u - cum[seg]) + t0

    if config.detector_efficiency < 1.0:
        keep = rng.random(t.size) < config.detector_efficiency
        t, labels = t[keep], labels[keep]
    if config.detector_jitter_fwhm > 0:
        detected = t + rng.normal(0.0, config.detector_jitter_fwhm * FWHM_TO_SIGMA, t.size)
    else:
        detected = t.copy()
    return t, labels, detected


def simulate_dressed_cascade(params: EmitterParams, config: StreamConfig) -> PhotonStream:
    """Labelled photon stream of duration ``config.duration`` (ps)."""
    rates = cascade_rates(params)
    expected = rates.total_rate * config.duration
    if expected > config.max_events:
        raise StreamSizeError(
            f"expected {expected:.3g} events exceeds cap {config.max_events:.3g}")
    if rates.total_rate == 0 or (params.blink_on_rate == 0 and params.blink_off_rate > 0):
        warnings.warn("emitter never emits; returning an empty stream", RuntimeWarning,
                      stacklevel=2)
        return PhotonStream.empty(config.duration)

    chunk = config.chunk_duration or config.duration
    n_chunks = int(math.ceil(config.duration / chunk - 1e-12))
    jobs = [(min(chunk, config.duration - k * chunk), k * chunk, k) for k in range(n_chunks)]

    def run(job):
        horizon, t0, k = job
        return _simulate_chunk(params, rates, horizon, t0, config.seed, k, config)

    if config.workers > 1 and n_chunks > 1:
        with ThreadPoolExecutor(config.workers) as pool:
            results = list(pool.map(run, jobs))
    else:
        results = [run(job) for job in jobs]
    t = np.concatenate([r[0] for r in results])
    ch = np.concatenate([r[1] for r in results])
    det = np.concatenate([r[2] for r in results])
    return PhotonStream(t, ch, det, float(config.duration),
                        {"seed": config.seed, "chunks": n_chunks})


def channel_select(stream: PhotonStream, channel) -> PhotonStream:
    return stream.take(stream.channel == channel_index(channel))


def merge_streams(*streams: PhotonStream, duration: float | None = None) -> PhotonStream:
    """Time-ordered union of streams sharing one time axis."""
    if not streams:
        raise ValueError("nothing to merge")
    t = np.concatenate([s.time for s in streams])
    order = np.argsort(t, kind="stable")
    return PhotonStream(
        t[order],
        np.concatenate([s.channel for s in streams])[order],
        np.concatenate([s.detected_time for s in streams])[order],
        duration if duration is not None else max(s.duration for s in streams),
    )


def concatenate_streams(*streams: PhotonStream) -> PhotonStream:
    """Place streams back to back in time, each shifted by the preceding durations."""
    shift, parts = 0.0, []
    for s in streams:
        parts.append(PhotonStream(s.time + shift, s.channel, s.detected_time + shift, s.duration))
        shift += s.duration
    return merge_streams(*parts, duration=shift)


@dataclass(frozen=True)
class StreamSummary:
    count: int
    rate: float
    fano: float
    bin_width: float


def stream_statistics(stream: PhotonStream, bin_width: float | None = None,
                      detected: bool = False) -> StreamSummary:
    """Count, mean rate and Fano factor of counts in bins of ``bin_width`` ps."""
    n = len(stream)
    if n == 0:
        return StreamSummary(0, 0.0, float("nan"), bin_width or stream.duration)
    if bin_width is None:
        bin_width = stream.duration / 1000
    n_bins = int(stream.duration // bin_width)
    if n_bins < 2:
        raise ValueError("bin_width leaves fewer than two complete bins")
    t = stream.detected_time if detected else stream.time
    idx = np.floor(t / bin_width).astype(np.int64)
    counts = np.bincount(idx[(idx >= 0) & (idx < n_bins)], minlength=n_bins)[:n_bins]
    mean = counts.mean()
    fano = counts.var(ddof=1) / mean if mean > 0 else float("nan")
    return StreamSummary(n, n / stream.duration, float(fano), float(bin_width))
