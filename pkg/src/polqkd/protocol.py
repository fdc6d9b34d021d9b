"""Alice and Bob, threshold classification, raw keys and QBER estimation.

A single measurement basis is used, so there is no sifting: every gated
sample that is not an erasure yields a key bit.  Bit convention is
H <-> 0 and V <-> 1.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from polqkd.devices import (
    OPEN,
    ChannelSpec,
    DetectorSpec,
    DriftWalk,
    ModulatorSpec,
    OpticalPulse,
    expected_h_rate,
    pm_apply,
)
from polqkd.errors import InvalidParameter, UndefinedQBER
from polqkd.optics import PolarizationPhase
from polqkd.timing import (
    PS_PER_S,
    Channel,
    ClockSpec,
    CountSample,
    VoltageSchedule,
    bin_counts,
    channel_timestamps,
    events_from_counts,
    fpga_schedule,
    gate_by_mcss,
    make_stream,
    mcss_edges,
    merge_streams,
    sample_offset_ps,
    seconds_to_ps,
)


class Decision(enum.IntEnum):
    H = 0
    V = 1
    ERASURE = 2


@dataclass(frozen=True)
class ClassifierThresholds:
    """Count thresholds per gated bin: below ``t_signal`` is an erasure,
    at or above ``t_hv`` is H, in between is V."""

    t_signal: int
    t_hv: int

    def __post_init__(self):
        if not self.t_signal < self.t_hv:
            raise InvalidParameter(
                f"thresholds must satisfy t_signal < t_hv, got {self.t_signal} >= {self.t_hv}"
            )


@dataclass(frozen=True)
class ClassifiedBit:
    cycle_index: int
    decision: Decision
    raw_count: Optional[int]

    @property
    def bit(self) -> Optional[int]:
        return None if self.decision is Decision.ERASURE else int(self.decision)


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def calibrate_thresholds(detector: DetectorSpec, bin_width_s: float = 0.01) -> ClassifierThresholds:
    """Midpoints between the dark, V and H plateaus, in counts per bin."""
    if not (detector.signal_rate_h > detector.leak_rate_v > detector.dark_rate >= 0):
        raise InvalidParameter("detector plateaus must be strictly ordered H > V > dark")
    dark = detector.dark_rate * bin_width_s
    v = detector.leak_rate_v * bin_width_s
    h = detector.signal_rate_h * bin_width_s
    return ClassifierThresholds(_round_half_up((dark + v) / 2), _round_half_up((v + h) / 2))


def classify_count(count: Optional[int], thresholds: ClassifierThresholds) -> Decision:
    if count is None or count < thresholds.t_signal:
        return Decision.ERASURE
    if count >= thresholds.t_hv:
        return Decision.H
    return Decision.V


def classify(sample: Optional[CountSample], thresholds: ClassifierThresholds,
             cycle_index: int = 0) -> ClassifiedBit:
    """Classify one gated sample; ``None`` (no coverage) is an erasure."""
    count = None if sample is None else sample.counts
    return ClassifiedBit(cycle_index, classify_count(count, thresholds), count)


def classify_counts(counts, thresholds: ClassifierThresholds) -> np.ndarray:
    """Vectorised decision codes for an array of counts."""
    counts = np.asarray(counts)
    return np.where(
        counts >= thresholds.t_hv,
        int(Decision.H),
        np.where(counts >= thresholds.t_signal, int(Decision.V), int(Decision.ERASURE)),
    )


@dataclass(frozen=True)
class SessionConfig:
    duration_s: float = 300.0
    clock: ClockSpec = field(default_factory=ClockSpec)
    channel: ChannelSpec = field(default_factory=ChannelSpec)
    detector: DetectorSpec = field(default_factory=DetectorSpec)
    modulator: ModulatorSpec = field(default_factory=ModulatorSpec)
    v_pi: float = 4.0
    thresholds: Optional[ClassifierThresholds] = None
    qber_sample_fraction: float = 0.1
    seed: int = 0
    bin_width_s: float = 0.01
    sample_offset_s: Optional[float] = None
    qber_window_s: float = 30.0

    def __post_init__(self):
        if not self.duration_s > 0 or self.clock.full_cycles(self.duration_s) < 1:
            raise InvalidParameter("duration_s * clock.frequency_hz must be >= 1")
        if not 0 < self.qber_sample_fraction < 1:
            raise InvalidParameter("qber_sample_fraction must be in (0, 1)")
        if not self.v_pi > 0:
            raise InvalidParameter("v_pi must be > 0")
        if not 0 <= self.seed < 2**64:
            raise InvalidParameter("seed must be an unsigned 64-bit integer")
        if not self.bin_width_s > 0:
            raise InvalidParameter("bin_width_s must be > 0")
        if seconds_to_ps(self.bin_width_s) > self.clock.period_ps:
            raise InvalidParameter("bin_width_s must not exceed the clock period")
        if abs(self.modulator.gate_open_fraction - (1.0 - self.clock.duty)) > 1e-12:
            raise InvalidParameter("modulator.gate_open_fraction must equal 1 - clock.duty")
        if self.sample_offset_s is not None and not (
            0 <= self.sample_offset_s < 1.0 / self.clock.frequency_hz
        ):
            raise InvalidParameter("sample_offset_s must lie inside one clock period")
        if not self.qber_window_s > 0:
            raise InvalidParameter("qber_window_s must be > 0")

    @property
    def n_cycles(self) -> int:
        return self.clock.full_cycles(self.duration_s)

    @property
    def offset_ps(self) -> int:
        if self.sample_offset_s is not None:
            return seconds_to_ps(self.sample_offset_s)
        return sample_offset_ps(self.clock.period_ps, self.modulator.gate_open_fraction)

    @property
    def resolved_thresholds(self) -> ClassifierThresholds:
        if self.thresholds is not None:
            return self.thresholds
        return calibrate_thresholds(self.detector, self.bin_width_s)

    def qber_stride(self) -> int:
        return max(1, int(math.floor(1.0 / self.qber_sample_fraction + 1e-9)))

    def revealed_indices(self) -> list:
        """Every ``stride``-th cycle is disclosed for QBER estimation."""
        stride = self.qber_stride()
        return list(range(stride - 1, self.n_cycles, stride))


def _streams(seed: int) -> dict:
    names = ("key", "drift", "detector", "tags")
    children = np.random.SeedSequence(seed).spawn(len(names))
    return {n: np.random.Generator(np.random.PCG64(s)) for n, s in zip(names, children)}


def alice_run(key_bits: Sequence[int], config: SessionConfig):
    """Drive schedule and emitted pulses, one per cycle at the open gate."""
    if len(key_bits) > config.n_cycles:
        raise InvalidParameter(
            f"key of {len(key_bits)} bits does not fit in {config.n_cycles} cycles"
        )
    schedule = fpga_schedule(key_bits, config.v_pi)
    period = 1.0 / config.clock.frequency_hz
    rate = config.detector.signal_rate_h - config.detector.dark_rate
    pulses = [
        pm_apply(OpticalPulse(cycle * period, rate, PolarizationPhase(0.0)), v, config.v_pi)
        for cycle, v in schedule.entries
    ]
    return schedule, pulses


def pulse_rates(pulses: Sequence[OpticalPulse], thetas, config: SessionConfig) -> np.ndarray:
    """Open-gate H-detector rate for every cycle; cycles without a pulse
    see only dark counts."""
    det = config.detector
    rates = np.full(config.n_cycles, det.dark_rate)
    if pulses:
        phis = np.array([p.phi for p in pulses], dtype=float)
        rates[: len(pulses)] = expected_h_rate(
            phis, np.asarray(thetas[: len(pulses)], dtype=float), OPEN, det, config.channel.extra_db
        )
    return rates


def channel_bin_counts(open_rate, config: SessionConfig, rng: np.random.Generator,
                       open_fraction: Optional[float] = None) -> np.ndarray:
    """Simulate the H-detector counts of every TTU bin over the session.

    ``open_rate[k]`` is the count rate while cycle ``k``'s gate is open;
    outside open windows only dark counts arrive.  Each bin's mean is
    integrated exactly over its overlap with the open windows.
    """
    det = config.detector
    edges = mcss_edges(config.duration_s, config.clock)
    n = len(edges) - 1
    width = seconds_to_ps(config.bin_width_s)
    stop = seconds_to_ps(config.duration_s)
    n_bins = -(-stop // width)
    if open_fraction is None:
        open_fraction = config.modulator.gate_open_fraction
    open_rate = np.asarray(open_rate, dtype=float)
    excess = open_rate - det.dark_rate
    open_len = np.rint(np.diff(edges) * open_fraction).astype(np.int64)
    win_start, win_stop = edges[:-1], edges[:-1] + open_len

    b0 = np.arange(n_bins, dtype=np.int64) * width
    b1 = np.minimum(b0 + width, stop)
    mean = det.dark_rate * (b1 - b0) / PS_PER_S
    k0 = np.searchsorted(edges, b0, side="right") - 1
    for k in (k0, k0 + 1):
        valid = (k >= 0) & (k < n)
        kk = np.where(valid, k, 0)
        overlap = np.minimum(b1, win_stop[kk]) - np.maximum(b0, win_start[kk])
        overlap = np.where(valid, np.maximum(overlap, 0), 0)
        mean = mean + excess[kk] * overlap / PS_PER_S
    return rng.poisson(mean)


def bob_run(source, config: SessionConfig, edges_ps=None) -> list:
    """Bin, gate and classify Bob's detections.

    ``source`` is a merged tag stream (structured array with ``channel``
    and ``timestamp_ps``) or an already-binned list of count samples.  The
    cycle grid comes from the stream's MCSS events when present, else from
    the configured clock.
    """
    width = seconds_to_ps(config.bin_width_s)
    stop = seconds_to_ps(config.duration_s)
    if isinstance(source, np.ndarray) and source.dtype.names:
        if edges_ps is None:
            mcss = channel_timestamps(source, Channel.MCSS)
            if mcss.size >= 2:
                edges_ps = mcss
        h = channel_timestamps(source, Channel.H_DETECTOR)
        h = h[h < stop]
        counts = bin_counts(h, width, -(-stop // width))
        samples = [CountSample(i * width, int(c), width) for i, c in enumerate(counts)]
    else:
        samples = list(source)
    if edges_ps is None:
        edges_ps = mcss_edges(config.duration_s, config.clock)
    gated = gate_by_mcss(samples, edges_ps, config.offset_ps)
    th = config.resolved_thresholds
    return [classify(s, th, k) for k, s in enumerate(gated)]


def _is_erasure(b) -> bool:
    return b is None or b == Decision.ERASURE


def qber_counts(alice_bits, bob_bits, revealed_indices) -> tuple:
    """``(errors, compared)`` over the revealed non-erasure positions."""
    errors = compared = 0
    n = len(alice_bits)
    for i in revealed_indices:
        if not 0 <= i < n or i >= len(bob_bits):
            raise InvalidParameter(f"revealed index {i} out of range")
        b = bob_bits[i]
        if _is_erasure(b):
            continue
        compared += 1
        errors += int(alice_bits[i]) != int(b)
    return errors, compared


def estimate_qber(alice_bits, bob_bits, revealed_indices) -> float:
    """Fraction of mismatches among revealed bits; erasures are skipped."""
    errors, compared = qber_counts(alice_bits, bob_bits, revealed_indices)
    if compared == 0:
        raise UndefinedQBER("no non-erasure bits among the revealed indices")
    return errors / compared


def usable_key(bob_bits, revealed_indices) -> list:
    """Indices left for the final key: not revealed, not erased."""
    revealed = set(revealed_indices)
    return [i for i, b in enumerate(bob_bits) if i not in revealed and not _is_erasure(b)]


@dataclass(frozen=True)
class CycleRecord:
    cycle: int
    voltage_v: float
    theta_rad: float
    count: Optional[int]
    decision: Decision
    alice_bit: Optional[int]


@dataclass
class SessionReport:
    config: SessionConfig
    alice_key: list
    bob_key: list
    qber_series: list
    per_cycle_log: list
    revealed_indices: list
    bin_counts: np.ndarray
    tag_stream: Optional[np.ndarray] = None

    @property
    def n_cycles(self) -> int:
        return len(self.per_cycle_log)

    @property
    def erasures(self) -> int:
        return sum(_is_erasure(b) for b in self.bob_key)

    @property
    def final_qber(self) -> Optional[float]:
        return self.qber_series[-1][1] if self.qber_series else None

    @property
    def key_errors(self) -> int:
        """Mismatches over the whole raw key (not just the revealed part)."""
        return sum(
            1 for a, b in zip(self.alice_key, self.bob_key) if not _is_erasure(b) and a != b
        )

    @property
    def usable_key_length(self) -> int:
        return len(usable_key(self.bob_key, self.revealed_indices))

    def write_cycle_log(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["cycle", "voltage_v", "theta_rad", "count", "decision", "alice_bit"])
            for r in self.per_cycle_log:
                w.writerow([
                    r.cycle,
                    repr(r.voltage_v),
                    repr(r.theta_rad),
                    "" if r.count is None else r.count,
                    r.decision.name,
                    "" if r.alice_bit is None else r.alice_bit,
                ])

    def write_qber_series(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["time_s", "qber_cumulative", "qber_windowed"])
            for t, cum, win in self.qber_series:
                w.writerow([repr(t), repr(cum), repr(win)])


def qber_series(alice_bits, bob_bits, revealed_indices, times_s, window_s: float) -> list:
    """Cumulative and trailing-window QBER at every compared position."""
    series = []
    history = []  # (time, is_error)
    errors = compared = 0
    for i in revealed_indices:
        b = bob_bits[i]
        if _is_erasure(b):
            continue
        err = int(alice_bits[i]) != int(b)
        t = float(times_s[i])
        errors += err
        compared += 1
        history.append((t, err))
        recent = [e for (tt, e) in history if tt > t - window_s]
        series.append((t, errors / compared, sum(recent) / len(recent)))
    return series


def run_session(config: SessionConfig = SessionConfig(), key_bits: Optional[Sequence[int]] = None,
                emit_tags: bool = False) -> SessionReport:
    """Run the full chain for one session, deterministic given ``config.seed``.

    Alice's key is drawn from the seeded stream unless ``key_bits`` is
    given.  With ``emit_tags`` the report also carries the merged TTU
    stream (detector, clock and FPGA channels), which replays through
    :func:`bob_run` to the same decisions.
    """
    rngs = _streams(config.seed)
    n = config.n_cycles
    if key_bits is None:
        key_bits = rngs["key"].integers(0, 2, size=n).tolist()
    key_bits = [int(b) for b in key_bits]
    schedule, pulses = alice_run(key_bits, config)

    edges = mcss_edges(config.duration_s, config.clock)
    emission_s = edges[:-1] / PS_PER_S
    walk = DriftWalk(config.channel.drift, rngs["drift"])
    thetas = walk.angles(emission_s)

    counts = channel_bin_counts(pulse_rates(pulses, thetas, config), config, rngs["detector"])
    width = seconds_to_ps(config.bin_width_s)
    samples = [CountSample(i * width, int(c), width) for i, c in enumerate(counts)]
    decisions = bob_run(samples, config, edges)

    tag_stream = None
    if emit_tags:
        h = events_from_counts(counts, width, rngs["tags"], stop_ps=seconds_to_ps(config.duration_s))
        tag_stream = merge_streams(
            make_stream(Channel.H_DETECTOR, h),
            make_stream(Channel.MCSS, edges),
            make_stream(Channel.FPGA_SYNC, edges[: len(schedule)]),
        )

    alice_key = key_bits + [None] * (n - len(key_bits))
    bob_key = [d.bit for d in decisions]
    voltages = list(schedule.voltages) + [float("nan")] * (n - len(schedule))
    log = [
        CycleRecord(k, float(voltages[k]), float(thetas[k]), d.raw_count, d.decision, alice_key[k])
        for k, d in enumerate(decisions)
    ]
    revealed = [i for i in config.revealed_indices() if i < len(key_bits)]
    sample_s = (edges[:-1] + config.offset_ps) / PS_PER_S
    series = qber_series(alice_key, bob_key, revealed, sample_s, config.qber_window_s)
    return SessionReport(config, alice_key, bob_key, series, log, revealed, counts, tag_stream)
