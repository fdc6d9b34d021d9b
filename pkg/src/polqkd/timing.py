"""Master clock, FPGA voltage driver and time-tagging unit.

All time inside this module is integer picoseconds so bin assignment at
exact edges does not depend on float rounding.  Seconds appear only in
arguments named ``*_s``.

Tag streams on disk come in two flavours:

* CSV: header ``channel,timestamp_ps`` then one event per line.  The
  channel is written by name (``H_DETECTOR``, ``MCSS``, ``FPGA_SYNC``);
  numeric codes are accepted on read.
* binary: packed records of ``u8 channel, u64 timestamp_ps``,
  little-endian, 9 bytes each, no header.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from polqkd.errors import ContractViolation, InvalidParameter

PS_PER_S = 10**12

TAG_DTYPE = np.dtype([("channel", "u1"), ("timestamp_ps", "<u8")])


class Channel(enum.IntEnum):
    H_DETECTOR = 0
    MCSS = 1
    FPGA_SYNC = 2


def seconds_to_ps(t_s: float) -> int:
    return int(round(t_s * PS_PER_S))


@dataclass(frozen=True)
class ClockSpec:
    """Master clock: unipolar square wave, high for ``duty`` of each cycle."""

    frequency_hz: float = 10.0
    amplitude_v: float = 4.0
    duty: float = 0.5

    def __post_init__(self):
        if not self.frequency_hz > 0:
            raise InvalidParameter("clock.frequency_hz must be > 0")
        if not 0 < self.duty < 1:
            raise InvalidParameter("clock.duty must be in (0, 1)")

    @property
    def period_ps(self) -> int:
        return seconds_to_ps(1.0 / self.frequency_hz)

    def full_cycles(self, duration_s: float) -> int:
        # tolerance absorbs products like 0.9 * 10 = 8.999...
        return int(math.floor(duration_s * self.frequency_hz + 1e-9))

    def level(self, t_ps):
        """Clock voltage at ``t_ps``: low in the first ``1 - duty`` of each cycle."""
        pos = (np.asarray(t_ps, dtype=np.int64) % self.period_ps) / self.period_ps
        return np.where(pos < 1.0 - self.duty, 0.0, self.amplitude_v)


@dataclass(frozen=True)
class TagEvent:
    channel: Channel
    timestamp_ps: int

    @property
    def timestamp_s(self) -> float:
        return self.timestamp_ps / PS_PER_S


@dataclass(frozen=True)
class CountSample:
    bin_start_ps: int
    counts: int
    bin_width_ps: int = seconds_to_ps(0.01)

    @property
    def bin_start_s(self) -> float:
        return self.bin_start_ps / PS_PER_S

    @property
    def bin_width_s(self) -> float:
        return self.bin_width_ps / PS_PER_S


@dataclass(frozen=True)
class VoltageSchedule:
    """One ``(cycle_index, voltage)`` entry per clock cycle."""

    entries: tuple
    v_pi: float

    @property
    def voltages(self) -> np.ndarray:
        return np.array([v for _, v in self.entries], dtype=float)

    def __len__(self):
        return len(self.entries)

    def bits(self) -> list:
        out = []
        for cycle, v in self.entries:
            if v == 0.0:
                out.append(0)
            elif v == self.v_pi:
                out.append(1)
            else:
                raise InvalidParameter(f"cycle {cycle}: voltage {v} is not 0 or v_pi")
        return out


def mcss_edges(duration_s: float, clock: ClockSpec) -> np.ndarray:
    """Cycle boundaries in picoseconds, ``k / f`` for ``k = 0 .. full_cycles``."""
    if not duration_s > 0:
        raise InvalidParameter(f"duration must be > 0 s, got {duration_s}")
    n = clock.full_cycles(duration_s)
    return np.rint(np.arange(n + 1) * (PS_PER_S / clock.frequency_hz)).astype(np.int64)


def fpga_schedule(key_bits: Sequence[int], v_pi: float) -> VoltageSchedule:
    """Map key bits to drive voltages, 0 -> 0 V and 1 -> ``v_pi``."""
    if len(key_bits) == 0:
        raise InvalidParameter("key must not be empty")
    if not v_pi > 0:
        raise InvalidParameter(f"v_pi must be positive, got {v_pi}")
    entries = []
    for i, b in enumerate(key_bits):
        if b not in (0, 1):
            raise InvalidParameter(f"key bit {i} is {b!r}, expected 0 or 1")
        entries.append((i, float(v_pi) if b else 0.0))
    return VoltageSchedule(tuple(entries), float(v_pi))


def _timestamps(events) -> np.ndarray:
    if isinstance(events, np.ndarray):
        if events.dtype.names:
            return events["timestamp_ps"].astype(np.int64)
        return events.astype(np.int64)
    return np.fromiter((e.timestamp_ps for e in events), dtype=np.int64)


def bin_counts(timestamps_ps: np.ndarray, width_ps: int, n_bins: Optional[int] = None,
               start_ps: int = 0) -> np.ndarray:
    """Histogram of ordered timestamps into ``n_bins`` bins from ``start_ps``."""
    ts = np.asarray(timestamps_ps, dtype=np.int64)
    if ts.size and np.any(np.diff(ts) < 0):
        raise ContractViolation("tag events are not time-ordered")
    idx = (ts - start_ps) // width_ps
    if n_bins is None:
        n_bins = int(idx[-1]) + 1 if ts.size else 0
    if ts.size and (idx[0] < 0 or idx[-1] >= n_bins):
        raise InvalidParameter("events fall outside the requested bin span")
    return np.bincount(idx, minlength=n_bins).astype(np.int64)


def ttu_bin(events, bin_width_s: float = 0.01, span_s: Optional[tuple] = None) -> list:
    """Bin one channel's events into fixed-width count samples.

    Bins are aligned to the stream origin (t = 0).  Without ``span_s`` the
    bins run from the origin to the last event; with ``(start, stop)`` they
    densely cover that interval, empty bins included.
    """
    if not bin_width_s > 0:
        raise InvalidParameter(f"bin width must be > 0 s, got {bin_width_s}")
    width = seconds_to_ps(bin_width_s)
    ts = _timestamps(events)
    if span_s is None:
        first, n_bins = 0, None
    else:
        first = seconds_to_ps(span_s[0]) // width
        n_bins = -(-seconds_to_ps(span_s[1]) // width) - first
    counts = bin_counts(ts, width, n_bins, first * width)
    return [CountSample((first + i) * width, int(c), width) for i, c in enumerate(counts)]


def sample_offset_ps(period_ps: int, open_fraction: float = 0.5) -> int:
    """Default sampling point: the middle of the open half-cycle."""
    return int(round(period_ps * open_fraction / 2))


def gate_by_mcss(samples: Iterable[Optional[CountSample]], edges_ps, offset_ps: Optional[int] = None,
                 open_fraction: float = 0.5) -> list:
    """Keep one sample per full clock cycle.

    For cycle ``k`` the retained sample is the bin containing
    ``edges[k] + offset``.  A cycle whose bin is missing gets ``None``,
    which downstream classification treats as an erasure.
    """
    edges = np.asarray(edges_ps, dtype=np.int64)
    by_index = {}
    width = None
    for s in samples:
        if s is None:
            continue
        if width is None:
            width = s.bin_width_ps
        elif s.bin_width_ps != width:
            raise InvalidParameter("samples have mixed bin widths")
        by_index[s.bin_start_ps // width] = s
    out = []
    for k in range(len(edges) - 1):
        off = offset_ps if offset_ps is not None else sample_offset_ps(edges[k + 1] - edges[k], open_fraction)
        if width is None:
            out.append(None)
            continue
        out.append(by_index.get(int(edges[k] + off) // width))
    return out


def events_from_counts(counts: np.ndarray, width_ps: int, rng: np.random.Generator,
                       start_ps: int = 0, stop_ps: Optional[int] = None) -> np.ndarray:
    """Spread binned counts uniformly inside their bins; sorted timestamps.

    A final bin cut short by ``stop_ps`` only receives events before it.
    """
    counts = np.asarray(counts, dtype=np.int64)
    starts = start_ps + np.arange(counts.size, dtype=np.int64) * width_ps
    widths = np.full(counts.size, width_ps, dtype=np.int64)
    if stop_ps is not None:
        widths = np.minimum(widths, stop_ps - starts)
    ts = np.repeat(starts, counts) + rng.integers(0, np.repeat(widths, counts), dtype=np.int64)
    ts.sort(kind="stable")
    return ts


def make_stream(channel: Channel, timestamps_ps) -> np.ndarray:
    ts = np.asarray(timestamps_ps, dtype=np.int64)
    out = np.empty(ts.size, dtype=TAG_DTYPE)
    out["channel"] = int(channel)
    out["timestamp_ps"] = ts
    return out


def merge_streams(*streams: np.ndarray) -> np.ndarray:
    """Merge tag streams by timestamp; ties broken by channel code."""
    merged = np.concatenate([np.asarray(s, dtype=TAG_DTYPE) for s in streams]) if streams else \
        np.empty(0, dtype=TAG_DTYPE)
    order = np.lexsort((merged["channel"], merged["timestamp_ps"]))
    return merged[order]


def channel_timestamps(stream: np.ndarray, channel: Channel) -> np.ndarray:
    ts = stream["timestamp_ps"][stream["channel"] == int(channel)].astype(np.int64)
    if ts.size and np.any(np.diff(ts) < 0):
        raise ContractViolation(f"{channel.name} events are not time-ordered")
    return ts


def to_events(stream: np.ndarray) -> list:
    return [TagEvent(Channel(int(c)), int(t)) for c, t in zip(stream["channel"], stream["timestamp_ps"])]


def write_tags_csv(path, stream: np.ndarray) -> None:
    names = {int(c): c.name for c in Channel}
    with open(path, "w", newline="") as fh:
        fh.write("channel,timestamp_ps\n")
        for c, t in zip(stream["channel"].tolist(), stream["timestamp_ps"].tolist()):
            fh.write(f"{names[c]},{t}\n")


def read_tags_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["channel", "timestamp_ps"]:
            raise InvalidParameter(f"{path}: expected header 'channel,timestamp_ps', got {header}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise InvalidParameter(f"{path}:{lineno}: expected 2 fields")
            name, ts = row
            try:
                ch = Channel[name] if not name.isdigit() else Channel(int(name))
                t = int(ts)
            except (KeyError, ValueError) as exc:
                raise InvalidParameter(f"{path}:{lineno}: bad record {row}") from exc
            if t < 0:
                raise InvalidParameter(f"{path}:{lineno}: negative timestamp")
            rows.append((int(ch), t))
    return np.array(rows, dtype=TAG_DTYPE)


def write_tags_bin(path, stream: np.ndarray) -> None:
    Path(path).write_bytes(np.asarray(stream, dtype=TAG_DTYPE).tobytes())


def read_tags_bin(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) % TAG_DTYPE.itemsize:
        raise InvalidParameter(f"{path}: length {len(data)} is not a multiple of {TAG_DTYPE.itemsize}")
    stream = np.frombuffer(data, dtype=TAG_DTYPE).copy()
    if stream.size and stream["channel"].max() > max(Channel):
        raise InvalidParameter(f"{path}: unknown channel code")
    return stream
