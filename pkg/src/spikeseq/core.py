"""Reference engine for binary spike-sequence detector units.

A detector unit watches a handful of input channels for one specific
spatiotemporal spike sequence: an ordered list of channel origins plus
integer inter-spike gaps.  It emits a single binary output spike at the
timestep the last spike of the sequence arrives.  A global acceptance
window lets each spike arrive up to ``accept_window`` steps late
relative to its nominal gap.

The engine here is the canonical shift-buffer implementation: one
buffer row per pending stage, shifted toward slot 0 every timestep.
Rows are stored as packed integers (bit j of row i set means the spike
for spine i+1 becomes matchable after j more shifts).  An interval
matcher, `brute_force_match`, re-derives the same semantics from
explicit time windows and serves as the independent test oracle.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "FreezeState",
    "SequenceSpec",
    "EventStream",
    "CoreConfig",
    "UnitBuffer",
    "unit_step",
    "unit_run",
    "unit_run_fast",
    "network_infer",
    "brute_force_match",
    "input_connection_count",
    "spatial_density",
]

_EMPTY: frozenset[int] = frozenset()


class FreezeState(Enum):
    FREE = "free"
    TEMP_FROZEN = "temp_frozen"
    PERM_FROZEN = "perm_frozen"


@dataclass
class SequenceSpec:
    """One unit's target sequence.

    ``origins`` lists channel indices in temporal order; ``intervals[i]``
    is the required gap in timesteps between spike i and spike i+1.
    A channel may appear more than once.
    """

    origins: tuple[int, ...]
    intervals: tuple[int, ...]
    frozen: FreezeState = FreezeState.FREE

    def __post_init__(self) -> None:
        self.origins = tuple(int(c) for c in self.origins)
        self.intervals = tuple(int(d) for d in self.intervals)
        if len(self.origins) < 2:
            raise ValueError("a sequence needs at least two spines")
        if len(self.intervals) != len(self.origins) - 1:
            raise ValueError(
                f"expected {len(self.origins) - 1} intervals for "
                f"{len(self.origins)} origins, got {len(self.intervals)}"
            )
        if any(c < 0 for c in self.origins):
            raise ValueError("origins must be nonnegative channel indices")
        if any(d < 1 for d in self.intervals):
            raise ValueError("inter-spike intervals must be >= 1")

    @property
    def n_spines(self) -> int:
        return len(self.origins)

    @property
    def max_interval(self) -> int:
        return max(self.intervals)

    def key(self) -> tuple[tuple[int, ...], tuple[int, ...]]:
        """Hashable identity of the sequence (ignores freeze status)."""
        return (self.origins, self.intervals)


@dataclass
class EventStream:
    """A binary spatiotemporal sample: sorted (t, channel) events.

    Events are strictly within bounds and unique per (t, c) cell.
    ``frame(t)`` exposes the dense binary view of one timestep.
    """

    length: int
    channels: int
    times: np.ndarray
    chans: np.ndarray
    _ch_sets: dict[int, frozenset[int]] | None = field(
        default=None, init=False, repr=False, compare=False
    )

    def __post_init__(self) -> None:
        self.times = np.asarray(self.times, dtype=np.int64)
        self.chans = np.asarray(self.chans, dtype=np.int64)
        if self.length < 0 or self.channels < 1:
            raise ValueError("stream needs length >= 0 and channels >= 1")
        if self.times.shape != self.chans.shape or self.times.ndim != 1:
            raise ValueError("times and chans must be 1-d arrays of equal length")
        if self.times.size:
            if self.times.min() < 0 or self.times.max() >= self.length:
                raise ValueError("event time out of bounds")
            if self.chans.min() < 0 or self.chans.max() >= self.channels:
                raise ValueError("event channel out of bounds")
            keys = self.times * self.channels + self.chans
            if not np.all(np.diff(keys) > 0):
                raise ValueError("events must be sorted by (t, c) and unique")

    @classmethod
    def from_events(
        cls, length: int, channels: int, events: Iterable[tuple[int, int]]
    ) -> "EventStream":
        ev = sorted(set((int(t), int(c)) for t, c in events))
        times = np.array([t for t, _ in ev], dtype=np.int64)
        chans = np.array([c for _, c in ev], dtype=np.int64)
        return cls(length, channels, times, chans)

    @classmethod
    def from_dense(cls, dense: np.ndarray) -> "EventStream":
        dense = np.asarray(dense)
        times, chans = np.nonzero(dense)
        return cls(dense.shape[0], dense.shape[1], times, chans)

    @property
    def n_events(self) -> int:
        return int(self.times.size)

    def frame(self, t: int) -> np.ndarray:
        out = np.zeros(self.channels, dtype=np.uint8)
        lo = np.searchsorted(self.times, t, side="left")
        hi = np.searchsorted(self.times, t, side="right")
        out[self.chans[lo:hi]] = 1
        return out

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.length, self.channels), dtype=np.uint8)
        out[self.times, self.chans] = 1
        return out

    def channel_time_sets(self) -> dict[int, frozenset[int]]:
        """Per-channel sets of event times (cached)."""
        if self._ch_sets is None:
            sets: dict[int, set[int]] = {}
            for t, c in zip(self.times.tolist(), self.chans.tolist()):
                sets.setdefault(c, set()).add(t)
            self._ch_sets = {c: frozenset(s) for c, s in sets.items()}
        return self._ch_sets


@dataclass
class CoreConfig:
    """Global unit hyperparameters shared by every unit of a network."""

    accept_window: int = 0
    refractory: bool = False

    def __post_init__(self) -> None:
        if self.accept_window < 0:
            raise ValueError("accept_window must be >= 0")


class UnitBuffer:
    """Pending-expectation state of one unit for the shift engine.

    Row i holds expectations for spine i+1 as a packed integer.  A bit
    written at position ``intervals[i] + accept_window`` drifts toward
    slot 0 one position per shift; the match window covers slots
    ``0..accept_window``, so the bit is matchable exactly while the gap
    to the scheduling spike lies in
    ``[intervals[i], intervals[i] + accept_window]``.
    """

    __slots__ = ("n_rows", "width", "rows", "refractory_fired")

    def __init__(self, n_rows: int, width: int) -> None:
        self.n_rows = n_rows
        self.width = width
        self.rows: list[int] = [0] * n_rows
        self.refractory_fired = False

    @classmethod
    def for_unit(cls, spec: SequenceSpec, cfg: CoreConfig) -> "UnitBuffer":
        return cls(spec.n_spines - 1, spec.max_interval + cfg.accept_window + 1)

    def shift(self, k: int = 1) -> None:
        for i in range(self.n_rows):
            self.rows[i] >>= k

    def reset(self) -> None:
        self.rows = [0] * self.n_rows
        self.refractory_fired = False

    @property
    def bits(self) -> np.ndarray:
        """Dense (n_rows, width) binary view of the packed rows."""
        out = np.zeros((self.n_rows, self.width), dtype=np.uint8)
        for i, row in enumerate(self.rows):
            j = 0
            while row:
                if row & 1:
                    out[i, j] = 1
                row >>= 1
                j += 1
        return out


def _check_step_contract(
    spec: SequenceSpec, buf: UnitBuffer, frame: Sequence[int], cfg: CoreConfig
) -> None:
    if max(spec.origins) >= len(frame):
        raise ValueError(
            f"frame has {len(frame)} channels but spec uses channel "
            f"{max(spec.origins)}"
        )
    if buf.n_rows != spec.n_spines - 1:
        raise ValueError("buffer row count does not match spec spine count")
    if buf.width != spec.max_interval + cfg.accept_window + 1:
        raise ValueError("buffer width does not match spec/config geometry")


def unit_step(
    spec: SequenceSpec, buf: UnitBuffer, frame: Sequence[int], cfg: CoreConfig
) -> int:
    """Advance one unit by one timestep and return its output bit.

    Order within a step: shift all rows one slot toward 0 (dropping the
    slot-0 bits consumed last step), then process spines in ascending
    order.  Spine 0 schedules a stage-1 expectation unconditionally; an
    intermediate spine i consumes every in-window stage-i bit and
    schedules stage i+1; the final spine consumes in-window bits and
    yields the output.  With ``cfg.refractory`` the output is forced 0
    after the first emission of the sample.
    """
    _check_step_contract(spec, buf, frame, cfg)
    buf.shift()
    win_mask = (1 << (cfg.accept_window + 1)) - 1
    last = spec.n_spines - 1
    rows = buf.rows

    if frame[spec.origins[0]]:
        rows[0] |= 1 << (spec.intervals[0] + cfg.accept_window)
    for i in range(1, last):
        if frame[spec.origins[i]] and rows[i - 1] & win_mask:
            rows[i - 1] &= ~win_mask
            rows[i] |= 1 << (spec.intervals[i] + cfg.accept_window)
    out = 0
    if frame[spec.origins[last]] and rows[last - 1] & win_mask:
        rows[last - 1] &= ~win_mask
        out = 1
    if out and cfg.refractory:
        if buf.refractory_fired:
            out = 0
        else:
            buf.refractory_fired = True
    return out


def unit_run(spec: SequenceSpec, stream: EventStream, cfg: CoreConfig) -> list[int]:
    """Run one unit over a full sample and return its emission times.

    Iterates `unit_step` over all frames from a zeroed buffer.  With
    refractory enabled at most one time is returned.
    """
    buf = UnitBuffer.for_unit(spec, cfg)
    frame = np.zeros(stream.channels, dtype=np.uint8)
    times = stream.times
    chans = stream.chans
    n = times.size
    i = 0
    out: list[int] = []
    for t in range(stream.length):
        j = i
        while j < n and times[j] == t:
            frame[chans[j]] = 1
            j += 1
        if unit_step(spec, buf, frame, cfg):
            out.append(t)
        while i < j:
            frame[chans[i]] = 0
            i += 1
    return out


def unit_run_fast(
    spec: SequenceSpec, stream: EventStream, cfg: CoreConfig
) -> list[int]:
    """Event-driven twin of `unit_run` (identical output).

    Timesteps without events on the unit's origin channels can neither
    create, consume, nor emit anything, so the per-step shifts between
    them are composed into a single shift.
    """
    ch = stream.channel_time_sets()
    origins = spec.origins
    if origins[0] not in ch:
        return []
    relevant: set[int] = set()
    for c in set(origins):
        relevant |= ch.get(c, _EMPTY)
    win_mask = (1 << (cfg.accept_window + 1)) - 1
    last = spec.n_spines - 1
    intervals = spec.intervals
    dT = cfg.accept_window
    rows = [0] * last
    out: list[int] = []
    prev = None
    for t in sorted(relevant):
        if prev is not None:
            k = t - prev
            for i in range(last):
                rows[i] >>= k
        prev = t
        if t in ch[origins[0]]:
            rows[0] |= 1 << (intervals[0] + dT)
        for i in range(1, last):
            if t in ch.get(origins[i], _EMPTY) and rows[i - 1] & win_mask:
                rows[i - 1] &= ~win_mask
                rows[i] |= 1 << (intervals[i] + dT)
        if t in ch.get(origins[last], _EMPTY) and rows[last - 1] & win_mask:
            rows[last - 1] &= ~win_mask
            out.append(t)
            if cfg.refractory:
                break
    return out


def network_infer(
    units: Sequence[SequenceSpec], stream: EventStream, cfg: CoreConfig
) -> np.ndarray:
    """Infer a whole hidden layer; column u equals ``unit_run(units[u], ...)``.

    Units are independent; returns a (length, n_units) binary raster.
    """
    raster = np.zeros((stream.length, len(units)), dtype=np.uint8)
    for u, spec in enumerate(units):
        for t in unit_run_fast(spec, stream, cfg):
            raster[t, u] = 1
    return raster


def brute_force_match(
    spec: SequenceSpec, stream: EventStream, cfg: CoreConfig
) -> list[int]:
    """Independent oracle: match sequences by explicit time windows.

    Walks event times in order keeping, per stage, the list of open
    acceptance windows ``[t_sched + gap, t_sched + gap + accept_window]``.
    A spike on stage i's origin inside any open stage-i window greedily
    consumes every window containing that time (mirroring the engine's
    clear-on-match rule) and opens one window for stage i+1; a match at
    the final stage records a completion time.
    """
    ch = stream.channel_time_sets()
    origins = spec.origins
    intervals = spec.intervals
    dT = cfg.accept_window
    last = spec.n_spines - 1
    if origins[0] not in ch:
        return []
    relevant: set[int] = set()
    for c in set(origins):
        relevant |= ch.get(c, _EMPTY)
    pending: list[list[tuple[int, int]]] = [[] for _ in range(spec.n_spines)]
    out: list[int] = []
    for t in sorted(relevant):
        if t in ch[origins[0]]:
            pending[1].append((t + intervals[0], t + intervals[0] + dT))
        for i in range(1, last):
            if t in ch.get(origins[i], _EMPTY) and any(
                lo <= t <= hi for lo, hi in pending[i]
            ):
                pending[i] = [w for w in pending[i] if not w[0] <= t <= w[1]]
                pending[i + 1].append((t + intervals[i], t + intervals[i] + dT))
        if t in ch.get(origins[last], _EMPTY) and any(
            lo <= t <= hi for lo, hi in pending[last]
        ):
            pending[last] = [w for w in pending[last] if not w[0] <= t <= w[1]]
            out.append(t)
            if cfg.refractory:
                break
    return out


def input_connection_count(units: Sequence[SequenceSpec]) -> int:
    """Total number of binary input connections: one per spine."""
    return sum(spec.n_spines for spec in units)


def spatial_density(units: Sequence[SequenceSpec], channels: int) -> float:
    """Connection density relative to a dense layer over the same rows.

    Each spine row holds exactly one of ``channels`` possible
    connections, so the density is 1/channels.
    """
    total = input_connection_count(units)
    if total == 0:
        raise ValueError("no units")
    return total / (total * channels)
