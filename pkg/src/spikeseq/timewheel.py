"""Event-driven time-wheel execution engine.

Replaces per-step buffer shifting with a circular D-slot schedule: a
global pointer advances once per time bin, an expectation is written at
slot ``(pointer + gap) mod D``, and a due test is a single bit read at
the pointer.  Each stage keeps two bit-planes per unit plus a shared
phase bit, separating expectations due in the current wheel rotation
from ones scheduled across the wrap; the plane being recycled is erased
once per rotation, so samples far longer than D stay unambiguous.

State is touched only for units connected to spiking channels, routed
through a per-channel adjacency list.  Matching is exact
(``accept_window == 0``); the reference engine in `core` is the
authority the wheel is tested bit-exact against.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import EventStream, SequenceSpec

__all__ = [
    "ConnectivityRouter",
    "build_router",
    "WheelCounters",
    "TimeWheelState",
    "EmittedSpike",
    "advance_tick",
    "handle_target",
    "run_sample",
    "emissions_to_raster",
]


@dataclass
class ConnectivityRouter:
    """Per-channel adjacency lists over (unit, spine) targets.

    ``chan_ptr`` holds C+1 nondecreasing offsets into ``conn_list``;
    segment ``[chan_ptr[c], chan_ptr[c+1])`` lists exactly the targets
    whose origin is channel c, ordered by (unit, spine).
    """

    channels: int
    chan_ptr: np.ndarray
    conn_list: np.ndarray

    def __post_init__(self) -> None:
        self.chan_ptr = np.asarray(self.chan_ptr, dtype=np.int64)
        self.conn_list = np.asarray(self.conn_list, dtype=np.int32).reshape(-1, 2)
        if self.chan_ptr.shape != (self.channels + 1,):
            raise ValueError("chan_ptr must have channels + 1 entries")
        if np.any(np.diff(self.chan_ptr) < 0):
            raise ValueError("chan_ptr must be nondecreasing")
        if self.chan_ptr[0] != 0 or self.chan_ptr[-1] != len(self.conn_list):
            raise ValueError("chan_ptr must span conn_list exactly")

    def segment(self, c: int) -> np.ndarray:
        return self.conn_list[self.chan_ptr[c] : self.chan_ptr[c + 1]]


def build_router(units: Sequence[SequenceSpec], channels: int) -> ConnectivityRouter:
    """Counting-sort construction of the channel-to-target router."""
    counts = np.zeros(channels + 1, dtype=np.int64)
    for spec in units:
        for c in spec.origins:
            if c >= channels:
                raise ValueError(f"origin channel {c} out of range (C={channels})")
            counts[c + 1] += 1
    chan_ptr = np.cumsum(counts)
    conn_list = np.zeros((int(chan_ptr[-1]), 2), dtype=np.int32)
    cursor = chan_ptr[:-1].copy()
    for u, spec in enumerate(units):
        for s, c in enumerate(spec.origins):
            conn_list[cursor[c]] = (u, s)
            cursor[c] += 1
    return ConnectivityRouter(channels, chan_ptr, conn_list)


@dataclass
class WheelCounters:
    """Work counters for the event-driven cost model."""

    ticks: int = 0
    events_routed: int = 0
    due_checks: int = 0
    schedules: int = 0
    plane_clears: int = 0
    emissions: int = 0

    def as_text(self) -> str:
        return "\n".join(
            f"{k}={v}"
            for k, v in (
                ("ticks", self.ticks),
                ("events_routed", self.events_routed),
                ("due_checks", self.due_checks),
                ("schedules", self.schedules),
                ("plane_clears", self.plane_clears),
                ("emissions", self.emissions),
            )
        )


@dataclass(frozen=True)
class EmittedSpike:
    t: int
    u: int


class TimeWheelState:
    """Packed two-generation wheel state for one in-flight sample.

    ``planes[k][g][u]`` is a D-bit integer: stage k+1 expectations of
    unit u in generation plane g.  ``phi`` selects the plane of the
    current generation.  Counters accumulate across samples until
    `reset_counters`.
    """

    __slots__ = (
        "D",
        "p",
        "phi",
        "t",
        "n_units",
        "spine_counts",
        "delays",
        "planes",
        "counters",
    )

    def __init__(
        self,
        spine_counts: Sequence[int],
        delays: Sequence[tuple[int, ...]],
        D: int = 256,
    ) -> None:
        if D < 2 or D & (D - 1):
            raise ValueError("delay horizon D must be a power of two >= 2")
        for unit_delays in delays:
            for dt in unit_delays:
                if not 1 <= dt < D:
                    raise ValueError(f"interval {dt} outside [1, D) with D={D}")
        self.D = D
        self.n_units = len(spine_counts)
        self.spine_counts = [int(n) for n in spine_counts]
        self.delays = [tuple(int(d) for d in ds) for ds in delays]
        n_stages = max(self.spine_counts) - 1 if self.spine_counts else 0
        self.planes: list[list[list[int]]] = [
            [[0] * self.n_units, [0] * self.n_units] for _ in range(n_stages)
        ]
        self.counters = WheelCounters()
        self.p = 0
        self.phi = 0
        self.t = -1

    @classmethod
    def for_network(
        cls, units: Sequence[SequenceSpec], D: int = 256
    ) -> "TimeWheelState":
        return cls(
            [spec.n_spines for spec in units],
            [spec.intervals for spec in units],
            D=D,
        )

    def reset(self) -> None:
        """Zero planes and rewind pointer/phase; counters are kept."""
        self.p = 0
        self.phi = 0
        self.t = -1
        for stage in self.planes:
            stage[0] = [0] * self.n_units
            stage[1] = [0] * self.n_units

    def reset_counters(self) -> None:
        self.counters = WheelCounters()

    def planes_all_zero(self) -> bool:
        return all(
            not any(plane) for stage in self.planes for plane in stage
        )


def advance_tick(state: TimeWheelState) -> None:
    """Advance the pointer one bin; on wrap, toggle phase and recycle.

    After the phase toggle the plane newly designated "next generation"
    holds only expectations whose due moment has already passed in the
    rotation that just ended, so it is erased wholesale (amortized once
    per D ticks).
    """
    state.t += 1
    state.counters.ticks += 1
    p = state.p + 1
    if p == state.D:
        p = 0
        state.phi ^= 1
        stale = 1 - state.phi
        for stage in state.planes:
            stage[stale] = [0] * state.n_units
        state.counters.plane_clears += 1
    state.p = p


def handle_target(state: TimeWheelState, u: int, s: int) -> EmittedSpike | None:
    """Apply the micro-operation for one routed (unit, spine) target.

    Spine 0 schedules a stage-1 expectation at ``(p + gap) mod D``, into
    the current plane unless the addition overflows the horizon, in
    which case it lands in the next-generation plane.  An intermediate
    spine due-checks its stage at the pointer, consuming the bit and
    scheduling the next stage on success.  The final spine due-checks,
    consumes, and emits a unit spike.  A failed due check has no effect.
    """
    ctr = state.counters
    last = state.spine_counts[u] - 1
    p = state.p
    if s == 0:
        q = p + state.delays[u][0]
        if q < state.D:
            state.planes[0][state.phi][u] |= 1 << q
        else:
            state.planes[0][1 - state.phi][u] |= 1 << (q - state.D)
        ctr.schedules += 1
        return None
    stage = s - 1
    ctr.due_checks += 1
    plane = state.planes[stage][state.phi]
    mask = 1 << p
    if not plane[u] & mask:
        return None
    plane[u] &= ~mask
    if s == last:
        ctr.emissions += 1
        return EmittedSpike(state.t, u)
    q = p + state.delays[u][s]
    if q < state.D:
        state.planes[s][state.phi][u] |= 1 << q
    else:
        state.planes[s][1 - state.phi][u] |= 1 << (q - state.D)
    ctr.schedules += 1
    return None


def run_sample(
    router: ConnectivityRouter,
    state: TimeWheelState,
    stream: EventStream,
    refractory: bool = False,
) -> list[EmittedSpike]:
    """Drive the wheel over one sample and collect emitted unit spikes.

    The caller provides a freshly reset state (or explicitly carries one
    over).  Per bin: advance the pointer, then route every event of that
    bin through the router and apply the spine micro-operations in
    router order.  With ``refractory``, repeat emissions of a unit
    within the sample are suppressed.
    """
    if stream.channels > router.channels:
        raise ValueError(
            f"stream has {stream.channels} channels, router only {router.channels}"
        )
    times = stream.times
    chans = stream.chans
    n = times.size
    i = 0
    emits: list[EmittedSpike] = []
    fired: set[int] = set()
    ctr = state.counters
    for t in range(stream.length):
        advance_tick(state)
        while i < n and times[i] == t:
            c = int(chans[i])
            i += 1
            lo = int(router.chan_ptr[c])
            hi = int(router.chan_ptr[c + 1])
            ctr.events_routed += hi - lo
            for j in range(lo, hi):
                u = int(router.conn_list[j, 0])
                s = int(router.conn_list[j, 1])
                spike = handle_target(state, u, s)
                if spike is not None:
                    if refractory:
                        if spike.u in fired:
                            continue
                        fired.add(spike.u)
                    emits.append(spike)
    return emits


def emissions_to_raster(
    emits: Sequence[EmittedSpike], length: int, n_units: int
) -> np.ndarray:
    raster = np.zeros((length, n_units), dtype=np.uint8)
    for spike in emits:
        raster[spike.t, spike.u] = 1
    return raster
