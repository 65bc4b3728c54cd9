"""Gradient-free structure search for detector-unit sequences.

Random unit sequences are scored by occurrence: each batch rewards units
whose sequence appeared in a sample and penalizes the rest through a
per-unit longevity accumulator.  Units whose longevity climbs past a
threshold are temporarily frozen and validated for class selectivity on
a mixed batch; selective ones are frozen permanently for their winning
class, the rest are redrawn.  Classes stop contributing samples once
their quota of permanent units is filled, which concentrates the search
on what is still missing.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Sequence

import numpy as np

from .core import CoreConfig, FreezeState, SequenceSpec, unit_run_fast

if TYPE_CHECKING:
    from .data import Dataset

__all__ = [
    "RewiringConfig",
    "LongevityState",
    "SelectivityStats",
    "RewiringState",
    "RewiringResult",
    "update_longevity",
    "apply_longevity_thresholds",
    "redraw_unit",
    "spine_count_probabilities",
    "compute_selectivity",
    "criterion_check",
    "run_rewiring_phase",
    "count_possible_sequences",
]

CRITERION_THRESHOLD = "threshold_only"
CRITERION_GAP = "threshold_and_gap"


@dataclass
class RewiringConfig:
    """Search hyperparameters.

    ``theta_low``/``theta_high`` default to -2x/+2x the batch size; the
    outcome is not very sensitive to them as long as they are a few
    batches worth of drift away from zero.  ``selectivity_band``, when
    set, additionally caps accepted selectivities at
    ``theta_selectivity + band`` (sweep-style harness mode).
    """

    r_pr: float = 0.1
    theta_selectivity: float = 0.5
    epsilon_gap: float = 0.05
    criterion: str = CRITERION_THRESHOLD
    spine_range: tuple[int, int] = (2, 5)
    interval_upper_bound: int = 64
    batch_size: int = 50
    max_batches: int = 1000
    theta_low: float | None = None
    theta_high: float | None = None
    adapt_interval_bound: bool = False
    selectivity_band: float | None = None

    def __post_init__(self) -> None:
        if self.theta_low is None:
            self.theta_low = -2.0 * self.batch_size
        if self.theta_high is None:
            self.theta_high = 2.0 * self.batch_size
        if not self.theta_low < 0 < self.theta_high:
            raise ValueError("need theta_low < 0 < theta_high")
        if not 0 < self.theta_selectivity <= 1:
            raise ValueError("theta_selectivity must be in (0, 1]")
        if self.r_pr < 0:
            raise ValueError("penalty-reward ratio must be >= 0")
        if self.criterion not in (CRITERION_THRESHOLD, CRITERION_GAP):
            raise ValueError(f"unknown criterion {self.criterion!r}")
        lo, hi = self.spine_range
        if not 2 <= lo <= hi:
            raise ValueError("spine_range must satisfy 2 <= min <= max")
        if self.interval_upper_bound < 1:
            raise ValueError("interval_upper_bound must be >= 1")


@dataclass
class LongevityState:
    """Per-unit longevity accumulators and freeze flags.

    The accumulator is real-valued: a fractional penalty-reward ratio
    makes increments non-integral.
    """

    longevity: np.ndarray
    status: list[FreezeState]

    @classmethod
    def fresh(cls, n_units: int) -> "LongevityState":
        return cls(
            np.zeros(n_units, dtype=np.float64),
            [FreezeState.FREE] * n_units,
        )

    @property
    def n_units(self) -> int:
        return len(self.status)


@dataclass
class SelectivityStats:
    """Per-unit per-class spike totals over a validation batch."""

    spike_counts: np.ndarray  # (n_units, n_classes)
    sample_counts: np.ndarray  # (n_classes,)

    def __post_init__(self) -> None:
        self.spike_counts = np.asarray(self.spike_counts, dtype=np.float64)
        self.sample_counts = np.asarray(self.sample_counts, dtype=np.float64)
        if self.spike_counts.ndim != 2:
            raise ValueError("spike_counts must be (n_units, n_classes)")
        if self.sample_counts.shape != (self.spike_counts.shape[1],):
            raise ValueError("sample_counts length must equal n_classes")


@dataclass
class RewiringState:
    """Full search pool: specs, longevity, quotas and class assignments."""

    channels: int
    n_classes: int
    units: list[SequenceSpec]
    longevity_state: LongevityState
    class_of: list[int | None]
    quota_remaining: np.ndarray

    @property
    def status(self) -> list[FreezeState]:
        return self.longevity_state.status


@dataclass
class RewiringResult:
    units: list[SequenceSpec]
    class_of: list[int]
    batches_used: int
    budget_exhausted: bool
    state: RewiringState


def update_longevity(
    state: LongevityState,
    occurrences: Sequence[int],
    batch_size: int,
    cfg: RewiringConfig,
) -> None:
    """Reward units whose sequence occurred, penalize the rest.

    ``occurrences[u]`` counts the samples of the batch in which unit u
    spiked at least once.  Frozen units are untouched.
    """
    occ = np.asarray(occurrences, dtype=np.float64)
    if occ.shape != (state.n_units,):
        raise ValueError("occurrences must have one entry per unit")
    if np.any(occ < 0) or np.any(occ > batch_size):
        raise ValueError("occurrence counts must lie in [0, batch_size]")
    delta = occ - cfg.r_pr * (batch_size - occ)
    free = np.array([s is FreezeState.FREE for s in state.status])
    state.longevity[free] += delta[free]


def spine_count_probabilities(lo: int, hi: int) -> np.ndarray:
    """Normalized 0.3**k weights over spine counts k in [lo, hi]."""
    weights = 0.3 ** np.arange(lo, hi + 1, dtype=np.float64)
    return weights / weights.sum()


def redraw_unit(
    channels: int, cfg: RewiringConfig, rng: np.random.Generator
) -> SequenceSpec:
    """Draw a fresh random sequence.

    The spine count follows the geometric-weight multinomial over the
    configured range (constant when the range is a singleton); origins
    are uniform over channels and intervals uniform integers in
    [1, interval_upper_bound].
    """
    lo, hi = cfg.spine_range
    if lo == hi:
        n_spines = lo
    else:
        n_spines = lo + int(rng.choice(hi - lo + 1, p=spine_count_probabilities(lo, hi)))
    return SequenceSpec(
        origins=tuple(int(c) for c in rng.integers(0, channels, size=n_spines)),
        intervals=tuple(
            int(d) for d in rng.integers(1, cfg.interval_upper_bound + 1, size=n_spines - 1)
        ),
    )


def apply_longevity_thresholds(
    state: RewiringState, cfg: RewiringConfig, rng: np.random.Generator
) -> tuple[list[int], list[int]]:
    """Redraw units at or below theta_low, temp-freeze at or above theta_high.

    Returns (rewired unit ids, newly temp-frozen unit ids).  Threshold
    crossing is inclusive.
    """
    rewired: list[int] = []
    frozen: list[int] = []
    ls = state.longevity_state
    for u in range(ls.n_units):
        if ls.status[u] is not FreezeState.FREE:
            continue
        if ls.longevity[u] <= cfg.theta_low:
            state.units[u] = redraw_unit(state.channels, cfg, rng)
            ls.longevity[u] = 0.0
            rewired.append(u)
        elif ls.longevity[u] >= cfg.theta_high:
            ls.status[u] = FreezeState.TEMP_FROZEN
            state.units[u].frozen = FreezeState.TEMP_FROZEN
            frozen.append(u)
    return rewired, frozen


def compute_selectivity(stats: SelectivityStats) -> np.ndarray:
    """Per-class occurrence rates normalized to a per-unit distribution.

    ``o[u, i] = spikes[u, i] / n_i``; each row of the result sums to one
    unless the unit never spiked, in which case the row is all zero.
    """
    if np.any(stats.sample_counts <= 0):
        raise ValueError("every class needs at least one validation sample")
    occ = stats.spike_counts / stats.sample_counts
    totals = occ.sum(axis=1, keepdims=True)
    S = np.zeros_like(occ)
    np.divide(occ, totals, out=S, where=totals > 0)
    return S


def criterion_check(selectivity: np.ndarray, cfg: RewiringConfig) -> int | None:
    """Return the winning class if the selectivity row passes, else None.

    Criterion ``threshold_only`` requires the best class to strictly
    exceed theta_selectivity; ``threshold_and_gap`` additionally demands
    a gap of epsilon_gap over every other class.  Ties resolve to the
    lowest class index.
    """
    s = np.asarray(selectivity, dtype=np.float64)
    best = int(np.argmax(s))
    if not s[best] > cfg.theta_selectivity:
        return None
    if cfg.selectivity_band is not None and s[best] > (
        cfg.theta_selectivity + cfg.selectivity_band
    ):
        return None
    if cfg.criterion == CRITERION_GAP and s.size > 1:
        rest = np.delete(s, best)
        if not s[best] - cfg.epsilon_gap > rest.max():
            return None
    return best


def count_possible_sequences(n_in: int, n_spines: int, t_max: int) -> int:
    """Combinatorial count of distinct detectable sequences (exact int)."""
    if n_spines < 2:
        raise ValueError("n_spines must be >= 2")
    return n_in**n_spines * (t_max // (n_spines - 1)) ** (n_spines - 1)


def _split_quota(n_units_target: int, n_classes: int) -> np.ndarray:
    base, extra = divmod(n_units_target, n_classes)
    quota = np.full(n_classes, base, dtype=np.int64)
    quota[:extra] += 1
    return quota


class _SpikeCache:
    """Memoized per-(sequence, sample) spike counts for the search loop."""

    def __init__(self, dataset: "Dataset", core_cfg: CoreConfig) -> None:
        self.dataset = dataset
        self.core_cfg = core_cfg
        self._cache: dict[tuple, int] = {}

    def spikes(self, spec: SequenceSpec, sample_idx: int) -> int:
        key = (spec.key(), sample_idx)
        hit = self._cache.get(key)
        if hit is None:
            hit = len(
                unit_run_fast(
                    spec, self.dataset.samples[sample_idx].stream, self.core_cfg
                )
            )
            self._cache[key] = hit
        return hit


def _interval_bound_for(
    dataset: "Dataset", open_classes: np.ndarray, n_spines_max: int
) -> int:
    lengths = [
        s.stream.length
        for s in dataset.samples
        if s.label is not None and open_classes[s.label]
    ]
    if not lengths:
        return 1
    return max(1, max(lengths) // (n_spines_max - 1))


def run_rewiring_phase(
    dataset: "Dataset",
    n_units_target: int,
    cfg: RewiringConfig,
    rng: np.random.Generator,
    core_cfg: CoreConfig | None = None,
) -> RewiringResult:
    """Search sequences until the per-class quotas are permanently frozen.

    Loops batches drawn from classes whose quota is still open: free
    units are inferred and their longevity updated, thresholds applied,
    and any batch producing new temp-frozen units triggers a selectivity
    validation on a batch stratified across all classes.  A unit passing
    the criterion is permanently frozen for its winning class if that
    class still has quota, otherwise it is redrawn; failing units are
    redrawn.  Stops when all quotas are filled or the batch budget runs
    out (then ``budget_exhausted`` is set on the partial result).
    """
    core_cfg = core_cfg or CoreConfig()
    n_classes = dataset.n_classes
    if n_classes < 1:
        raise ValueError("dataset must declare at least one class")
    by_class = dataset.class_indices()
    for i, idxs in enumerate(by_class):
        if not idxs:
            raise ValueError(f"class {i} has no samples")

    quota = _split_quota(n_units_target, n_classes)
    state = RewiringState(
        channels=dataset.channels,
        n_classes=n_classes,
        units=[redraw_unit(dataset.channels, cfg, rng) for _ in range(n_units_target)],
        longevity_state=LongevityState.fresh(n_units_target),
        class_of=[None] * n_units_target,
        quota_remaining=quota.copy(),
    )
    if n_units_target == 0:
        return RewiringResult([], [], 0, False, state)

    cache = _SpikeCache(dataset, core_cfg)
    ls = state.longevity_state
    val_per_class = max(1, cfg.batch_size // n_classes)
    base_bound = cfg.interval_upper_bound
    batches = 0

    while batches < cfg.max_batches:
        open_mask = state.quota_remaining > 0
        if not open_mask.any():
            break
        batches += 1
        if cfg.adapt_interval_bound:
            cfg.interval_upper_bound = min(
                base_bound,
                _interval_bound_for(dataset, open_mask, cfg.spine_range[1]),
            )

        pool = [i for c in np.flatnonzero(open_mask) for i in by_class[c]]
        batch = rng.choice(len(pool), size=cfg.batch_size, replace=True)
        sample_ids = [pool[i] for i in batch]

        occurrences = np.zeros(n_units_target, dtype=np.int64)
        for u, spec in enumerate(state.units):
            if ls.status[u] is not FreezeState.FREE:
                continue
            occurrences[u] = sum(
                1 for sid in sample_ids if cache.spikes(spec, sid) > 0
            )
        update_longevity(ls, occurrences, cfg.batch_size, cfg)
        _, new_temp = apply_longevity_thresholds(state, cfg, rng)
        if not new_temp:
            continue

        # validation over a batch stratified across all classes
        val_ids = [
            int(i)
            for c in range(n_classes)
            for i in rng.choice(by_class[c], size=val_per_class, replace=True)
        ]
        sample_counts = np.full(n_classes, val_per_class, dtype=np.int64)
        for u in new_temp:
            spikes = np.zeros(n_classes, dtype=np.float64)
            for sid in val_ids:
                label = dataset.samples[sid].label
                spikes[label] += cache.spikes(state.units[u], sid)
            stats = SelectivityStats(spikes[None, :], sample_counts)
            winner = criterion_check(compute_selectivity(stats)[0], cfg)
            if winner is not None and state.quota_remaining[winner] > 0:
                ls.status[u] = FreezeState.PERM_FROZEN
                state.units[u].frozen = FreezeState.PERM_FROZEN
                state.class_of[u] = winner
                state.quota_remaining[winner] -= 1
            else:
                state.units[u] = redraw_unit(state.channels, cfg, rng)
                ls.status[u] = FreezeState.FREE
                ls.longevity[u] = 0.0

    cfg.interval_upper_bound = base_bound
    frozen = [
        (state.units[u], state.class_of[u])
        for u in range(n_units_target)
        if ls.status[u] is FreezeState.PERM_FROZEN
    ]
    return RewiringResult(
        units=[spec for spec, _ in frozen],
        class_of=[c for _, c in frozen],
        batches_used=batches,
        budget_exhausted=bool((state.quota_remaining > 0).any()),
        state=state,
    )
