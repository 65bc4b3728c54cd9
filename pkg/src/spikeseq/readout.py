"""Linear readout into per-class integrators, with compression.

Hidden units deliver binary spikes through a dense weight matrix to one
perfect (non-leaky) integrator per class; the integrator value at the
last timestep is the class score.  Because the integrators are pure
sums, a whole sample collapses to its per-unit spike counts and the
softmax cross-entropy gradient has the closed logistic-regression form,
trained here with a decoupled-weight-decay adaptive-moment update.
Compression is iterative global magnitude pruning plus post-training
symmetric int8 quantization.  Per-class output thresholds turn silence
into an explicit null-class prediction.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

__all__ = [
    "TrainConfig",
    "QuantizedWeights",
    "ReadoutModel",
    "IntegratorState",
    "forward",
    "forward_batch",
    "loss_and_grad",
    "train",
    "accuracy",
    "prune_iterative",
    "quantize_int8",
    "calibrate_null_thresholds",
    "predict",
    "predict_with_null",
    "memory_footprint",
]


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.01
    epochs: int = 100
    batch_size: int = 50
    prune_step_fraction: float = 0.05
    finetune_epochs_per_step: int = 1
    target_prune_rate: float = 0.0

    def __post_init__(self) -> None:
        if not 0 <= self.target_prune_rate < 1:
            raise ValueError("target_prune_rate must lie in [0, 1)")
        if not 0 < self.prune_step_fraction <= 1:
            raise ValueError("prune_step_fraction must lie in (0, 1]")


@dataclass
class QuantizedWeights:
    """Symmetric per-tensor int8 twin: W ~ values * scale, zero point 0."""

    values: np.ndarray
    scale: float


@dataclass
class ReadoutModel:
    weights: np.ndarray  # (n_classes, n_units) float64
    prune_mask: np.ndarray  # same shape, {0, 1}
    quantized: QuantizedWeights | None = None
    null_thresholds: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.prune_mask = np.asarray(self.prune_mask, dtype=np.uint8)
        if self.weights.shape != self.prune_mask.shape or self.weights.ndim != 2:
            raise ValueError("weights and prune_mask must share a 2-d shape")

    @classmethod
    def create(
        cls,
        n_classes: int,
        n_units: int,
        rng: np.random.Generator | None = None,
        init_scale: float = 0.01,
    ) -> "ReadoutModel":
        rng = rng or np.random.default_rng(0)
        return cls(
            weights=rng.normal(0.0, init_scale, size=(n_classes, n_units)),
            prune_mask=np.ones((n_classes, n_units), dtype=np.uint8),
        )

    @property
    def n_classes(self) -> int:
        return self.weights.shape[0]

    @property
    def n_units(self) -> int:
        return self.weights.shape[1]

    def effective_weights(self) -> np.ndarray:
        return self.weights * self.prune_mask

    def prune_rate(self) -> float:
        return 1.0 - float(self.prune_mask.mean())


class IntegratorState:
    """Per-class accumulators driven one raster row at a time."""

    def __init__(self, model: ReadoutModel) -> None:
        self._weff = model.effective_weights()
        self.accum = np.zeros(model.n_classes, dtype=np.float64)

    def step(self, raster_row: np.ndarray) -> None:
        self.accum += self._weff @ raster_row

    def value(self) -> np.ndarray:
        return self.accum.copy()

    def reset(self) -> None:
        self.accum[:] = 0.0


def _counts_of(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    if x.ndim == 2:
        return x.sum(axis=0).astype(np.float64)
    if x.ndim == 1:
        return x.astype(np.float64)
    raise ValueError("expected a raster (T, n_units) or a count vector")


def forward(
    model: ReadoutModel, raster: np.ndarray, quantized: bool = False
) -> np.ndarray:
    """Class scores at the final integrator step: W_eff . spike_counts."""
    counts = _counts_of(raster)
    if counts.size != model.n_units:
        raise ValueError(
            f"raster has {counts.size} unit columns, model expects {model.n_units}"
        )
    if quantized:
        if model.quantized is None:
            raise ValueError("model has no quantized twin")
        q = model.quantized
        acc = (q.values.astype(np.int64) * model.prune_mask) @ np.round(counts).astype(
            np.int64
        )
        return acc.astype(np.float64) * q.scale
    return model.effective_weights() @ counts


def forward_batch(
    model: ReadoutModel, counts: np.ndarray, quantized: bool = False
) -> np.ndarray:
    counts = np.asarray(counts, dtype=np.float64)
    if quantized:
        if model.quantized is None:
            raise ValueError("model has no quantized twin")
        q = model.quantized
        return (counts @ (q.values * model.prune_mask).T) * q.scale
    return counts @ model.effective_weights().T


def _log_softmax(scores: np.ndarray) -> np.ndarray:
    shifted = scores - scores.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def loss_and_grad(
    model: ReadoutModel, counts: np.ndarray, labels: np.ndarray
) -> tuple[float, np.ndarray]:
    """Mean softmax cross-entropy of final scores and its weight gradient.

    Spike counts are constants, so the gradient is the logistic form
    (softmax - onehot) x counts; pruned entries receive zero gradient.
    """
    n = counts.shape[0]
    scores = forward_batch(model, counts)
    logp = _log_softmax(scores)
    loss = float(-logp[np.arange(n), labels].mean())
    probs = np.exp(logp)
    probs[np.arange(n), labels] -= 1.0
    grad = (probs.T @ counts) / n
    return loss, grad * model.prune_mask


@dataclass
class _AdamWState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def like(cls, w: np.ndarray) -> "_AdamWState":
        return cls(np.zeros_like(w), np.zeros_like(w))


def _adamw_step(
    w: np.ndarray,
    grad: np.ndarray,
    opt: _AdamWState,
    mask: np.ndarray,
    cfg: TrainConfig,
) -> None:
    b1, b2 = cfg.betas
    opt.t += 1
    opt.m = b1 * opt.m + (1 - b1) * grad
    opt.v = b2 * opt.v + (1 - b2) * grad * grad
    m_hat = opt.m / (1 - b1**opt.t)
    v_hat = opt.v / (1 - b2**opt.t)
    step = cfg.learning_rate * (
        m_hat / (np.sqrt(v_hat) + cfg.eps) + cfg.weight_decay * w
    )
    w -= step * mask


def _dataset_to_arrays(
    data: Sequence[tuple[np.ndarray, int]],
) -> tuple[np.ndarray, np.ndarray]:
    if not data:
        raise ValueError("empty dataset")
    X = np.stack([_counts_of(x) for x, _ in data])
    y = np.array([label for _, label in data], dtype=np.int64)
    return X, y


def train(
    model: ReadoutModel,
    data: Sequence[tuple[np.ndarray, int]],
    cfg: TrainConfig,
    rng: np.random.Generator | None = None,
) -> list[dict]:
    """Minibatch training of the output weights; returns epoch history."""
    rng = rng or np.random.default_rng(0)
    X, y = _dataset_to_arrays(data)
    opt = _AdamWState.like(model.weights)
    history = []
    n = X.shape[0]
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            sel = order[start : start + cfg.batch_size]
            loss, grad = loss_and_grad(model, X[sel], y[sel])
            _adamw_step(model.weights, grad, opt, model.prune_mask, cfg)
        full_loss, _ = loss_and_grad(model, X, y)
        history.append(
            {"epoch": epoch, "loss": full_loss, "accuracy": accuracy(model, X, y)}
        )
    return history


def accuracy(
    model: ReadoutModel, X: np.ndarray, y: np.ndarray, quantized: bool = False
) -> float:
    scores = forward_batch(model, X, quantized=quantized)
    return float((scores.argmax(axis=1) == y).mean())


def prune_iterative(
    model: ReadoutModel,
    data: Sequence[tuple[np.ndarray, int]],
    cfg: TrainConfig,
    rng: np.random.Generator | None = None,
) -> ReadoutModel:
    """Global magnitude pruning in steps with a finetune epoch per step.

    Each step zeroes the smallest-magnitude ``prune_step_fraction`` of
    the currently unpruned entries, then finetunes, until the cumulative
    pruned fraction reaches the target.  The mask never un-prunes.
    """
    rng = rng or np.random.default_rng(0)
    if cfg.target_prune_rate <= 0:
        return model
    total = model.weights.size
    finetune_cfg = TrainConfig(
        learning_rate=cfg.learning_rate,
        betas=cfg.betas,
        eps=cfg.eps,
        weight_decay=cfg.weight_decay,
        epochs=cfg.finetune_epochs_per_step,
        batch_size=cfg.batch_size,
    )
    flat_mask = model.prune_mask.reshape(-1)
    while model.prune_rate() < cfg.target_prune_rate - 1e-12:
        unpruned = np.flatnonzero(flat_mask)
        k = max(1, int(round(cfg.prune_step_fraction * unpruned.size)))
        magnitudes = np.abs(model.weights.reshape(-1)[unpruned])
        order = np.argsort(magnitudes, kind="stable")
        flat_mask[unpruned[order[:k]]] = 0
        if finetune_cfg.epochs > 0:
            train(model, data, finetune_cfg, rng)
    return model


def quantize_int8(model: ReadoutModel) -> ReadoutModel:
    """Attach a symmetric per-tensor int8 twin of the effective weights.

    scale = max|W| / 127 (1 when W is all zero); values are rounded and
    clamped to [-127, 127].
    """
    weff = model.effective_weights()
    max_abs = float(np.abs(weff).max()) if weff.size else 0.0
    scale = max_abs / 127.0 if max_abs > 0 else 1.0
    values = np.clip(np.round(weff / scale), -127, 127).astype(np.int8)
    model.quantized = QuantizedWeights(values=values, scale=scale)
    return model


def calibrate_null_thresholds(
    model: ReadoutModel,
    data: Sequence[tuple[np.ndarray, int]],
    percentile: float = 5.0,
    quantized: bool = False,
) -> np.ndarray:
    """Per-class thresholds at a low percentile of true-class scores."""
    per_class: dict[int, list[float]] = {}
    for x, label in data:
        scores = forward(model, x, quantized=quantized)
        per_class.setdefault(int(label), []).append(float(scores[label]))
    thresholds = np.zeros(model.n_classes, dtype=np.float64)
    for c in range(model.n_classes):
        if c not in per_class:
            raise ValueError(f"no calibration samples for class {c}")
        thresholds[c] = np.percentile(per_class[c], percentile)
    model.null_thresholds = thresholds
    return thresholds


def predict(model: ReadoutModel, raster: np.ndarray, quantized: bool = False) -> int:
    return int(np.argmax(forward(model, raster, quantized=quantized)))


def predict_with_null(
    model: ReadoutModel, raster: np.ndarray, quantized: bool = False
) -> int | None:
    """Class index, or None when every class score sits below threshold.

    Among classes at or above their threshold the best score wins; ties
    resolve to the lowest index.
    """
    if model.null_thresholds is None:
        raise ValueError("null thresholds are not calibrated")
    scores = forward(model, raster, quantized=quantized)
    eligible = scores >= model.null_thresholds
    if not eligible.any():
        return None
    masked = np.where(eligible, scores, -np.inf)
    return int(np.argmax(masked))


def memory_footprint(
    n_units: int,
    spine_counts: Sequence[int],
    n_classes: int,
    prune_rate: float,
    weight_bits: int,
    sample_len: int,
) -> float:
    """Total model memory in bits.

    Sums binary input connections (one bit per spine), surviving output
    weights, 8-bit inter-spike intervals, per-unit detector state (one
    bit per stage per buffer slot, slots scaled by the dataset-mean
    spine count), and 8-bit integrator accumulators.
    """
    spine_counts = [int(n) for n in spine_counts]
    if len(spine_counts) != n_units:
        raise ValueError("spine_counts must have one entry per unit")
    if min((n_units, n_classes, weight_bits, sample_len), default=0) < 0:
        raise ValueError("inputs must be nonnegative")
    if n_units == 0:
        return float(n_classes * 8)
    mean_spines = sum(spine_counts) / n_units
    if mean_spines <= 1:
        raise ValueError("mean spine count must exceed 1")
    state_slots = sample_len // (mean_spines - 1)
    total = 0.0
    for ns in spine_counts:
        total += ns * 1
        total += (1.0 - prune_rate) * n_classes * weight_bits
        total += (ns - 1) * 8
        total += (ns - 1) * state_slots * 1
    total += n_classes * 8
    return total
