"""Dataset construction and preprocessing.

Covers the procedural Morse-word corpus (two channels, dots and dashes),
event noise injection, sequential-digit binarization with optional time
permutation, audio-style event binning/downsampling, and the slicing
transform that spreads multi-valued frames over value-interval channels.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .core import EventStream

__all__ = [
    "MORSE_TABLE",
    "TRAIN_WORDS_50",
    "NULL_WORDS_100",
    "LabeledSample",
    "Dataset",
    "morse_encode",
    "build_neuromorse",
    "add_noise",
    "build_smnist",
    "load_digit_images_28x28",
    "SliceBorders",
    "slice_frames",
    "shd_slice_borders",
    "shd_preprocess",
    "make_poisson_events",
]

INTER_SYMBOL_STEPS = 5
INTER_LETTER_STEPS = 10

MORSE_TABLE: dict[str, str] = {
    "a": ".-", "b": "-...", "c": "-.-.", "d": "-..", "e": ".",
    "f": "..-.", "g": "--.", "h": "....", "i": "..", "j": ".---",
    "k": "-.-", "l": ".-..", "m": "--", "n": "-.", "o": "---",
    "p": ".--.", "q": "--.-", "r": ".-.", "s": "...", "t": "-",
    "u": "..-", "v": "...-", "w": ".--", "x": "-..-", "y": "-.--",
    "z": "--..",
}

# 50 most frequent English words (train classes) and the next 100 as the
# held-out null vocabulary.  Disjoint by construction.
TRAIN_WORDS_50: tuple[str, ...] = (
    "the", "of", "and", "a", "to", "in", "is", "you", "that", "it",
    "he", "was", "for", "on", "are", "as", "with", "his", "they", "i",
    "at", "be", "this", "have", "from", "or", "one", "had", "by", "word",
    "but", "not", "what", "all", "were", "we", "when", "your", "can", "said",
    "there", "use", "an", "each", "which", "she", "do", "how", "their", "if",
)

NULL_WORDS_100: tuple[str, ...] = (
    "will", "up", "other", "about", "out", "many", "then", "them", "these", "so",
    "some", "her", "would", "make", "like", "him", "into", "time", "has", "look",
    "two", "more", "write", "go", "see", "number", "no", "way", "could", "people",
    "my", "than", "first", "water", "been", "call", "who", "oil", "its", "now",
    "find", "long", "down", "day", "did", "get", "come", "made", "may", "part",
    "over", "new", "sound", "take", "only", "little", "work", "know", "place", "year",
    "live", "me", "back", "give", "most", "very", "after", "thing", "our", "just",
    "name", "good", "sentence", "man", "think", "say", "great", "where", "help", "through",
    "much", "before", "line", "right", "too", "mean", "old", "any", "same", "tell",
    "boy", "follow", "came", "want", "show", "also", "around", "form", "three", "small",
)


@dataclass
class LabeledSample:
    """An event stream with a class label; ``None`` marks a null sample."""

    stream: EventStream
    label: int | None


@dataclass
class Dataset:
    samples: list[LabeledSample]
    n_classes: int
    class_names: list[str] | None = None
    batch_size: int | None = None

    def __post_init__(self) -> None:
        for s in self.samples:
            if s.label is not None and not 0 <= s.label < self.n_classes:
                raise ValueError(f"label {s.label} outside [0, {self.n_classes})")

    @property
    def channels(self) -> int:
        if not self.samples:
            raise ValueError("empty dataset has no channel count")
        return self.samples[0].stream.channels

    def class_indices(self) -> list[list[int]]:
        out: list[list[int]] = [[] for _ in range(self.n_classes)]
        for i, s in enumerate(self.samples):
            if s.label is not None:
                out[s.label].append(i)
        return out


def morse_encode(
    word: str,
    table: dict[str, str] = MORSE_TABLE,
    pad_to: int | None = None,
) -> EventStream:
    """Encode a word as a two-channel spike train.

    Dots spike channel 0, dashes channel 1.  Symbols within a letter are
    5 steps apart; the next letter starts 10 steps after the previous
    letter's last symbol.  ``pad_to`` extends the stream length so a
    whole corpus can share one duration.
    """
    if not word or any(ch not in table for ch in word):
        raise ValueError(f"word {word!r} contains non-encodable characters")
    events: list[tuple[int, int]] = []
    t = 0
    for li, letter in enumerate(word):
        if li > 0:
            t += INTER_LETTER_STEPS
        for si, symbol in enumerate(table[letter]):
            if si > 0:
                t += INTER_SYMBOL_STEPS
            events.append((t, 0 if symbol == "." else 1))
    length = t + 1
    if pad_to is not None:
        if pad_to < length:
            raise ValueError(f"pad_to={pad_to} shorter than word duration {length}")
        length = pad_to
    return EventStream.from_events(length, 2, events)


def build_neuromorse(
    train_words: Sequence[str] = TRAIN_WORDS_50,
    null_words: Sequence[str] = NULL_WORDS_100,
    batch_size: int = 50,
) -> tuple[Dataset, Dataset]:
    """Build the word-classification corpus: train set plus mixed eval set.

    The train set holds one class per train word; the eval set mixes
    every train word with the held-out null words (label ``None``).  All
    streams are zero padded to the longest word in either list.
    """
    if len(set(train_words)) != len(train_words):
        raise ValueError("duplicate train words")
    if set(train_words) & set(null_words):
        raise ValueError("train and null word lists must be disjoint")
    all_words = list(train_words) + list(null_words)
    max_len = max(morse_encode(w).length for w in all_words)
    train = Dataset(
        samples=[
            LabeledSample(morse_encode(w, pad_to=max_len), i)
            for i, w in enumerate(train_words)
        ],
        n_classes=len(train_words),
        class_names=list(train_words),
        batch_size=batch_size,
    )
    eval_samples = [
        LabeledSample(morse_encode(w, pad_to=max_len), i)
        for i, w in enumerate(train_words)
    ] + [LabeledSample(morse_encode(w, pad_to=max_len), None) for w in null_words]
    evaluation = Dataset(
        samples=eval_samples,
        n_classes=len(train_words),
        class_names=list(train_words),
        batch_size=batch_size,
    )
    return train, evaluation


def add_noise(
    stream: EventStream, kind: str, level: float, rng: np.random.Generator
) -> EventStream:
    """Corrupt a stream by spurious events, dropped events, or time jitter.

    ``insertion`` draws a Poisson(level * length) count of extra events
    per channel; ``deletion`` drops each event with probability
    ``level``; ``jitter`` shifts each event by a uniform integer in
    [-level, +level], clamped to the sample bounds.
    """
    if level < 0:
        raise ValueError("noise level must be >= 0")
    if level == 0:
        return stream
    events = set(zip(stream.times.tolist(), stream.chans.tolist()))
    if kind == "insertion":
        for c in range(stream.channels):
            n_add = rng.poisson(level * stream.length)
            for t in rng.integers(0, stream.length, size=n_add):
                events.add((int(t), c))
    elif kind == "deletion":
        keep = rng.random(stream.n_events) >= level
        events = {
            (int(t), int(c))
            for t, c, k in zip(stream.times, stream.chans, keep)
            if k
        }
    elif kind == "jitter":
        shift = rng.integers(-int(level), int(level) + 1, size=stream.n_events)
        shifted = np.clip(stream.times + shift, 0, stream.length - 1)
        events = set(zip(shifted.tolist(), stream.chans.tolist()))
    else:
        raise ValueError(f"unknown noise kind {kind!r}")
    return EventStream.from_events(stream.length, stream.channels, events)


def build_smnist(
    images: np.ndarray,
    labels: Sequence[int],
    permuted: bool = False,
    permutation_seed: int = 0,
    permutation: np.ndarray | None = None,
    batch_size: int = 256,
) -> Dataset:
    """Binarize 28x28 grayscale images into single-channel time series.

    Each image is flattened to a length-784 series; any value above 0
    becomes an event.  The permuted variant applies one fixed seeded
    permutation of the time axis to every sample.
    """
    images = np.asarray(images)
    if images.ndim != 3 or images.shape[1:] != (28, 28):
        raise ValueError("expected images of shape (n, 28, 28)")
    if permutation is None and permuted:
        permutation = np.random.default_rng(permutation_seed).permutation(28 * 28)
    samples = []
    for img, label in zip(images, labels):
        series = (img.reshape(-1) > 0).astype(np.uint8)
        if permutation is not None:
            series = series[permutation]
        samples.append(
            LabeledSample(EventStream.from_dense(series[:, None]), int(label))
        )
    return Dataset(
        samples=samples,
        n_classes=int(max(labels)) + 1,
        batch_size=batch_size,
    )


def load_digit_images_28x28(n_samples: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Bundled handwritten digits upsampled to 28x28 (offline stand-in).

    The 8x8 digits that ship with scikit-learn are blown up 3x and
    padded to 28x28 so they flow through the same sequential pipeline as
    full-size digit images.
    """
    from sklearn.datasets import load_digits

    digits = load_digits()
    images = digits.images if n_samples is None else digits.images[:n_samples]
    labels = digits.target if n_samples is None else digits.target[:n_samples]
    big = np.kron(images, np.ones((1, 3, 3)))
    out = np.zeros((big.shape[0], 28, 28))
    out[:, 2:26, 2:26] = big
    return out, np.asarray(labels)


@dataclass
class SliceBorders:
    """Per-slice open value intervals (lower[k], upper[k])."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self) -> None:
        self.lower = np.asarray(self.lower, dtype=np.float64)
        self.upper = np.asarray(self.upper, dtype=np.float64)
        if self.lower.shape != self.upper.shape or self.lower.ndim != 1:
            raise ValueError("lower and upper must be 1-d arrays of equal length")
        if np.any(self.lower >= self.upper):
            raise ValueError("every slice needs lower < upper")

    @property
    def n_slices(self) -> int:
        return int(self.lower.size)


def slice_frames(frames: np.ndarray, borders: SliceBorders) -> np.ndarray:
    """Duplicate channels per value slice; binary output (T, C * n_slices).

    Output channel ``k * C + c`` is 1 at time t exactly when the value
    at (t, c) lies strictly inside slice k's interval.
    """
    frames = np.asarray(frames)
    if frames.ndim != 2:
        raise ValueError("expected a (T, C) frame tensor")
    if np.any(frames < 0):
        raise ValueError("frame values must be nonnegative")
    T, C = frames.shape
    out = np.zeros((T, C * borders.n_slices), dtype=np.uint8)
    for k in range(borders.n_slices):
        hit = (frames > borders.lower[k]) & (frames < borders.upper[k])
        out[:, k * C : (k + 1) * C] = hit
    return out


def shd_slice_borders(values: Iterable[int]) -> SliceBorders:
    """One slice per distinct value c: (c / 1.3 - 3, c * 1.3 + 3).

    The deliberate overlap makes binned-count features robust against
    count fluctuations between samples.
    """
    centers = np.array(sorted(set(int(v) for v in values)), dtype=np.float64)
    if centers.size == 0 or centers[0] < 1:
        raise ValueError("slice centers must be integers >= 1")
    return SliceBorders(centers / 1.3 - 3.0, centers * 1.3 + 3.0)


def shd_preprocess(
    stream: EventStream,
    bin_ms: int = 8,
    out_channels: int = 100,
    denoise_window_ms: float | None = 80.0,
    max_len: int | None = None,
    in_channels: int = 700,
) -> np.ndarray:
    """Denoise, bin and downsample a microsecond event stream to counts.

    The stream's time axis is in microseconds.  Events with no other
    event on the same channel within the denoise window are dropped
    (pass ``None`` to keep everything); survivors are binned to
    ``bin_ms`` frames and channels merged in contiguous groups, yielding
    an integer count tensor padded or truncated to ``max_len`` rows.
    """
    if stream.channels != in_channels:
        raise ValueError(f"expected {in_channels} input channels, got {stream.channels}")
    if in_channels % out_channels:
        raise ValueError("in_channels must be a multiple of out_channels")
    group = in_channels // out_channels

    times = stream.times
    chans = stream.chans
    if denoise_window_ms is not None:
        window_us = denoise_window_ms * 1000.0
        keep = np.zeros(times.size, dtype=bool)
        for c in np.unique(chans):
            idx = np.flatnonzero(chans == c)
            ts = times[idx]
            if ts.size < 2:
                continue
            gaps_prev = np.diff(ts)
            near_prev = np.concatenate(([False], gaps_prev <= window_us))
            near_next = np.concatenate((gaps_prev <= window_us, [False]))
            keep[idx] = near_prev | near_next
        times = times[keep]
        chans = chans[keep]

    bin_us = bin_ms * 1000
    n_bins = max(1, -(-stream.length // bin_us))
    frame = np.zeros((n_bins, out_channels), dtype=np.int64)
    np.add.at(frame, (times // bin_us, chans // group), 1)

    if max_len is not None:
        if n_bins >= max_len:
            frame = frame[:max_len]
        else:
            frame = np.vstack(
                [frame, np.zeros((max_len - n_bins, out_channels), dtype=np.int64)]
            )
    return frame


def make_poisson_events(
    rng: np.random.Generator,
    duration_us: int,
    channels: int,
    rate_hz_per_channel: float,
) -> EventStream:
    """Synthetic microsecond event stream with homogeneous Poisson rates."""
    events: set[tuple[int, int]] = set()
    expected = rate_hz_per_channel * duration_us / 1e6
    for c in range(channels):
        n = rng.poisson(expected)
        for t in rng.integers(0, duration_us, size=n):
            events.add((int(t), c))
    return EventStream.from_events(duration_us, channels, events)
