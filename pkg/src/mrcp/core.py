"""Shared data model: recordings, events, epochs and stratified split plans."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from . import rng
from .errors import DataError, TooFewTrials

MOVEMENT_LABELS = ("touch", "grasp", "palmar", "lateral")
REST = "rest"
CLASS_ORDER = MOVEMENT_LABELS + (REST,)


def _frozen(a, dtype=None) -> np.ndarray:
    a = np.array(a, dtype=dtype, copy=True)
    a.flags.writeable = False
    return a


def canonical_classes(names) -> tuple[str, ...]:
    """Order class names as movements first (fixed order), rest last."""
    names = set(names)
    known = [c for c in CLASS_ORDER if c in names]
    return tuple(known + sorted(names - set(CLASS_ORDER)))


@dataclass(frozen=True)
class Recording:
    """Continuous multichannel EEG in microvolts, shape (n_channels, n_samples)."""

    data: np.ndarray
    fs: float
    channel_labels: tuple[str, ...]

    def __post_init__(self):
        data = _frozen(self.data, dtype=np.float64)
        if data.ndim != 2:
            raise DataError(f"recording data must be 2-D, got shape {data.shape}")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "fs", float(self.fs))
        object.__setattr__(self, "channel_labels", tuple(str(c) for c in self.channel_labels))

    @property
    def n_channels(self) -> int:
        return self.data.shape[0]

    @property
    def n_samples(self) -> int:
        return self.data.shape[1]

    @property
    def duration(self) -> float:
        return self.n_samples / self.fs

    def with_data(self, data, fs=None) -> "Recording":
        return Recording(data, self.fs if fs is None else fs, self.channel_labels)


class Onset(NamedTuple):
    sample: int
    label: str


@dataclass(frozen=True)
class EventList:
    """Movement onsets (sample index, class label) and rest intervals [start, end)."""

    onsets: tuple[Onset, ...] = ()
    rest_intervals: tuple[tuple[int, int], ...] = ()

    def __post_init__(self):
        object.__setattr__(
            self, "onsets", tuple(Onset(int(s), str(lab)) for s, lab in self.onsets)
        )
        object.__setattr__(
            self, "rest_intervals", tuple((int(a), int(b)) for a, b in self.rest_intervals)
        )

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(o.label for o in self.onsets)

    def rescaled(self, fs_from: float, fs_to: float) -> "EventList":
        """Map sample indices to a new sampling rate (round to nearest)."""
        ratio = fs_to / fs_from

        def conv(i):
            return int(math.floor(i * ratio + 0.5))

        return EventList(
            tuple((conv(o.sample), o.label) for o in self.onsets),
            tuple((conv(a), conv(b)) for a, b in self.rest_intervals),
        )


@dataclass(frozen=True)
class EpochSet:
    """Trials x channels x samples tensor with integer labels into ``classes``."""

    tensor: np.ndarray
    labels: np.ndarray
    classes: tuple[str, ...]
    fs: float
    t0_offset: int
    channel_labels: tuple[str, ...] = ()

    def __post_init__(self):
        tensor = _frozen(self.tensor, dtype=np.float64)
        if tensor.ndim != 3:
            raise DataError(f"epoch tensor must be 3-D, got shape {tensor.shape}")
        labels = _frozen(self.labels, dtype=np.int64).reshape(-1)
        if labels.shape[0] != tensor.shape[0]:
            raise DataError(
                f"{labels.shape[0]} labels for {tensor.shape[0]} trials"
            )
        classes = tuple(self.classes)
        if labels.size and (labels.min() < 0 or labels.max() >= len(classes)):
            raise DataError("label index outside the class list")
        object.__setattr__(self, "tensor", tensor)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "classes", classes)
        object.__setattr__(self, "fs", float(self.fs))
        object.__setattr__(self, "t0_offset", int(self.t0_offset))
        object.__setattr__(self, "channel_labels", tuple(self.channel_labels))

    @property
    def n_trials(self) -> int:
        return self.tensor.shape[0]

    @property
    def n_channels(self) -> int:
        return self.tensor.shape[1]

    @property
    def n_samples(self) -> int:
        return self.tensor.shape[2]

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=len(self.classes))

    def subset(self, indices) -> "EpochSet":
        idx = np.asarray(indices, dtype=np.int64)
        return EpochSet(
            self.tensor[idx], self.labels[idx], self.classes, self.fs,
            self.t0_offset, self.channel_labels,
        )


def concat_epochs(parts: Sequence[EpochSet]) -> EpochSet:
    """Stack epoch sets, merging their class lists in canonical order."""
    parts = [p for p in parts if p is not None]
    if not parts:
        raise DataError("nothing to concatenate")
    ref = parts[0]
    classes = canonical_classes(c for p in parts for c in p.classes)
    tensors, labels = [], []
    for p in parts:
        if p.n_trials == 0:
            continue
        if p.tensor.shape[1:] != ref.tensor.shape[1:] or p.fs != ref.fs:
            raise DataError("epoch sets differ in shape or sampling rate")
        if p.t0_offset != ref.t0_offset:
            raise DataError("epoch sets differ in t0_offset")
        remap = np.array([classes.index(c) for c in p.classes], dtype=np.int64)
        tensors.append(p.tensor)
        labels.append(remap[p.labels])
    if tensors:
        tensor = np.concatenate(tensors)
        lab = np.concatenate(labels)
    else:
        tensor = np.zeros((0,) + ref.tensor.shape[1:])
        lab = np.zeros(0, dtype=np.int64)
    return EpochSet(tensor, lab, classes, ref.fs, ref.t0_offset, ref.channel_labels)


class Violation(NamedTuple):
    field: str
    index: object
    message: str

    def __str__(self):
        return f"{self.field}[{self.index}]: {self.message}"


def validate_recording(r: Recording, max_reported: int = 1000) -> list[Violation]:
    """Check the recording invariants; returns an empty list when all hold."""
    out: list[Violation] = []
    n_ch, n_s = r.data.shape
    if n_ch < 1:
        out.append(Violation("data", "n_channels", "no channels"))
    if n_s < 1:
        out.append(Violation("data", "n_samples", "no samples"))
    if not (np.isfinite(r.fs) and r.fs > 0):
        out.append(Violation("fs", None, f"sampling rate must be positive, got {r.fs}"))
    bad = np.argwhere(~np.isfinite(r.data))
    for c, s in bad[:max_reported]:
        out.append(Violation("data", (int(c), int(s)), "non-finite sample"))
    if len(bad) > max_reported:
        out.append(
            Violation("data", None, f"{len(bad) - max_reported} further non-finite samples")
        )
    if len(r.channel_labels) != n_ch:
        out.append(
            Violation(
                "channel_labels", None,
                f"{len(r.channel_labels)} labels for {n_ch} channels",
            )
        )
    seen = set()
    for i, lab in enumerate(r.channel_labels):
        if lab in seen:
            out.append(Violation("channel_labels", lab, f"duplicate label at position {i}"))
        seen.add(lab)
    return out


def validate_events(
    ev: EventList, n_samples: int, fs: float, t_pre: float = -2.0, t_post: float = 3.0
) -> list[Violation]:
    """Check EventList invariants against the parent recording's extent."""
    out: list[Violation] = []
    prev = None
    for i, (s, lab) in enumerate(ev.onsets):
        if not 0 <= s < n_samples:
            out.append(Violation("onsets", i, f"sample {s} outside [0, {n_samples})"))
        if prev is not None and s <= prev:
            out.append(Violation("onsets", i, "onsets not strictly increasing"))
        if lab not in MOVEMENT_LABELS:
            out.append(Violation("onsets", i, f"unknown movement label {lab!r}"))
        prev = s
    pre, post = int(round(t_pre * fs)), int(round(t_post * fs))
    prev_end = None
    for i, (a, b) in enumerate(ev.rest_intervals):
        if not 0 <= a < b <= n_samples:
            out.append(Violation("rest_intervals", i, f"[{a}, {b}) outside the recording"))
        if prev_end is not None and a < prev_end:
            out.append(Violation("rest_intervals", i, "intervals overlap or are unsorted"))
        prev_end = b
        for s, _ in ev.onsets:
            if a < s + post and s + pre < b:
                out.append(
                    Violation("rest_intervals", i, f"overlaps movement window of onset {s}")
                )
                break
    return out


@dataclass(frozen=True)
class SplitPlan:
    """75/25 train/validation split plus repeated stratified folds over train.

    ``folds[r][k]`` holds the trial indices of fold ``k`` in repeat ``r``; the
    indices refer to the full trial set, not to positions within train.
    """

    train_indices: np.ndarray
    validation_indices: np.ndarray
    folds: tuple[tuple[np.ndarray, ...], ...]
    seed: int
    n_trials: int = field(default=0)

    @property
    def n_repeats(self) -> int:
        return len(self.folds)

    @property
    def n_folds(self) -> int:
        return len(self.folds[0]) if self.folds else 0

    def fold_pairs(self):
        """Yield ``(repeat, fold, fit_indices, held_out_indices)``."""
        for r, rep in enumerate(self.folds):
            for k, held in enumerate(rep):
                fit = np.concatenate([f for j, f in enumerate(rep) if j != k])
                yield r, k, fit, held


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def _apportion(total: int, weights: np.ndarray) -> np.ndarray:
    """Largest-remainder apportionment of ``total`` over ``weights``."""
    quota = total * weights / weights.sum()
    base = np.floor(quota).astype(np.int64)
    rem = total - base.sum()
    order = sorted(range(len(weights)), key=lambda i: (-(quota[i] - base[i]), i))
    for i in order[:rem]:
        base[i] += 1
    return base


def make_split_plan(
    labels,
    seed: int,
    n_repeats: int = 10,
    n_folds: int = 5,
    validation_fraction: float = 0.25,
) -> SplitPlan:
    """Stratified train/validation split and repeated stratified k-fold plan.

    Parameters
    ----------
    labels : sequence of int or str
        Per-trial class.
    seed : int
        Base seed; the plan is a pure function of ``(labels, seed)``.

    Raises
    ------
    TooFewTrials
        If any class has fewer than ``n_folds`` trials.
    """
    labels = np.asarray(labels)
    n = labels.shape[0]
    classes, codes = np.unique(labels, return_inverse=True)
    counts = np.bincount(codes, minlength=len(classes))
    if n == 0 or counts.min() < n_folds:
        raise TooFewTrials(
            f"need at least {n_folds} trials per class, got counts {counts.tolist()}"
        )

    n_val = _round_half_up(validation_fraction * n)
    val_per_class = _apportion(n_val, counts.astype(float))
    g = rng.stream(seed, "split", "validation")
    val, train_by_class = [], []
    for c in range(len(classes)):
        idx = np.flatnonzero(codes == c)
        idx = idx[g.permutation(idx.size)]
        val.append(idx[: val_per_class[c]])
        train_by_class.append(np.sort(idx[val_per_class[c]:]))
    validation = np.sort(np.concatenate(val))
    train = np.sort(np.concatenate(train_by_class))

    folds = []
    for r in range(n_repeats):
        g = rng.stream(seed, "split", "folds", r)
        buckets: list[list[int]] = [[] for _ in range(n_folds)]
        offset = 0
        for idx in train_by_class:
            shuffled = idx[g.permutation(idx.size)]
            for j, t in enumerate(shuffled):
                buckets[(offset + j) % n_folds].append(int(t))
            offset = (offset + shuffled.size) % n_folds
        folds.append(tuple(_frozen(b, dtype=np.int64) for b in buckets))

    return SplitPlan(
        _frozen(train, dtype=np.int64),
        _frozen(validation, dtype=np.int64),
        tuple(folds),
        int(seed),
        n,
    )


def check_split_plan(plan: SplitPlan, labels) -> list[str]:
    """Re-verify partition and stratification; returns problems found."""
    labels = np.asarray(labels)
    problems = []
    n = labels.shape[0]
    train, val = set(plan.train_indices.tolist()), set(plan.validation_indices.tolist())
    if train & val:
        problems.append("train and validation overlap")
    if train | val != set(range(n)) or len(train) + len(val) != n:
        problems.append("train and validation do not cover all trials exactly once")
    classes = np.unique(labels)
    tr_labels = labels[plan.train_indices]
    for r, rep in enumerate(plan.folds):
        seen: list[int] = []
        for k, fold in enumerate(rep):
            seen.extend(fold.tolist())
            for c in classes:
                expect = np.sum(tr_labels == c) / len(rep)
                got = np.sum(labels[fold] == c)
                if abs(got - expect) > 1:
                    problems.append(f"repeat {r} fold {k}: class {c} count {got} vs {expect:.2f}")
        if sorted(seen) != sorted(train):
            problems.append(f"repeat {r}: folds are not a partition of the training set")
    return problems
