"""Epoch extraction around movement onsets, rest epochs, outlier rejection."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import REST, EpochSet, EventList, Recording, canonical_classes
from .errors import InsufficientRestData, OnsetOutOfBounds, TooFewTrials


def _samples(t: float, fs: float) -> int:
    return int(np.floor(t * fs + 0.5))


def extract_epochs(
    r: Recording, ev: EventList, t_pre: float = -2.0, t_post: float = 3.0
) -> EpochSet:
    """Cut one epoch per onset, spanning ``[onset + t_pre, onset + t_post)``."""
    pre = _samples(t_pre, r.fs)
    length = _samples(t_post - t_pre, r.fs)
    classes = canonical_classes(o.label for o in ev.onsets)
    tensor = np.empty((len(ev.onsets), r.n_channels, length))
    labels = np.empty(len(ev.onsets), dtype=np.int64)
    for i, (onset, label) in enumerate(ev.onsets):
        start = onset + pre
        if start < 0 or start + length > r.n_samples:
            raise OnsetOutOfBounds(onset)
        tensor[i] = r.data[:, start:start + length]
        labels[i] = classes.index(label)
    return EpochSet(tensor, labels, classes, r.fs, -pre, r.channel_labels)


def extract_rest_epochs(
    r: Recording,
    ev: EventList,
    epoch_len: float = 5.0,
    n_target: int = 80,
    t0_offset: float = 2.0,
) -> EpochSet:
    """Tile ``n_target`` non-overlapping rest epochs from the rest intervals.

    Windows are placed left to right from the start of each interval; the
    time-zero marker sits ``t0_offset`` seconds in so the tensor lines up
    with movement epochs.
    """
    length = _samples(epoch_len, r.fs)
    starts: list[int] = []
    for a, b in ev.rest_intervals:
        s = a
        while s + length <= b and len(starts) < n_target:
            starts.append(s)
            s += length
    if len(starts) < n_target:
        raise InsufficientRestData(
            f"rest intervals hold {len(starts)} windows of {epoch_len} s, need {n_target}"
        )
    tensor = np.empty((n_target, r.n_channels, length))
    for i, s in enumerate(starts):
        tensor[i] = r.data[:, s:s + length]
    return EpochSet(
        tensor, np.zeros(n_target, dtype=np.int64), (REST,), r.fs,
        _samples(t0_offset, r.fs), r.channel_labels,
    )


@dataclass(frozen=True)
class RejectionReport:
    kept_indices: tuple[int, ...]
    rejected_indices: tuple[int, ...]
    reasons: dict
    amp_limit: float
    kurt_factor: float

    def table(self) -> str:
        lines = [
            f"amplitude limit: {self.amp_limit:g} uV   kurtosis factor: {self.kurt_factor:g}",
            f"kept {len(self.kept_indices)} / {len(self.kept_indices) + len(self.rejected_indices)} trials",
            f"{'trial':>6}  reasons",
        ]
        for i in self.rejected_indices:
            lines.append(f"{i:>6}  {','.join(self.reasons[i])}")
        return "\n".join(lines) + "\n"


def excess_kurtosis(x: np.ndarray, axis: int = -1) -> np.ndarray:
    """Biased excess kurtosis along ``axis``; constant signals give 0."""
    c = x - x.mean(axis=axis, keepdims=True)
    m2 = np.mean(c * c, axis=axis)
    m4 = np.mean(c ** 4, axis=axis)
    safe = np.where(m2 > 0, m2, 1.0)
    return np.where(m2 > 0, m4 / safe ** 2 - 3.0, 0.0)


def reject_outliers(
    e: EpochSet, amp_limit: float = 125.0, kurt_factor: float = 4.0
) -> tuple[EpochSet, RejectionReport]:
    """Drop trials exceeding ``amp_limit`` or with outlying channel kurtosis.

    A trial fails the kurtosis test when, for any channel, its kurtosis
    exceeds the across-trial mean for that channel by more than
    ``kurt_factor`` across-trial standard deviations.
    """
    if e.n_trials < 2:
        raise TooFewTrials("outlier rejection needs at least two trials")
    peak = np.abs(e.tensor).max(axis=(1, 2))
    amp_bad = peak > amp_limit
    k = excess_kurtosis(e.tensor, axis=2)
    bound = k.mean(axis=0) + kurt_factor * k.std(axis=0)
    kurt_bad = (k > bound).any(axis=1)

    reasons = {}
    for i in range(e.n_trials):
        tags = []
        if amp_bad[i]:
            tags.append("amplitude")
        if kurt_bad[i]:
            tags.append("kurtosis")
        if tags:
            reasons[i] = tuple(tags)
    keep = np.flatnonzero(~(amp_bad | kurt_bad))
    report = RejectionReport(
        tuple(int(i) for i in keep),
        tuple(sorted(reasons)),
        reasons,
        float(amp_limit),
        float(kurt_factor),
    )
    return e.subset(keep), report
