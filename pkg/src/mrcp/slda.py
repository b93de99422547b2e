"""Shrinkage LDA on flattened EEG windows, with sliding-window model selection."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .core import EpochSet, SplitPlan
from .errors import (
    DataError,
    DegenerateDataWarning,
    DimensionMismatch,
    SingularAfterShrinkage,
    TooFewTrials,
    WindowOutOfBounds,
)
from .parallel import pmap


def flatten_window(e: EpochSet, start: int, length: int) -> np.ndarray:
    """Features of shape (trials, channels * length), time-major.

    Feature ``t * n_channels + c`` holds channel ``c`` at sample ``start + t``.
    """
    if start < 0 or length < 1 or start + length > e.n_samples:
        raise WindowOutOfBounds(
            f"window [{start}, {start + length}) outside epochs of {e.n_samples} samples"
        )
    seg = e.tensor[:, :, start:start + length]
    return np.ascontiguousarray(seg.transpose(0, 2, 1)).reshape(e.n_trials, -1)


def _centered(features) -> tuple[np.ndarray, int]:
    parts = [np.asarray(f, dtype=np.float64) for f in features if len(f)]
    z = np.concatenate([p - p.mean(axis=0) for p in parts])
    return z, len(parts)


def _shrinkage_from_gram(gram: np.ndarray, n: int, k: int, d: int) -> float | None:
    """Analytic shrinkage weight from the Gram matrix of centred samples.

    Uses sum_ij sum_t (z_ti z_tj - mean_ij)^2 = sum_t |z_t|^4 - |Z^T Z|_F^2 / n,
    and |Z^T Z|_F = |Z Z^T|_F, so the d x d covariance is never formed.
    """
    sq_norms = np.diag(gram)
    frob2 = float(np.sum(gram * gram))
    dof = n - k
    spread = float(np.sum(sq_norms ** 2)) - frob2 / n
    var_sum = n / (dof ** 2 * (n - 1)) * spread
    s_frob2 = frob2 / dof ** 2
    nu = float(np.sum(sq_norms)) / dof / d
    denom = s_frob2 - d * nu * nu
    if denom <= 1e-300 * max(1.0, s_frob2):
        return None
    return float(min(1.0, max(0.0, var_sum / denom)))


def estimate_shrinkage(features) -> float:
    """Optimal weight toward ``nu * I`` for the pooled covariance.

    ``features`` is a list of per-class (trials x d) matrices. Each class is
    centred on its own mean; the variance of every covariance entry is
    estimated from the spread of the per-trial outer products and the result
    is clipped to [0, 1]. All-identical trials give 1.0 and a
    :class:`DegenerateDataWarning`.
    """
    z, k = _centered(features)
    n, d = z.shape
    if n < 2 or n - k < 1:
        raise TooFewTrials("shrinkage estimation needs more trials than classes")
    if not np.all(np.isfinite(z)):
        raise DataError("features contain non-finite values")
    gamma = _shrinkage_from_gram(z @ z.T, n, k, d)
    if gamma is None:
        if not np.any(z):
            warnings.warn("all trials identical within class; using gamma = 1",
                          DegenerateDataWarning, stacklevel=2)
        return 1.0
    return gamma


@dataclass(frozen=True)
class SldaModel:
    class_means: np.ndarray  # (n_classes, d)
    shrunk_covariance: np.ndarray  # (d, d)
    gamma: float
    priors: np.ndarray
    classes: np.ndarray  # class ids in label space
    window_len: int = 0
    window_start: int = 0
    weights: np.ndarray = field(init=False, repr=False)
    biases: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        cov = np.asarray(self.shrunk_covariance, dtype=np.float64)
        means = np.asarray(self.class_means, dtype=np.float64)
        try:
            chol = linalg.cho_factor(cov, lower=True, check_finite=True)
        except (linalg.LinAlgError, ValueError) as exc:
            raise SingularAfterShrinkage(str(exc)) from exc
        w = linalg.cho_solve(chol, means.T)
        b = -0.5 * np.einsum("dk,kd->k", w, means) + np.log(self.priors)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "biases", b)

    @property
    def dim(self) -> int:
        return self.class_means.shape[1]


def _class_stats(x, y):
    classes, codes = np.unique(y, return_inverse=True)
    counts = np.bincount(codes)
    means = np.stack([x[codes == c].mean(axis=0) for c in range(len(classes))])
    return classes, codes, counts, means


def _check_fit_input(x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y)
    if x.ndim != 2 or x.shape[0] != y.shape[0]:
        raise DimensionMismatch("features must be (trials, d) with one label per trial")
    classes, counts = np.unique(y, return_counts=True)
    if len(classes) < 2:
        raise TooFewTrials("need at least two classes")
    if counts.min() < 2:
        raise TooFewTrials("need at least two trials per class")
    return x, y


def fit_slda(x, y, gamma: float | None = None, window=(0, 0)) -> SldaModel:
    """Fit shrinkage LDA; ``gamma=None`` estimates the shrinkage weight."""
    x, y = _check_fit_input(x, y)
    classes, codes, counts, means = _class_stats(x, y)
    z = x - means[codes]
    n, d = z.shape
    dof = n - len(classes)
    s = z.T @ z / dof
    if gamma is None:
        gamma = estimate_shrinkage([x[codes == c] for c in range(len(classes))])
    nu = np.trace(s) / d
    shrunk = (1.0 - gamma) * s
    shrunk[np.diag_indices(d)] += gamma * nu
    shrunk = 0.5 * (shrunk + shrunk.T)
    priors = counts / counts.sum()
    length, start = window
    return SldaModel(means, shrunk, float(gamma), priors, classes, int(length), int(start))


def discriminant_scores(m: SldaModel, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[1] != m.dim:
        raise DimensionMismatch(f"expected {m.dim} features, got {x.shape[1]}")
    scores = x @ m.weights + m.biases
    return scores[0] if single else scores


def predict_slda(m: SldaModel, x):
    """Return ``(class id, per-class discriminant scores)`` for one vector."""
    scores = discriminant_scores(m, np.asarray(x, dtype=np.float64).reshape(-1))
    return int(m.classes[int(np.argmax(scores))]), scores


def predict_many(m: SldaModel, x) -> np.ndarray:
    scores = discriminant_scores(m, np.atleast_2d(x))
    return m.classes[np.argmax(scores, axis=1)]


def _fast_fit_predict(x_fit, y_fit, x_test) -> np.ndarray:
    """Same classifier as :func:`fit_slda`, via the low-rank covariance form.

    With Z the centred data, the shrunk covariance is ``a I + c Z^T Z``; its
    inverse is applied through the n x n system instead of the d x d one.
    """
    classes, codes, counts, means = _class_stats(x_fit, y_fit)
    z = x_fit - means[codes]
    n, d = z.shape
    k = len(classes)
    dof = n - k
    gram = z @ z.T
    gamma = _shrinkage_from_gram(gram, n, k, d)
    gamma = 1.0 if gamma is None else gamma
    nu = np.trace(gram) / dof / d
    a = gamma * nu
    c = (1.0 - gamma) / dof
    if a <= 0:
        cov = c * (z.T @ z)
        w = linalg.solve(cov, means.T, assume_a="sym")
    elif c == 0:
        w = means.T / a
    else:
        zm = z @ means.T
        inner = gram + (a / c) * np.eye(n)
        w = (means.T - z.T @ linalg.solve(inner, zm, assume_a="pos")) / a
    b = -0.5 * np.einsum("dk,kd->k", w, means) + np.log(counts / counts.sum())
    scores = x_test @ w + b
    return classes[np.argmax(scores, axis=1)]


def window_samples(win_len_s: float, fs: float) -> int:
    return int(np.floor(win_len_s * fs + 0.5))


def window_starts(n_samples: int, length: int, step: int) -> list[int]:
    if length > n_samples:
        return []
    return list(range(0, n_samples - length + 1, step))


@dataclass(frozen=True)
class WindowSelection:
    model: object
    best_start: int
    window_len: int
    starts: tuple[int, ...]
    curve: np.ndarray  # mean CV accuracy per start
    fold_accuracies: np.ndarray  # (n_starts, n_repeats * n_folds)


def cv_window_curve(e: EpochSet, length: int, step: int, split: SplitPlan,
                    fit_predict=None, log=None):
    """Accuracy of every window start on every training fold of ``split``."""
    fit_predict = fit_predict or _fast_fit_predict
    starts = window_starts(e.n_samples, length, step)
    pairs = list(split.fold_pairs())
    if log is not None:
        for _, _, fit, _ in pairs:
            log.append(("fit", np.asarray(fit)))

    def score(start):
        x = flatten_window(e, start, length)
        out = np.zeros(len(pairs))
        for i, (_, _, fit, held) in enumerate(pairs):
            try:
                pred = fit_predict(x[fit], e.labels[fit], x[held])
                out[i] = np.mean(pred == e.labels[held])
            except (DataError, SingularAfterShrinkage, linalg.LinAlgError):
                out[i] = 0.0
        return out

    per_fold = np.array(pmap(score, starts)) if starts else np.zeros((0, len(pairs)))
    return starts, per_fold


def pick_best(curve: np.ndarray) -> int:
    """Index of the highest score; earliest wins ties."""
    return int(np.argmax(curve))


def sliding_window_select(e: EpochSet, win_len: float, step: int, split: SplitPlan,
                          log=None) -> WindowSelection:
    """Scan window starts, score each by CV on the training folds, refit the best.

    ``win_len`` is in seconds and is rounded to the nearest whole sample.
    Only training trials of ``split`` are ever used.
    """
    length = window_samples(win_len, e.fs)
    starts, per_fold = cv_window_curve(e, length, step, split, log=log)
    if not starts:
        raise WindowOutOfBounds(f"window of {length} samples longer than the epoch")
    curve = per_fold.mean(axis=1)
    best = pick_best(curve)
    start = starts[best]
    train = split.train_indices
    if log is not None:
        log.append(("fit", np.asarray(train)))
    x = flatten_window(e, start, length)
    model = fit_slda(x[train], e.labels[train], window=(length, start))
    return WindowSelection(model, start, length, tuple(starts), curve, per_fold)
