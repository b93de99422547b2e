"""Random forest of Gini trees grown on bootstrap samples."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import rng
from .errors import DimensionMismatch, InvalidMtry, TooFewTrials
from .parallel import pmap


@dataclass(frozen=True)
class Tree:
    """Flat node arrays; ``feature[i] == -1`` marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    counts: np.ndarray  # (n_nodes, n_classes) bootstrap sample counts

    @property
    def n_nodes(self) -> int:
        return self.feature.shape[0]

    def leaf_class(self) -> np.ndarray:
        return np.argmax(self.counts, axis=1)

    def apply(self, x: np.ndarray) -> np.ndarray:
        """Leaf index reached by every row of ``x``."""
        node = np.zeros(x.shape[0], dtype=np.int64)
        rows = np.arange(x.shape[0])
        active = self.feature[node] >= 0
        while active.any():
            idx = rows[active]
            nd = node[idx]
            go_left = x[idx, self.feature[nd]] <= self.threshold[nd]
            node[idx] = np.where(go_left, self.left[nd], self.right[nd])
            active = self.feature[node] >= 0
        return node


@dataclass(frozen=True)
class RfModel:
    trees: tuple[Tree, ...]
    n_classes: int
    n_features: int
    mtry: int
    seed: int
    min_leaf: int = 1
    oob_accuracy: float = float("nan")

    @property
    def n_trees(self) -> int:
        return len(self.trees)


def bootstrap_indices(seed: int, tree: int, n: int) -> np.ndarray:
    """The ``n`` draws (with replacement) used to grow tree ``tree``."""
    return rng.stream(seed, "rf", "bootstrap", tree).integers(0, n, size=n)


def _best_split(xs: np.ndarray, ys: np.ndarray, n_classes: int, min_leaf: int):
    """Best Gini split over the columns of ``xs``.

    Returns ``(score, column, threshold)`` or ``None`` if no column has a
    valid cut. The score is the sum over children of sum_k n_k^2 / n, which
    is maximal where weighted Gini impurity is minimal.
    """
    n = xs.shape[0]
    order = np.argsort(xs, axis=0, kind="stable")
    vals = np.take_along_axis(xs, order, axis=0)
    lab = ys[order]
    onehot = lab[:, :, None] == np.arange(n_classes)
    left = np.cumsum(onehot, axis=0)[:-1].astype(np.float64)  # left holds rows [0, i]
    total = left[-1] + onehot[-1]
    right = total[None] - left
    n_left = np.arange(1, n, dtype=np.float64)[:, None]
    n_right = n - n_left
    score = (left ** 2).sum(axis=2) / n_left + (right ** 2).sum(axis=2) / n_right
    valid = vals[1:] > vals[:-1]
    if min_leaf > 1:
        valid &= (n_left >= min_leaf) & (n_right >= min_leaf)
    if not valid.any():
        return None
    score = np.where(valid, score, -np.inf)
    # ties: smallest column first, then earliest cut
    flat = int(np.argmax(score.T))
    col, pos = divmod(flat, n - 1)
    thr = 0.5 * (vals[pos, col] + vals[pos + 1, col])
    if not thr < vals[pos + 1, col]:  # midpoint rounded onto the upper value
        thr = vals[pos, col]
    return float(score[pos, col]), col, float(thr)


def grow_tree(x: np.ndarray, y: np.ndarray, sample: np.ndarray, n_classes: int,
              mtry: int, g: np.random.Generator, min_leaf: int = 1,
              max_depth: int | None = None) -> Tree:
    feature, threshold, left, right, counts = [], [], [], [], []

    def new_node(idx):
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        counts.append(np.bincount(y[idx], minlength=n_classes))
        return len(feature) - 1

    stack = [(new_node(sample), sample, 0)]
    d = x.shape[1]
    while stack:
        node, idx, depth = stack.pop()
        if np.count_nonzero(counts[node]) <= 1 or idx.size < 2 * min_leaf:
            continue
        if max_depth is not None and depth >= max_depth:
            continue
        found = None
        perm = g.permutation(d)
        for lo in range(0, d, mtry):
            feats = perm[lo:lo + mtry]
            found = _best_split(x[np.ix_(idx, feats)], y[idx], n_classes, min_leaf)
            if found is not None:
                _, col, thr = found
                found = (int(feats[col]), thr)
                break
        if found is None:
            continue
        f, thr = found
        mask = x[idx, f] <= thr
        li, ri = idx[mask], idx[~mask]
        feature[node], threshold[node] = f, thr
        left[node] = new_node(li)
        right[node] = new_node(ri)
        stack.append((right[node], ri, depth + 1))
        stack.append((left[node], li, depth + 1))
    return Tree(
        np.array(feature, dtype=np.int64),
        np.array(threshold, dtype=np.float64),
        np.array(left, dtype=np.int64),
        np.array(right, dtype=np.int64),
        np.array(counts, dtype=np.int64).reshape(-1, n_classes),
    )


def default_mtry(d: int) -> int:
    return max(1, int(np.floor(np.sqrt(d) + 0.5)))


def fit_rf(x, y, n_trees: int = 50, mtry: int | None = None, seed: int = 0,
           min_leaf: int = 1, max_depth: int | None = None,
           n_classes: int | None = None) -> RfModel:
    """Grow ``n_trees`` trees, each on a bootstrap sample of the trials.

    Every split looks at ``mtry`` features drawn at random (more are drawn
    only if all of those are constant on the node). Trees are grown from
    independent seed streams, so the forest does not depend on worker count.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if x.ndim != 2 or x.shape[0] != y.shape[0]:
        raise DimensionMismatch("features must be (trials, d) with one label per trial")
    n, d = x.shape
    if n < 2 or np.unique(y).size < 2:
        raise TooFewTrials("random forest needs at least two trials and two classes")
    mtry = default_mtry(d) if mtry is None else int(mtry)
    if not 1 <= mtry <= d:
        raise InvalidMtry(f"mtry must lie in [1, {d}], got {mtry}")
    k = int(n_classes or y.max() + 1)

    def one(t):
        sample = bootstrap_indices(seed, t, n)
        return grow_tree(x, y, sample, k, mtry, rng.stream(seed, "rf", "splits", t),
                         min_leaf, max_depth)

    trees = tuple(pmap(one, range(n_trees)))
    votes = np.zeros((n, k))
    for t, tree in enumerate(trees):
        oob = np.setdiff1d(np.arange(n), bootstrap_indices(seed, t, n))
        if oob.size:
            leaf = tree.leaf_class()[tree.apply(x[oob])]
            votes[oob, leaf] += 1
    seen = votes.sum(axis=1) > 0
    oob_acc = float(np.mean(np.argmax(votes[seen], axis=1) == y[seen])) if seen.any() else float("nan")
    return RfModel(trees, k, d, mtry, int(seed), int(min_leaf), oob_acc)


def vote_counts(m: RfModel, x) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[1] != m.n_features:
        raise DimensionMismatch(f"expected {m.n_features} features, got {x.shape[1]}")
    votes = np.zeros((x.shape[0], m.n_classes), dtype=np.int64)
    rows = np.arange(x.shape[0])
    for tree in m.trees:
        np.add.at(votes, (rows, tree.leaf_class()[tree.apply(x)]), 1)
    return votes


def predict_rf(m: RfModel, x):
    """Majority vote for one vector: ``(class, vote counts)``; ties go low."""
    votes = vote_counts(m, np.asarray(x, dtype=np.float64).reshape(1, -1))[0]
    return int(np.argmax(votes)), votes


def predict_many(m: RfModel, x) -> np.ndarray:
    return np.argmax(vote_counts(m, x), axis=1)
