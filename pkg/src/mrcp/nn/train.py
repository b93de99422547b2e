"""Training loop, optimiser and hyper-parameter grid search for the CNN."""
from __future__ import annotations

import itertools
import logging
from collections import Counter
from dataclasses import dataclass, field, replace

import numpy as np

from .. import rng
from ..core import EpochSet, make_split_plan
from ..errors import DataError, MrcpError, NonFiniteLoss, TooFewTrials
from ..parallel import pmap
from .model import CnnModel, CnnSpec, predict, predict_proba, train_step_gradients

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 16
    max_epochs: int = 300
    early_stop_patience: int = 20
    holdout_fraction: float = 0.2
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    weight_decay: float = 0.0
    seed: int = 0
    dtype: str = "float32"

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise DataError("learning_rate must be non-negative")
        if not self.weight_decay >= 0:
            raise DataError("weight_decay must be non-negative")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise DataError("batch_size and max_epochs must be at least 1")


class Adam:
    def __init__(self, params: dict, lr, beta1, beta2, eps):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, grads: dict) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1 - b1 ** self.t
        c2 = 1 - b2 ** self.t
        for k, p in self.params.items():
            g = grads[k]
            m, v = self.m[k], self.v[k]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * (g * g)
            p -= (self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.dtype, copy=False)


@dataclass
class History:
    # training loss and accuracy are taken from the batches as they were fitted
    train_loss: list = field(default_factory=list)
    train_accuracy: list = field(default_factory=list)
    holdout_loss: list = field(default_factory=list)
    holdout_accuracy: list = field(default_factory=list)
    best_epoch: int = -1
    diverged: bool = False

    def as_rows(self):
        for i in range(len(self.train_loss)):
            yield (i, self.train_loss[i], self.train_accuracy[i],
                   self.holdout_loss[i], self.holdout_accuracy[i])


DECAYED = ("conv1.weight", "conv2.weight", "fc1.weight", "fc2.weight")


def _holdout_split(labels: np.ndarray, fraction: float, seed: int):
    """Stratified ``fraction`` of trials held back for early stopping."""
    g = rng.stream(seed, "cnn", "holdout")
    fit, held = [], []
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        idx = idx[g.permutation(idx.size)]
        k = int(np.floor(fraction * idx.size + 0.5))
        if idx.size - k < 1:
            k = idx.size - 1
        held.append(idx[:k])
        fit.append(idx[k:])
    return np.sort(np.concatenate(fit)), np.sort(np.concatenate(held))


def _score(model: CnnModel, x, y) -> tuple[float, float]:
    """Mean negative log-likelihood and accuracy from one inference pass."""
    p = predict_proba(model, x)
    nll = float(-np.mean(np.log(np.maximum(p[np.arange(len(y)), y], 1e-300))))
    return nll, float(np.mean(np.argmax(p, axis=1) == y))


def train_cnn(spec: CnnSpec, train: EpochSet, cfg: TrainConfig = TrainConfig(),
              log_calls: list | None = None):
    """Train one network; returns ``(model, history)``.

    The returned parameters are those with the lowest loss on the held-back
    trials. On a non-finite loss training stops and the last finite state is
    returned with ``history.diverged`` set.
    """
    y_all = train.labels
    if train.n_trials < cfg.batch_size:
        raise TooFewTrials(f"{train.n_trials} trials is fewer than one batch of {cfg.batch_size}")
    if np.unique(y_all).size < 2:
        raise TooFewTrials("training set needs at least two classes")
    if log_calls is not None:
        log_calls.append(("fit", None))
    spec = replace(spec, n_classes=max(spec.n_classes, len(train.classes)))
    dtype = np.dtype(cfg.dtype)
    model = CnnModel.init(spec, train.n_channels, train.n_samples, cfg.seed, dtype=dtype)
    model.mode = "train"

    if cfg.holdout_fraction > 0:
        fit_idx, held_idx = _holdout_split(y_all, cfg.holdout_fraction, cfg.seed)
    else:
        fit_idx, held_idx = np.arange(train.n_trials), np.zeros(0, dtype=np.int64)
    x = train.tensor.astype(dtype)
    x_fit, y_fit = x[fit_idx], y_all[fit_idx]
    x_held, y_held = x[held_idx], y_all[held_idx]

    opt = Adam(model.params, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps)
    hist = History()
    best = (np.inf, {k: v.copy() for k, v in model.params.items()},
            {k: v.copy() for k, v in model.buffers.items()})
    since_best = 0
    n = x_fit.shape[0]
    for epoch in range(cfg.max_epochs):
        order = rng.stream(cfg.seed, "cnn", "shuffle", epoch).permutation(n)
        losses, correct, seen = [], 0, 0
        try:
            for lo in range(0, n, cfg.batch_size):
                idx = order[lo:lo + cfg.batch_size]
                if idx.size < 2 and n >= 2:
                    continue  # batch-norm needs a spread
                loss, grads, logits = train_step_gradients(model, x_fit[idx], y_fit[idx])
                correct += int(np.sum(np.argmax(logits, axis=1) == y_fit[idx]))
                if cfg.weight_decay:
                    for k in DECAYED:
                        grads[k] = grads[k] + cfg.weight_decay * model.params[k]
                losses.append(loss * idx.size)
                seen += idx.size
                opt.step(grads)
                if not all(np.all(np.isfinite(p)) for p in model.params.values()):
                    raise NonFiniteLoss("parameters became non-finite")
        except NonFiniteLoss:
            hist.diverged = True
            log.warning("training diverged at epoch %d", epoch)
            break
        model.mode = "inference"
        hist.train_loss.append(float(np.sum(losses) / max(seen, 1)))
        hist.train_accuracy.append(correct / max(seen, 1))
        if held_idx.size:
            h_loss, h_acc = _score(model, x_held, y_held)
        else:
            h_loss, h_acc = hist.train_loss[-1], hist.train_accuracy[-1]
        model.mode = "train"
        hist.holdout_loss.append(h_loss)
        hist.holdout_accuracy.append(h_acc)
        if h_loss < best[0]:
            best = (h_loss, {k: v.copy() for k, v in model.params.items()},
                    {k: v.copy() for k, v in model.buffers.items()})
            hist.best_epoch = epoch
            since_best = 0
        else:
            since_best += 1
            if since_best >= cfg.early_stop_patience:
                break

    model.load_state(best[1], best[2])
    model.mode = "inference"
    return model, hist


def evaluate_accuracy(model: CnnModel, e: EpochSet) -> float:
    return float(np.mean(predict(model, e.tensor) == e.labels))


DEFAULT_RANGES = {
    "temporal_kernel": (20, 30, 40),
    "depth": (20, 40),
    "pool_kernel": (10, 15),
    "fc1_units": (40, 80),
}


def majority_vote(choices: list[dict]) -> dict:
    """Per parameter, the value chosen most often; ties go to the smaller value."""
    out = {}
    for key in choices[0]:
        counts = Counter(c[key] for c in choices)
        top = max(counts.values())
        out[key] = min(v for v, n in counts.items() if n == top)
    return out


def grid_search(ranges: dict, datasets: list[EpochSet], cfg: TrainConfig = TrainConfig(),
                base: CnnSpec | None = None, n_folds: int = 3,
                record: list | None = None) -> CnnSpec:
    """Per-participant grid search, then a majority vote over participants.

    Each cell is scored by the mean accuracy over ``n_folds`` stratified
    folds of that participant's data. A cell whose training fails scores 0.
    ``record`` (if given) receives ``(participant, combination, score)``
    tuples, and one ``(participant, "best", combination)`` per participant.
    """
    if not ranges or not datasets:
        raise DataError("grid search needs parameter ranges and at least one dataset")
    keys = sorted(ranges)
    combos = [dict(zip(keys, vals))
              for vals in itertools.product(*(sorted(ranges[k]) for k in keys))]
    winners = []
    for p, data in enumerate(datasets):
        spec0 = base or CnnSpec(spatial_kernel=data.n_channels,
                                n_classes=len(data.classes))
        plan = make_split_plan(data.labels, cfg.seed, n_repeats=1, n_folds=n_folds,
                               validation_fraction=0.0)

        def score(combo, data=data, spec0=spec0, plan=plan, p=p):
            spec = replace(spec0, **combo)
            accs = []
            for _, k, fit, held in plan.fold_pairs():
                try:
                    c = replace(cfg, seed=rng.child_seed(cfg.seed, "grid", p, k))
                    model, _ = train_cnn(spec, data.subset(fit), c)
                    accs.append(evaluate_accuracy(model, data.subset(held)))
                except MrcpError as exc:
                    log.info("grid cell %s failed: %s", combo, exc)
                    accs.append(0.0)
            return float(np.mean(accs))

        scores = pmap(score, combos)
        best = int(np.argmax(scores))
        winners.append(combos[best])
        if record is not None:
            record.extend((p, combo, s) for combo, s in zip(combos, scores))
            record.append((p, "best", combos[best]))
    chosen = majority_vote(winners)
    spec0 = base or CnnSpec(spatial_kernel=datasets[0].n_channels,
                            n_classes=len(datasets[0].classes))
    return replace(spec0, **chosen)
