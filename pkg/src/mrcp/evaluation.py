"""Accuracy, chance level, repeated cross-validation and comparison tables."""
from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import stats

from . import rf as rf_mod
from . import slda as slda_mod
from .core import EpochSet, SplitPlan, check_split_plan
from .errors import (
    DataError,
    EmptyInput,
    InvalidAlpha,
    LengthMismatch,
    MrcpError,
    TooFewTrials,
)
from .nn import model as nn_model
from .nn import train as nn_train
from .parallel import pmap

log = logging.getLogger(__name__)

MODEL_KINDS = ("cnn", "slda", "rf")


class FingerprintMismatch(DataError):
    pass


class LeakDetected(DataError):
    pass


def accuracy(preds, truth) -> float:
    preds, truth = np.asarray(preds), np.asarray(truth)
    if preds.shape[0] != truth.shape[0]:
        raise LengthMismatch(f"{preds.shape[0]} predictions for {truth.shape[0]} labels")
    if truth.shape[0] == 0:
        raise EmptyInput("accuracy of an empty set is undefined")
    return float(np.mean(preds == truth))


def chance_level(n_classes: int, n: int, alpha: float = 0.05) -> float:
    """Upper adjusted-Wald bound around ``1 / n_classes`` for ``n`` trials."""
    if not 0 < alpha < 1:
        raise InvalidAlpha(f"alpha must lie in (0, 1), got {alpha}")
    if n_classes < 2 or n < 1:
        raise DataError("chance level needs at least two classes and one trial")
    z = stats.norm.ppf(1 - alpha / 2)
    z2 = z * z
    p0 = 1.0 / n_classes
    pt = (n * p0 + z2 / 2) / (n + z2)
    return float(pt + z * math.sqrt(pt * (1 - pt) / (n + z2)))


def confusion_matrix(preds, truth, n_classes: int) -> np.ndarray:
    """Counts with rows = true class, columns = predicted class."""
    preds, truth = np.asarray(preds, dtype=np.int64), np.asarray(truth, dtype=np.int64)
    if preds.shape != truth.shape:
        raise LengthMismatch("predictions and labels differ in length")
    out = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(out, (truth, preds), 1)
    return out


@dataclass(frozen=True)
class EvalReport:
    model_kind: str
    accuracy: float
    confusion: np.ndarray
    classes: tuple[str, ...]
    chance_level: float
    n_validation: int
    per_fold: tuple[float, ...]
    failed_folds: tuple[int, ...] = ()
    window_start: int = -1
    window_len: int = 0
    config_fingerprint: str = ""
    preprocessing_fingerprint: str = ""
    seed: int = 0
    leaks: int = 0
    extra: dict = field(default_factory=dict)

    @property
    def incomplete(self) -> bool:
        return bool(self.failed_folds)

    @property
    def cv_mean(self) -> float:
        return float(np.mean(self.per_fold)) if self.per_fold else float("nan")

    @property
    def cv_std(self) -> float:
        return float(np.std(self.per_fold)) if self.per_fold else float("nan")

    def __eq__(self, other):
        if not isinstance(other, EvalReport):
            return NotImplemented
        return report_text(self) == report_text(other)

    __hash__ = None


class FitLog:
    """Records the trial indices every training call receives."""

    def __init__(self):
        self.calls: list[tuple[str, np.ndarray]] = []

    def append(self, entry):
        self.calls.append((entry[0], np.asarray(entry[1], dtype=np.int64)))

    def leaks(self, validation) -> int:
        val = set(np.asarray(validation).tolist())
        return sum(len(val.intersection(idx.tolist())) for _, idx in self.calls)


# --- per-model fold runners ---------------------------------------------

def _slda_fold_scores(e, split, cfg, fit_log, score_folds=True):
    # the window search is itself cross-validated, so folds always run
    length = slda_mod.window_samples(cfg.slda.window_s, e.fs)
    sel = slda_mod.sliding_window_select(e, cfg.slda.window_s, cfg.slda.step, split,
                                         log=fit_log)
    best = sel.starts.index(sel.best_start)
    per_fold = sel.fold_accuracies[best]
    x = slda_mod.flatten_window(e, sel.best_start, length)
    pred = slda_mod.predict_many(sel.model, x[split.validation_indices])
    return sel.model, per_fold, pred, sel.best_start, length, {"curve": sel.curve.tolist()}


def _rf_fit(cfg, x, y, n_classes, seed):
    mtry = cfg.rf.mtry or None
    return rf_mod.fit_rf(x, y, n_trees=cfg.rf.n_trees, mtry=mtry, seed=seed,
                         min_leaf=cfg.rf.min_leaf, n_classes=n_classes)


def _rf_fold_scores(e, split, cfg, fit_log, score_folds=True):
    """Window chosen by out-of-bag accuracy on the training set, then CV at that window."""
    k = len(e.classes)
    length = slda_mod.window_samples(cfg.rf.window_s, e.fs)
    starts = slda_mod.window_starts(e.n_samples, length, cfg.rf.step)
    if not starts:
        raise DataError(f"window of {length} samples longer than the epoch")
    train = split.train_indices
    y = e.labels

    def oob(start):
        x = slda_mod.flatten_window(e, start, length)
        return _rf_fit(cfg, x[train], y[train], k, cfg.rf.seed).oob_accuracy

    fit_log.append(("fit", train))
    curve = np.array(pmap(oob, starts))
    start = starts[slda_mod.pick_best(curve)]
    x = slda_mod.flatten_window(e, start, length)

    pairs = list(split.fold_pairs()) if score_folds else []
    for _, _, fit, _ in pairs:
        fit_log.append(("fit", fit))

    def fold(pair):
        r, kf, fit, held = pair
        m = _rf_fit(cfg, x[fit], y[fit], k, cfg.rf.seed + 1 + r * split.n_folds + kf)
        return accuracy(rf_mod.predict_many(m, x[held]), y[held])

    per_fold = np.array(pmap(fold, pairs))
    model = _rf_fit(cfg, x[train], y[train], k, cfg.rf.seed)
    pred = rf_mod.predict_many(model, x[split.validation_indices])
    return model, per_fold, pred, start, length, {"oob_curve": curve.tolist()}


def _cnn_fold_scores(e, split, cfg, fit_log, score_folds=True):
    spec = cfg.cnn_spec(e.n_channels, len(e.classes))
    cv_cfg = cfg.train_config(cv=True)
    pairs = list(split.fold_pairs()) if score_folds else []
    for _, _, fit, _ in pairs:
        fit_log.append(("fit", fit))

    def fold(pair):
        r, kf, fit, held = pair
        c = replace(cv_cfg, seed=cv_cfg.seed + 1 + r * split.n_folds + kf)
        try:
            m, _ = nn_train.train_cnn(spec, e.subset(fit), c)
        except MrcpError as exc:
            log.warning("CNN fold %d/%d failed: %s", r, kf, exc)
            return float("nan")
        return accuracy(nn_model.predict(m, e.tensor[held]), e.labels[held])

    per_fold = np.array(pmap(fold, pairs))
    fit_log.append(("fit", split.train_indices))
    model, hist = nn_train.train_cnn(spec, e.subset(split.train_indices), cfg.train_config())
    pred = nn_model.predict(model, e.tensor[split.validation_indices])
    return model, per_fold, pred, -1, 0, {"best_epoch": hist.best_epoch,
                                          "epochs_run": len(hist.train_loss),
                                          "diverged": hist.diverged}


RUNNERS = {"slda": _slda_fold_scores, "rf": _rf_fold_scores, "cnn": _cnn_fold_scores}


def cross_validate(e: EpochSet, model_kind: str, cfg, split: SplitPlan,
                   score_folds: bool = True):
    """Run the CV protocol and the final validation fit; returns ``(report, model)``.

    Fold accuracies come from the repeated k-fold plan over the training
    trials. The final model is refit on all training trials and scored once
    on the validation trials. Every training call is logged, and the log is
    checked for validation indices before the report is issued.

    With ``score_folds=False`` the fold accuracies are skipped wherever the
    final model does not depend on them (RF and CNN); ``per_fold`` is then
    empty. sLDA always runs its folds because they choose the window.
    """
    if model_kind not in RUNNERS:
        raise DataError(f"unknown model kind {model_kind!r}; expected one of {MODEL_KINDS}")
    if split.n_trials != e.n_trials:
        raise DataError(f"split plan covers {split.n_trials} trials, dataset has {e.n_trials}")
    problems = check_split_plan(split, e.labels)
    if problems:
        raise DataError("invalid split plan: " + "; ".join(problems))
    if split.validation_indices.size == 0:
        raise TooFewTrials("the split plan has no validation trials")

    fit_log = FitLog()
    runner = RUNNERS[model_kind]
    model, per_fold, pred, start, length, extra = runner(e, split, cfg, fit_log, score_folds)
    per_fold = np.asarray(per_fold, dtype=np.float64)
    failed = tuple(int(i) for i in np.flatnonzero(~np.isfinite(per_fold)))
    leaks = fit_log.leaks(split.validation_indices)
    if leaks:
        raise LeakDetected(f"{leaks} validation indices reached a training call")

    truth = e.labels[split.validation_indices]
    k = len(e.classes)
    report = EvalReport(
        model_kind=model_kind,
        accuracy=accuracy(pred, truth),
        confusion=confusion_matrix(pred, truth, k),
        classes=e.classes,
        chance_level=chance_level(k, truth.size, cfg.cv.alpha),
        n_validation=int(truth.size),
        per_fold=tuple(float(a) for a in per_fold),
        failed_folds=failed,
        window_start=int(start),
        window_len=int(length),
        config_fingerprint=cfg.fingerprint(),
        preprocessing_fingerprint=cfg.preprocessing_fingerprint(),
        seed=int(split.seed),
        leaks=leaks,
        extra=extra,
    )
    return report, model


def run_cv(e: EpochSet, model_kind: str, cfg, split: SplitPlan) -> EvalReport:
    return cross_validate(e, model_kind, cfg, split)[0]


# --- report serialisation -----------------------------------------------

REPORT_FIELDS = ("participant", "model", "window_start", "window_len", "accuracy",
                 "chance_level", "n_validation", "cv_mean", "cv_std", "n_folds",
                 "failed_folds", "seed", "config_fingerprint", "preprocessing_fingerprint")


def report_record(r: EvalReport, participant: str = "P1") -> dict:
    return {
        "participant": participant, "model": r.model_kind,
        "window_start": r.window_start, "window_len": r.window_len,
        "accuracy": f"{r.accuracy:.6f}", "chance_level": f"{r.chance_level:.6f}",
        "n_validation": r.n_validation, "cv_mean": f"{r.cv_mean:.6f}",
        "cv_std": f"{r.cv_std:.6f}", "n_folds": len(r.per_fold),
        "failed_folds": len(r.failed_folds), "seed": r.seed,
        "config_fingerprint": r.config_fingerprint,
        "preprocessing_fingerprint": r.preprocessing_fingerprint,
    }


def records_csv(records) -> str:
    out = io.StringIO()
    w = csv.DictWriter(out, fieldnames=REPORT_FIELDS, lineterminator="\n")
    w.writeheader()
    for rec in records:
        w.writerow(rec)
    return out.getvalue()


def read_records_csv(text: str) -> list[dict]:
    rows = list(csv.DictReader(io.StringIO(text)))
    if rows and set(rows[0]) != set(REPORT_FIELDS):
        raise DataError("report file does not have the expected columns")
    return rows


def confusion_text(confusion: np.ndarray, classes) -> str:
    names = [str(c) for c in classes]
    width = max(8, *(len(n) for n in names)) + 1
    lines = ["truth\\pred".ljust(width) + "".join(n.rjust(width) for n in names)]
    for name, row in zip(names, confusion):
        lines.append(name.ljust(width) + "".join(str(int(v)).rjust(width) for v in row))
    return "\n".join(lines)


def report_text(r: EvalReport) -> str:
    lines = [
        f"model                      {r.model_kind}",
        f"validation accuracy        {r.accuracy:.4f}",
        f"chance level               {r.chance_level:.4f}  (n = {r.n_validation})",
        f"cv folds                   {len(r.per_fold)}  (failed {len(r.failed_folds)})",
        f"cv mean / std              {r.cv_mean:.4f} / {r.cv_std:.4f}",
    ]
    if r.window_len:
        lines.append(f"best window start          {r.window_start}  (length {r.window_len})")
    lines += [
        f"split seed                 {r.seed}",
        f"leaked validation indices  {r.leaks}",
        f"config fingerprint         {r.config_fingerprint}",
        f"preprocessing fingerprint  {r.preprocessing_fingerprint}",
        "",
        "confusion (rows = truth)",
        confusion_text(r.confusion, r.classes),
        "",
        "fold accuracies",
    ]
    folds = [f"{a:.4f}" for a in r.per_fold]
    for i in range(0, len(folds), 10):
        lines.append(" ".join(folds[i:i + 10]))
    return "\n".join(lines) + "\n"


# --- comparison tables --------------------------------------------------

@dataclass(frozen=True)
class Comparison:
    participants: tuple[str, ...]
    models: tuple[str, ...]
    accuracy: np.ndarray  # (participants, models)
    mean: np.ndarray
    std: np.ndarray  # sample standard deviation (n - 1); 0 for a single participant
    best: np.ndarray  # index of the best model per participant
    preprocessing_fingerprint: str = ""

    def records(self) -> list[dict]:
        rows = []
        for i, p in enumerate(self.participants):
            row = {"participant": p}
            row.update({m: f"{self.accuracy[i, j]:.4f}" for j, m in enumerate(self.models)})
            row["best"] = self.models[self.best[i]]
            rows.append(row)
        rows.append({"participant": "MEAN", **{m: f"{v:.4f}" for m, v in zip(self.models, self.mean)},
                     "best": ""})
        rows.append({"participant": "STD", **{m: f"{v:.4f}" for m, v in zip(self.models, self.std)},
                     "best": ""})
        return rows

    def to_csv(self) -> str:
        out = io.StringIO()
        w = csv.DictWriter(out, fieldnames=["participant", *self.models, "best"],
                           lineterminator="\n")
        w.writeheader()
        w.writerows(self.records())
        return out.getvalue()

    def to_text(self) -> str:
        """Aligned table; the best model of each participant carries a ``*``."""
        width = max(10, *(len(m) + 2 for m in self.models))
        pw = max(12, *(len(p) + 1 for p in self.participants))
        lines = ["".ljust(pw) + "".join(m.rjust(width) for m in self.models)]
        for i, p in enumerate(self.participants):
            cells = []
            for j in range(len(self.models)):
                mark = "*" if j == self.best[i] else " "
                cells.append(f"{self.accuracy[i, j]:.2f}{mark}".rjust(width))
            lines.append(p.ljust(pw) + "".join(cells))
        lines.append("MEAN".ljust(pw) + "".join(f"{v:.2f} ".rjust(width) for v in self.mean))
        lines.append("STD".ljust(pw) + "".join(f"{v:.2f} ".rjust(width) for v in self.std))
        return "\n".join(lines) + "\n"


def compare_models(reports: dict) -> Comparison:
    """Build the per-participant table from ``{participant: {model: report}}``.

    Values may be :class:`EvalReport` objects or plain accuracies. Reports
    whose preprocessing fingerprints differ are refused. Ties for best go
    to the model listed first.
    """
    if not reports:
        raise EmptyInput("comparison needs at least one participant")
    participants = tuple(reports)
    models = []
    for per in reports.values():
        for m in per:
            if m not in models:
                models.append(m)
    order = {m: i for i, m in enumerate(MODEL_KINDS)}
    models = sorted(models, key=lambda m: (order.get(m, len(order)), m))
    prints = {getattr(r, "preprocessing_fingerprint", "") for per in reports.values()
              for r in per.values()} - {""}
    if len(prints) > 1:
        raise FingerprintMismatch(
            f"reports come from {len(prints)} different preprocessing configurations"
        )
    acc = np.full((len(participants), len(models)), np.nan)
    for i, p in enumerate(participants):
        for j, m in enumerate(models):
            if m in reports[p]:
                r = reports[p][m]
                acc[i, j] = r.accuracy if isinstance(r, EvalReport) else float(r)
    mean = np.nanmean(acc, axis=0)
    std = np.array([np.std(col[~np.isnan(col)], ddof=1) if np.sum(~np.isnan(col)) > 1 else 0.0
                    for col in acc.T])
    best = np.argmax(np.where(np.isnan(acc), -np.inf, acc), axis=1)
    return Comparison(participants, tuple(models), acc, mean, std, best,
                      prints.pop() if prints else "")
