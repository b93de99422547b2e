"""Command-line pipeline: synth -> preprocess -> epoch -> reject -> train -> evaluate -> compare.

Every command reads the resolved configuration of its input directory (if
any), applies ``--config`` and ``--set section.key=value`` on top and writes
the result as ``config.ini`` beside its outputs. Errors are reported as one
line on stderr, ``error: <Kind>: <message>``, with exit status 2 (usage),
3 (data) or 4 (numerical).
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path


from . import __version__, epoching, evaluation, io, synth
from .config import PipelineConfig, apply_overrides, load_config, parse_ini
from .core import concat_epochs, make_split_plan, validate_events, validate_recording
from .dsp import preprocess_chain
from .errors import DataError, MrcpError, UsageError

RECORDING = "recording.eegr"
EVENTS = "events.csv"
EPOCHS = "epochs.mrca"
CONFIG = "config.ini"
MODEL = "model.mrca"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _common(p: argparse.ArgumentParser, need_in: bool = True):
    if need_in:
        p.add_argument("--in", dest="inp", required=True, help="input directory")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--config", help="INI file with pipeline settings")
    p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override one setting (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="mrcp", description="Offline MRCP movement decoding pipeline.")
    ap.add_argument("--version", action="version", version=f"mrcp {__version__}")
    sub = ap.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic recording with events")
    _common(p, need_in=False)
    p.add_argument("--seed", type=int, help="generator seed (overrides synth.seed)")

    p = sub.add_parser("preprocess", help="filter, re-reference and downsample")
    _common(p)

    p = sub.add_parser("epoch", help="cut movement and rest epochs")
    _common(p)

    p = sub.add_parser("reject", help="drop amplitude and kurtosis outliers")
    _common(p)

    p = sub.add_parser("train", help="cross-validate and fit one classifier")
    _common(p)
    p.add_argument("--model", required=True, choices=evaluation.MODEL_KINDS)
    p.add_argument("--window", type=float, help="window length in s (sLDA and RF)")
    p.add_argument("--participant", default="P1")

    p = sub.add_parser("evaluate", help="score a model file on its validation split")
    _common(p)
    p.add_argument("--model-file", required=True)
    p.add_argument("--participant", default="P1")

    p = sub.add_parser("gridsearch", help="CNN hyper-parameter grid search")
    p.add_argument("--in", dest="inp", nargs="+", required=True,
                   help="one epoch directory per participant")
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--set", action="append", default=[])

    p = sub.add_parser("compare", help="merge per-participant reports into one table")
    p.add_argument("--reports", nargs="+", required=True, help="report.csv files")
    p.add_argument("--out", required=True)

    p = sub.add_parser("validate", help="check a recording and its events")
    p.add_argument("--in", dest="inp", required=True)
    return ap


# --- helpers ------------------------------------------------------------

def _resolve_config(args, inp: Path | None) -> PipelineConfig:
    base = None
    if inp is not None and (inp / CONFIG).exists():
        base = parse_ini((inp / CONFIG).read_text(encoding="utf-8"))
    return load_config(args.config, args.set, base)


def _need(path: Path) -> Path:
    if not path.exists():
        raise DataError(f"missing input file {path}")
    return path


def _write_config(out: Path, cfg: PipelineConfig) -> None:
    text = (f"# fingerprint {cfg.fingerprint()}\n"
            f"# preprocessing {cfg.preprocessing_fingerprint()}\n" + cfg.to_ini())
    io.atomic_write_text(out / CONFIG, text)


def _split_for(e, cfg):
    c = cfg.cv
    return make_split_plan(e.labels, c.seed, n_repeats=c.n_repeats, n_folds=c.n_folds,
                           validation_fraction=c.validation_fraction)


def _provenance(cfg: PipelineConfig) -> dict:
    return {"config_fingerprint": cfg.fingerprint(),
            "preprocessing_fingerprint": cfg.preprocessing_fingerprint()}


# --- commands -----------------------------------------------------------

def cmd_synth(args):
    cfg = _resolve_config(args, None)
    if args.seed is not None:
        cfg = apply_overrides(cfg, [f"synth.seed={args.seed}"])
    rec, ev, _ = synth.generate(cfg.synth_spec())
    out = Path(args.out)
    io.write_recording(out / RECORDING, rec)
    io.write_events(out / EVENTS, ev)
    _write_config(out, cfg)


def cmd_preprocess(args):
    inp, out = Path(args.inp), Path(args.out)
    cfg = _resolve_config(args, inp)
    rec = io.read_recording(_need(inp / RECORDING))
    ev = io.read_events(_need(inp / EVENTS))
    pre = preprocess_chain(rec, cfg.preprocess_config())
    io.write_recording(out / RECORDING, pre)
    io.write_events(out / EVENTS, ev.rescaled(rec.fs, pre.fs))
    _write_config(out, cfg)


def cmd_epoch(args):
    inp, out = Path(args.inp), Path(args.out)
    cfg = _resolve_config(args, inp)
    rec = io.read_recording(_need(inp / RECORDING))
    ev = io.read_events(_need(inp / EVENTS))
    c = cfg.epoch
    parts = [epoching.extract_epochs(rec, ev, c.t_pre, c.t_post)]
    if c.rest_trials > 0:
        parts.append(epoching.extract_rest_epochs(rec, ev, c.rest_epoch_s, c.rest_trials,
                                                  -c.t_pre))
    io.write_epochs(out / EPOCHS, concat_epochs(parts), _provenance(cfg))
    _write_config(out, cfg)


def cmd_reject(args):
    inp, out = Path(args.inp), Path(args.out)
    cfg = _resolve_config(args, inp)
    e, _ = io.read_epochs(_need(inp / EPOCHS))
    kept, report = epoching.reject_outliers(e, cfg.reject.amp_limit_uv, cfg.reject.kurt_factor)
    io.write_epochs(out / EPOCHS, kept, _provenance(cfg))
    io.atomic_write_text(out / "rejection.txt", report.table())
    _write_config(out, cfg)


def _write_report(out: Path, report, participant: str) -> None:
    io.atomic_write_text(out / "report.txt", evaluation.report_text(report))
    io.atomic_write_text(out / "report.csv",
                         evaluation.records_csv([evaluation.report_record(report, participant)]))


def cmd_train(args):
    inp, out = Path(args.inp), Path(args.out)
    cfg = _resolve_config(args, inp)
    if args.window is not None:
        if args.model == "cnn":
            raise UsageError("--window applies to slda and rf only")
        cfg = apply_overrides(cfg, [f"{args.model}.window_s={args.window!r}"])
    e, _ = io.read_epochs(_need(inp / EPOCHS))
    split = _split_for(e, cfg)
    report, model = evaluation.cross_validate(e, args.model, cfg, split)
    io.write_model(out / MODEL, model, {"classes": list(e.classes), **_provenance(cfg),
                                        "split_seed": split.seed,
                                        "window_start": report.window_start,
                                        "window_len": report.window_len})
    _write_report(out, report, args.participant)
    io.atomic_write_text(out / "folds.csv", "repeat,fold,accuracy\n" + "".join(
        f"{i // split.n_folds},{i % split.n_folds},{a!r}\n" for i, a in enumerate(report.per_fold)))
    _write_config(out, cfg)


def cmd_evaluate(args):
    from .nn import model as nn_model
    from .rf import RfModel, predict_many as rf_predict
    from .slda import SldaModel, flatten_window, predict_many as slda_predict

    inp, out = Path(args.inp), Path(args.out)
    cfg = _resolve_config(args, inp)
    e, _ = io.read_epochs(_need(inp / EPOCHS))
    model, meta = io.read_model(_need(Path(args.model_file)))
    split = _split_for(e, cfg)
    val = split.validation_indices
    if isinstance(model, SldaModel):
        x = flatten_window(e, model.window_start, model.window_len)[val]
        pred, start, length = slda_predict(model, x), model.window_start, model.window_len
    elif isinstance(model, RfModel):
        start, length = int(meta["window_start"]), int(meta["window_len"])
        pred = rf_predict(model, flatten_window(e, start, length)[val])
    else:
        pred, start, length = nn_model.predict(model, e.tensor[val]), -1, 0
    truth = e.labels[val]
    k = len(e.classes)
    report = evaluation.EvalReport(
        model_kind=meta["kind"], accuracy=evaluation.accuracy(pred, truth),
        confusion=evaluation.confusion_matrix(pred, truth, k), classes=e.classes,
        chance_level=evaluation.chance_level(k, truth.size, cfg.cv.alpha),
        n_validation=int(truth.size), per_fold=(), window_start=start, window_len=length,
        config_fingerprint=cfg.fingerprint(),
        preprocessing_fingerprint=cfg.preprocessing_fingerprint(), seed=split.seed)
    _write_report(out, report, args.participant)
    _write_config(out, cfg)


def cmd_gridsearch(args):
    from .nn.train import grid_search

    inputs = [Path(p) for p in args.inp]
    cfg = _resolve_config(args, inputs[0])
    datasets = [io.read_epochs(_need(p / EPOCHS))[0] for p in inputs]
    record: list = []
    e0 = datasets[0]
    spec = grid_search(cfg.grid_ranges(), datasets, cfg.train_config(cv=True),
                       base=cfg.cnn_spec(e0.n_channels, len(e0.classes)),
                       n_folds=cfg.grid.n_folds, record=record)
    out = Path(args.out)
    keys = sorted(cfg.grid_ranges())
    lines = ["participant," + ",".join(keys) + ",score"]
    for p, combo, score in record:
        if combo == "best":
            continue
        lines.append(f"{p}," + ",".join(str(combo[k]) for k in keys) + f",{score:.6f}")
    io.atomic_write_text(out / "gridsearch.csv", "\n".join(lines) + "\n")
    chosen = {k: getattr(spec, k) for k in keys}
    io.atomic_write_text(out / "chosen.json", json.dumps(chosen, sort_keys=True) + "\n")
    _write_config(out, apply_overrides(cfg, [f"cnn.{k}={v}" for k, v in chosen.items()]))


def cmd_compare(args):
    reports: dict = {}
    for path in args.reports:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise DataError(f"cannot read report {path}: {exc.strerror}") from None
        for row in evaluation.read_records_csv(text):
            reports.setdefault(row["participant"], {})[row["model"]] = _RowReport(row)
    table = evaluation.compare_models(reports)
    out = Path(args.out)
    io.atomic_write_text(out / "comparison.csv", table.to_csv())
    io.atomic_write_text(out / "comparison.txt", table.to_text())


class _RowReport:
    """Just enough of a report, read back from a CSV record, for comparison."""

    def __init__(self, row):
        self.accuracy = float(row["accuracy"])
        self.preprocessing_fingerprint = row["preprocessing_fingerprint"]

    def __float__(self):
        return self.accuracy


def cmd_validate(args):
    inp = Path(args.inp)
    rec = io.read_recording(_need(inp / RECORDING))
    ev = io.read_events(_need(inp / EVENTS))
    problems = validate_recording(rec) + validate_events(ev, rec.n_samples, rec.fs)
    for v in problems:
        print(str(v))
    if problems:
        raise DataError(f"{len(problems)} validation problem(s) found")
    print("ok")


COMMANDS = {
    "synth": cmd_synth, "preprocess": cmd_preprocess, "epoch": cmd_epoch,
    "reject": cmd_reject, "train": cmd_train, "evaluate": cmd_evaluate,
    "gridsearch": cmd_gridsearch, "compare": cmd_compare, "validate": cmd_validate,
}


def run_command(argv) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.command is None:
            raise UsageError("a subcommand is required: " + ", ".join(COMMANDS))
        COMMANDS[args.command](args)
    except MrcpError as exc:
        msg = " ".join(str(exc).split())
        print(f"error: {type(exc).__name__}: {msg}", file=sys.stderr)
        return exc.exit_code
    return 0


def main(argv=None) -> int:
    return run_command(sys.argv[1:] if argv is None else argv)


if __name__ == "__main__":
    sys.exit(main())
