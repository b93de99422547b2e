"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The long-running criteria share one run of the default pipeline (module
fixture ``default_run``), so criteria 2 and 10 report on the same models.
"""
import time
from dataclasses import replace

import numpy as np
import pytest
from scipy import signal

from conftest import pipeline_epochs
from helpers import check_random_models
from mrcp import cli, evaluation
from mrcp.config import PipelineConfig
from mrcp.core import EpochSet, check_split_plan, make_split_plan
from mrcp.dsp import design_filter, filtfilt
from mrcp.nn import CnnModel, CnnSpec, forward
from mrcp.rf import fit_rf, predict_rf
from mrcp.slda import fit_slda, predict_slda, sliding_window_select, window_starts


@pytest.fixture
def announce(request):
    capman = request.config.pluginmanager.getplugin("capturemanager")

    def say(number, name, ok, detail):
        with capman.global_and_fixture_disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {number}: {name} ({detail})")
        return ok
    return say


def _split(e, cfg):
    c = cfg.cv
    return make_split_plan(e.labels, c.seed, n_repeats=c.n_repeats, n_folds=c.n_folds,
                           validation_fraction=c.validation_fraction)


@pytest.fixture(scope="module")
def default_run():
    cfg = PipelineConfig()
    start = time.perf_counter()
    e = pipeline_epochs(cfg.synth_spec())
    plan = _split(e, cfg)
    reports = {kind: evaluation.run_cv(e, kind, cfg, plan) for kind in evaluation.MODEL_KINDS}
    return e, plan, reports, time.perf_counter() - start


# 1 -------------------------------------------------------------------------

def test_criterion_01_chance_level(announce):
    value = evaluation.chance_level(3, 240, 0.05)
    times = []
    for _ in range(200):
        t0 = time.perf_counter()
        evaluation.chance_level(3, 240, 0.05)
        times.append(time.perf_counter() - t0)
    elapsed = float(np.median(times))
    ok = abs(value - 0.40) <= 0.01 and elapsed < 1e-3
    assert announce(1, "chance level", ok, f"{value:.4f} in {elapsed * 1e6:.0f} us")


# 2 -------------------------------------------------------------------------

@pytest.mark.slow
def test_criterion_02_default_dataset_accuracy(announce, default_run):
    e, plan, reports, elapsed = default_run
    chance = reports["slda"].chance_level
    accs = {k: r.accuracy for k, r in reports.items()}
    above = all(a >= chance + 0.10 for a in accs.values())
    cnn_ok = accs["cnn"] >= 0.85
    ok = above and cnn_ok and elapsed <= 600
    detail = (", ".join(f"{k} {a:.3f}" for k, a in accs.items())
              + f"; chance {chance:.3f}; n_val {reports['slda'].n_validation}; {elapsed:.0f} s")
    assert announce(2, "default synthetic dataset", ok, detail)


# 3 -------------------------------------------------------------------------

@pytest.mark.slow
def test_criterion_03_snr_zero_control(announce):
    cfg = PipelineConfig()
    spec = replace(cfg.synth_spec(), template_scale=0.0)
    below = {k: 0 for k in evaluation.MODEL_KINDS}
    reps = 20
    for r in range(reps):
        e = pipeline_epochs(replace(spec, seed=1000 + r))
        plan = make_split_plan(e.labels, r, n_repeats=1)
        for kind in evaluation.MODEL_KINDS:
            report, _ = evaluation.cross_validate(e, kind, cfg, plan, score_folds=False)
            below[kind] += report.accuracy < report.chance_level
    ok = all(n >= 0.9 * reps for n in below.values())
    detail = ", ".join(f"{k} {n}/{reps} below chance" for k, n in below.items())
    assert announce(3, "SNR-zero control", ok, detail)


# 4 -------------------------------------------------------------------------

def test_criterion_04_gradient_suite(announce):
    start = time.perf_counter()
    n = check_random_models(110, seed=4)
    elapsed = time.perf_counter() - start
    ok = n >= 100 and elapsed < 60
    assert announce(4, "gradient suite", ok, f"{n} configurations in {elapsed:.1f} s")


# 5 -------------------------------------------------------------------------

def test_criterion_05_dsp_suite(announce):
    fs = 256.0
    bp = design_filter("butterworth", 4, (0.3, 3.0), fs)
    _, h = signal.sosfreqz(np.array(bp.sos), worN=np.linspace(0.001, 20, 20000), fs=fs)
    _, h_pts = signal.sosfreqz(np.array(bp.sos), worN=[1.0, 0.01], fs=fs)
    peak = np.abs(h).max()
    notch = design_filter("notch", None, 50.0, fs, 35.0)
    _, h50 = signal.sosfreqz(np.array(notch.sos), worN=[50.0], fs=fs)
    att_db = -20 * np.log10(max(np.abs(h50[0]), 1e-300))
    g = np.random.default_rng(5)
    worst = 0.0
    for i in range(1000):
        f = bp if i % 2 else notch
        x = g.standard_normal(int(g.integers(60, 600)))
        worst = max(worst, np.max(np.abs(filtfilt(f, x[::-1]) - filtfilt(f, x)[::-1])))
    ok = (np.abs(h_pts[0]) >= 0.99 * peak and np.abs(h_pts[1]) <= 0.01
          and att_db >= 40 and worst <= 1e-8)
    detail = (f"|H(1)|/peak {np.abs(h_pts[0]) / peak:.4f}, |H(0.01)| {np.abs(h_pts[1]):.2e}, "
              f"notch {att_db:.0f} dB, reversal error {worst:.1e}")
    assert announce(5, "DSP suite", ok, detail)


# 6 -------------------------------------------------------------------------

def test_criterion_06_shape_law(announce):
    model = CnnModel.init(CnnSpec(), 58, 80, seed=6)
    x = np.random.default_rng(6).standard_normal((4, 58, 80))
    trace = []
    probs = forward(model, x, trace=trace)
    shapes = dict(trace)
    chain = [shapes[k] for k in ("conv1", "conv2", "pool", "flatten", "fc1", "fc2")]
    want = [(40, 58, 51), (40, 1, 51), (40, 1, 3), (120,), (80,), (3,)]
    ok = chain == want and np.all(np.abs(probs.sum(axis=1) - 1) <= 1e-6)
    assert announce(6, "shape law", ok, " -> ".join("x".join(map(str, s)) for s in chain))


# 7 -------------------------------------------------------------------------

def test_criterion_07_sliding_window(announce):
    n_candidates = len(window_starts(80, 16, 2))
    hits, starts = 0, []
    for seed in range(20):
        g = np.random.default_rng(seed)
        y = np.repeat([0, 1, 2], 30)
        x = g.standard_normal((90, 6, 80))
        x[:, :3, 32:48] += 0.6 * np.array([0.0, 1.0, -1.0])[y][:, None, None]
        e = EpochSet(x, y, ("touch", "grasp", "rest"), 16.0, 32)
        sel = sliding_window_select(e, 1.0, 2, make_split_plan(y, seed))
        starts.append(sel.best_start)
        hits += 26 <= sel.best_start <= 38
    ok = n_candidates == 33 and hits >= 18
    assert announce(7, "sLDA window accounting", ok,
                    f"{n_candidates} candidates, {hits}/20 in [26, 38], starts {starts}")


# 8 -------------------------------------------------------------------------

def _walk(tree, row):
    node = 0
    while tree.feature[node] >= 0:
        node = (tree.left[node] if row[tree.feature[node]] <= tree.threshold[node]
                else tree.right[node])
    return int(np.argmax(tree.counts[node]))


def test_criterion_08_oracle_equivalence(announce):
    g = np.random.default_rng(8)
    slda_bad = rf_bad = 0
    for i in range(1000):
        k, d = int(g.integers(2, 5)), int(g.integers(1, 9))
        n_per = int(g.integers(3, 9))
        y = np.repeat(np.arange(k), n_per)
        x = g.standard_normal((y.size, d)) + g.standard_normal((k, d))[y]
        probe = g.standard_normal(d) * 2

        m = fit_slda(x, y)
        inv = np.linalg.inv(m.shrunk_covariance)
        delta = np.array([probe @ inv @ mu - 0.5 * mu @ inv @ mu + np.log(p)
                          for mu, p in zip(m.class_means, m.priors)])
        cls, scores = predict_slda(m, probe)
        slda_bad += cls != int(np.argmax(delta)) or not np.allclose(scores, delta, atol=1e-8)

        forest = fit_rf(x, y, n_trees=int(g.integers(1, 8)), seed=i)
        cls, votes = predict_rf(forest, probe)
        walked = np.bincount([_walk(t, probe) for t in forest.trees], minlength=k)
        rf_bad += not np.array_equal(votes, walked) or cls != int(np.argmax(walked))
    ok = slda_bad == 0 and rf_bad == 0
    assert announce(8, "oracle equivalence", ok,
                    f"sLDA mismatches {slda_bad}/1000, RF mismatches {rf_bad}/1000")


# 9 -------------------------------------------------------------------------

SMALL = ["--set", "synth.n_channels=8", "--set", "synth.n_trials_per_class=12",
         "--set", "epoch.rest_trials=12", "--set", "rf.n_trees=10", "--set", "cnn.depth=4",
         "--set", "cnn.fc1_units=8", "--set", "cnn.max_epochs=3", "--set", "cnn.cv_max_epochs=2",
         "--set", "grid.temporal_kernel=20,30", "--set", "grid.depth=4",
         "--set", "grid.pool_kernel=10", "--set", "grid.fc1_units=8", "--set", "grid.n_folds=2"]


def _cli_pipeline(root):
    def run(*argv):
        assert cli.run_command([str(a) for a in argv]) == 0, argv
    run("synth", "--out", root / "s", "--seed", 9, *SMALL)
    run("preprocess", "--in", root / "s", "--out", root / "p")
    run("epoch", "--in", root / "p", "--out", root / "e")
    run("reject", "--in", root / "e", "--out", root / "r")
    run("gridsearch", "--in", root / "r", "--out", root / "g")
    for m in evaluation.MODEL_KINDS:
        run("train", "--in", root / "r", "--out", root / f"t_{m}", "--model", m)
        run("evaluate", "--in", root / "r", "--out", root / f"v_{m}",
            "--model-file", root / f"t_{m}" / "model.mrca")
    run("compare", "--reports", *[root / f"t_{m}" / "report.csv" for m in evaluation.MODEL_KINDS],
        "--out", root / "c")
    return {p.relative_to(root).as_posix(): p.read_bytes()
            for p in sorted(root.rglob("*")) if p.is_file()}


def test_criterion_09_cli_determinism(announce, tmp_path, monkeypatch):
    monkeypatch.setenv("MRCP_THREADS", "1")
    a = _cli_pipeline(tmp_path / "a")
    monkeypatch.setenv("MRCP_THREADS", "4")
    b = _cli_pipeline(tmp_path / "b")
    differing = sorted(k for k in a.keys() | b.keys() if a.get(k) != b.get(k))
    models = [k for k in a if k.endswith("model.mrca")]
    ok = not differing and len(models) == 3
    assert announce(9, "CLI determinism", ok,
                    f"{len(a)} files compared across 1 and 4 threads, {len(differing)} differ")


# 10 ------------------------------------------------------------------------

@pytest.mark.slow
def test_criterion_10_cv_accounting(announce, default_run):
    e, plan, reports, _ = default_run
    problems = check_split_plan(plan, e.labels)
    train = set(plan.train_indices.tolist())
    val = set(plan.validation_indices.tolist())
    counts_ok = True
    for folds in plan.folds:
        covered = np.concatenate(folds)
        counts_ok &= np.array_equal(np.sort(covered), np.sort(plan.train_indices))
        sizes = np.array([np.bincount(e.labels[f], minlength=3) for f in folds])
        counts_ok &= bool(np.all(sizes.max(axis=0) - sizes.min(axis=0) <= 1))
        for a in range(len(folds)):
            for b in range(a + 1, len(folds)):
                counts_ok &= not set(folds[a].tolist()) & set(folds[b].tolist())
    n_folds = {k: len(r.per_fold) for k, r in reports.items()}
    leaks = {k: r.leaks for k, r in reports.items()}
    ok = (not problems and counts_ok and not train & val
          and all(n == 50 for n in n_folds.values()) and not any(leaks.values()))
    assert announce(10, "CV accounting", ok,
                    f"folds {n_folds}, leaks {leaks}, plan problems {len(problems)}")
