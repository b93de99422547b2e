import pytest

from mrcp.config import PipelineConfig, apply_overrides, load_config, parse_ini
from mrcp.errors import UsageError


def test_defaults_round_trip_through_ini():
    cfg = PipelineConfig()
    assert parse_ini(cfg.to_ini()) == cfg
    assert cfg.slda.step == 2 and cfg.cv.n_repeats == 10 and cfg.cv.n_folds == 5
    assert cfg.cnn.temporal_kernel == 30 and cfg.cnn.depth == 40


def test_unknown_section_or_key():
    with pytest.raises(UsageError):
        parse_ini("[slda]\nwindow = 1.0\n")
    with pytest.raises(UsageError):
        parse_ini("[svm]\nc = 1\n")
    with pytest.raises(UsageError):
        apply_overrides(PipelineConfig(), ["cnn.dropout=0.5"])


@pytest.mark.parametrize("bad", ["slda.step", "step=2", "slda.step=two", "cv.alpha=x"])
def test_malformed_overrides(bad):
    with pytest.raises(UsageError):
        apply_overrides(PipelineConfig(), [bad])


def test_overrides_apply_in_order(tmp_path):
    path = tmp_path / "c.ini"
    path.write_text("[rf]\nn_trees = 10\n[cv]\nalpha = 0.01\n")
    cfg = load_config(path, ["rf.n_trees=20", "rf.n_trees=30"])
    assert cfg.rf.n_trees == 30 and cfg.cv.alpha == 0.01
    assert isinstance(cfg.cv.alpha, float)
    with pytest.raises(UsageError):
        load_config(tmp_path / "missing.ini")
    path.write_text("not an ini")
    with pytest.raises(UsageError):
        load_config(path)


def test_fingerprints():
    a = PipelineConfig()
    assert a.fingerprint() == PipelineConfig().fingerprint()
    b = apply_overrides(a, ["rf.n_trees=51"])
    assert b.fingerprint() != a.fingerprint()
    assert b.preprocessing_fingerprint() == a.preprocessing_fingerprint()
    c = apply_overrides(a, ["reject.amp_limit_uv=100.0"])
    assert c.preprocessing_fingerprint() != a.preprocessing_fingerprint()
    # the generator settings are not part of preprocessing
    d = apply_overrides(a, ["synth.seed=9"])
    assert d.preprocessing_fingerprint() == a.preprocessing_fingerprint()


def test_builders_follow_settings():
    cfg = apply_overrides(PipelineConfig(), ["cnn.depth=8", "cnn.max_epochs=7",
                                             "cnn.cv_max_epochs=3", "grid.depth=4,8"])
    assert cfg.cnn_spec(58, 3).depth == 8 and cfg.cnn_spec(58, 3).spatial_kernel == 58
    assert cfg.train_config().max_epochs == 7 and cfg.train_config(cv=True).max_epochs == 3
    assert cfg.grid_ranges()["depth"] == (4, 8)
    assert cfg.preprocess_config().mrcp_band == (0.3, 3.0)
    assert cfg.synth_spec().n_trials_per_class == 80
