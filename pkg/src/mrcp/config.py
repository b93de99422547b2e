"""Pipeline configuration: one INI document with a section per module.

Every key has a typed default; unknown sections or keys are errors. Values
may be overridden from the command line with ``section.key=value``. The
resolved document is written beside every output and hashed into a
fingerprint that outputs carry for provenance.
"""
from __future__ import annotations

import configparser
import dataclasses
import hashlib
import json
from dataclasses import dataclass, field, fields

from .dsp import PreprocessConfig
from .errors import UsageError
from .nn.model import CnnSpec
from .nn.train import TrainConfig
from .synth import SynthSpec


@dataclass(frozen=True)
class SynthSection:
    seed: int = 0
    n_channels: int = 58
    fs: float = 256.0
    n_trials_per_class: int = 80
    noise_rms_uv: float = 4.0
    noise_exponent: float = 1.0
    line_uv: float = 10.0
    template_scale: float = 1.0
    weight_radius: float = 0.9


@dataclass(frozen=True)
class PreprocessSection:
    wide_low_hz: float = 0.01
    wide_high_hz: float = 100.0
    wide_order: int = 8
    wide_ripple_db: float = 0.5
    notch_hz: float = 50.0
    notch_q: float = 35.0
    mrcp_low_hz: float = 0.3
    mrcp_high_hz: float = 3.0
    mrcp_order: int = 4
    target_fs: float = 16.0


@dataclass(frozen=True)
class EpochSection:
    t_pre: float = -2.0
    t_post: float = 3.0
    rest_epoch_s: float = 5.0
    rest_trials: int = 80


@dataclass(frozen=True)
class RejectSection:
    amp_limit_uv: float = 125.0
    kurt_factor: float = 4.0


@dataclass(frozen=True)
class CvSection:
    seed: int = 0
    n_repeats: int = 10
    n_folds: int = 5
    validation_fraction: float = 0.25
    alpha: float = 0.05


@dataclass(frozen=True)
class SldaSection:
    window_s: float = 1.0
    step: int = 2


@dataclass(frozen=True)
class RfSection:
    window_s: float = 1.0
    step: int = 2
    n_trees: int = 50
    mtry: int = 0  # 0 = round(sqrt(d))
    min_leaf: int = 1
    seed: int = 0


@dataclass(frozen=True)
class CnnSection:
    temporal_kernel: int = 30
    depth: int = 40
    pool_kernel: int = 15
    fc1_units: int = 80
    elu_alpha: float = 1.0
    bn_eps: float = 1e-5
    bn_momentum: float = 0.1
    learning_rate: float = 1e-3
    batch_size: int = 16
    max_epochs: int = 300
    cv_max_epochs: int = 10
    early_stop_patience: int = 20
    holdout_fraction: float = 0.2
    weight_decay: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    dtype: str = "float32"


@dataclass(frozen=True)
class GridSection:
    temporal_kernel: str = "20,30,40"
    depth: str = "20,40"
    pool_kernel: str = "10,15"
    fc1_units: str = "40,80"
    n_folds: int = 3


SECTIONS = {
    "synth": SynthSection,
    "preprocess": PreprocessSection,
    "epoch": EpochSection,
    "reject": RejectSection,
    "cv": CvSection,
    "slda": SldaSection,
    "rf": RfSection,
    "cnn": CnnSection,
    "grid": GridSection,
}
PREPROCESS_SECTIONS = ("preprocess", "epoch", "reject")


@dataclass(frozen=True)
class PipelineConfig:
    synth: SynthSection = field(default_factory=SynthSection)
    preprocess: PreprocessSection = field(default_factory=PreprocessSection)
    epoch: EpochSection = field(default_factory=EpochSection)
    reject: RejectSection = field(default_factory=RejectSection)
    cv: CvSection = field(default_factory=CvSection)
    slda: SldaSection = field(default_factory=SldaSection)
    rf: RfSection = field(default_factory=RfSection)
    cnn: CnnSection = field(default_factory=CnnSection)
    grid: GridSection = field(default_factory=GridSection)

    def as_dict(self) -> dict:
        return {name: dataclasses.asdict(getattr(self, name)) for name in SECTIONS}

    def to_ini(self) -> str:
        lines = []
        for name, values in self.as_dict().items():
            lines.append(f"[{name}]")
            lines.extend(f"{k} = {_format(v)}" for k, v in values.items())
            lines.append("")
        return "\n".join(lines)

    def fingerprint(self) -> str:
        return _digest(self.as_dict())

    def preprocessing_fingerprint(self) -> str:
        """Hash of everything that shapes the epochs a model sees."""
        d = self.as_dict()
        return _digest({k: d[k] for k in PREPROCESS_SECTIONS})

    # builders for the library-level settings objects

    def synth_spec(self) -> SynthSpec:
        s = self.synth
        return SynthSpec(n_channels=s.n_channels, fs=s.fs, n_trials_per_class=s.n_trials_per_class,
                         noise_rms_uv=s.noise_rms_uv, noise_exponent=s.noise_exponent,
                         line_uv=s.line_uv, template_scale=s.template_scale,
                         weight_radius=s.weight_radius, seed=s.seed)

    def preprocess_config(self) -> PreprocessConfig:
        p = self.preprocess
        return PreprocessConfig(
            wide_band=(p.wide_low_hz, p.wide_high_hz), wide_order=p.wide_order,
            wide_ripple_db=p.wide_ripple_db, notch_hz=p.notch_hz, notch_q=p.notch_q,
            mrcp_band=(p.mrcp_low_hz, p.mrcp_high_hz), mrcp_order=p.mrcp_order,
            target_fs=p.target_fs)

    def cnn_spec(self, n_channels: int, n_classes: int) -> CnnSpec:
        c = self.cnn
        return CnnSpec(temporal_kernel=c.temporal_kernel, spatial_kernel=n_channels,
                       depth=c.depth, pool_kernel=c.pool_kernel, fc1_units=c.fc1_units,
                       n_classes=n_classes, elu_alpha=c.elu_alpha, bn_eps=c.bn_eps,
                       bn_momentum=c.bn_momentum)

    def train_config(self, cv: bool = False) -> TrainConfig:
        c = self.cnn
        return TrainConfig(learning_rate=c.learning_rate, batch_size=c.batch_size,
                           max_epochs=c.cv_max_epochs if cv else c.max_epochs,
                           early_stop_patience=c.early_stop_patience,
                           holdout_fraction=c.holdout_fraction, beta1=c.beta1, beta2=c.beta2,
                           adam_eps=c.adam_eps, weight_decay=c.weight_decay, seed=c.seed,
                           dtype=c.dtype)

    def grid_ranges(self) -> dict:
        g = self.grid
        return {k: tuple(int(v) for v in getattr(g, k).split(","))
                for k in ("temporal_kernel", "depth", "pool_kernel", "fc1_units")}


def _format(v) -> str:
    return repr(v) if isinstance(v, float) else str(v)


def _digest(d: dict) -> str:
    raw = json.dumps(d, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(raw.encode("utf-8")).hexdigest()


def _convert(section: str, key: str, raw: str, default):
    try:
        if isinstance(default, bool):
            low = raw.strip().lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        return type(default)(raw.strip())
    except ValueError:
        raise UsageError(
            f"config {section}.{key}: cannot read {raw!r} as {type(default).__name__}"
        ) from None


def _apply(cfg: PipelineConfig, section: str, key: str, raw: str) -> PipelineConfig:
    if section not in SECTIONS:
        raise UsageError(f"unknown config section {section!r}")
    current = getattr(cfg, section)
    names = {f.name for f in fields(current)}
    if key not in names:
        raise UsageError(f"unknown config key {section}.{key}")
    value = _convert(section, key, raw, getattr(current, key))
    return dataclasses.replace(cfg, **{section: dataclasses.replace(current, **{key: value})})


def parse_ini(text: str, base: PipelineConfig | None = None) -> PipelineConfig:
    parser = configparser.ConfigParser(interpolation=None, default_section="\x00none")
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise UsageError(f"config: {str(exc).splitlines()[0]}") from None
    cfg = base or PipelineConfig()
    for section in parser.sections():
        for key, raw in parser.items(section):
            cfg = _apply(cfg, section, key, raw)
    return cfg


def apply_overrides(cfg: PipelineConfig, overrides) -> PipelineConfig:
    """Apply ``section.key=value`` strings in order."""
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise UsageError(f"override must look like section.key=value, got {item!r}")
        lhs, raw = item.split("=", 1)
        section, key = lhs.strip().split(".", 1)
        cfg = _apply(cfg, section, key, raw)
    return cfg


def load_config(path=None, overrides=(), base: PipelineConfig | None = None) -> PipelineConfig:
    """``base`` (or defaults), then the file at ``path``, then the overrides."""
    cfg = base or PipelineConfig()
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                cfg = parse_ini(fh.read(), cfg)
        except OSError as exc:
            raise UsageError(f"cannot read config {path}: {exc.strerror}") from None
    return apply_overrides(cfg, overrides)
