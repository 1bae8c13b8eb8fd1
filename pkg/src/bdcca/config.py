"""Pipeline configuration: nested dataclasses plus a strict YAML loader.

Every field has a default, so an empty file is a valid config. Unknown keys
raise :class:`ConfigError` naming the offending path. One global ``seed``
fans out to per-stage seeds through :func:`stage_seed`.
"""

import dataclasses
import hashlib
import json
import zlib
from dataclasses import dataclass, field

import numpy as np
import yaml

from ._validation import ConfigError
from .augment import AugmentConfig
from .classifier import DetectionConfig
from .data import SynthConfig
from .dsp import StftConfig

MODES = ("DCRNN", "DCRNN_Accel", "DCCA", "BDCCA")


@dataclass
class DccaTrainConfig:
    n_components: int = 50
    channels: tuple = (128, 128, 64)
    kernel_size: int = 5
    batch_size: int = 8
    learning_rate: float = 1e-3
    steps: int = 300
    r1: float = 1e-4
    optimizer: str = "adam"
    input_transform: str = "log1p"
    edge_frames: int = None

    def __post_init__(self):
        self.channels = tuple(self.channels)
        if self.learning_rate < 0:
            raise ConfigError("dcca.learning_rate must be >= 0")
        if self.r1 <= 0:
            raise ConfigError("dcca.r1 must be > 0")
        if self.steps < 0 or self.batch_size < 1:
            raise ConfigError("dcca.steps must be >= 0 and dcca.batch_size >= 1")


@dataclass
class ClassifierTrainConfig:
    conv_channels: tuple = (8, 16, 16)
    pool: int = 4
    hidden: int = 32
    learning_rate: float = 3e-3
    epochs: int = 20
    batch_size: int = 8
    optimizer: str = "adam"
    threshold: float = 0.5
    balance_target: float = 0.2

    def __post_init__(self):
        self.conv_channels = tuple(self.conv_channels)
        if self.learning_rate <= 0:
            raise ConfigError("classifier learning_rate must be > 0")
        if not 0 < self.threshold < 1:
            raise ConfigError("classifier threshold must lie in (0, 1)")


@dataclass
class BinningSection:
    n_bins: int = 10
    min_bin_population: int = 8
    on_empty_bin: str = "skip"

    def __post_init__(self):
        if self.n_bins < 1:
            raise ConfigError("binning.n_bins must be >= 1")
        if self.on_empty_bin not in ("error", "skip"):
            raise ConfigError("binning.on_empty_bin must be 'error' or 'skip'")


@dataclass
class EvalConfig:
    segment_length: float = 1.0
    test_fraction: float = 0.3
    n_figures: int = 3

    def __post_init__(self):
        if self.segment_length <= 0:
            raise ConfigError("eval.segment_length must be > 0")
        if not 0 < self.test_fraction < 1:
            raise ConfigError("eval.test_fraction must lie in (0, 1)")


@dataclass
class DataConfig:
    """Either a manifest path or, when empty, the synthetic generator.

    ``synth.seed`` of ``None`` follows the global seed.
    """

    manifest: str = ""
    synth: dict = field(default_factory=dict)


@dataclass
class PipelineConfig:
    mode: str = "BDCCA"
    seed: int = 1
    out: str = "runs"
    stft: StftConfig = field(default_factory=StftConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    binning: BinningSection = field(default_factory=BinningSection)
    dcca: DccaTrainConfig = field(default_factory=DccaTrainConfig)
    bootstrap: ClassifierTrainConfig = field(
        default_factory=lambda: ClassifierTrainConfig(epochs=15))
    detector: ClassifierTrainConfig = field(default_factory=ClassifierTrainConfig)
    detection: DetectionConfig = field(default_factory=DetectionConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    data: DataConfig = field(default_factory=DataConfig)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {', '.join(MODES)}, got {self.mode!r}")
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError(f"seed must be a non-negative integer, got {self.seed!r}")
        synth = dict(self.data.synth)
        known = {f.name for f in dataclasses.fields(SynthConfig)}
        unknown = sorted(set(synth) - known)
        if unknown:
            raise ConfigError(f"unknown key(s) in data.synth: {', '.join(unknown)}")
        self.synth_config()  # validate eagerly

    def synth_config(self):
        kw = dict(self.data.synth)
        if kw.get("seed") is None:
            kw["seed"] = self.seed
        kw.setdefault("clip_seconds", self.stft.clip_seconds)
        return SynthConfig(**kw)

    def to_dict(self):
        return _plain(dataclasses.asdict(self))

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def _build(cls, values, where):
    if not isinstance(values, dict):
        raise ConfigError(f"{where or 'config'} must be a mapping, got {type(values).__name__}")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(values) - set(fields))
    if unknown:
        prefix = f"{where}." if where else ""
        raise ConfigError(f"unknown config key(s): {', '.join(prefix + k for k in unknown)}")
    kwargs = {}
    for name, value in values.items():
        sub = _NESTED.get((cls, name))
        path = f"{where}.{name}" if where else name
        kwargs[name] = _build(sub, value or {}, path) if sub else value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{where or 'config'}: {exc}") from exc


_NESTED = {
    (PipelineConfig, "stft"): StftConfig,
    (PipelineConfig, "augment"): AugmentConfig,
    (PipelineConfig, "binning"): BinningSection,
    (PipelineConfig, "dcca"): DccaTrainConfig,
    (PipelineConfig, "bootstrap"): ClassifierTrainConfig,
    (PipelineConfig, "detector"): ClassifierTrainConfig,
    (PipelineConfig, "detection"): DetectionConfig,
    (PipelineConfig, "eval"): EvalConfig,
    (PipelineConfig, "data"): DataConfig,
}


def config_from_dict(values):
    values = dict(values or {})
    # the bootstrap section keeps its own epoch default
    values["bootstrap"] = {"epochs": 15, **(values.get("bootstrap") or {})}
    return _build(PipelineConfig, values, "")


def load_config(path=None, **overrides):
    """Read a YAML config (or defaults when ``path`` is None) and apply overrides."""
    values = {}
    if path:
        with open(path, encoding="utf-8") as fh:
            values = yaml.safe_load(fh) or {}
    for key, value in overrides.items():
        if value is not None:
            values[key] = value
    return config_from_dict(values)


def dump_config(cfg):
    return yaml.safe_dump(cfg.to_dict(), sort_keys=True)


def config_hash(*parts):
    """Short content hash of JSON-serializable parts."""
    blob = json.dumps(_plain(parts), sort_keys=True, default=str).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:16]


def stage_seed(seed, stage):
    """Derived 32-bit seed for a named stage."""
    ss = np.random.SeedSequence([int(seed), zlib.crc32(stage.encode("utf-8"))])
    return int(ss.generate_state(1)[0])
