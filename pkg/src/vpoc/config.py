"""Layered run configuration: dataclass defaults, a TOML file, then command-line overrides.

Angles are radians and lengths meters throughout. Unknown keys are errors so
a typo cannot silently fall back to a default.
"""

from __future__ import annotations

import dataclasses
import hashlib
import os
import sys
from dataclasses import dataclass, field

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib
import tomli_w

from .agent import DDPGConfig
from .dataset import DatasetConfig
from .detector import DetectorConfig, GridTrainConfig
from .env import EnvConfig
from .errors import ConfigError
from .evaluation import EVAL_SEED_BASE, FixationConfig
from .nets import NetConfig
from .policies import BaselineConfig
from .scene import SceneConfig


@dataclass
class TrainConfig:
    episodes: int = 1000
    mode: str = "sequential"
    checkpoint_every: int = 100
    # training plants are seed_base, seed_base + 1, ...
    seed_base: int = 0
    # stop a parallel run after this many seconds (0 = no limit)
    duration: float = 0.0

    def validate(self):
        if self.episodes < 0 or self.checkpoint_every < 1:
            raise ConfigError("episodes must be >= 0 and checkpoint_every >= 1")
        if self.mode not in ("sequential", "parallel"):
            raise ConfigError("train.mode must be 'sequential' or 'parallel'")
        return self


@dataclass
class EvalConfig:
    episodes: int = 100
    seed_base: int = EVAL_SEED_BASE
    fixation: FixationConfig = field(default_factory=FixationConfig)

    def validate(self):
        if self.episodes < 1:
            raise ConfigError("eval.episodes must be >= 1")
        self.fixation.validate()
        return self


@dataclass
class RunConfig:
    seed: int = 0
    out_dir: str = ""
    workers: int = 1
    scene: SceneConfig = field(default_factory=SceneConfig)
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    grid: GridTrainConfig = field(default_factory=GridTrainConfig)
    env: EnvConfig = field(default_factory=EnvConfig)
    nets: NetConfig = field(default_factory=NetConfig)
    agent: DDPGConfig = field(default_factory=DDPGConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    policies: BaselineConfig = field(default_factory=BaselineConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def validate(self):
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        self.scene.validate()
        self.dataset.validate()
        self.detector.validate()
        self.env.validate()
        self.nets.validate()
        self.train.validate()
        self.policies.validate(self.env.workspace)
        self.eval.validate()
        self.wire()
        self.agent.validate()
        if self.eval.seed_base < self.train.seed_base + self.train.episodes and self.eval.seed_base + self.eval.episodes > self.train.seed_base:
            raise ConfigError("evaluation plant seeds overlap the training range")
        return self

    def wire(self):
        """Propagate shared values: one seed, one action bound, one network config."""
        self.nets.a_max = self.env.a_max
        self.agent.net = self.nets
        self.agent.seed = self.seed
        self.agent.gamma = self.env.gamma
        self.grid.seed = self.seed
        return self

    def output_dir(self):
        return self.out_dir or os.environ.get("VPOC_OUT") or "vpoc_runs"


# fields owned by another section; omitted from files so each value has one home
_DERIVED = {
    "NetConfig": {"a_max"},
    "DDPGConfig": {"net", "seed", "gamma"},
    "GridTrainConfig": {"seed"},
}


def to_dict(obj):
    out = {}
    skip = _DERIVED.get(type(obj).__name__, set())
    for f in dataclasses.fields(obj):
        if f.name in skip:
            continue
        v = getattr(obj, f.name)
        if dataclasses.is_dataclass(v):
            out[f.name] = to_dict(v)
        elif isinstance(v, tuple):
            out[f.name] = list(v)
        elif v is None:
            continue
        elif hasattr(v, "value"):  # enums
            out[f.name] = v.value
        else:
            out[f.name] = v
    return out


def _coerce(value, current, path):
    if isinstance(current, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{path} must be a boolean")
        return value
    if isinstance(current, int) and not isinstance(current, bool):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path} must be an integer")
        return value
    if isinstance(current, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path} must be a number")
        return float(value)
    if isinstance(current, str):
        if not isinstance(value, str):
            raise ConfigError(f"{path} must be a string")
        return value
    if isinstance(current, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{path} must be a list")
        return tuple(value)
    return value


def update_from_dict(obj, data, path=""):
    """Apply ``data`` onto dataclass ``obj`` in place, rejecting unknown keys."""
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'} must be a table")
    names = {f.name for f in dataclasses.fields(obj)} - _DERIVED.get(type(obj).__name__, set())
    for key, value in data.items():
        where = f"{path}.{key}" if path else key
        if key not in names:
            raise ConfigError(f"unknown configuration key {where!r}")
        current = getattr(obj, key)
        if dataclasses.is_dataclass(current):
            update_from_dict(current, value, where)
        elif current is None:
            setattr(obj, key, value)
        else:
            setattr(obj, key, _coerce(value, current, where))
    return obj


def from_dict(data):
    return update_from_dict(RunConfig(), data)


def load(path):
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML in {path}: {exc}") from exc
    return from_dict(data)


def dumps(cfg):
    return tomli_w.dumps(to_dict(cfg))


def save(cfg, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps(cfg))


# settings that change where or how fast a run goes but not what it produces
_UNHASHED = ("out_dir", "workers")


def config_hash(cfg):
    """Digest of every setting that can change a run's results."""
    data = to_dict(cfg)
    for key in _UNHASHED:
        data.pop(key, None)
    return hashlib.sha256(tomli_w.dumps(data).encode("utf-8")).hexdigest()[:16]


def parse_value(text):
    """Interpret an override the way TOML would, falling back to a bare string."""
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def apply_override(cfg, dotted, text):
    parts = dotted.split(".")
    node = {}
    cur = node
    for p in parts[:-1]:
        cur[p] = {}
        cur = cur[p]
    cur[parts[-1]] = parse_value(text)
    return update_from_dict(cfg, node)
