"""Run configuration: one YAML document plus environment and flag overrides.

Precedence, lowest first: built-in defaults, the config file, ``DMPCOUPLE_*``
environment variables, command-line flags.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from .errors import ConfigError
from .guards import GuardConfig
from .network import TrainConfig
from .obstacles import KINDS

ENV_PREFIX = "DMPCOUPLE_"
PROTOCOLS = ("per-setting", "multi", "unseen")


def substream(root_seed, *names):
    """Integer seed of the named substream of ``root_seed``.

    Every consumer of randomness derives its own seed this way, so results do
    not depend on evaluation order or on how work is spread over processes.
    """
    key = [int(root_seed)] + [zlib.crc32(str(n).encode()) for n in names]
    return int(np.random.SeedSequence(key).generate_state(1)[0])


@dataclass
class SceneConfig:
    start: tuple = (0.40, -0.30, 0.20)
    goal: tuple = (0.55, 0.25, 0.30)
    tau: float = 1.5
    gravity: tuple = (0.0, 0.0, -1.0)


@dataclass
class OracleConfig:
    gamma: float = 100.0
    beta: float = 20.0
    bias: float = 0.015
    soften: float = 0.01


@dataclass
class DataConfig:
    kinds: tuple = KINDS
    demos_per_setting: int = 15      # per-setting experiments
    multi_demos_per_setting: int = 5  # displaced-obstacle demos per setting for the one-network-per-kind runs
    duration_spread: float = 0.2
    rate: float = 25.0
    jitter: float = 0.0
    placement_jitter: float = 0.015  # obstacle displacement in the placed demos, m
    density: float = 100.0
    split_ratio: float = 0.8
    multi_split_mode: str = "demo"


@dataclass
class DmpConfig:
    alpha_v: float = 25.0
    beta_v: float = 6.25
    alpha_s: float = 25.0 / 3.0
    n_basis: int = 25
    n_steps: int = 1000


@dataclass
class GuardsConfig:
    beyond_goal: bool = True
    zero_x: bool = True
    passing_decay: bool = True
    width: float = 400.0

    def to_guards(self):
        return GuardConfig(self.beyond_goal, self.zero_x, self.passing_decay, self.width)


@dataclass
class TrainingConfig:
    max_iters: int = 200
    lam_init: float = 1e-3
    lam_up: float = 10.0
    lam_down: float = 0.1
    lam_max: float = 1e10
    grad_tol: float = 1e-7
    loss_tol: float = 1e-9
    patience: int = 10
    goal: float = 1e-3
    restarts: int = 1

    def to_train(self, seed):
        return TrainConfig(seed=seed, **dataclasses.asdict(self))


@dataclass
class GateConfig:
    per_setting_nmse: float = 0.1
    multi_nmse: float = 0.25
    unseen_hit_fraction: float = 0.05
    baseline_hit_fraction: float = 0.5
    goal_tol: float = 1e-2
    horizon: float = 1.05


@dataclass
class RunConfig:
    seed: int = 0
    out: str = "runs/default"
    parallel: int = 0  # 0: one worker per available core
    scene: SceneConfig = field(default_factory=SceneConfig)
    oracle: OracleConfig = field(default_factory=OracleConfig)
    data: DataConfig = field(default_factory=DataConfig)
    dmp: DmpConfig = field(default_factory=DmpConfig)
    guards: GuardsConfig = field(default_factory=GuardsConfig)
    train: TrainingConfig = field(default_factory=TrainingConfig)
    gates: GateConfig = field(default_factory=GateConfig)

    # -- paths ---------------------------------------------------------------
    @property
    def out_dir(self):
        return Path(self.out)

    @property
    def dataset_dir(self):
        return self.out_dir / "dataset"

    @property
    def baseline_path(self):
        return self.out_dir / "baseline.json"

    @property
    def model_dir(self):
        return self.out_dir / "models"

    @property
    def report_dir(self):
        return self.out_dir / "reports"

    @property
    def workers(self):
        return self.parallel if self.parallel > 0 else len(os.sched_getaffinity(0))

    # -- serialization -----------------------------------------------------------
    def to_dict(self):
        def plain(v):
            if isinstance(v, (tuple, list)):
                return [plain(x) for x in v]
            return v
        return {k: ({kk: plain(vv) for kk, vv in v.items()} if isinstance(v, dict) else plain(v))
                for k, v in dataclasses.asdict(self).items()}

    @classmethod
    def from_dict(cls, d):
        d = dict(d or {})
        unknown = set(d) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        kwargs = {}
        for f in dataclasses.fields(cls):
            if f.name not in d:
                continue
            value = d[f.name]
            sub = _SECTIONS.get(f.name)
            kwargs[f.name] = _section(sub, value, f.name) if sub else value
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg

    def to_yaml(self):
        return yaml.safe_dump(self.to_dict(), sort_keys=True, default_flow_style=None)

    @classmethod
    def from_yaml(cls, text):
        try:
            data = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigError(f"invalid YAML: {exc}") from None
        if data is not None and not isinstance(data, dict):
            raise ConfigError("config must be a mapping")
        return cls.from_dict(data)

    @classmethod
    def load(cls, path):
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        return cls.from_yaml(text)

    def save(self, path):
        from .io import _atomic_write

        return _atomic_write(path, self.to_yaml())

    def hash(self):
        """Digest of every setting that can change results; the output
        directory and worker count are left out."""
        d = {k: v for k, v in self.to_dict().items() if k not in ("out", "parallel")}
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()

    def replace(self, **changes):
        cfg = dataclasses.replace(self, **changes)
        cfg.validate()
        return cfg

    # -- validation ----------------------------------------------------------
    def validate(self):
        d = self.data
        bad = [k for k in d.kinds if k not in KINDS]
        if bad or not d.kinds:
            raise ConfigError(f"data.kinds must be a non-empty subset of {KINDS}, got {list(d.kinds)}")
        if d.demos_per_setting < 1 or d.multi_demos_per_setting < 1:
            raise ConfigError("demo counts must be >= 1")
        if not 0 <= d.duration_spread < 1:
            raise ConfigError("duration_spread must be in [0, 1)")
        if d.rate < 10:
            raise ConfigError("data.rate must be >= 10 Hz")
        if d.multi_split_mode not in ("row", "demo"):
            raise ConfigError("data.multi_split_mode must be 'row' or 'demo'")
        if not 0 < d.split_ratio <= 1:
            raise ConfigError("data.split_ratio must be in (0, 1]")
        if d.jitter < 0 or d.placement_jitter < 0:
            raise ConfigError("data.jitter and data.placement_jitter must be >= 0")
        o = self.oracle
        if o.gamma < 0 or o.beta <= 0 or o.soften < 0:
            raise ConfigError("oracle needs gamma >= 0, beta > 0 and soften >= 0")
        if self.scene.tau <= 0 or len(self.scene.start) != 3 or len(self.scene.goal) != 3:
            raise ConfigError("scene needs 3-D start/goal and tau > 0")
        if self.gates.horizon < 1 or self.gates.goal_tol <= 0:
            raise ConfigError("gates.horizon must be >= 1 and goal_tol > 0")
        if self.guards.width <= 0:
            raise ConfigError("guards.width must be positive")
        if self.parallel < 0:
            raise ConfigError("parallel must be >= 0")
        out = self.out_dir
        for p in (out, *out.parents):
            if p.exists():
                if not p.is_dir():
                    raise ConfigError(f"output path component {p} is not a directory")
                break
        self.train.to_train(0)
        self.dmp_params()
        return self

    def dmp_params(self):
        from .dmp import DmpParams

        return DmpParams(**dataclasses.asdict(self.dmp))

    def train_config(self, *names):
        return self.train.to_train(substream(self.seed, "train", *names))


_SECTIONS = {
    "scene": SceneConfig,
    "oracle": OracleConfig,
    "data": DataConfig,
    "dmp": DmpConfig,
    "guards": GuardsConfig,
    "train": TrainingConfig,
    "gates": GateConfig,
}


def _section(cls, value, name):
    if value is None:
        return cls()
    if not isinstance(value, dict):
        raise ConfigError(f"config section {name!r} must be a mapping")
    names = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(value) - set(names)
    if unknown:
        raise ConfigError(f"unknown keys in {name}: {sorted(unknown)}")
    kwargs = {}
    for k, v in value.items():
        default = getattr(cls(), k)
        kwargs[k] = _coerce(v, default, f"{name}.{k}")
    return cls(**kwargs)


def _coerce(value, default, key):
    try:
        if isinstance(default, bool):
            if isinstance(value, str):
                low = value.strip().lower()
                if low not in ("1", "0", "true", "false", "on", "off", "yes", "no"):
                    raise ValueError(value)
                return low in ("1", "true", "on", "yes")
            return bool(value)
        if isinstance(default, int):
            if isinstance(value, float) and not value.is_integer():
                raise ValueError(value)
            return int(value)
        if isinstance(default, float):
            return float(value)
        if isinstance(default, tuple):
            if isinstance(value, str):
                value = [v.strip() for v in value.split(",") if v.strip()]
            items = tuple(value)
            if default and isinstance(default[0], float):
                items = tuple(float(v) for v in items)
            return items
        return type(default)(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: cannot interpret {value!r} as {type(default).__name__}") from None


def env_overrides(environ=None):
    """Overrides from ``DMPCOUPLE_<SECTION>__<KEY>`` or ``DMPCOUPLE_<KEY>`` variables.

    ``DMPCOUPLE_SEED=3``, ``DMPCOUPLE_OUT=runs/x`` and ``DMPCOUPLE_PARALLEL=2``
    set top-level fields; ``DMPCOUPLE_GUARDS__WIDTH=50`` sets a section
    field. ``DMPCOUPLE_BACKEND`` (the unroll kernel) and ``DMPCOUPLE_NO_EXT``
    (skip building the extension) are read elsewhere and ignored here.
    """
    environ = os.environ if environ is None else environ
    out = {}
    for name, value in environ.items():
        if not name.startswith(ENV_PREFIX):
            continue
        key = name[len(ENV_PREFIX):].lower()
        if key in ("backend", "no_ext"):
            continue
        if "__" in key:
            section, sub = key.split("__", 1)
            if section not in _SECTIONS:
                raise ConfigError(f"{name}: unknown config section {section!r}")
            out.setdefault(section, {})[sub] = value
        else:
            out[key] = value
    return out


def merge(cfg, overrides):
    """A copy of ``cfg`` with string or typed ``overrides`` applied (nested by section)."""
    d = cfg.to_dict()
    top_defaults = RunConfig()
    for key, value in overrides.items():
        if key in _SECTIONS:
            if not isinstance(value, dict):
                raise ConfigError(f"override for section {key!r} must be a mapping")
            d[key].update(value)
        elif key in d:
            d[key] = _coerce(value, getattr(top_defaults, key), key)
        else:
            raise ConfigError(f"unknown config key {key!r}")
    return RunConfig.from_dict(d)


def resolve(path=None, environ=None, **flags):
    """Defaults, then ``path``, then the environment, then non-``None`` flags."""
    environ = os.environ if environ is None else environ
    path = path or environ.get(ENV_PREFIX + "CONFIG")
    cfg = RunConfig.load(path) if path else RunConfig()
    env = {k: v for k, v in env_overrides(environ).items() if k != "config"}
    cfg = merge(cfg, env)
    flags = {k: v for k, v in flags.items() if v is not None}
    return merge(cfg, flags) if flags else cfg
