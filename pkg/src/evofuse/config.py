"""Experiment configuration and its flat ``key = value`` file format.

Blank lines and ``#`` comments are ignored.  Keys match the field names of
:class:`ExperimentConfig`; sequences are comma separated and booleans accept
``true/false/yes/no/1/0``.  Every field has a default, so an empty file is a
valid configuration.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path

from .annotation import Da3Config
from .fusion import FusionConfig
from .rule_evolution import LearnerConfig

SETTINGS = {"large": 6, "small": 18}


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    dataset_path: str | None = None
    synthetic: str | None = None
    batch_size: int | None = None
    setting: str = "large"
    label_proportion: float = 0.25
    n_classes: int | None = None
    max_batches: int | None = None
    # ensemble
    fac: float = 0.3
    delta: float = 1e-3
    # base learner
    gamma: float = 0.7
    k3: float = 0.2
    alpha: float = 3e-7
    omega_init: float = 1e5
    ns_warmup: int = 20
    # fusion
    k4: float = 0.4
    k5: float = 0.6
    support_floor: float = 0.02
    z_candidates: tuple = (3, 5, 8, 10)
    # annotation
    conf_threshold: float = 0.55
    noise_std: float = math.sqrt(0.001)
    # runtime
    partitions: int = 6
    workers: int = 1
    seed: int = 0
    # ablations
    disable_regularization: bool = False
    disable_augmentation: bool = False
    force_single_node: bool = False

    def __post_init__(self):
        self.z_candidates = tuple(sorted(int(z) for z in self.z_candidates))
        if self.batch_size is not None and self.batch_size < 8:
            raise ConfigError("batch_size must be >= 8")
        if not 0.0 < self.label_proportion <= 1.0:
            raise ConfigError("label_proportion must lie in (0, 1]")
        if self.setting not in SETTINGS:
            raise ConfigError(f"setting must be one of {sorted(SETTINGS)}")
        if self.partitions < 1 or self.workers < 1:
            raise ConfigError("partitions and workers must be >= 1")
        try:
            self.learner_config()
            self.fusion_config()
            self.da3_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    @property
    def effective_partitions(self) -> int:
        return 1 if self.force_single_node else self.partitions

    def learner_config(self) -> LearnerConfig:
        return LearnerConfig(gamma=self.gamma, k3=self.k3, omega_init=self.omega_init,
                             alpha=self.alpha, ns_warmup=self.ns_warmup)

    def fusion_config(self) -> FusionConfig:
        return FusionConfig(k4=self.k4, k5=self.k5, support_floor=self.support_floor,
                            z_candidates=self.z_candidates)

    def da3_config(self) -> Da3Config:
        return Da3Config(conf_threshold=self.conf_threshold, noise_std=self.noise_std,
                         rng_seed=self.seed, augment=not self.disable_augmentation)

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def as_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["z_candidates"] = list(self.z_candidates)
        return d


_TRUE = {"true", "yes", "1", "on"}
_FALSE = {"false", "no", "0", "off"}


def _coerce(name: str, text: str, f: dataclasses.Field):
    typ = str(f.type)
    text = text.strip()
    if text.lower() in {"none", "null", ""} and "None" in typ:
        return None
    try:
        if "bool" in typ:
            low = text.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(text)
        if name == "z_candidates":
            return tuple(int(v) for v in text.split(",") if v.strip())
        if "int" in typ:
            return int(text)
        if "float" in typ:
            return float(text)
        return text
    except ValueError as exc:
        raise ConfigError(f"bad value for {name}: {text!r}") from exc


def parse_config_text(text: str, **overrides) -> ExperimentConfig:
    fields = {f.name: f for f in dataclasses.fields(ExperimentConfig)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in fields:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[key] = _coerce(key, val, fields[key])
    values.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig(**values)


def load_config(path: str | Path | None = None, **overrides) -> ExperimentConfig:
    text = Path(path).read_text() if path else ""
    return parse_config_text(text, **overrides)


def dump_config(cfg: ExperimentConfig) -> str:
    lines = []
    for k, v in cfg.as_dict().items():
        if isinstance(v, list):
            v = ",".join(str(x) for x in v)
        lines.append(f"{k} = {v}")
    return "\n".join(lines) + "\n"
