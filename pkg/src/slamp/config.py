"""Run configuration: JSON document with strict validation.

Top-level keys (all optional; missing keys take the dataclass defaults):

``architecture``
    list of layer dicts: ``{"kind": "dense", "units": n}``,
    ``{"kind": "conv", "channels": c, "kernel": k, "stride": s, "padding": p}``,
    ``{"kind": "avgpool", "size": s}``, ``{"kind": "output"}`` (sized from the
    dataset's class count; appended when missing).
``neuron``      ``threshold``, ``reset``, ``timesteps``
``optim``       ``learning_rate``, ``momentum``, ``schedule``, ``epochs``, ``batch_size``
``surrogate``   ``kind``, ``width``
``prune``       ``frequency``, ``stages`` (``{"fraction", "until"}`` or ``{"target"}``),
                ``finetune``, ``scoring_samples``
``scorer``      ``"slamp"`` or ``"lamp"``
``dataset``     ``kind`` (static/event), ``n_classes``, ``shape``, ``train_per_class``,
                ``eval_per_class``, ``noise``, ``silent``, ``base_rate``, ``contrast``,
                ``encoding``
``audit``       ``fractions``, ``admissible``
``sweep``       ``frequencies``, ``learning_rates``, ``max_stages``
``seed``        unsigned 64-bit integer
``out``         output directory
"""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import asdict, dataclass, field, fields

from .dynamics import NeuronConfig
from .pruning import PruneSchedule, Stage
from .training import OptimConfig, SurrogateConfig


class ConfigError(ValueError):
    pass


def _strict(cls, data, where):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object")
    names = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


@dataclass(frozen=True)
class DatasetConfig:
    kind: str = "static"
    n_classes: int = 10
    shape: tuple = (64,)
    train_per_class: int = 40
    eval_per_class: int = 40
    noise: float = 0.3
    silent: tuple = ()
    base_rate: float = 0.2
    contrast: float = 0.5
    encoding: str = "direct"

    def __post_init__(self):
        object.__setattr__(self, "shape", tuple(self.shape))
        object.__setattr__(self, "silent", tuple(self.silent))
        if self.kind not in ("static", "event"):
            raise ValueError(f"unknown dataset kind {self.kind!r}")
        if self.encoding not in ("direct", "poisson"):
            raise ValueError(f"unknown encoding {self.encoding!r}")
        if self.n_classes < 2 or self.train_per_class < 1 or self.eval_per_class < 1:
            raise ValueError("need at least two classes and one sample per class per split")
        if self.noise < 0:
            raise ValueError("noise must be non-negative")


@dataclass(frozen=True)
class PruneConfig:
    frequency: int = 15
    stages: tuple = (
        {"fraction": 0.15, "until": 0.10},
        {"target": 0.02},
        {"target": 0.004},
    )
    finetune: bool = True
    scoring_samples: int | None = 200

    def schedule(self):
        stages = tuple(_strict(Stage, dict(s), "prune.stages[]") for s in self.stages)
        return PruneSchedule(self.frequency, stages)


@dataclass(frozen=True)
class AuditConfig:
    fractions: tuple = (0.0, 0.1, 0.2, 0.3, 0.4, 0.5)
    admissible: str = "observed-support"

    def __post_init__(self):
        object.__setattr__(self, "fractions", tuple(self.fractions))
        if self.admissible not in ("all-binary", "observed-support"):
            raise ValueError(f"unknown admissible set {self.admissible!r}")
        if any(not 0 <= f <= 1 for f in self.fractions):
            raise ValueError("audit fractions must lie in [0, 1]")


@dataclass(frozen=True)
class SweepConfig:
    frequencies: tuple = (10, 15, 25)
    learning_rates: tuple = (0.005, 0.01, 0.02)
    max_stages: int | None = 6

    def __post_init__(self):
        object.__setattr__(self, "frequencies", tuple(self.frequencies))
        object.__setattr__(self, "learning_rates", tuple(self.learning_rates))
        if not self.frequencies or not self.learning_rates:
            raise ValueError("sweep grid must be non-empty")


DEFAULT_ARCHITECTURE = (
    {"kind": "dense", "units": 64},
    {"kind": "dense", "units": 32},
    {"kind": "output"},
)


@dataclass(frozen=True)
class RunConfig:
    architecture: tuple = DEFAULT_ARCHITECTURE
    neuron: NeuronConfig = field(default_factory=NeuronConfig)
    optim: OptimConfig = field(default_factory=lambda: OptimConfig(epochs=40))
    surrogate: SurrogateConfig = field(default_factory=SurrogateConfig)
    prune: PruneConfig = field(default_factory=PruneConfig)
    scorer: str = "slamp"
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    audit: AuditConfig = field(default_factory=AuditConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    seed: int = 0
    out: str = "runs/default"

    def to_dict(self):
        d = asdict(self)
        d["architecture"] = [dict(a) for a in self.architecture]
        d["prune"]["stages"] = [dict(s) for s in self.prune.stages]
        return json.loads(json.dumps(d))

    def config_hash(self):
        """SHA-256 of the canonical config, ignoring the output directory."""
        d = self.to_dict()
        d.pop("out")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":")).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()

    def replace(self, **changes):
        d = self.to_dict()
        for key, value in changes.items():
            d[key] = value
        return from_dict(d)


_SECTIONS = {
    "neuron": NeuronConfig,
    "optim": OptimConfig,
    "surrogate": SurrogateConfig,
    "prune": PruneConfig,
    "dataset": DatasetConfig,
    "audit": AuditConfig,
    "sweep": SweepConfig,
}

_LAYER_KEYS = {
    "dense": {"kind", "units", "init_scale"},
    "conv": {"kind", "channels", "kernel", "stride", "padding", "init_scale"},
    "avgpool": {"kind", "size"},
    "output": {"kind", "init_scale"},
}


def _check_architecture(arch):
    if not isinstance(arch, (list, tuple)) or not arch:
        raise ConfigError("architecture: expected a non-empty list of layers")
    out = []
    for i, layer in enumerate(arch):
        if not isinstance(layer, dict) or layer.get("kind") not in _LAYER_KEYS:
            raise ConfigError(f"architecture[{i}]: unknown layer kind")
        unknown = sorted(set(layer) - _LAYER_KEYS[layer["kind"]])
        if unknown:
            raise ConfigError(f"architecture[{i}]: unknown keys {unknown}")
        if layer["kind"] == "output" and i != len(arch) - 1:
            raise ConfigError("architecture: output must be the last layer")
        out.append(dict(layer))
    if out[-1]["kind"] != "output":
        out.append({"kind": "output"})
    return tuple(out)


def from_dict(data):
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    names = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"unknown top-level keys {unknown}")
    kwargs = {}
    for key, value in data.items():
        if key in _SECTIONS:
            kwargs[key] = _strict(_SECTIONS[key], value, key)
        elif key == "architecture":
            kwargs[key] = _check_architecture(value)
        else:
            kwargs[key] = value
    cfg = RunConfig(**kwargs)
    if cfg.scorer not in ("slamp", "lamp"):
        raise ConfigError(f"unknown scorer {cfg.scorer!r}")
    if not isinstance(cfg.seed, int) or not 0 <= cfg.seed < 2**64:
        raise ConfigError("seed must be an unsigned 64-bit integer")
    try:
        cfg.prune.schedule()
    except ValueError as exc:
        raise ConfigError(f"prune: {exc}") from exc
    return cfg


def load_config(path):
    with open(path, encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return from_dict(data)


def merge(base, override):
    """Deep-merge ``override`` into a copy of ``base`` (both plain dicts)."""
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = merge(out[key], value)
        else:
            out[key] = value
    return out
