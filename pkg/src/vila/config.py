"""Declarative run configuration: nested dataclasses read from YAML or JSON.

Unknown keys and bad values raise :class:`ConfigError` naming the dotted
field path, e.g. ``model.n_heads``.
"""

from __future__ import annotations

import dataclasses
import enum
import json
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import yaml

from vila.grouping import GroupingConfig, PerturbConfig
from vila.hvila import HVilaConfig
from vila.synth import CorpusConfig
from vila.training import TrainConfig

FORMAT_VERSION = "vila-run/1"

METHODS = ("baseline", "sentence", "ivila-line", "ivila-block", "hvila-line", "hvila-block", "simple-group")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelSettings:
    """Model shape shared by every method; vocabulary and class counts come from the data."""

    d: int = 32
    n_heads: int = 2
    ff_mult: int = 4
    n_layers: int = 2
    max_seq_len: int = 128
    coord_buckets: int = 128
    dropout_rate: float = 0.1


@dataclass(frozen=True)
class TimingSettings:
    runs: int = 0  # 0 disables timing
    warmup: int = 1
    max_pages: int = 10

    def __post_init__(self):
        if self.runs < 0 or self.warmup < 0 or self.max_pages < 1:
            raise ValueError("runs and warmup must be >= 0 and max_pages >= 1")


@dataclass(frozen=True)
class PerturbSettings:
    rates: tuple = ((0.2, 0.2, 0.2),)  # (p_merge, p_split, p_jitter) per condition
    jitter_scale: float = 1.0
    seed: int = 0
    detected: bool = True
    methods: tuple = ("ivila-block", "hvila-block")

    def __post_init__(self):
        rates = tuple(tuple(float(v) for v in r) for r in self.rates)
        for r in rates:
            if len(r) != 3:
                raise ValueError("each rate entry is [p_merge, p_split, p_jitter]")
            PerturbConfig(*r, jitter_scale=self.jitter_scale)
        object.__setattr__(self, "rates", rates)
        object.__setattr__(self, "methods", tuple(self.methods))
        for m in self.methods:
            if m not in METHODS:
                raise ValueError(f"unknown method {m!r}")


@dataclass(frozen=True)
class RunConfig:
    corpus_path: Optional[str] = None  # pages file; generated from ``corpus`` when unset
    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    labels: str = "s2vl"
    groups: str = "gold"  # gold | detected
    grouping: GroupingConfig = field(default_factory=GroupingConfig)
    model: ModelSettings = field(default_factory=ModelSettings)
    hvila: HVilaConfig = field(default_factory=lambda: HVilaConfig(group_layers=1, page_layers=1))
    train: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=10, lr=3e-3))
    methods: tuple = ("baseline", "ivila-block")
    folds: int = 5
    fold_seed: int = 0
    run_folds: Optional[tuple] = None  # subset of fold indices; all when unset
    seeds: tuple = (0,)
    timing: TimingSettings = field(default_factory=TimingSettings)
    perturb: PerturbSettings = field(default_factory=PerturbSettings)

    def __post_init__(self):
        object.__setattr__(self, "methods", tuple(self.methods))
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if self.run_folds is not None:
            object.__setattr__(self, "run_folds", tuple(int(f) for f in self.run_folds))
            if any(not 0 <= f < self.folds for f in self.run_folds):
                raise ValueError(f"run_folds entries must be in [0, {self.folds})")
        for m in self.methods:
            if m not in METHODS:
                raise ValueError(f"unknown method {m!r}; expected one of {', '.join(METHODS)}")
        if self.groups not in ("gold", "detected"):
            raise ValueError("groups must be 'gold' or 'detected'")
        if self.folds < 2:
            raise ValueError("folds must be >= 2")
        if not self.seeds:
            raise ValueError("seeds must not be empty")


# ---------------------------------------------------------------------------
# building dataclasses from plain data


def _check_scalar(value, tp, where: str):
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected a boolean, got {value!r}")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string, got {value!r}")
        return value
    if isinstance(tp, type) and issubclass(tp, enum.Enum):
        try:
            return tp(value)
        except ValueError:
            choices = ", ".join(str(m.value) for m in tp)
            raise ConfigError(f"{where}: expected one of {choices}, got {value!r}") from None
    return value


def _convert(value, tp, where: str):
    origin = typing.get_origin(tp)
    if origin is typing.Union:
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        if value is None:
            return None
        return _convert(value, args[0], where)
    if dataclasses.is_dataclass(tp):
        return build(tp, value, where)
    if tp is tuple or origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{where}: expected a list, got {value!r}")
        return tuple(tuple(v) if isinstance(v, list) else v for v in value)
    return _check_scalar(value, tp, where)


def build(cls, data: Any, where: str = ""):
    """Instantiate dataclass ``cls`` from a mapping, rejecting unknown keys."""
    label = where or "<config>"
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{label}: expected a mapping, got {type(data).__name__}")
    hints = typing.get_type_hints(cls)
    known = {f.name for f in dataclasses.fields(cls)}
    for key in data:
        if key not in known:
            path = f"{where}.{key}" if where else str(key)
            raise ConfigError(f"unknown field {path!r}")
    kwargs = {}
    for key, value in data.items():
        path = f"{where}.{key}" if where else key
        kwargs[key] = _convert(value, hints[key], path)
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{label}: {exc}") from exc


def to_plain(obj) -> Any:
    """JSON/YAML-ready view of a config dataclass."""
    if dataclasses.is_dataclass(obj):
        return {f.name: to_plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, enum.Enum):
        return obj.value
    if isinstance(obj, (list, tuple)):
        return [to_plain(v) for v in obj]
    return obj


def read_mapping(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config: {exc.strerror}") from exc
    try:
        data = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError(f"{path}: not valid {'JSON' if path.suffix == '.json' else 'YAML'}: {exc}") from exc
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return data


def load_config(cls, path=None, overrides: Optional[dict] = None):
    data = read_mapping(path) if path else {}
    for dotted, value in (overrides or {}).items():
        node = data
        *parents, leaf = dotted.split(".")
        for p in parents:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"cannot override {dotted!r}: {p!r} is not a section")
        node[leaf] = value
    return build(cls, data)


def dump_yaml(obj) -> str:
    return yaml.safe_dump(to_plain(obj), sort_keys=False, default_flow_style=None)
