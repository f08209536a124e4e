"""Experiment configuration: TOML file plus ``key=value`` overrides.

Layout (only ``rounds`` is required)::

    seed = 0
    rounds = 200
    clients = 20
    participation = 0.4
    alpha = 100.0
    distribution = "tracking_sandwich"   # random | sandwich | tracking_sandwich | fedavg
    aggregator = "maxnet"                # overlap | maxnet
    eval_every = 10
    eval_archs = ["smallest", "largest"]

    [space]    stages, base_depth, max_extra_depth, ratio_choices, hidden_width, max_mid_width
    [dataset]  kind ("blobs" | "csv"), classes, input_dim, per_class, spread, seed, path
    [local]    epochs, batch_size, learning_rate
    [beta]     beta0, beta_end, decay, decay_fraction | decay_rounds
    [nas]      population, generations, parent_fraction, mutation_prob, eval_subset_size
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, Optional, Tuple, Union

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .aggregation import DECAY_KINDS, BetaSchedule
from .arch import SpaceConfig, parse_arch
from .client import LocalTrainConfig
from .distribution import DISTRIBUTIONS, participants_per_round

AGGREGATORS = ("overlap", "maxnet")
DATASET_KINDS = ("blobs", "csv")


class ConfigError(ValueError):
    def __init__(self, key: str, reason: str):
        super().__init__(f"config key '{key}': {reason}")
        self.key = key
        self.reason = reason


@dataclass(frozen=True)
class DataSpec:
    kind: str = "blobs"
    classes: int = 10
    input_dim: int = 32
    per_class: int = 100
    spread: float = 0.3
    seed: Optional[int] = None
    path: Optional[str] = None


@dataclass(frozen=True)
class BetaSpec:
    beta0: float = 0.9
    beta_end: Optional[float] = None
    decay: str = "cosine"
    decay_fraction: float = 0.8
    decay_rounds: Optional[int] = None


@dataclass(frozen=True)
class NasSettings:
    population: int = 64
    generations: int = 20
    parent_fraction: float = 0.25
    mutation_prob: float = 0.1
    eval_subset_size: Optional[int] = None


@dataclass(frozen=True)
class ExperimentConfig:
    rounds: int
    space: SpaceConfig = field(default_factory=SpaceConfig)
    data: DataSpec = field(default_factory=DataSpec)
    clients: int = 20
    participation: float = 0.4
    alpha: float = 100.0
    distribution: str = "tracking_sandwich"
    aggregator: str = "maxnet"
    beta: BetaSpec = field(default_factory=BetaSpec)
    local: LocalTrainConfig = field(default_factory=LocalTrainConfig)
    eval_every: int = 10
    eval_archs: Tuple[str, ...] = ("smallest", "largest")
    seed: int = 0
    nas: NasSettings = field(default_factory=NasSettings)

    def __post_init__(self):
        object.__setattr__(self, "eval_archs", tuple(self.eval_archs))
        validate(self)

    @property
    def participants(self) -> int:
        return participants_per_round(self.clients, self.participation)

    @property
    def data_seed(self) -> int:
        return self.seed if self.data.seed is None else self.data.seed

    def beta_schedule(self) -> BetaSchedule:
        b = self.beta
        D = b.decay_rounds if b.decay_rounds is not None else max(1, int(round(b.decay_fraction * self.rounds)))
        end = b.beta_end if b.beta_end is not None else 1.0 / self.participants
        return BetaSchedule(beta0=b.beta0, beta_end=min(end, b.beta0), decay_kind=b.decay, decay_rounds=D)

    def to_dict(self) -> Dict[str, Any]:
        space = self.space.to_dict()
        space.pop("input_dim")
        space.pop("num_classes")
        out: Dict[str, Any] = {
            "seed": self.seed,
            "rounds": self.rounds,
            "clients": self.clients,
            "participation": self.participation,
            "alpha": self.alpha,
            "distribution": self.distribution,
            "aggregator": self.aggregator,
            "eval_every": self.eval_every,
            "eval_archs": list(self.eval_archs),
            "space": space,
            "dataset": _drop_none(self.data.__dict__),
            "local": {
                "epochs": self.local.local_epochs,
                "batch_size": self.local.batch_size,
                "learning_rate": self.local.learning_rate,
            },
            "beta": _drop_none(self.beta.__dict__),
            "nas": _drop_none(self.nas.__dict__),
        }
        if self.data.kind == "csv":
            out["dataset"]["input_dim"] = self.space.input_dim
            out["dataset"]["classes"] = self.space.num_classes
        return out


def _drop_none(d: dict) -> dict:
    return {k: v for k, v in d.items() if v is not None}


def validate(cfg: ExperimentConfig) -> None:
    def need(ok: bool, key: str, reason: str) -> None:
        if not ok:
            raise ConfigError(key, reason)

    need(cfg.rounds >= 1, "rounds", "must be >= 1")
    need(cfg.clients >= 1, "clients", "must be >= 1")
    need(0.0 < cfg.participation <= 1.0, "participation", "must lie in (0, 1]")
    need(cfg.alpha > 0, "alpha", "must be positive")
    need(cfg.distribution in DISTRIBUTIONS, "distribution", f"must be one of {', '.join(DISTRIBUTIONS)}")
    need(cfg.aggregator in AGGREGATORS, "aggregator", f"must be one of {', '.join(AGGREGATORS)}")
    need(cfg.eval_every >= 1, "eval_every", "must be >= 1")
    need(len(cfg.eval_archs) >= 1, "eval_archs", "must list at least one architecture")
    for text in cfg.eval_archs:
        try:
            parse_arch(cfg.space, text)
        except ValueError as e:
            raise ConfigError("eval_archs", str(e)) from None
    d = cfg.data
    need(d.kind in DATASET_KINDS, "dataset.kind", f"must be one of {', '.join(DATASET_KINDS)}")
    if d.kind == "blobs":
        need(d.classes >= 2, "dataset.classes", "must be >= 2")
        need(d.input_dim >= 1, "dataset.input_dim", "must be >= 1")
        need(d.per_class >= 1, "dataset.per_class", "must be >= 1")
        need(d.spread >= 0, "dataset.spread", "must be >= 0")
        need(cfg.space.input_dim == d.input_dim, "dataset.input_dim", "does not match space.input_dim")
        need(cfg.space.num_classes == d.classes, "dataset.classes", "does not match space.num_classes")
        n_train = d.classes * int(0.8 * d.per_class + 0.5)
        need(n_train >= cfg.clients, "clients", f"more clients than training samples ({n_train})")
    else:
        need(bool(d.path), "dataset.path", "required for kind = 'csv'")
    b = cfg.beta
    need(0.0 < b.beta0 <= 1.0, "beta.beta0", "must lie in (0, 1]")
    need(b.beta_end is None or 0.0 < b.beta_end <= b.beta0, "beta.beta_end", "must lie in (0, beta0]")
    need(b.decay in DECAY_KINDS, "beta.decay", f"must be one of {', '.join(DECAY_KINDS)}")
    need(0.0 < b.decay_fraction <= 1.0, "beta.decay_fraction", "must lie in (0, 1]")
    need(b.decay_rounds is None or b.decay_rounds >= 1, "beta.decay_rounds", "must be >= 1")
    n = cfg.nas
    need(n.population >= 2, "nas.population", "must be >= 2")
    need(n.generations >= 1, "nas.generations", "must be >= 1")
    need(0.0 < n.parent_fraction < 1.0, "nas.parent_fraction", "must lie in (0, 1)")
    need(0.0 <= n.mutation_prob <= 1.0, "nas.mutation_prob", "must lie in [0, 1]")
    need(n.eval_subset_size is None or n.eval_subset_size >= 1, "nas.eval_subset_size", "must be >= 1")


_TOP = {
    "seed": int,
    "rounds": int,
    "clients": int,
    "participation": float,
    "alpha": float,
    "distribution": str,
    "aggregator": str,
    "eval_every": int,
    "eval_archs": list,
}
_SECTIONS: Dict[str, Dict[str, type]] = {
    "space": {
        "stages": int,
        "base_depth": int,
        "max_extra_depth": int,
        "ratio_choices": list,
        "hidden_width": int,
        "max_mid_width": int,
    },
    "dataset": {
        "kind": str,
        "classes": int,
        "input_dim": int,
        "per_class": int,
        "spread": float,
        "seed": int,
        "path": str,
    },
    "local": {"epochs": int, "batch_size": int, "learning_rate": float},
    "beta": {"beta0": float, "beta_end": float, "decay": str, "decay_fraction": float, "decay_rounds": int},
    "nas": {
        "population": int,
        "generations": int,
        "parent_fraction": float,
        "mutation_prob": float,
        "eval_subset_size": int,
    },
}


def _typed(key: str, value: Any, kind: type) -> Any:
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if kind is list and isinstance(value, (list, tuple)):
        return list(value)
    if not isinstance(value, kind) or isinstance(value, bool):
        raise ConfigError(key, f"expected {kind.__name__}, got {type(value).__name__}")
    return value


def _parse_value(text: str) -> Any:
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def apply_override(raw: Dict[str, Any], assignment: str) -> None:
    if "=" not in assignment:
        raise ConfigError(assignment, "override must look like KEY=VALUE")
    key, text = assignment.split("=", 1)
    key = key.strip()
    parts = key.split(".")
    if len(parts) == 1:
        if key not in _TOP:
            raise ConfigError(key, "unknown key")
        raw[key] = _parse_value(text.strip())
    elif len(parts) == 2 and parts[0] in _SECTIONS:
        if parts[1] not in _SECTIONS[parts[0]]:
            raise ConfigError(key, "unknown key")
        raw.setdefault(parts[0], {})[parts[1]] = _parse_value(text.strip())
    else:
        raise ConfigError(key, "unknown key")


def config_from_dict(raw: Dict[str, Any], base_dir: Optional[Path] = None) -> ExperimentConfig:
    raw = copy.deepcopy(raw)
    for key, value in raw.items():
        if key in _SECTIONS:
            if not isinstance(value, dict):
                raise ConfigError(key, "must be a table")
            for sub in value:
                if sub not in _SECTIONS[key]:
                    raise ConfigError(f"{key}.{sub}", "unknown key")
        elif key not in _TOP:
            raise ConfigError(key, "unknown key")
    if "rounds" not in raw:
        raise ConfigError("rounds", "missing (required)")
    top = {k: _typed(k, raw[k], t) for k, t in _TOP.items() if k in raw}
    sec = {
        name: {k: _typed(f"{name}.{k}", v, fields[k]) for k, v in raw.get(name, {}).items()}
        for name, fields in _SECTIONS.items()
    }

    ds = sec["dataset"]
    if ds.get("kind", "blobs") == "csv":
        path = ds.get("path")
        if not path:
            raise ConfigError("dataset.path", "required for kind = 'csv'")
        if base_dir is not None and not Path(path).is_absolute():
            ds["path"] = str(base_dir / path)
        if "input_dim" not in ds or "classes" not in ds:
            from .data import load_csv

            try:
                found = load_csv(ds["path"])
            except (OSError, ValueError) as e:
                raise ConfigError("dataset.path", str(e)) from None
            ds.setdefault("input_dim", found.input_dim)
            ds.setdefault("classes", found.num_classes)
    data = DataSpec(**ds)

    sp = dict(sec["space"])
    if "ratio_choices" in sp:
        try:
            sp["ratio_choices"] = tuple(float(r) for r in sp["ratio_choices"])
        except (TypeError, ValueError):
            raise ConfigError("space.ratio_choices", "must be a list of numbers") from None
    try:
        space = SpaceConfig(input_dim=data.input_dim, num_classes=data.classes, **sp)
    except ValueError as e:
        raise ConfigError("space", str(e)) from None

    lc = sec["local"]
    try:
        local = LocalTrainConfig(
            local_epochs=lc.get("epochs", 5),
            batch_size=lc.get("batch_size", 32),
            learning_rate=lc.get("learning_rate", 0.1),
        )
    except ValueError as e:
        raise ConfigError("local", str(e)) from None

    if "eval_archs" in top:
        top["eval_archs"] = tuple(str(a) for a in top["eval_archs"])
    return ExperimentConfig(
        space=space,
        data=data,
        beta=BetaSpec(**sec["beta"]),
        local=local,
        nas=NasSettings(**sec["nas"]),
        **top,
    )


def load_config(
    path: Union[str, Path], overrides: Iterable[str] = (), seed: Optional[int] = None
) -> ExperimentConfig:
    path = Path(path)
    try:
        with path.open("rb") as fh:
            raw = tomllib.load(fh)
    except OSError as e:
        raise ConfigError("--config", f"cannot read {path}: {e.strerror}") from None
    except tomllib.TOMLDecodeError as e:
        raise ConfigError("--config", f"{path}: {e}") from None
    for item in overrides:
        apply_override(raw, item)
    if seed is not None:
        raw["seed"] = seed
    return config_from_dict(raw, base_dir=path.parent)
