import ast
import configparser
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional

from podn.errors import ConfigError
from podn.incremental import IncrementalConfig
from podn.prototypes import LossWeights, TrainConfig

METHODS = ("podn_radius", "podn", "odn_baseline", "closed_baseline")

# experiments let loss3 shape the features; the library default only moves the radiuses
EXPERIMENT_TRAIN = TrainConfig(radius_backprop=True)


@dataclass(frozen=True)
class DataSettings:
    dataset_path: Optional[str] = None
    n_clusters: int = 11
    dim: int = 16
    per_cluster: int = 100
    separation: float = 6.0
    sigma: float = 1.0
    known_count: int = 6
    min_incremental: int = 10
    test_fraction: float = 0.3


@dataclass(frozen=True)
class DetectorSettings:
    eps_mu: float = 0.5
    rho: float = 0.5


@dataclass(frozen=True)
class ExperimentConfig:
    data: DataSettings = field(default_factory=DataSettings)
    hidden_dims: tuple = (32,)
    train: TrainConfig = field(default_factory=lambda: EXPERIMENT_TRAIN)
    detector: DetectorSettings = field(default_factory=DetectorSettings)
    incremental: IncrementalConfig = field(default_factory=IncrementalConfig)
    method: str = "podn_radius"
    seed: int = 0
    out_dir: Optional[str] = "runs"
    label_budget: Optional[int] = None


# section -> key -> kind; kinds drive the INI getters
SCHEMA = {
    "data": {
        "dataset_path": "optional_str", "n_clusters": "int", "dim": "int",
        "per_cluster": "int", "separation": "float", "sigma": "float",
        "known_count": "int", "min_incremental": "int", "test_fraction": "float",
    },
    "model": {"hidden_dims": "literal"},
    "train": {
        "epochs": "int", "batch_size": "int", "learning_rate": "float",
        "momentum": "float", "prototype_lr_scale": "float", "radius_lr_scale": "float",
        "omega": "float", "w1": "float", "w2": "float", "radius_backprop": "bool",
        "max_grad_norm": "float",
    },
    "detector": {"eps_mu": "float", "rho": "float"},
    "incremental": {
        "trigger": "int", "memory_k": "int", "allometry": "float",
        "finetune_epochs": "int", "odn_alpha": "float", "odn_beta": "float", "odn_m": "int",
    },
    "experiment": {
        "method": "str", "seed": "int", "out_dir": "optional_str", "label_budget": "optional_int",
    },
}

# CLI flag -> (section, key)
FLAGS = {
    "method": ("experiment", "method"),
    "seed": ("experiment", "seed"),
    "out_dir": ("experiment", "out_dir"),
    "label_budget": ("experiment", "label_budget"),
    "eps_mu": ("detector", "eps_mu"),
    "rho": ("detector", "rho"),
    "omega": ("train", "omega"),
    "w1": ("train", "w1"),
    "w2": ("train", "w2"),
    "trigger": ("incremental", "trigger"),
    "allometry": ("incremental", "allometry"),
    "memory_k": ("incremental", "memory_k"),
}


def _read_ini(path: Path) -> dict:
    config = configparser.ConfigParser()
    config.read(path, encoding="utf-8")
    raw = {}
    for section in config.sections():
        if section not in SCHEMA:
            raise ConfigError(f"unknown section [{section}] in {path}")
        sec = config[section]
        raw[section] = {}
        for key in sec:
            kind = SCHEMA[section].get(key)
            if kind is None:
                raise ConfigError(f"unknown key {key!r} in [{section}] of {path}")
            try:
                if kind == "int":
                    value = sec.getint(key)
                elif kind == "float":
                    value = sec.getfloat(key)
                elif kind == "bool":
                    value = sec.getboolean(key)
                elif kind == "literal":
                    value = ast.literal_eval(sec.get(key))
                elif kind == "optional_int":
                    text = sec.get(key).strip()
                    value = int(text) if text else None
                elif kind == "optional_str":
                    value = sec.get(key).strip() or None
                else:
                    value = sec.get(key)
            except (ValueError, SyntaxError) as exc:
                raise ConfigError(f"bad value for {key!r} in [{section}]: {exc}") from None
            raw[section][key] = value
    return raw


def _read_json(path: Path) -> dict:
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from None
    for section, values in raw.items():
        if section not in SCHEMA:
            raise ConfigError(f"unknown section {section!r} in {path}")
        for key in values:
            if key not in SCHEMA[section]:
                raise ConfigError(f"unknown key {key!r} in section {section!r} of {path}")
    return raw


def apply_overrides(raw: dict, **flags) -> dict:
    """Merge CLI flags into the raw settings; ``None`` flags are ignored."""
    merged = {section: dict(values) for section, values in raw.items()}
    for flag, value in flags.items():
        if value is None:
            continue
        if flag not in FLAGS:
            raise ConfigError(f"unknown override {flag!r}")
        section, key = FLAGS[flag]
        merged.setdefault(section, {})[key] = value
    return merged


def build_config(raw: dict) -> ExperimentConfig:
    """Typed configuration from nested ``{section: {key: value}}`` settings."""
    data = raw.get("data", {})
    model = raw.get("model", {})
    train = dict(raw.get("train", {}))
    detector = raw.get("detector", {})
    incremental = raw.get("incremental", {})
    experiment = raw.get("experiment", {})

    weight_keys = {k: train.pop(k) for k in ("omega", "w1", "w2") if k in train}
    try:
        config = ExperimentConfig(
            data=DataSettings(**data),
            hidden_dims=tuple(model.get("hidden_dims", (32,))),
            train=replace(EXPERIMENT_TRAIN, **train, weights=LossWeights(**weight_keys)),
            detector=DetectorSettings(**detector),
            incremental=IncrementalConfig(**incremental),
            **experiment,
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    if config.method not in METHODS:
        raise ConfigError(f"method must be one of {METHODS}, got {config.method!r}")
    return config


def load_settings(path="configuration.ini", **flags) -> ExperimentConfig:
    """
    Read the settings file (INI, or JSON when the name ends in ``.json``) and
    apply CLI overrides on top.

    Missing file or missing keys fall back to the built-in defaults.
    """
    raw = {}
    if path is not None:
        path = Path(path)
        if path.exists():
            raw = _read_json(path) if path.suffix.lower() == ".json" else _read_ini(path)
        elif path.name != "configuration.ini":
            raise ConfigError(f"settings file {path} does not exist")
    return build_config(apply_overrides(raw, **flags))


def config_to_dict(config: ExperimentConfig) -> dict:
    """Nested dict in the settings layout, suitable for JSON."""
    train = asdict(config.train)
    weights = train.pop("weights")
    train.pop("seed")
    incremental = asdict(config.incremental)
    incremental.pop("init")
    return {
        "data": asdict(config.data),
        "model": {"hidden_dims": list(config.hidden_dims)},
        "train": {**train, **weights},
        "detector": asdict(config.detector),
        "incremental": incremental,
        "experiment": {
            "method": config.method,
            "seed": config.seed,
            "out_dir": config.out_dir,
            "label_budget": config.label_budget,
        },
    }
