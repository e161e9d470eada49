"""Run configuration: JSON file, --set overrides, seed expansion and validation."""

import hashlib
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, Iterable, Optional, Tuple, Union

from fre_seg.errors import ConfigError
from fre_seg.models import (
    DatasetSplit,
    FREConfig,
    FREMode,
    ModelConfig,
    ModelVariant,
    SupervisionConfig,
    SyntheticSpec,
    TrainConfig,
)
from fre_seg.search import SearchSpace, TPEConfig

SEED_NAMES = ("weights", "fre", "dropout", "data", "shuffle", "search")
DEFAULT_STAT_HOOKS = ("means", "channel_sums")
SEARCH_TARGETS = ("fre", "supervision")


def derive_seed(seed: int, name: str) -> int:
    """Named sub-seed: the first four bytes of SHA-256 over "<seed>:<name>"."""
    digest = hashlib.sha256(f"{seed}:{name}".encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "big")


def expand_seeds(seed: int, explicit: Optional[Dict[str, int]] = None) -> Dict[str, int]:
    seeds = {name: derive_seed(seed, name) for name in SEED_NAMES}
    for name, value in (explicit or {}).items():
        if name not in SEED_NAMES:
            raise ConfigError(f"seeds.{name}", f"unknown sub-seed; expected one of {SEED_NAMES}")
        seeds[name] = int(value)
    return seeds


@dataclass(frozen=True)
class DataConfig:
    """Either a PNG dataset directory or the synthetic generator."""

    path: Optional[str] = None
    synthetic: SyntheticSpec = field(default_factory=SyntheticSpec)
    n: int = 50
    tile: Optional[int] = None

    def validate(self, classes: int, multiple: int) -> None:
        if self.path is None:
            self.synthetic.validate(multiple)
            if self.synthetic.classes != classes:
                raise ConfigError(
                    "data.synthetic.class_scheme",
                    f"{self.synthetic.class_scheme} has {self.synthetic.classes} classes, model has {classes}",
                )
            if self.n < 1:
                raise ConfigError("data.n", f"must be >= 1, got {self.n}")
        if self.tile is not None and (self.tile < 1 or self.tile % multiple):
            raise ConfigError("data.tile", f"must be a positive multiple of {multiple}, got {self.tile}")

    def load(self, classes: int) -> DatasetSplit:
        from fre_seg.sources import LocalPNGSource, SyntheticSource, tile_samples

        if self.path is not None:
            splits = LocalPNGSource(self.path, classes).load()
        else:
            splits = SyntheticSource(self.synthetic, self.n).load()
        if self.tile is not None:
            splits = DatasetSplit(*(tile_samples(splits.get(name), self.tile) for name in DatasetSplit.SPLITS))
        return splits

    def to_dict(self) -> Dict[str, Any]:
        return {"path": self.path, "synthetic": self.synthetic.to_dict(), "n": self.n, "tile": self.tile}

    @classmethod
    def from_dict(cls, data: Dict[str, Any], seed: int) -> "DataConfig":
        synthetic = dict(data.get("synthetic") or {})
        synthetic["seed"] = seed
        return cls(
            path=data.get("path"),
            synthetic=SyntheticSpec.from_dict(synthetic),
            n=int(data.get("n", 50)),
            tile=data.get("tile"),
        )


@dataclass(frozen=True)
class SearchConfig:
    target: str = "fre"
    n_trials: int = 50
    epochs: Optional[int] = None
    space: Optional[SearchSpace] = None
    tpe: TPEConfig = field(default_factory=TPEConfig)
    log_x: bool = False
    seed: int = 0

    def resolved_space(self, model: ModelConfig) -> SearchSpace:
        if self.space is not None:
            return self.space
        if self.target == "fre":
            return SearchSpace.fre(model.bottleneck_width, log_x=self.log_x)
        return SearchSpace.supervision()

    def validate(self, model: ModelConfig) -> None:
        if self.target not in SEARCH_TARGETS:
            raise ConfigError("search.target", f"must be one of {SEARCH_TARGETS}, got {self.target!r}")
        if self.n_trials < 1:
            raise ConfigError("search.n_trials", f"must be >= 1, got {self.n_trials}")
        self.tpe.validate()
        space = self.resolved_space(model)
        space.validate()
        for dim in space.dimensions:
            if dim.name == "B" and dim.high > model.bottleneck_width:
                raise ConfigError("search.B", f"upper bound exceeds the bottleneck width {model.bottleneck_width}")

    def to_dict(self) -> Dict[str, Any]:
        return {
            "target": self.target,
            "n_trials": self.n_trials,
            "epochs": self.epochs,
            "space": self.space.to_dict() if self.space is not None else None,
            "tpe": self.tpe.to_dict(),
            "log_x": self.log_x,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any], seed: int) -> "SearchConfig":
        return cls(
            target=data.get("target", "fre"),
            n_trials=int(data.get("n_trials", 50)),
            epochs=data.get("epochs"),
            space=SearchSpace.from_dict(data["space"]) if data.get("space") else None,
            tpe=TPEConfig.from_dict(data.get("tpe") or {}),
            log_x=bool(data.get("log_x", False)),
            seed=seed,
        )


@dataclass(frozen=True)
class RunConfig:
    """Everything one command needs; validated as a whole before any work starts."""

    model: ModelConfig
    train: TrainConfig
    data: DataConfig
    search: SearchConfig
    seed: int = 0
    seeds: Dict[str, int] = field(default_factory=dict)
    output_dir: str = "runs/default"

    @property
    def class_names(self):
        if self.data.path is None:
            return self.data.synthetic.class_names
        return tuple(f"class{c}" for c in range(self.model.classes))

    def validate(self) -> "RunConfig":
        self.model.validate()
        self.train.validate()
        self.data.validate(self.model.classes, 2 ** self.model.depth)
        self.search.validate(self.model)
        return self

    def to_dict(self) -> Dict[str, Any]:
        """The fully resolved config; loading it back reproduces this RunConfig."""
        model = self.model.to_dict()
        fre = model.pop("fre")
        supervision = model.pop("supervision")
        dropout_rate = model.pop("dropout_rate")
        for name in ("weight_seed", "dropout_seed"):
            model.pop(name)
        fre.pop("seed")
        train = self.train.to_dict()
        train.pop("seed")
        data = self.data.to_dict()
        data["synthetic"].pop("seed")
        return {
            "seed": self.seed,
            "seeds": dict(self.seeds),
            "model": model,
            "fre": fre,
            "supervision": supervision,
            "dropout_rate": dropout_rate,
            "train": train,
            "data": data,
            "search": self.search.to_dict(),
            "output_dir": self.output_dir,
        }

    def with_params(self, params: Dict[str, float], trial_seed: Optional[int] = None) -> "RunConfig":
        """Apply searched values (B/X or lambda) and, optionally, a per-trial seed."""
        model = self.model
        if "B" in params or "X" in params:
            fre = replace(
                model.fre,
                B=int(params.get("B", model.fre.B)),
                X=float(params.get("X", model.fre.X)),
            )
            model = replace(model, fre=fre)
        if "lambda" in params:
            model = replace(model, supervision=SupervisionConfig(lam=float(params["lambda"])))
        cfg = replace(self, model=model)
        if trial_seed is not None:
            seeds = expand_seeds(trial_seed)
            seeds["data"] = self.seeds["data"]
            seeds["search"] = self.seeds["search"]
            cfg = cfg._reseeded(trial_seed, seeds)
        return cfg

    def _reseeded(self, seed: int, seeds: Dict[str, int]) -> "RunConfig":
        model = replace(
            self.model,
            weight_seed=seeds["weights"],
            dropout_seed=seeds["dropout"],
            fre=replace(self.model.fre, seed=seeds["fre"]),
        )
        return replace(self, model=model, train=replace(self.train, seed=seeds["shuffle"]), seed=seed, seeds=seeds)


def set_path(raw: Dict[str, Any], key: str, value: Any) -> None:
    """Set raw["a"]["b"] for key "a.b", creating sections as needed."""
    parts = key.split(".")
    node = raw
    for part in parts[:-1]:
        child = node.get(part)
        if child is None:
            child = node[part] = {}
        if not isinstance(child, dict):
            raise ConfigError(key, f"{part!r} is not a section")
        node = child
    node[parts[-1]] = value


def parse_override(text: str) -> Tuple[str, Any]:
    """'fre.B=162' -> ('fre.B', 162); values are JSON when they parse, strings otherwise."""
    if "=" not in text:
        raise ConfigError(text, "overrides look like key.path=value")
    key, value = text.split("=", 1)
    try:
        parsed = json.loads(value)
    except json.JSONDecodeError:
        parsed = value
    return key.strip(), parsed


def resolve(raw: Dict[str, Any]) -> RunConfig:
    """Turn a raw config mapping into a validated RunConfig."""
    try:
        return _resolve(raw)
    except ConfigError:
        raise
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError("config", str(exc)) from exc


def _resolve(raw: Dict[str, Any]) -> RunConfig:
    raw = json.loads(json.dumps(raw))
    seed = int(raw.get("seed", 0))
    seeds = expand_seeds(seed, raw.get("seeds"))

    model_raw = dict(raw.get("model") or {})
    variant = ModelVariant(model_raw.pop("variant", "baseline"))
    for nested in ("fre", "supervision", "dropout_rate"):
        if nested in model_raw:
            raw.setdefault(nested, model_raw.pop(nested))

    fre_raw = dict(raw.get("fre") or {})
    if "mode" not in fre_raw:
        fre_raw["mode"] = FREMode.RANDOM.value if variant is ModelVariant.FRE else FREMode.OFF.value
    fre_raw["seed"] = seeds["fre"]
    fre = FREConfig.from_dict(fre_raw)

    supervision = None
    if raw.get("supervision") is not None:
        supervision = SupervisionConfig.from_dict(raw["supervision"])
    elif variant is ModelVariant.SUPERVISION:
        supervision = SupervisionConfig()

    model_raw.update(
        variant=variant.value,
        fre=fre.to_dict(),
        supervision=supervision.to_dict() if supervision else None,
        weight_seed=seeds["weights"],
        dropout_seed=seeds["dropout"],
    )
    model = ModelConfig.from_dict(model_raw)

    dropout_rate = raw.get("dropout_rate")
    if dropout_rate == "auto":
        # Same share of bottleneck channels as FRE enhances
        dropout_rate = fre.B / model.bottleneck_width
    elif isinstance(dropout_rate, str):
        raise ConfigError("dropout_rate", f"expected a number or 'auto', got {dropout_rate!r}")
    model = replace(model, dropout_rate=float(dropout_rate) if dropout_rate is not None else None)

    train_raw = dict(raw.get("train") or {})
    train_raw.setdefault("stat_hooks", list(DEFAULT_STAT_HOOKS))
    train_raw["seed"] = seeds["shuffle"]
    train = TrainConfig.from_dict(train_raw)
    data = DataConfig.from_dict(raw.get("data") or {}, seeds["data"])
    search = SearchConfig.from_dict(raw.get("search") or {}, seeds["search"])

    return RunConfig(
        model=model,
        train=train,
        data=data,
        search=search,
        seed=seed,
        seeds=seeds,
        output_dir=str(raw.get("output_dir", "runs/default")),
    ).validate()


def load_config(
    path: Optional[Union[str, Path]] = None,
    overrides: Iterable[str] = (),
) -> RunConfig:
    """Read a JSON run config (or start from defaults) and apply key.path=value overrides."""
    raw: Dict[str, Any] = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError("config", f"file not found: {path}")
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError("config", f"{path} is not valid JSON: {exc}") from exc
    for text in overrides:
        key, value = parse_override(text)
        set_path(raw, key, value)
    return resolve(raw)
