"""Data models shared by the network, training, search and data modules."""

from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from fre_seg.errors import ConfigError, DatasetError


CLASS_SCHEMES: Dict[str, Tuple[str, ...]] = {
    "three_class": ("background", "membrane", "nucleus"),
    "four_class": ("background", "membrane", "mitochondria", "synapse"),
}

STAT_HOOKS = ("means", "channel_sums")
STAT_SITES = ("bottleneck", "skip")
STAT_STATISTICS = ("mean", "sum")


class ModelVariant(str, Enum):
    """The five networks compared in the experiments."""

    BASELINE = "baseline"
    NO_DEEP_LAYERS = "no_deep_layers"
    SUPERVISION = "supervision"
    DROPOUT = "dropout"
    FRE = "fre"

    @property
    def display_name(self) -> str:
        """Row label used in comparison tables."""
        return {
            ModelVariant.BASELINE: "U-Net + SEblock",
            ModelVariant.NO_DEEP_LAYERS: "U-Net + SEblock without deep layers",
            ModelVariant.SUPERVISION: "U-Net + SEblock + Supervision",
            ModelVariant.DROPOUT: "Dropout (same percentage as FRE)",
            ModelVariant.FRE: "U-Net + SEblock + FRE",
        }[self]


class FREMode(str, Enum):
    """How the enhanced channel set is chosen."""

    RANDOM = "random"
    FIXED = "fixed"
    OFF = "off"


DEFAULT_FIXED_CHANNELS = tuple(range(10))


@dataclass(frozen=True)
class FREConfig:
    """Feature Random Enhancement settings.

    B channels of the bottleneck are multiplied by X during training only.
    """

    B: int = 162
    X: float = 632.0
    mode: FREMode = FREMode.OFF
    fixed_channels: Optional[Tuple[int, ...]] = None
    seed: int = 0
    per_batch: bool = False
    after_se: bool = True

    @property
    def active(self) -> bool:
        return self.mode is not FREMode.OFF

    def resolved_fixed_channels(self) -> Tuple[int, ...]:
        """Fixed channel list, defaulting to the first ten channels."""
        if self.fixed_channels is None:
            return DEFAULT_FIXED_CHANNELS
        return tuple(self.fixed_channels)

    def validate(self, channels: int) -> None:
        """Check the config against a feature map with `channels` channels."""
        if self.X < 1:
            raise ConfigError("fre.X", f"multiplier must be >= 1, got {self.X}")
        if self.mode is FREMode.RANDOM and not 1 <= self.B <= channels:
            raise ConfigError("fre.B", f"must lie in [1, {channels}], got {self.B}")
        if self.mode is FREMode.FIXED:
            fixed = self.resolved_fixed_channels()
            if not fixed:
                raise ConfigError("fre.fixed_channels", "must not be empty in fixed mode")
            if len(set(fixed)) != len(fixed):
                raise ConfigError("fre.fixed_channels", "indices must be unique")
            bad = [c for c in fixed if not 0 <= c < channels]
            if bad:
                raise ConfigError("fre.fixed_channels", f"indices {bad} outside [0, {channels})")

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["mode"] = self.mode.value
        data["fixed_channels"] = list(self.fixed_channels) if self.fixed_channels is not None else None
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "FREConfig":
        data = dict(data)
        if "mode" in data:
            data["mode"] = FREMode(data["mode"])
        if data.get("fixed_channels") is not None:
            data["fixed_channels"] = tuple(int(c) for c in data["fixed_channels"])
        if "X" in data:
            data["X"] = float(data["X"])
        return cls(**data)


@dataclass(frozen=True)
class SupervisionConfig:
    """Balancing weight between the final loss and the bottleneck loss."""

    lam: float = 0.3257

    def validate(self) -> None:
        if not 0.0 <= self.lam <= 1.0:
            raise ConfigError("supervision.lambda", f"must lie in [0, 1], got {self.lam}")

    def to_dict(self) -> Dict[str, Any]:
        return {"lambda": self.lam}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "SupervisionConfig":
        return cls(lam=float(data.get("lambda", data.get("lam", 0.3257))))


@dataclass(frozen=True)
class ModelConfig:
    """U-Net with SE blocks, plus the variant wiring."""

    input_channels: int = 1
    classes: int = 3
    base_width: int = 32
    depth: int = 4
    se_reduction: int = 16
    variant: ModelVariant = ModelVariant.BASELINE
    fre: FREConfig = field(default_factory=FREConfig)
    dropout_rate: Optional[float] = None
    supervision: Optional[SupervisionConfig] = None
    weight_seed: int = 0
    dropout_seed: int = 0

    @property
    def bottleneck_width(self) -> int:
        return self.base_width * 2 ** self.depth

    @property
    def widths(self) -> List[int]:
        """Encoder stage widths, shallowest first."""
        return [self.base_width * 2 ** i for i in range(self.depth)]

    def validate(self) -> None:
        """Reject inconsistent widths and ambiguous variant wiring."""
        for name in ("input_channels", "base_width", "depth", "se_reduction"):
            if getattr(self, name) < 1:
                raise ConfigError(f"model.{name}", "must be >= 1")
        if self.classes < 2:
            raise ConfigError("model.classes", f"need at least 2 classes, got {self.classes}")

        active = {
            ModelVariant.FRE: self.fre.active,
            ModelVariant.DROPOUT: self.dropout_rate is not None,
            ModelVariant.SUPERVISION: self.supervision is not None,
        }
        for variant, is_set in active.items():
            if is_set and self.variant is not variant:
                raise ConfigError(
                    "model.variant",
                    f"{variant.value} settings are only allowed with variant {variant.value}",
                )
            if self.variant is variant and not is_set:
                raise ConfigError("model.variant", f"variant {variant.value} needs its settings")

        if self.fre.active:
            self.fre.validate(self.bottleneck_width)
        if self.dropout_rate is not None and not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError("dropout_rate", f"must lie in [0, 1), got {self.dropout_rate}")
        if self.supervision is not None:
            self.supervision.validate()

    def to_dict(self) -> Dict[str, Any]:
        return {
            "input_channels": self.input_channels,
            "classes": self.classes,
            "base_width": self.base_width,
            "depth": self.depth,
            "se_reduction": self.se_reduction,
            "variant": self.variant.value,
            "fre": self.fre.to_dict(),
            "dropout_rate": self.dropout_rate,
            "supervision": self.supervision.to_dict() if self.supervision else None,
            "weight_seed": self.weight_seed,
            "dropout_seed": self.dropout_seed,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ModelConfig":
        data = dict(data)
        data["variant"] = ModelVariant(data.get("variant", "baseline"))
        data["fre"] = FREConfig.from_dict(data.get("fre") or {})
        if data.get("supervision") is not None:
            data["supervision"] = SupervisionConfig.from_dict(data["supervision"])
        return cls(**data)

    def with_variant(self, variant: ModelVariant, **changes: Any) -> "ModelConfig":
        return replace(self, variant=variant, **changes)


@dataclass(frozen=True)
class TrainConfig:
    """Optimisation schedule for one training run."""

    epochs: int = 2000
    batch_size: int = 4
    optimizer: str = "adam"
    lr: float = 1e-3
    momentum: float = 0.0
    seed: int = 0
    stat_hooks: Tuple[str, ...] = ()
    stat_channels: Optional[Tuple[int, ...]] = None

    def validate(self) -> None:
        if self.epochs < 1:
            raise ConfigError("train.epochs", f"must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError("train.batch_size", f"must be >= 1, got {self.batch_size}")
        # lr == 0 is accepted for zero-step runs
        if self.lr < 0:
            raise ConfigError("train.lr", f"must be >= 0, got {self.lr}")
        if self.momentum < 0 or self.momentum >= 1:
            raise ConfigError("train.momentum", f"must lie in [0, 1), got {self.momentum}")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError("train.optimizer", f"unknown optimizer {self.optimizer!r}")
        unknown = set(self.stat_hooks) - set(STAT_HOOKS)
        if unknown:
            raise ConfigError("train.stat_hooks", f"unknown hooks {sorted(unknown)}")

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["stat_hooks"] = list(self.stat_hooks)
        data["stat_channels"] = list(self.stat_channels) if self.stat_channels is not None else None
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "TrainConfig":
        data = dict(data)
        data["stat_hooks"] = tuple(data.get("stat_hooks") or ())
        if data.get("stat_channels") is not None:
            data["stat_channels"] = tuple(int(c) for c in data["stat_channels"])
        return cls(**data)


@dataclass(frozen=True)
class ActivationStat:
    """One activation statistic measured at the end of an epoch."""

    epoch: int
    site: str
    statistic: str
    value: float
    channel: Optional[int] = None

    FIELDNAMES = ("epoch", "site", "statistic", "channel", "value")

    def to_row(self) -> Dict[str, Any]:
        return {
            "epoch": self.epoch,
            "site": self.site,
            "statistic": self.statistic,
            "channel": "" if self.channel is None else self.channel,
            "value": repr(float(self.value)),
        }

    @classmethod
    def from_row(cls, row: Dict[str, str]) -> "ActivationStat":
        if row["site"] not in STAT_SITES or row["statistic"] not in STAT_STATISTICS:
            raise ValueError(f"not an activation stat row: {row}")
        channel = row.get("channel", "")
        return cls(
            epoch=int(row["epoch"]),
            site=row["site"],
            statistic=row["statistic"],
            value=float(row["value"]),
            channel=int(channel) if channel not in ("", None) else None,
        )


@dataclass
class TrialRecord:
    """One hyperparameter search trial."""

    index: int
    params: Dict[str, float]
    seed: int
    objective: Optional[float] = None
    status: str = "done"
    epochs: Optional[int] = None
    error: Optional[str] = None

    @property
    def done(self) -> bool:
        return self.status == "done"

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "TrialRecord":
        return cls(**data)


@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters of the synthetic cell-image generator."""

    image_size: int = 64
    class_scheme: str = "three_class"
    cells: Tuple[int, int] = (3, 6)
    radius: Tuple[float, float] = (0.10, 0.18)
    membrane_width: int = 2
    noise: float = 0.05
    blur: float = 1.0
    seed: int = 0

    @property
    def class_names(self) -> Tuple[str, ...]:
        return CLASS_SCHEMES[self.class_scheme]

    @property
    def classes(self) -> int:
        return len(self.class_names)

    def validate(self, multiple: int = 1) -> None:
        if self.class_scheme not in CLASS_SCHEMES:
            raise ConfigError("data.synthetic.class_scheme", f"unknown scheme {self.class_scheme!r}")
        if self.image_size < 8 or self.image_size % multiple:
            raise ConfigError(
                "data.synthetic.image_size",
                f"must be >= 8 and divisible by {multiple}, got {self.image_size}",
            )
        lo, hi = self.cells
        if not 1 <= lo <= hi:
            raise ConfigError("data.synthetic.cells", f"invalid range {self.cells}")
        if self.noise < 0 or self.blur < 0:
            raise ConfigError("data.synthetic", "noise and blur must be >= 0")

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["cells"] = list(self.cells)
        data["radius"] = list(self.radius)
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "SyntheticSpec":
        data = dict(data)
        if "cells" in data:
            data["cells"] = tuple(int(v) for v in data["cells"])
        if "radius" in data:
            data["radius"] = tuple(float(v) for v in data["radius"])
        return cls(**data)


@dataclass
class Sample:
    """One image with its exact label map."""

    stem: str
    image: np.ndarray
    label: np.ndarray


@dataclass
class DatasetSplit:
    """Train/validation/test partition of a dataset."""

    train: List[Sample] = field(default_factory=list)
    val: List[Sample] = field(default_factory=list)
    test: List[Sample] = field(default_factory=list)

    SPLITS = ("train", "val", "test")

    def get(self, name: str) -> List[Sample]:
        if name not in self.SPLITS:
            raise DatasetError(f"unknown split {name!r}")
        return getattr(self, name)

    def sizes(self) -> Dict[str, int]:
        return {name: len(self.get(name)) for name in self.SPLITS}

    def validate(self) -> None:
        """Splits must not share stems."""
        seen: Dict[str, str] = {}
        for name in self.SPLITS:
            for sample in self.get(name):
                if sample.stem in seen and seen[sample.stem] != name:
                    raise DatasetError(
                        f"stem {sample.stem!r} appears in both {seen[sample.stem]} and {name}"
                    )
                seen[sample.stem] = name
