"""Parameter containers, the Feature Random Enhancement module, SE block and channel dropout."""

from dataclasses import dataclass
from typing import Dict, Iterator, NamedTuple, Optional, Tuple, Union

import numpy as np

from fre_seg.autograd import Tensor
from fre_seg.autograd.ops import (
    RunningStats,
    batch_norm,
    channel_gate,
    conv2d,
    dense,
    global_avg_pool,
    relu,
    scale_channels,
    sigmoid,
)
from fre_seg.errors import ConfigError, ShapeError
from fre_seg.models import FREConfig, FREMode

TRAIN = "train"
EVAL = "eval"


class Module:
    """Tree of named parameters and running-statistics buffers."""

    def __init__(self):
        self._parameters: Dict[str, Tensor] = {}
        self._buffers: Dict[str, RunningStats] = {}
        self._modules: Dict[str, "Module"] = {}

    def add_parameter(self, name: str, value: np.ndarray) -> Tensor:
        param = Tensor(value, requires_grad=True, dtype=value.dtype)
        self._parameters[name] = param
        return param

    def add_buffer(self, name: str, stats: RunningStats) -> RunningStats:
        self._buffers[name] = stats
        return stats

    def add_module(self, name: str, module: "Module") -> "Module":
        self._modules[name] = module
        return module

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Tensor]]:
        for name, param in self._parameters.items():
            yield prefix + name, param
        for name, module in self._modules.items():
            yield from module.named_parameters(f"{prefix}{name}.")

    def named_buffers(self, prefix: str = "") -> Iterator[Tuple[str, RunningStats]]:
        for name, stats in self._buffers.items():
            yield prefix + name, stats
        for name, module in self._modules.items():
            yield from module.named_buffers(f"{prefix}{name}.")

    def zero_grad(self) -> None:
        for _, param in self.named_parameters():
            param.zero_grad()

    def num_parameters(self) -> int:
        return sum(p.data.size for _, p in self.named_parameters())

    def astype(self, dtype) -> "Module":
        """Convert parameters and buffers in place."""
        for param in self._parameters.values():
            param.data = param.data.astype(dtype)
            param.grad = None
        for stats in self._buffers.values():
            stats.mean = stats.mean.astype(dtype)
            stats.var = stats.var.astype(dtype)
        for module in self._modules.values():
            module.astype(dtype)
        return self


def kaiming(rng: np.random.Generator, shape: Tuple[int, ...], fan_in: int) -> np.ndarray:
    """Normal init scaled by sqrt(2 / fan_in)."""
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(np.float32)


class Conv(Module):
    """Square-kernel convolution with 'same' padding for odd kernels."""

    def __init__(self, in_ch: int, out_ch: int, kernel: int, rng: np.random.Generator):
        super().__init__()
        self.padding = kernel // 2
        self.weight = self.add_parameter("weight", kaiming(rng, (out_ch, in_ch, kernel, kernel), in_ch * kernel * kernel))
        self.bias = self.add_parameter("bias", np.zeros(out_ch, dtype=np.float32))

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight, self.bias, stride=1, padding=self.padding)


class BatchNorm2d(Module):
    def __init__(self, channels: int):
        super().__init__()
        self.gamma = self.add_parameter("gamma", np.ones(channels, dtype=np.float32))
        self.beta = self.add_parameter("beta", np.zeros(channels, dtype=np.float32))
        self.stats = self.add_buffer("stats", RunningStats.create(channels))

    def __call__(self, x: Tensor, phase: str, update_stats: bool = True) -> Tensor:
        return batch_norm(x, self.gamma, self.beta, mode=phase, stats=self.stats, update_stats=update_stats)


# **** squeeze-and-excitation ****

class SEWeights(NamedTuple):
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor


def se_block(features: Tensor, reduction: int, weights: SEWeights) -> Tensor:
    """
    Squeeze-and-excitation channel reweighting.

    out = features * sigmoid(dense2(relu(dense1(global_avg_pool(features))))),
    broadcast per (sample, channel). The hidden width is max(1, C // reduction).
    """
    channels = features.shape[1]
    hidden = max(1, channels // reduction)
    if weights.w1.shape != (channels, hidden) or weights.w2.shape != (hidden, channels):
        raise ShapeError("se_block", "channels", f"weights do not match {channels} channels / reduction {reduction}")
    squeezed = global_avg_pool(features)
    gate = sigmoid(dense(relu(dense(squeezed, weights.w1, weights.b1)), weights.w2, weights.b2))
    return channel_gate(features, gate)


class SEBlock(Module):
    def __init__(self, channels: int, reduction: int, rng: np.random.Generator):
        super().__init__()
        self.reduction = reduction
        hidden = max(1, channels // reduction)
        self.w1 = self.add_parameter("w1", kaiming(rng, (channels, hidden), channels))
        self.b1 = self.add_parameter("b1", np.zeros(hidden, dtype=np.float32))
        self.w2 = self.add_parameter("w2", kaiming(rng, (hidden, channels), hidden))
        self.b2 = self.add_parameter("b2", np.zeros(channels, dtype=np.float32))

    @property
    def weights(self) -> SEWeights:
        return SEWeights(self.w1, self.b1, self.w2, self.b2)

    def __call__(self, x: Tensor) -> Tensor:
        return se_block(x, self.reduction, self.weights)


# **** feature random enhancement ****

@dataclass(frozen=True)
class SelectionState:
    """Channels enhanced during the current epoch (and batch, in per-batch mode)."""

    epoch: int = -1
    selected: Tuple[int, ...] = ()
    batch: Optional[int] = None


def reselect(
    state: SelectionState,
    epoch: int,
    cfg: FREConfig,
    channels: int,
    batch: Optional[int] = None,
) -> SelectionState:
    """
    Draw the enhanced channel set for `epoch`.

    Random mode draws exactly B distinct channels uniformly without replacement
    from a generator keyed by (seed, epoch), or (seed, epoch, batch) when
    per-batch selection is enabled. Fixed mode always returns the fixed list.
    """
    batch = batch if cfg.per_batch else None
    if state.epoch == epoch and state.batch == batch and state.selected:
        return state

    if cfg.mode is FREMode.OFF:
        return SelectionState(epoch=epoch, selected=(), batch=batch)
    if cfg.mode is FREMode.FIXED:
        return SelectionState(epoch=epoch, selected=cfg.resolved_fixed_channels(), batch=batch)

    if not 1 <= cfg.B <= channels:
        raise ConfigError("fre.B", f"must lie in [1, {channels}], got {cfg.B}")
    key = [cfg.seed, epoch] if batch is None else [cfg.seed, epoch, batch]
    rng = np.random.default_rng(key)
    chosen = rng.choice(channels, size=cfg.B, replace=False)
    return SelectionState(epoch=epoch, selected=tuple(sorted(int(c) for c in chosen)), batch=batch)


def fre_forward(features: Tensor, cfg: FREConfig, state: SelectionState, phase: str) -> Tensor:
    """
    Multiply the selected channels by X during training.

    In the eval phase (or with FRE off) the input tensor itself is returned, so
    inference is bit-identical to a network without the module.
    """
    if phase == EVAL or not cfg.active or not state.selected:
        return features
    channels = features.shape[1]
    if max(state.selected) >= channels or len(state.selected) > channels:
        raise ShapeError("fre_forward", "channels", f"selection {state.selected} exceeds {channels} channels")
    factors = np.ones(channels, dtype=features.dtype)
    factors[list(state.selected)] = cfg.X
    return scale_channels(features, factors)


def channel_dropout(
    features: Tensor,
    rate: float,
    phase: str,
    seed: Union[int, np.random.Generator, None] = None,
) -> Tensor:
    """
    Zero whole channels with probability `rate` during training.

    Each (sample, channel) map is dropped independently; survivors are scaled by
    1 / (1 - rate). The eval phase is the identity.
    """
    if not 0.0 <= rate < 1.0:
        raise ConfigError("dropout_rate", f"must lie in [0, 1), got {rate}")
    if phase == EVAL or rate == 0.0:
        return features
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    keep = rng.random(features.shape[:2]) >= rate
    factors = keep.astype(features.dtype) / np.asarray(1.0 - rate, dtype=features.dtype)
    return scale_channels(features, factors)
