"""U-Net with SE blocks and the five compared variants, plus the checkpoint container."""

import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Union

import numpy as np

from fre_seg.autograd import Tensor, no_grad
from fre_seg.autograd.ops import concat_channels, maxpool2, relu, upsample_nearest, upsample_nearest2
from fre_seg.errors import ConfigError, ShapeError
from fre_seg.layers import (
    EVAL,
    TRAIN,
    BatchNorm2d,
    Conv,
    Module,
    SEBlock,
    SelectionState,
    channel_dropout,
    fre_forward,
    reselect,
)
from fre_seg.models import ModelConfig, ModelVariant

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT_VERSION = 1

FeatureHook = Callable[[Tensor], Tensor]


class ConvBNReLU(Module):
    def __init__(self, in_ch: int, out_ch: int, rng: np.random.Generator):
        super().__init__()
        self.conv = self.add_module("conv", Conv(in_ch, out_ch, 3, rng))
        self.bn = self.add_module("bn", BatchNorm2d(out_ch))

    def __call__(self, x: Tensor, phase: str, update_stats: bool = True) -> Tensor:
        return relu(self.bn(self.conv(x), phase, update_stats))


class DoubleConv(Module):
    """Two conv-BN-ReLU layers followed by an SE block."""

    def __init__(self, in_ch: int, out_ch: int, reduction: int, rng: np.random.Generator):
        super().__init__()
        self.c1 = self.add_module("c1", ConvBNReLU(in_ch, out_ch, rng))
        self.c2 = self.add_module("c2", ConvBNReLU(out_ch, out_ch, rng))
        self.se = self.add_module("se", SEBlock(out_ch, reduction, rng))

    def convs(self, x: Tensor, phase: str, update_stats: bool = True) -> Tensor:
        return self.c2(self.c1(x, phase, update_stats), phase, update_stats)

    def __call__(self, x: Tensor, phase: str, update_stats: bool = True) -> Tensor:
        return self.se(self.convs(x, phase, update_stats))


@dataclass
class NetworkOutput:
    logits: Tensor
    aux_logits: Optional[Tensor] = None
    activations: Dict[str, Tensor] = field(default_factory=dict)


class Network(Module):
    """
    U-Net with SE blocks.

    Encoder stages: 2x[conv3x3 -> BN -> ReLU] -> SE -> maxpool. The bottleneck
    block (absent in the no_deep_layers variant) hosts FRE or channel dropout.
    Decoder stages: nearest x2 upsample -> conv3x3 -> concat(skip) -> 2x conv -> SE.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.selection = SelectionState()
        rng = np.random.default_rng(cfg.weight_seed)

        widths = cfg.widths
        deep = cfg.bottleneck_width
        r = cfg.se_reduction

        in_ch = cfg.input_channels
        self.encoders: List[DoubleConv] = []
        for i, width in enumerate(widths):
            self.encoders.append(self.add_module(f"enc{i}", DoubleConv(in_ch, width, r, rng)))
            in_ch = width

        self.bottleneck: Optional[DoubleConv] = None
        self.aux_head: Optional[Conv] = None
        if cfg.variant is ModelVariant.NO_DEEP_LAYERS:
            # The deepest skip feeds the first decoder stage through a 1x1 channel-matching conv
            self.bridge = self.add_module("bridge", Conv(widths[-1], widths[-1], 1, rng))
        else:
            self.bottleneck = self.add_module("bottleneck", DoubleConv(widths[-1], deep, r, rng))
            if cfg.variant is ModelVariant.SUPERVISION:
                self.aux_head = self.add_module("aux_head", Conv(deep, cfg.classes, 1, rng))

        self.up_convs: Dict[int, Conv] = {}
        self.decoders: Dict[int, DoubleConv] = {}
        for i in reversed(range(cfg.depth)):
            below = deep if i == cfg.depth - 1 else widths[i + 1]
            if i < cfg.depth - 1 or self.bottleneck is not None:
                self.up_convs[i] = self.add_module(f"up{i}", Conv(below, widths[i], 3, rng))
            self.decoders[i] = self.add_module(f"dec{i}", DoubleConv(2 * widths[i], widths[i], r, rng))

        self.head = self.add_module("head", Conv(widths[0], cfg.classes, 1, rng))

    @property
    def multiple(self) -> int:
        return 2 ** self.cfg.depth

    def forward(
        self,
        images: Union[Tensor, np.ndarray],
        phase: str = TRAIN,
        epoch: int = 0,
        batch: int = 0,
        update_stats: bool = True,
        feature_hook: Optional[FeatureHook] = None,
    ) -> NetworkOutput:
        """
        Run the network.

        Args:
            images: (N, C, H, W) with H and W divisible by 2**depth
            phase: "train" or "eval"; FRE and dropout act only in "train"
            epoch: selects the FRE channel set and dropout masks
            batch: batch index within the epoch (per-batch FRE, dropout masks)
            update_stats: whether train-mode BN moves its running statistics
            feature_hook: optional callable applied to the bottleneck output after FRE

        Returns:
            NetworkOutput with main logits, auxiliary logits (supervision variant)
            and the instrumented activations at the "bottleneck" and "skip" sites.
        """
        x = images if isinstance(images, Tensor) else Tensor(images)
        self._check_input(x)
        cfg = self.cfg
        output = NetworkOutput(logits=x)

        skips = []
        for i, enc in enumerate(self.encoders):
            if i:
                x = maxpool2(x)
            x = enc(x, phase, update_stats)
            skips.append(x)
        output.activations["skip"] = skips[-1]

        if self.bottleneck is None:
            up = self.bridge(skips[-1])
        else:
            deep = self._bottleneck(maxpool2(skips[-1]), phase, epoch, batch, update_stats)
            if feature_hook is not None:
                deep = feature_hook(deep)
            output.activations["bottleneck"] = deep
            if self.aux_head is not None:
                output.aux_logits = upsample_nearest(self.aux_head(deep), self.multiple)
            up = self.up_convs[cfg.depth - 1](upsample_nearest2(deep))

        for i in reversed(range(cfg.depth)):
            if i < cfg.depth - 1:
                up = self.up_convs[i](upsample_nearest2(x))
            x = self.decoders[i](concat_channels(skips[i], up), phase, update_stats)

        output.logits = self.head(x)
        return output

    __call__ = forward

    def _bottleneck(self, x: Tensor, phase: str, epoch: int, batch: int, update_stats: bool) -> Tensor:
        cfg = self.cfg
        block = self.bottleneck
        h = block.convs(x, phase, update_stats)

        if cfg.fre.active and phase == TRAIN:
            self.selection = reselect(self.selection, epoch, cfg.fre, cfg.bottleneck_width, batch)
        if cfg.fre.after_se:
            h = fre_forward(block.se(h), cfg.fre, self.selection, phase)
        else:
            h = block.se(fre_forward(h, cfg.fre, self.selection, phase))

        if cfg.dropout_rate is not None:
            rng = np.random.default_rng([cfg.dropout_seed, epoch, batch])
            h = channel_dropout(h, cfg.dropout_rate, phase, rng)
        return h

    def _check_input(self, x: Tensor) -> None:
        if x.ndim != 4:
            raise ShapeError("forward", "rank", f"expected (N, C, H, W), got {x.shape}")
        if x.shape[1] != self.cfg.input_channels:
            raise ShapeError("forward", "channels", f"expected {self.cfg.input_channels}, got {x.shape[1]}")
        for axis, name in ((2, "height"), (3, "width")):
            if x.shape[axis] % self.multiple:
                raise ShapeError("forward", name, f"{x.shape[axis]} is not a multiple of {self.multiple}")

    def predict(self, images: np.ndarray, batch_size: int = 8) -> np.ndarray:
        """Eval-phase class map of shape (N, H, W)."""
        preds = []
        with no_grad():
            for start in range(0, len(images), batch_size):
                chunk = images[start:start + batch_size]
                logits = self.forward(Tensor(chunk.astype(self.dtype, copy=False)), phase=EVAL).logits
                preds.append(logits.data.argmax(axis=1))
        return np.concatenate(preds, axis=0)

    @property
    def dtype(self) -> np.dtype:
        return self.head.weight.dtype

    # **** state ****

    def state_dict(self) -> Dict[str, np.ndarray]:
        state = {f"param/{name}": p.data.copy() for name, p in self.named_parameters()}
        for name, stats in self.named_buffers():
            state[f"running_mean/{name}"] = stats.mean.copy()
            state[f"running_var/{name}"] = stats.var.copy()
        return state

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        for name, p in self.named_parameters():
            key = f"param/{name}"
            if key not in state:
                raise ConfigError("checkpoint", f"missing parameter {name}")
            if state[key].shape != p.data.shape:
                raise ShapeError("load_state_dict", name, f"{state[key].shape} != {p.data.shape}")
            p.data = state[key].astype(p.data.dtype, copy=True)
        for name, stats in self.named_buffers():
            for key, target in ((f"running_mean/{name}", stats.mean), (f"running_var/{name}", stats.var)):
                if key not in state:
                    raise ConfigError("checkpoint", f"missing running statistics {key}")
                if state[key].shape != target.shape:
                    raise ShapeError("load_state_dict", key, f"{state[key].shape} != {target.shape}")
                target[...] = state[key]


def build(cfg: ModelConfig) -> Network:
    """Build the network described by `cfg` with freshly initialized weights."""
    net = Network(cfg)
    logger.debug("built %s network with %d parameters", cfg.variant.value, net.num_parameters())
    return net


# **** checkpoint container ****

@dataclass
class Checkpoint:
    network: Network
    meta: Dict = field(default_factory=dict)
    extra: Dict[str, np.ndarray] = field(default_factory=dict)


def save_checkpoint(
    net: Network,
    path: Union[str, Path],
    meta: Optional[Dict] = None,
    extra: Optional[Dict[str, np.ndarray]] = None,
    state: Optional[Dict[str, np.ndarray]] = None,
) -> Path:
    """
    Write a checkpoint as an uncompressed NumPy .npz archive.

    Keys: format_version, config (JSON), meta (JSON), param/<name>,
    running_mean/<name>, running_var/<name>, plus caller-supplied extras
    (e.g. optimizer moments under opt/...). The file is written under a temporary
    name and renamed into place.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays = dict(state if state is not None else net.state_dict())
    arrays["format_version"] = np.array(CHECKPOINT_FORMAT_VERSION)
    arrays["config"] = np.array(json.dumps(net.cfg.to_dict(), sort_keys=True))
    arrays["meta"] = np.array(json.dumps(meta or {}, sort_keys=True))
    arrays.update(extra or {})

    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        np.savez(f, **arrays)
    os.replace(tmp, path)
    return path


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    with np.load(path, allow_pickle=False) as archive:
        arrays = {key: archive[key] for key in archive.files}

    version = int(arrays.pop("format_version", -1))
    if version != CHECKPOINT_FORMAT_VERSION:
        raise ConfigError("checkpoint.format_version", f"unsupported version {version} in {path}")
    cfg = ModelConfig.from_dict(json.loads(str(arrays.pop("config"))))
    meta = json.loads(str(arrays.pop("meta")))

    net = build(cfg)
    net.load_state_dict(arrays)
    extra = {k: v for k, v in arrays.items() if not k.startswith(("param/", "running_mean/", "running_var/"))}
    return Checkpoint(network=net, meta=meta, extra=extra)
