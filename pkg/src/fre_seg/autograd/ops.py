"""Differentiable operations used by the U-Net, its losses and its instrumentation."""

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit, log_softmax, softmax

from fre_seg.autograd.tensor import Function, Tensor
from fre_seg.errors import LabelError, ShapeError

BN_EPS = 1e-5
BN_MOMENTUM = 0.9


@dataclass
class RunningStats:
    """Per-channel running mean and variance of a batch normalization layer."""

    mean: np.ndarray
    var: np.ndarray

    @classmethod
    def create(cls, channels: int, dtype=np.float32) -> "RunningStats":
        return cls(mean=np.zeros(channels, dtype=dtype), var=np.ones(channels, dtype=dtype))

    def astype(self, dtype) -> "RunningStats":
        return RunningStats(mean=self.mean.astype(dtype), var=self.var.astype(dtype))


def _require_rank4(op: str, x: np.ndarray) -> None:
    if x.ndim != 4:
        raise ShapeError(op, "rank", f"expected (batch, channel, height, width), got shape {x.shape}")


# **** convolution and resampling ****

class Conv2d(Function):
    def forward(self, x, w, b, stride=1, padding=0):
        _require_rank4("conv2d", x)
        if w.ndim != 4:
            raise ShapeError("conv2d", "kernel", f"expected (out_ch, in_ch, kh, kw), got {w.shape}")
        out_ch, in_ch, kh, kw = w.shape
        if x.shape[1] != in_ch:
            raise ShapeError("conv2d", "in_channels", f"input has {x.shape[1]} channels, kernel expects {in_ch}")
        if b.shape != (out_ch,):
            raise ShapeError("conv2d", "bias", f"expected shape ({out_ch},), got {b.shape}")
        if stride < 1 or padding < 0:
            raise ShapeError("conv2d", "stride", f"stride must be >= 1 and padding >= 0, got {stride}/{padding}")

        n, _, h, wd = x.shape
        out_h = (h + 2 * padding - kh) // stride + 1
        out_w = (wd + 2 * padding - kw) // stride + 1
        if out_h < 1 or out_w < 1:
            raise ShapeError("conv2d", "height", f"kernel {kh}x{kw} larger than padded input {h}x{wd}")

        xp = np.pad(x, [(0, 0), (0, 0), (padding, padding), (padding, padding)]) if padding else x
        # (N, C, out_h, out_w, kh, kw) view of every receptive field
        windows = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]

        self.x_shape = x.shape
        self.xp_shape = xp.shape
        self.windows = windows
        self.w = w
        self.stride = stride
        self.padding = padding

        out = np.tensordot(windows, w, axes=([1, 4, 5], [1, 2, 3]))
        return np.ascontiguousarray(out.transpose(0, 3, 1, 2)) + b[None, :, None, None]

    def backward(self, grad):
        w, s, p = self.w, self.stride, self.padding
        _, _, kh, kw = w.shape
        _, _, out_h, out_w = grad.shape

        grad_w = np.tensordot(grad, self.windows, axes=([0, 2, 3], [0, 2, 3]))
        grad_b = grad.sum(axis=(0, 2, 3))

        grad_xp = np.zeros(self.xp_shape, dtype=grad.dtype)
        for i in range(kh):
            for j in range(kw):
                contrib = np.tensordot(grad, w[:, :, i, j], axes=([1], [0])).transpose(0, 3, 1, 2)
                grad_xp[:, :, i:i + s * (out_h - 1) + 1:s, j:j + s * (out_w - 1) + 1:s] += contrib
        _, _, h, wd = self.x_shape
        grad_x = grad_xp[:, :, p:p + h, p:p + wd]
        return grad_x, grad_w.astype(w.dtype, copy=False), grad_b


class MaxPool2(Function):
    def forward(self, x):
        _require_rank4("maxpool2", x)
        n, c, h, w = x.shape
        if h % 2:
            raise ShapeError("maxpool2", "height", f"must be even, got {h}")
        if w % 2:
            raise ShapeError("maxpool2", "width", f"must be even, got {w}")
        # Window elements in scan order: (0,0), (0,1), (1,0), (1,1)
        windows = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
        self.argmax = windows.argmax(axis=-1)
        self.x_shape = x.shape
        return np.take_along_axis(windows, self.argmax[..., None], axis=-1)[..., 0]

    def backward(self, grad):
        n, c, h, w = self.x_shape
        routed = np.zeros((n, c, h // 2, w // 2, 4), dtype=grad.dtype)
        np.put_along_axis(routed, self.argmax[..., None], grad[..., None], axis=-1)
        grad_x = routed.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)
        return (grad_x,)


class UpsampleNearest(Function):
    def forward(self, x, factor=2):
        _require_rank4("upsample_nearest", x)
        if factor < 1:
            raise ShapeError("upsample_nearest", "factor", f"must be >= 1, got {factor}")
        self.factor = factor
        return np.repeat(np.repeat(x, factor, axis=2), factor, axis=3)

    def backward(self, grad):
        f = self.factor
        n, c, h, w = grad.shape
        return (grad.reshape(n, c, h // f, f, w // f, f).sum(axis=(3, 5)),)


class ConcatChannels(Function):
    def forward(self, a, b):
        _require_rank4("concat_channels", a)
        _require_rank4("concat_channels", b)
        for axis, name in ((0, "batch"), (2, "height"), (3, "width")):
            if a.shape[axis] != b.shape[axis]:
                raise ShapeError("concat_channels", name, f"{a.shape[axis]} != {b.shape[axis]}")
        self.split = a.shape[1]
        return np.concatenate([a, b], axis=1)

    def backward(self, grad):
        return grad[:, :self.split], grad[:, self.split:]


# **** normalization ****

class BatchNorm(Function):
    def forward(self, x, gamma, beta, mode="train", stats=None, momentum=BN_MOMENTUM,
                eps=BN_EPS, update_stats=True):
        _require_rank4("batch_norm", x)
        n, c, h, w = x.shape
        if gamma.shape != (c,) or beta.shape != (c,):
            raise ShapeError("batch_norm", "channels", f"gamma/beta must have length {c}")

        if mode == "train":
            if n * h * w == 1:
                raise ShapeError("batch_norm", "batch", "train mode needs more than one value per channel")
            mean = x.mean(axis=(0, 2, 3))
            var = x.var(axis=(0, 2, 3))
            if stats is not None and update_stats:
                stats.mean[...] = momentum * stats.mean + (1 - momentum) * mean
                stats.var[...] = momentum * stats.var + (1 - momentum) * var
        elif mode == "eval":
            if stats is None:
                raise ShapeError("batch_norm", "stats", "eval mode needs running statistics")
            mean = stats.mean.astype(x.dtype, copy=False)
            var = stats.var.astype(x.dtype, copy=False)
        else:
            raise ValueError(f"unknown batch_norm mode {mode!r}")

        self.mode = mode
        self.inv_std = (1.0 / np.sqrt(var + eps)).astype(x.dtype, copy=False)
        self.x_hat = (x - mean[None, :, None, None]) * self.inv_std[None, :, None, None]
        self.gamma = gamma
        return self.x_hat * gamma[None, :, None, None] + beta[None, :, None, None]

    def backward(self, grad):
        x_hat, inv_std = self.x_hat, self.inv_std[None, :, None, None]
        grad_gamma = (grad * x_hat).sum(axis=(0, 2, 3))
        grad_beta = grad.sum(axis=(0, 2, 3))
        grad_xhat = grad * self.gamma[None, :, None, None]

        if self.mode == "eval":
            return grad_xhat * inv_std, grad_gamma, grad_beta

        m = grad.shape[0] * grad.shape[2] * grad.shape[3]
        sum_g = grad_xhat.sum(axis=(0, 2, 3), keepdims=True)
        sum_gx = (grad_xhat * x_hat).sum(axis=(0, 2, 3), keepdims=True)
        grad_x = inv_std / m * (m * grad_xhat - sum_g - x_hat * sum_gx)
        return grad_x, grad_gamma, grad_beta


# **** pointwise and per-channel ****

class ReLU(Function):
    def forward(self, x):
        self.mask = x > 0
        return np.where(self.mask, x, 0).astype(x.dtype, copy=False)

    def backward(self, grad):
        return (grad * self.mask,)


class Sigmoid(Function):
    def forward(self, x):
        self.out = expit(x)
        return self.out

    def backward(self, grad):
        return (grad * self.out * (1 - self.out),)


class Dense(Function):
    def forward(self, x, w, b):
        if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0]:
            raise ShapeError("dense", "features", f"cannot multiply {x.shape} by {w.shape}")
        if b.shape != (w.shape[1],):
            raise ShapeError("dense", "bias", f"expected shape ({w.shape[1]},), got {b.shape}")
        self.x, self.w = x, w
        return x @ w + b

    def backward(self, grad):
        return grad @ self.w.T, self.x.T @ grad, grad.sum(axis=0)


class GlobalAvgPool(Function):
    def forward(self, x):
        _require_rank4("global_avg_pool", x)
        self.x_shape = x.shape
        return x.mean(axis=(2, 3))

    def backward(self, grad):
        n, c, h, w = self.x_shape
        return (np.broadcast_to(grad[:, :, None, None] / (h * w), self.x_shape).copy(),)


class ChannelGate(Function):
    def forward(self, x, gate):
        _require_rank4("channel_gate", x)
        if gate.shape != x.shape[:2]:
            raise ShapeError("channel_gate", "channels", f"gate {gate.shape} does not match {x.shape[:2]}")
        self.x, self.gate = x, gate
        return x * gate[:, :, None, None]

    def backward(self, grad):
        return grad * self.gate[:, :, None, None], (grad * self.x).sum(axis=(2, 3))


class ScaleChannels(Function):
    def forward(self, x, factors=None):
        _require_rank4("scale_channels", x)
        factors = np.asarray(factors, dtype=x.dtype)
        if factors.shape == (x.shape[1],):
            factors = factors[None, :, None, None]
        elif factors.shape == x.shape[:2]:
            factors = factors[:, :, None, None]
        else:
            raise ShapeError("scale_channels", "channels", f"factors {factors.shape} do not match {x.shape}")
        self.factors = factors
        return x * factors

    def backward(self, grad):
        return (grad * self.factors,)


# **** losses and arithmetic ****

class SoftmaxCrossEntropy(Function):
    def forward(self, logits, labels=None, ignore_index=None):
        _require_rank4("softmax_cross_entropy", logits)
        n, c, h, w = logits.shape
        labels = np.asarray(labels)
        if labels.shape != (n, h, w):
            raise ShapeError("softmax_cross_entropy", "labels", f"expected {(n, h, w)}, got {labels.shape}")

        valid = np.ones(labels.shape, dtype=bool) if ignore_index is None else labels != ignore_index
        bad = labels[valid & ((labels < 0) | (labels >= c))]
        if bad.size:
            raise LabelError(f"label {int(bad[0])} outside [0, {c})", value=int(bad[0]))

        safe = np.where(valid, labels, 0).astype(np.int64)
        log_p = log_softmax(logits, axis=1).astype(logits.dtype, copy=False)
        picked = np.take_along_axis(log_p, safe[:, None], axis=1)[:, 0]

        self.count = int(valid.sum())
        self.valid = valid
        self.safe = safe
        self.probs = softmax(logits, axis=1).astype(logits.dtype, copy=False)
        if self.count == 0:
            return np.zeros((), dtype=logits.dtype)
        return np.asarray(-(picked * valid).sum() / self.count, dtype=logits.dtype)

    def backward(self, grad):
        if self.count == 0:
            return (np.zeros_like(self.probs),)
        d = self.probs.copy()
        idx = self.safe[:, None]
        np.put_along_axis(d, idx, np.take_along_axis(d, idx, axis=1) - 1, axis=1)
        d *= self.valid[:, None]
        return (d * (grad / self.count),)


class Add(Function):
    def forward(self, a, b):
        self.shapes = (a.shape, b.shape)
        return a + b

    def backward(self, grad):
        return self.unbroadcast(grad, self.shapes[0]), self.unbroadcast(grad, self.shapes[1])


class Mul(Function):
    def forward(self, a, b):
        self.a, self.b = a, b
        return a * b

    def backward(self, grad):
        return self.unbroadcast(grad * self.b, self.a.shape), self.unbroadcast(grad * self.a, self.b.shape)


class SumAll(Function):
    def forward(self, x):
        self.x_shape = x.shape
        return np.asarray(x.sum(), dtype=x.dtype)

    def backward(self, grad):
        return (np.full(self.x_shape, grad, dtype=grad.dtype),)


class Reshape(Function):
    def forward(self, x, shape=()):
        self.x_shape = x.shape
        return x.reshape(shape)

    def backward(self, grad):
        return (grad.reshape(self.x_shape),)


# **** functional interface ****

def conv2d(x: Tensor, kernel: Tensor, bias: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation; output size is floor((H + 2p - k) / s) + 1 per dimension."""
    return Conv2d.apply(x, kernel, bias, stride=stride, padding=padding)


def maxpool2(x: Tensor) -> Tensor:
    """2x2 max pooling with stride 2; ties route the gradient to the first element in scan order."""
    return MaxPool2.apply(x)


def upsample_nearest(x: Tensor, factor: int = 2) -> Tensor:
    return UpsampleNearest.apply(x, factor=factor)


def upsample_nearest2(x: Tensor) -> Tensor:
    """Replicate every pixel into a 2x2 block."""
    return UpsampleNearest.apply(x, factor=2)


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    return ConcatChannels.apply(a, b)


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    mode: str = "train",
    stats: Optional[RunningStats] = None,
    update_stats: bool = True,
) -> Tensor:
    """
    Batch normalization over (batch, height, width) per channel.

    Train mode normalizes with batch statistics and, when `stats` is given and
    `update_stats` is set, moves the running statistics with momentum 0.9.
    Eval mode normalizes with the running statistics.
    """
    return BatchNorm.apply(x, gamma, beta, mode=mode, stats=stats, update_stats=update_stats)


def relu(x: Tensor) -> Tensor:
    return ReLU.apply(x)


def sigmoid(x: Tensor) -> Tensor:
    return Sigmoid.apply(x)


def dense(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x @ w + b for x of shape (N, F_in) and w of shape (F_in, F_out)."""
    return Dense.apply(x, w, b)


def global_avg_pool(x: Tensor) -> Tensor:
    return GlobalAvgPool.apply(x)


def channel_gate(x: Tensor, gate: Tensor) -> Tensor:
    """Multiply each (sample, channel) map by a learned gate of shape (N, C)."""
    return ChannelGate.apply(x, gate)


def scale_channels(x: Tensor, factors: np.ndarray) -> Tensor:
    """Multiply channels by constant factors of shape (C,) or (N, C)."""
    return ScaleChannels.apply(x, factors=factors)


def softmax_cross_entropy(logits: Tensor, labels: np.ndarray, ignore_index: Optional[int] = None) -> Tensor:
    """Mean of -log softmax(logits)[label] over the non-ignored pixels."""
    return SoftmaxCrossEntropy.apply(logits, labels=labels, ignore_index=ignore_index)


def add(a: Tensor, b: Tensor) -> Tensor:
    return Add.apply(a, b)


def mul(a: Tensor, b: Tensor) -> Tensor:
    return Mul.apply(a, b)


def sum_all(x: Tensor) -> Tensor:
    return SumAll.apply(x)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    return Reshape.apply(x, shape=tuple(shape))


__all__ = [
    "RunningStats",
    "conv2d",
    "maxpool2",
    "upsample_nearest",
    "upsample_nearest2",
    "concat_channels",
    "batch_norm",
    "relu",
    "sigmoid",
    "dense",
    "global_avg_pool",
    "channel_gate",
    "scale_channels",
    "softmax_cross_entropy",
    "add",
    "mul",
    "sum_all",
    "reshape",
]
