"""Training loop, loss composition, evaluation and activation-statistics instrumentation."""

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from fre_seg.autograd import Tensor, backward, no_grad
from fre_seg.autograd.ops import softmax_cross_entropy
from fre_seg.errors import ConfigError, DatasetError, TrainingDivergedError
from fre_seg.layers import EVAL, TRAIN
from fre_seg.metrics import ConfusionMatrix, SegMetrics, accumulate, iou
from fre_seg.models import (
    ActivationStat,
    DatasetSplit,
    FREMode,
    ModelConfig,
    Sample,
    SupervisionConfig,
    TrainConfig,
)
from fre_seg.network import Network, load_checkpoint, save_checkpoint

logger = logging.getLogger(__name__)

BEST_CHECKPOINT = "best.npz"
LAST_CHECKPOINT = "last.npz"


# **** losses ****

def blend_losses(main: Tensor, aux: Tensor, lam: float) -> Tensor:
    """(1 - lam) * main + lam * aux."""
    return main * (1.0 - lam) + aux * lam


def combined_loss(
    main_logits: Tensor,
    aux_logits: Optional[Tensor],
    labels: np.ndarray,
    sup: Optional[SupervisionConfig] = None,
) -> Tensor:
    """Softmax cross entropy of the main head, blended with the bottleneck head under supervision."""
    if (aux_logits is None) != (sup is None):
        raise ConfigError("supervision", "auxiliary logits must be given exactly when supervision is configured")
    main = softmax_cross_entropy(main_logits, labels)
    if sup is None:
        return main
    sup.validate()
    return blend_losses(main, softmax_cross_entropy(aux_logits, labels), sup.lam)


# **** optimizers ****

class Adam:
    """Adam with bias correction."""

    def __init__(self, params: List[Tuple[str, Tensor]], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in params}
        self.v = {name: np.zeros_like(p.data) for name, p in params}

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for name, p in self.params:
            grad = p.grad if p.grad is not None else np.zeros_like(p.data)
            self.m[name] = b1 * self.m[name] + (1 - b1) * grad
            self.v[name] = b2 * self.v[name] + (1 - b2) * grad * grad
            m_hat = self.m[name] / (1 - b1 ** self.t)
            v_hat = self.v[name] / (1 - b2 ** self.t)
            update = (self.lr * m_hat / (np.sqrt(v_hat) + self.eps)).astype(p.data.dtype, copy=False)
            p.data = p.data - update

    def state_dict(self) -> Dict[str, np.ndarray]:
        state = {"opt/t": np.array(self.t)}
        for name in self.m:
            state[f"opt/m/{name}"] = self.m[name]
            state[f"opt/v/{name}"] = self.v[name]
        return state

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        self.t = int(state["opt/t"])
        for name in self.m:
            self.m[name] = state[f"opt/m/{name}"].copy()
            self.v[name] = state[f"opt/v/{name}"].copy()


class SGD:
    """Plain SGD with optional momentum."""

    def __init__(self, params: List[Tuple[str, Tensor]], lr: float = 1e-2, momentum: float = 0.0):
        self.params = params
        self.lr = lr
        self.momentum = momentum
        self.velocity = {name: np.zeros_like(p.data) for name, p in params}

    def step(self) -> None:
        for name, p in self.params:
            if p.grad is None:
                continue
            self.velocity[name] = self.momentum * self.velocity[name] + p.grad
            p.data = p.data - (self.lr * self.velocity[name]).astype(p.data.dtype, copy=False)

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {f"opt/velocity/{name}": v for name, v in self.velocity.items()}

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        for name in self.velocity:
            self.velocity[name] = state[f"opt/velocity/{name}"].copy()


Optimizer = Union[Adam, SGD]


def make_optimizer(net: Network, tc: TrainConfig) -> Optimizer:
    params = list(net.named_parameters())
    if tc.optimizer == "sgd":
        return SGD(params, lr=tc.lr, momentum=tc.momentum)
    return Adam(params, lr=tc.lr)


# **** records ****

@dataclass
class HistoryRow:
    """One line of the metric history: train rows carry only the loss."""

    epoch: int
    split: str
    loss: float
    metrics: Optional[SegMetrics] = None

    def to_row(self, class_names: Sequence[str]) -> Dict[str, str]:
        row = {"epoch": str(self.epoch), "split": self.split}
        if self.metrics is not None:
            row.update(self.metrics.to_row(class_names))
        else:
            row.update({f"iou_{name}": "" for name in class_names})
            row["miou"] = ""
        row["loss"] = repr(float(self.loss))
        return row

    def to_dict(self) -> Dict:
        return {
            "epoch": self.epoch,
            "split": self.split,
            "loss": self.loss,
            "iou": list(self.metrics.per_class_iou) if self.metrics else None,
            "miou": self.metrics.mean_iou if self.metrics else None,
            "accuracy": self.metrics.pixel_accuracy if self.metrics else None,
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "HistoryRow":
        metrics = None
        if data.get("iou") is not None:
            metrics = SegMetrics(tuple(data["iou"]), data["miou"], data.get("accuracy") or 0.0)
        return cls(epoch=data["epoch"], split=data["split"], loss=data["loss"], metrics=metrics)


@dataclass
class TrainResult:
    best_epoch: int
    best_val_miou: float
    best_state: Dict[str, np.ndarray]
    history: List[HistoryRow] = field(default_factory=list)
    stats: List[ActivationStat] = field(default_factory=list)
    epochs_run: int = 0

    @property
    def best_val_metrics(self) -> Optional[SegMetrics]:
        for row in self.history:
            if row.split == "val" and row.epoch == self.best_epoch:
                return row.metrics
        return None


# **** evaluation ****

def _stack(samples: Sequence[Sample]) -> Tuple[np.ndarray, np.ndarray]:
    images = np.stack([s.image for s in samples]).astype(np.float32, copy=False)
    labels = np.stack([s.label for s in samples]).astype(np.int64, copy=False)
    return images, labels


def evaluate(model, samples: Sequence[Sample], batch_size: int = 4, classes: Optional[int] = None) -> SegMetrics:
    """
    Accumulate one confusion matrix over `samples` and convert it to IoU.

    `model` only needs a `predict(images, batch_size)` method returning class
    maps; a Network predicts with its eval-phase forward (FRE and dropout off,
    running statistics untouched).
    """
    if classes is None:
        classes = model.cfg.classes
    cm = ConfusionMatrix.zeros(classes)
    if not samples:
        return iou(cm)
    images, labels = _stack(samples)
    preds = model.predict(images, batch_size=batch_size)
    return iou(accumulate(cm, preds, labels))


def _validate(net: Network, samples: Sequence[Sample], batch_size: int) -> Tuple[SegMetrics, float]:
    """Eval-phase metrics and mean main-head loss in one pass."""
    images, labels = _stack(samples)
    cm = ConfusionMatrix.zeros(net.cfg.classes)
    total, pixels = 0.0, 0
    with no_grad():
        for start in range(0, len(images), batch_size):
            chunk = images[start:start + batch_size].astype(net.dtype, copy=False)
            truth = labels[start:start + batch_size]
            logits = net.forward(Tensor(chunk), phase=EVAL).logits
            cm = accumulate(cm, logits.data.argmax(axis=1), truth)
            total += softmax_cross_entropy(logits, truth).item() * truth.size
            pixels += truth.size
    return iou(cm), total / max(pixels, 1)


# **** activation statistics ****

def default_stat_channels(cfg: ModelConfig) -> Tuple[int, ...]:
    """The FRE fixed channels plus the following ten, or the first twenty channels."""
    width = cfg.bottleneck_width
    if cfg.fre.mode is FREMode.FIXED:
        fixed = cfg.fre.resolved_fixed_channels()
        others = [c for c in range(width) if c not in fixed][:10]
        return tuple(sorted(set(fixed) | set(others)))
    return tuple(range(min(20, width)))


def record_activation_stats(
    net: Network,
    images: np.ndarray,
    epoch: int,
    channels: Optional[Sequence[int]] = None,
    hooks: Sequence[str] = ("means", "channel_sums"),
) -> List[ActivationStat]:
    """
    Measure post-ReLU activations on a fixed batch with the epoch's training-phase graph.

    "means" emits the mean at the bottleneck and at the deepest skip connection.
    "channel_sums" emits the total bottleneck sum and per-channel sums for
    `channels`. Nothing is recorded on the tape and running statistics stay put.
    """
    if channels is None:
        channels = default_stat_channels(net.cfg)
    with no_grad():
        out = net.forward(Tensor(images.astype(net.dtype, copy=False)), phase=TRAIN, epoch=epoch,
                          batch=0, update_stats=False)

    rows: List[ActivationStat] = []
    if "means" in hooks:
        for site in ("bottleneck", "skip"):
            if site in out.activations:
                value = float(np.mean(out.activations[site].data, dtype=np.float64))
                rows.append(ActivationStat(epoch=epoch, site=site, statistic="mean", value=value))
    if "channel_sums" in hooks and "bottleneck" in out.activations:
        data = out.activations["bottleneck"].data
        rows.append(ActivationStat(epoch=epoch, site="bottleneck", statistic="sum",
                                   value=float(np.sum(data, dtype=np.float64))))
        for c in channels:
            if 0 <= c < data.shape[1]:
                rows.append(ActivationStat(epoch=epoch, site="bottleneck", statistic="sum",
                                           value=float(np.sum(data[:, c], dtype=np.float64)), channel=int(c)))
    return rows


# **** training ****

EpochCallback = Callable[[int, float, SegMetrics], None]


def train(
    net: Network,
    splits: DatasetSplit,
    tc: TrainConfig,
    out_dir: Optional[Union[str, Path]] = None,
    resume: bool = False,
    on_epoch: Optional[EpochCallback] = None,
) -> TrainResult:
    """
    Train `net` and keep the weights with the best validation mIoU.

    After every epoch the validation split is evaluated with the eval-phase
    forward; the first epoch reaching the highest mIoU wins ties. With
    `out_dir`, best.npz and last.npz are written each epoch and `resume`
    continues from last.npz.
    """
    tc.validate()
    splits.validate()
    for name in ("train", "val"):
        if not splits.get(name):
            raise DatasetError(f"the {name} split is empty")

    images, labels = _stack(splits.train)
    images = images.astype(net.dtype, copy=False)
    stat_batch = images[:tc.batch_size]
    stat_channels = tc.stat_channels if tc.stat_channels is not None else default_stat_channels(net.cfg)
    optimizer = make_optimizer(net, tc)
    out_path = Path(out_dir) if out_dir is not None else None

    start_epoch = 1
    result = TrainResult(best_epoch=0, best_val_miou=-math.inf, best_state=net.state_dict())
    if resume and out_path is not None and (out_path / LAST_CHECKPOINT).exists():
        start_epoch = _resume(net, optimizer, out_path, result)

    n = len(images)
    for epoch in range(start_epoch, tc.epochs + 1):
        order = np.random.default_rng([tc.seed, epoch]).permutation(n)
        losses = []
        for b, start in enumerate(range(0, n, tc.batch_size)):
            idx = order[start:start + tc.batch_size]
            net.zero_grad()
            out = net.forward(Tensor(images[idx]), phase=TRAIN, epoch=epoch, batch=b)
            loss = combined_loss(out.logits, out.aux_logits, labels[idx], net.cfg.supervision)
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingDivergedError(epoch, b, value)
            backward(loss)
            optimizer.step()
            losses.append(value)
            logger.debug("epoch %d batch %d loss %.6f", epoch, b, value)

        train_loss = float(np.mean(losses))
        val_metrics, val_loss = _validate(net, splits.val, tc.batch_size)
        result.history.append(HistoryRow(epoch, "train", train_loss))
        result.history.append(HistoryRow(epoch, "val", val_loss, val_metrics))

        if tc.stat_hooks:
            result.stats.extend(record_activation_stats(net, stat_batch, epoch, stat_channels, tc.stat_hooks))

        if val_metrics.mean_iou > result.best_val_miou:
            result.best_epoch = epoch
            result.best_val_miou = val_metrics.mean_iou
            result.best_state = net.state_dict()
            if out_path is not None:
                save_checkpoint(net, out_path / BEST_CHECKPOINT, meta=_best_meta(result, tc), state=result.best_state)
        result.epochs_run = epoch

        if out_path is not None:
            save_checkpoint(net, out_path / LAST_CHECKPOINT, meta=_last_meta(result, epoch),
                            extra=optimizer.state_dict())
        logger.info(
            "epoch %d/%d loss %.4f val mIoU %.4f (best %.4f @ %d)",
            epoch, tc.epochs, train_loss, val_metrics.mean_iou, result.best_val_miou, result.best_epoch,
        )
        if on_epoch is not None:
            on_epoch(epoch, train_loss, val_metrics)

    return result


def _best_meta(result: TrainResult, tc: TrainConfig) -> Dict:
    return {"best_epoch": result.best_epoch, "best_val_miou": result.best_val_miou, "batch_size": tc.batch_size}


def _last_meta(result: TrainResult, epoch: int) -> Dict:
    return {
        "epoch": epoch,
        "best_epoch": result.best_epoch,
        "best_val_miou": result.best_val_miou,
        "history": [row.to_dict() for row in result.history],
        "stats": [stat.to_row() for stat in result.stats],
    }


def _resume(net: Network, optimizer: Optimizer, out_path: Path, result: TrainResult) -> int:
    """Restore weights, optimizer moments and history from last.npz; return the next epoch."""
    last = load_checkpoint(out_path / LAST_CHECKPOINT)
    net.load_state_dict(last.network.state_dict())
    optimizer.load_state_dict(last.extra)
    meta = last.meta
    result.history = [HistoryRow.from_dict(row) for row in meta.get("history", [])]
    result.stats = [ActivationStat.from_row({k: str(v) for k, v in row.items()}) for row in meta.get("stats", [])]
    result.best_epoch = meta.get("best_epoch", 0)
    result.best_val_miou = meta.get("best_val_miou", -math.inf)
    result.epochs_run = meta["epoch"]
    if (out_path / BEST_CHECKPOINT).exists():
        result.best_state = load_checkpoint(out_path / BEST_CHECKPOINT).network.state_dict()
    logger.info("resuming from epoch %d (best %.4f @ %d)", meta["epoch"] + 1, result.best_val_miou, result.best_epoch)
    return meta["epoch"] + 1


def load_best(net: Network, result: TrainResult) -> Network:
    """Load the retained best-validation weights into `net`."""
    net.load_state_dict(result.best_state)
    return net


__all__ = [
    "Adam",
    "SGD",
    "HistoryRow",
    "TrainResult",
    "blend_losses",
    "combined_loss",
    "default_stat_channels",
    "evaluate",
    "load_best",
    "record_activation_stats",
    "train",
]
