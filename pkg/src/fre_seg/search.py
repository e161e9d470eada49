"""Tree-structured Parzen Estimator search over FRE and supervision hyperparameters."""

import json
import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import logsumexp
from scipy.stats import truncnorm

from fre_seg.errors import ConfigError
from fre_seg.models import TrialRecord

logger = logging.getLogger(__name__)

Point = Dict[str, float]
Objective = Callable[[Point, int], float]


@dataclass(frozen=True)
class Dimension:
    """One searched hyperparameter, uniform over [low, high] (or log-uniform)."""

    name: str
    kind: str = "float"
    low: float = 0.0
    high: float = 1.0
    log: bool = False

    def validate(self) -> None:
        if self.kind not in ("int", "float"):
            raise ConfigError(f"search.{self.name}.kind", f"must be 'int' or 'float', got {self.kind!r}")
        if not self.low < self.high:
            raise ConfigError(f"search.{self.name}", f"needs low < high, got [{self.low}, {self.high}]")
        if self.log and self.low <= 0:
            raise ConfigError(f"search.{self.name}.log", "log scale needs a positive lower bound")

    @property
    def bounds(self) -> Tuple[float, float]:
        """Bounds in the space the densities are fitted in."""
        return float(self.to_internal(self.low)), float(self.to_internal(self.high))

    def to_internal(self, value):
        return np.log(value) if self.log else np.asarray(value, dtype=np.float64)

    def from_internal(self, value: float) -> float:
        value = float(np.exp(value)) if self.log else float(value)
        if self.kind == "int":
            value = float(round(value))
        return float(min(max(value, self.low), self.high))

    def contains(self, value: float) -> bool:
        if self.kind == "int" and value != round(value):
            return False
        return self.low <= value <= self.high

    def to_dict(self) -> Dict:
        return {"name": self.name, "kind": self.kind, "low": self.low, "high": self.high, "log": self.log}

    @classmethod
    def from_dict(cls, data: Dict) -> "Dimension":
        return cls(
            name=data["name"],
            kind=data.get("kind", "float"),
            low=float(data["low"]),
            high=float(data["high"]),
            log=bool(data.get("log", False)),
        )


@dataclass(frozen=True)
class SearchSpace:
    dimensions: Tuple[Dimension, ...] = ()

    def validate(self) -> None:
        if not self.dimensions:
            raise ConfigError("search.space", "search space has no dimensions")
        names = [d.name for d in self.dimensions]
        if len(set(names)) != len(names):
            raise ConfigError("search.space", f"duplicate dimension names in {names}")
        for dim in self.dimensions:
            dim.validate()

    @property
    def names(self) -> List[str]:
        return [d.name for d in self.dimensions]

    def contains(self, point: Point) -> bool:
        return all(d.name in point and d.contains(point[d.name]) for d in self.dimensions)

    @classmethod
    def fre(cls, bottleneck_width: int = 512, x_high: float = 1000.0, log_x: bool = False) -> "SearchSpace":
        """B in [1, bottleneck width] and X in [1, x_high], both integers."""
        return cls((
            Dimension("B", "int", 1, bottleneck_width),
            Dimension("X", "int", 1, x_high, log=log_x),
        ))

    @classmethod
    def supervision(cls) -> "SearchSpace":
        return cls((Dimension("lambda", "float", 0.0, 1.0),))

    def to_dict(self) -> Dict:
        return {"dimensions": [d.to_dict() for d in self.dimensions]}

    @classmethod
    def from_dict(cls, data: Dict) -> "SearchSpace":
        return cls(tuple(Dimension.from_dict(d) for d in data.get("dimensions", [])))


@dataclass(frozen=True)
class TPEConfig:
    gamma: float = 0.25
    n_startup: int = 10
    n_ei: int = 24
    min_bandwidth: float = 1e-3

    def validate(self) -> None:
        if not 0.0 < self.gamma < 1.0:
            raise ConfigError("search.tpe.gamma", f"must lie in (0, 1), got {self.gamma}")
        if self.n_startup < 1 or self.n_ei < 1:
            raise ConfigError("search.tpe", "n_startup and n_ei must be >= 1")

    def to_dict(self) -> Dict:
        return {"gamma": self.gamma, "n_startup": self.n_startup, "n_ei": self.n_ei,
                "min_bandwidth": self.min_bandwidth}

    @classmethod
    def from_dict(cls, data: Dict) -> "TPEConfig":
        return cls(**data)


# **** sampling ****

def sample_prior(space: SearchSpace, rng: np.random.Generator) -> Point:
    """Uniform draw from every dimension (log-uniform for log dimensions)."""
    space.validate()
    point = {}
    for dim in space.dimensions:
        lo, hi = dim.bounds
        point[dim.name] = dim.from_internal(rng.uniform(lo, hi))
    return point


def split_good(history: Sequence[TrialRecord], gamma: float) -> Tuple[List[TrialRecord], List[TrialRecord]]:
    """
    Split completed trials at the gamma quantile.

    The good set holds the ceil(gamma * n) best objectives; on equal objectives
    the earlier trial ranks higher. Failed trials are ignored.
    """
    done = [t for t in history if t.done and t.objective is not None]
    ranked = sorted(done, key=lambda t: (-t.objective, t.index))
    n_good = math.ceil(gamma * len(ranked))
    return ranked[:n_good], ranked[n_good:]


class _Parzen:
    """Mixture of Gaussians truncated to [low, high], one per observation."""

    def __init__(self, points: np.ndarray, low: float, high: float, min_bandwidth: float):
        span = high - low
        self.points = points
        self.low, self.high = low, high
        self.bandwidth = max(span / (1 + len(points)), min_bandwidth * span)
        self.a = (low - points) / self.bandwidth
        self.b = (high - points) / self.bandwidth

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        pick = rng.integers(len(self.points), size=n)
        return truncnorm.rvs(self.a[pick], self.b[pick], loc=self.points[pick], scale=self.bandwidth,
                             random_state=rng)

    def logpdf(self, x: np.ndarray) -> np.ndarray:
        if not len(self.points):
            return np.full(x.shape, -math.log(self.high - self.low))
        per_kernel = truncnorm.logpdf(
            x[:, None], self.a[None, :], self.b[None, :], loc=self.points[None, :], scale=self.bandwidth
        )
        return logsumexp(per_kernel, axis=1) - math.log(len(self.points))


def propose(
    history: Sequence[TrialRecord],
    space: SearchSpace,
    cfg: Optional[TPEConfig] = None,
    rng: Optional[np.random.Generator] = None,
) -> Point:
    """
    Propose the next point to evaluate.

    With fewer than `n_startup` completed trials the point is drawn from the
    prior. Otherwise per-dimension Parzen estimators l (good trials) and g
    (the rest) are fitted and, among `n_ei` candidates drawn from l, the one
    maximizing l(x) / g(x) is returned. Integer dimensions are rounded to the
    nearest value and clamped to their bounds.
    """
    cfg = cfg or TPEConfig()
    cfg.validate()
    space.validate()
    rng = rng if rng is not None else np.random.default_rng()

    good, bad = split_good(history, cfg.gamma)
    if len(good) + len(bad) < cfg.n_startup:
        return sample_prior(space, rng)

    score = np.zeros(cfg.n_ei)
    candidates = {}
    for dim in space.dimensions:
        lo, hi = dim.bounds
        good_x = np.array([dim.to_internal(t.params[dim.name]) for t in good], dtype=np.float64)
        bad_x = np.array([dim.to_internal(t.params[dim.name]) for t in bad], dtype=np.float64)
        l = _Parzen(good_x, lo, hi, cfg.min_bandwidth)
        g = _Parzen(bad_x, lo, hi, cfg.min_bandwidth)
        draws = l.sample(cfg.n_ei, rng)
        score += l.logpdf(draws) - g.logpdf(draws)
        candidates[dim.name] = draws

    best = int(np.argmax(score))
    return {dim.name: dim.from_internal(candidates[dim.name][best]) for dim in space.dimensions}


# **** history ****

def read_history(path: Union[str, Path]) -> List[TrialRecord]:
    """Read a JSON-lines trial history; a truncated final line is dropped."""
    path = Path(path)
    if not path.exists():
        return []
    records = []
    lines = path.read_text(encoding="utf-8").splitlines()
    for number, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            records.append(TrialRecord.from_dict(json.loads(line)))
        except (json.JSONDecodeError, TypeError, KeyError):
            if number == len(lines):
                logger.warning("ignoring truncated last line of %s", path)
                break
            raise ConfigError("search.history", f"{path}:{number} is not a trial record")
    return records


def write_history(path: Union[str, Path], records: Sequence[TrialRecord]) -> None:
    """Rewrite the history with exactly `records`, through a temporary file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8") as f:
        for record in records:
            f.write(json.dumps(record.to_dict(), sort_keys=True) + "\n")
    os.replace(tmp, path)


def append_history(path: Union[str, Path], record: TrialRecord) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "a", encoding="utf-8") as f:
        f.write(json.dumps(record.to_dict(), sort_keys=True) + "\n")
        f.flush()


def best_trial(history: Sequence[TrialRecord]) -> Optional[TrialRecord]:
    """Highest objective among completed trials; the earliest wins ties."""
    best = None
    for record in history:
        if record.done and record.objective is not None:
            if best is None or record.objective > best.objective:
                best = record
    return best


def running_best(history: Sequence[TrialRecord]) -> List[Optional[float]]:
    """Best objective seen up to and including each trial."""
    out: List[Optional[float]] = []
    current = None
    for record in history:
        if record.done and record.objective is not None:
            current = record.objective if current is None else max(current, record.objective)
        out.append(current)
    return out


def trial_seed(seed: int, index: int) -> int:
    """Seed handed to the objective for trial `index`."""
    return int(np.random.SeedSequence([seed, index, 1]).generate_state(1)[0])


@dataclass
class SearchResult:
    best: Optional[TrialRecord]
    history: List[TrialRecord] = field(default_factory=list)


def run_search(
    space: SearchSpace,
    objective: Objective,
    n_trials: int,
    seed: int = 0,
    history_path: Optional[Union[str, Path]] = None,
    cfg: Optional[TPEConfig] = None,
) -> SearchResult:
    """
    Run `n_trials` sequential propose -> evaluate -> record steps.

    Each proposal uses a generator keyed by (seed, trial index), so resuming
    from a persisted history replays the same remaining proposals. When the
    objective raises, the trial is recorded as failed and the search goes on.
    """
    if n_trials < 1:
        raise ConfigError("search.n_trials", f"must be >= 1, got {n_trials}")
    space.validate()
    history = read_history(history_path) if history_path is not None else []
    if history_path is not None and Path(history_path).exists():
        # Drops a partial last line left by an interrupted append
        write_history(history_path, history)
    if history:
        logger.info("resuming search with %d recorded trials", len(history))

    for index in range(len(history), n_trials):
        rng = np.random.default_rng([seed, index])
        params = propose(history, space, cfg, rng)
        record = TrialRecord(index=index, params=params, seed=trial_seed(seed, index))
        try:
            value = float(objective(params, record.seed))
            if not math.isfinite(value):
                raise FloatingPointError(f"objective returned {value}")
            record.objective = value
        except Exception as exc:
            record.status = "failed"
            record.error = f"{type(exc).__name__}: {exc}"
            logger.warning("trial %d failed: %s", index, record.error)
        else:
            logger.info("trial %d %s -> %.4f", index, params, record.objective)

        history.append(record)
        if history_path is not None:
            append_history(history_path, record)

    return SearchResult(best=best_trial(history), history=history)


__all__ = [
    "Dimension",
    "SearchResult",
    "SearchSpace",
    "TPEConfig",
    "append_history",
    "best_trial",
    "propose",
    "read_history",
    "run_search",
    "running_best",
    "sample_prior",
    "split_good",
    "write_history",
]
