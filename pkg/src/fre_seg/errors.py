"""Exception types raised across the toolkit."""

from typing import List, Optional


class FreSegError(Exception):
    """Base class for all errors raised by fre_seg."""


class ShapeError(FreSegError, ValueError):
    """A tensor shape does not satisfy an operation's contract."""

    def __init__(self, op: str, dimension: str, message: str):
        self.op = op
        self.dimension = dimension
        super().__init__(f"{op}: {dimension}: {message}")


class ConfigError(FreSegError, ValueError):
    """A configuration value is out of range or inconsistent."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


class DatasetError(FreSegError, ValueError):
    """Dataset files are missing, empty or malformed."""

    def __init__(self, message: str, path: Optional[str] = None, value: Optional[object] = None):
        self.path = path
        self.value = value
        super().__init__(f"{path}: {message}" if path else message)


class LabelError(DatasetError):
    """A label value lies outside the declared class range."""


class TapeError(FreSegError, RuntimeError):
    """Backward was requested on a tape that cannot be replayed."""


class NonFiniteError(FreSegError, FloatingPointError):
    """A forward op produced NaN or Inf from finite inputs (debug checking only)."""


class TrainingDivergedError(FreSegError, RuntimeError):
    """The training loss became NaN or infinite."""

    def __init__(self, epoch: int, batch: int, loss: float):
        self.epoch = epoch
        self.batch = batch
        self.loss = loss
        super().__init__(f"loss became {loss} at epoch {epoch}, batch {batch}")


class MissingArtifactsError(FreSegError, FileNotFoundError):
    """Report inputs are absent from one or more run directories."""

    def __init__(self, missing: List[str]):
        self.missing = list(missing)
        super().__init__("missing report inputs: " + ", ".join(self.missing))
