"""Minimal reverse-mode differentiable tensor engine."""

from .tensor import ComputationTape, Function, Tensor, backward, no_grad
from .gradcheck import gradcheck
from . import ops

__all__ = ["ComputationTape", "Function", "Tensor", "backward", "no_grad", "gradcheck", "ops"]
