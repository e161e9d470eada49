"""Central finite-difference gradient checking on the 64-bit path."""

from typing import Callable, Optional, Sequence

import numpy as np

from fre_seg.autograd.tensor import Tensor, backward, no_grad


def relative_error(analytic: float, numeric: float, floor: float = 1e-6) -> float:
    """|a - n| / max(|a|, |n|, floor)."""
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def gradcheck(
    fn: Callable[[], Tensor],
    inputs: Sequence[Tensor],
    eps: float = 1e-3,
    n_coords: int = 10,
    seed: int = 0,
    coords: Optional[Sequence[int]] = None,
) -> float:
    """
    Compare analytic gradients with central finite differences.

    `fn` rebuilds the scalar loss from the current contents of `inputs` (which
    must be float64 tensors with requires_grad set). Up to `n_coords` random
    flat coordinates per input are checked.

    Returns:
        The worst relative error over all checked coordinates.
    """
    for t in inputs:
        if t.dtype != np.float64:
            raise TypeError(f"gradcheck needs float64 inputs, got {t.dtype}")
        # Perturbations below write through a flat view
        t.data = np.ascontiguousarray(t.data)
        t.grad = None

    backward(fn())
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in inputs]

    rng = np.random.default_rng(seed)
    worst = 0.0
    for t, grad in zip(inputs, analytic):
        flat = t.data.reshape(-1)
        if coords is not None:
            picks = np.asarray(coords)
        else:
            picks = rng.choice(flat.size, size=min(n_coords, flat.size), replace=False)
        for idx in picks:
            original = flat[idx]
            with no_grad():
                flat[idx] = original + eps
                plus = float(fn().data)
                flat[idx] = original - eps
                minus = float(fn().data)
            flat[idx] = original
            numeric = (plus - minus) / (2 * eps)
            worst = max(worst, relative_error(float(grad.reshape(-1)[idx]), numeric))
    return worst
