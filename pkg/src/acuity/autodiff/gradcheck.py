"""Central finite-difference gradient checking."""
from __future__ import annotations

import numpy as np

from .tensor import Tensor, no_grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """max|a - n| / max(max|a|, max|n|), with a floor to keep all-zero gradients defined."""
    analytic, numeric = np.asarray(analytic), np.asarray(numeric)
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0), 1e-10)
    return float(np.abs(analytic - numeric).max(initial=0.0) / scale)


def numeric_gradient(fn, tensor: Tensor, eps: float = 1e-5, indices=None) -> np.ndarray:
    """d fn() / d tensor by central differences; ``fn`` returns a scalar Tensor.

    Only ``indices`` (flat) are perturbed when given; other entries stay 0.
    """
    tensor.data = np.ascontiguousarray(tensor.data)
    grad = np.zeros(tensor.data.size)
    flat = tensor.data.reshape(-1)
    idx = range(flat.size) if indices is None else indices
    with no_grad():
        for i in idx:
            orig = flat[i]
            flat[i] = orig + eps
            plus = fn().item()
            flat[i] = orig - eps
            minus = fn().item()
            flat[i] = orig
            grad[i] = (plus - minus) / (2 * eps)
    return grad.reshape(tensor.shape)


def check_gradients(fn, tensors, eps: float = 1e-5, max_entries: int | None = None,
                    rng: np.random.Generator | None = None) -> float:
    """Worst relative error over ``tensors`` between backprop and finite differences.

    ``max_entries`` subsamples entries per tensor to bound the cost on large models.
    """
    for t in tensors:
        t.grad = None
    fn().backward()
    rng = rng or np.random.default_rng(0)
    worst = 0.0
    for t in tensors:
        analytic = np.zeros(t.shape) if t.grad is None else t.grad
        indices = None
        if max_entries is not None and t.data.size > max_entries:
            indices = np.sort(rng.choice(t.data.size, size=max_entries, replace=False))
        numeric = numeric_gradient(fn, t, eps, indices)
        if indices is not None:
            analytic = analytic.reshape(-1)[indices]
            numeric = numeric.reshape(-1)[indices]
        worst = max(worst, relative_error(analytic, numeric))
    return worst
