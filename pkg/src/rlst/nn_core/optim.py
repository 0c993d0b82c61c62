from __future__ import annotations

import math
from collections.abc import Callable

import numpy as np

from rlst.nn_core.params import ParameterSet
from rlst.nn_core.tensor import NumericalError, Tensor

DEFAULT_CLIP_NORM = 5.0


def sgd_step(params: ParameterSet, learning_rate: float, clip_norm: float = DEFAULT_CLIP_NORM) -> float:
    """Clip the global gradient norm, apply plain SGD, zero gradients.

    Returns the pre-clip global norm.  Raises :class:`NumericalError` (and
    leaves every value untouched) if any gradient is non-finite.
    """
    if learning_rate <= 0 or clip_norm <= 0:
        raise ValueError("learning_rate and clip_norm must be positive")
    for name, t in params.items():
        if params.is_trainable(name) and t.grad is not None and not np.all(np.isfinite(t.grad)):
            raise NumericalError(f"non-finite gradient in {name!r}")
    norm = params.global_grad_norm()
    scale = learning_rate * (clip_norm / norm if norm > clip_norm else 1.0)
    for name, t in params.items():
        if params.is_trainable(name) and t.grad is not None:
            t.values -= scale * t.grad
        t.grad = None
    return norm


def grad_check(loss_fn: Callable[[ParameterSet], Tensor], params: ParameterSet, step: float = 1e-5,
               sample_count: int = 50, rng: np.random.Generator | None = None) -> float:
    """Worst relative error between backprop and central differences.

    Coordinates are drawn uniformly over all trainable entries.  Where both
    the analytic and numeric derivative are below 1e-8 in magnitude the
    absolute difference is used instead.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    rng = rng if rng is not None else np.random.default_rng(0)
    params.zero_grad()
    loss = loss_fn(params)
    if not math.isfinite(loss.item()):
        raise NumericalError("loss is non-finite at the base point")
    loss.backward()
    names = [n for n in params if params.is_trainable(n)]
    sizes = np.array([params[n].values.size for n in names])
    picks = rng.choice(int(sizes.sum()), size=min(sample_count, int(sizes.sum())), replace=False)
    offsets = np.concatenate([[0], np.cumsum(sizes)])

    worst = 0.0
    for flat in picks:
        k = int(np.searchsorted(offsets, flat, side="right") - 1)
        name, idx = names[k], int(flat - offsets[k])
        t = params[name]
        analytic = 0.0 if t.grad is None else float(t.grad.reshape(-1)[idx])
        view = t.values.reshape(-1)
        orig = view[idx]
        view[idx] = orig + step
        plus = loss_fn(params).item()
        view[idx] = orig - step
        minus = loss_fn(params).item()
        view[idx] = orig
        if not (math.isfinite(plus) and math.isfinite(minus)):
            raise NumericalError(f"non-finite loss when perturbing {name}[{idx}]")
        numeric = (plus - minus) / (2 * step)
        diff = abs(analytic - numeric)
        scale = max(abs(analytic), abs(numeric))
        err = diff if scale < 1e-8 else diff / scale
        worst = max(worst, err)
    params.zero_grad()
    return worst
