"""Plain SGD with optional global-norm clipping."""

from __future__ import annotations

from typing import Iterable, Mapping

import numpy as np

from .tensor import ShapeError, Tensor


def clip_by_global_norm(grads: Mapping[str, np.ndarray], max_norm: float | None) -> dict[str, np.ndarray]:
    grads = dict(grads)
    if max_norm is None or max_norm <= 0:
        return grads
    norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
    if norm > max_norm:
        factor = max_norm / norm
        grads = {k: g * factor for k, g in grads.items()}
    return grads


def sgd_step(params: Mapping[str, Tensor], grads: Mapping[str, np.ndarray], learning_rate: float,
             clip: float | None = None, only: Iterable[str] | None = None) -> Mapping[str, Tensor]:
    """``p <- p - lr * g`` for each named parameter, clipping ``grads`` first.

    ``only`` restricts the update (and the clipping norm) to a subset of names;
    parameters outside it are left untouched, array object included.
    """
    names = list(grads) if only is None else [n for n in only if n in grads]
    for n in names:
        if n not in params:
            raise ShapeError(f"gradient for unknown parameter {n!r}")
        if params[n].shape != np.shape(grads[n]):
            raise ShapeError(
                f"parameter {n!r}: shape {params[n].shape} vs gradient {np.shape(grads[n])}")
    step = clip_by_global_norm({n: grads[n] for n in names}, clip)
    for n, g in step.items():
        params[n].data = params[n].data - learning_rate * g
    return params
