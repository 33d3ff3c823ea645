"""Central finite differences, used to audit the reverse sweep."""

from __future__ import annotations

from typing import Callable, Mapping

import numpy as np

from .tensor import Tensor


def numeric_grad(loss_fn: Callable[[], float], param: Tensor, step: float = 1e-5) -> np.ndarray:
    """d loss / d param by central differences, perturbing ``param.data`` in place.

    ``loss_fn`` must be a pure function of the current parameter values
    (fixed noise, fixed batch).
    """
    base = param.data
    out = np.zeros_like(base)
    flat = base.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        pert = flat.copy()
        pert[i] = orig + step
        param.data = pert.reshape(base.shape)
        up = loss_fn()
        pert[i] = orig - step
        param.data = pert.reshape(base.shape)
        down = loss_fn()
        out.reshape(-1)[i] = (up - down) / (2.0 * step)
    param.data = base
    return out


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    """Norm-wise relative error; ``floor`` keeps exactly-zero gradients from
    turning finite-difference roundoff into a relative error of 1."""
    num = float(np.linalg.norm(analytic - numeric))
    den = max(float(np.linalg.norm(analytic)), float(np.linalg.norm(numeric)), floor)
    return num / den


def check_gradients(loss_fn: Callable[[], Tensor], params: Mapping[str, Tensor],
                    step: float = 1e-5) -> dict[str, float]:
    """Relative error (norm-wise) of backward vs finite differences per parameter."""
    from .graph import grad

    analytic = grad(loss_fn(), params)
    errors = {}
    for name, p in params.items():
        numeric = numeric_grad(lambda: loss_fn().item(), p, step)
        errors[name] = relative_error(analytic[name], numeric)
    return errors
