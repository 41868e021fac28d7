"""Finite-difference verification of analytic gradients.

The checker reruns a model closure in double precision, perturbing every
parameter scalar by +/-eps and comparing central differences against the
gradients produced by one reverse pass. It is the package's standing
defense against backward-rule mistakes; the relative-error contract
(< 1e-4 for the full model) is enforced by the test suite and the
``gradcheck`` CLI subcommand.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, backward, zero_grads


class NonDeterministicModelError(RuntimeError):
    """Two forward passes of the model disagreed bit-for-bit."""


def grad_check(
    model_fn: Callable[[], Tensor],
    params: Sequence[tuple[str, Tensor]],
    eps: float = 1e-5,
) -> float:
    """Return the max relative error between analytic and numeric gradients.

    ``model_fn`` rebuilds the forward graph from the current contents of
    ``params`` (name, tensor pairs) and returns the scalar loss. All
    parameters must be float64; eps must lie in [1e-6, 1e-4].

    Relative error per scalar: |a - n| / max(|a|, |n|, 1e-8).
    """
    if not 1e-6 <= eps <= 1e-4:
        raise ValueError(f"eps must be in [1e-6, 1e-4], got {eps}")
    for name, t in params:
        if t.data.dtype != np.float64:
            raise ValueError(f"grad_check requires float64 parameters; {name} is {t.data.dtype}")

    first = float(model_fn().data)
    second = float(model_fn().data)
    if first != second:
        raise NonDeterministicModelError(
            f"model_fn is not deterministic: {first!r} != {second!r}"
        )

    zero_grads(t for _, t in params)
    loss = model_fn()
    backward(loss)
    analytic = {name: (np.zeros_like(t.data) if t.grad is None else t.grad.copy()) for name, t in params}

    worst = 0.0
    for name, t in params:
        flat = t.data.reshape(-1)
        aflat = analytic[name].reshape(-1)
        for i in range(flat.size):
            saved = flat[i]
            flat[i] = saved + eps
            f_plus = float(model_fn().data)
            flat[i] = saved - eps
            f_minus = float(model_fn().data)
            flat[i] = saved
            numeric = (f_plus - f_minus) / (2.0 * eps)
            a = float(aflat[i])
            rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            if rel > worst:
                worst = rel
    return worst
