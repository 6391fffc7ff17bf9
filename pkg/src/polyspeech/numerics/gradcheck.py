"""Finite-difference verification of reverse-mode gradients.

The checker is the package's referee: any new primitive or composite
loss is trusted only after it passes here. It compares every analytic
gradient entry against a central difference of the loss, and it first
probes that the loss function is deterministic, since a stochastic loss
would make the comparison meaningless.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from ..errors import ContractError, NumericError
from .tensor import Tensor, forward_backward, no_grad


@dataclass
class GradCheckResult:
    max_rel_err: float
    worst_param: str
    worst_index: tuple
    analytic: float
    numeric: float

    def __str__(self):
        return (
            f"max_rel_err={self.max_rel_err:.3e} at {self.worst_param}{self.worst_index} "
            f"(analytic={self.analytic:.6e}, numeric={self.numeric:.6e})"
        )


def _eval_loss(loss_fn: Callable[[], Tensor]) -> float:
    out = loss_fn()
    if not isinstance(out, Tensor):
        raise ContractError("loss_fn must return a Tensor")
    if out.data.size != 1:
        raise ContractError(f"loss_fn must return a scalar, got shape {out.shape}")
    return float(out.data)


def grad_check(
    loss_fn: Callable[[], Tensor],
    params: Sequence[Tensor],
    eps: float = 1e-6,
    max_entries_per_param: int | None = None,
    seed: int = 0,
) -> GradCheckResult:
    """Compare analytic gradients of ``loss_fn`` against central differences.

    ``loss_fn`` takes no arguments and must read the current values of
    ``params`` (closing over them), returning a scalar Tensor. Relative
    error per entry is |a - n| / max(|a|, |n|, 1e-8). When
    ``max_entries_per_param`` is set, that many entries are probed per
    parameter, chosen by a seeded draw; otherwise every entry is probed.

    Raises NumericError if two evaluations at the same point differ, so
    callers cannot accidentally check a stochastic loss.
    """
    params = list(params)
    for p in params:
        if p.data.dtype != np.float64:
            raise ContractError(
                f"grad_check requires float64 parameters, got {p.data.dtype} "
                f"for {p.name or p.uid}"
            )

    base1 = _eval_loss(loss_fn)
    with no_grad():
        base2 = _eval_loss(loss_fn)
    if base1 != base2:
        raise NumericError(
            "loss_fn is not deterministic: two evaluations at the same point "
            f"gave {base1!r} and {base2!r}; seed it before checking"
        )

    out = loss_fn()
    analytic = forward_backward(out, params)

    rng = np.random.default_rng(seed)
    worst = GradCheckResult(0.0, "", (), 0.0, 0.0)
    for p in params:
        g = analytic[p.uid]
        flat = p.data.reshape(-1)
        n = flat.size
        if max_entries_per_param is not None and n > max_entries_per_param:
            idxs = rng.choice(n, size=max_entries_per_param, replace=False)
        else:
            idxs = range(n)
        for i in idxs:
            orig = flat[i]
            flat[i] = orig + eps
            with no_grad():
                up = _eval_loss(loss_fn)
            flat[i] = orig - eps
            with no_grad():
                down = _eval_loss(loss_fn)
            flat[i] = orig
            numeric = (up - down) / (2.0 * eps)
            a = float(g.reshape(-1)[i])
            rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            if rel > worst.max_rel_err:
                idx = np.unravel_index(i, p.data.shape)
                worst = GradCheckResult(rel, p.name or str(p.uid), tuple(int(v) for v in idx), a, numeric)
    return worst
