"""Stochastic relaxations for discrete choices inside a differentiable graph."""

from __future__ import annotations

import numpy as np

from ..errors import ContractError
from .tensor import Tensor, custom_op, softmax

# Clamp uniforms away from {0, 1} so the double log stays finite.
_U_LO = 1e-20


def gumbel_noise(shape, rng: np.random.Generator) -> np.ndarray:
    u = rng.random(shape)
    return -np.log(-np.log(np.clip(u, _U_LO, 1.0 - 1e-16)))


def gumbel_softmax(
    logits: Tensor,
    temperature: float,
    rng: np.random.Generator,
    hard: bool = True,
    axis: int = -1,
) -> Tensor:
    """Sample from a categorical relaxation of ``logits``.

    Soft mode returns softmax((logits + gumbel) / temperature). Hard mode
    returns the one-hot argmax of that relaxation in the forward pass but
    routes gradients through the soft probabilities (straight-through):
    the backward of the hard selection is the identity onto the soft path.
    """
    if temperature <= 0.0:
        raise ContractError(f"temperature must be positive, got {temperature}")
    noise = gumbel_noise(logits.shape, rng)
    noisy = (logits + noise) * (1.0 / temperature)
    soft = softmax(noisy, axis=axis)
    if not hard:
        return soft
    indices = soft.data.argmax(axis=axis)
    onehot = np.zeros_like(soft.data)
    np.put_along_axis(onehot, np.expand_dims(indices, axis), 1.0, axis=axis)
    # forward: one-hot; backward: pass-through to the soft relaxation
    return custom_op([soft], onehot, lambda g: (g,), "straight_through")
