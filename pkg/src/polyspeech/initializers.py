"""Seeded parameter construction.

Every parameter is drawn from a generator keyed by (seed, crc32(name)),
so a parameter's initial value depends only on the run seed and its own
name. Two models built with the same seed therefore share identical
values for every parameter name they have in common, regardless of
construction order or which extra parameters either model adds.
"""

from __future__ import annotations

import zlib

import numpy as np

from .errors import ContractError
from .numerics import Tensor


def _name_key(name: str) -> int:
    return zlib.crc32(name.encode("utf-8"))


class Initializer:
    """Creates named parameters and records them in a flat registry."""

    def __init__(self, seed: int):
        self.seed = int(seed)
        self.params: dict[str, Tensor] = {}

    def _register(self, name: str, t: Tensor) -> Tensor:
        if name in self.params:
            raise ContractError(f"duplicate parameter name: {name}")
        self.params[name] = t
        return t

    def _rng(self, name: str) -> np.random.Generator:
        return np.random.default_rng([self.seed, _name_key(name)])

    def normal(self, name: str, shape, scale: float) -> Tensor:
        data = self._rng(name).standard_normal(shape) * scale
        return self._register(name, Tensor(data, requires_grad=True, name=name))

    def linear(self, name: str, fan_in: int, fan_out: int) -> Tensor:
        # variance-preserving: scale 1/sqrt(fan_in)
        return self.normal(name, (fan_in, fan_out), fan_in**-0.5)

    def zeros(self, name: str, shape) -> Tensor:
        return self._register(name, Tensor(np.zeros(shape), requires_grad=True, name=name))

    def ones(self, name: str, shape) -> Tensor:
        return self._register(name, Tensor(np.ones(shape), requires_grad=True, name=name))

    def constant(self, name: str, value: np.ndarray) -> Tensor:
        return self._register(
            name, Tensor(np.array(value, dtype=np.float64), requires_grad=True, name=name)
        )


class _ShapeStub:
    """Stands in for a parameter when only shapes are being collected."""

    __slots__ = ("shape",)

    def __init__(self, shape):
        self.shape = tuple(int(s) for s in shape)

    @property
    def data(self) -> np.ndarray:
        # throwaway buffer: init-time pokes (e.g. setting a factor row to
        # ones) land here and are discarded
        return np.zeros(self.shape)


class ShapeRecorder:
    """Initializer twin that records parameter shapes without allocating.

    Lets the full-scale profile (~1e8 parameters) be accounted exactly
    by running the normal model constructors against stubs.
    """

    def __init__(self):
        self.shapes: dict[str, tuple] = {}

    def _mk(self, name: str, shape) -> _ShapeStub:
        if name in self.shapes:
            raise ContractError(f"duplicate parameter name: {name}")
        stub = _ShapeStub(shape)
        self.shapes[name] = stub.shape
        return stub

    def normal(self, name, shape, scale):
        return self._mk(name, shape)

    def linear(self, name, fan_in, fan_out):
        return self._mk(name, (fan_in, fan_out))

    def zeros(self, name, shape):
        return self._mk(name, shape)

    def ones(self, name, shape):
        return self._mk(name, shape)

    def constant(self, name, value):
        return self._mk(name, np.shape(value))
