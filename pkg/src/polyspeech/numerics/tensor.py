"""Dense tensors with reverse-mode automatic differentiation.

Every loss and layer in this package is built from the primitives here.
A forward pass links output tensors to their parents, forming the tape;
calling :func:`backward` on a scalar walks that graph once in reverse
topological order and accumulates gradients on the participating leaves.
The graph is rebuilt by every forward pass, so tensors (and their
``.grad`` buffers) can be reused across steps; call :func:`zero_grad`
between steps to reset accumulation.

Only dense row-major float32/float64 storage is supported. The engine is
single-threaded: one forward/backward at a time per graph.
"""

from __future__ import annotations

import itertools
from contextlib import contextmanager
from typing import Callable, Iterable, Sequence

import numpy as np

from ..errors import ContractError, NumericError

_uid_counter = itertools.count()
_grad_enabled = True

FLOAT_DTYPES = (np.float32, np.float64)


@contextmanager
def no_grad():
    """Disable taping inside the block; forwards run on bare numpy."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


def rng_from(*parts: int) -> np.random.Generator:
    """Deterministic generator from a tuple of named seed parts."""
    return np.random.default_rng(list(parts))


class Tensor:
    """A dense n-dimensional array plus an optional autodiff record.

    Leaves created directly from data have no parents. Tensors produced
    by primitives carry a vector-Jacobian closure used by backward().
    """

    __slots__ = ("data", "requires_grad", "grad", "name", "uid", "_parents", "_vjp", "_op")

    def __init__(self, data, dtype=None, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in FLOAT_DTYPES:
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name
        self.uid: int = next(_uid_counter)
        self._parents: tuple[Tensor, ...] = ()
        self._vjp: Callable | None = None
        self._op: str = "leaf"

    # -- bookkeeping -------------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        tag = self.name or self._op
        return f"Tensor({tag}, shape={self.shape}, dtype={self.data.dtype})"

    def __hash__(self):
        return self.uid

    def __eq__(self, other):
        return self is other

    # -- backward ----------------------------------------------------------

    def backward(self, grad: np.ndarray | None = None) -> None:
        """Reverse-mode sweep from this tensor.

        Accumulates into ``.grad`` of every reachable leaf with
        ``requires_grad``. Raises ContractError if called on a non-scalar
        without an explicit seed gradient, and NumericError (naming the
        offending primitive) if a non-finite gradient appears.
        """
        if grad is None:
            if self.data.size != 1:
                raise ContractError(
                    f"backward() needs a scalar output, got shape {self.shape}"
                )
            grad = np.ones_like(self.data)
        order = _toposort(self)
        grads: dict[int, np.ndarray] = {self.uid: grad}
        for node in order:
            g = grads.pop(node.uid, None)
            if g is None:
                continue
            if node._vjp is not None:
                parent_grads = node._vjp(g)
                for parent, pg in zip(node._parents, parent_grads):
                    if pg is None:
                        continue
                    if not np.isfinite(pg).all():
                        raise NumericError(
                            f"non-finite gradient out of primitive '{node._op}'"
                        )
                    acc = grads.get(parent.uid)
                    grads[parent.uid] = pg if acc is None else acc + pg
            elif node.requires_grad:
                node.grad = g if node.grad is None else node.grad + g


def _toposort(root: Tensor) -> list[Tensor]:
    """Reverse topological order, iterative to survive deep tapes."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if node.uid in seen:
            continue
        seen.add(node.uid)
        stack.append((node, True))
        for p in node._parents:
            if p.uid not in seen:
                stack.append((p, False))
    order.reverse()
    return order


# -- primitive construction --------------------------------------------------


def _needs_tape(parents: Iterable[Tensor]) -> bool:
    if not _grad_enabled:
        return False
    for p in parents:
        if p.requires_grad or p._vjp is not None:
            return True
    return False


def custom_op(
    parents: Sequence[Tensor],
    out_data: np.ndarray,
    vjp: Callable[[np.ndarray], Sequence[np.ndarray | None]],
    op_name: str,
) -> Tensor:
    """Wrap a computed array as a taped node with an explicit VJP.

    ``vjp`` receives the upstream gradient and returns one gradient (or
    None) per parent, in order. This is the extension point modules use
    for primitives the core does not ship (convolutions, gradient
    reversal, scatter-style masking).
    """
    out = Tensor.__new__(Tensor)
    out.data = out_data
    out.grad = None
    out.name = None
    out.uid = next(_uid_counter)
    if _needs_tape(parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._vjp = vjp
        out._op = op_name
    else:
        out.requires_grad = False
        out._parents = ()
        out._vjp = None
        out._op = op_name
    return out


def _coerce(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the parent's shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, d in enumerate(shape) if d == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# -- arithmetic --------------------------------------------------------------


def add(a, b) -> Tensor:
    if not isinstance(b, Tensor):  # constant fold, no extra parent
        a = _coerce(a)
        return custom_op([a], a.data + b, lambda g: (g,), "add_const")
    if not isinstance(a, Tensor):
        return add(b, a)
    out = a.data + b.data
    return custom_op(
        [a, b],
        out,
        lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)),
        "add",
    )


def mul(a, b) -> Tensor:
    if not isinstance(b, Tensor):
        a = _coerce(a)
        return custom_op([a], a.data * b, lambda g: (g * b,), "mul_const")
    if not isinstance(a, Tensor):
        return mul(b, a)
    out = a.data * b.data
    return custom_op(
        [a, b],
        out,
        lambda g: (
            _unbroadcast(g * b.data, a.data.shape),
            _unbroadcast(g * a.data, b.data.shape),
        ),
        "mul",
    )


def sub(a, b) -> Tensor:
    if not isinstance(b, Tensor):
        return add(a, -b)
    if not isinstance(a, Tensor):
        return add(neg(b), a)
    out = a.data - b.data
    return custom_op(
        [a, b],
        out,
        lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)),
        "sub",
    )


def neg(a: Tensor) -> Tensor:
    return custom_op([a], -a.data, lambda g: (-g,), "neg")


def div(a, b) -> Tensor:
    if not isinstance(b, Tensor):
        return mul(a, 1.0 / b)
    if not isinstance(a, Tensor):
        a = _coerce(a)
    out = a.data / b.data
    return custom_op(
        [a, b],
        out,
        lambda g: (
            _unbroadcast(g / b.data, a.data.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape),
        ),
        "div",
    )


def pow_(a: Tensor, exponent: float) -> Tensor:
    out = a.data**exponent
    return custom_op(
        [a], out, lambda g: (g * exponent * a.data ** (exponent - 1),), "pow"
    )


def matmul(a: Tensor, b: Tensor) -> Tensor:
    out = np.matmul(a.data, b.data)

    def vjp(g):
        if b.data.ndim == 1:
            ga = np.outer(g, b.data) if a.data.ndim == 2 else g[..., None] * b.data
            gb = np.matmul(np.swapaxes(a.data, -1, -2), g) if a.data.ndim >= 2 else g * a.data
        elif a.data.ndim == 1:
            ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
            gb = np.outer(a.data, g)
        else:
            ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
            gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return (
            _unbroadcast(np.asarray(ga), a.data.shape),
            _unbroadcast(np.asarray(gb), b.data.shape),
        )

    return custom_op([a, b], out, vjp, "matmul")


# -- elementwise nonlinearities ----------------------------------------------


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return custom_op([a], out, lambda g: (g * out,), "exp")


def log(a: Tensor) -> Tensor:
    return custom_op([a], np.log(a.data), lambda g: (g / a.data,), "log")


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)
    return custom_op([a], out, lambda g: (g / (2.0 * out),), "sqrt")


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return custom_op([a], out, lambda g: (g * (1.0 - out * out),), "tanh")


def sigmoid(a: Tensor) -> Tensor:
    out = 1.0 / (1.0 + np.exp(-a.data))
    return custom_op([a], out, lambda g: (g * out * (1.0 - out),), "sigmoid")


def silu(a: Tensor) -> Tensor:
    """x * sigmoid(x), the smooth gated activation used throughout."""
    s = 1.0 / (1.0 + np.exp(-a.data))
    out = a.data * s
    return custom_op([a], out, lambda g: (g * (s + out * (1.0 - s)),), "silu")


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - dot),)

    return custom_op([a], out, vjp, "softmax")


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = gamma.data * xhat + beta.data

    def vjp(g):
        n = x.data.shape[-1]
        dxhat = g * gamma.data
        dgamma = (g * xhat).reshape(-1, n).sum(axis=0)
        dbeta = g.reshape(-1, n).sum(axis=0)
        m1 = dxhat.mean(axis=-1, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
        dx = inv * (dxhat - m1 - xhat * m2)
        return dx, dgamma, dbeta

    return custom_op([x, gamma, beta], out, vjp, "layer_norm")


# -- reductions and shape ops -------------------------------------------------


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.data.shape).copy(),)

    return custom_op([a], np.asarray(out), vjp, "sum")


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        n = a.data.size
    elif isinstance(axis, tuple):
        n = int(np.prod([a.data.shape[i] for i in axis]))
    else:
        n = a.data.shape[axis]
    return mul(sum_(a, axis=axis, keepdims=keepdims), 1.0 / n)


def reshape(a: Tensor, shape) -> Tensor:
    return custom_op(
        [a], a.data.reshape(shape), lambda g: (g.reshape(a.data.shape),), "reshape"
    )


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return custom_op(
        [a], a.data.transpose(axes), lambda g: (g.transpose(inv),), "transpose"
    )


def getitem(a: Tensor, idx) -> Tensor:
    out = a.data[idx]

    def vjp(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        return (full,)

    return custom_op([a], out, vjp, "getitem")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return custom_op(tensors, out, vjp, "concat")


def stop_gradient(a: Tensor) -> Tensor:
    """Value of ``a`` as a constant; nothing flows back through it."""
    return Tensor(a.data, requires_grad=False)


# -- operator sugar ------------------------------------------------------------

Tensor.__add__ = lambda self, o: add(self, o)
Tensor.__radd__ = lambda self, o: add(self, o)
Tensor.__sub__ = lambda self, o: sub(self, o)
Tensor.__rsub__ = lambda self, o: sub(o, self)
Tensor.__mul__ = lambda self, o: mul(self, o)
Tensor.__rmul__ = lambda self, o: mul(self, o)
Tensor.__truediv__ = lambda self, o: div(self, o)
Tensor.__rtruediv__ = lambda self, o: div(o, self)
Tensor.__neg__ = lambda self: neg(self)
Tensor.__pow__ = lambda self, e: pow_(self, e)
Tensor.__matmul__ = lambda self, o: matmul(self, o)
Tensor.__getitem__ = lambda self, idx: getitem(self, idx)
Tensor.sum = lambda self, axis=None, keepdims=False: sum_(self, axis, keepdims)
Tensor.mean = lambda self, axis=None, keepdims=False: mean(self, axis, keepdims)
Tensor.reshape = lambda self, *s: reshape(self, s[0] if len(s) == 1 and isinstance(s[0], (tuple, list)) else s)
Tensor.transpose = lambda self, *axes: transpose(self, axes[0] if len(axes) == 1 and isinstance(axes[0], (tuple, list)) else axes)


def forward_backward(
    graph_output: Tensor, params: Sequence[Tensor] | None = None
) -> dict[int, np.ndarray]:
    """Run one backward pass and return the gradient map (uid -> array).

    ``graph_output`` must be a taped scalar. When ``params`` is given,
    their ``.grad`` buffers are cleared first and the returned map holds
    an entry for every listed parameter, with exact zeros for any that
    did not participate in the forward pass. Each parameter's ``.grad``
    is left holding the same fresh gradient.
    """
    if graph_output.data.size != 1:
        raise ContractError(
            f"forward_backward expects a scalar loss, got shape {graph_output.shape}"
        )
    if not np.isfinite(graph_output.data):
        raise NumericError("loss is non-finite before backward")
    tracked = list(params) if params is not None else []
    for p in tracked:
        p.grad = None
    graph_output.backward()
    grads: dict[int, np.ndarray] = {}
    if params is not None:
        for p in tracked:
            if p.grad is None:
                p.grad = np.zeros_like(p.data)
            grads[p.uid] = p.grad
    else:
        for node in _toposort(graph_output):
            if node._vjp is None and node.requires_grad and node.grad is not None:
                grads[node.uid] = node.grad
    return grads
