"""
Dense tensors with reverse-mode automatic differentiation.

Every forward pass records onto a fresh :class:`Tape`. Leaves are created with
:meth:`Tape.leaf`; operations on taped tensors append nodes to the tape, and
:meth:`Tape.backward` walks the nodes in reverse creation order to produce
gradients. Plain numpy arrays (or tensors without a tape) act as constants.

All values are 64-bit floats.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ContractError, DimensionError, DomainError, UnsupportedConfigError

__all__ = [
    "Tensor",
    "Tape",
    "make_rng",
    "as_tensor",
    "add",
    "sub",
    "mul",
    "div",
    "scale",
    "negate",
    "square",
    "relu",
    "tanh",
    "softplus",
    "exp",
    "log",
    "elementwise",
    "matmul",
    "conv1d",
    "transpose_last2",
    "reduce",
    "sum",
    "mean",
    "softmax",
    "reshape",
    "transpose",
    "concat",
    "broadcast_to",
    "take",
    "check_gradient",
    "GradientReport",
]


def make_rng(seed: int) -> np.random.Generator:
    """Seeded PCG64 generator; the stream is identical on every platform."""
    return np.random.Generator(np.random.PCG64(int(seed)))


class Tensor:
    """A float64 array, optionally attached to a tape node.

    Tensors attached to a tape are read-only; operations always produce new
    tensors.
    """

    __slots__ = ("value", "tape", "node_id")
    __array_priority__ = 100

    def __init__(self, value, tape: Tape | None = None, node_id: int | None = None):
        arr = np.asarray(value, dtype=np.float64)
        if tape is not None:
            arr.flags.writeable = False
        self.value = arr
        self.tape = tape
        self.node_id = node_id

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    @property
    def size(self) -> int:
        return self.value.size

    @property
    def T(self) -> Tensor:
        return transpose(self)

    def numpy(self) -> np.ndarray:
        return np.array(self.value)

    def item(self) -> float:
        return float(self.value.reshape(()))

    def __repr__(self):
        tag = f", node={self.node_id}" if self.node_id is not None else ""
        return f"Tensor(shape={self.shape}{tag})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return negate(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, index):
        return take(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        return sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)


@dataclass
class _Node:
    parents: tuple[int | None, ...]
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None
    shape: tuple[int, ...]


class Tape:
    """Append-only record of operations for one forward/backward pass."""

    def __init__(self):
        self.nodes: list[_Node] = []

    def __len__(self):
        return len(self.nodes)

    def leaf(self, value) -> Tensor:
        """Register ``value`` as a differentiable input."""
        arr = np.array(value, dtype=np.float64)
        self.nodes.append(_Node((), None, arr.shape))
        return Tensor(arr, self, len(self.nodes) - 1)

    def record(self, value: np.ndarray, parents: Sequence, backward) -> Tensor:
        ids = tuple(p.node_id if _on(p, self) else None for p in parents)
        self.nodes.append(_Node(ids, backward, np.shape(value)))
        return Tensor(value, self, len(self.nodes) - 1)

    def backward(self, loss: Tensor) -> dict[int, np.ndarray]:
        """Gradients of scalar ``loss`` w.r.t. every node that influences it.

        Returns a mapping ``node_id -> gradient array``. The tape itself is not
        modified, so repeated calls give identical results.
        """
        if not isinstance(loss, Tensor) or loss.tape is not self:
            raise ContractError("loss is not recorded on this tape")
        if loss.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        grads: dict[int, np.ndarray] = {loss.node_id: np.ones(loss.shape)}
        for nid in range(loss.node_id, -1, -1):
            g = grads.get(nid)
            node = self.nodes[nid]
            if g is None or node.backward is None:
                continue
            parent_grads = node.backward(g)
            for pid, pg in zip(node.parents, parent_grads):
                if pid is None or pg is None:
                    continue
                if pid in grads:
                    grads[pid] = grads[pid] + pg
                else:
                    grads[pid] = pg
        return grads

    def gradients(self, loss: Tensor, wrt: Sequence[Tensor]) -> list[np.ndarray]:
        """Gradients of ``loss`` w.r.t. ``wrt``, zero-filled where unused."""
        grads = self.backward(loss)
        return [grads.get(t.node_id, np.zeros(t.shape)) for t in wrt]


def _on(t, tape) -> bool:
    return isinstance(t, Tensor) and t.tape is tape and t.node_id is not None


def _tape_of(*args) -> Tape | None:
    tape = None
    for a in args:
        if isinstance(a, Tensor) and a.tape is not None:
            if tape is None:
                tape = a.tape
            elif a.tape is not tape:
                raise ContractError("operands are recorded on different tapes")
    return tape


def _val(x) -> np.ndarray:
    return x.value if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(value, parents, backward) -> Tensor:
    tape = _tape_of(*parents)
    if tape is None:
        return Tensor(value)
    return tape.record(value, parents, backward)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------- arithmetic


def add(a, b) -> Tensor:
    av, bv = _val(a), _val(b)
    out = av + bv
    return _make(out, (a, b), lambda g: (_unbroadcast(g, av.shape), _unbroadcast(g, bv.shape)))


def sub(a, b) -> Tensor:
    av, bv = _val(a), _val(b)
    out = av - bv
    return _make(out, (a, b), lambda g: (_unbroadcast(g, av.shape), -_unbroadcast(g, bv.shape)))


def mul(a, b) -> Tensor:
    av, bv = _val(a), _val(b)
    out = av * bv
    return _make(
        out, (a, b), lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape))
    )


def div(a, b) -> Tensor:
    av, bv = _val(a), _val(b)
    out = av / bv
    return _make(
        out,
        (a, b),
        lambda g: (_unbroadcast(g / bv, av.shape), _unbroadcast(-g * out / bv, bv.shape)),
    )


def scale(a, factor: float) -> Tensor:
    factor = float(factor)
    return _make(_val(a) * factor, (a,), lambda g: (g * factor,))


def negate(a) -> Tensor:
    return _make(-_val(a), (a,), lambda g: (-g,))


def square(a) -> Tensor:
    av = _val(a)
    return _make(av * av, (a,), lambda g: (2.0 * av * g,))


# ---------------------------------------------------------------- activations


def relu(a) -> Tensor:
    av = _val(a)
    mask = av > 0
    return _make(np.where(mask, av, 0.0), (a,), lambda g: (g * mask,))


def tanh(a) -> Tensor:
    out = np.tanh(_val(a))
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),))


def softplus(a) -> Tensor:
    av = _val(a)
    out = np.logaddexp(0.0, av)
    # d/dx log(1 + e^x) = sigmoid(x), evaluated without overflow
    sig = np.exp(av - out)
    return _make(out, (a,), lambda g: (g * sig,))


def exp(a) -> Tensor:
    out = np.exp(_val(a))
    return _make(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    av = _val(a)
    if np.any(av <= 0):
        raise DomainError("log of a non-positive value")
    return _make(np.log(av), (a,), lambda g: (g / av,))


_ELEMENTWISE = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "scale": scale,
    "relu": relu,
    "tanh": tanh,
    "softplus": softplus,
    "exp": exp,
    "log": log,
    "negate": negate,
}


def elementwise(op_kind: str, *args) -> Tensor:
    """Dispatch a pointwise operation by name."""
    try:
        fn = _ELEMENTWISE[op_kind]
    except KeyError:
        raise ContractError(f"unknown elementwise op {op_kind!r}") from None
    return fn(*args)


# ---------------------------------------------------------------- linear algebra


def matmul(a, b) -> Tensor:
    """Matrix product; leading dimensions broadcast like ``numpy.matmul``."""
    av, bv = _val(a), _val(b)
    if av.ndim < 2 or bv.ndim < 2 or av.shape[-1] != bv.shape[-2]:
        raise DimensionError(f"matmul shape mismatch: {av.shape} x {bv.shape}")
    out = av @ bv

    def backward(g):
        ga = g @ np.swapaxes(bv, -1, -2)
        gb = np.swapaxes(av, -1, -2) @ g
        return _unbroadcast(ga, av.shape), _unbroadcast(gb, bv.shape)

    return _make(out, (a, b), backward)


def conv1d(signal, weights, stride: int = 1, channels_last: bool = False) -> Tensor:
    """Same-padded 1-D cross-correlation without bias.

    Parameters
    ----------
    signal : (..., channels_in, length), or (..., length, channels_in) when
        ``channels_last``
    weights : (channels_in, channels_out, kernel)
    stride : must be 1

    Returns
    -------
    Tensor of shape (..., channels_out, length), or (..., length, channels_out).
    """
    xv, wv = _val(signal), _val(weights)
    if stride != 1:
        raise UnsupportedConfigError("conv1d supports stride 1 only")
    if wv.ndim != 3:
        raise DimensionError(f"conv weights must be (in, out, kernel), got {wv.shape}")
    cin, cout, k = wv.shape
    if k % 2 == 0:
        raise UnsupportedConfigError(f"conv1d needs an odd kernel, got {k}")
    ch_axis = -1 if channels_last else -2
    if xv.ndim < 2 or xv.shape[ch_axis] != cin:
        raise DimensionError(f"conv1d signal {xv.shape} does not match weights {wv.shape}")

    if not channels_last:
        out = conv1d(transpose_last2(signal), weights, channels_last=True)
        return transpose_last2(out)

    lead = xv.shape[:-2]
    length = xv.shape[-2]
    pad = (k - 1) // 2
    x3 = xv.reshape((-1, length, cin))
    batch = x3.shape[0]
    padded = length + 2 * pad
    xp = np.zeros((batch, padded, cin))
    xp[:, pad : pad + length] = x3
    x_flat = xp.reshape(batch * padded, cin)
    # all taps in one product: y[b, r, j, o] = sum_i xp[b, r, i] * w[i, o, j]
    w_all = wv.transpose(0, 2, 1).reshape(cin, k * cout)
    y = (x_flat @ w_all).reshape(batch, padded, k, cout)
    out = y[:, 0:length, 0]
    for j in range(1, k):
        out = out + y[:, j : j + length, j]
    out = out.reshape(lead + (length, cout))

    def backward(g):
        g3 = g.reshape(batch, length, cout)
        gy = np.zeros((batch, padded, k, cout))
        for j in range(k):
            gy[:, j : j + length, j] = g3
        gy_flat = gy.reshape(batch * padded, k * cout)
        gw = (x_flat.T @ gy_flat).reshape(cin, k, cout).transpose(0, 2, 1)
        gx = (gy_flat @ w_all.T).reshape(batch, padded, cin)[:, pad : pad + length]
        return gx.reshape(xv.shape), gw

    return _make(out, (signal, weights), backward)


def transpose_last2(a) -> Tensor:
    nd = _val(a).ndim
    return transpose(a, tuple(range(nd - 2)) + (nd - 1, nd - 2))


# ---------------------------------------------------------------- reductions


def _check_axis(axis, ndim):
    if axis is None:
        return None
    axes = axis if isinstance(axis, tuple) else (axis,)
    for ax in axes:
        if not -ndim <= ax < ndim:
            raise DimensionError(f"axis {ax} out of range for rank {ndim}")
    return tuple(ax % ndim for ax in axes)


def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    av = _val(a)
    axes = _check_axis(axis, av.ndim)
    out = av.sum(axis=axes, keepdims=keepdims)

    def backward(g):
        if axes is not None and not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, av.shape).copy(),)

    return _make(out, (a,), backward)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    av = _val(a)
    axes = _check_axis(axis, av.ndim)
    count = av.size if axes is None else int(np.prod([av.shape[i] for i in axes]))
    return scale(sum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def reduce(op_kind: str, t, axis=None) -> Tensor:
    if op_kind == "sum":
        return sum(t, axis=axis)
    if op_kind == "mean":
        return mean(t, axis=axis)
    raise ContractError(f"unknown reduction {op_kind!r}")


def softmax(a, axis: int = -1) -> Tensor:
    av = _val(a)
    _check_axis(axis, av.ndim)
    shifted = av - av.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _make(out, (a,), backward)


# ---------------------------------------------------------------- shape ops


def reshape(a, shape) -> Tensor:
    av = _val(a)
    out = av.reshape(shape)
    return _make(out, (a,), lambda g: (g.reshape(av.shape),))


def transpose(a, axes=None) -> Tensor:
    av = _val(a)
    if axes is None:
        axes = tuple(reversed(range(av.ndim)))
    inverse = tuple(np.argsort(axes))
    return _make(av.transpose(axes), (a,), lambda g: (g.transpose(inverse),))


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    vals = [_val(t) for t in tensors]
    out = np.concatenate(vals, axis=axis)
    bounds = np.cumsum([v.shape[axis] for v in vals])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _make(out, tuple(tensors), backward)


def broadcast_to(a, shape) -> Tensor:
    av = _val(a)
    out = np.broadcast_to(av, shape)
    return _make(out, (a,), lambda g: (_unbroadcast(g, av.shape),))


def take(a, index) -> Tensor:
    """Basic or integer-array indexing with a scatter-add backward."""
    av = _val(a)
    out = av[index]

    def backward(g):
        full = np.zeros_like(av)
        np.add.at(full, index, g)
        return (full,)

    return _make(np.array(out), (a,), backward)


# ---------------------------------------------------------------- gradient check


@dataclass
class GradientReport:
    analytic: np.ndarray
    numeric: np.ndarray
    max_rel_error: float
    tolerance: float
    failing: list[tuple[int, ...]] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failing


def check_gradient(
    f: Callable[[Tensor], Tensor],
    point,
    step: float = 1e-5,
    tolerance: float = 1e-4,
) -> GradientReport:
    """Compare reverse-mode gradients of scalar ``f`` against central differences.

    The error at each coordinate is ``|analytic - numeric| / max(1, |numeric|)``.
    """
    if step <= 0:
        raise ContractError("step must be positive")
    x0 = np.array(_val(point), dtype=np.float64)
    tape = Tape()
    leaf = tape.leaf(x0)
    out = f(leaf)
    if out.tape is tape:
        analytic = tape.gradients(out, [leaf])[0]
    else:
        analytic = np.zeros_like(x0)

    numeric = np.zeros_like(x0)
    for idx in np.ndindex(x0.shape):
        xp = x0.copy()
        xp[idx] += step
        xm = x0.copy()
        xm[idx] -= step
        fp = _val(f(Tensor(xp))).item()
        fm = _val(f(Tensor(xm))).item()
        numeric[idx] = (fp - fm) / (2.0 * step)

    err = np.abs(analytic - numeric) / np.maximum(1.0, np.abs(numeric))
    failing = [idx for idx in np.ndindex(err.shape) if err[idx] >= tolerance]
    return GradientReport(analytic, numeric, float(err.max(initial=0.0)), tolerance, failing)
