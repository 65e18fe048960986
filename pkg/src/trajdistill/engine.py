"""Minimal numpy autodiff engine.

Two differentiation modes over float64 numpy arrays:

* reverse mode (``Var`` tape) for parameter gradients, and
* forward mode (``Dual`` numbers) for directional derivatives of a
  network along a direction in its (x, t) inputs.

Functions to be differentiated must be composed from the generic ops in
this module (``sin``, ``cos``, ``exp``, ``tanh``, ``square``, ``matmul``,
``concat``, ``arr_sum``, ``mean``, ``reshape``, ``embed_rows`` and the
overloaded arithmetic operators). Every op also accepts plain ndarrays,
so the same model code runs in plain, forward, and reverse mode.
"""

from __future__ import annotations

from typing import Callable, Iterator

import numpy as np


class ShapeError(ValueError):
    """Operand shapes violate an operation's contract."""


class NumericError(ArithmeticError):
    """A non-finite value appeared where the contract requires finiteness."""


def _asarray(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def _check_finite(arr: np.ndarray, op_name: str) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite result in primitive '{op_name}'")
    return arr


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to the original operand shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, (g, s) in enumerate(zip(grad.shape, shape)):
        if s == 1 and g != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# Parameter storage
# ---------------------------------------------------------------------------

_PSTORE_MAGIC = "PSTORE1"


class ParamStore:
    """Ordered mapping name -> float64 array, shapes frozen after creation."""

    def __init__(self, entries=None):
        self._entries: dict[str, np.ndarray] = {}
        if entries is not None:
            items = entries.items() if hasattr(entries, "items") else entries
            for name, value in items:
                self[name] = value

    def __setitem__(self, name: str, value) -> None:
        value = _asarray(value)
        if name in self._entries and self._entries[name].shape != value.shape:
            raise ShapeError(
                f"entry '{name}' has frozen shape {self._entries[name].shape}, "
                f"got {value.shape}"
            )
        self._entries[name] = value.copy()

    def __getitem__(self, name: str) -> np.ndarray:
        return self._entries[name]

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def __iter__(self) -> Iterator[str]:
        return iter(self._entries)

    def names(self) -> list[str]:
        return list(self._entries)

    def items(self):
        return self._entries.items()

    def copy(self) -> "ParamStore":
        return ParamStore({k: v.copy() for k, v in self._entries.items()})

    def same_architecture(self, other: "ParamStore") -> bool:
        if self.names() != other.names():
            return False
        return all(self[k].shape == other[k].shape for k in self)

    # -- serialization: text header + little-endian raw float64 payloads ----

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(f"{_PSTORE_MAGIC} {len(self._entries)}\n".encode())
            for name, value in self._entries.items():
                fields = [name, str(value.ndim)] + [str(d) for d in value.shape]
                fh.write((" ".join(fields) + "\n").encode())
                fh.write(value.astype("<f8").tobytes(order="C"))

    @classmethod
    def load(cls, path) -> "ParamStore":
        store = cls()
        with open(path, "rb") as fh:
            header = fh.readline().decode().split()
            if len(header) != 2 or header[0] != _PSTORE_MAGIC:
                raise ValueError(f"not a parameter store file: {path}")
            count = int(header[1])
            for _ in range(count):
                fields = fh.readline().decode().split()
                name, ndim = fields[0], int(fields[1])
                shape = tuple(int(d) for d in fields[2 : 2 + ndim])
                nbytes = 8 * int(np.prod(shape)) if shape else 8
                raw = fh.read(nbytes)
                if len(raw) != nbytes:
                    raise ValueError(f"truncated payload for entry '{name}'")
                store._entries[name] = np.frombuffer(raw, dtype="<f8").reshape(shape).astype(np.float64)
        return store


# ---------------------------------------------------------------------------
# Forward mode: dual numbers over arrays
# ---------------------------------------------------------------------------


class Dual:
    """(primal, tangent) array pair; tangent rides along every primitive."""

    __slots__ = ("primal", "tangent")

    # keep numpy from absorbing us in mixed expressions; reflected ops run
    __array_ufunc__ = None

    def __init__(self, primal, tangent):
        self.primal = _asarray(primal)
        self.tangent = _asarray(tangent)
        if self.primal.shape != self.tangent.shape:
            raise ShapeError(
                f"primal shape {self.primal.shape} != tangent shape {self.tangent.shape}"
            )

    @staticmethod
    def lift(x) -> "Dual":
        if isinstance(x, Dual):
            return x
        x = _asarray(x)
        return Dual(x, np.zeros_like(x))

    def __add__(self, other):
        o = Dual.lift(other)
        return Dual(_check_finite(self.primal + o.primal, "add"), self.tangent + o.tangent)

    __radd__ = __add__

    def __sub__(self, other):
        o = Dual.lift(other)
        return Dual(_check_finite(self.primal - o.primal, "sub"), self.tangent - o.tangent)

    def __rsub__(self, other):
        return Dual.lift(other).__sub__(self)

    def __mul__(self, other):
        o = Dual.lift(other)
        return Dual(
            _check_finite(self.primal * o.primal, "mul"),
            self.tangent * o.primal + self.primal * o.tangent,
        )

    __rmul__ = __mul__

    def __neg__(self):
        return Dual(-self.primal, -self.tangent)

    def __truediv__(self, other):
        o = Dual.lift(other)
        inv = 1.0 / o.primal
        return Dual(
            _check_finite(self.primal * inv, "div"),
            (self.tangent - self.primal * inv * o.tangent) * inv,
        )

    def __matmul__(self, other):
        o = Dual.lift(other)
        return Dual(
            _check_finite(self.primal @ o.primal, "matmul"),
            self.tangent @ o.primal + self.primal @ o.tangent,
        )

    def __rmatmul__(self, other):
        return Dual.lift(other).__matmul__(self)


# ---------------------------------------------------------------------------
# Reverse mode: tape of Vars
# ---------------------------------------------------------------------------


class Var:
    """Node in the reverse-mode graph holding a value and backward closure."""

    __slots__ = ("value", "grad", "_parents", "_backward")

    __array_ufunc__ = None

    def __init__(self, value, parents=(), backward=None):
        self.value = _asarray(value)
        self.grad = None
        self._parents = tuple(parents)
        self._backward = backward

    @staticmethod
    def lift(x) -> "Var":
        return x if isinstance(x, Var) else Var(x)

    def _accumulate(self, g: np.ndarray) -> None:
        g = _unbroadcast(g, self.value.shape)
        self.grad = g if self.grad is None else self.grad + g

    def backward(self) -> None:
        """Seed with ones and propagate through the tape in topo order."""
        topo: list[Var] = []
        seen: set[int] = set()
        stack: list[tuple[Var, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.value)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- arithmetic -------------------------------------------------------

    def __add__(self, other):
        o = Var.lift(other)
        out = Var(self.value + o.value, (self, o))

        def backward(g):
            self._accumulate(g)
            o._accumulate(g)

        out._backward = backward
        return out

    __radd__ = __add__

    def __sub__(self, other):
        o = Var.lift(other)
        out = Var(self.value - o.value, (self, o))

        def backward(g):
            self._accumulate(g)
            o._accumulate(-g)

        out._backward = backward
        return out

    def __rsub__(self, other):
        return Var.lift(other).__sub__(self)

    def __mul__(self, other):
        o = Var.lift(other)
        out = Var(self.value * o.value, (self, o))

        def backward(g):
            self._accumulate(g * o.value)
            o._accumulate(g * self.value)

        out._backward = backward
        return out

    __rmul__ = __mul__

    def __neg__(self):
        out = Var(-self.value, (self,))
        out._backward = lambda g: self._accumulate(-g)
        return out

    def __truediv__(self, other):
        o = Var.lift(other)
        inv = 1.0 / o.value
        out = Var(self.value * inv, (self, o))

        def backward(g):
            self._accumulate(g * inv)
            o._accumulate(-g * self.value * inv * inv)

        out._backward = backward
        return out

    def __matmul__(self, other):
        o = Var.lift(other)
        out = Var(self.value @ o.value, (self, o))

        def backward(g):
            self._accumulate(g @ o.value.T)
            o._accumulate(self.value.T @ g)

        out._backward = backward
        return out

    def __rmatmul__(self, other):
        return Var.lift(other).__matmul__(self)


# ---------------------------------------------------------------------------
# Generic primitives (ndarray / Dual / Var)
# ---------------------------------------------------------------------------


def _unary(x, fn, dfn, name):
    if isinstance(x, Var):
        out = Var(fn(x.value), (x,))
        out._backward = lambda g: x._accumulate(g * dfn(x.value))
        return out
    if isinstance(x, Dual):
        return Dual(_check_finite(fn(x.primal), name), dfn(x.primal) * x.tangent)
    return fn(_asarray(x))


def sin(x):
    return _unary(x, np.sin, np.cos, "sin")


def cos(x):
    return _unary(x, np.cos, lambda v: -np.sin(v), "cos")


def exp(x):
    return _unary(x, np.exp, np.exp, "exp")


def tanh(x):
    return _unary(x, np.tanh, lambda v: 1.0 - np.tanh(v) ** 2, "tanh")


def square(x):
    return _unary(x, np.square, lambda v: 2.0 * v, "square")


def matmul(a, b):
    if isinstance(a, (Var, Dual)) or isinstance(b, (Var, Dual)):
        return a @ b if isinstance(a, (Var, Dual)) else b.__rmatmul__(a)
    return _asarray(a) @ _asarray(b)


def arr_sum(x, axis=None, keepdims=False):
    if isinstance(x, Var):
        out = Var(x.value.sum(axis=axis, keepdims=keepdims), (x,))

        def backward(g):
            g = _asarray(g)
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            x._accumulate(np.broadcast_to(g, x.value.shape).copy())

        out._backward = backward
        return out
    if isinstance(x, Dual):
        return Dual(
            x.primal.sum(axis=axis, keepdims=keepdims),
            x.tangent.sum(axis=axis, keepdims=keepdims),
        )
    return _asarray(x).sum(axis=axis, keepdims=keepdims)


def mean(x, axis=None, keepdims=False):
    shape = x.value.shape if isinstance(x, Var) else (
        x.primal.shape if isinstance(x, Dual) else _asarray(x).shape
    )
    if axis is None:
        n = int(np.prod(shape)) if shape else 1
    else:
        n = shape[axis]
    return arr_sum(x, axis=axis, keepdims=keepdims) * (1.0 / n)


def reshape(x, shape):
    if isinstance(x, Var):
        old = x.value.shape
        out = Var(x.value.reshape(shape), (x,))
        out._backward = lambda g: x._accumulate(g.reshape(old))
        return out
    if isinstance(x, Dual):
        return Dual(x.primal.reshape(shape), x.tangent.reshape(shape))
    return _asarray(x).reshape(shape)


def concat(parts, axis=-1):
    parts = list(parts)
    if any(isinstance(p, Var) for p in parts):
        parts = [Var.lift(p) for p in parts]
        values = [p.value for p in parts]
        out = Var(np.concatenate(values, axis=axis), tuple(parts))
        sizes = [v.shape[axis] for v in values]

        def backward(g):
            offsets = np.cumsum([0] + sizes)
            for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                p._accumulate(g[tuple(idx)])

        out._backward = backward
        return out
    if any(isinstance(p, Dual) for p in parts):
        parts = [Dual.lift(p) for p in parts]
        return Dual(
            np.concatenate([p.primal for p in parts], axis=axis),
            np.concatenate([p.tangent for p in parts], axis=axis),
        )
    return np.concatenate([_asarray(p) for p in parts], axis=axis)


def embed_rows(table, ids):
    """Row lookup table[ids]; reverse mode scatter-adds into the table."""
    ids = np.asarray(ids, dtype=np.int64)
    if isinstance(table, Var):
        out = Var(table.value[ids], (table,))

        def backward(g):
            gt = np.zeros_like(table.value)
            np.add.at(gt, ids, g)
            table._accumulate(gt)

        out._backward = backward
        return out
    if isinstance(table, Dual):
        return Dual(table.primal[ids], table.tangent[ids])
    return _asarray(table)[ids]


# ---------------------------------------------------------------------------
# Driver entry points
# ---------------------------------------------------------------------------


def jvp(
    f: Callable,
    params,
    x,
    t,
    y,
    x_dot,
    t_dot: float,
):
    """Value and exact directional derivative of f(params, x, t, y).

    The direction is (x_dot, t_dot); parameters are treated as constants,
    so nothing flows into them (detached-view semantics).
    """
    x = _asarray(x)
    x_dot = _asarray(x_dot)
    if x.shape != x_dot.shape:
        raise ShapeError(f"x shape {x.shape} != x_dot shape {x_dot.shape}")
    t = _asarray(t)
    dx = Dual(x, x_dot)
    dt = Dual(t, np.full_like(t, float(t_dot)))
    out = f(params, dx, dt, y)
    if isinstance(out, Dual):
        value, tangent = out.primal, out.tangent
    else:
        value = _asarray(out)
        tangent = np.zeros_like(value)
    _check_finite(value, "jvp output")
    _check_finite(tangent, "jvp tangent")
    return value, tangent


def value_and_grad(loss: Callable, params: ParamStore) -> tuple[float, ParamStore]:
    """Scalar loss value plus exact reverse-mode gradients over a ParamStore.

    ``loss`` receives a mapping name -> Var with the same keys as
    ``params`` and must return a scalar graph node.
    """
    leaves = {name: Var(value) for name, value in params.items()}
    out = loss(leaves)
    if not isinstance(out, Var):
        raise TypeError("loss must return a Var built from engine primitives")
    value = float(out.value)
    if not np.isfinite(value):
        raise NumericError(f"loss evaluated to non-finite value {value}")
    out.backward()
    grads = ParamStore()
    for name, leaf in leaves.items():
        g = leaf.grad if leaf.grad is not None else np.zeros_like(leaf.value)
        grads[name] = g.reshape(params[name].shape)
    return value, grads


def grad(loss: Callable, params: ParamStore) -> ParamStore:
    """Exact reverse-mode gradients of a scalar loss over a ParamStore."""
    return value_and_grad(loss, params)[1]


def finite_diff_directional(f, params, x, t, y, x_dot, t_dot, eps: float):
    """Central-difference directional derivative; the oracle for jvp."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    x = _asarray(x)
    x_dot = _asarray(x_dot)
    t = float(np.asarray(t)) if np.ndim(t) == 0 else _asarray(t)
    hi = f(params, x + eps * x_dot, t + eps * t_dot, y)
    lo = f(params, x - eps * x_dot, t - eps * t_dot, y)
    return (_asarray(hi) - _asarray(lo)) / (2.0 * eps)
