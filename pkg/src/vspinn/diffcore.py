"""Reverse-over-forward automatic differentiation.

A :class:`Tape` records elementary array operations in creation order. Every
recorded value is a float64 ndarray (scalars are 0-d arrays), so one node can
carry a whole batch of collocation points. Input derivatives are propagated
forward as second-order directional jets (:class:`Jet2`) whose components are
themselves tape variables; a single reverse sweep then yields parameter
gradients of any scalar assembled from those jets.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np


class TapeError(RuntimeError):
    """Misuse of a tape: closed tape, foreign variable, bad seed."""


class DegenerateInputError(ValueError):
    """An operation was asked to divide by zero or similar."""


class NonFiniteError(ArithmeticError):
    """A non-finite value showed up where a finite one is required."""


# --------------------------------------------------------------------------
# primitive operations: forward(*vals, **attrs) and vjp(g, out, *vals, **attrs)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _relu_mask(a):
    return (a > 0.0).astype(np.float64)


@dataclass(frozen=True)
class Op:
    name: str
    forward: Callable
    vjp: Callable


def _vjp_add(g, out, needs, a, b):
    return (
        _unbroadcast(g, a.shape) if needs[0] else None,
        _unbroadcast(g, b.shape) if needs[1] else None,
    )


def _vjp_sub(g, out, needs, a, b):
    return (
        _unbroadcast(g, a.shape) if needs[0] else None,
        _unbroadcast(-g, b.shape) if needs[1] else None,
    )


def _vjp_mul(g, out, needs, a, b):
    return (
        _unbroadcast(g * b, a.shape) if needs[0] else None,
        _unbroadcast(g * a, b.shape) if needs[1] else None,
    )


def _vjp_div(g, out, needs, a, b):
    return (
        _unbroadcast(g / b, a.shape) if needs[0] else None,
        _unbroadcast(-g * out / b, b.shape) if needs[1] else None,
    )


def _fwd_div(a, b):
    if np.any(b == 0.0):
        raise DegenerateInputError("division by a zero value")
    return a / b


def _fwd_pow(a, n):
    return a**n


def _vjp_pow(g, out, needs, a, n):
    if n == 0:
        return (np.zeros_like(a),)
    return (g * n * a ** (n - 1),)


def _vjp_matmul(g, out, needs, a, b):
    return (g @ b.T if needs[0] else None, a.T @ g if needs[1] else None)


def _fwd_sum(a, axis=None):
    return np.sum(a, axis=axis)


def _vjp_sum(g, out, needs, a, axis=None):
    if axis is not None:
        g = np.expand_dims(g, axis)
    return (np.broadcast_to(g, a.shape).copy(),)


def _fwd_take(a, index):
    return a[..., index]


def _vjp_take(g, out, needs, a, index):
    ga = np.zeros_like(a)
    ga[..., index] = g
    return (ga,)


def _fwd_reshape(a, shape):
    return np.reshape(a, shape)


def _vjp_reshape(g, out, needs, a, shape):
    return (np.reshape(g, a.shape),)


def _tanh_d1(a):
    t = np.tanh(a)
    return 1.0 - t * t


def _vjp_tanh_d1(g, out, needs, a):
    # d/da (1 - t^2) = -2 t (1 - t^2)
    return (g * (-2.0 * np.tanh(a) * out),)


def _tanh_d2(a):
    t = np.tanh(a)
    return -2.0 * t * (1.0 - t * t)


def _vjp_tanh_d2(g, out, needs, a):
    # d/da (-2 t + 2 t^3) = (1 - t^2)(6 t^2 - 2)
    t = np.tanh(a)
    return (g * ((1.0 - t * t) * (6.0 * t * t - 2.0)),)


OPS = {
    "add": Op("add", np.add, _vjp_add),
    "sub": Op("sub", np.subtract, _vjp_sub),
    "mul": Op("mul", np.multiply, _vjp_mul),
    "div": Op("div", _fwd_div, _vjp_div),
    "neg": Op("neg", np.negative, lambda g, out, needs, a: (-g,)),
    "pow": Op("pow", _fwd_pow, _vjp_pow),
    "tanh": Op("tanh", np.tanh, lambda g, out, needs, a: (g * (1.0 - out * out),)),
    # first and second derivative of tanh as single primitives
    "tanh_d1": Op("tanh_d1", _tanh_d1, _vjp_tanh_d1),
    "tanh_d2": Op("tanh_d2", _tanh_d2, _vjp_tanh_d2),
    "sin": Op("sin", np.sin, lambda g, out, needs, a: (g * np.cos(a),)),
    "cos": Op("cos", np.cos, lambda g, out, needs, a: (-g * np.sin(a),)),
    "exp": Op("exp", np.exp, lambda g, out, needs, a: (g * out,)),
    # derivative at exactly 0 is taken as 0
    "relu": Op("relu", lambda a: np.maximum(a, 0.0), lambda g, out, needs, a: (g * _relu_mask(a),)),
    "matmul": Op("matmul", np.matmul, _vjp_matmul),
    "sum": Op("sum", _fwd_sum, _vjp_sum),
    "take": Op("take", _fwd_take, _vjp_take),
    "reshape": Op("reshape", _fwd_reshape, _vjp_reshape),
}


# --------------------------------------------------------------------------


@dataclass
class Node:
    op: Op | None  # None for leaves and constants
    inputs: tuple[int, ...]
    attrs: dict
    value: np.ndarray
    kind: str  # "param", "input", "const" or "op"
    needs_grad: bool = False


class Tape:
    """Append-only record of array operations.

    Node ids are dense and increasing; each node's inputs precede it, so the
    recording order is already a topological order.
    """

    def __init__(self) -> None:
        self.nodes: list[Node] = []
        self.leaf_ids: list[int] = []
        self.closed = False

    @property
    def leaf_count(self) -> int:
        return len(self.leaf_ids)

    def __len__(self) -> int:
        return len(self.nodes)

    def _push(self, node: Node) -> Var:
        if self.closed:
            raise TapeError("tape is closed for recording")
        self.nodes.append(node)
        return Var(self, len(self.nodes) - 1)

    def lift(self, kind: str, value) -> Var:
        if kind not in ("param", "input"):
            raise ValueError(f"leaf kind must be 'param' or 'input', got {kind!r}")
        arr = np.array(value, dtype=np.float64)
        var = self._push(Node(None, (), {}, arr, kind, True))
        self.leaf_ids.append(var.id)
        return var

    def param(self, value) -> Var:
        return self.lift("param", value)

    def input(self, value) -> Var:
        return self.lift("input", value)

    def const(self, value) -> Var:
        return self._push(Node(None, (), {}, np.asarray(value, dtype=np.float64), "const"))

    def apply(self, name: str, *args: Var, **attrs) -> Var:
        op = OPS[name]
        ids = []
        for a in args:
            if a.tape is not self:
                raise TapeError("operands belong to different tapes")
            ids.append(a.id)
        nodes = self.nodes
        vals = [nodes[i].value for i in ids]
        out = np.asarray(op.forward(*vals, **attrs), dtype=np.float64)
        needs = any(nodes[i].needs_grad for i in ids)
        return self._push(Node(op, tuple(ids), attrs, out, "op", needs))

    def close(self) -> None:
        self.closed = True

    def replay(self, leaf_values: dict[int, np.ndarray] | None = None) -> None:
        """Recompute every node value, optionally with new leaf values."""
        for i, node in enumerate(self.nodes):
            if node.op is None:
                if leaf_values is not None and i in leaf_values:
                    node.value = np.array(leaf_values[i], dtype=np.float64)
                continue
            vals = [self.nodes[j].value for j in node.inputs]
            node.value = np.asarray(node.op.forward(*vals, **node.attrs), dtype=np.float64)


class Var:
    """Handle to one node of a tape."""

    __slots__ = ("tape", "id")
    __array_ufunc__ = None  # ndarray <op> Var defers to the reflected Var method

    def __init__(self, tape: Tape, node_id: int) -> None:
        self.tape = tape
        self.id = node_id

    @property
    def value(self) -> np.ndarray:
        return self.tape.nodes[self.id].value

    @property
    def shape(self) -> tuple:
        return self.value.shape

    def __repr__(self) -> str:
        return f"Var(id={self.id}, shape={self.shape})"

    def _wrap(self, other) -> Var:
        if isinstance(other, Var):
            return other
        return self.tape.const(other)

    def __add__(self, other):
        return self.tape.apply("add", self, self._wrap(other))

    def __radd__(self, other):
        return self.tape.apply("add", self._wrap(other), self)

    def __sub__(self, other):
        return self.tape.apply("sub", self, self._wrap(other))

    def __rsub__(self, other):
        return self.tape.apply("sub", self._wrap(other), self)

    def __mul__(self, other):
        return self.tape.apply("mul", self, self._wrap(other))

    def __rmul__(self, other):
        return self.tape.apply("mul", self._wrap(other), self)

    def __truediv__(self, other):
        return self.tape.apply("div", self, self._wrap(other))

    def __rtruediv__(self, other):
        return self.tape.apply("div", self._wrap(other), self)

    def __neg__(self):
        return self.tape.apply("neg", self)

    def __pow__(self, n: int):
        if int(n) != n:
            raise ValueError("only integer powers are supported")
        return self.tape.apply("pow", self, n=int(n))

    def __matmul__(self, other):
        return self.tape.apply("matmul", self, self._wrap(other))

    def __rmatmul__(self, other):
        return self.tape.apply("matmul", self._wrap(other), self)

    def sum(self, axis=None) -> Var:
        return self.tape.apply("sum", self, axis=axis)

    def mean(self) -> Var:
        return self.sum() * (1.0 / self.value.size)

    def col(self, index: int) -> Var:
        return self.tape.apply("take", self, index=index)

    def reshape(self, shape) -> Var:
        return self.tape.apply("reshape", self, shape=tuple(shape))


def lift(tape: Tape, kind: str, value) -> Var:
    return tape.lift(kind, value)


def tanh(a: Var) -> Var:
    return a.tape.apply("tanh", a)


def sin(a: Var) -> Var:
    return a.tape.apply("sin", a)


def cos(a: Var) -> Var:
    return a.tape.apply("cos", a)


def exp(a: Var) -> Var:
    return a.tape.apply("exp", a)


def relu(a: Var) -> Var:
    return a.tape.apply("relu", a)


def backward(tape: Tape, seed: Var) -> dict[int, np.ndarray]:
    """Gradient of the scalar ``seed`` with respect to every leaf of ``tape``.

    Leaves that do not influence the seed map to zero arrays.
    """
    if not isinstance(seed, Var) or seed.tape is not tape:
        raise TapeError("seed is not a variable of this tape")
    if seed.value.size != 1:
        raise TapeError(f"seed must be scalar, got shape {seed.shape}")
    nodes = tape.nodes
    grads: list = [None] * (seed.id + 1)
    owned = [False] * (seed.id + 1)
    grads[seed.id] = np.ones_like(seed.value)
    for i in range(seed.id, -1, -1):
        g = grads[i]
        node = nodes[i]
        if g is None or node.op is None or not node.needs_grad:
            continue
        grads[i] = None  # free memory early
        needs = tuple(nodes[j].needs_grad for j in node.inputs)
        vals = [nodes[j].value for j in node.inputs]
        parts = node.op.vjp(g, node.value, needs, *vals, **node.attrs)
        for j, gj, nj in zip(node.inputs, parts, needs):
            if not nj or gj is None:
                continue
            if grads[j] is None:
                grads[j] = gj
            elif owned[j]:
                np.add(grads[j], gj, out=grads[j])
            else:
                grads[j] = grads[j] + gj
                owned[j] = True
    out = {}
    for i in tape.leaf_ids:
        g = grads[i] if i <= seed.id else None
        out[i] = np.zeros_like(nodes[i].value) if g is None else np.asarray(g, dtype=np.float64)
    return out


# --------------------------------------------------------------------------
# second-order directional jets


@dataclass(frozen=True)
class Jet2:
    """(f, df/ds, d2f/ds2) along one input coordinate; each part is a Var."""

    value: Var
    d1: Var
    d2: Var

    __array_ufunc__ = None

    @property
    def tape(self) -> Tape:
        return self.value.tape

    def __add__(self, other):
        return jet_apply("add", self, other)

    def __radd__(self, other):
        return jet_apply("add", other, self)

    def __sub__(self, other):
        return jet_apply("sub", self, other)

    def __rsub__(self, other):
        return jet_apply("sub", other, self)

    def __mul__(self, other):
        return jet_apply("mul", self, other)

    def __rmul__(self, other):
        return jet_apply("mul", other, self)

    def __truediv__(self, other):
        return jet_apply("div", self, other)

    def __rtruediv__(self, other):
        return jet_apply("div", other, self)

    def __neg__(self):
        return jet_apply("mul", self, -1.0)

    def __pow__(self, n: int):
        return jet_apply("pow_int", self, n=n)


def jet_constant(tape: Tape, value) -> Jet2:
    v = value if isinstance(value, Var) else tape.const(value)
    zero = tape.const(np.zeros_like(v.value))
    return Jet2(v, zero, zero)


def jet_seed(x: Var, active: bool = True) -> Jet2:
    """Jet of an input coordinate: d1 = 1 along the active direction."""
    t = x.tape
    d1 = t.const(np.full_like(x.value, 1.0 if active else 0.0))
    return Jet2(x, d1, t.const(np.zeros_like(x.value)))


def _as_jet(tape: Tape, a) -> Jet2:
    if isinstance(a, Jet2):
        if a.tape is not tape:
            raise TapeError("jets belong to different tapes")
        return a
    if isinstance(a, Var):
        if a.tape is not tape:
            raise TapeError("operands belong to different tapes")
        return jet_constant(tape, a)
    return None  # plain number / array, handled as a scalar coefficient


def _chain(a: Jet2, f: Var, fp: Var, fpp: Var) -> Jet2:
    # (f(a), f'(a) a1, f''(a) a1^2 + f'(a) a2)
    return Jet2(f, fp * a.d1, fpp * (a.d1 * a.d1) + fp * a.d2)


def tanh_parts(a: Var) -> tuple[Var, Var, Var]:
    """tanh and its first two derivatives."""
    t = a.tape
    return tanh(a), t.apply("tanh_d1", a), t.apply("tanh_d2", a)


def cubic_relu_parts(a: Var) -> tuple[Var, Var, Var]:
    """max(0, x)^3 and its first two derivatives, all zero at x <= 0."""
    r = relu(a)
    r2 = r * r
    return r2 * r, 3.0 * r2, 6.0 * r


def jet_apply(op: str, *args, n: int | None = None) -> Jet2:
    """Apply an elementary operation to jets with exact derivative rules.

    Plain numbers or arrays are accepted as constant coefficients in binary
    operations.
    """
    tape = next((a.tape for a in args if isinstance(a, (Jet2, Var))), None)
    if tape is None:
        raise TypeError("jet_apply needs at least one Jet2 argument")
    if op in ("add", "sub", "mul", "div"):
        a, b = args
        ja, jb = _as_jet(tape, a), _as_jet(tape, b)
        if op == "add":
            if jb is None:
                return Jet2(ja.value + b, ja.d1, ja.d2)
            if ja is None:
                return Jet2(a + jb.value, jb.d1, jb.d2)
            return Jet2(ja.value + jb.value, ja.d1 + jb.d1, ja.d2 + jb.d2)
        if op == "sub":
            if jb is None:
                return Jet2(ja.value - b, ja.d1, ja.d2)
            if ja is None:
                return Jet2(a - jb.value, -jb.d1, -jb.d2)
            return Jet2(ja.value - jb.value, ja.d1 - jb.d1, ja.d2 - jb.d2)
        if op == "mul":
            if jb is None:
                return Jet2(ja.value * b, ja.d1 * b, ja.d2 * b)
            if ja is None:
                return Jet2(a * jb.value, a * jb.d1, a * jb.d2)
            return Jet2(
                ja.value * jb.value,
                ja.d1 * jb.value + ja.value * jb.d1,
                ja.d2 * jb.value + 2.0 * (ja.d1 * jb.d1) + ja.value * jb.d2,
            )
        # div
        if jb is None:
            if np.any(np.asarray(b) == 0.0):
                raise DegenerateInputError("division by a zero value")
            return jet_apply("mul", ja, 1.0 / np.asarray(b, dtype=np.float64))
        if np.any(jb.value.value == 0.0):
            raise DegenerateInputError("division by a zero value")
        inv = 1.0 / jb.value
        inv2 = inv * inv
        recip = _chain(jb, inv, -inv2, 2.0 * (inv2 * inv))
        if ja is None:
            return jet_apply("mul", recip, a)
        return jet_apply("mul", ja, recip)

    (a,) = args
    a = _as_jet(tape, a)
    x = a.value
    if op == "tanh":
        return _chain(a, *tanh_parts(x))
    if op == "sin":
        s, c = sin(x), cos(x)
        return _chain(a, s, c, -s)
    if op == "cos":
        s, c = sin(x), cos(x)
        return _chain(a, c, -s, -c)
    if op == "exp":
        e = exp(x)
        return _chain(a, e, e, e)
    if op == "cubic_relu":
        return _chain(a, *cubic_relu_parts(x))
    if op == "pow_int":
        if n is None or int(n) != n or n < 0:
            raise ValueError("pow_int needs a non-negative integer exponent n")
        n = int(n)
        if n == 0:
            return jet_constant(tape, np.ones_like(x.value))
        if n == 1:
            return a
        fpp = n * (n - 1) * x ** (n - 2) if n >= 2 else None
        return _chain(a, x**n, n * x ** (n - 1), fpp)
    raise ValueError(f"unknown jet operation {op!r}")


# --------------------------------------------------------------------------
# gradient checking


def check_gradient(
    build: Callable[[Tape, Sequence[Var]], Var],
    point: Sequence,
    h: float = 1e-4,
) -> float:
    """Relative sup-norm error between tape gradients and central differences.

    ``build(tape, leaves)`` must return a scalar Var built from ``leaves``,
    which are lifted as parameters from ``point`` (a sequence of arrays).
    """
    if not h > 0:
        raise ValueError("finite-difference step h must be positive")
    base = [np.array(p, dtype=np.float64) for p in point]

    def evaluate(values):
        tape = Tape()
        leaves = [tape.param(v) for v in values]
        out = build(tape, leaves)
        if not np.all(np.isfinite(out.value)):
            raise NonFiniteError("non-finite value while checking gradients")
        return tape, leaves, out

    tape, leaves, out = evaluate(base)
    grads = backward(tape, out)
    worst = 0.0
    scale = 1e-12
    for k, leaf in enumerate(leaves):
        analytic = grads[leaf.id].reshape(-1)
        numeric = np.empty_like(analytic)
        flat = base[k].reshape(-1)
        for idx in range(flat.size):
            saved = flat[idx]
            flat[idx] = saved + h
            fp = float(evaluate(base)[2].value)
            flat[idx] = saved - h
            fm = float(evaluate(base)[2].value)
            flat[idx] = saved
            numeric[idx] = (fp - fm) / (2.0 * h)
        worst = max(worst, float(np.max(np.abs(analytic - numeric), initial=0.0)))
        scale = max(scale, float(np.max(np.abs(analytic), initial=0.0)))
    # sup-norm of the mismatch over the sup-norm of the whole gradient
    return worst / scale


def param_leaves(grads: dict[int, np.ndarray], leaves: Iterable[Var]) -> list[np.ndarray]:
    return [grads[v.id] for v in leaves]
