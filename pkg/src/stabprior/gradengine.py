"""Reverse-mode differentiation on a per-evaluation tape.

Every primitive appends a :class:`Node` to the active :class:`Tape`. Nodes are
created in evaluation order, so a reversed sweep over ``tape.nodes`` is a valid
topological order for the backward pass. The tape is never mutated by
``backward``, which makes it replayable.

Constants (anything that is not a leaf parameter and does not depend on one)
carry no vector-Jacobian product and are skipped during the sweep.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import kernels

LOG_2PI = float(np.log(2.0 * np.pi))


class GradientError(FloatingPointError):
    """A non-finite value or gradient was met on the tape."""


class Node:
    __slots__ = ("tape", "id", "op", "value", "parents", "vjp")
    __array_ufunc__ = None

    def __init__(self, tape, id_, op, value, parents, vjp):
        self.tape = tape
        self.id = id_
        self.op = op
        self.value = value
        self.parents = parents
        self.vjp = vjp

    @property
    def requires_grad(self) -> bool:
        return self.vjp is not None or self.op == "leaf"

    @property
    def shape(self):
        return np.shape(self.value)

    def __repr__(self):
        return f"Node(#{self.id} {self.op} shape={self.shape})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


@dataclass
class Param:
    """A trainable array together with its gradient slot."""

    layer: int
    role: str
    value: np.ndarray
    grad: np.ndarray = field(init=False)

    def __post_init__(self):
        self.value = np.asarray(self.value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)


class ParamSet(list):
    def zero_grad(self) -> None:
        for p in self:
            p.grad = np.zeros_like(p.value)

    def by_role(self, role: str) -> list[Param]:
        return [p for p in self if p.role == role]


class Tape:
    def __init__(self, record_grad: bool = True):
        self.nodes: list[Node] = []
        self.record_grad = record_grad
        self.bound: dict[int, tuple[Param, Node]] = {}

    def _push(self, op: str, value, parents: tuple = (), vjp: Callable | None = None) -> Node:
        if vjp is not None and not (self.record_grad and any(p.requires_grad for p in parents)):
            vjp = None
        node = Node(self, len(self.nodes), op, value, parents, vjp)
        self.nodes.append(node)
        return node

    def constant(self, value, op: str = "const") -> Node:
        return self._push(op, np.asarray(value, dtype=np.float64))

    def leaf(self, value, param: Param | None = None) -> Node:
        """Differentiable input; binds ``param`` so gradients land in it."""
        if param is not None:
            value = param.value
        if not self.record_grad:
            return self.constant(value)
        node = self._push("leaf", np.asarray(value, dtype=np.float64))
        if param is not None:
            self.bound[id(param)] = (param, node)
        return node

    def release(self) -> None:
        """Drop recorded nodes so their arrays are freed without waiting for the cycle collector."""
        self.nodes = []
        self.bound = {}

    def first_nonfinite(self, upto: int | None = None) -> Node | None:
        for node in self.nodes[: upto]:
            if not np.all(np.isfinite(node.value)):
                return node
        return None

    def backward(self, loss: Node) -> list:
        """Return a list of gradients indexed by node id (``None`` if unused)."""
        if np.size(loss.value) != 1:
            raise ValueError("backward needs a scalar loss")
        if not np.isfinite(loss.value):
            bad = self.first_nonfinite(loss.id + 1)
            raise GradientError(f"non-finite value produced at {bad!r}")
        grads: list = [None] * len(self.nodes)
        grads[loss.id] = np.ones_like(loss.value)
        for node in reversed(self.nodes[: loss.id + 1]):
            g = grads[node.id]
            if g is None or node.vjp is None:
                continue
            for parent, pg in zip(node.parents, node.vjp(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if not np.all(np.isfinite(pg)):
                    raise GradientError(f"non-finite gradient flowing from {node!r} into {parent!r}")
                prev = grads[parent.id]
                grads[parent.id] = pg if prev is None else prev + pg
        return grads


def forward_and_backward(tape: Tape, loss: Node, params: Sequence[Param]) -> float:
    """Zero ``params`` gradients, backpropagate ``loss`` and store the result."""
    for p in params:
        p.grad = np.zeros_like(p.value)
    grads = tape.backward(loss)
    for p in params:
        entry = tape.bound.get(id(p))
        if entry is None:
            continue
        g = grads[entry[1].id]
        if g is not None:
            p.grad = p.grad + g
    return float(loss.value)


def _tape_of(*xs) -> Tape:
    for x in xs:
        if isinstance(x, Node):
            return x.tape
    raise TypeError("at least one operand must be a tape node")


def _lift(tape: Tape, x) -> Node:
    return x if isinstance(x, Node) else tape.constant(x)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if np.shape(g) == tuple(shape):
        return g
    ndim = len(shape)
    while g.ndim > ndim:
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def add(a, b) -> Node:
    t = _tape_of(a, b)
    a, b = _lift(t, a), _lift(t, b)
    sa, sb = a.shape, b.shape
    return t._push("add", a.value + b.value, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Node:
    t = _tape_of(a, b)
    a, b = _lift(t, a), _lift(t, b)
    sa, sb = a.shape, b.shape
    return t._push("sub", a.value - b.value, (a, b), lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a, b) -> Node:
    t = _tape_of(a, b)
    a, b = _lift(t, a), _lift(t, b)
    av, bv = a.value, b.value
    return t._push(
        "mul", av * bv, (a, b),
        lambda g: (_unbroadcast(g * bv, np.shape(av)), _unbroadcast(g * av, np.shape(bv))),
    )


def neg(a: Node) -> Node:
    return a.tape._push("neg", -a.value, (a,), lambda g: (-g,))


def matmul(a, b) -> Node:
    t = _tape_of(a, b)
    a, b = _lift(t, a), _lift(t, b)
    av, bv = a.value, b.value
    if av.ndim != 2 or bv.ndim != 2 or av.shape[1] != bv.shape[0]:
        raise ValueError(f"cannot multiply {av.shape} by {bv.shape}")
    return t._push("matmul", av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g))


def relu(a: Node) -> Node:
    mask = a.value > 0.0
    return a.tape._push("relu", np.where(mask, a.value, 0.0), (a,), lambda g: (g * mask,))


def square(a: Node) -> Node:
    av = a.value
    return a.tape._push("square", av * av, (a,), lambda g: (2.0 * av * g,))


def sqrt(a: Node) -> Node:
    """Square root whose derivative at exactly zero is taken as zero."""
    if np.any(a.value < 0.0):
        raise AssertionError(f"sqrt of negative values at {a!r}")
    out = np.sqrt(a.value)
    safe = np.where(out > 0.0, out, 1.0)

    def vjp(g):
        return (np.where(out > 0.0, 0.5 * g / safe, 0.0),)

    return a.tape._push("sqrt", out, (a,), vjp)


def exp(a: Node) -> Node:
    out = np.exp(a.value)
    return a.tape._push("exp", out, (a,), lambda g: (g * out,))


def log(a: Node) -> Node:
    av = a.value
    return a.tape._push("log", np.log(av), (a,), lambda g: (g / av,))


def softplus(a: Node) -> Node:
    """``max(log(1 + e^a), 1e-8)``; zero derivative below the floor."""
    out, deriv = kernels.softplus_floor(a.value)
    return a.tape._push("softplus", out, (a,), lambda g: (g * deriv,))


def sum(a: Node, axis=None) -> Node:  # noqa: A001 - mirrors numpy naming
    shape = a.shape
    out = np.sum(a.value, axis=axis)

    def vjp(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return a.tape._push("sum", np.asarray(out, dtype=np.float64), (a,), vjp)


def stop_gradient(a) -> Node:
    """Identity in the forward pass; blocks gradients in the backward pass."""
    if isinstance(a, Node):
        return a.tape._push("stop_gradient", a.value)
    raise TypeError("stop_gradient expects a tape node")


def log_softmax(a: Node) -> Node:
    z = a.value - a.value.max(axis=1, keepdims=True)
    out = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    probs = np.exp(out)
    return a.tape._push(
        "log_softmax", out, (a,), lambda g: (g - probs * g.sum(axis=1, keepdims=True),)
    )


def categorical_loglik(logits: Node, targets: np.ndarray) -> Node:
    """Sum over rows of the log-softmax entry at each row's target class."""
    targets = np.asarray(targets)
    rows = np.arange(len(targets))
    z = logits.value - logits.value.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    value = logp[rows, targets].sum()

    def vjp(g):
        d = -np.exp(logp)
        d[rows, targets] += 1.0
        return (g * d,)

    return logits.tape._push("categorical_loglik", np.float64(value), (logits,), vjp)


def gaussian_loglik(outputs: Node, targets: np.ndarray, sigma_obs: float) -> Node:
    """Sum of ``log N(target; output, sigma_obs^2)`` over all entries."""
    targets = np.asarray(targets, dtype=np.float64).reshape(outputs.shape)
    var = sigma_obs * sigma_obs
    resid = targets - outputs.value
    value = np.sum(-0.5 * LOG_2PI - np.log(sigma_obs) - 0.5 * resid * resid / var)
    return outputs.tape._push(
        "gaussian_loglik", np.float64(value), (outputs,), lambda g: (g * resid / var,)
    )


def _raw(x):
    return x.value if isinstance(x, Node) else np.asarray(x, dtype=np.float64)


def gaussian_product(mu_q: Node, sigma_q: Node, mu_p, sigma_p) -> tuple[Node, Node]:
    """Mean and std nodes of the normalised product ``q * p``.

    The prior side (``mu_p``, ``sigma_p``) is read as a constant: gradients
    reach only ``mu_q`` and ``sigma_q``.
    """
    t = mu_q.tape
    mp = np.broadcast_to(_raw(mu_p), mu_q.shape)
    sp = np.broadcast_to(_raw(sigma_p), mu_q.shape)
    mu, sigma, d_mu_mu, d_mu_sigma, d_sigma_sigma = kernels.gaussian_product(
        mu_q.value, sigma_q.value, mp, sp
    )
    mu_node = t._push("qtilde_mu", mu, (mu_q, sigma_q), lambda g: (g * d_mu_mu, g * d_mu_sigma))
    sigma_node = t._push("qtilde_sigma", sigma, (sigma_q,), lambda g: (g * d_sigma_sigma,))
    return mu_node, sigma_node


def kl_gaussian(mu_q: Node, sigma_q: Node, mu_p, sigma_p) -> Node:
    """Closed-form diagonal ``KL(q || p)`` with a constant prior."""
    t = mu_q.tape
    value, dmu, dsigma = kernels.kl_diag(mu_q.value, sigma_q.value, _raw(mu_p), _raw(sigma_p))
    return t._push("kl_gaussian", np.float64(value), (mu_q, sigma_q), lambda g: (g * dmu, g * dsigma))
