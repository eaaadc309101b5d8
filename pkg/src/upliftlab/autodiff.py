"""Dense-tensor reverse-mode differentiation on float64 numpy arrays.

Values are computed eagerly; every operation records one gradient closure per
input, so each minibatch builds a fresh tape that is discarded after
``backward``. Broadcasting is deliberately limited to scalar-with-tensor and
equal shapes; the explicit ``add_bias`` and ``broadcast_to`` ops cover the
remaining cases so that attention code cannot pick up silent shape bugs.
Any NaN/Inf produced by an operation raises immediately.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class ShapeMismatch(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class NonFiniteError(FloatingPointError):
    """A NaN or Inf appeared in an operation result."""


def _check_finite(arr: np.ndarray, op: str) -> np.ndarray:
    # One cheap reduction; only on suspicion do the exact elementwise check
    # (the sum can overflow to inf on its own for extreme magnitudes).
    if not math.isfinite(float(arr.sum())):
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError(f"non-finite values produced by '{op}'")
    return arr


class Node:
    """One value in the computation graph.

    ``parents`` and ``grad_fns`` line up: ``grad_fns[i](g)`` maps the output
    gradient ``g`` to the gradient contribution of ``parents[i]``. Leaves
    created with ``is_param=True`` accumulate into ``.grad`` across repeated
    ``backward`` calls until ``reset_grad``.
    """

    __slots__ = ("value", "parents", "grad_fns", "grad", "is_param", "needs_grad", "name")

    def __init__(self, value, parents=(), grad_fns=(), name=None, is_param=False, op="node"):
        self.value = _check_finite(np.asarray(value, dtype=np.float64), op)
        self.parents = tuple(parents)
        self.grad_fns = tuple(grad_fns)
        self.name = name
        self.is_param = bool(is_param)
        self.grad = None
        self.needs_grad = self.is_param or any(p.needs_grad for p in self.parents)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def reset_grad(self) -> None:
        self.grad = None

    def sum(self, axis=None) -> "Node":
        return reduce_sum(self, axis)

    def mean(self, axis=None) -> "Node":
        return mean(self, axis)

    def reshape(self, shape) -> "Node":
        return reshape(self, shape)

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        tag = self.name or ("param" if self.is_param else "node")
        return f"Node({tag}, shape={self.value.shape})"


def parameter(value, name=None) -> Node:
    """Leaf node whose total derivative is collected by ``backward``."""
    return Node(value, name=name, is_param=True, op="parameter")


def constant(value) -> Node:
    return Node(value, op="constant")


def _wrap(x) -> Node:
    return x if isinstance(x, Node) else constant(x)


def matmul(a, b) -> Node:
    """Matrix product: 2D @ 2D, batched 3D @ 3D, or 3D @ shared 2D weight."""
    a, b = _wrap(a), _wrap(b)
    av, bv = a.value, b.value
    if av.ndim == 2 and bv.ndim == 2:
        if av.shape[1] != bv.shape[0]:
            raise ShapeMismatch(f"matmul: {av.shape} @ {bv.shape}")
        fa = lambda g: g @ bv.T
        fb = lambda g: av.T @ g
    elif av.ndim == 3 and bv.ndim == 3:
        if av.shape[0] != bv.shape[0] or av.shape[2] != bv.shape[1]:
            raise ShapeMismatch(f"matmul: {av.shape} @ {bv.shape}")
        fa = lambda g: g @ bv.transpose(0, 2, 1)
        fb = lambda g: av.transpose(0, 2, 1) @ g
    elif av.ndim == 3 and bv.ndim == 2:
        if av.shape[2] != bv.shape[0]:
            raise ShapeMismatch(f"matmul: {av.shape} @ {bv.shape}")
        fa = lambda g: g @ bv.T
        fb = lambda g: np.tensordot(av, g, axes=([0, 1], [0, 1]))
    else:
        raise ShapeMismatch(f"matmul: unsupported ranks {av.shape} @ {bv.shape}")
    return Node(av @ bv, (a, b), (fa, fb), op="matmul")


def transpose_last(a) -> Node:
    """Swap the trailing two axes."""
    a = _wrap(a)
    if a.value.ndim < 2:
        raise ShapeMismatch(f"transpose_last needs ndim >= 2, got {a.value.shape}")
    return Node(a.value.swapaxes(-1, -2), (a,), (lambda g: g.swapaxes(-1, -2),), op="transpose_last")


def _binary_fns(av, bv, op):
    if av.shape == bv.shape:
        return "equal"
    if av.ndim == 0 or bv.ndim == 0:
        return "scalar"
    raise ShapeMismatch(f"{op}: shapes {av.shape} vs {bv.shape}")


def add(a, b) -> Node:
    a, b = _wrap(a), _wrap(b)
    av, bv = a.value, b.value
    kind = _binary_fns(av, bv, "add")
    if kind == "equal":
        fa, fb = (lambda g: g), (lambda g: g)
    else:
        fa = (lambda g: g.sum()) if av.ndim == 0 else (lambda g: g)
        fb = (lambda g: g.sum()) if bv.ndim == 0 else (lambda g: g)
    return Node(av + bv, (a, b), (fa, fb), op="add")


def sub(a, b) -> Node:
    return add(a, scale(_wrap(b), -1.0))


def mul(a, b) -> Node:
    """Hadamard product (equal shapes) or scalar-tensor product."""
    a, b = _wrap(a), _wrap(b)
    av, bv = a.value, b.value
    kind = _binary_fns(av, bv, "mul")
    if kind == "equal":
        fa, fb = (lambda g: g * bv), (lambda g: g * av)
    else:
        fa = (lambda g: (g * bv).sum()) if av.ndim == 0 else (lambda g: g * bv)
        fb = (lambda g: (g * av).sum()) if bv.ndim == 0 else (lambda g: g * av)
    return Node(av * bv, (a, b), (fa, fb), op="mul")


def scale(a, c: float) -> Node:
    a = _wrap(a)
    c = float(c)
    return Node(a.value * c, (a,), (lambda g: g * c,), op="scale")


def add_bias(x, b) -> Node:
    """Add a 1-D bias along the trailing axis (explicit, not silent broadcasting)."""
    x, b = _wrap(x), _wrap(b)
    xv, bv = x.value, b.value
    if bv.ndim != 1 or xv.ndim < 1 or xv.shape[-1] != bv.shape[0]:
        raise ShapeMismatch(f"add_bias: {xv.shape} with bias {bv.shape}")
    fb = lambda g: g.reshape(-1, bv.shape[0]).sum(axis=0)
    return Node(xv + bv, (x, b), (lambda g: g, fb), op="add_bias")


def broadcast_to(x, shape) -> Node:
    """Explicit broadcast; gradient sums over the expanded axes."""
    x = _wrap(x)
    xv = x.value
    shape = tuple(int(s) for s in shape)
    out = np.broadcast_to(xv, shape)

    def fx(g):
        extra = g.ndim - xv.ndim
        if extra:
            g = g.sum(axis=tuple(range(extra)))
        expanded = tuple(i for i in range(xv.ndim) if xv.shape[i] == 1 and g.shape[i] != 1)
        if expanded:
            g = g.sum(axis=expanded, keepdims=True)
        return g

    return Node(np.ascontiguousarray(out), (x,), (fx,), op="broadcast_to")


def relu(x) -> Node:
    x = _wrap(x)
    mask = x.value > 0
    return Node(np.where(mask, x.value, 0.0), (x,), (lambda g: g * mask,), op="relu")


def sigmoid_values(x: np.ndarray) -> np.ndarray:
    """Overflow-free logistic function on a plain array."""
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(x) -> Node:
    x = _wrap(x)
    out = sigmoid_values(x.value)
    return Node(out, (x,), (lambda g: g * out * (1.0 - out),), op="sigmoid")


def softmax(x, axis: int = -1) -> Node:
    """Max-shifted softmax along ``axis``; outputs sum to 1 along that axis."""
    x = _wrap(x)
    shifted = x.value - x.value.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def fx(g):
        return (g - (g * out).sum(axis=axis, keepdims=True)) * out

    return Node(out, (x,), (fx,), op="softmax")


def concat(nodes, axis: int = 0) -> Node:
    nodes = [_wrap(n) for n in nodes]
    if not nodes:
        raise ShapeMismatch("concat: no inputs")
    values = [n.value for n in nodes]
    out = np.concatenate(values, axis=axis)
    sizes = [v.shape[axis] for v in values]
    offsets = np.cumsum([0] + sizes)
    ax = axis % out.ndim

    def make_fn(lo, hi):
        idx = (slice(None),) * ax
        return lambda g: g[idx + (slice(lo, hi),)]

    fns = [make_fn(int(offsets[i]), int(offsets[i + 1])) for i in range(len(nodes))]
    return Node(out, nodes, fns, op="concat")


def reshape(x, shape) -> Node:
    x = _wrap(x)
    orig = x.value.shape
    return Node(x.value.reshape(shape), (x,), (lambda g: g.reshape(orig),), op="reshape")


def reduce_sum(x, axis=None) -> Node:
    x = _wrap(x)
    xv = x.value
    if axis is None:
        fx = lambda g: np.broadcast_to(g, xv.shape)
    else:
        fx = lambda g: np.broadcast_to(np.expand_dims(g, axis), xv.shape)
    return Node(xv.sum(axis=axis), (x,), (fx,), op="sum")


def mean(x, axis=None) -> Node:
    x = _wrap(x)
    n = x.value.size if axis is None else x.value.shape[axis]
    return scale(reduce_sum(x, axis), 1.0 / n)


def lookup(table, indices) -> Node:
    """Row lookup into a 2-D table; gradient scatters back onto hit rows only."""
    table = _wrap(table)
    tv = table.value
    if tv.ndim != 2:
        raise ShapeMismatch(f"lookup: table must be 2-D, got {tv.shape}")
    idx = np.asarray(indices)
    if idx.dtype.kind not in "iu":
        raise TypeError("lookup: indices must be integers")
    if idx.size and (idx.min() < 0 or idx.max() >= tv.shape[0]):
        raise IndexError(f"lookup: index out of range for table with {tv.shape[0]} rows")

    def ft(g):
        acc = np.zeros_like(tv)
        np.add.at(acc, idx, g)
        return acc

    return Node(tv[idx], (table,), (ft,), op="lookup")


def bce_with_logits(logits, targets) -> Node:
    """Elementwise binary cross-entropy against constant 0/1 targets.

    Uses the overflow-free form max(z,0) - z*y + log1p(exp(-|z|)).
    """
    z = _wrap(logits)
    y = np.asarray(targets, dtype=np.float64)
    zv = z.value
    if y.shape != zv.shape:
        raise ShapeMismatch(f"bce_with_logits: logits {zv.shape} vs targets {y.shape}")
    out = np.maximum(zv, 0.0) - zv * y + np.log1p(np.exp(-np.abs(zv)))
    return Node(out, (z,), (lambda g: g * (sigmoid_values(zv) - y),), op="bce_with_logits")


def backward(loss: Node) -> None:
    """Accumulate d(loss)/d(param) into ``.grad`` of every parameter leaf."""
    if loss.value.ndim != 0:
        raise ShapeMismatch(f"backward: loss must be scalar, got shape {loss.value.shape}")
    # Iterative topological order over the needs_grad subgraph.
    topo: list[Node] = []
    visited: set[int] = set()
    stack: list[tuple[Node, bool]] = [(loss, False)]
    while stack:
        node, done = stack.pop()
        if done:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.needs_grad and id(p) not in visited:
                stack.append((p, False))
    grads: dict[int, np.ndarray] = {id(loss): np.ones((), dtype=np.float64)}
    for node in reversed(topo):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.is_param:
            node.grad = g.copy() if node.grad is None else node.grad + g
        for p, fn in zip(node.parents, node.grad_fns):
            if not p.needs_grad:
                continue
            pg = fn(g)
            prev = grads.get(id(p))
            grads[id(p)] = pg if prev is None else prev + pg


@dataclass
class GradCheckReport:
    """Per-parameter comparison of analytic vs central-difference gradients."""

    rel_errors: dict[str, float] = field(default_factory=dict)
    tol: float = 1e-4

    @property
    def max_rel_err(self) -> float:
        return max(self.rel_errors.values()) if self.rel_errors else 0.0

    @property
    def worst_param(self):
        if not self.rel_errors:
            return None
        return max(self.rel_errors, key=self.rel_errors.get)

    @property
    def passed(self) -> bool:
        return self.max_rel_err <= self.tol

    def __str__(self):
        status = "pass" if self.passed else "FAIL"
        return f"grad-check {status}: max rel err {self.max_rel_err:.3e} at '{self.worst_param}' (tol {self.tol:g})"


def grad_check(f, params: dict[str, np.ndarray], eps: float = 1e-5, tol: float = 1e-4,
               rel_floor: float = 1e-8) -> GradCheckReport:
    """Compare analytic gradients of ``f`` against central finite differences.

    ``f`` maps a dict of named parameter Nodes to a scalar loss Node. The
    relative error per parameter is max |a - n| / max(|a|, |n|, rel_floor)
    over its elements.
    """
    if eps <= 0:
        raise ValueError("grad_check: eps must be positive")
    leaves = {k: parameter(v, name=k) for k, v in params.items()}
    backward(f(leaves))
    analytic = {
        k: (n.grad if n.grad is not None else np.zeros_like(n.value))
        for k, n in leaves.items()
    }

    def eval_at(arrays):
        return float(f({k: parameter(v, name=k) for k, v in arrays.items()}).value)

    report = GradCheckReport(tol=tol)
    for name, base in params.items():
        numeric = np.zeros(base.size)
        work = {k: v for k, v in params.items()}
        pert = base.copy()
        work[name] = pert
        flat = pert.reshape(-1)
        for i in range(base.size):
            orig = flat[i]
            flat[i] = orig + eps
            lp = eval_at(work)
            flat[i] = orig - eps
            lm = eval_at(work)
            flat[i] = orig
            numeric[i] = (lp - lm) / (2.0 * eps)
        a = analytic[name].reshape(-1)
        denom = np.maximum(np.maximum(np.abs(a), np.abs(numeric)), rel_floor)
        report.rel_errors[name] = float(np.max(np.abs(a - numeric) / denom)) if base.size else 0.0
    return report
