"""Small reverse-mode autodiff over dense float64 matrices.

Every value is a 2-D ``numpy`` array (scalars are 1x1).  Nodes remember their
parents and a closure mapping the output gradient to parent gradients; a
:class:`Tape` is the topological order of the nodes reachable from a root.

Non-smooth ops (relu, row/column max, top-k) record the branch they took in
``Node.branch``.  Ties in max/top-k resolve to the lowest index, the same rule
``numpy.argmax`` uses for hard assignment.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.sparse as sp


class AutodiffError(ValueError):
    pass


class Node:
    __slots__ = ("value", "grad", "parents", "backward_fn", "op", "requires_grad", "branch")

    def __init__(self, value, parents=(), backward_fn=None, op="leaf", requires_grad=None):
        if not (type(value) is np.ndarray and value.ndim == 2 and value.dtype == np.float64):
            value = _as_matrix(value)
        self.value = value
        self.grad = None
        self.parents = parents
        self.backward_fn = backward_fn
        self.op = op
        if requires_grad is None:
            requires_grad = any(p.requires_grad for p in parents)
        self.requires_grad = requires_grad
        self.branch = None

    @property
    def shape(self):
        return self.value.shape

    def item(self) -> float:
        if self.value.shape != (1, 1):
            raise AutodiffError(f"item() needs a scalar node, got shape {self.value.shape}")
        return float(self.value[0, 0])

    def __repr__(self):
        return f"Node(op={self.op!r}, shape={self.shape})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return subtract(self, other)

    def __rsub__(self, other):
        return subtract(other, self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, other)
        return multiply(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __truediv__(self, other):
        if np.isscalar(other):
            return scale(self, 1.0 / other)
        return divide(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose(self)


def _as_matrix(value):
    if isinstance(value, SparseConstant) or sp.issparse(value):
        return value
    value = np.asarray(value, dtype=np.float64)
    if value.ndim == 0:
        return value.reshape(1, 1)
    if value.ndim == 1:
        return value.reshape(1, -1)
    if value.ndim != 2:
        raise AutodiffError(f"only 2-D values are supported, got shape {value.shape}")
    return value


class SparseConstant:
    """CSR matrix with its transpose precomputed, for repeated products."""

    def __init__(self, matrix):
        self.matrix = sp.csr_matrix(matrix, dtype=np.float64)
        self.T = sp.csr_matrix(self.matrix.T)
        self.shape = self.matrix.shape

    def __matmul__(self, other):
        return self.matrix @ other


def parameter(value) -> Node:
    """Leaf node that receives a gradient."""
    return Node(np.array(value, dtype=np.float64), requires_grad=True)


def constant(value) -> Node:
    return value if isinstance(value, Node) else Node(value, requires_grad=False)


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    if grad.shape == shape:
        return grad
    if shape[0] == 1 and grad.shape[0] != 1:
        grad = grad.sum(axis=0, keepdims=True)
    if shape[1] == 1 and grad.shape[1] != 1:
        grad = grad.sum(axis=1, keepdims=True)
    return grad


def _broadcast_shape(a, b, op):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise AutodiffError(f"{op}: shape mismatch {a.shape} vs {b.shape}") from None


# ---------------------------------------------------------------------------
# forward ops


def matmul(a, b) -> Node:
    a, b = constant(a), constant(b)
    if a.shape[1] != b.shape[0]:
        raise AutodiffError(f"matmul: shape mismatch {a.shape} @ {b.shape}")
    av, bv = a.value, b.value
    if isinstance(bv, SparseConstant) or sp.issparse(bv):
        raise AutodiffError("matmul: sparse operands are only supported on the left")
    if sp.issparse(av):
        av = SparseConstant(av)
    if isinstance(av, SparseConstant):
        if a.requires_grad:
            raise AutodiffError("matmul: sparse operands must be constants")
        at = av.T
        out = np.asarray(av.matrix @ bv)
        return Node(out, (a, b), lambda g: (None, np.asarray(at @ g)), "matmul")

    def backward(g):
        ga = g @ bv.T if a.requires_grad else None
        gb = av.T @ g if b.requires_grad else None
        return ga, gb

    return Node(av @ bv, (a, b), backward, "matmul")


def transpose(a) -> Node:
    a = constant(a)
    return Node(a.value.T.copy(), (a,), lambda g: (g.T,), "transpose")


def add(a, b) -> Node:
    a, b = constant(a), constant(b)
    if a.shape != b.shape:
        _broadcast_shape(a, b, "add")
    sa, sb = a.shape, b.shape
    return Node(
        a.value + b.value,
        (a, b),
        lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)),
        "add",
    )


def subtract(a, b) -> Node:
    a, b = constant(a), constant(b)
    if a.shape != b.shape:
        _broadcast_shape(a, b, "subtract")
    sa, sb = a.shape, b.shape
    return Node(
        a.value - b.value,
        (a, b),
        lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)),
        "subtract",
    )


def multiply(a, b) -> Node:
    a, b = constant(a), constant(b)
    if a.shape != b.shape:
        _broadcast_shape(a, b, "multiply")
    av, bv = a.value, b.value

    def backward(g):
        ga = _unbroadcast(g * bv, av.shape) if a.requires_grad else None
        gb = _unbroadcast(g * av, bv.shape) if b.requires_grad else None
        return ga, gb

    return Node(av * bv, (a, b), backward, "multiply")


def divide(a, b) -> Node:
    a, b = constant(a), constant(b)
    if a.shape != b.shape:
        _broadcast_shape(a, b, "divide")
    av, bv = a.value, b.value
    if np.any(bv == 0.0):
        raise AutodiffError("divide: division by zero")
    out = av / bv

    def backward(g):
        ga = _unbroadcast(g / bv, av.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * out / bv, bv.shape) if b.requires_grad else None
        return ga, gb

    return Node(out, (a, b), backward, "divide")


def scale(a, k: float) -> Node:
    a = constant(a)
    k = float(k)
    return Node(a.value * k, (a,), lambda g: (g * k,), "scale")


def row_softmax(a) -> Node:
    a = constant(a)
    z = a.value - a.value.max(axis=1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=1, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=1, keepdims=True)),)

    return Node(out, (a,), backward, "row_softmax")


def relu(a) -> Node:
    a = constant(a)
    mask = a.value > 0.0
    node = Node(np.maximum(a.value, 0.0), (a,), lambda g: (g * mask,), "relu")
    node.branch = mask
    return node


def row_max(a) -> Node:
    """Per-row maximum as an (n, 1) column."""
    a = constant(a)
    idx = np.argmax(a.value, axis=1)
    rows = np.arange(a.shape[0])
    shape = a.shape

    def backward(g):
        out = np.zeros(shape)
        out[rows, idx] = g[:, 0]
        return (out,)

    node = Node(a.value[rows, idx][:, None], (a,), backward, "row_max")
    node.branch = idx
    return node


def col_max(a) -> Node:
    """Per-column maximum as a (1, c) row."""
    a = constant(a)
    idx = np.argmax(a.value, axis=0)
    cols = np.arange(a.shape[1])
    shape = a.shape

    def backward(g):
        out = np.zeros(shape)
        out[idx, cols] = g[0, :]
        return (out,)

    node = Node(a.value[idx, cols][None, :], (a,), backward, "col_max")
    node.branch = idx
    return node


def _top_k_indices(values: np.ndarray, k: int, axis: int) -> np.ndarray:
    # stable sort on the negated values keeps lower indices first among ties
    return np.argsort(-values, axis=axis, kind="stable").take(np.arange(k), axis=axis)


def top_k_sum(a, k: int) -> Node:
    """Sum of the k largest entries of a vector-shaped node."""
    a = constant(a)
    if 1 not in a.shape:
        raise AutodiffError(f"top_k_sum expects a vector, got shape {a.shape}")
    size = a.value.size
    if not 1 <= k <= size:
        raise AutodiffError(f"top_k_sum: k={k} outside [1, {size}]")
    flat = a.value.ravel()
    sel = _top_k_indices(flat, k, axis=0)
    shape = a.shape

    def backward(g):
        out = np.zeros(size)
        out[sel] = g[0, 0]
        return (out.reshape(shape),)

    node = Node(flat[sel].sum(), (a,), backward, "top_k_sum")
    node.branch = np.sort(sel)
    return node


def col_top_k_sum(a, k: int) -> Node:
    """For each column, the sum of its k largest entries, as a (1, c) row."""
    a = constant(a)
    n = a.shape[0]
    if not 1 <= k <= n:
        raise AutodiffError(f"col_top_k_sum: k={k} outside [1, {n}]")
    sel = _top_k_indices(a.value, k, axis=0)  # (k, c) row indices
    cols = np.broadcast_to(np.arange(a.shape[1]), sel.shape)
    picked = a.value[sel, cols]
    shape = a.shape

    def backward(g):
        out = np.zeros(shape)
        out[sel, cols] = np.broadcast_to(g, sel.shape)
        return (out,)

    total = picked[0:1, :].copy()
    for r in range(1, k):
        total += picked[r : r + 1, :]
    node = Node(total, (a,), backward, "col_top_k_sum")
    node.branch = np.sort(sel, axis=0)
    return node


def reduce_sum(a, axis: Optional[int] = None) -> Node:
    """Sum of all entries (1x1), or along an axis keeping 2-D shape."""
    a = constant(a)
    shape = a.shape
    out = a.value.sum() if axis is None else a.value.sum(axis=axis, keepdims=True)
    return Node(out, (a,), lambda g: (np.broadcast_to(g, shape).copy(),), "sum")


def l2_norm(a) -> Node:
    """Euclidean (Frobenius) norm; the subgradient at zero is taken as 0."""
    a = constant(a)
    norm = float(np.sqrt(np.sum(a.value * a.value)))

    def backward(g):
        if norm == 0.0:
            return (np.zeros(a.shape),)
        return (g[0, 0] * a.value / norm,)

    return Node(norm, (a,), backward, "l2_norm")


def diagonal(a) -> Node:
    """Diagonal of a square matrix as a (1, c) row."""
    a = constant(a)
    if a.shape[0] != a.shape[1]:
        raise AutodiffError(f"diagonal: expected a square matrix, got {a.shape}")

    def backward(g):
        return (np.diag(g[0]),)

    return Node(np.diag(a.value)[None, :], (a,), backward, "diagonal")


# ---------------------------------------------------------------------------
# backward pass


@dataclass
class Tape:
    """Nodes reachable from a root, parents before children."""

    nodes: list

    @classmethod
    def from_root(cls, root: Node) -> "Tape":
        order, seen = [], set()
        stack = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in reversed(node.parents):
                if id(p) not in seen:
                    stack.append((p, False))
        return cls(order)

    def signature(self) -> tuple:
        """Branches taken by every non-smooth op, in tape order."""
        return tuple(n.branch.tobytes() for n in self.nodes if n.branch is not None)


def backward(root: Node, tape: Optional[Tape] = None) -> Tape:
    """Accumulate d(root)/d(node) into ``node.grad`` for every node needing it."""
    if root.shape != (1, 1):
        raise AutodiffError(f"backward needs a scalar root, got shape {root.shape}")
    tape = tape or Tape.from_root(root)
    for node in tape.nodes:
        node.grad = None
    root.grad = np.ones((1, 1))
    for node in reversed(tape.nodes):
        if node.grad is None or node.backward_fn is None or not node.requires_grad:
            continue
        grads = node.backward_fn(node.grad)
        for parent, g in zip(node.parents, grads):
            if g is None or not parent.requires_grad:
                continue
            if parent.grad is None:
                parent.grad = np.array(g, dtype=np.float64)
            else:
                parent.grad = parent.grad + g
    return tape


# ---------------------------------------------------------------------------
# finite differences


@dataclass
class GradCheckResult:
    max_rel_error: float
    checked: int
    inconclusive: int
    worst: Optional[tuple] = None  # (param index, flat index)

    @property
    def conclusive(self) -> bool:
        return self.inconclusive == 0

    def passed(self, tol: float = 1e-4) -> bool:
        return self.conclusive and self.max_rel_error < tol


def finite_difference_check(
    f: Callable[[Sequence[Node]], Node],
    params: Sequence[np.ndarray],
    step: float = 1e-6,
    abs_floor: float = 1e-5,
    coords: Optional[Sequence[tuple]] = None,
) -> GradCheckResult:
    """Compare reverse-mode gradients of ``f`` with central differences.

    The relative error of a coordinate is |ad - fd| / max(|ad|, |fd|, abs_floor);
    the floor keeps round-off in f (about 1e-16 |f| / step) from dominating on
    coordinates whose gradient is nearly zero.
    A coordinate whose +h or -h evaluation takes a different branch through a
    non-smooth op than the base point is counted as inconclusive instead.
    """
    base = [np.array(p, dtype=np.float64) for p in params]
    leaves = [parameter(p) for p in base]
    root = f(leaves)
    tape = backward(root)
    ref_sig = tape.signature()
    analytic = [
        leaf.grad if leaf.grad is not None else np.zeros(leaf.shape) for leaf in leaves
    ]

    def evaluate(values):
        out = f([constant(v) for v in values])
        return out.item(), Tape.from_root(out).signature()

    if coords is None:
        coords = [(pi, fi) for pi, p in enumerate(base) for fi in range(p.size)]
    worst, worst_at, inconclusive = 0.0, None, 0
    for pi, fi in coords:
        shifted = [b.copy() for b in base]
        flat = shifted[pi].reshape(-1)
        x0 = flat[fi]
        flat[fi] = x0 + step
        f_plus, sig_plus = evaluate(shifted)
        flat[fi] = x0 - step
        f_minus, sig_minus = evaluate(shifted)
        if sig_plus != ref_sig or sig_minus != ref_sig:
            inconclusive += 1
            continue
        numeric = (f_plus - f_minus) / (2.0 * step)
        exact = analytic[pi].reshape(-1)[fi]
        err = abs(exact - numeric) / max(abs(exact), abs(numeric), abs_floor)
        if err > worst:
            worst, worst_at = err, (pi, fi)
    return GradCheckResult(worst, len(coords) - inconclusive, inconclusive, worst_at)
