"""Minimal reverse-mode automatic differentiation over dense numpy arrays.

Implements exactly the operations the cause/effect tagger needs (matrix
products, masked row-softmax, GELU, sigmoid, row normalization, gathers,
cross-entropy), each with a hand-written backward rule, plus a central
finite-difference checker used to verify every rule numerically.

No broadcasting engine: each op states its accepted shapes and raises
``ShapeError`` otherwise. Default precision is float64 so that gradient
checks are meaningful; float32 works if the inputs carry it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
from scipy.special import erf, expit

__all__ = [
    "Tensor",
    "ShapeError",
    "GraphError",
    "matmul",
    "transpose",
    "add",
    "mul",
    "affine",
    "mul_const",
    "shift",
    "scale",
    "gather_rows",
    "slice_cols",
    "concat_cols",
    "sum_all",
    "masked_softmax",
    "gelu",
    "sigmoid",
    "row_norm",
    "cross_entropy",
    "backward",
    "zero_grad",
    "finite_diff_check",
    "GradCheckReport",
]

_INV_SQRT2 = float(1.0 / np.sqrt(2.0))
_INV_SQRT_2PI = float(1.0 / np.sqrt(2.0 * np.pi))


class ShapeError(ValueError):
    """Operand shapes incompatible with the operation."""


class GraphError(RuntimeError):
    """Misuse of the recorded computation graph."""


class Tensor:
    """Dense array node in a computation graph.

    Leaf tensors created with ``requires_grad=True`` hold an accumulated
    gradient (zero-initialized, so parameters unreachable from a loss report
    zero gradient). Interior nodes are created by the ops below and keep
    references to their inputs plus a backward rule.
    """

    __slots__ = ("values", "requires_grad", "grad", "_parents", "_backward", "_done")

    def __init__(self, values, requires_grad: bool = False):
        arr = np.asarray(values)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        self.values = arr
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(arr) if requires_grad else None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self._done = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    def item(self) -> float:
        if self.values.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.shape}")
        return float(self.values.reshape(()))

    def _accumulate(self, g: np.ndarray) -> None:
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.zeros_like(self.values)
        self.grad += g

    def __repr__(self) -> str:
        return f"Tensor(shape={self.values.shape}, requires_grad={self.requires_grad})"


def _node(values: np.ndarray, parents: tuple[Tensor, ...],
          backward_fn: Callable[[np.ndarray], None]) -> Tensor:
    """Wrap an op result; records inputs only if a gradient path exists."""
    out = Tensor(values)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    return out


def _require_2d(t: Tensor, op: str) -> None:
    if t.values.ndim != 2:
        raise ShapeError(f"{op} expects a 2-d tensor, got shape {t.shape}")


# ---------------------------------------------------------------- basic ops


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of two 2-d tensors."""
    _require_2d(a, "matmul")
    _require_2d(b, "matmul")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} vs {b.shape}")
    out = a.values @ b.values

    def backward_fn(g: np.ndarray) -> None:
        a._accumulate(g @ b.values.T)
        b._accumulate(a.values.T @ g)

    return _node(out, (a, b), backward_fn)


def transpose(a: Tensor) -> Tensor:
    _require_2d(a, "transpose")

    def backward_fn(g: np.ndarray) -> None:
        a._accumulate(g.T)

    return _node(a.values.T.copy(), (a,), backward_fn)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; shapes must match exactly."""
    if a.shape != b.shape:
        raise ShapeError(f"add shapes differ: {a.shape} vs {b.shape}")

    def backward_fn(g: np.ndarray) -> None:
        a._accumulate(g)
        b._accumulate(g)

    return _node(a.values + b.values, (a, b), backward_fn)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise (Hadamard) product; shapes must match exactly."""
    if a.shape != b.shape:
        raise ShapeError(f"mul shapes differ: {a.shape} vs {b.shape}")

    def backward_fn(g: np.ndarray) -> None:
        a._accumulate(g * b.values)
        b._accumulate(g * a.values)

    return _node(a.values * b.values, (a, b), backward_fn)


def affine(x: Tensor, scale_by: float = 1.0, offset: float = 0.0) -> Tensor:
    """Elementwise ``scale_by * x + offset`` with non-trainable constants."""

    def backward_fn(g: np.ndarray) -> None:
        x._accumulate(g * scale_by)

    return _node(x.values * scale_by + offset, (x,), backward_fn)


def mul_const(x: Tensor, arr: np.ndarray) -> Tensor:
    """Elementwise product with a constant array of identical shape."""
    arr = np.asarray(arr, dtype=x.values.dtype)
    if arr.shape != x.shape:
        raise ShapeError(f"mul_const shapes differ: {x.shape} vs {arr.shape}")

    def backward_fn(g: np.ndarray) -> None:
        x._accumulate(g * arr)

    return _node(x.values * arr, (x,), backward_fn)


def shift(x: Tensor, s: Tensor) -> Tensor:
    """Add a 1-d tensor to every row of ``x``; ``s`` has 1 or row-width entries."""
    _require_2d(x, "shift")
    if s.values.ndim != 1 or s.values.size not in (1, x.shape[1]):
        raise ShapeError(f"shift offset shape {s.shape} incompatible with {x.shape}")

    def backward_fn(g: np.ndarray) -> None:
        x._accumulate(g)
        if s.values.size == 1:
            s._accumulate(np.asarray([g.sum()], dtype=g.dtype))
        else:
            s._accumulate(g.sum(axis=0))

    return _node(x.values + s.values, (x, s), backward_fn)


def scale(x: Tensor, s: Tensor) -> Tensor:
    """Multiply every row of ``x`` by a 1-d tensor of 1 or row-width entries."""
    _require_2d(x, "scale")
    if s.values.ndim != 1 or s.values.size not in (1, x.shape[1]):
        raise ShapeError(f"scale factor shape {s.shape} incompatible with {x.shape}")

    def backward_fn(g: np.ndarray) -> None:
        x._accumulate(g * s.values)
        if s.values.size == 1:
            s._accumulate(np.asarray([(g * x.values).sum()], dtype=g.dtype))
        else:
            s._accumulate((g * x.values).sum(axis=0))

    return _node(x.values * s.values, (x, s), backward_fn)


def gather_rows(table: Tensor, idx) -> Tensor:
    """Select rows of a 2-d table by integer index (embedding lookup)."""
    _require_2d(table, "gather_rows")
    idx = np.asarray(idx, dtype=np.int64)
    if idx.ndim != 1:
        raise ShapeError(f"gather_rows index must be 1-d, got shape {idx.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise IndexError(
            f"gather_rows index out of range for table with {table.shape[0]} rows"
        )

    def backward_fn(g: np.ndarray) -> None:
        acc = np.zeros_like(table.values)
        np.add.at(acc, idx, g)
        table._accumulate(acc)

    return _node(table.values[idx], (table,), backward_fn)


def slice_cols(x: Tensor, start: int, stop: int) -> Tensor:
    _require_2d(x, "slice_cols")
    if not (0 <= start < stop <= x.shape[1]):
        raise ShapeError(f"slice_cols [{start}:{stop}] invalid for shape {x.shape}")

    def backward_fn(g: np.ndarray) -> None:
        acc = np.zeros_like(x.values)
        acc[:, start:stop] = g
        x._accumulate(acc)

    return _node(x.values[:, start:stop].copy(), (x,), backward_fn)


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    parts = tuple(parts)
    if not parts:
        raise ShapeError("concat_cols needs at least one tensor")
    for p in parts:
        _require_2d(p, "concat_cols")
    rows = parts[0].shape[0]
    if any(p.shape[0] != rows for p in parts):
        raise ShapeError(f"concat_cols row counts differ: {[p.shape for p in parts]}")
    widths = [p.shape[1] for p in parts]
    offsets = np.concatenate([[0], np.cumsum(widths)])

    def backward_fn(g: np.ndarray) -> None:
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            p._accumulate(g[:, lo:hi])

    out = np.concatenate([p.values for p in parts], axis=1)
    return _node(out, parts, backward_fn)


def sum_all(x: Tensor) -> Tensor:
    """Sum of all entries, as a scalar tensor."""

    def backward_fn(g: np.ndarray) -> None:
        x._accumulate(np.full_like(x.values, float(g)))

    return _node(np.asarray(x.values.sum()), (x,), backward_fn)


# ----------------------------------------------------------- nonlinearities


def masked_softmax(scores: Tensor, mask) -> Tensor:
    """Row softmax restricted to mask-true positions; false positions are 0.

    Each row is stabilized by subtracting its max over the allowed positions,
    so the row sums to 1 over the mask and is exactly zero elsewhere. Rows
    with no allowed position are a caller error.
    """
    _require_2d(scores, "masked_softmax")
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != scores.shape:
        raise ShapeError(f"mask shape {mask.shape} != scores shape {scores.shape}")
    if not mask.any(axis=1).all():
        bad = int(np.flatnonzero(~mask.any(axis=1))[0])
        raise ValueError(f"masked_softmax: row {bad} has no allowed position")

    neg = np.where(mask, scores.values, -np.inf)
    z = np.exp(neg - neg.max(axis=1, keepdims=True))
    out = z / z.sum(axis=1, keepdims=True)

    def backward_fn(g: np.ndarray) -> None:
        inner = (g * out).sum(axis=1, keepdims=True)
        scores._accumulate(out * (g - inner))

    return _node(out, (scores,), backward_fn)


def gelu(x: Tensor, approximate: bool = False) -> Tensor:
    """Elementwise GELU; exact erf form unless ``approximate`` (tanh) is set."""
    v = x.values
    if approximate:
        k = float(np.sqrt(2.0 / np.pi))
        inner = k * (v + 0.044715 * v**3)
        t = np.tanh(inner)
        out = 0.5 * v * (1.0 + t)

        def backward_fn(g: np.ndarray) -> None:
            d_inner = k * (1.0 + 3 * 0.044715 * v**2)
            deriv = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t**2) * d_inner
            x._accumulate(g * deriv)

    else:
        cdf = 0.5 * (1.0 + erf(v * _INV_SQRT2))
        out = v * cdf

        def backward_fn(g: np.ndarray) -> None:
            pdf = np.exp(-0.5 * v**2) * _INV_SQRT_2PI
            x._accumulate(g * (cdf + v * pdf))

    return _node(out, (x,), backward_fn)


def sigmoid(x: Tensor) -> Tensor:
    """Elementwise logistic function, computed without overflow."""
    out = expit(x.values)

    def backward_fn(g: np.ndarray) -> None:
        x._accumulate(g * out * (1.0 - out))

    return _node(out, (x,), backward_fn)


def row_norm(x: Tensor, eps: float, sqrt_denom: bool = False) -> Tensor:
    """Center each row and divide by (variance + eps), or its square root.

    The default divides by the raw ``variance + eps``; ``sqrt_denom=True``
    gives the conventional standard-deviation denominator.
    """
    _require_2d(x, "row_norm")
    d = x.shape[1]
    centered = x.values - x.values.mean(axis=1, keepdims=True)
    var = (centered**2).mean(axis=1, keepdims=True)
    denom = np.sqrt(var + eps) if sqrt_denom else (var + eps)
    out = centered / denom

    def backward_fn(g: np.ndarray) -> None:
        g_centered = g - g.mean(axis=1, keepdims=True)
        dot = (g * centered).sum(axis=1, keepdims=True)
        if sqrt_denom:
            dx = g_centered / denom - centered * (dot / (d * denom**3))
        else:
            dx = g_centered / denom - centered * (2.0 * dot / (d * denom**2))
        x._accumulate(dx)

    return _node(out, (x,), backward_fn)


def cross_entropy(logits: Tensor, onehot) -> Tensor:
    """Mean negative log-likelihood of one-hot targets under row softmax.

    Uses log-sum-exp, so logits of magnitude up to ~1e4 stay finite. Targets
    may be a constant array or a tensor; each row must be exactly one-hot.
    """
    _require_2d(logits, "cross_entropy")
    target = onehot if isinstance(onehot, Tensor) else Tensor(np.asarray(onehot))
    oh = target.values
    if oh.shape != logits.shape:
        raise ShapeError(f"targets shape {oh.shape} != logits shape {logits.shape}")
    is_binary = np.all((oh == 0.0) | (oh == 1.0))
    if not is_binary or not np.all(oh.sum(axis=1) == 1.0):
        bad = int(np.flatnonzero((oh.sum(axis=1) != 1.0) | (~((oh == 0) | (oh == 1))).any(axis=1))[0])
        raise ValueError(f"cross_entropy: target row {bad} is not one-hot")

    m = logits.values.max(axis=1, keepdims=True)
    z = logits.values - m
    lse = m + np.log(np.exp(z).sum(axis=1, keepdims=True))
    rows = logits.shape[0]
    out = np.asarray((lse - (oh * logits.values).sum(axis=1, keepdims=True)).mean())

    def backward_fn(g: np.ndarray) -> None:
        gs = float(g) / rows
        probs = np.exp(logits.values - lse)
        logits._accumulate((probs - oh) * gs)
        target._accumulate(-(logits.values - lse) * gs)

    return _node(out, (logits, target), backward_fn)


# ------------------------------------------------------------- backward pass


def _toposort(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Run reverse-mode differentiation from a scalar loss.

    Every requires-grad tensor reachable from ``loss`` receives its gradient;
    each graph node's rule fires exactly once, in reverse topological order.
    A second call on the same result is an error (build a fresh graph).
    """
    if loss.values.size != 1:
        raise GraphError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._done:
        raise GraphError("backward already ran on this graph")
    loss._done = True
    if not loss.requires_grad:
        return
    order = _toposort(loss)
    loss.grad = np.ones_like(loss.values)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


def zero_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        if p.requires_grad:
            p.grad = np.zeros_like(p.values)


# --------------------------------------------------------- gradient checking


@dataclass
class GradCheckEntry:
    name: str
    max_abs_err: float
    max_rel_err: float
    worst_index: tuple[int, ...]
    passed: bool


@dataclass
class GradCheckReport:
    """Comparison of autograd gradients against central finite differences."""

    step: float
    tolerance: float
    entries: list[GradCheckEntry] = field(default_factory=list)

    @property
    def max_abs_err(self) -> float:
        return max((e.max_abs_err for e in self.entries), default=0.0)

    @property
    def max_rel_err(self) -> float:
        return max((e.max_rel_err for e in self.entries), default=0.0)

    @property
    def passed(self) -> bool:
        return all(e.passed for e in self.entries)

    def format_table(self) -> str:
        width = max([len(e.name) for e in self.entries] + [9])
        lines = [
            f"{'parameter':<{width}}  {'max abs err':>12}  {'max rel err':>12}  result",
            "-" * (width + 42),
        ]
        for e in self.entries:
            verdict = "ok" if e.passed else "FAIL"
            lines.append(
                f"{e.name:<{width}}  {e.max_abs_err:>12.3e}  {e.max_rel_err:>12.3e}  {verdict}"
            )
        overall = "PASS" if self.passed else "FAIL"
        lines.append(
            f"{overall}: max rel err {self.max_rel_err:.3e} "
            f"(tolerance {self.tolerance:.1e}, step {self.step:.1e})"
        )
        return "\n".join(lines)


def finite_diff_check(
    f: Callable[[], Tensor],
    params: Mapping[str, Tensor] | Sequence[Tensor],
    step: float = 1e-5,
    tolerance: float = 1e-4,
) -> GradCheckReport:
    """Compare autograd against central differences for every parameter entry.

    ``f`` must rebuild the forward graph deterministically on every call.
    Relative error divides by max(|analytic|, |numeric|, 1), so near-zero
    gradients are judged by absolute error.
    """
    if step <= 0:
        raise ValueError("finite_diff_check: step must be positive")
    if isinstance(params, Mapping):
        named = list(params.items())
    else:
        named = [(f"param{i}", p) for i, p in enumerate(params)]

    tensors = [p for _, p in named]
    zero_grad(tensors)
    backward(f())
    analytic = [p.grad.copy() for p in tensors]

    report = GradCheckReport(step=step, tolerance=tolerance)
    for (name, p), ad in zip(named, analytic):
        flat = p.values.reshape(-1)
        max_abs = 0.0
        max_rel = 0.0
        worst = (0,)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            f_plus = f().item()
            flat[i] = orig - step
            f_minus = f().item()
            flat[i] = orig
            fd = (f_plus - f_minus) / (2.0 * step)
            a = float(ad.reshape(-1)[i])
            abs_err = abs(fd - a)
            rel_err = abs_err / max(abs(fd), abs(a), 1.0)
            if rel_err > max_rel:
                max_rel = rel_err
                worst = np.unravel_index(i, p.values.shape)
            max_abs = max(max_abs, abs_err)
        report.entries.append(
            GradCheckEntry(
                name=name,
                max_abs_err=max_abs,
                max_rel_err=max_rel,
                worst_index=tuple(int(j) for j in worst),
                passed=max_rel < tolerance,
            )
        )
    return report
