"""Dense float64 tensors with reverse-mode automatic differentiation.

Gradients are recorded on an explicit tape: every primitive executed while a
Tape is active appends one node, and ``Tape.backward`` replays the nodes in
reverse order, accumulating gradients additively into every tensor reached.
Forward execution order is already topological, so the reverse sweep visits
each node exactly once and is bitwise deterministic. With no active tape the
same primitives run forward-only, which is how inference-time decoding stays
cheap.

Shape rules are strict: elementwise primitives accept exactly-matching shapes
or a scalar on one side, nothing else. ``relu`` uses subgradient 0 at 0;
``minimum``/``maximum`` give the tie subgradient to their first argument.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "ShapeError",
    "DegenerateDistributionError",
    "DeterminismError",
    "GradCheckReport",
    "matmul",
    "add",
    "sub",
    "mul",
    "sigmoid",
    "tanh",
    "relu",
    "minimum",
    "maximum",
    "softmax",
    "log",
    "sum_all",
    "concat",
    "reshape",
    "transpose",
    "slice_cols",
    "gather_rows",
    "scatter_rows_sum",
    "add_rowvec",
    "outer",
    "pick",
    "scatter_sum_vec",
    "clip",
    "zero_grads",
    "grad_check",
]


class ShapeError(ValueError):
    """Operand shapes do not satisfy a primitive's contract."""


class DegenerateDistributionError(ValueError):
    """softmax was asked to normalize over an empty support."""


class DeterminismError(RuntimeError):
    """A function assumed deterministic returned two different values."""


class Tensor:
    """A dense float64 array, optionally participating in gradient tracking.

    ``data`` is always a contiguous float64 ndarray (row-major). ``grad`` is
    lazily allocated during backward and has the same shape as ``data``.
    """

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        # asarray keeps 0-d scalars 0-d; ascontiguousarray would promote them
        self.data = np.asarray(data, dtype=np.float64, order="C")
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # operator sugar; all dispatch to the module-level primitives
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

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def sum(self):
        return sum_all(self)

    def reshape(self, shape: Sequence[int]):
        return reshape(self, shape)


class _Node:
    __slots__ = ("op", "out", "backward")

    def __init__(self, op: str, out: Tensor, backward: Callable[[np.ndarray], None]):
        self.op = op
        self.out = out
        self.backward = backward


_TAPE_STACK: list["Tape"] = []


class Tape:
    """Ordered record of primitives; reverse replay is backpropagation.

    Use as a context manager around the forward pass, then call
    ``backward(loss)`` once. Calling backward twice without re-running the
    forward pass double-accumulates into ``.grad``; zero grads between steps.
    """

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, *exc) -> bool:
        _TAPE_STACK.pop()
        return False

    def backward(self, loss: Tensor) -> None:
        if loss.data.shape != ():
            raise ValueError(
                f"backward requires a scalar loss, got shape {loss.data.shape}"
            )
        recorded = any(node.out is loss for node in self.nodes)
        if not recorded and not loss.requires_grad:
            raise ValueError("loss tensor is not connected to this tape")
        _accumulate(loss, np.ones((), dtype=np.float64))
        for node in reversed(self.nodes):
            grad = node.out.grad
            if grad is None:
                continue
            node.backward(grad)


def _active_tape() -> Tape | None:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def _record(op: str, out: Tensor, backward: Callable[[np.ndarray], None]) -> None:
    tape = _active_tape()
    if tape is not None and out.requires_grad:
        tape.nodes.append(_Node(op, out, backward))


def _accumulate(t: Tensor, grad: np.ndarray) -> None:
    if t.grad is None:
        t.grad = np.array(grad, dtype=np.float64, copy=True)
    else:
        t.grad += grad


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


def zero_grads(tensors: Iterable[Tensor]) -> None:
    for t in tensors:
        t.zero_grad()


# ---------------------------------------------------------------------------
# primitives


def matmul(a, b) -> Tensor:
    """2-D matrix product with sequential accumulation over the inner axis.

    The forward pass sums rank-1 terms in ascending k order, which makes the
    result bitwise identical to a naive triple loop (BLAS reorders the sum).
    The backward pass has no such obligation and uses fast matrix products.
    """
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} x {b.shape}")
    av, bv = a.data, b.data
    inner = av.shape[1]
    if inner == 0:
        out_data = np.zeros((av.shape[0], bv.shape[1]))
    elif av.shape[0] == 1:
        # add.accumulate is a strict left fold, same association as the loop
        out_data = np.add.accumulate(av[0, :, None] * bv, axis=0)[-1:].copy()
    else:
        out_data = av[:, 0, None] * bv[0]
        tmp = np.empty_like(out_data)
        for k in range(1, inner):
            np.multiply(av[:, k, None], bv[k], out=tmp)
            out_data += tmp
    out = Tensor(out_data, a.requires_grad or b.requires_grad)

    def backward(g: np.ndarray) -> None:
        if a.requires_grad:
            _accumulate(a, g @ b.data.T)
        if b.requires_grad:
            _accumulate(b, a.data.T @ g)

    _record("matmul", out, backward)
    return out


def _binary_shapes(a: Tensor, b: Tensor, op: str) -> None:
    # exact-shape or scalar broadcast only; anything else is a silent-bug trap
    if a.shape != b.shape and a.shape != () and b.shape != ():
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


def _reduce_to(shape: tuple[int, ...], g: np.ndarray) -> np.ndarray:
    # undo scalar broadcast on the backward path
    if shape == () and g.shape != ():
        return g.sum()
    return g


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _binary_shapes(a, b, "add")
    out = Tensor(a.data + b.data, a.requires_grad or b.requires_grad)

    def backward(g: np.ndarray) -> None:
        if a.requires_grad:
            _accumulate(a, _reduce_to(a.shape, g))
        if b.requires_grad:
            _accumulate(b, _reduce_to(b.shape, g))

    _record("add", out, backward)
    return out


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _binary_shapes(a, b, "sub")
    out = Tensor(a.data - b.data, a.requires_grad or b.requires_grad)

    def backward(g: np.ndarray) -> None:
        if a.requires_grad:
            _accumulate(a, _reduce_to(a.shape, g))
        if b.requires_grad:
            _accumulate(b, _reduce_to(b.shape, -g))

    _record("sub", out, backward)
    return out


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _binary_shapes(a, b, "mul")
    out = Tensor(a.data * b.data, a.requires_grad or b.requires_grad)

    def backward(g: np.ndarray) -> None:
        if a.requires_grad:
            _accumulate(a, _reduce_to(a.shape, g * b.data))
        if b.requires_grad:
            _accumulate(b, _reduce_to(b.shape, g * a.data))

    _record("mul", out, backward)
    return out


def sigmoid(x) -> Tensor:
    x = _as_tensor(x)
    # piecewise form never exponentiates a positive argument, so no overflow
    pos = x.data >= 0
    y = np.empty_like(x.data)
    y[pos] = 1.0 / (1.0 + np.exp(-x.data[pos]))
    ex = np.exp(x.data[~pos])
    y[~pos] = ex / (1.0 + ex)
    out = Tensor(y, x.requires_grad)

    def backward(g: np.ndarray) -> None:
        _accumulate(x, g * y * (1.0 - y))

    _record("sigmoid", out, backward)
    return out


def tanh(x) -> Tensor:
    x = _as_tensor(x)
    y = np.tanh(x.data)
    out = Tensor(y, x.requires_grad)

    def backward(g: np.ndarray) -> None:
        _accumulate(x, g * (1.0 - y * y))

    _record("tanh", out, backward)
    return out


def relu(x) -> Tensor:
    x = _as_tensor(x)
    out = Tensor(np.maximum(x.data, 0.0), x.requires_grad)
    mask = x.data > 0  # subgradient 0 at exactly 0

    def backward(g: np.ndarray) -> None:
        _accumulate(x, g * mask)

    _record("relu", out, backward)
    return out


def minimum(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _binary_shapes(a, b, "minimum")
    out = Tensor(np.minimum(a.data, b.data), a.requires_grad or b.requires_grad)
    take_a = a.data <= b.data  # ties go to the first argument

    def backward(g: np.ndarray) -> None:
        if a.requires_grad:
            _accumulate(a, _reduce_to(a.shape, g * take_a))
        if b.requires_grad:
            _accumulate(b, _reduce_to(b.shape, g * ~take_a))

    _record("minimum", out, backward)
    return out


def maximum(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _binary_shapes(a, b, "maximum")
    out = Tensor(np.maximum(a.data, b.data), a.requires_grad or b.requires_grad)
    take_a = a.data >= b.data

    def backward(g: np.ndarray) -> None:
        if a.requires_grad:
            _accumulate(a, _reduce_to(a.shape, g * take_a))
        if b.requires_grad:
            _accumulate(b, _reduce_to(b.shape, g * ~take_a))

    _record("maximum", out, backward)
    return out


def softmax(x, mask=None) -> Tensor:
    """Normalized exponential over a vector, max-subtracted for stability.

    ``mask`` is an optional boolean array; masked-out positions get exactly
    zero probability and zero gradient. Raises if nothing remains unmasked.
    """
    x = _as_tensor(x)
    if x.data.ndim != 1 or x.data.size == 0:
        raise ShapeError(f"softmax expects a nonempty vector, got shape {x.shape}")
    if mask is not None:
        keep = np.asarray(mask, dtype=bool)
        if keep.shape != x.shape:
            raise ShapeError(f"softmax mask shape {keep.shape} != input {x.shape}")
        if not keep.any():
            raise DegenerateDistributionError("softmax: all positions masked")
    else:
        keep = None

    y = np.zeros_like(x.data)
    if keep is None:
        z = np.exp(x.data - x.data.max())
        y[:] = z / z.sum()
    else:
        sub_x = x.data[keep]
        z = np.exp(sub_x - sub_x.max())
        y[keep] = z / z.sum()
    out = Tensor(y, x.requires_grad)

    def backward(g: np.ndarray) -> None:
        # dx_i = y_i * (g_i - <g, y>); zero automatically where y is zero
        _accumulate(x, y * (g - np.dot(g, y)))

    _record("softmax", out, backward)
    return out


def log(x) -> Tensor:
    """Natural logarithm; the caller guarantees positive inputs."""
    x = _as_tensor(x)
    out = Tensor(np.log(x.data), x.requires_grad)

    def backward(g: np.ndarray) -> None:
        _accumulate(x, g / x.data)

    _record("log", out, backward)
    return out


def sum_all(x) -> Tensor:
    x = _as_tensor(x)
    out = Tensor(x.data.sum(), x.requires_grad)

    def backward(g: np.ndarray) -> None:
        _accumulate(x, np.broadcast_to(g, x.shape))

    _record("sum_all", out, backward)
    return out


def concat(parts: Sequence, axis: int = 0) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    if not parts:
        raise ShapeError("concat of zero tensors")
    out = Tensor(
        np.concatenate([p.data for p in parts], axis=axis),
        any(p.requires_grad for p in parts),
    )
    sizes = [p.data.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def backward(g: np.ndarray) -> None:
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if p.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                _accumulate(p, g[tuple(idx)])

    _record("concat", out, backward)
    return out


def reshape(x, shape: Sequence[int]) -> Tensor:
    x = _as_tensor(x)
    out = Tensor(x.data.reshape(shape), x.requires_grad)

    def backward(g: np.ndarray) -> None:
        _accumulate(x, g.reshape(x.shape))

    _record("reshape", out, backward)
    return out


def transpose(x) -> Tensor:
    x = _as_tensor(x)
    if x.data.ndim != 2:
        raise ShapeError(f"transpose expects a matrix, got shape {x.shape}")
    out = Tensor(x.data.T, x.requires_grad)

    def backward(g: np.ndarray) -> None:
        _accumulate(x, g.T)

    _record("transpose", out, backward)
    return out


def slice_cols(x, lo: int, hi: int) -> Tensor:
    x = _as_tensor(x)
    if x.data.ndim != 2 or not (0 <= lo <= hi <= x.shape[1]):
        raise ShapeError(f"slice_cols [{lo}:{hi}] invalid for shape {x.shape}")
    out = Tensor(x.data[:, lo:hi], x.requires_grad)

    def backward(g: np.ndarray) -> None:
        full = np.zeros(x.shape)
        full[:, lo:hi] = g
        _accumulate(x, full)

    _record("slice_cols", out, backward)
    return out


def gather_rows(x, indices) -> Tensor:
    """Select rows of a matrix by integer index (rows may repeat)."""
    x = _as_tensor(x)
    idx = np.asarray(indices, dtype=np.intp)
    if x.data.ndim != 2:
        raise ShapeError(f"gather_rows expects a matrix, got shape {x.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= x.shape[0]):
        raise IndexError(
            f"gather_rows: index out of range for {x.shape[0]} rows"
        )
    out = Tensor(x.data[idx], x.requires_grad)

    def backward(g: np.ndarray) -> None:
        dx = np.zeros(x.shape)
        np.add.at(dx, idx, g)
        _accumulate(x, dx)

    _record("gather_rows", out, backward)
    return out


def scatter_rows_sum(x, src_idx, dst_idx, n_out: int) -> Tensor:
    """out[dst_idx[k]] += x[src_idx[k]] for every k; out has ``n_out`` rows."""
    x = _as_tensor(x)
    src = np.asarray(src_idx, dtype=np.intp)
    dst = np.asarray(dst_idx, dtype=np.intp)
    if src.shape != dst.shape:
        raise ShapeError(
            f"scatter_rows_sum: index lengths differ {src.shape} vs {dst.shape}"
        )
    out_data = np.zeros((n_out, x.shape[1]))
    np.add.at(out_data, dst, x.data[src])
    out = Tensor(out_data, x.requires_grad)

    def backward(g: np.ndarray) -> None:
        dx = np.zeros(x.shape)
        np.add.at(dx, src, g[dst])
        _accumulate(x, dx)

    _record("scatter_rows_sum", out, backward)
    return out


def add_rowvec(m, v) -> Tensor:
    """Add a length-d vector to every row of an n-by-d matrix."""
    m, v = _as_tensor(m), _as_tensor(v)
    if m.data.ndim != 2 or v.data.ndim != 1 or m.shape[1] != v.shape[0]:
        raise ShapeError(f"add_rowvec: incompatible shapes {m.shape} and {v.shape}")
    out = Tensor(m.data + v.data[None, :], m.requires_grad or v.requires_grad)

    def backward(g: np.ndarray) -> None:
        if m.requires_grad:
            _accumulate(m, g)
        if v.requires_grad:
            _accumulate(v, g.sum(axis=0))

    _record("add_rowvec", out, backward)
    return out


def outer(u, v) -> Tensor:
    """Outer product of two vectors: out[i, j] = u[i] * v[j]."""
    u, v = _as_tensor(u), _as_tensor(v)
    if u.data.ndim != 1 or v.data.ndim != 1:
        raise ShapeError(f"outer expects vectors, got {u.shape} and {v.shape}")
    out = Tensor(np.outer(u.data, v.data), u.requires_grad or v.requires_grad)

    def backward(g: np.ndarray) -> None:
        if u.requires_grad:
            _accumulate(u, g @ v.data)
        if v.requires_grad:
            _accumulate(v, g.T @ u.data)

    _record("outer", out, backward)
    return out


def pick(x, index: int) -> Tensor:
    """Extract one element of a vector as a scalar tensor."""
    x = _as_tensor(x)
    if x.data.ndim != 1:
        raise ShapeError(f"pick expects a vector, got shape {x.shape}")
    if not 0 <= index < x.shape[0]:
        raise IndexError(f"pick: index {index} out of range for length {x.shape[0]}")
    out = Tensor(x.data[index], x.requires_grad)

    def backward(g: np.ndarray) -> None:
        dx = np.zeros(x.shape)
        dx[index] = g
        _accumulate(x, dx)

    _record("pick", out, backward)
    return out


def scatter_sum_vec(values, indices, size: int) -> Tensor:
    """out[indices[k]] += values[k]; duplicate indices accumulate."""
    values = _as_tensor(values)
    idx = np.asarray(indices, dtype=np.intp)
    if values.data.ndim != 1 or idx.shape != values.shape:
        raise ShapeError(
            f"scatter_sum_vec: values {values.shape} vs indices {idx.shape}"
        )
    out_data = np.zeros(size)
    np.add.at(out_data, idx, values.data)
    out = Tensor(out_data, values.requires_grad)

    def backward(g: np.ndarray) -> None:
        _accumulate(values, g[idx])

    _record("scatter_sum_vec", out, backward)
    return out


def clip(x, lo: float, hi: float) -> Tensor:
    """Clamp values to [lo, hi]; gradient passes only where unclipped."""
    x = _as_tensor(x)
    out = Tensor(np.clip(x.data, lo, hi), x.requires_grad)
    inside = (x.data >= lo) & (x.data <= hi)

    def backward(g: np.ndarray) -> None:
        _accumulate(x, g * inside)

    _record("clip", out, backward)
    return out


# ---------------------------------------------------------------------------
# finite-difference verification


@dataclass
class GradCheckEntry:
    path: str
    index: int
    analytic: float
    numeric: float
    rel_err: float


@dataclass
class GradCheckReport:
    """Per-parameter comparison of analytic gradients to central differences."""

    tol: float
    max_rel_err: float
    per_param: dict[str, float]
    failures: list[GradCheckEntry] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures

    def __str__(self) -> str:
        lines = [f"grad check: max rel err {self.max_rel_err:.3e} (tol {self.tol:g})"]
        for path, err in self.per_param.items():
            lines.append(f"  {path}: {err:.3e}")
        for f in self.failures:
            lines.append(
                f"  FAIL {f.path}[{f.index}]: analytic {f.analytic:.6e} "
                f"vs numeric {f.numeric:.6e} (rel {f.rel_err:.3e})"
            )
        return "\n".join(lines)


def _rel_err(a: float, n: float, floor: float) -> float:
    return abs(a - n) / max(abs(a), abs(n), floor)


def grad_check(
    f: Callable[[Mapping[str, Tensor]], Tensor],
    params: Mapping[str, Tensor],
    eps: float = 1e-5,
    tol: float = 1e-4,
    scale_floor: float = 1e-6,
) -> GradCheckReport:
    """Compare analytic gradients of ``f(params)`` against central differences.

    ``f`` must be deterministic (verified by evaluating it twice) and return a
    scalar tensor built from the tensors in ``params``. Each scalar entry is
    perturbed by +/- ``eps`` in place; relative errors use a ``scale_floor``
    denominator guard so near-zero gradient pairs do not divide by zero.
    """
    v1 = float(f(params).data)
    v2 = float(f(params).data)
    if v1 != v2:
        raise DeterminismError(
            f"grad_check: two evaluations disagree ({v1!r} vs {v2!r})"
        )

    zero_grads(params.values())
    with Tape() as tape:
        loss = f(params)
        tape.backward(loss)

    per_param: dict[str, float] = {}
    failures: list[GradCheckEntry] = []
    max_err = 0.0
    for path, tensor in params.items():
        analytic = tensor.grad if tensor.grad is not None else np.zeros(tensor.shape)
        analytic = analytic.ravel()
        flat = tensor.data.ravel()
        worst = 0.0
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + eps
            f_plus = float(f(params).data)
            flat[k] = orig - eps
            f_minus = float(f(params).data)
            flat[k] = orig
            numeric = (f_plus - f_minus) / (2.0 * eps)
            err = _rel_err(float(analytic[k]), numeric, scale_floor)
            if err > worst:
                worst = err
            if err > tol:
                failures.append(
                    GradCheckEntry(path, k, float(analytic[k]), numeric, err)
                )
        per_param[path] = worst
        max_err = max(max_err, worst)
    return GradCheckReport(tol=tol, max_rel_err=max_err, per_param=per_param, failures=failures)
