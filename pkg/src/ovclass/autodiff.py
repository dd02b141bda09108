"""Reverse-mode automatic differentiation over dense numpy arrays.

The primitive set is exactly what the aggregator/loss graph needs: matrix
product, addition, elementwise arithmetic, layer normalization, softmax,
GELU, L2 normalization, reductions, and the structural ops (concat, slice,
transpose, diagonal) required to assemble attention blocks and batched
contrastive losses. Every primitive validates shapes before computing and
checks its result for non-finite values, naming itself on failure.

Two precision modes are supported: float32 for training, float64 for
finite-difference gradient checks.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import erf

from .errors import DegenerateInputError, NonFiniteError, ShapeError

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)

_ALLOWED_DTYPES = (np.float32, np.float64)


def _as_array(data, dtype=None) -> np.ndarray:
    arr = np.asarray(data)
    if dtype is not None:
        return arr.astype(dtype, copy=False)
    if arr.dtype not in _ALLOWED_DTYPES:
        return arr.astype(np.float32)
    return arr


def _check_finite(arr: np.ndarray, op: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(op)


class Tensor:
    """A dense array plus the tape entry needed for reverse-mode gradients.

    ``requires_grad`` marks leaves whose gradient should be accumulated;
    interior nodes inherit it from their parents. ``backward`` may only be
    called on scalar tensors.
    """

    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, *, op: str = "leaf",
                 parents: tuple = (), backward: Callable | None = None,
                 _validate: bool = True):
        self.data = _as_array(data)
        if _validate:
            _check_finite(self.data, op)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.op = op
        self._parents = parents
        self._backward = backward

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy(), requires_grad=False)

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def backward(self) -> None:
        if self.data.size != 1:
            raise ShapeError(f"backward requires a scalar loss, got shape {self.shape}")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op!r}, requires_grad={self.requires_grad})"


def constant(data, dtype=None) -> Tensor:
    """A leaf tensor that never receives gradients."""
    return Tensor(_as_array(data, dtype), requires_grad=False)


def _result(data, op: str, parents: Sequence[Tensor], backward) -> Tensor:
    requires = any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=requires, op=op,
                 parents=tuple(parents) if requires else (),
                 backward=backward if requires else None)
    return out


# ---------------------------------------------------------------------------
# arithmetic primitives
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    out_data = a.data @ b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(g @ b.data.T)
        if b.requires_grad:
            b._accumulate(a.data.T @ g)

    return _result(out_data, "matmul", (a, b), backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise addition; one operand may be a broadcastable bias: a row
    vector ``(n,)``, a column ``(m, 1)``, or a scalar."""
    bs, as_ = b.shape, a.shape

    def compatible(main: tuple, other: tuple) -> bool:
        if len(main) != 2:
            return False
        return other in ((main[1],), (main[0], 1), (1, main[1]))

    if not (as_ == bs or compatible(as_, bs) or compatible(bs, as_)
            or b.data.size == 1 or a.data.size == 1):
        raise ShapeError(f"add cannot combine shapes {as_} and {bs}")
    out_data = a.data + b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_reduce_to_shape(g, a.shape))
        if b.requires_grad:
            b._accumulate(_reduce_to_shape(g, b.shape))

    return _result(out_data, "add", (a, b), backward)


def _reduce_to_shape(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    out = g
    while out.ndim > len(shape):
        out = out.sum(axis=0)
    for axis, size in enumerate(shape):
        if out.shape[axis] != size:
            out = out.sum(axis=axis, keepdims=True)
    return out.reshape(shape)


def sub(a: Tensor, b: Tensor) -> Tensor:
    return add(a, scale(b, -1.0))


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product of same-shape tensors (or with a scalar tensor)."""
    if not (a.shape == b.shape or a.data.size == 1 or b.data.size == 1):
        raise ShapeError(f"mul cannot combine shapes {a.shape} and {b.shape}")
    out_data = a.data * b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_reduce_to_shape(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_reduce_to_shape(g * a.data, b.shape))

    return _result(out_data, "mul", (a, b), backward)


def scale(a: Tensor, factor: float) -> Tensor:
    out_data = a.data * factor

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * factor)

    return _result(out_data, "scale", (a,), backward)


def exp(a: Tensor) -> Tensor:
    with np.errstate(over="ignore", under="ignore"):
        out_data = np.exp(a.data)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * out_data)

    return _result(out_data, "exp", (a,), backward)


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0):
        raise NonFiniteError("log", "non-positive argument")
    out_data = np.log(a.data)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g / a.data)

    return _result(out_data, "log", (a,), backward)


def tsum(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if a.requires_grad:
            if axis is None:
                a._accumulate(np.broadcast_to(g, a.shape).copy())
            else:
                gg = g if keepdims else np.expand_dims(g, axis)
                a._accumulate(np.broadcast_to(gg, a.shape).copy())

    return _result(out_data, "sum", (a,), backward)


def tmean(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    n = a.data.size if axis is None else a.shape[axis]
    return scale(tsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


# ---------------------------------------------------------------------------
# structural primitives
# ---------------------------------------------------------------------------

def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise ShapeError("concat of an empty sequence")
    ndim = tensors[0].data.ndim
    for t in tensors:
        if t.data.ndim != ndim:
            raise ShapeError("concat operands must share rank")
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, start, stop in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                index = [slice(None)] * ndim
                index[axis] = slice(start, stop)
                t._accumulate(g[tuple(index)])

    return _result(out_data, "concat", tuple(tensors), backward)


def rows(a: Tensor, start: int, stop: int) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError("rows expects a 2-D tensor")
    out_data = a.data[start:stop]

    def backward(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            full[start:stop] = g
            a._accumulate(full)

    return _result(out_data, "rows", (a,), backward)


def cols(a: Tensor, start: int, stop: int) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError("cols expects a 2-D tensor")
    out_data = a.data[:, start:stop]

    def backward(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            full[:, start:stop] = g
            a._accumulate(full)

    return _result(out_data, "cols", (a,), backward)


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError("transpose expects a 2-D tensor")
    out_data = a.data.T.copy()

    def backward(g):
        if a.requires_grad:
            a._accumulate(g.T)

    return _result(out_data, "transpose", (a,), backward)


def diagonal(a: Tensor) -> Tensor:
    """Extract the main diagonal of a square matrix as a column (n, 1)."""
    if a.data.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError(f"diagonal expects a square matrix, got {a.shape}")
    out_data = np.diag(a.data).reshape(-1, 1).copy()

    def backward(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            np.fill_diagonal(full, g[:, 0])
            a._accumulate(full)

    return _result(out_data, "diagonal", (a,), backward)


def detached_max(a: Tensor, axis: int, keepdims: bool = True) -> Tensor:
    """Row/column maximum treated as a constant (for stable log-sum-exp)."""
    return constant(a.data.max(axis=axis, keepdims=keepdims))


# ---------------------------------------------------------------------------
# neural-network primitives
# ---------------------------------------------------------------------------

def layer_norm(x: Tensor, gain: Tensor, shift: Tensor, eps: float = 1e-5) -> Tensor:
    """Row-wise layer normalization over the last axis: affine((x-mu)/sigma)."""
    if x.data.ndim != 2:
        raise ShapeError("layer_norm expects a 2-D tensor")
    d = x.shape[1]
    if gain.shape != (d,) or shift.shape != (d,):
        raise ShapeError(f"layer_norm affine parameters must have shape ({d},)")
    mu = x.data.mean(axis=1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=1, keepdims=True)
    inv_sigma = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_sigma
    out_data = xhat * gain.data + shift.data

    def backward(g):
        if shift.requires_grad:
            shift._accumulate(g.sum(axis=0))
        if gain.requires_grad:
            gain._accumulate((g * xhat).sum(axis=0))
        if x.requires_grad:
            gh = g * gain.data
            mean_gh = gh.mean(axis=1, keepdims=True)
            mean_gh_xhat = (gh * xhat).mean(axis=1, keepdims=True)
            x._accumulate((gh - mean_gh - xhat * mean_gh_xhat) * inv_sigma)

    return _result(out_data, "layer_norm", (x, gain, shift), backward)


def softmax(x: Tensor) -> Tensor:
    """Row-wise softmax with max-subtraction for stability."""
    if x.data.ndim != 2:
        raise ShapeError("softmax expects a 2-D tensor")
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=1, keepdims=True)

    def backward(g):
        if x.requires_grad:
            dot = (g * out_data).sum(axis=1, keepdims=True)
            x._accumulate(out_data * (g - dot))

    return _result(out_data, "softmax", (x,), backward)


def gelu(x: Tensor) -> Tensor:
    """Exact (erf-based) Gaussian error linear unit."""
    cdf = 0.5 * (1.0 + erf(x.data * _INV_SQRT2))
    out_data = x.data * cdf

    def backward(g):
        if x.requires_grad:
            pdf = np.exp(-0.5 * x.data * x.data) * _INV_SQRT_2PI
            x._accumulate(g * (cdf + x.data * pdf))

    return _result(out_data, "gelu", (x,), backward)


def l2_normalize(x: Tensor) -> Tensor:
    """Normalize each row (or a 1-D vector) to unit Euclidean norm."""
    vector = x.data.ndim == 1
    data = x.data.reshape(1, -1) if vector else x.data
    if data.ndim != 2:
        raise ShapeError("l2_normalize expects a 1-D or 2-D tensor")
    norms = np.sqrt((data * data).sum(axis=1, keepdims=True))
    if np.any(norms == 0.0):
        raise DegenerateInputError("l2_normalize received a zero vector")
    y = data / norms
    out_data = y[0] if vector else y

    def backward(g):
        if x.requires_grad:
            gm = g.reshape(1, -1) if vector else g
            dot = (gm * y).sum(axis=1, keepdims=True)
            gx = (gm - y * dot) / norms
            x._accumulate(gx[0] if vector else gx)

    return _result(out_data, "l2_normalize", (x,), backward)


def logsumexp_rows(x: Tensor) -> Tensor:
    """Stable row-wise log-sum-exp, shape (n, m) -> (n, 1).

    The row maximum is detached, which leaves gradients exact.
    """
    m = detached_max(x, axis=1, keepdims=True)
    shifted = add(x, scale(m, -1.0))
    summed = tsum(exp(shifted), axis=1, keepdims=True)
    return add(log(summed), m)


# ---------------------------------------------------------------------------
# parameter collections and gradient evaluation
# ---------------------------------------------------------------------------

class ParamSet:
    """Ordered map from unique names to trainable tensors.

    Iteration order is insertion order, which also fixes the serialization
    order of checkpoints and the draw order of initializers.
    """

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, array: np.ndarray) -> Tensor:
        if name in self._params:
            raise ShapeError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(array, copy=True), requires_grad=True)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def items(self) -> Iterable[tuple[str, Tensor]]:
        return self._params.items()

    def n_values(self) -> int:
        return sum(t.data.size for t in self._params.values())

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None

    def gradients(self) -> dict[str, np.ndarray]:
        out = {}
        for name, t in self._params.items():
            out[name] = np.zeros_like(t.data) if t.grad is None else t.grad
        return out

    def astype(self, dtype) -> "ParamSet":
        clone = ParamSet()
        for name, t in self._params.items():
            clone.add(name, t.data.astype(dtype))
        return clone

    def copy(self) -> "ParamSet":
        clone = ParamSet()
        for name, t in self._params.items():
            clone.add(name, t.data)
        return clone

    def load_values(self, values: dict[str, np.ndarray]) -> None:
        for name, t in self._params.items():
            if name not in values:
                raise ShapeError(f"missing value for parameter {name!r}")
            arr = np.asarray(values[name], dtype=t.data.dtype)
            if arr.shape != t.data.shape:
                raise ShapeError(f"parameter {name!r} shape {arr.shape} != {t.data.shape}")
            t.data = arr.copy()


def evaluate_with_gradients(fn: Callable[[ParamSet], Tensor],
                            params: ParamSet) -> tuple[float, dict[str, np.ndarray]]:
    """Run ``fn`` to a scalar loss and return (loss, gradient per parameter).

    Parameters not reached by the loss get exact zero gradients.
    """
    params.zero_grad()
    loss = fn(params)
    if not isinstance(loss, Tensor):
        raise ShapeError("loss function must return a Tensor")
    if loss.data.size != 1:
        raise ShapeError(f"loss must be scalar, got shape {loss.shape}")
    loss.backward()
    return loss.item(), params.gradients()


def finite_diff_gradient(fn: Callable[[ParamSet], Tensor], params: ParamSet,
                         epsilon: float = 1e-5) -> dict[str, np.ndarray]:
    """Central-difference gradient estimate, coordinate by coordinate.

    Requires 64-bit parameters; differences in float32 are dominated by
    rounding noise.
    """
    if epsilon <= 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    for name, t in params.items():
        if t.data.dtype != np.float64:
            raise ValueError(f"finite differences need float64 parameters ({name} is {t.data.dtype})")

    def loss_value() -> float:
        out = fn(params)
        return float(out.data.reshape(-1)[0])

    grads: dict[str, np.ndarray] = {}
    for name, t in params.items():
        flat = t.data.reshape(-1)
        g = np.zeros_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + epsilon
            up = loss_value()
            flat[i] = orig - epsilon
            down = loss_value()
            flat[i] = orig
            g[i] = (up - down) / (2.0 * epsilon)
        grads[name] = g.reshape(t.data.shape)
    return grads
