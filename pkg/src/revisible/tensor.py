"""Dense 4-D tensors with reverse-mode automatic differentiation.

A small define-by-run engine: every operation wraps its result in a new
:class:`Tensor` that remembers its input tensors and a closure computing
input gradients from the output gradient. :func:`backward` replays that
implicit graph in reverse topological order. The op set is exactly what a
small convolutional encoder-decoder needs: convolution, average pooling,
nearest upsampling, pointwise arithmetic, channel concatenation, batch
slicing, reductions, and an explicit gradient detach.

Storage is float32 by default. :func:`gradcheck` promotes parameters to
float64 so central finite differences at step 1e-3 are not drowned by
single-precision rounding of the loss value.
"""

from __future__ import annotations

import contextlib
import threading
from dataclasses import dataclass, field
from typing import Callable, Iterator, Mapping, Sequence

import numpy as np

from .errors import ShapeError

DEFAULT_DTYPE = np.float32

_grad_enabled = True

_scratch_store = threading.local()


def _scratch(kind: str, shape: tuple, dtype) -> np.ndarray:
    """Reusable per-thread buffer for large conv intermediates.

    Fresh multi-megabyte allocations pay page-zeroing cost on every conv;
    these buffers are fully overwritten before each use and never escape
    the op that requested them.
    """
    buffers = getattr(_scratch_store, "buffers", None)
    if buffers is None:
        buffers = _scratch_store.buffers = {}
    key = (kind, shape, np.dtype(dtype).str)
    buf = buffers.get(key)
    if buf is None:
        buf = np.empty(shape, dtype)
        buffers[key] = buf
    return buf


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording inside the block. Values are unaffected."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


class Tensor:
    """A 4-D (batch, channels, height, width) array, optionally tracked.

    ``data`` is always a 4-D numpy array; scalars produced by reductions
    use shape (1, 1, 1, 1). ``grad`` is populated on leaf tensors by
    :func:`backward` and is replaced, not accumulated, on each call.
    """

    __slots__ = ("data", "requires_grad", "grad", "op", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype if dtype is not None else DEFAULT_DTYPE)
        if arr.ndim != 4:
            raise ShapeError(f"tensor data must be 4-D (n, c, h, w), got ndim={arr.ndim}")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.op: str = "leaf"
        self._parents: tuple[Tensor, ...] = ()
        self._backward_fn: Callable[[np.ndarray], tuple[np.ndarray | None, ...]] | None = None

    @classmethod
    def _from_op(
        cls,
        data: np.ndarray,
        op: str,
        parents: tuple["Tensor", ...],
        backward_fn: Callable[[np.ndarray], tuple[np.ndarray | None, ...]],
    ) -> "Tensor":
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        if _grad_enabled and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out.op = op
            out._parents = parents
            out._backward_fn = backward_fn
        else:
            out.requires_grad = False
            out.op = op
            out._parents = ()
            out._backward_fn = None
        return out

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.data.shape  # type: ignore[return-value]

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() requires a scalar tensor, got shape {self.data.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return detach(self)

    def backward(self) -> None:
        backward(self)

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    def __rmul__(self, other):
        return scale(self, float(other))

    def __neg__(self) -> "Tensor":
        return scale(self, -1.0)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, op={self.op!r}{flag})"


def scalar(value: float, dtype=None) -> Tensor:
    """A scalar constant as a (1, 1, 1, 1) tensor."""
    return Tensor(np.full((1, 1, 1, 1), value), dtype=dtype)


def _check_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"{op}: operand shapes differ, {a.data.shape} vs {b.data.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "add")
    return Tensor._from_op(a.data + b.data, "add", (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "sub")
    return Tensor._from_op(a.data - b.data, "sub", (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise (Hadamard) product. Shapes must match exactly."""
    _check_same_shape(a, b, "mul")
    ad, bd = a.data, b.data
    return Tensor._from_op(ad * bd, "mul", (a, b), lambda g: (g * bd, g * ad))


def scale(a: Tensor, factor: float) -> Tensor:
    """Multiply by a python scalar."""
    factor = float(factor)
    return Tensor._from_op(a.data * factor, "scale", (a,), lambda g: (g * factor,))


def square(a: Tensor) -> Tensor:
    ad = a.data
    return Tensor._from_op(ad * ad, "square", (a,), lambda g: (2.0 * g * ad,))


def leaky_relu(a: Tensor, slope: float) -> Tensor:
    """x for x >= 0, slope * x otherwise. slope must lie in [0, 1)."""
    if not 0.0 <= slope < 1.0:
        raise ShapeError(f"leaky_relu slope must be in [0, 1), got {slope}")
    ad = a.data
    positive = ad >= 0
    out = np.where(positive, ad, ad * slope)

    def backward_fn(g: np.ndarray):
        return (np.where(positive, g, g * slope),)

    return Tensor._from_op(out, "leaky_relu", (a,), backward_fn)


def detach(a: Tensor) -> Tensor:
    """A value-identical tensor severed from the graph.

    The copy guarantees later in-place parameter updates cannot alias the
    detached values.
    """
    return Tensor(a.data.copy(), requires_grad=False, dtype=a.data.dtype)


def sum_all(a: Tensor) -> Tensor:
    total = np.asarray(a.data.sum(dtype=np.float64), dtype=a.data.dtype)
    out = total.reshape(1, 1, 1, 1)
    shape, dtype = a.data.shape, a.data.dtype

    def backward_fn(g: np.ndarray):
        return (np.full(shape, g.reshape(-1)[0], dtype=dtype),)

    return Tensor._from_op(out, "sum_all", (a,), backward_fn)


def mean_all(a: Tensor) -> Tensor:
    count = a.data.size
    total = np.asarray(a.data.sum(dtype=np.float64) / count, dtype=a.data.dtype)
    out = total.reshape(1, 1, 1, 1)
    shape, dtype = a.data.shape, a.data.dtype

    def backward_fn(g: np.ndarray):
        return (np.full(shape, g.reshape(-1)[0] / count, dtype=dtype),)

    return Tensor._from_op(out, "mean_all", (a,), backward_fn)


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    """Concatenate along the channel axis; a's channels come first."""
    an, ac, ah, aw = a.data.shape
    bn, bc, bh, bw = b.data.shape
    if (an, ah, aw) != (bn, bh, bw):
        raise ShapeError(
            f"concat_channels: batch/spatial dims differ, {(an, ah, aw)} vs {(bn, bh, bw)}"
        )
    out = np.concatenate([a.data, b.data], axis=1)

    def backward_fn(g: np.ndarray):
        return (g[:, :ac], g[:, ac:])

    return Tensor._from_op(out, "concat_channels", (a, b), backward_fn)


def narrow_batch(a: Tensor, start: int, length: int) -> Tensor:
    """Contiguous slice [start, start+length) along the batch axis."""
    n = a.data.shape[0]
    if not (0 <= start and start + length <= n):
        raise ShapeError(f"narrow_batch: slice [{start}, {start + length}) outside batch size {n}")
    out = a.data[start : start + length].copy()
    shape, dtype = a.data.shape, a.data.dtype

    def backward_fn(g: np.ndarray):
        gx = np.zeros(shape, dtype=dtype)
        gx[start : start + length] = g
        return (gx,)

    return Tensor._from_op(out, "narrow_batch", (a,), backward_fn)


def avg_pool2d(a: Tensor, k: int) -> Tensor:
    """Average each non-overlapping k x k block. h and w must divide by k."""
    n, c, h, w = a.data.shape
    if h % k != 0 or w % k != 0:
        raise ShapeError(f"avg_pool2d: spatial dims ({h}, {w}) not divisible by k={k}")
    blocked = a.data.reshape(n, c, h // k, k, w // k, k)
    out = blocked.mean(axis=(3, 5), dtype=np.float64).astype(a.data.dtype)
    inv = 1.0 / (k * k)

    def backward_fn(g: np.ndarray):
        gx = np.repeat(np.repeat(g, k, axis=2), k, axis=3) * inv
        return (gx.astype(a.data.dtype, copy=False),)

    return Tensor._from_op(out, "avg_pool2d", (a,), backward_fn)


def nearest_upsample(a: Tensor, factor: int) -> Tensor:
    """Replicate each pixel factor times along both spatial axes."""
    if factor < 1:
        raise ShapeError(f"nearest_upsample: factor must be >= 1, got {factor}")
    out = np.repeat(np.repeat(a.data, factor, axis=2), factor, axis=3)
    n, c, h, w = a.data.shape

    def backward_fn(g: np.ndarray):
        gx = g.reshape(n, c, h, factor, w, factor).sum(axis=(3, 5))
        return (gx.astype(a.data.dtype, copy=False),)

    return Tensor._from_op(out, "nearest_upsample", (a,), backward_fn)


def _im2col(x: np.ndarray, k: int, stride: int, padding: int):
    """Unfold k x k patches into (n, c*k*k, h_out*w_out) scratch columns.

    The returned array is a shared scratch buffer: consume it before the
    next conv call on this thread.
    """
    n, c, h, w = x.shape
    h_out = (h + 2 * padding - k) // stride + 1
    w_out = (w + 2 * padding - k) // stride + 1
    if h_out <= 0 or w_out <= 0:
        raise ShapeError(
            f"conv2d: kernel {k} with padding {padding} does not fit input spatial dims ({h}, {w})"
        )
    if padding > 0:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    col = _scratch("col", (n, c, k, k, h_out, w_out), x.dtype)
    for ki in range(k):
        hi = ki + stride * h_out
        for kj in range(k):
            wj = kj + stride * w_out
            col[:, :, ki, kj] = x[:, :, ki:hi:stride, kj:wj:stride]
    return col.reshape(n, c * k * k, h_out * w_out), h_out, w_out


def _col2im(dcol: np.ndarray, x_shape, k: int, stride: int, padding: int) -> np.ndarray:
    """Adjoint of _im2col: scatter-add columns back to image positions."""
    n, c, h, w = x_shape
    h_out = (h + 2 * padding - k) // stride + 1
    w_out = (w + 2 * padding - k) // stride + 1
    dcol = dcol.reshape(n, c, k, k, h_out, w_out)
    gx = np.zeros((n, c, h + 2 * padding, w + 2 * padding), dtype=dcol.dtype)
    for ki in range(k):
        hi = ki + stride * h_out
        for kj in range(k):
            wj = kj + stride * w_out
            gx[:, :, ki:hi:stride, kj:wj:stride] += dcol[:, :, ki, kj]
    if padding > 0:
        gx = gx[:, :, padding : padding + h, padding : padding + w]
    return gx


def conv2d(x: Tensor, weight: Tensor, bias: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation with zero padding.

    weight is (c_out, c_in, k, k) with odd square kernels; bias is
    (1, c_out, 1, 1). Output spatial dims follow the usual
    floor((dim + 2*padding - k) / stride) + 1 rule.
    """
    n, c_in, h, w = x.data.shape
    c_out, wc_in, kh, kw = weight.data.shape
    if kh != kw:
        raise ShapeError(f"conv2d: kernel must be square, got ({kh}, {kw})")
    if kh % 2 != 1:
        raise ShapeError(f"conv2d: kernel size must be odd, got {kh}")
    if wc_in != c_in:
        raise ShapeError(f"conv2d: weight expects {wc_in} input channels, input has {c_in}")
    if bias.data.shape != (1, c_out, 1, 1):
        raise ShapeError(
            f"conv2d: bias shape must be (1, {c_out}, 1, 1), got {bias.data.shape}"
        )
    if stride < 1:
        raise ShapeError(f"conv2d: stride must be >= 1, got {stride}")

    k = kh
    col, h_out, w_out = _im2col(x.data, k, stride, padding)
    w_mat = weight.data.reshape(c_out, c_in * k * k)
    # Batched GEMM: (c_out, ck2) @ (n, ck2, hw) -> (n, c_out, hw). matmul
    # avoids the transpose copies tensordot would make.
    out = np.matmul(w_mat, col).reshape(n, c_out, h_out, w_out)
    if out.dtype == np.result_type(out.dtype, bias.data.dtype):
        out += bias.data
    else:
        out = out + bias.data
    x_data = x.data

    def backward_fn(g: np.ndarray):
        g2 = g.reshape(n, c_out, h_out * w_out)
        g_bias = g.sum(axis=(0, 2, 3)).reshape(1, c_out, 1, 1)
        # Columns are recomputed into scratch: the input is alive as a graph
        # parent and the unfold is far cheaper than holding k*k copies of
        # every activation until the backward pass.
        col_b, _, _ = _im2col(x_data, k, stride, padding)
        g_weight = (
            np.matmul(g2, col_b.transpose(0, 2, 1)).sum(axis=0).reshape(weight.data.shape)
        )
        dcol = _scratch("dcol", (n, c_in * k * k, h_out * w_out), g2.dtype)
        np.matmul(w_mat.T, g2, out=dcol)
        g_x = _col2im(dcol, x_data.shape, k, stride, padding)
        return (g_x, g_weight, g_bias)

    return Tensor._from_op(out, "conv2d", (x, weight, bias), backward_fn)


def _topological_order(root: Tensor) -> list[Tensor]:
    """Children-after-parents order via iterative post-order DFS."""
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
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


def backward(
    loss: Tensor, parameters: Mapping[str, Tensor] | None = None
) -> dict[str, np.ndarray] | None:
    """Reverse-mode sweep from a scalar loss.

    Populates ``grad`` on every reachable leaf with requires_grad (replacing
    any previous value). When ``parameters`` is given, returns the gradient
    for each named entry; unreachable entries get zeros.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward requires a scalar loss, got shape {loss.data.shape}")

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    order = _topological_order(loss)
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward_fn is None:
            if node.requires_grad:
                node.grad = g
            continue
        parent_grads = node._backward_fn(g)
        for parent, pg in zip(node._parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            if id(parent) in grads:
                grads[id(parent)] = grads[id(parent)] + pg
            else:
                grads[id(parent)] = pg

    if parameters is None:
        return None
    return {
        name: (p.grad if p.grad is not None else np.zeros_like(p.data))
        for name, p in parameters.items()
    }


@dataclass
class GradCheckReport:
    """Per-parameter comparison of analytic vs central-difference gradients."""

    step: float
    tol: float
    max_rel_error: dict[str, float] = field(default_factory=dict)

    @property
    def worst(self) -> float:
        return max(self.max_rel_error.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.worst <= self.tol

    def __str__(self) -> str:
        lines = [f"gradcheck step={self.step} tol={self.tol} passed={self.passed}"]
        for name, err in sorted(self.max_rel_error.items()):
            lines.append(f"  {name}: max_rel_error={err:.3e}")
        return "\n".join(lines)


def gradcheck(
    fn: Callable[[Mapping[str, Tensor]], Tensor],
    params: Mapping[str, Tensor],
    step: float = 1e-3,
    tol: float = 1e-3,
) -> GradCheckReport:
    """Compare analytic gradients of ``fn`` against central differences.

    ``fn`` rebuilds the loss from the given parameter map on every call.
    Parameters are promoted to float64 so the finite differences resolve.
    Detached branches inside ``fn`` must be frozen by the caller (captured
    once outside the closure): the numeric side differentiates whatever
    ``fn`` computes, so a detached value that is re-derived from the
    parameters would register numeric sensitivity the analytic side
    rightly reports as zero.
    """
    if step <= 0:
        raise ShapeError(f"gradcheck step must be positive, got {step}")

    p64 = {
        name: Tensor(t.data.astype(np.float64), requires_grad=True, dtype=np.float64)
        for name, t in params.items()
    }
    loss = fn(p64)
    analytic = backward(loss, p64)
    assert analytic is not None

    report = GradCheckReport(step=step, tol=tol)
    for name, t in p64.items():
        flat = t.data.reshape(-1)
        a_flat = analytic[name].reshape(-1)
        worst = 0.0
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + step
            loss_plus = fn(p64).item()
            flat[i] = original - step
            loss_minus = fn(p64).item()
            flat[i] = original
            numeric = (loss_plus - loss_minus) / (2.0 * step)
            denom = max(abs(a_flat[i]), abs(numeric), 1e-6)
            worst = max(worst, abs(a_flat[i] - numeric) / denom)
        report.max_rel_error[name] = worst
    return report
