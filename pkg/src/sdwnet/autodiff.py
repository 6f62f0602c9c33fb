"""Dense tensors with tape-based reverse-mode differentiation.

Operations run eagerly on numpy arrays. When a :class:`Tape` is active and at
least one input requires a gradient, the operation appends a node holding its
backward closure to the tape. :func:`backward` replays the tape in reverse.

Without an active tape nothing is recorded, which is how inference runs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

DTYPES = {"single": np.float32, "double": np.float64}


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible.

    ``axes`` names the offending axes so callers can report them.
    """

    def __init__(self, message: str, axes: Sequence[str] = ()):
        super().__init__(message)
        self.axes = tuple(axes)


class Tensor:
    """An n-d array, usually 4-d in (n, c, h, w) order."""

    __slots__ = ("data", "requires_grad", "grad", "name", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.data).all())

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag})"

    def __add__(self, other):
        return add(self, other) if isinstance(other, Tensor) else add_scalar(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other) if isinstance(other, Tensor) else add_scalar(self, -other)

    def __rsub__(self, other):
        return add_scalar(mul_scalar(self, -1.0), other)

    def __mul__(self, other):
        return mul(self, other) if isinstance(other, Tensor) else mul_scalar(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other) if isinstance(other, Tensor) else mul_scalar(self, 1.0 / other)

    def __neg__(self):
        return mul_scalar(self, -1.0)


class Parameter(Tensor):
    """A learnable tensor. Its ``grad`` buffer always exists."""

    __slots__ = ()

    def __init__(self, data, name: str = ""):
        super().__init__(data, requires_grad=True, name=name)
        self.grad = np.zeros_like(self.data)


@dataclass
class Node:
    output: Tensor
    inputs: tuple[Tensor, ...]
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]
    op: str


class Tape:
    """Ordered record of differentiable operations.

    Use as a context manager; operations executed inside it are recorded in
    execution order, which is a valid topological order.
    """

    _stack: list["Tape"] = []

    def __init__(self):
        self.nodes: list[Node] = []

    def __enter__(self) -> "Tape":
        Tape._stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        Tape._stack.pop()

    def __len__(self) -> int:
        return len(self.nodes)

    @classmethod
    def active(cls) -> "Tape | None":
        return cls._stack[-1] if cls._stack else None


def _record(out_data: np.ndarray, inputs: Sequence[Tensor], backward_fn, op: str) -> Tensor:
    out = Tensor(out_data)
    tape = Tape.active()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.nodes.append(Node(out, tuple(inputs), backward_fn, op))
    return out


def backward(loss: Tensor, tape: Tape) -> dict[Tensor, np.ndarray]:
    """Propagate d(loss)/d(.) through ``tape``.

    Leaf tensors that require gradients (parameters included) get their
    ``grad`` buffer incremented, so repeated calls accumulate. Returns a map
    from every such leaf reached to the gradient computed by this call.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    produced = {id(node.output) for node in tape.nodes}
    leaves: dict[int, Tensor] = {}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node.output), None)
        if g is None:
            continue
        in_grads = node.backward(g)
        for inp, gi in zip(node.inputs, in_grads):
            if gi is None or not inp.requires_grad:
                continue
            key = id(inp)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi
            if key not in produced:
                leaves[key] = inp
    if id(loss) not in produced and loss.requires_grad:
        leaves[id(loss)] = loss
    result: dict[Tensor, np.ndarray] = {}
    for key, leaf in leaves.items():
        g = grads[key].astype(leaf.data.dtype, copy=False)
        if leaf.grad is None:
            leaf.grad = np.zeros_like(leaf.data)
        leaf.grad += g
        result[leaf] = g
    return result


def _check_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        names = ("n", "c", "h", "w") if a.ndim == 4 else tuple(f"dim{i}" for i in range(a.ndim))
        bad = [names[i] for i in range(min(a.ndim, b.ndim)) if a.shape[i] != b.shape[i]]
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}", bad or ["ndim"])


# ---------------------------------------------------------------- elementwise


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "add")
    return _record(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "sub")
    return _record(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "mul")
    return _record(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data), "mul")


def div(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "div")
    out = a.data / b.data

    def bw(g):
        gb = g / b.data
        return gb, -gb * out

    return _record(out, (a, b), bw, "div")


def add_scalar(a: Tensor, c: float) -> Tensor:
    return _record(a.data + a.data.dtype.type(c), (a,), lambda g: (g,), "add_scalar")


def mul_scalar(a: Tensor, c: float) -> Tensor:
    c = a.data.dtype.type(c)
    return _record(a.data * c, (a,), lambda g: (g * c,), "mul_scalar")


def div_scalar(a: Tensor, c: float) -> Tensor:
    c = a.data.dtype.type(c)
    return _record(a.data / c, (a,), lambda g: (g / c,), "div_scalar")


def square(a: Tensor) -> Tensor:
    return _record(a.data * a.data, (a,), lambda g: (2 * g * a.data,), "square")


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)
    return _record(out, (a,), lambda g: (g / (2 * out),), "sqrt")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _record(np.where(mask, x.data, 0).astype(x.dtype), (x,), lambda g: (g * mask,), "relu")


def elu(x: Tensor, alpha: float = 1.0) -> Tensor:
    pos = x.data > 0
    neg = alpha * np.expm1(np.minimum(x.data, 0))
    out = np.where(pos, x.data, neg).astype(x.dtype)
    return _record(out, (x,), lambda g: (g * np.where(pos, 1, neg + alpha).astype(x.dtype),), "elu")


def clamp(x: Tensor, lo: float, hi: float) -> Tensor:
    inside = (x.data >= lo) & (x.data <= hi)
    return _record(np.clip(x.data, lo, hi), (x,), lambda g: (g * inside,), "clamp")


# ----------------------------------------------------------------- reductions


def sum_axes(x: Tensor, axes: tuple[int, ...] | None = None) -> Tensor:
    out = np.sum(x.data, axis=axes)
    shape = x.shape

    def bw(g):
        if axes is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axes), shape).copy(),)

    return _record(np.asarray(out), (x,), bw, "sum")


def mean(x: Tensor) -> Tensor:
    return div_scalar(sum_axes(x), x.data.size)


# ------------------------------------------------------------ shape shuffling


def concat(parts: Sequence[Tensor], axis: int) -> Tensor:
    if not parts:
        raise ShapeError("concat of an empty list")
    ref = parts[0].shape
    for p in parts[1:]:
        if p.ndim != len(ref) or any(p.shape[i] != ref[i] for i in range(len(ref)) if i != axis):
            names = ("n", "c", "h", "w")
            bad = [names[i] for i in range(len(ref)) if i != axis and p.shape[i] != ref[i]]
            raise ShapeError(f"concat: incompatible shapes {ref} vs {p.shape}", bad)
    if len(parts) == 1:
        return parts[0]
    bounds = np.cumsum([0] + [p.shape[axis] for p in parts])

    def bw(g):
        return tuple(np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis) for i in range(len(parts)))

    return _record(np.concatenate([p.data for p in parts], axis=axis), tuple(parts), bw, "concat")


def concat_channels(parts: Sequence[Tensor]) -> Tensor:
    return concat(parts, axis=1)


def narrow(x: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice ``[start, start+length)`` along ``axis``."""
    idx = [slice(None)] * x.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)

    def bw(g):
        gx = np.zeros_like(x.data)
        gx[idx] = g
        return (gx,)

    return _record(x.data[idx].copy(), (x,), bw, "narrow")


def gather_hw(x: Tensor, rows: np.ndarray, cols: np.ndarray) -> Tensor:
    """``out[..., i, j] = x[..., rows[i], cols[j]]``; used for padding and crops."""
    rows = np.asarray(rows, dtype=np.intp)
    cols = np.asarray(cols, dtype=np.intp)
    ix = (Ellipsis, rows[:, None], cols[None, :])

    def bw(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, (slice(None), slice(None), rows[:, None], cols[None, :]), g)
        return (gx,)

    return _record(x.data[ix], (x,), bw, "gather_hw")


def reflect_indices(n: int, pad: int) -> np.ndarray:
    """Indices extending ``range(n)`` by ``pad`` reflected samples at the end."""
    idx = list(range(n))
    for k in range(pad):
        j = n - 2 - k
        idx.append(max(j, 0))
    return np.array(idx, dtype=np.intp)


def pad_to_even(x: Tensor) -> tuple[Tensor, tuple[int, int]]:
    """Reflect-pad bottom/right so h and w are even. Returns the original size."""
    h, w = x.shape[-2:]
    if h % 2 == 0 and w % 2 == 0:
        return x, (h, w)
    return gather_hw(x, reflect_indices(h, h % 2), reflect_indices(w, w % 2)), (h, w)


def crop_hw(x: Tensor, h: int, w: int) -> Tensor:
    if x.shape[-2:] == (h, w):
        return x
    return gather_hw(x, np.arange(h), np.arange(w))


# -------------------------------------------------------------- convolutions


@dataclass(frozen=True)
class ConvSpec:
    in_channels: int
    out_channels: int
    kernel_h: int
    kernel_w: int
    dilation: int = 1
    stride: int = 1
    padding: int = 0

    def __post_init__(self):
        for f in ("in_channels", "out_channels", "kernel_h", "kernel_w", "dilation", "stride"):
            if getattr(self, f) < 1:
                raise ValueError(f"ConvSpec.{f} must be positive")
        if self.padding < 0:
            raise ValueError("ConvSpec.padding must be non-negative")

    def out_size(self, h: int, w: int) -> tuple[int, int]:
        def one(n, k):
            return (n + 2 * self.padding - self.dilation * (k - 1) - 1) // self.stride + 1

        return one(h, self.kernel_h), one(w, self.kernel_w)

    @classmethod
    def same(cls, cin: int, cout: int, kernel: int = 3, dilation: int = 1) -> "ConvSpec":
        return cls(cin, cout, kernel, kernel, dilation, 1, dilation * (kernel - 1) // 2)


def _tap_slice(i: int, j: int, d: int, s: int, ho: int, wo: int):
    return (
        slice(None),
        slice(None),
        slice(i * d, i * d + s * (ho - 1) + 1, s),
        slice(j * d, j * d + s * (wo - 1) + 1, s),
    )


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None, spec: ConvSpec) -> Tensor:
    """Zero-padded, dilated, strided cross-correlation.

    Computed tap by tap: each of the kh*kw kernel positions contributes one
    (out, in) x (in, pixels) matrix product, summed in a fixed order.
    """
    if x.ndim != 4:
        raise ShapeError(f"conv2d: input must be 4-d, got {x.shape}", ["ndim"])
    n, c, h, w = x.shape
    if c != spec.in_channels:
        raise ShapeError(f"conv2d: input has {c} channels, spec expects {spec.in_channels}", ["c"])
    want = (spec.out_channels, spec.in_channels, spec.kernel_h, spec.kernel_w)
    if weight.shape != want:
        bad = [a for a, p, q in zip(("out", "in", "kh", "kw"), weight.shape, want) if p != q]
        raise ShapeError(f"conv2d: weight shape {weight.shape}, expected {want}", bad or ["ndim"])
    if bias is not None and bias.shape != (spec.out_channels,):
        raise ShapeError(f"conv2d: bias shape {bias.shape}, expected ({spec.out_channels},)", ["out"])
    ho, wo = spec.out_size(h, w)
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv2d: input {h}x{w} too small for the kernel", ["h", "w"])

    p, d, s = spec.padding, spec.dilation, spec.stride
    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p))) if p else x.data
    # tap-major copies keep every matmul operand contiguous (BLAS fast path)
    wt = np.ascontiguousarray(weight.data.transpose(2, 3, 0, 1))
    out = np.zeros((n, spec.out_channels, ho * wo), dtype=x.dtype)
    for i in range(spec.kernel_h):
        for j in range(spec.kernel_w):
            xs = xp[_tap_slice(i, j, d, s, ho, wo)].reshape(n, c, ho * wo)
            out += np.matmul(wt[i, j], xs)
    out = out.reshape(n, spec.out_channels, ho, wo)
    if bias is not None:
        out += bias.data[None, :, None, None]

    def bw(g):
        g3 = g.reshape(n, spec.out_channels, ho * wo)
        gxp = np.zeros_like(xp) if x.requires_grad else None
        gwt = np.zeros_like(wt) if weight.requires_grad else None
        wtt = np.ascontiguousarray(wt.transpose(0, 1, 3, 2)) if gxp is not None else None
        for i in range(spec.kernel_h):
            for j in range(spec.kernel_w):
                sl = _tap_slice(i, j, d, s, ho, wo)
                if gwt is not None:
                    xs = xp[sl].reshape(n, c, ho * wo)
                    gwt[i, j] = np.matmul(g3, xs.transpose(0, 2, 1)).sum(axis=0)
                if gxp is not None:
                    gxp[sl] += np.matmul(wtt[i, j], g3).reshape(n, c, ho, wo)
        gw = gwt.transpose(2, 3, 0, 1).copy() if gwt is not None else None
        gx = None
        if gxp is not None:
            gx = gxp[:, :, p : p + h, p : p + w] if p else gxp
        gb = g.sum(axis=(0, 2, 3)) if bias is not None else None
        return gx, gw, gb

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return _record(out, inputs, bw, "conv2d")


def conv_transpose2d(x: Tensor, weight: Tensor, bias: Tensor | None, stride: int = 2, padding: int = 1) -> Tensor:
    """Transposed convolution (the adjoint of a strided conv2d).

    ``weight`` has shape (in, out, kh, kw). Output size per axis is
    ``(n - 1) * stride - 2 * padding + k``.
    """
    n, c, h, w = x.shape
    cin, cout, kh, kw = weight.shape
    if c != cin:
        raise ShapeError(f"conv_transpose2d: input has {c} channels, weight expects {cin}", ["c"])
    s, p = stride, padding
    hf, wf = (h - 1) * s + kh, (w - 1) * s + kw
    ho, wo = hf - 2 * p, wf - 2 * p
    wt = np.ascontiguousarray(weight.data.transpose(2, 3, 0, 1))  # (kh, kw, in, out)
    wtt = np.ascontiguousarray(wt.transpose(0, 1, 3, 2))
    full = np.zeros((n, cout, hf, wf), dtype=x.dtype)
    x3 = x.data.reshape(n, c, h * w)
    for i in range(kh):
        for j in range(kw):
            full[_tap_slice(i, j, 1, s, h, w)] += np.matmul(wtt[i, j], x3).reshape(n, cout, h, w)
    out = full[:, :, p : p + ho, p : p + wo].copy()
    if bias is not None:
        out += bias.data[None, :, None, None]

    def bw(g):
        gfull = np.zeros((n, cout, hf, wf), dtype=g.dtype)
        gfull[:, :, p : p + ho, p : p + wo] = g
        gx = np.zeros((n, c, h * w), dtype=g.dtype)
        gwt = np.zeros_like(wt)
        for i in range(kh):
            for j in range(kw):
                gs = gfull[_tap_slice(i, j, 1, s, h, w)].reshape(n, cout, h * w)
                gx += np.matmul(wt[i, j], gs)
                gwt[i, j] = np.matmul(x3, gs.transpose(0, 2, 1)).sum(axis=0)
        gb = g.sum(axis=(0, 2, 3)) if bias is not None else None
        return gx.reshape(n, c, h, w), gwt.transpose(2, 3, 0, 1).copy(), gb

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return _record(out, inputs, bw, "conv_transpose2d")


def _upsample_matrix(n: int, dtype) -> np.ndarray:
    m = np.zeros((2 * n, n), dtype=np.float64)
    for i in range(2 * n):
        src = min(max((i + 0.5) / 2 - 0.5, 0.0), n - 1)
        lo = int(math.floor(src))
        hi = min(lo + 1, n - 1)
        frac = src - lo
        m[i, lo] += 1 - frac
        m[i, hi] += frac
    return m.astype(dtype)


def bilinear_upsample2x(x: Tensor) -> Tensor:
    """Double h and w with half-pixel-centre bilinear sampling, edges clamped."""
    h, w = x.shape[-2:]
    uh = _upsample_matrix(h, x.dtype)
    uw = _upsample_matrix(w, x.dtype)
    out = np.matmul(np.matmul(uh, x.data), uw.T)
    return _record(out, (x,), lambda g: (np.matmul(np.matmul(uh.T, g), uw),), "bilinear_upsample2x")


def depthwise_filter_valid(x: Tensor, kernel: np.ndarray) -> Tensor:
    """Separable 'valid' correlation of every channel with ``kernel`` (1-d, applied on h then w).

    The kernel is a constant; only ``x`` receives a gradient.
    """
    k = np.asarray(kernel, dtype=x.dtype)
    kn = k.shape[0]
    h, w = x.shape[-2:]
    if h < kn or w < kn:
        raise ShapeError(f"filter of size {kn} does not fit a {h}x{w} image", ["h", "w"])
    ho, wo = h - kn + 1, w - kn + 1
    tmp = np.zeros(x.shape[:-2] + (ho, w), dtype=x.dtype)
    for t in range(kn):
        tmp += k[t] * x.data[..., t : t + ho, :]
    out = np.zeros(x.shape[:-2] + (ho, wo), dtype=x.dtype)
    for t in range(kn):
        out += k[t] * tmp[..., :, t : t + wo]

    def bw(g):
        gt = np.zeros(x.shape[:-2] + (ho, w), dtype=g.dtype)
        for t in range(kn):
            gt[..., :, t : t + wo] += k[t] * g
        gx = np.zeros(x.shape, dtype=g.dtype)
        for t in range(kn):
            gx[..., t : t + ho, :] += k[t] * gt
        return (gx,)

    return _record(out, (x,), bw, "depthwise_filter_valid")


def init_conv_weight(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, dtype) -> np.ndarray:
    """He-normal: std = sqrt(2 / fan_in)."""
    return (rng.standard_normal(shape) * math.sqrt(2.0 / fan_in)).astype(dtype)
