"""Minimal dense tensor engine with reverse-mode automatic differentiation.

Tensors wrap float64 numpy arrays in channels-first layout ([batch, channels,
height, width] for image-like data; arbitrary rank is allowed). Every operation
that participates in training builds a computation graph of closures; calling
``backward()`` on a scalar result runs the closures in reverse topological
order and accumulates gradients into every tensor that requires them.

Convolutions are evaluated by gathering kernel-position slices into a column
matrix and calling into BLAS, so the engine stays pure numpy while remaining
fast enough to train the desk-scale model. Bilinear resizing uses the
corner-aligned convention (output endpoints sample input endpoints) and is
computed in the ``x0 + t*(x1 - x0)`` form so resizing a constant field returns
that constant bit-exactly and same-size resizing is the identity.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, DimensionError

__all__ = [
    "Tensor",
    "ConvParams",
    "no_grad",
    "add",
    "sub",
    "mul",
    "div",
    "scalar_mul",
    "sigmoid",
    "relu",
    "exp",
    "log",
    "absolute",
    "clamp_min",
    "concat_channels",
    "slice_channels",
    "scale_channels",
    "spatial_diff",
    "tsum",
    "tmean",
    "conv2d",
    "bilinear_resize",
    "global_pool",
    "gradcheck",
]

_grad_enabled = True


class no_grad:
    """Context manager that disables graph construction (inference mode)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev


class Tensor:
    """A float64 value grid, optionally tracked for gradients.

    ``data`` is always a numpy float64 array. ``grad`` is allocated lazily
    during ``backward`` and has the same shape as ``data``. Tensors are
    value-like: treat ``data`` as immutable once the tensor has entered a
    computation graph (gradient accumulation during one backward pass is the
    only sanctioned mutation).
    """

    __slots__ = ("data", "grad", "requires_grad", "_prev", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._prev: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    # -- basic introspection -------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a scalar tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # -- graph plumbing ------------------------------------------------------

    def backward(self) -> None:
        """Backpropagate from this scalar through the recorded graph."""
        if self.data.size != 1:
            raise ContractError("backward() is only defined for scalar outputs")
        # iterative post-order DFS; a node is emitted only after its whole
        # input subgraph is emitted, so reversed(order) never runs a node's
        # backward before all of its consumers have contributed
        order: list[Tensor] = []
        color: dict[int, int] = {}  # 1 = inputs being explored, 2 = emitted
        stack: list[Tensor] = [self]
        while stack:
            node = stack[-1]
            state = color.get(id(node), 0)
            if state == 0:
                color[id(node)] = 1
                for parent in node._prev:
                    if color.get(id(parent), 0) == 0:
                        stack.append(parent)
            elif state == 1:
                color[id(node)] = 2
                order.append(node)
                stack.pop()
            else:
                stack.pop()
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def _accumulate(self, g: np.ndarray, owned: bool = False) -> None:
        """Add ``g`` into this tensor's grad.

        ``owned`` marks ``g`` as a fresh temporary this tensor may keep;
        otherwise it is copied on first store so later in-place accumulation
        can never corrupt another tensor's gradient through aliasing.
        """
        if self.grad is None:
            self.grad = g if owned else g.copy()
        else:
            self.grad += g

    # -- operator sugar ------------------------------------------------------

    def __add__(self, other):
        if isinstance(other, Tensor):
            return add(self, other)
        return _affine(self, 1.0, float(other))

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return sub(self, other)
        return _affine(self, 1.0, -float(other))

    def __rsub__(self, other):
        return _affine(self, -1.0, float(other))

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scalar_mul(self, float(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return div(self, other)
        return scalar_mul(self, 1.0 / float(other))

    def __neg__(self):
        return scalar_mul(self, -1.0)

    def sum(self):
        return tsum(self)

    def mean(self):
        return tmean(self)


def _result(data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    """Wrap an op result, recording the graph only when tracking is on."""
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._prev = tuple(parents)
        out._backward = backward(out)
    return out


def _require_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        for axis, (x, y) in enumerate(zip(a.shape, b.shape)):
            if x != y:
                raise DimensionError(f"{op}: operand shapes differ on axis {axis}: {x} vs {y}")
        raise DimensionError(f"{op}: operand ranks differ: {a.shape} vs {b.shape}")


# ---------------------------------------------------------------------------
# elementwise primitives
# ---------------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape(a, b, "add")

    def bw(out):
        def run(g):
            if a.requires_grad:
                a._accumulate(g)
            if b.requires_grad:
                b._accumulate(g)

        return run

    return _result(a.data + b.data, (a, b), bw)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape(a, b, "sub")

    def bw(out):
        def run(g):
            if a.requires_grad:
                a._accumulate(g)
            if b.requires_grad:
                b._accumulate(-g)

        return run

    return _result(a.data - b.data, (a, b), bw)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape(a, b, "mul")

    def bw(out):
        def run(g):
            if a.requires_grad:
                a._accumulate(g * b.data, owned=True)
            if b.requires_grad:
                b._accumulate(g * a.data, owned=True)

        return run

    return _result(a.data * b.data, (a, b), bw)


def div(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape(a, b, "div")

    def bw(out):
        def run(g):
            if a.requires_grad:
                a._accumulate(g / b.data, owned=True)
            if b.requires_grad:
                b._accumulate(-g * a.data / (b.data * b.data), owned=True)

        return run

    return _result(a.data / b.data, (a, b), bw)


def scalar_mul(a: Tensor, c: float) -> Tensor:
    c = float(c)

    def bw(out):
        def run(g):
            if a.requires_grad:
                a._accumulate(g * c, owned=True)

        return run

    return _result(a.data * c, (a,), bw)


def _affine(a: Tensor, scale: float, shift: float) -> Tensor:
    def bw(out):
        def run(g):
            if a.requires_grad:
                a._accumulate(g * scale, owned=True)

        return run

    return _result(a.data * scale + shift, (a,), bw)


_SIG_LO = np.nextafter(0.0, 1.0)
_SIG_HI = np.nextafter(1.0, 0.0)


def sigmoid(a: Tensor) -> Tensor:
    """Logistic function, saturating to the nearest float inside (0, 1)."""
    x = a.data
    s = np.empty_like(x)
    pos = x >= 0
    s[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    s[~pos] = e / (1.0 + e)
    np.clip(s, _SIG_LO, _SIG_HI, out=s)

    def bw(out):
        def run(g):
            if a.requires_grad:
                a._accumulate(g * s * (1.0 - s), owned=True)

        return run

    return _result(s, (a,), bw)


_relu_watch: list | None = None


class watch_relu_margin:
    """Record the smallest |pre-activation| seen by any ReLU in the block.

    Finite-difference checks of ReLU networks are only meaningful at points
    whose pre-activations stay on one side of the kink across the whole
    difference window; this lets a checker redraw inputs that land too close.
    """

    def __enter__(self):
        global _relu_watch
        self._prev = _relu_watch
        _relu_watch = [np.inf]
        return _relu_watch

    def __exit__(self, *exc):
        global _relu_watch
        _relu_watch = self._prev


def relu(a: Tensor) -> Tensor:
    if _relu_watch is not None and a.data.size:
        margin = float(np.abs(a.data).min())
        if margin < _relu_watch[0]:
            _relu_watch[0] = margin

    def bw(out):
        def run(g):
            if a.requires_grad:
                a._accumulate(g * (a.data > 0), owned=True)

        return run

    return _result(np.maximum(a.data, 0.0), (a,), bw)


def exp(a: Tensor) -> Tensor:
    e = np.exp(a.data)

    def bw(out):
        def run(g):
            if a.requires_grad:
                a._accumulate(g * e, owned=True)

        return run

    return _result(e, (a,), bw)


def log(a: Tensor) -> Tensor:
    def bw(out):
        def run(g):
            if a.requires_grad:
                a._accumulate(g / a.data, owned=True)

        return run

    return _result(np.log(a.data), (a,), bw)


def absolute(a: Tensor) -> Tensor:
    def bw(out):
        def run(g):
            if a.requires_grad:
                a._accumulate(g * np.sign(a.data), owned=True)

        return run

    return _result(np.abs(a.data), (a,), bw)


def clamp_min(a: Tensor, floor: float) -> Tensor:
    """max(a, floor); gradient flows only where a > floor."""
    floor = float(floor)

    def bw(out):
        def run(g):
            if a.requires_grad:
                a._accumulate(g * (a.data > floor), owned=True)

        return run

    return _result(np.maximum(a.data, floor), (a,), bw)


# ---------------------------------------------------------------------------
# shape / channel primitives
# ---------------------------------------------------------------------------


def concat_channels(tensors: Sequence[Tensor]) -> Tensor:
    """Concatenate along the channel axis (axis 1)."""
    if not tensors:
        raise ContractError("concat_channels needs at least one input")
    first = tensors[0]
    for t in tensors[1:]:
        if t.ndim != first.ndim:
            raise DimensionError("concat_channels: rank mismatch")
        for axis in range(first.ndim):
            if axis != 1 and t.shape[axis] != first.shape[axis]:
                raise DimensionError(
                    f"concat_channels: inputs differ on axis {axis}: "
                    f"{first.shape[axis]} vs {t.shape[axis]}"
                )
    widths = [t.shape[1] for t in tensors]
    offsets = np.cumsum([0] + widths)

    def bw(out):
        def run(g):
            for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
                if t.requires_grad:
                    t._accumulate(g[:, lo:hi])  # slice view; copied on first store

        return run

    return _result(np.concatenate([t.data for t in tensors], axis=1), tuple(tensors), bw)


def slice_channels(a: Tensor, lo: int, hi: int) -> Tensor:
    if not (0 <= lo < hi <= a.shape[1]):
        raise DimensionError(f"slice_channels: [{lo}:{hi}] out of range on axis 1 ({a.shape[1]})")

    def bw(out):
        def run(g):
            if a.requires_grad:
                full = np.zeros_like(a.data)
                full[:, lo:hi] = g
                a._accumulate(full, owned=True)

        return run

    return _result(a.data[:, lo:hi].copy(), (a,), bw)


def scale_channels(a: Tensor, v: Tensor) -> Tensor:
    """Multiply a [B,C,H,W] tensor by per-channel weights v of shape [B,C,1,1]."""
    if a.ndim != 4 or v.ndim != 4:
        raise DimensionError("scale_channels expects rank-4 operands")
    if v.shape[2:] != (1, 1) or v.shape[:2] != a.shape[:2]:
        raise DimensionError(
            f"scale_channels: weights shape {v.shape} incompatible with input {a.shape}"
        )

    def bw(out):
        def run(g):
            if a.requires_grad:
                a._accumulate(g * v.data, owned=True)
            if v.requires_grad:
                v._accumulate((g * a.data).sum(axis=(2, 3), keepdims=True), owned=True)

        return run

    return _result(a.data * v.data, (a, v), bw)


def spatial_diff(a: Tensor, axis: int) -> Tensor:
    """First-order forward difference along a spatial axis (2=rows, 3=cols)."""
    if axis not in (2, 3):
        raise ContractError("spatial_diff axis must be 2 or 3")
    if a.ndim != 4:
        raise DimensionError("spatial_diff expects a rank-4 tensor")
    if a.shape[axis] < 2:
        raise DimensionError(f"spatial_diff: axis {axis} extent {a.shape[axis]} < 2")
    hi = [slice(None)] * 4
    lo = [slice(None)] * 4
    hi[axis] = slice(1, None)
    lo[axis] = slice(None, -1)
    hi, lo = tuple(hi), tuple(lo)

    def bw(out):
        def run(g):
            if a.requires_grad:
                full = np.zeros_like(a.data)
                full[hi] += g
                full[lo] -= g
                a._accumulate(full, owned=True)

        return run

    return _result(a.data[hi] - a.data[lo], (a,), bw)


def tsum(a: Tensor) -> Tensor:
    def bw(out):
        def run(g):
            if a.requires_grad:
                a._accumulate(np.full_like(a.data, float(g)), owned=True)

        return run

    return _result(np.asarray(a.data.sum()), (a,), bw)


def tmean(a: Tensor) -> Tensor:
    n = a.data.size

    def bw(out):
        def run(g):
            if a.requires_grad:
                a._accumulate(np.full_like(a.data, float(g) / n), owned=True)

        return run

    return _result(np.asarray(a.data.mean()), (a,), bw)


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------


class ConvParams:
    """Weights and geometry of one 2-D convolution (cross-correlation).

    weights: [out_channels, in_channels, kH, kW]; bias: [out_channels].
    """

    def __init__(self, weights: Tensor, bias: Tensor, stride: int = 1,
                 padding: int = 0, dilation: int = 1):
        if weights.ndim != 4:
            raise DimensionError(f"conv weights must be rank 4, got {weights.shape}")
        if bias.ndim != 1 or bias.shape[0] != weights.shape[0]:
            raise DimensionError(
                f"conv bias shape {bias.shape} does not match out_channels {weights.shape[0]}"
            )
        if stride < 1 or padding < 0 or dilation < 1:
            raise ContractError("stride/dilation must be >= 1 and padding >= 0")
        self.weights = weights
        self.bias = bias
        self.stride = int(stride)
        self.padding = int(padding)
        self.dilation = int(dilation)

    @property
    def out_channels(self) -> int:
        return self.weights.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weights.shape[1]


def conv_out_extent(extent: int, k: int, stride: int, padding: int, dilation: int) -> int:
    return (extent + 2 * padding - dilation * (k - 1) - 1) // stride + 1


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int, dilation: int,
            ho: int, wo: int) -> np.ndarray:
    """Gather kernel-position slices into a (Cin*kh*kw, B*ho*wo) matrix."""
    b, cin = xp.shape[0], xp.shape[1]
    cols = np.empty((cin, kh, kw, b, ho, wo))
    for ki in range(kh):
        r0 = ki * dilation
        rows = slice(r0, r0 + stride * (ho - 1) + 1, stride)
        for kj in range(kw):
            c0 = kj * dilation
            colsl = slice(c0, c0 + stride * (wo - 1) + 1, stride)
            cols[:, ki, kj] = xp[:, :, rows, colsl].transpose(1, 0, 2, 3)
    return cols.reshape(cin * kh * kw, b * ho * wo)


def conv2d(x: Tensor, params: ConvParams) -> Tensor:
    """Direct 2-D cross-correlation with stride, zero padding and dilation."""
    if x.ndim != 4:
        raise DimensionError(f"conv2d input must be rank 4 [B,C,H,W], got {x.shape}")
    b, cin, h, w = x.shape
    cout, cin_w, kh, kw = params.weights.shape
    if cin != cin_w:
        raise DimensionError(f"conv2d: input channel axis is {cin}, kernel expects {cin_w}")
    s, p, d = params.stride, params.padding, params.dilation
    eff_h = d * (kh - 1) + 1
    eff_w = d * (kw - 1) + 1
    if eff_h > h + 2 * p:
        raise DimensionError(
            f"conv2d: effective kernel height {eff_h} exceeds padded input height {h + 2 * p}"
        )
    if eff_w > w + 2 * p:
        raise DimensionError(
            f"conv2d: effective kernel width {eff_w} exceeds padded input width {w + 2 * p}"
        )
    ho = conv_out_extent(h, kh, s, p, d)
    wo = conv_out_extent(w, kw, s, p, d)

    if p > 0:
        xp = np.zeros((b, cin, h + 2 * p, w + 2 * p))
        xp[:, :, p:p + h, p:p + w] = x.data
    else:
        xp = x.data
    cols = _im2col(xp, kh, kw, s, d, ho, wo)
    w_mat = params.weights.data.reshape(cout, cin * kh * kw)
    out = (w_mat @ cols).reshape(cout, b, ho, wo).transpose(1, 0, 2, 3)
    out = np.ascontiguousarray(out)
    out += params.bias.data[None, :, None, None]

    weights, bias = params.weights, params.bias

    def bw(out_t):
        def run(g):
            g_mat = g.transpose(1, 0, 2, 3).reshape(cout, b * ho * wo)
            if weights.requires_grad:
                # cols is cheap to rebuild from the padded input; storing it
                # for every conv would retain ~k^2 x the activation memory.
                cols_b = _im2col(xp, kh, kw, s, d, ho, wo)
                weights._accumulate((g_mat @ cols_b.T).reshape(weights.shape), owned=True)
            if bias.requires_grad:
                bias._accumulate(g.sum(axis=(0, 2, 3)), owned=True)
            if x.requires_grad:
                gcols = (w_mat.T @ g_mat).reshape(cin, kh, kw, b, ho, wo)
                gxp = np.zeros((cin, b, h + 2 * p, w + 2 * p))
                for ki in range(kh):
                    r0 = ki * d
                    rows = slice(r0, r0 + s * (ho - 1) + 1, s)
                    for kj in range(kw):
                        c0 = kj * d
                        colsl = slice(c0, c0 + s * (wo - 1) + 1, s)
                        gxp[:, :, rows, colsl] += gcols[:, ki, kj]
                gx = gxp.transpose(1, 0, 2, 3)
                if p > 0:
                    gx = gx[:, :, p:p + h, p:p + w]
                x._accumulate(np.ascontiguousarray(gx), owned=True)

        return run

    return _result(out, (x, weights, bias), bw)


# ---------------------------------------------------------------------------
# bilinear resize
# ---------------------------------------------------------------------------


def _resize_axis_coeffs(n_in: int, n_out: int):
    """Corner-aligned sample positions: lo index, hi index, fractional weight."""
    if n_out == 1 or n_in == 1:
        pos = np.zeros(n_out)
    else:
        pos = np.arange(n_out) * ((n_in - 1) / (n_out - 1))
    i0 = np.floor(pos).astype(np.intp)
    np.clip(i0, 0, n_in - 1, out=i0)
    t = pos - i0
    i1 = np.minimum(i0 + 1, n_in - 1)
    return i0, i1, t


def _resize_matrix(n_in: int, n_out: int) -> np.ndarray:
    i0, i1, t = _resize_axis_coeffs(n_in, n_out)
    m = np.zeros((n_out, n_in))
    rows = np.arange(n_out)
    np.add.at(m, (rows, i0), 1.0 - t)
    np.add.at(m, (rows, i1), t)
    return m


def bilinear_resize(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Resize spatially with corner-aligned bilinear interpolation."""
    if x.ndim != 4:
        raise DimensionError(f"bilinear_resize input must be rank 4, got {x.shape}")
    if out_h < 1 or out_w < 1:
        raise DimensionError(f"bilinear_resize: target extents must be >= 1, got {out_h}x{out_w}")
    b, c, h, w = x.shape
    i0, i1, th = _resize_axis_coeffs(h, out_h)
    j0, j1, tw = _resize_axis_coeffs(w, out_w)

    # x0 + t*(x1-x0) keeps constants exact and same-size resizing bit-identical
    xw = x.data[:, :, :, j0]
    xw += tw * (x.data[:, :, :, j1] - x.data[:, :, :, j0])
    out = xw[:, :, i0, :]
    out += th[:, None] * (xw[:, :, i1, :] - xw[:, :, i0, :])

    def bw(out_t):
        def run(g):
            if x.requires_grad:
                rh = _resize_matrix(h, out_h)
                rw = _resize_matrix(w, out_w)
                tmp = np.tensordot(g, rw, axes=([3], [0]))       # B,C,out_h,W
                gx = np.tensordot(tmp, rh, axes=([2], [0]))      # B,C,W,H
                x._accumulate(np.ascontiguousarray(gx.transpose(0, 1, 3, 2)), owned=True)

        return run

    return _result(out, (x,), bw)


# ---------------------------------------------------------------------------
# global pooling
# ---------------------------------------------------------------------------


def global_pool(x: Tensor, kind: str) -> Tensor:
    """Per-channel spatial reduction to [B,C,1,1]; kind is 'avg' or 'max'.

    The max pool routes its gradient to the first maximal position in
    row-major order, which keeps tie handling deterministic.
    """
    if x.ndim != 4:
        raise DimensionError(f"global_pool input must be rank 4, got {x.shape}")
    b, c, h, w = x.shape
    if h < 1 or w < 1:
        raise DimensionError("global_pool: empty spatial extent")
    if kind == "avg":
        out = x.data.mean(axis=(2, 3), keepdims=True)

        def bw(out_t):
            def run(g):
                if x.requires_grad:
                    x._accumulate(np.broadcast_to(g / (h * w), x.shape).copy(), owned=True)

            return run

        return _result(out, (x,), bw)
    if kind == "max":
        flat = x.data.reshape(b, c, h * w)
        idx = flat.argmax(axis=2)  # first occurrence on ties
        out = np.take_along_axis(flat, idx[:, :, None], axis=2).reshape(b, c, 1, 1)

        def bw(out_t):
            def run(g):
                if x.requires_grad:
                    gx = np.zeros((b, c, h * w))
                    np.put_along_axis(gx, idx[:, :, None], g.reshape(b, c, 1), axis=2)
                    x._accumulate(gx.reshape(x.shape), owned=True)

            return run

        return _result(out, (x,), bw)
    raise ContractError(f"global_pool kind must be 'avg' or 'max', got {kind!r}")


# ---------------------------------------------------------------------------
# finite-difference gradient checking
# ---------------------------------------------------------------------------


def gradcheck(fn: Callable[[], Tensor], leaves: Iterable[Tensor], step: float = 1e-4,
              max_entries: int | None = None, rng: np.random.Generator | None = None) -> float:
    """Compare analytic gradients of a scalar computation to central differences.

    ``fn`` must rebuild the computation from the current leaf data on every
    call and return a scalar tensor. Returns the maximum over all checked
    entries of |analytic - numeric| / max(1, |analytic|, |numeric|). When
    ``max_entries`` is given, that many entries per leaf are sampled with
    ``rng`` instead of sweeping every entry.
    """
    leaves = list(leaves)
    for leaf in leaves:
        leaf.zero_grad()
    out = fn()
    if out.data.size != 1:
        raise ContractError("gradcheck requires a scalar-producing computation")
    out.backward()
    analytic = []
    for leaf in leaves:
        if not leaf.requires_grad:
            raise ContractError("gradcheck leaves must require gradients")
        analytic.append(np.zeros_like(leaf.data) if leaf.grad is None else leaf.grad.copy())

    worst = 0.0
    for leaf, ana in zip(leaves, analytic):
        if not leaf.data.flags.c_contiguous:
            leaf.data = np.ascontiguousarray(leaf.data)
        flat = leaf.data.reshape(-1)
        ana_flat = ana.reshape(-1)
        n = flat.size
        if max_entries is not None and max_entries < n:
            if rng is None:
                raise ContractError("sampled gradcheck needs an rng")
            indices = rng.choice(n, size=max_entries, replace=False)
        else:
            indices = range(n)
        for i in indices:
            orig = flat[i]
            flat[i] = orig + step
            f_plus = fn().item()
            flat[i] = orig - step
            f_minus = fn().item()
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * step)
            a = ana_flat[i]
            err = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
            if err > worst:
                worst = err
    return worst
