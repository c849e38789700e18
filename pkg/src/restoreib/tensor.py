"""Dense tensors with reverse-mode automatic differentiation.

Every operation the restoration networks need lives here: elementwise
arithmetic, (dilated) convolution, transposed convolution, pooling,
nearest-neighbour upsampling, pixel shuffle, activations, instance
normalisation and channel concatenation.

Tensors store a numpy array plus an optional link to the node that produced
them. ``backward`` walks the recorded graph in reverse topological order and
accumulates gradients into ``Tensor.grad``.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import as_strided

__all__ = [
    "Tensor",
    "ShapeError",
    "no_grad",
    "tensor",
    "elementwise",
    "add",
    "sub",
    "mul",
    "conv2d",
    "conv_transpose2d",
    "maxpool2",
    "upsample_nearest",
    "pixel_shuffle",
    "pixel_unshuffle",
    "activation",
    "relu",
    "leaky_relu",
    "tanh",
    "sigmoid",
    "log",
    "instance_norm",
    "concat_channels",
    "slice_channels",
    "backward",
]

LEAKY_SLOPE = 0.2

_grad_enabled = True


class ShapeError(ValueError):
    """Raised when operand shapes or geometry are incompatible."""


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """A numpy array with optional gradient tracking.

    Parameters
    ----------
    data : array_like
        Values; converted to a float ndarray (float64 unless already float32).
    requires_grad : bool
        Whether this tensor is a tracked leaf that should receive gradients.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data)
        if arr.dtype != np.float32:
            arr = arr.astype(np.float64, copy=False)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self.op = "leaf"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op}{flag})"

    # arithmetic sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def sum(self) -> "Tensor":
        return tsum(self)

    def mean(self) -> "Tensor":
        return mean(self)

    def abs(self) -> "Tensor":
        return tabs(self)

    def backward(self) -> dict:
        return backward(self)


def tensor(data, requires_grad: bool = False, dtype=None) -> Tensor:
    arr = np.asarray(data, dtype=dtype) if dtype is not None else data
    return Tensor(arr, requires_grad=requires_grad)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x))


def _make(data: np.ndarray, parents: tuple[Tensor, ...], bw, op: str) -> Tensor:
    out = Tensor(data)
    out.op = op
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = bw
    return out


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------


def elementwise(a, b, kind: str) -> Tensor:
    """Apply ``add``, ``sub`` or ``mul`` to equal-shaped tensors or tensor/scalar."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape and b.size != 1:
        if a.size == 1:
            a, b = b, a
            if kind == "sub":
                # scalar - tensor: compute as -(tensor - scalar)
                return mul(elementwise(a, b, "sub"), -1.0)
        else:
            raise ShapeError(f"cannot broadcast shapes {a.shape} and {b.shape}")
    b_scalar = a.shape != b.shape
    bshape = b.shape

    def _reduce(g):
        return np.asarray(g.sum()).reshape(bshape) if b_scalar else g

    if kind == "add":
        data = a.data + b.data
        bw = lambda g: (g, _reduce(g))  # noqa: E731
    elif kind == "sub":
        data = a.data - b.data
        bw = lambda g: (g, _reduce(-g))  # noqa: E731
    elif kind == "mul":
        data = a.data * b.data
        bw = lambda g: (g * b.data, _reduce(g * a.data))  # noqa: E731
    else:
        raise ValueError(f"unknown elementwise kind {kind!r}")
    if data.dtype != a.dtype and a.dtype == np.float32:
        data = data.astype(np.float32)
    return _make(data, (a, b), bw, kind)


def add(a, b) -> Tensor:
    return elementwise(a, b, "add")


def sub(a, b) -> Tensor:
    return elementwise(a, b, "sub")


def mul(a, b) -> Tensor:
    b = b if isinstance(b, Tensor) else Tensor(np.asarray(b, dtype=_as_tensor(a).dtype))
    return elementwise(a, b, "mul")


def tsum(a: Tensor) -> Tensor:
    shape = a.shape
    return _make(np.asarray(a.data.sum()), (a,), lambda g: (np.broadcast_to(g, shape),), "sum")


def mean(a: Tensor) -> Tensor:
    shape, n = a.shape, a.size
    return _make(np.asarray(a.data.mean()), (a,), lambda g: (np.broadcast_to(g / n, shape),), "mean")


def tabs(a: Tensor) -> Tensor:
    s = np.sign(a.data)
    return _make(np.abs(a.data), (a,), lambda g: (g * s,), "abs")


def square(a: Tensor) -> Tensor:
    return _make(a.data * a.data, (a,), lambda g: (2.0 * g * a.data,), "square")


def log(a: Tensor, floor: float = 0.0) -> Tensor:
    """Natural log, with inputs clamped below at ``floor`` (gradient zero where clamped)."""
    x = np.maximum(a.data, floor) if floor > 0 else a.data
    active = a.data >= floor
    return _make(np.log(x), (a,), lambda g: (np.where(active, g / x, 0.0),), "log")


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    old = a.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),), "reshape")


# ---------------------------------------------------------------------------
# activations
# ---------------------------------------------------------------------------


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _make(x.data * mask, (x,), lambda g: (g * mask,), "relu")


def leaky_relu(x: Tensor, slope: float = LEAKY_SLOPE) -> Tensor:
    scale = np.where(x.data > 0, 1.0, slope).astype(x.dtype)
    return _make(x.data * scale, (x,), lambda g: (g * scale,), "leaky_relu")


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return _make(y, (x,), lambda g: (g * (1.0 - y * y),), "tanh")


def sigmoid(x: Tensor) -> Tensor:
    # split by sign to avoid overflow in exp
    z = np.exp(-np.abs(x.data))
    y = np.where(x.data >= 0, 1.0 / (1.0 + z), z / (1.0 + z)).astype(x.dtype)
    return _make(y, (x,), lambda g: (g * y * (1.0 - y),), "sigmoid")


_ACTIVATIONS = {"relu": relu, "leaky_relu": leaky_relu, "tanh": tanh, "sigmoid": sigmoid}


def activation(x: Tensor, kind: str) -> Tensor:
    try:
        return _ACTIVATIONS[kind](x)
    except KeyError:
        raise ValueError(f"unknown activation {kind!r}") from None


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------


def _windows(xp: np.ndarray, kh: int, kw: int, stride: int, dilation: int, oh: int, ow: int):
    """Strided view (N, C, kh, kw, oh, ow) over a padded input."""
    n, c, _, _ = xp.shape
    sn, sc, sh, sw = xp.strides
    return as_strided(
        xp,
        shape=(n, c, kh, kw, oh, ow),
        strides=(sn, sc, sh * dilation, sw * dilation, sh * stride, sw * stride),
        writeable=False,
    )


def _col2im(cols: np.ndarray, padded_shape, kh, kw, stride, dilation, oh, ow) -> np.ndarray:
    """Scatter-add (N, C, kh, kw, oh, ow) columns back into a padded image."""
    out = np.zeros(padded_shape, dtype=cols.dtype)
    hspan = stride * (oh - 1) + 1
    wspan = stride * (ow - 1) + 1
    for i in range(kh):
        for j in range(kw):
            hi, wj = i * dilation, j * dilation
            out[:, :, hi : hi + hspan : stride, wj : wj + wspan : stride] += cols[:, :, i, j]
    return out


def _conv_geometry(h, w, kh, kw, stride, padding, dilation):
    if kh < 1 or kw < 1 or stride < 1 or dilation < 1 or padding < 0:
        raise ShapeError(
            f"invalid conv geometry: kernel=({kh},{kw}) stride={stride} "
            f"padding={padding} dilation={dilation}"
        )
    eh, ew = (kh - 1) * dilation + 1, (kw - 1) * dilation + 1
    if eh > h + 2 * padding or ew > w + 2 * padding:
        raise ShapeError(
            f"effective kernel ({eh},{ew}) exceeds padded input ({h + 2 * padding},{w + 2 * padding})"
        )
    return (h + 2 * padding - eh) // stride + 1, (w + 2 * padding - ew) // stride + 1


def _conv_forward(x, w, stride, padding, dilation):
    n, c, h, wd = x.shape
    o, c2, kh, kw = w.shape
    if c != c2:
        raise ShapeError(f"input has {c} channels but weight expects {c2}: {x.shape} vs {w.shape}")
    oh, ow = _conv_geometry(h, wd, kh, kw, stride, padding, dilation)
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x
    cols = _windows(xp, kh, kw, stride, dilation, oh, ow)
    # (O, C*kh*kw) @ (C*kh*kw, N*oh*ow)
    colmat = cols.transpose(1, 2, 3, 0, 4, 5).reshape(c * kh * kw, n * oh * ow)
    out = (w.reshape(o, -1) @ colmat).reshape(o, n, oh, ow).transpose(1, 0, 2, 3)
    return np.ascontiguousarray(out), colmat, xp.shape, (oh, ow)


def _conv_backward_input(g, w, padded_shape, in_shape, stride, padding, dilation, oh, ow):
    n = g.shape[0]
    o, c, kh, kw = w.shape
    gmat = g.transpose(1, 0, 2, 3).reshape(o, n * oh * ow)
    dcols = (w.reshape(o, -1).T @ gmat).reshape(c, kh, kw, n, oh, ow).transpose(3, 0, 1, 2, 4, 5)
    dxp = _col2im(dcols, padded_shape, kh, kw, stride, dilation, oh, ow)
    h, wd = in_shape[2], in_shape[3]
    return dxp[:, :, padding : padding + h, padding : padding + wd]


def _flat_taps(kh, kw, dilation, wp):
    return [(i, j, i * dilation * wp + j * dilation) for i in range(kh) for j in range(kw)]


def _conv_s1_forward(x, w, padding, dilation, oh, ow):
    """Stride-1 convolution by shifting a flattened padded image.

    Output is computed on a grid ``oh x wp`` (padded width) so that every
    kernel tap is a contiguous column offset; the extra columns are dropped.
    """
    n, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    hp, wp = h + 2 * padding, wd + 2 * padding
    # one extra row keeps the last tap's slice in bounds
    xp = np.zeros((n, c, hp + 1, wp), dtype=x.dtype)
    xp[:, :, padding : padding + h, padding : padding + wd] = x
    flat = xp.reshape(n, c, -1)
    length = oh * wp
    out = np.zeros((n, o, length), dtype=np.result_type(x, w))
    taps = _flat_taps(kh, kw, dilation, wp)
    wt = np.ascontiguousarray(w.transpose(2, 3, 0, 1))
    for b in range(n):
        acc = out[b]
        for i, j, off in taps:
            acc += wt[i, j] @ flat[b, :, off : off + length]
    out = out.reshape(n, o, oh, wp)[:, :, :, :ow]
    return np.ascontiguousarray(out), flat, taps, length, wp


def _conv_s1_backward(g, w, flat, taps, length, wp, in_shape, padding, need_x, need_w):
    n, c, h, wd = in_shape
    o = w.shape[0]
    oh, ow = g.shape[2], g.shape[3]
    gg = np.zeros((n, o, oh, wp), dtype=g.dtype)
    gg[:, :, :, :ow] = g
    gg = gg.reshape(n, o, length)
    kh, kw = w.shape[2], w.shape[3]
    wt = np.ascontiguousarray(w.transpose(2, 3, 1, 0))  # (kh, kw, C, O)
    dwt = np.zeros((kh, kw, o, c), dtype=w.dtype) if need_w else None
    dflat = np.zeros(flat.shape, dtype=flat.dtype) if need_x else None
    for b in range(n):
        gb = gg[b]
        for i, j, off in taps:
            if need_w:
                dwt[i, j] += gb @ flat[b, :, off : off + length].T
            if need_x:
                dflat[b, :, off : off + length] += wt[i, j] @ gb
    dw = dwt.transpose(2, 3, 0, 1) if need_w else None
    dx = None
    if need_x:
        hp = h + 2 * padding
        dx = dflat.reshape(n, c, hp + 1, wp)[:, :, padding : padding + h, padding : padding + wd]
    return dx, dw


def conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Tensor | None = None,
    stride: int = 1,
    padding: int = 0,
    dilation: int = 1,
) -> Tensor:
    """2-D cross-correlation of ``x`` (N,C,H,W) with ``weight`` (O,C,kh,kw)."""
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f"conv2d expects 4-D input and weight, got {x.shape} and {weight.shape}")
    in_shape = x.shape
    wdata = weight.data
    if stride == 1:
        if x.shape[1] != weight.shape[1]:
            raise ShapeError(f"input has {x.shape[1]} channels but weight expects {weight.shape[1]}: {x.shape} vs {weight.shape}")
        oh, ow = _conv_geometry(x.shape[2], x.shape[3], weight.shape[2], weight.shape[3], 1, padding, dilation)
        out, flat, taps, length, wp = _conv_s1_forward(x.data, wdata, padding, dilation, oh, ow)
        if bias is not None:
            out += bias.data.reshape(1, -1, 1, 1)

        def bw1(g):
            dx, dw = _conv_s1_backward(
                g, wdata, flat, taps, length, wp, in_shape, padding, x.requires_grad, weight.requires_grad
            )
            return (dx, dw) if bias is None else (dx, dw, g.sum(axis=(0, 2, 3)))

        parents = (x, weight) if bias is None else (x, weight, bias)
        return _make(out, parents, bw1, "conv2d")

    out, colmat, padded_shape, (oh, ow) = _conv_forward(x.data, wdata, stride, padding, dilation)
    if bias is not None:
        out += bias.data.reshape(1, -1, 1, 1)

    def bw(g):
        o = wdata.shape[0]
        gmat = g.transpose(1, 0, 2, 3).reshape(o, -1)
        dw = (gmat @ colmat.T).reshape(wdata.shape) if weight.requires_grad else None
        dx = (
            _conv_backward_input(g, wdata, padded_shape, in_shape, stride, padding, dilation, oh, ow)
            if x.requires_grad
            else None
        )
        if bias is None:
            return dx, dw
        return dx, dw, g.sum(axis=(0, 2, 3))

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _make(out, parents, bw, "conv2d")


def conv_transpose2d(
    x: Tensor,
    weight: Tensor,
    bias: Tensor | None = None,
    stride: int = 1,
    padding: int = 0,
) -> Tensor:
    """Transposed convolution; ``weight`` is (C_in, C_out, kh, kw).

    This is the adjoint of :func:`conv2d` with the same weight: the input here
    plays the role of a conv2d output with ``C_in`` channels.
    """
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f"conv_transpose2d expects 4-D tensors, got {x.shape} and {weight.shape}")
    n, cin, h, wd = x.shape
    cin2, cout, kh, kw = weight.shape
    if cin != cin2:
        raise ShapeError(f"input has {cin} channels but weight expects {cin2}")
    if stride < 1 or padding < 0 or kh < 1 or kw < 1:
        raise ShapeError(f"invalid transposed-conv geometry: stride={stride} padding={padding}")
    oh = (h - 1) * stride - 2 * padding + kh
    ow = (wd - 1) * stride - 2 * padding + kw
    if oh < 1 or ow < 1:
        raise ShapeError(f"transposed conv output would be empty: ({oh},{ow})")
    padded_shape = (n, cout, oh + 2 * padding, ow + 2 * padding)
    out = _conv_backward_input(x.data, weight.data, padded_shape, (n, cout, oh, ow), stride, padding, 1, h, wd)
    out = np.ascontiguousarray(out)
    if bias is not None:
        out += bias.data.reshape(1, -1, 1, 1)
    wdata = weight.data
    xdata = x.data

    def bw(g):
        gp = np.pad(g, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else g
        cols = _windows(gp, kh, kw, stride, 1, h, wd)
        colmat = cols.transpose(1, 2, 3, 0, 4, 5).reshape(cout * kh * kw, n * h * wd)
        dx = None
        if x.requires_grad:
            dx = (wdata.reshape(cin, -1) @ colmat).reshape(cin, n, h, wd).transpose(1, 0, 2, 3)
        dw = None
        if weight.requires_grad:
            xmat = xdata.transpose(1, 0, 2, 3).reshape(cin, -1)
            dw = (xmat @ colmat.T).reshape(wdata.shape)
        if bias is None:
            return dx, dw
        return dx, dw, g.sum(axis=(0, 2, 3))

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _make(out, parents, bw, "conv_transpose2d")


# ---------------------------------------------------------------------------
# resampling
# ---------------------------------------------------------------------------


def maxpool2(x: Tensor) -> Tensor:
    """2x2 max pooling with stride 2; ties route the gradient to the first element."""
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"maxpool2 needs even spatial dims, got {(h, w)}")
    blocks = x.data.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
    # argmax returns the first maximal index in row-major (0,0),(0,1),(1,0),(1,1) order
    idx = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]

    def bw(g):
        gb = np.zeros((n, c, h // 2, w // 2, 4), dtype=g.dtype)
        np.put_along_axis(gb, idx[..., None], g[..., None], axis=-1)
        return (gb.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w),)

    return _make(out, (x,), bw, "maxpool2")


def upsample_nearest(x: Tensor, r: int) -> Tensor:
    if r < 1:
        raise ShapeError(f"upsampling factor must be >= 1, got {r}")
    n, c, h, w = x.shape
    out = np.repeat(np.repeat(x.data, r, axis=2), r, axis=3)

    def bw(g):
        return (g.reshape(n, c, h, r, w, r).sum(axis=(3, 5)),)

    return _make(out, (x,), bw, "upsample_nearest")


def _shuffle(a: np.ndarray, r: int) -> np.ndarray:
    n, cr2, h, w = a.shape
    c = cr2 // (r * r)
    # input channel index = C*r*i + C*j + c for output offset (i, j) = (h mod r, w mod r)
    return a.reshape(n, r, r, c, h, w).transpose(0, 3, 4, 1, 5, 2).reshape(n, c, h * r, w * r)


def _unshuffle(a: np.ndarray, r: int) -> np.ndarray:
    n, c, hr, wr = a.shape
    h, w = hr // r, wr // r
    return a.reshape(n, c, h, r, w, r).transpose(0, 3, 5, 1, 2, 4).reshape(n, r * r * c, h, w)


def pixel_shuffle(x: Tensor, r: int) -> Tensor:
    """Rearrange (N, C*r^2, H, W) into (N, C, rH, rW).

    ``out[n, c, h, w] = in[n, C*r*(h % r) + C*(w % r) + c, h // r, w // r]``.
    """
    if x.ndim != 4 or r < 1 or x.shape[1] % (r * r):
        raise ShapeError(f"channel count {x.shape[1] if x.ndim == 4 else x.shape} not divisible by r^2={r * r}")
    return _make(_shuffle(x.data, r), (x,), lambda g: (_unshuffle(g, r),), "pixel_shuffle")


def pixel_unshuffle(x: Tensor, r: int) -> Tensor:
    """Inverse of :func:`pixel_shuffle`."""
    if x.ndim != 4 or r < 1 or x.shape[2] % r or x.shape[3] % r:
        raise ShapeError(f"spatial dims of {x.shape} not divisible by r={r}")
    return _make(_unshuffle(x.data, r), (x,), lambda g: (_shuffle(g, r),), "pixel_unshuffle")


# ---------------------------------------------------------------------------
# normalisation and channel plumbing
# ---------------------------------------------------------------------------


def instance_norm(x: Tensor, gamma: Tensor | None = None, beta: Tensor | None = None, eps: float = 1e-5) -> Tensor:
    """Per-(sample, channel) standardisation followed by an affine map."""
    xd = x.data
    mu = xd.mean(axis=(2, 3), keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=(2, 3), keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    c = x.shape[1]
    g_ = gamma.data.reshape(1, c, 1, 1) if gamma is not None else None
    out = xhat * g_ if g_ is not None else xhat.copy()
    if beta is not None:
        out = out + beta.data.reshape(1, c, 1, 1)

    def bw(g):
        dxhat = g * g_ if g_ is not None else g
        dx = inv * (
            dxhat - dxhat.mean(axis=(2, 3), keepdims=True) - xhat * (dxhat * xhat).mean(axis=(2, 3), keepdims=True)
        )
        grads = [dx]
        if gamma is not None:
            grads.append((g * xhat).sum(axis=(0, 2, 3)))
        if beta is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return grads

    parents = tuple(t for t in (x, gamma, beta) if t is not None)
    return _make(out.astype(xd.dtype, copy=False), parents, bw, "instance_norm")


def concat_channels(parts: Iterable[Tensor]) -> Tensor:
    parts = list(parts)
    if not parts:
        raise ShapeError("concat_channels needs at least one tensor")
    ref = parts[0].shape
    for p in parts[1:]:
        if p.ndim != 4 or (p.shape[0], p.shape[2], p.shape[3]) != (ref[0], ref[2], ref[3]):
            raise ShapeError(f"cannot concatenate {p.shape} with {ref} along channels")
    if len(parts) == 1:
        return parts[0]
    bounds = np.cumsum([0] + [p.shape[1] for p in parts])
    out = np.concatenate([p.data for p in parts], axis=1)

    def bw(g):
        return [g[:, bounds[i] : bounds[i + 1]] for i in range(len(parts))]

    return _make(out, tuple(parts), bw, "concat")


def slice_channels(x: Tensor, start: int, stop: int) -> Tensor:
    shape = x.shape

    def bw(g):
        full = np.zeros(shape, dtype=g.dtype)
        full[:, start:stop] = g
        return (full,)

    return _make(x.data[:, start:stop], (x,), bw, "slice")


# ---------------------------------------------------------------------------
# reverse pass
# ---------------------------------------------------------------------------


def _topological(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order  # parents precede children


def backward(root: Tensor) -> dict[Tensor, np.ndarray]:
    """Accumulate d(root)/d(node) into ``.grad`` of every tracked ancestor.

    Gradients add onto any existing ``.grad`` (call ``zero_grad`` to reset).
    Returns a map from each tracked node to its accumulated gradient.
    """
    if root.size != 1:
        raise ShapeError(f"backward needs a scalar root, got shape {root.shape}")
    if not root.requires_grad:
        return {}
    order = _topological(root)
    local = {id(t): np.zeros(t.shape, dtype=t.dtype) for t in order}
    local[id(root)] = np.ones(root.shape, dtype=root.dtype)
    for node in reversed(order):
        g = local[id(node)]
        if node._backward is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            local[id(parent)] += pg
    result = {}
    for t in order:
        t.grad = local[id(t)] if t.grad is None else t.grad + local[id(t)]
        result[t] = t.grad
    return result
