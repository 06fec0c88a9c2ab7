"""Neural network layers: 2D/3D convolution and transposed convolution,
batch normalization, pooling, residual blocks, linear head, dropout.

Convolutions are im2col + GEMM; the transposed convolutions are exact
adjoints of the matching convolutions (same kernel/stride/padding), which
the tests verify through inner-product identities. All ops build autodiff
nodes via :func:`actionflow.tensor.make_op`.

Shape rule shared by every strided op:
    out = floor((in + 2*pad - k) / stride) + 1   (must be >= 1)
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from .errors import ShapeError
from .tensor import Parameter, Tensor, make_op, relu

__all__ = [
    "ConvSpec",
    "BlockSpec",
    "conv_out_extent",
    "deconv_out_extent",
    "conv2d",
    "conv3d",
    "deconv2d",
    "deconv3d",
    "maxpool2d",
    "batchnorm",
    "dropout",
    "linear",
    "global_avg_pool",
    "Conv2d",
    "Conv3d",
    "Deconv2d",
    "Deconv3d",
    "BatchNorm",
    "MaxPool2d",
    "Linear",
    "Dropout",
    "BasicBlock2d",
    "BasicBlock3d",
]


def conv_out_extent(n: int, k: int, s: int, p: int) -> int:
    out = (n + 2 * p - k) // s + 1
    if out < 1 or n + 2 * p < k:
        raise ShapeError(f"conv extent {n} too small for kernel {k}, stride {s}, pad {p}")
    return out


def deconv_out_extent(n: int, k: int, s: int, p: int) -> int:
    return (n - 1) * s - 2 * p + k


@dataclass(frozen=True)
class ConvSpec:
    """Declarative convolution geometry; kernel/stride/pad are per-dim tuples."""

    in_channels: int
    out_channels: int
    kernel: Tuple[int, ...]
    stride: Tuple[int, ...]
    pad: Tuple[int, ...]

    def out_shape(self, spatial: Sequence[int]) -> Tuple[int, ...]:
        return tuple(
            conv_out_extent(n, k, s, p)
            for n, k, s, p in zip(spatial, self.kernel, self.stride, self.pad)
        )


@dataclass(frozen=True)
class BlockSpec:
    """Residual block geometry: two 3x3(x3) convs, optional projection shortcut."""

    in_channels: int
    out_channels: int
    stride: Tuple[int, ...]

    @property
    def needs_projection(self) -> bool:
        return self.in_channels != self.out_channels or any(s != 1 for s in self.stride)


# ---------------------------------------------------------------------------
# im2col / col2im kernels (2D and 3D)


def _pad2d(x, ph, pw, value=0.0):
    if ph == 0 and pw == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)), constant_values=value)


def _pad3d(x, pt, ph, pw, value=0.0):
    if pt == 0 and ph == 0 and pw == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (pt, pt), (ph, ph), (pw, pw)), constant_values=value)


def _im2col2d(xp, kh, kw, sh, sw, ho, wo):
    n, c = xp.shape[:2]
    cols = np.empty((c, kh, kw, n, ho, wo), xp.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, i, j] = xp[:, :, i : i + sh * (ho - 1) + 1 : sh, j : j + sw * (wo - 1) + 1 : sw].transpose(1, 0, 2, 3)
    return cols.reshape(c * kh * kw, n * ho * wo)


def _col2im2d(cols, n, c, h, w, kh, kw, sh, sw, ph, pw, ho, wo):
    xp = np.zeros((c, n, h + 2 * ph, w + 2 * pw), cols.dtype)
    cols = cols.reshape(c, kh, kw, n, ho, wo)
    for i in range(kh):
        for j in range(kw):
            xp[:, :, i : i + sh * (ho - 1) + 1 : sh, j : j + sw * (wo - 1) + 1 : sw] += cols[:, i, j]
    xp = xp.transpose(1, 0, 2, 3)
    if ph or pw:
        xp = xp[:, :, ph : ph + h, pw : pw + w]
    return np.ascontiguousarray(xp)


def _im2col3d(xp, kt, kh, kw, st, sh, sw, to, ho, wo):
    n, c = xp.shape[:2]
    cols = np.empty((c, kt, kh, kw, n, to, ho, wo), xp.dtype)
    for a in range(kt):
        for i in range(kh):
            for j in range(kw):
                cols[:, a, i, j] = xp[
                    :,
                    :,
                    a : a + st * (to - 1) + 1 : st,
                    i : i + sh * (ho - 1) + 1 : sh,
                    j : j + sw * (wo - 1) + 1 : sw,
                ].transpose(1, 0, 2, 3, 4)
    return cols.reshape(c * kt * kh * kw, n * to * ho * wo)


def _col2im3d(cols, n, c, t, h, w, kt, kh, kw, st, sh, sw, pt, ph, pw, to, ho, wo):
    xp = np.zeros((c, n, t + 2 * pt, h + 2 * ph, w + 2 * pw), cols.dtype)
    cols = cols.reshape(c, kt, kh, kw, n, to, ho, wo)
    for a in range(kt):
        for i in range(kh):
            for j in range(kw):
                xp[
                    :,
                    :,
                    a : a + st * (to - 1) + 1 : st,
                    i : i + sh * (ho - 1) + 1 : sh,
                    j : j + sw * (wo - 1) + 1 : sw,
                ] += cols[:, a, i, j]
    xp = xp.transpose(1, 0, 2, 3, 4)
    if pt or ph or pw:
        xp = xp[:, :, pt : pt + t, ph : ph + h, pw : pw + w]
    return np.ascontiguousarray(xp)


# ---------------------------------------------------------------------------
# functional ops


def _check_channels(x_ch, w_ch, who):
    if x_ch != w_ch:
        raise ShapeError(f"{who}: input has {x_ch} channels, weight expects {w_ch}")


def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None, stride=(1, 1), pad=(0, 0)) -> Tensor:
    """x: (N,C,H,W), weight: (Co,Ci,kh,kw), bias: (Co,) or None."""
    n, c, h, w = x.shape
    co, ci, kh, kw = weight.shape
    _check_channels(c, ci, "conv2d")
    sh, sw = stride
    ph, pw = pad
    ho = conv_out_extent(h, kh, sh, ph)
    wo = conv_out_extent(w, kw, sw, pw)
    cols = _im2col2d(_pad2d(x.data, ph, pw), kh, kw, sh, sw, ho, wo)
    wmat = weight.data.reshape(co, ci * kh * kw)
    out = wmat @ cols
    if bias is not None:
        out += bias.data[:, None]
    out = np.ascontiguousarray(out.reshape(co, n, ho, wo).transpose(1, 0, 2, 3))

    def bwd(g):
        gmat = g.transpose(1, 0, 2, 3).reshape(co, n * ho * wo)
        dw = (gmat @ cols.T).reshape(weight.shape)
        dx = _col2im2d(wmat.T @ gmat, n, c, h, w, kh, kw, sh, sw, ph, pw, ho, wo)
        db = None if bias is None else g.sum(axis=(0, 2, 3))
        return (dx, dw) if bias is None else (dx, dw, db)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_op(out, parents, bwd)


def conv3d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None, stride=(1, 1, 1), pad=(0, 0, 0)) -> Tensor:
    """x: (N,C,T,H,W), weight: (Co,Ci,kt,kh,kw); dims ordered (t,h,w)."""
    n, c, t, h, w = x.shape
    co, ci, kt, kh, kw = weight.shape
    _check_channels(c, ci, "conv3d")
    st, sh, sw = stride
    pt, ph, pw = pad
    to = conv_out_extent(t, kt, st, pt)
    ho = conv_out_extent(h, kh, sh, ph)
    wo = conv_out_extent(w, kw, sw, pw)
    cols = _im2col3d(_pad3d(x.data, pt, ph, pw), kt, kh, kw, st, sh, sw, to, ho, wo)
    wmat = weight.data.reshape(co, ci * kt * kh * kw)
    out = wmat @ cols
    if bias is not None:
        out += bias.data[:, None]
    out = np.ascontiguousarray(out.reshape(co, n, to, ho, wo).transpose(1, 0, 2, 3, 4))

    def bwd(g):
        gmat = g.transpose(1, 0, 2, 3, 4).reshape(co, n * to * ho * wo)
        dw = (gmat @ cols.T).reshape(weight.shape)
        dx = _col2im3d(wmat.T @ gmat, n, c, t, h, w, kt, kh, kw, st, sh, sw, pt, ph, pw, to, ho, wo)
        db = None if bias is None else g.sum(axis=(0, 2, 3, 4))
        return (dx, dw) if bias is None else (dx, dw, db)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_op(out, parents, bwd)


def _deconv_extents(in_extents, kernel, stride, pad, out_extents):
    if out_extents is None:
        out_extents = tuple(
            deconv_out_extent(n, k, s, p) for n, k, s, p in zip(in_extents, kernel, stride, pad)
        )
    for n, k, s, p, o in zip(in_extents, kernel, stride, pad, out_extents):
        if o < 1 or conv_out_extent(o, k, s, p) != n:
            raise ShapeError(
                f"deconv output extent {o} incompatible with input {n} (k={k}, s={s}, p={p})"
            )
    return tuple(out_extents)


def deconv2d(x: Tensor, weight: Tensor, stride=(2, 2), pad=(0, 0), out_hw=None) -> Tensor:
    """Transposed conv2d. x: (N,Ci,H,W), weight: (Ci,Co,kh,kw).

    Adjoint of conv2d with the same kernel/stride/pad: feeding a conv2d
    weight (Co,Ci,kh,kw) here maps Co channels back to Ci channels.
    ``out_hw`` pins the output size when the stride makes it ambiguous.
    """
    n, c, h, w = x.shape
    ci, co, kh, kw = weight.shape
    _check_channels(c, ci, "deconv2d")
    sh, sw = stride
    ph, pw = pad
    oh, ow = _deconv_extents((h, w), (kh, kw), stride, pad, out_hw)
    xmat = x.data.transpose(1, 0, 2, 3).reshape(ci, n * h * w)
    wmat = weight.data.reshape(ci, co * kh * kw)
    out = _col2im2d(wmat.T @ xmat, n, co, oh, ow, kh, kw, sh, sw, ph, pw, h, w)

    def bwd(g):
        gcols = _im2col2d(_pad2d(g, ph, pw), kh, kw, sh, sw, h, w)
        dxmat = wmat @ gcols
        dx = np.ascontiguousarray(dxmat.reshape(ci, n, h, w).transpose(1, 0, 2, 3))
        dw = (xmat @ gcols.T).reshape(weight.shape)
        return dx, dw

    return make_op(out, (x, weight), bwd)


def deconv3d(x: Tensor, weight: Tensor, stride=(2, 2, 2), pad=(0, 0, 0), out_thw=None) -> Tensor:
    """Transposed conv3d. x: (N,Ci,T,H,W), weight: (Ci,Co,kt,kh,kw)."""
    n, c, t, h, w = x.shape
    ci, co, kt, kh, kw = weight.shape
    _check_channels(c, ci, "deconv3d")
    st, sh, sw = stride
    pt, ph, pw = pad
    ot, oh, ow = _deconv_extents((t, h, w), (kt, kh, kw), stride, pad, out_thw)
    xmat = x.data.transpose(1, 0, 2, 3, 4).reshape(ci, n * t * h * w)
    wmat = weight.data.reshape(ci, co * kt * kh * kw)
    out = _col2im3d(wmat.T @ xmat, n, co, ot, oh, ow, kt, kh, kw, st, sh, sw, pt, ph, pw, t, h, w)

    def bwd(g):
        gcols = _im2col3d(_pad3d(g, pt, ph, pw), kt, kh, kw, st, sh, sw, t, h, w)
        dxmat = wmat @ gcols
        dx = np.ascontiguousarray(dxmat.reshape(ci, n, t, h, w).transpose(1, 0, 2, 3, 4))
        dw = (xmat @ gcols.T).reshape(weight.shape)
        return dx, dw

    return make_op(out, (x, weight), bwd)


def maxpool2d(x: Tensor, kernel=3, stride=2, pad=1) -> Tensor:
    n, c, h, w = x.shape
    k, s, p = kernel, stride, pad
    if k > h + 2 * p or k > w + 2 * p:
        raise ShapeError(f"pool window {k} larger than padded input {h}x{w}")
    ho = conv_out_extent(h, k, s, p)
    wo = conv_out_extent(w, k, s, p)
    neg = np.finfo(x.data.dtype).min
    cols = _im2col2d(_pad2d(x.data, p, p, value=neg), k, k, s, s, ho, wo)
    cols = cols.reshape(c, k * k, n * ho * wo)
    arg = cols.argmax(axis=1)
    out = np.take_along_axis(cols, arg[:, None, :], axis=1)[:, 0]
    out = np.ascontiguousarray(out.reshape(c, n, ho, wo).transpose(1, 0, 2, 3))

    def bwd(g):
        gmat = g.transpose(1, 0, 2, 3).reshape(c, 1, n * ho * wo)
        gcols = np.zeros((c, k * k, n * ho * wo), g.dtype)
        np.put_along_axis(gcols, arg[:, None, :], gmat, axis=1)
        return (_col2im2d(gcols.reshape(c * k * k, n * ho * wo), n, c, h, w, k, k, s, s, p, p, ho, wo),)

    return make_op(out, (x,), bwd)


def batchnorm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    mode: str = "train",
    momentum: float = 0.9,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel normalization over batch and space (axis 1 is channels).

    Train mode uses batch statistics and updates the running buffers in
    place; eval mode uses the running buffers.
    """
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"batchnorm affine parameters must have shape ({c},)")
    axes = (0,) + tuple(range(2, x.ndim))
    shape = (1, c) + (1,) * (x.ndim - 2)
    if mode == "train":
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        running_mean *= momentum
        running_mean += (1.0 - momentum) * mu
        running_var *= momentum
        running_var += (1.0 - momentum) * var
    elif mode == "eval":
        mu, var = running_mean, running_var
    else:
        raise ValueError(f"unknown mode {mode!r}")
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu.reshape(shape)) * inv.reshape(shape)
    out = gamma.data.reshape(shape) * xhat + beta.data.reshape(shape)

    count = x.size // c

    def bwd(g):
        dgamma = (g * xhat).sum(axis=axes)
        dbeta = g.sum(axis=axes)
        gscaled = g * gamma.data.reshape(shape)
        if mode == "eval":
            dx = gscaled * inv.reshape(shape)
        else:
            m1 = gscaled.sum(axis=axes) / count
            m2 = (gscaled * xhat).sum(axis=axes) / count
            dx = inv.reshape(shape) * (gscaled - m1.reshape(shape) - xhat * m2.reshape(shape))
        return dx, dgamma, dbeta

    return make_op(out, (x, gamma, beta), bwd)


def dropout(x: Tensor, p: float, mode: str, rng: Optional[np.random.Generator] = None) -> Tensor:
    """Inverted dropout: train zeroes with probability p and rescales
    survivors by 1/(1-p); eval is the identity."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if mode == "eval" or p == 0.0:
        return make_op(x.data.copy(), (x,), lambda g: (g.copy(),))
    if rng is None:
        raise ValueError("dropout in train mode needs an rng")
    mask = (rng.random(x.shape) >= p).astype(x.data.dtype) / (1.0 - p)
    return make_op(x.data * mask, (x,), lambda g: (g * mask,))


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """x: (N,Ci), weight: (Co,Ci), bias: (Co,)."""
    if x.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ShapeError(f"linear: input {x.shape} does not match weight {weight.shape}")
    out = x.data @ weight.data.T
    if bias is not None:
        out += bias.data

    def bwd(g):
        dx = g @ weight.data
        dw = g.T @ x.data
        db = None if bias is None else g.sum(axis=0)
        return (dx, dw) if bias is None else (dx, dw, db)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_op(out, parents, bwd)


def global_avg_pool(x: Tensor) -> Tensor:
    """(N,C,...) -> (N,C), averaging all trailing dims."""
    axes = tuple(range(2, x.ndim))
    count = 1
    for ax in axes:
        count *= x.shape[ax]
    out = x.data.mean(axis=axes)

    def bwd(g):
        return (np.broadcast_to(g.reshape(g.shape + (1,) * len(axes)) / count, x.shape).copy(),)

    return make_op(out, (x,), bwd)


# ---------------------------------------------------------------------------
# layer objects: hold named Parameters, expose __call__ building graph nodes


def _he_normal(rng, shape, fan_in, dtype):
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


class Conv2d:
    def __init__(self, name, in_ch, out_ch, kernel, stride=1, pad=0, bias=True, rng=None, dtype=np.float32):
        kh, kw = (kernel, kernel) if isinstance(kernel, int) else kernel
        self.spec = ConvSpec(
            in_ch,
            out_ch,
            (kh, kw),
            (stride, stride) if isinstance(stride, int) else tuple(stride),
            (pad, pad) if isinstance(pad, int) else tuple(pad),
        )
        fan_in = in_ch * kh * kw
        self.weight = Parameter(_he_normal(rng, (out_ch, in_ch, kh, kw), fan_in, dtype), f"{name}.weight")
        self.bias = Parameter(np.zeros(out_ch, dtype), f"{name}.bias") if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight, self.bias, self.spec.stride, self.spec.pad)

    def params(self):
        return [self.weight] + ([self.bias] if self.bias is not None else [])


class Conv3d:
    def __init__(self, name, in_ch, out_ch, kernel, stride=1, pad=0, bias=True, rng=None, dtype=np.float32):
        kt, kh, kw = (kernel,) * 3 if isinstance(kernel, int) else kernel
        self.spec = ConvSpec(
            in_ch,
            out_ch,
            (kt, kh, kw),
            (stride,) * 3 if isinstance(stride, int) else tuple(stride),
            (pad,) * 3 if isinstance(pad, int) else tuple(pad),
        )
        fan_in = in_ch * kt * kh * kw
        self.weight = Parameter(_he_normal(rng, (out_ch, in_ch, kt, kh, kw), fan_in, dtype), f"{name}.weight")
        self.bias = Parameter(np.zeros(out_ch, dtype), f"{name}.bias") if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return conv3d(x, self.weight, self.bias, self.spec.stride, self.spec.pad)

    def params(self):
        return [self.weight] + ([self.bias] if self.bias is not None else [])


class Deconv2d:
    def __init__(self, name, in_ch, out_ch, kernel=4, stride=2, pad=1, rng=None, dtype=np.float32):
        kh, kw = (kernel, kernel) if isinstance(kernel, int) else kernel
        self.stride = (stride, stride) if isinstance(stride, int) else tuple(stride)
        self.pad = (pad, pad) if isinstance(pad, int) else tuple(pad)
        fan_in = in_ch * kh * kw
        self.weight = Parameter(_he_normal(rng, (in_ch, out_ch, kh, kw), fan_in, dtype), f"{name}.weight")

    def __call__(self, x: Tensor, out_hw=None) -> Tensor:
        return deconv2d(x, self.weight, self.stride, self.pad, out_hw)

    def params(self):
        return [self.weight]


class Deconv3d:
    def __init__(self, name, in_ch, out_ch, kernel=4, stride=2, pad=1, rng=None, dtype=np.float32):
        kt, kh, kw = (kernel,) * 3 if isinstance(kernel, int) else kernel
        self.stride = (stride,) * 3 if isinstance(stride, int) else tuple(stride)
        self.pad = (pad,) * 3 if isinstance(pad, int) else tuple(pad)
        fan_in = in_ch * kt * kh * kw
        self.weight = Parameter(_he_normal(rng, (in_ch, out_ch, kt, kh, kw), fan_in, dtype), f"{name}.weight")

    def __call__(self, x: Tensor, out_thw=None) -> Tensor:
        return deconv3d(x, self.weight, self.stride, self.pad, out_thw)

    def params(self):
        return [self.weight]


class BatchNorm:
    def __init__(self, name, channels, momentum=0.9, eps=1e-5, dtype=np.float32):
        self.gamma = Parameter(np.ones(channels, dtype), f"{name}.gamma")
        self.beta = Parameter(np.zeros(channels, dtype), f"{name}.beta")
        self.running_mean = np.zeros(channels, dtype)
        self.running_var = np.ones(channels, dtype)
        self.momentum = momentum
        self.eps = eps
        self.name = name

    def __call__(self, x: Tensor, mode: str) -> Tensor:
        return batchnorm(
            x, self.gamma, self.beta, self.running_mean, self.running_var, mode, self.momentum, self.eps
        )

    def params(self):
        return [self.gamma, self.beta]

    def buffers(self):
        return {f"{self.name}.running_mean": self.running_mean, f"{self.name}.running_var": self.running_var}


class MaxPool2d:
    def __init__(self, kernel=3, stride=2, pad=1):
        self.kernel, self.stride, self.pad = kernel, stride, pad

    def __call__(self, x: Tensor) -> Tensor:
        return maxpool2d(x, self.kernel, self.stride, self.pad)

    def params(self):
        return []


class Linear:
    def __init__(self, name, in_features, out_features, rng=None, dtype=np.float32):
        self.weight = Parameter(_he_normal(rng, (out_features, in_features), in_features, dtype), f"{name}.weight")
        self.bias = Parameter(np.zeros(out_features, dtype), f"{name}.bias")

    def __call__(self, x: Tensor) -> Tensor:
        return linear(x, self.weight, self.bias)

    def params(self):
        return [self.weight, self.bias]


class Dropout:
    def __init__(self, p=0.5):
        if not 0.0 <= p < 1.0:
            raise ValueError(f"dropout probability must be in [0, 1), got {p}")
        self.p = p

    def __call__(self, x: Tensor, mode: str, rng=None) -> Tensor:
        return dropout(x, self.p, mode, rng)

    def params(self):
        return []


class _BasicBlock:
    """Shared residual-block logic; subclasses pick the conv family."""

    conv_cls: type
    ones: Tuple[int, ...]

    def __init__(self, name, in_ch, out_ch, stride, use_bn=True, rng=None, dtype=np.float32):
        one = self.ones
        stride = (stride,) * len(one) if isinstance(stride, int) else tuple(stride)
        self.spec = BlockSpec(in_ch, out_ch, stride)
        kw = dict(rng=rng, dtype=dtype)
        self.conv1 = self.conv_cls(f"{name}.conv1", in_ch, out_ch, 3, stride=stride, pad=1, bias=not use_bn, **kw)
        self.conv2 = self.conv_cls(f"{name}.conv2", out_ch, out_ch, 3, stride=one, pad=1, bias=not use_bn, **kw)
        self.bn1 = BatchNorm(f"{name}.bn1", out_ch, dtype=dtype) if use_bn else None
        self.bn2 = BatchNorm(f"{name}.bn2", out_ch, dtype=dtype) if use_bn else None
        if self.spec.needs_projection:
            self.proj = self.conv_cls(f"{name}.proj", in_ch, out_ch, 1, stride=stride, pad=0, bias=not use_bn, **kw)
            self.bn_proj = BatchNorm(f"{name}.bnp", out_ch, dtype=dtype) if use_bn else None
        else:
            self.proj = None
            self.bn_proj = None

    def __call__(self, x: Tensor, mode: str = "train") -> Tensor:
        h = self.conv1(x)
        if self.bn1 is not None:
            h = self.bn1(h, mode)
        h = relu(h)
        h = self.conv2(h)
        if self.bn2 is not None:
            h = self.bn2(h, mode)
        shortcut = x
        if self.proj is not None:
            shortcut = self.proj(x)
            if self.bn_proj is not None:
                shortcut = self.bn_proj(shortcut, mode)
        return relu(h + shortcut)

    def params(self):
        out = self.conv1.params() + self.conv2.params()
        for bn in (self.bn1, self.bn2, self.bn_proj):
            if bn is not None:
                out += bn.params()
        if self.proj is not None:
            out += self.proj.params()
        return out

    def buffers(self):
        out = {}
        for bn in (self.bn1, self.bn2, self.bn_proj):
            if bn is not None:
                out.update(bn.buffers())
        return out


class BasicBlock2d(_BasicBlock):
    conv_cls = Conv2d
    ones = (1, 1)


class BasicBlock3d(_BasicBlock):
    conv_cls = Conv3d
    ones = (1, 1, 1)
