"""Differentiable layers for the encoder-decoder: conv, pooling, up-convolution, concat, activations.

All layers take NCHW tensors. Convolutions are cross-correlations with zero
"same" padding and stride 1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor
from .errors import ShapeError


def _pad_flat(x: np.ndarray, ph: int, pw: int, extra: int) -> np.ndarray:
    """Zero-pad the spatial dims and flatten them to [N, C, Hp*Wp + extra]."""
    n, c, h, w = x.shape
    hp, wp = h + 2 * ph, w + 2 * pw
    flat = np.zeros((n, c, hp * wp + extra), dtype=x.dtype)
    flat[:, :, :hp * wp].reshape(n, c, hp, wp)[:, :, ph:ph + h, pw:pw + w] = x
    return flat


def _correlate_same(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Zero-padded stride-1 cross-correlation of x [N,C,H,W] with w [O,C,kh,kw] -> [N,O,H,W].

    All kernel taps are evaluated by one matmul per image over the flattened
    padded plane; a tap at (a, b) is then a constant shift a*Wp + b of that plane.
    """
    n, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    ph, pw = kh // 2, kw // 2
    hp, wp = h + 2 * ph, wd + 2 * pw
    size = hp * wp + kw
    xf = _pad_flat(x, ph, pw, kw)
    taps = np.matmul(w.transpose(2, 3, 0, 1).reshape(kh * kw * o, c), xf)
    taps = taps.reshape(n, kh * kw, o, size)
    span = h * wp
    acc = taps[:, 0, :, :span].copy()
    for a in range(kh):
        for b in range(kw):
            off = a * wp + b
            if off:
                acc += taps[:, a * kw + b, :, off:off + span]
    return np.ascontiguousarray(acc.reshape(n, o, h, wp)[:, :, :, :wd])


def _correlate_weight_grad(x: np.ndarray, g: np.ndarray, kh: int, kw: int) -> np.ndarray:
    """d(loss)/d(weight) for _correlate_same, given x [N,C,H,W] and output grad g [N,O,H,W]."""
    n, c, h, wd = x.shape
    o = g.shape[1]
    ph, pw = kh // 2, kw // 2
    wp = wd + 2 * pw
    span = h * wp
    xf = _pad_flat(x, ph, pw, kw)
    gext = np.zeros((n, o, h, wp), dtype=g.dtype)
    gext[:, :, :, :wd] = g
    gext = gext.reshape(n, o, span)
    gw = np.empty((o, c, kh, kw), dtype=np.result_type(x.dtype, g.dtype))
    for a in range(kh):
        for b in range(kw):
            off = a * wp + b
            gw[:, :, a, b] = np.matmul(gext, xf[:, :, off:off + span].transpose(0, 2, 1)).sum(axis=0)
    return gw


def _he_normal(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(np.float32)


@dataclass
class ConvSpec:
    in_channels: int
    out_channels: int
    weight: Tensor
    bias: Tensor
    kernel_height: int = 3
    kernel_width: int = 3

    def __post_init__(self) -> None:
        expected = (self.out_channels, self.in_channels, self.kernel_height, self.kernel_width)
        if self.weight.shape != expected:
            raise ShapeError(f"conv weight shape {self.weight.shape}, expected {expected}")
        if self.bias.shape != (self.out_channels,):
            raise ShapeError(f"conv bias shape {self.bias.shape}, expected ({self.out_channels},)")
        if self.kernel_height % 2 == 0 or self.kernel_width % 2 == 0:
            raise ShapeError("same padding needs odd kernel dims")

    @classmethod
    def create(cls, in_channels: int, out_channels: int, rng: np.random.Generator,
               kernel: int = 3) -> "ConvSpec":
        fan_in = in_channels * kernel * kernel
        w = _he_normal(rng, (out_channels, in_channels, kernel, kernel), fan_in)
        return cls(
            in_channels,
            out_channels,
            Tensor(w, requires_grad=True),
            Tensor(np.zeros(out_channels, np.float32), requires_grad=True),
            kernel,
            kernel,
        )

    def parameters(self) -> dict[str, Tensor]:
        return {"weight": self.weight, "bias": self.bias}


def conv2d(x: Tensor, spec: ConvSpec) -> Tensor:
    if x.data.ndim != 4:
        raise ShapeError(f"conv2d expects [N,C,H,W], got {x.shape}")
    if x.shape[1] != spec.in_channels:
        raise ShapeError(f"conv2d got {x.shape[1]} channels, layer expects {spec.in_channels}")
    w, b = spec.weight, spec.bias
    out = _correlate_same(x.data, w.data)
    out += b.data[None, :, None, None]

    def grad_fn(g):
        kh, kw = spec.kernel_height, spec.kernel_width
        flipped = np.ascontiguousarray(w.data[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
        gx = _correlate_same(g, flipped) if x.requires_grad else None
        gw = _correlate_weight_grad(x.data, g, kh, kw) if w.requires_grad else None
        gb = g.sum(axis=(0, 2, 3), dtype=np.float64).astype(b.dtype) if b.requires_grad else None
        return gx, gw, gb

    return Tensor._make(out, (x, w, b), grad_fn, "conv2d")


@dataclass(frozen=True)
class PoolSpec:
    window: int = 2
    stride: int = 2


def max_pool2d(x: Tensor, spec: PoolSpec = PoolSpec()) -> Tensor:
    """2x2 / stride-2 max pooling; ties send the gradient to the first element in row-major order."""
    if spec.window != 2 or spec.stride != 2:
        raise ShapeError("only 2x2 windows with stride 2 are supported")
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"max_pool2d needs even spatial dims, got {h}x{w}")
    windows = x.data.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    windows = windows.reshape(n, c, h // 2, w // 2, 4)
    idx = windows.argmax(axis=-1)
    out = np.take_along_axis(windows, idx[..., None], axis=-1)[..., 0]

    def grad_fn(g):
        routed = np.zeros((n, c, h // 2, w // 2, 4), dtype=g.dtype)
        np.put_along_axis(routed, idx[..., None], g[..., None], axis=-1)
        routed = routed.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
        return (routed.reshape(n, c, h, w),)

    return Tensor._make(np.ascontiguousarray(out), (x,), grad_fn, "max_pool2d")


@dataclass
class TransposeConvSpec:
    """2x2 stride-2 up-convolution that halves the channel count. Weight layout [in, out, 2, 2]."""

    in_channels: int
    weight: Tensor
    bias: Tensor

    def __post_init__(self) -> None:
        if self.in_channels % 2:
            raise ShapeError(f"transpose conv needs an even channel count, got {self.in_channels}")
        expected = (self.in_channels, self.out_channels, 2, 2)
        if self.weight.shape != expected:
            raise ShapeError(f"transpose conv weight shape {self.weight.shape}, expected {expected}")
        if self.bias.shape != (self.out_channels,):
            raise ShapeError(f"transpose conv bias shape {self.bias.shape}")

    @property
    def out_channels(self) -> int:
        return self.in_channels // 2

    @classmethod
    def create(cls, in_channels: int, rng: np.random.Generator) -> "TransposeConvSpec":
        if in_channels % 2:
            raise ShapeError(f"transpose conv needs an even channel count, got {in_channels}")
        out = in_channels // 2
        w = _he_normal(rng, (in_channels, out, 2, 2), in_channels)
        return cls(in_channels, Tensor(w, requires_grad=True),
                   Tensor(np.zeros(out, np.float32), requires_grad=True))

    def parameters(self) -> dict[str, Tensor]:
        return {"weight": self.weight, "bias": self.bias}


def transpose_conv2d(x: Tensor, spec: TransposeConvSpec) -> Tensor:
    n, c, h, w = x.shape
    if c % 2:
        raise ShapeError(f"transpose_conv2d needs an even channel count, got {c}")
    if c != spec.in_channels:
        raise ShapeError(f"transpose_conv2d got {c} channels, layer expects {spec.in_channels}")
    o = spec.out_channels
    wt, bias = spec.weight, spec.bias
    wmat = wt.data.reshape(c, o * 4)
    cols = x.data.transpose(1, 0, 2, 3).reshape(c, -1)
    y = (wmat.T @ cols).reshape(o, 2, 2, n, h, w)
    out = y.transpose(3, 0, 4, 1, 5, 2).reshape(n, o, 2 * h, 2 * w)
    out = out + bias.data[None, :, None, None]

    def grad_fn(g):
        gr = g.reshape(n, o, h, 2, w, 2).transpose(1, 3, 5, 0, 2, 4).reshape(o * 4, -1)
        gx = (wmat @ gr).reshape(c, n, h, w).transpose(1, 0, 2, 3) if x.requires_grad else None
        gw = (cols @ gr.T).reshape(c, o, 2, 2) if wt.requires_grad else None
        gb = g.sum(axis=(0, 2, 3), dtype=np.float64).astype(bias.dtype) if bias.requires_grad else None
        return (None if gx is None else np.ascontiguousarray(gx)), gw, gb

    return Tensor._make(np.ascontiguousarray(out), (x, wt, bias), grad_fn, "transpose_conv2d")


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 4 or b.data.ndim != 4:
        raise ShapeError("concat_channels expects two [N,C,H,W] tensors")
    if (a.shape[0], *a.shape[2:]) != (b.shape[0], *b.shape[2:]):
        raise ShapeError(f"cannot concat {a.shape} with {b.shape}")
    c1 = a.shape[1]

    def grad_fn(g):
        return np.ascontiguousarray(g[:, :c1]), np.ascontiguousarray(g[:, c1:])

    return Tensor._make(np.concatenate([a.data, b.data], axis=1), (a, b), grad_fn, "concat")


def relu(x: Tensor) -> Tensor:
    out = np.maximum(x.data, 0)

    def grad_fn(g):
        return (g * (x.data > 0),)

    return Tensor._make(out, (x,), grad_fn, "relu")


def sigmoid(x: Tensor) -> Tensor:
    z = x.data
    ez = np.exp(-np.abs(z))
    out = np.where(z >= 0, 1.0 / (1.0 + ez), ez / (1.0 + ez)).astype(z.dtype, copy=False)
    # keep saturated outputs strictly inside (0, 1)
    info = np.finfo(out.dtype)
    out = np.clip(out, info.tiny, 1.0 - info.epsneg)

    def grad_fn(g):
        return (g * out * (1 - out),)

    return Tensor._make(out, (x,), grad_fn, "sigmoid")


def activation(kind: str, x: Tensor) -> Tensor:
    if kind == "relu":
        return relu(x)
    if kind == "sigmoid":
        return sigmoid(x)
    raise ValueError(f"unknown activation {kind!r}")
