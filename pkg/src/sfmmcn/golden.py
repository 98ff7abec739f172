"""Cycle-free reference model of every network operation.

All arithmetic goes through :mod:`sfmmcn.fxp` with one fixed accumulation
order, which the simulated datapath reproduces:

* the bias is promoted to Q16.16 and opens the output sum;
* each input channel's window is accumulated from zero into a partial
  output (saturating after every product), then added into the sum;
* a residual term, if any, is added last;
* the sum is narrowed once, back to Q8.8.
"""

from dataclasses import dataclass

import numpy as np

from . import fxp


class ShapeError(ValueError):
    pass


@dataclass(frozen=True)
class Tensor:
    """(channels, height, width) tensor of raw Q8.8 values."""

    data: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.data, dtype=np.int64)
        if d.ndim != 3 or min(d.shape) < 1:
            raise ShapeError(f"tensor must be 3-d with all dims >= 1, got {d.shape}")
        if d.min() < fxp.FIXED_MIN or d.max() > fxp.FIXED_MAX:
            raise ShapeError("tensor values outside the 16-bit range")
        object.__setattr__(self, "data", d)

    @property
    def shape(self):
        return tuple(self.data.shape)

    @classmethod
    def from_real(cls, x):
        return cls(fxp.quantize_array(x))

    @classmethod
    def zeros(cls, c, h, w):
        return cls(np.zeros((c, h, w), dtype=np.int64))

    def to_real(self):
        return self.data / fxp.ONE

    def __eq__(self, other):
        return isinstance(other, Tensor) and np.array_equal(self.data, other.data)

    def __hash__(self):
        return hash((self.shape, self.data.tobytes()))


@dataclass(frozen=True)
class ConvParams:
    weight: np.ndarray  # (out, in, kh, kw) raw Q8.8
    bias: np.ndarray  # (out,) raw Q8.8
    stride: int = 1
    pad: int = 0

    def __post_init__(self):
        w = np.asarray(self.weight, dtype=np.int64)
        b = np.asarray(self.bias, dtype=np.int64)
        if w.ndim != 4:
            raise ShapeError(f"conv weight must be 4-d, got {w.shape}")
        if w.shape[2] != w.shape[3] or w.shape[2] not in (1, 3):
            raise ShapeError(f"unsupported kernel {w.shape[2]}x{w.shape[3]}")
        if b.shape != (w.shape[0],):
            raise ShapeError(f"bias shape {b.shape} does not match {w.shape[0]} outputs")
        if self.stride not in (1, 2):
            raise ShapeError(f"unsupported stride {self.stride}")
        object.__setattr__(self, "weight", w)
        object.__setattr__(self, "bias", b)

    @property
    def out_channels(self):
        return self.weight.shape[0]

    @property
    def in_channels(self):
        return self.weight.shape[1]

    @property
    def kernel(self):
        return self.weight.shape[2]


def conv_out_size(n, k, stride, pad):
    return (n + 2 * pad - k) // stride + 1


def pad_input(x, pad):
    if pad == 0:
        return x
    return np.pad(x, ((0, 0), (pad, pad), (pad, pad)))


def conv2d_acc(x, p, residual=None):
    """Q16.16 sums of a convolution, before narrowing.

    ``residual`` is an optional (out, oh, ow) array of Q16.16 values added
    after the last input channel.
    """
    data = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.int64)
    c, h, w = data.shape
    if c != p.in_channels:
        raise ShapeError(f"input has {c} channels, kernel expects {p.in_channels}")
    k, s = p.kernel, p.stride
    oh, ow = conv_out_size(h, k, s, p.pad), conv_out_size(w, k, s, p.pad)
    if oh < 1 or ow < 1:
        raise ShapeError(f"{h}x{w} input too small for {k}x{k} kernel")
    xp = pad_input(data, p.pad)
    total = np.broadcast_to(fxp.promote_array(p.bias)[:, None, None],
                            (p.out_channels, oh, ow)).copy()
    for ci in range(c):
        partial = np.zeros((p.out_channels, oh, ow), dtype=np.int64)
        for ky in range(k):
            for kx in range(k):
                patch = xp[ci, ky:ky + s * (oh - 1) + 1:s, kx:kx + s * (ow - 1) + 1:s]
                prod = p.weight[:, ci, ky, kx][:, None, None] * patch[None]
                partial = fxp.add_sat_array(partial, prod)
        total = fxp.add_sat_array(total, partial)
    if residual is not None:
        residual = np.asarray(residual, dtype=np.int64)
        if residual.shape != total.shape:
            raise ShapeError(f"residual {residual.shape} does not match output {total.shape}")
        total = fxp.add_sat_array(total, residual)
    return total


def conv2d(x, p, residual=None):
    return Tensor(fxp.narrow_array(conv2d_acc(x, p, residual)))


def maxpool2(x):
    c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"maxpool2 needs even spatial dims, got {h}x{w}")
    d = x.data.reshape(c, h // 2, 2, w // 2, 2)
    return Tensor(d.max(axis=(2, 4)))


def relu(x):
    return Tensor(np.maximum(x.data, 0))


def dense_acc(x, weight, bias):
    x = np.asarray(x, dtype=np.int64).ravel()
    weight = np.asarray(weight, dtype=np.int64)
    bias = np.asarray(bias, dtype=np.int64)
    if weight.ndim != 2 or weight.shape[1] != x.size:
        raise ShapeError(f"dense weight {weight.shape} does not take {x.size} inputs")
    if bias.shape != (weight.shape[0],):
        raise ShapeError(f"dense bias {bias.shape} does not match {weight.shape[0]} outputs")
    partial = np.zeros(weight.shape[0], dtype=np.int64)
    for i in range(x.size):
        partial = fxp.add_sat_array(partial, weight[:, i] * x[i])
    return fxp.add_sat_array(fxp.promote_array(bias), partial)


def dense(x, weight, bias):
    return fxp.narrow_array(dense_acc(x, weight, bias))


def residual_add(main, shortcut):
    if main.shape != shortcut.shape:
        raise ShapeError(f"residual shapes differ: {main.shape} vs {shortcut.shape}")
    s = fxp.add_sat_array(fxp.promote_array(main.data), fxp.promote_array(shortcut.data))
    return Tensor(fxp.narrow_array(s))


@dataclass(frozen=True)
class UnetParams:
    conv1: ConvParams
    conv2: ConvParams
    dense_weight: np.ndarray = None  # (ch, temb); None drops the time branch
    dense_bias: np.ndarray = None


def unet_block(x, t_embed, p):
    """dense(t) -> conv1 + ReLU with the dense output added per channel ->
    conv2 with the block input added as shortcut."""
    ch = x.shape[0]
    if p.conv1.in_channels != ch or p.conv2.out_channels != ch:
        raise ShapeError("unet block convolutions must keep the channel count")
    temb_res = None
    if p.dense_weight is not None:
        d = dense(t_embed, p.dense_weight, p.dense_bias)
        if d.size != p.conv1.out_channels:
            raise ShapeError("dense output size must equal conv1 output channels")
        oh = conv_out_size(x.shape[1], p.conv1.kernel, p.conv1.stride, p.conv1.pad)
        ow = conv_out_size(x.shape[2], p.conv1.kernel, p.conv1.stride, p.conv1.pad)
        temb_res = np.broadcast_to(fxp.promote_array(d)[:, None, None],
                                   (d.size, oh, ow))
    h = relu(conv2d(x, p.conv1, residual=temb_res))
    return conv2d(h, p.conv2, residual=fxp.promote_array(x.data))
