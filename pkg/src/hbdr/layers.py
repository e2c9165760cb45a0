"""Forward and backward passes for the CNN building blocks.

All functions work on minibatches laid out as ``[N, C, H, W]`` (feature
maps) or ``[N, F]`` (flat features). A single sample without the leading
batch axis is accepted too and returned in the same form.

Convolution is a valid cross-correlation with stride 1. Every
(output map, input map) pair owns a bias term, so a layer's bias has shape
``[out, in_maps]`` and the effective offset of output ``j`` is the sum over
its input maps. A fully connected layer fed with flattened feature maps may
use the same scheme through a ``[out, groups]`` bias, one group per map.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import sigmoid, softmax

ACTIVATIONS = ("sigmoid", "identity", "softmax")


def _activate(z: np.ndarray, activation: str) -> np.ndarray:
    if activation == "sigmoid":
        return sigmoid(z)
    if activation == "identity":
        return z
    if activation == "softmax":
        return softmax(z, axis=-1)
    raise ValueError(f"unknown activation {activation!r}")


def _activation_backward(grad_out, out, activation):
    if activation == "sigmoid":
        return grad_out * out * (1.0 - out)
    if activation == "identity":
        return grad_out
    if activation == "softmax":
        # Jacobian-vector product of softmax along the last axis
        s = (grad_out * out).sum(axis=-1, keepdims=True)
        return out * (grad_out - s)
    raise ValueError(f"unknown activation {activation!r}")


@dataclass
class ConvLayer:
    kernels: np.ndarray  # [out_maps, in_maps, kh, kw]
    bias: np.ndarray     # [out_maps, in_maps] (per connection) or [out_maps]
    activation: str = "sigmoid"

    def __post_init__(self):
        if self.kernels.ndim != 4:
            raise ValueError(f"kernels must be rank 4, got shape {self.kernels.shape}")
        o, i, kh, kw = self.kernels.shape
        if kh % 2 == 0 or kw % 2 == 0:
            raise ValueError(f"kernel size must be odd, got {kh}x{kw}")
        if self.bias.shape not in ((o, i), (o,)):
            raise ValueError(f"bias shape {self.bias.shape} does not match kernels {(o, i)}")
        if self.activation not in ("sigmoid", "identity"):
            raise ValueError(f"unsupported conv activation {self.activation!r}")

    @property
    def effective_bias(self):
        return self.bias if self.bias.ndim == 1 else self.bias.sum(axis=1)

    @property
    def out_maps(self):
        return self.kernels.shape[0]

    @property
    def in_maps(self):
        return self.kernels.shape[1]

    def output_shape(self, in_shape):
        c, h, w = in_shape
        kh, kw = self.kernels.shape[2:]
        return (self.out_maps, h - kh + 1, w - kw + 1)


@dataclass
class MaxPoolLayer:
    window: int = 2
    # flat index of the selected element inside each window, [N, C, Ho, Wo]
    argmax: np.ndarray | None = field(default=None, repr=False)
    input_shape: tuple | None = field(default=None, repr=False)


@dataclass
class FcLayer:
    weights: np.ndarray  # [out, in]
    bias: np.ndarray     # [out] or [out, groups]
    activation: str = "sigmoid"

    def __post_init__(self):
        if self.weights.ndim != 2:
            raise ValueError(f"weights must be rank 2, got {self.weights.shape}")
        out, fan_in = self.weights.shape
        if self.bias.shape[0] != out or self.bias.ndim not in (1, 2):
            raise ValueError(f"bias shape {self.bias.shape} does not match {out} outputs")
        if self.bias.ndim == 2 and fan_in % self.bias.shape[1]:
            raise ValueError("fan-in is not divisible by the number of bias groups")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def effective_bias(self):
        return self.bias if self.bias.ndim == 1 else self.bias.sum(axis=1)


@dataclass
class DropoutMask:
    keep_prob: float
    mode: str
    mask: np.ndarray | None = None


def _batched(x, rank):
    x = np.asarray(x)
    if x.ndim == rank - 1:
        return x[None], True
    if x.ndim != rank:
        raise ValueError(f"expected rank {rank - 1} or {rank} input, got shape {x.shape}")
    return x, False


# ---------------------------------------------------------------- convolution

def _im2col(x, kh, kw):
    """[N, C, H, W] -> [N, Ho, Wo, C*kh*kw] (copy, C-major then kernel rows)."""
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))  # N, C, Ho, Wo, kh, kw
    n, c, ho, wo = win.shape[:4]
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(n, ho, wo, c * kh * kw)


def conv_forward(x, layer: ConvLayer, activation: str | None = None):
    """Valid cross-correlation of every input map with its kernel, summed per
    output map, plus bias, through the activation."""
    activation = activation or layer.activation
    xb, single = _batched(x, 4)
    n, c, h, w = xb.shape
    o, i, kh, kw = layer.kernels.shape
    if c != i:
        raise ValueError(f"input has {c} maps, layer expects {i}")
    if h < kh or w < kw:
        raise ValueError(f"input {h}x{w} is smaller than kernel {kh}x{kw}")
    cols = _im2col(xb, kh, kw)
    z = cols @ layer.kernels.reshape(o, -1).T  # N, Ho, Wo, O
    z += layer.effective_bias
    out = _activate(np.ascontiguousarray(z.transpose(0, 3, 1, 2)), activation)
    return out[0] if single else out


def conv_backward(grad_out, cached_input, layer: ConvLayer, activation=None,
                  out=None, need_input_grad=True):
    """Gradients of a conv layer.

    ``out`` is the forward output; when omitted it is recomputed. Returns
    ``(grad_input, grad_kernels, grad_bias)``; ``grad_input`` is ``None`` when
    ``need_input_grad`` is false.
    """
    if cached_input is None:
        raise ValueError("conv_backward needs the cached forward input")
    activation = activation or layer.activation
    xb, single = _batched(cached_input, 4)
    gb, _ = _batched(grad_out, 4)
    if out is None:
        out = conv_forward(xb, layer, activation)
    else:
        out, _ = _batched(out, 4)
    if gb.shape != out.shape:
        raise ValueError(f"grad_out shape {gb.shape} does not match output {out.shape}")
    o, i, kh, kw = layer.kernels.shape
    n, _, ho, wo = gb.shape

    dz = _activation_backward(gb, out, activation)
    dz_rows = dz.transpose(0, 2, 3, 1).reshape(-1, o)  # N*Ho*Wo, O
    cols = _im2col(xb, kh, kw).reshape(-1, i * kh * kw)
    grad_k = (dz_rows.T @ cols).reshape(layer.kernels.shape)
    per_map = dz.sum(axis=(0, 2, 3))
    if layer.bias.ndim == 2:
        per_map = np.repeat(per_map[:, None], i, axis=1)
    grad_b = per_map.astype(layer.bias.dtype, copy=False)

    grad_x = None
    if need_input_grad:
        dcols = (dz_rows @ layer.kernels.reshape(o, -1)).reshape(n, ho, wo, i, kh, kw)
        grad_x = np.zeros_like(xb, dtype=dcols.dtype)
        for a in range(kh):
            for b in range(kw):
                grad_x[:, :, a:a + ho, b:b + wo] += dcols[:, :, :, :, a, b].transpose(0, 3, 1, 2)
        if single:
            grad_x = grad_x[0]
    return grad_x, grad_k, grad_b


# ---------------------------------------------------------------- max pooling

def maxpool_forward(x, layer: MaxPoolLayer):
    """Non-overlapping n x n max pooling. Fills ``layer.argmax`` with the
    row-major offset of the winner inside each window; ties go to the first."""
    xb, single = _batched(x, 4)
    n_, c, h, w = xb.shape
    p = layer.window
    if h % p or w % p:
        raise ValueError(f"input {h}x{w} is not divisible by pooling window {p}")
    blocks = (xb.reshape(n_, c, h // p, p, w // p, p)
              .transpose(0, 1, 2, 4, 3, 5)
              .reshape(n_, c, h // p, w // p, p * p))
    # np.argmax returns the first occurrence, which gives the tie rule
    layer.argmax = blocks.argmax(axis=-1)
    layer.input_shape = xb.shape
    out = np.take_along_axis(blocks, layer.argmax[..., None], axis=-1)[..., 0]
    if single:
        return out[0]
    return out


def maxpool_backward(grad_out, layer: MaxPoolLayer):
    if layer.argmax is None or layer.input_shape is None:
        raise ValueError("maxpool_backward called before maxpool_forward")
    gb, single = _batched(grad_out, 4)
    if gb.shape != layer.argmax.shape:
        raise ValueError(f"grad_out shape {gb.shape} does not match cache {layer.argmax.shape}")
    n_, c, h, w = layer.input_shape
    p = layer.window
    ho, wo = h // p, w // p
    onehot = np.zeros((n_, c, ho, wo, p * p), dtype=gb.dtype)
    np.put_along_axis(onehot, layer.argmax[..., None], gb[..., None], axis=-1)
    grad_x = (onehot.reshape(n_, c, ho, wo, p, p)
              .transpose(0, 1, 2, 4, 3, 5)
              .reshape(n_, c, h, w))
    return grad_x[0] if single else grad_x


# ---------------------------------------------------------------- fully connected

def fc_forward(x, layer: FcLayer, activation: str | None = None):
    activation = activation or layer.activation
    xb, single = _batched(x, 2)
    if xb.shape[1] != layer.weights.shape[1]:
        raise ValueError(f"input has {xb.shape[1]} features, layer expects {layer.weights.shape[1]}")
    out = _activate(xb @ layer.weights.T + layer.effective_bias, activation)
    return out[0] if single else out


def fc_backward(grad_out, cached_input, layer: FcLayer, activation=None, out=None,
                need_input_grad=True):
    """Returns ``(grad_input, grad_weights, grad_bias)``."""
    if cached_input is None:
        raise ValueError("fc_backward needs the cached forward input")
    activation = activation or layer.activation
    xb, single = _batched(cached_input, 2)
    gb, _ = _batched(grad_out, 2)
    if out is None:
        out = fc_forward(xb, layer, activation)
    else:
        out, _ = _batched(out, 2)
    dz = _activation_backward(gb, out, activation)
    grad_w = dz.T @ xb
    per_unit = dz.sum(axis=0)
    if layer.bias.ndim == 2:
        grad_b = np.repeat(per_unit[:, None], layer.bias.shape[1], axis=1)
    else:
        grad_b = per_unit
    grad_x = None
    if need_input_grad:
        grad_x = dz @ layer.weights
        if single:
            grad_x = grad_x[0]
    return grad_x, grad_w, grad_b.astype(layer.bias.dtype, copy=False)


# ---------------------------------------------------------------- dropout

def dropout_apply(activations, keep_prob: float, rng: np.random.Generator | None,
                  mode: str = "training"):
    """Inverted dropout: kept units are scaled by ``1/keep_prob`` while
    training, inference is the identity and never touches ``rng``."""
    if not 0.0 < keep_prob <= 1.0:
        raise ValueError(f"keep_prob must lie in (0, 1], got {keep_prob}")
    if mode not in ("training", "inference"):
        raise ValueError(f"unknown dropout mode {mode!r}")
    if mode == "inference" or keep_prob == 1.0:
        return activations, DropoutMask(keep_prob, mode, None)
    keep = rng.random(activations.shape) < keep_prob
    mask = keep.astype(activations.dtype) / np.asarray(keep_prob, dtype=activations.dtype)
    return activations * mask, DropoutMask(keep_prob, mode, mask)


def dropout_backward(grad_out, mask: DropoutMask):
    if mask.mask is None:
        return grad_out
    return grad_out * mask.mask


# ---------------------------------------------------------------- losses

def cross_entropy(probs, labels):
    """Mean negative log-likelihood of integer ``labels`` under softmax ``probs``
    and its gradient with respect to the pre-softmax scores."""
    n = probs.shape[0]
    picked = probs[np.arange(n), labels]
    tiny = np.finfo(probs.dtype).tiny
    loss = float(-np.log(np.maximum(picked, tiny)).mean())
    grad = probs.copy()
    grad[np.arange(n), labels] -= 1.0
    return loss, grad / n


def mean_squared_error(outputs, labels):
    """Half squared error against one-hot targets, averaged over the batch;
    gradient is with respect to ``outputs``."""
    n, k = outputs.shape
    target = np.zeros_like(outputs)
    target[np.arange(n), labels] = 1.0
    diff = outputs - target
    return float(0.5 * (diff ** 2).sum() / n), diff / n
