"""Array primitives shared by every other module.

Tensors are plain ``numpy.ndarray`` objects. Training keeps parameters in
float32, gradient checks and the exact RBM oracles run in float64.

Randomness always comes from :func:`make_rng`, which returns a numpy
``Generator`` driven by the counter-based Philox-4x64 bit generator. The
stream is keyed by ``(seed, crc32(stream_name))`` so that independent
consumers (data split, initialization, dropout, Gibbs sampling, shuffling)
never share draws and are reproducible on every platform.
"""
from __future__ import annotations

import zlib
from typing import Sequence

import numpy as np

TRAIN_DTYPE = np.float32
CHECK_DTYPE = np.float64

STREAMS = ("split", "init", "dropout", "gibbs", "shuffle")


def make_rng(seed: int, stream: str | None = None) -> np.random.Generator:
    """Deterministic generator for ``seed``, optionally on a named sub-stream."""
    if seed < 0 or seed >= 2**64:
        raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
    entropy = [int(seed)]
    if stream is not None:
        entropy.append(zlib.crc32(stream.encode("utf-8")))
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


def _check_shape(shape: Sequence[int]) -> tuple[int, ...]:
    shape = tuple(int(d) for d in shape)
    if not shape:
        raise ValueError("shape must have at least one dimension")
    if len(shape) > 4:
        raise ValueError(f"rank {len(shape)} exceeds the supported maximum of 4")
    if any(d < 1 for d in shape):
        raise ValueError(f"all dimensions must be >= 1, got {shape}")
    return shape


def zeros(shape: Sequence[int], dtype=CHECK_DTYPE) -> np.ndarray:
    return np.zeros(_check_shape(shape), dtype=dtype)


def rand_normal(shape, mean: float, std: float, rng: np.random.Generator,
                dtype=CHECK_DTYPE) -> np.ndarray:
    """I.i.d. normal draws. Sampled in float64 and then cast, so the values
    at both widths come from the same underlying stream."""
    if std < 0:
        raise ValueError(f"std must be non-negative, got {std}")
    z = rng.standard_normal(_check_shape(shape))
    return (mean + std * z).astype(dtype, copy=False)


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Logistic function in the two-branch form that never overflows ``exp``."""
    x = np.asarray(x)
    if not np.issubdtype(x.dtype, np.floating):
        x = x.astype(CHECK_DTYPE)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ez = np.exp(x[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


# alias matching the element-wise map naming used elsewhere
map_sigmoid = sigmoid


def softmax(z: np.ndarray, axis: int = -1) -> np.ndarray:
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul expects rank-2 operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"inner dimensions differ: {a.shape} x {b.shape}")
    return a @ b
