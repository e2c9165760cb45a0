"""Binary model container.

Layout (all integers little-endian)::

    b"HBDR"                      magic
    u32                          format version (1)
    u8 + bytes                   model kind: "cnn", "dbn" or "rbm-stack"
    u32 + bytes                  resolved configuration, UTF-8 key = value text
    repeated until end of file:
        u16 + bytes              tensor name (UTF-8)
        u8                       rank
        u32 * rank               dimensions
        f32 * prod(dims)         values, row-major
"""
from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"HBDR"
VERSION = 1
KINDS = ("cnn", "dbn", "rbm-stack")


class ModelFormatError(ValueError):
    pass


@dataclass
class ModelFile:
    kind: str
    config_text: str
    tensors: dict[str, np.ndarray] = field(default_factory=dict)

    def to_bytes(self) -> bytes:
        if self.kind not in KINDS:
            raise ModelFormatError(f"unknown model kind {self.kind!r}")
        buf = io.BytesIO()
        kind = self.kind.encode("ascii")
        cfg = self.config_text.encode("utf-8")
        buf.write(MAGIC)
        buf.write(struct.pack("<I", VERSION))
        buf.write(struct.pack("<B", len(kind)) + kind)
        buf.write(struct.pack("<I", len(cfg)) + cfg)
        for name, arr in self.tensors.items():
            arr = np.asarray(arr)
            if not 1 <= arr.ndim <= 255:
                raise ModelFormatError(f"tensor {name!r} has unsupported rank {arr.ndim}")
            raw_name = name.encode("utf-8")
            buf.write(struct.pack("<H", len(raw_name)) + raw_name)
            buf.write(struct.pack("<B", arr.ndim))
            buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            buf.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, raw: bytes) -> "ModelFile":
        _check_header(raw[:8])
        pos = 8
        try:
            n, = struct.unpack_from("<B", raw, pos)
            kind = raw[pos + 1:pos + 1 + n].decode("ascii")
            pos += 1 + n
            n, = struct.unpack_from("<I", raw, pos)
            config_text = raw[pos + 4:pos + 4 + n].decode("utf-8")
            pos += 4 + n
            tensors = {}
            while pos < len(raw):
                n, = struct.unpack_from("<H", raw, pos)
                name = raw[pos + 2:pos + 2 + n].decode("utf-8")
                pos += 2 + n
                rank, = struct.unpack_from("<B", raw, pos)
                dims = struct.unpack_from(f"<{rank}I", raw, pos + 1)
                pos += 1 + 4 * rank
                count = int(np.prod(dims))
                if pos + 4 * count > len(raw):
                    raise ModelFormatError(f"tensor {name!r} is truncated")
                tensors[name] = np.frombuffer(raw, dtype="<f4", count=count, offset=pos) \
                    .reshape(dims).astype(np.float32)
                pos += 4 * count
        except struct.error as exc:
            raise ModelFormatError(f"truncated model file ({exc})") from exc
        if kind not in KINDS:
            raise ModelFormatError(f"unknown model kind {kind!r}")
        return cls(kind, config_text, tensors)

    def save(self, path):
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "ModelFile":
        with open(path, "rb") as fh:
            head = fh.read(8)
            _check_header(head)  # before touching the payload
            return cls.from_bytes(head + fh.read())


def _check_header(head: bytes):
    if head[:4] != MAGIC:
        raise ModelFormatError("not an HBDR model file (bad magic)")
    if len(head) < 8:
        raise ModelFormatError("truncated header")
    version, = struct.unpack_from("<I", head, 4)
    if version != VERSION:
        raise ModelFormatError(f"unsupported model format version {version}")


# ------------------------------------------------------------ model <-> file

def network_to_file(network, config_text: str) -> ModelFile:
    return ModelFile(network.kind, config_text, dict(network.params()))


def stack_to_file(stack, config_text: str) -> ModelFile:
    tensors = {}
    for i, p in enumerate(stack):
        tensors[f"rbm{i}.w"] = p.w
        tensors[f"rbm{i}.a"] = p.a
        tensors[f"rbm{i}.b"] = p.b
    return ModelFile("rbm-stack", config_text, tensors)


def stack_from_file(mf: ModelFile):
    from .rbm import RbmParams

    if mf.kind != "rbm-stack":
        raise ModelFormatError(f"expected an rbm-stack model, got {mf.kind!r}")
    stack, i = [], 0
    while f"rbm{i}.w" in mf.tensors:
        t = mf.tensors
        stack.append(RbmParams(t[f"rbm{i}.w"], t[f"rbm{i}.a"], t[f"rbm{i}.b"]))
        i += 1
    return stack


def network_from_file(mf: ModelFile):
    """Rebuild a CNN or DBN classifier from its stored config and tensors."""
    from . import layers as L
    from .dbn import DbnClassifier
    from .training import ConvNet, parse_config

    cfg = parse_config(mf.config_text)
    t = mf.tensors
    try:
        if mf.kind == "cnn":
            head_act = "softmax" if cfg.loss == "xent" else "sigmoid"
            frozen = ("c1.kernels", "c1.bias") if cfg.freeze_c1 else ()
            return ConvNet(L.ConvLayer(t["c1.kernels"], t["c1.bias"]),
                           L.ConvLayer(t["c2.kernels"], t["c2.bias"]),
                           L.FcLayer(t["f1.weights"], t["f1.bias"]),
                           L.FcLayer(t["f2.weights"], t["f2.bias"], head_act),
                           cfg.image_size, cfg.pool, cfg.keep_prob, cfg.loss, frozen)
        if mf.kind == "dbn":
            hidden, i = [], 0
            while f"h{i}.weights" in t:
                hidden.append(L.FcLayer(t[f"h{i}.weights"], t[f"h{i}.bias"]))
                i += 1
            return DbnClassifier(hidden, L.FcLayer(t["head.weights"], t["head.bias"], "softmax"),
                                 cfg.binarize)
    except KeyError as exc:
        raise ModelFormatError(f"model file lacks tensor {exc}") from exc
    raise ModelFormatError(f"{mf.kind!r} files do not hold a classifier")
