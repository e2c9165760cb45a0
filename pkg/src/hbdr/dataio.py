"""Dataset loading, stratified splitting, and 8-bit image export."""
from __future__ import annotations

import gzip
import math
import os
import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from PIL import Image

from .tensor import TRAIN_DTYPE, make_rng

IMAGE_SIZE = 32
N_CLASSES = 10
IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
IMAGE_SUFFIXES = (".pgm", ".png", ".bmp", ".tif", ".tiff", ".jpg", ".jpeg")


class DatasetError(ValueError):
    pass


@dataclass
class LabeledDataset:
    images: np.ndarray  # [N, 1, 32, 32] in [0, 1]
    labels: np.ndarray  # [N] int64 in 0..9
    provenance: str = ""
    train_idx: np.ndarray | None = None
    test_idx: np.ndarray | None = None

    def __post_init__(self):
        if self.images.ndim != 4 or self.images.shape[1] != 1:
            raise DatasetError(f"images must be [N, 1, H, W], got {self.images.shape}")
        if self.labels.shape != (self.images.shape[0],):
            raise DatasetError("labels do not match the number of images")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= N_CLASSES):
            raise DatasetError("labels must lie in 0..9")

    def __len__(self):
        return self.images.shape[0]

    @property
    def has_split(self):
        return self.train_idx is not None and self.test_idx is not None

    def subset(self, idx):
        return LabeledDataset(self.images[idx], self.labels[idx], self.provenance)

    def class_counts(self, idx=None):
        labels = self.labels if idx is None else self.labels[idx]
        return np.bincount(labels, minlength=N_CLASSES)


def to_grayscale(pixels: np.ndarray) -> np.ndarray:
    """uint8 image array -> float luma in [0, 255] (0.299 R + 0.587 G + 0.114 B)."""
    pixels = np.asarray(pixels, dtype=np.float64)
    if pixels.ndim == 2:
        return pixels
    if pixels.ndim == 3 and pixels.shape[2] in (3, 4):
        return pixels[..., :3] @ np.array([0.299, 0.587, 0.114])
    raise DatasetError(f"unsupported pixel layout {pixels.shape}")


def read_image(path) -> np.ndarray:
    """Decode one image file to a float array in [0, 1]."""
    try:
        with Image.open(path) as im:
            if im.mode in ("L", "RGB", "RGBA"):
                arr = np.asarray(im)
            elif im.mode in ("I;16", "I;16B", "I"):
                arr = np.asarray(im, dtype=np.float64) * (255.0 / 65535.0)
            else:
                arr = np.asarray(im.convert("RGB"))
    except OSError as exc:
        raise DatasetError(f"{path}: cannot decode image ({exc})") from exc
    return to_grayscale(arr) / 255.0


def load_dir(root) -> LabeledDataset:
    """Load ``root/<digit>/<image>`` trees. Images must already be 32x32.

    The dataset order is class by class, files sorted by name.
    """
    root = Path(root)
    if not root.is_dir():
        raise DatasetError(f"{root}: not a directory")
    class_dirs = sorted(p for p in root.iterdir() if p.is_dir())
    if not class_dirs:
        raise DatasetError(f"{root}: no classes found")
    images, labels = [], []
    for d in class_dirs:
        if not d.name.isdigit() or not 0 <= int(d.name) < N_CLASSES:
            raise DatasetError(f"{d}: unknown class directory (expected 0..9)")
        label = int(d.name)
        for f in sorted(d.iterdir()):
            if not f.is_file() or f.suffix.lower() not in IMAGE_SUFFIXES:
                continue
            img = read_image(f)
            if img.shape != (IMAGE_SIZE, IMAGE_SIZE):
                raise DatasetError(f"{f}: expected {IMAGE_SIZE}x{IMAGE_SIZE} pixels, "
                                   f"got {img.shape[0]}x{img.shape[1]}")
            images.append(img)
            labels.append(label)
    if not images:
        raise DatasetError(f"{root}: class directories contain no images")
    return LabeledDataset(np.stack(images)[:, None].astype(TRAIN_DTYPE),
                          np.array(labels, dtype=np.int64), f"dir:{root}")


def _open_maybe_gz(path):
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(2)
    return gzip.open(path, "rb") if head == b"\x1f\x8b" else open(path, "rb")


def _read_idx(path, magic, ndim):
    with _open_maybe_gz(path) as fh:
        raw = fh.read()
    if len(raw) < 4:
        raise DatasetError(f"{path}: truncated IDX header")
    got, = struct.unpack(">I", raw[:4])
    if got != magic:
        raise DatasetError(f"{path}: IDX magic 0x{got:08x}, expected 0x{magic:08x}")
    if len(raw) < 4 + 4 * ndim:
        raise DatasetError(f"{path}: truncated IDX header")
    dims = struct.unpack(">" + "I" * ndim, raw[4:4 + 4 * ndim])
    count = math.prod(dims)
    payload = raw[4 + 4 * ndim:]
    if len(payload) != count:
        raise DatasetError(f"{path}: expected {count} data bytes, found {len(payload)}")
    return np.frombuffer(payload, dtype=np.uint8).reshape(dims)


def load_idx(images_path, labels_path) -> LabeledDataset:
    """Read an IDX image/label file pair (optionally gzipped). 28x28 images
    are zero-padded by two pixels on every side to 32x32."""
    imgs = _read_idx(images_path, IDX_IMAGES_MAGIC, 3)
    labels = _read_idx(labels_path, IDX_LABELS_MAGIC, 1)
    if imgs.shape[0] != labels.shape[0]:
        raise DatasetError(f"{imgs.shape[0]} images but {labels.shape[0]} labels")
    h, w = imgs.shape[1:]
    if h > IMAGE_SIZE or w > IMAGE_SIZE:
        raise DatasetError(f"IDX images are {h}x{w}, larger than {IMAGE_SIZE}x{IMAGE_SIZE}")
    top, left = (IMAGE_SIZE - h) // 2, (IMAGE_SIZE - w) // 2
    out = np.zeros((imgs.shape[0], 1, IMAGE_SIZE, IMAGE_SIZE), dtype=TRAIN_DTYPE)
    out[:, 0, top:top + h, left:left + w] = imgs / np.float32(255.0)
    return LabeledDataset(out, labels.astype(np.int64), f"idx:{images_path},{labels_path}")


def write_idx(images: np.ndarray, labels: np.ndarray, images_path, labels_path):
    """Write uint8 ``images [N, H, W]`` and ``labels [N]`` as an IDX pair."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, *images.shape))
        fh.write(images.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">II", IDX_LABELS_MAGIC, labels.shape[0]))
        fh.write(labels.tobytes())


def load_data(spec: str) -> LabeledDataset:
    """``"idx:<images>,<labels>"`` or a class-directory root."""
    if spec.startswith("idx:"):
        parts = spec[4:].split(",")
        if len(parts) != 2:
            raise DatasetError(f"expected idx:<images>,<labels>, got {spec!r}")
        return load_idx(*parts)
    return load_dir(spec)


def stratified_split(ds: LabeledDataset, per_class_train: int, seed: int,
                     per_class_test: int | None = None) -> LabeledDataset:
    """Draw exactly ``per_class_train`` random training samples from every
    class; the rest (capped at ``per_class_test`` per class) form the test set.

    Index arrays are returned sorted.
    """
    if per_class_train < 1:
        raise DatasetError("per_class_train must be >= 1")
    rng = make_rng(seed, "split")
    train, test = [], []
    for c in range(N_CLASSES):
        members = np.flatnonzero(ds.labels == c)
        if members.size == 0:
            continue
        if members.size < per_class_train:
            raise DatasetError(f"class {c} has {members.size} samples, "
                               f"{per_class_train} requested for training")
        perm = rng.permutation(members)
        train.append(perm[:per_class_train])
        rest = perm[per_class_train:]
        if per_class_test is not None:
            if rest.size < per_class_test:
                raise DatasetError(f"class {c} has only {rest.size} samples left "
                                   f"for {per_class_test} test samples")
            rest = rest[:per_class_test]
        test.append(rest)
    if not train:
        raise DatasetError("dataset is empty")
    return replace(ds, train_idx=np.sort(np.concatenate(train)),
                   test_idx=np.sort(np.concatenate(test)))


# ------------------------------------------------------------ image export

def to_bytes(img: np.ndarray, minmax: bool = False) -> np.ndarray:
    """Quantize to uint8 with round-half-up. With ``minmax`` the image is first
    rescaled so its minimum maps to 0 and its maximum to 1."""
    img = np.asarray(img, dtype=np.float64)
    if minmax:
        lo, hi = img.min(), img.max()
        img = (img - lo) / (hi - lo) if hi > lo else np.zeros_like(img)
    return np.floor(np.clip(img, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def export_pgm(image, path, minmax: bool = False):
    """Write a 2-D image (or ``[1, H, W]``) as binary 8-bit PGM (P5)."""
    image = np.asarray(image)
    if image.ndim == 3 and image.shape[0] == 1:
        image = image[0]
    if image.ndim != 2:
        raise ValueError(f"export_pgm expects a 2-D image, got {image.shape}")
    data = to_bytes(image, minmax)
    h, w = data.shape
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())
    return path


def read_pgm(path) -> np.ndarray:
    """Read a binary 8-bit PGM into a float array in [0, 1]."""
    with open(path, "rb") as fh:
        raw = fh.read()
    fields, pos = [], 0
    while len(fields) < 4:
        while raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        end = pos
        while not raw[end:end + 1].isspace():
            end += 1
        fields.append(raw[pos:end])
        pos = end
    if fields[0] != b"P5" or int(fields[3]) != 255:
        raise DatasetError(f"{path}: not an 8-bit binary PGM")
    w, h = int(fields[1]), int(fields[2])
    data = np.frombuffer(raw[pos + 1:pos + 1 + w * h], dtype=np.uint8)
    if data.size != w * h:
        raise DatasetError(f"{path}: truncated PGM payload")
    return data.reshape(h, w) / 255.0


def mosaic(tiles, columns: int, minmax: bool = False, separator: float = 1.0) -> np.ndarray:
    """Arrange equally sized 2-D tiles on a grid with 1-pixel separators."""
    tiles = [np.asarray(t, dtype=np.float64).reshape(np.asarray(t).shape[-2:]) for t in tiles]
    if not tiles:
        raise ValueError("no tiles to arrange")
    if columns < 1:
        raise ValueError("columns must be >= 1")
    th, tw = tiles[0].shape
    cols = min(columns, len(tiles))
    rows = -(-len(tiles) // cols)
    grid = np.full((rows * th + rows - 1, cols * tw + cols - 1), separator)
    for k, t in enumerate(tiles):
        if t.shape != (th, tw):
            raise ValueError("all tiles must have the same shape")
        if minmax:
            lo, hi = t.min(), t.max()
            t = (t - lo) / (hi - lo) if hi > lo else np.zeros_like(t)
        r, c = divmod(k, cols)
        grid[r * (th + 1):r * (th + 1) + th, c * (tw + 1):c * (tw + 1) + tw] = t
    return grid


def export_grid(tiles, columns: int, path, minmax: bool = False):
    return export_pgm(mosaic(tiles, columns, minmax), path)


def export_tiles(tiles, out_dir, prefix: str, columns: int = 10, minmax: bool = True):
    """Write every tile as ``<prefix>_<k>.pgm`` plus ``<prefix>_grid.pgm``."""
    out_dir = Path(out_dir)
    os.makedirs(out_dir, exist_ok=True)
    for k, t in enumerate(tiles):
        export_pgm(t, out_dir / f"{prefix}_{k:03d}.pgm", minmax=minmax)
    return export_grid(tiles, columns, out_dir / f"{prefix}_grid.pgm", minmax=minmax)
