"""Network assembly, minibatch SGD, evaluation and parameter accounting."""
from __future__ import annotations

import csv
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import layers as L
from .filters import gabor_bank, gaussian_bank
from .tensor import TRAIN_DTYPE, make_rng, rand_normal

VARIANTS = ("dbn", "cnn", "cnn-dropout", "cnn-gaussian", "cnn-gabor",
            "cnn-gaussian-dropout", "cnn-gabor-dropout")
LOSSES = ("xent", "mse")


@dataclass
class NetworkConfig:
    """Everything that determines a training run.

    ``keep_prob`` left as ``None`` resolves to 0.5 for dropout variants and
    1.0 otherwise. DBN-only fields are ignored by CNN variants and vice versa.
    """

    variant: str = "cnn-gabor-dropout"
    image_size: int = 32
    kernel: int = 5
    pool: int = 2
    c1_maps: int = 32
    c2_maps: int = 64
    f1_units: int = 312
    n_classes: int = 10
    loss: str = "xent"
    lr: float = 0.1
    batch_size: int = 50
    epochs: int = 30
    seed: int = 1
    keep_prob: float | None = None
    gaussian_std: float = 0.1
    # C2/F1/F2 weights ~ N(0, (init_gain / sqrt(fan_in))^2); with center_init the
    # C2 kernels and F1 rows are shifted to zero mean.
    init_gain: float = 8.0
    center_init: bool = True
    freeze_c1: bool = False
    train_per_class: int = 500
    test_per_class: int | None = None
    # DBN
    dbn_hidden: tuple[int, ...] = (100, 100)
    pretrain_epochs: int = 10
    cd_k: int = 1
    cd_lr: float = 0.1
    cd_momentum: float = 0.5
    cd_penalty: float = 2e-4
    cd_batch_size: int = 50
    binarize: float | None = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; choose from {', '.join(VARIANTS)}")
        if self.loss not in LOSSES:
            raise ValueError(f"unknown loss {self.loss!r}")
        if self.keep_prob is None:
            self.keep_prob = 0.5 if self.uses_dropout else 1.0
        if not 0.0 < self.keep_prob <= 1.0:
            raise ValueError(f"keep_prob must lie in (0, 1], got {self.keep_prob}")
        if self.init_gain <= 0:
            raise ValueError("init_gain must be > 0")
        if self.lr < 0 or self.batch_size < 1 or self.epochs < 0:
            raise ValueError("lr must be >= 0, batch_size >= 1 and epochs >= 0")
        self.dbn_hidden = tuple(int(h) for h in self.dbn_hidden)
        if not self.dbn_hidden or min(self.dbn_hidden) < 1:
            raise ValueError("dbn_hidden must list positive layer sizes")
        if self.variant != "dbn":
            feature_shapes(self)

    @property
    def uses_dropout(self):
        return self.variant in ("cnn-dropout", "cnn-gaussian-dropout", "cnn-gabor-dropout")

    @property
    def c1_init(self):
        return "gabor" if "gabor" in self.variant else "gaussian"

    def to_text(self) -> str:
        """Flat ``key = value`` rendering, the inverse of :func:`parse_config`."""
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            elif v is None:
                v = "none"
            elif isinstance(v, bool):
                v = "true" if v else "false"
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"


class ConfigError(ValueError):
    pass


def _coerce(name, raw, current):
    text = raw.strip()
    kind = type(current)
    if name in ("keep_prob", "binarize"):
        return None if text.lower() == "none" else float(text)
    if name == "test_per_class":
        return None if text.lower() == "none" else int(text)
    if kind is bool:
        if text.lower() in ("true", "1", "yes", "on"):
            return True
        if text.lower() in ("false", "0", "no", "off"):
            return False
        raise ValueError(f"expected a boolean, got {text!r}")
    if kind is tuple:
        return tuple(int(x) for x in text.split(",") if x.strip())
    if kind is int:
        return int(text)
    if kind is float:
        return float(text)
    return text


def parse_config(text: str, overrides: dict | None = None) -> NetworkConfig:
    """Parse ``key = value`` lines (``#`` starts a comment). Unknown keys and
    malformed lines raise :class:`ConfigError` naming the line number.
    ``overrides`` (already typed) win over the file."""
    defaults = NetworkConfig()
    known = {f.name for f in fields(NetworkConfig)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in known:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        try:
            values[key] = _coerce(key, raw, getattr(defaults, key))
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {exc}") from exc
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    try:
        return NetworkConfig(**values)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


# ------------------------------------------------------------------ CNN

def feature_shapes(cfg: NetworkConfig):
    """Output shape (maps, h, w) of C1, S1, C2, S2, then F1 and F2 widths."""
    s = cfg.image_size
    c1 = s - cfg.kernel + 1
    if c1 < 1 or c1 % cfg.pool:
        raise ValueError(f"C1 output {c1} is not divisible by pooling window {cfg.pool}")
    s1 = c1 // cfg.pool
    c2 = s1 - cfg.kernel + 1
    if c2 < 1 or c2 % cfg.pool:
        raise ValueError(f"C2 output {c2} is not divisible by pooling window {cfg.pool}")
    s2 = c2 // cfg.pool
    return [(cfg.c1_maps, c1, c1), (cfg.c1_maps, s1, s1), (cfg.c2_maps, c2, c2),
            (cfg.c2_maps, s2, s2), (cfg.f1_units,), (cfg.n_classes,)]


class ConvNet:
    """C1 -> S1 -> C2 -> S2 -> F1 -> F2 with sigmoid hidden units.

    Dropout (when ``keep_prob < 1``) gates the flattened S2 output and the F1
    output during training.
    """

    kind = "cnn"

    def __init__(self, c1: L.ConvLayer, c2: L.ConvLayer, f1: L.FcLayer, f2: L.FcLayer,
                 image_size: int = 32, pool: int = 2, keep_prob: float = 1.0,
                 loss: str = "xent", frozen=()):
        self.c1, self.c2, self.f1, self.f2 = c1, c2, f1, f2
        self.image_size = image_size
        self.pool = pool
        self.keep_prob = keep_prob
        self.loss = loss
        self.frozen = set(frozen)
        if c2.in_maps != c1.out_maps:
            raise ValueError(f"C2 expects {c2.in_maps} maps but C1 produces {c1.out_maps}")
        s1 = (image_size - c1.kernels.shape[2] + 1) // pool
        s2 = (s1 - c2.kernels.shape[2] + 1) // pool
        flat = c2.out_maps * s2 * s2
        if f1.weights.shape[1] != flat:
            raise ValueError(f"F1 fan-in is {f1.weights.shape[1]}, S2 produces "
                             f"{c2.out_maps}x{s2}x{s2} = {flat}")
        if f2.weights.shape[1] != f1.weights.shape[0]:
            raise ValueError("F2 fan-in does not match F1 width")

    def params(self) -> dict[str, np.ndarray]:
        return {"c1.kernels": self.c1.kernels, "c1.bias": self.c1.bias,
                "c2.kernels": self.c2.kernels, "c2.bias": self.c2.bias,
                "f1.weights": self.f1.weights, "f1.bias": self.f1.bias,
                "f2.weights": self.f2.weights, "f2.bias": self.f2.bias}

    def _forward(self, x, mode, rng):
        cache = {"x": x}
        cache["a1"] = L.conv_forward(x, self.c1)
        cache["s1"] = L.MaxPoolLayer(self.pool)
        cache["p1"] = L.maxpool_forward(cache["a1"], cache["s1"])
        cache["a2"] = L.conv_forward(cache["p1"], self.c2)
        cache["s2"] = L.MaxPoolLayer(self.pool)
        cache["p2"] = L.maxpool_forward(cache["a2"], cache["s2"])
        flat = cache["p2"].reshape(x.shape[0], -1)
        cache["flat"], cache["m1"] = L.dropout_apply(flat, self.keep_prob, rng, mode)
        cache["h"] = L.fc_forward(cache["flat"], self.f1)
        cache["hd"], cache["m2"] = L.dropout_apply(cache["h"], self.keep_prob, rng, mode)
        cache["out"] = L.fc_forward(cache["hd"], self.f2, "softmax" if self.loss == "xent" else "sigmoid")
        return cache

    def trace_shapes(self, x):
        """Per-sample shapes after C1, S1, C2, S2, F1, F2."""
        c = self._forward(_as_batch(x), "inference", None)
        return [c[k].shape[1:] for k in ("a1", "p1", "a2", "p2", "h", "out")]

    def predict_proba(self, x):
        return self._forward(_as_batch(x), "inference", None)["out"]

    def loss_and_grads(self, x, y, rng=None, mode="training"):
        c = self._forward(x, mode, rng)
        if self.loss == "xent":
            loss, dz = L.cross_entropy(c["out"], y)
            ghd, gw, gb = L.fc_backward(dz, c["hd"], self.f2, "identity", out=dz)
        else:
            loss, dout = L.mean_squared_error(c["out"], y)
            ghd, gw, gb = L.fc_backward(dout, c["hd"], self.f2, "sigmoid", out=c["out"])
        grads = {"f2.weights": gw, "f2.bias": gb}
        gh = L.dropout_backward(ghd, c["m2"])
        gflat, grads["f1.weights"], grads["f1.bias"] = L.fc_backward(gh, c["flat"], self.f1, out=c["h"])
        gp2 = L.dropout_backward(gflat, c["m1"]).reshape(c["p2"].shape)
        ga2 = L.maxpool_backward(gp2, c["s2"])
        gp1, grads["c2.kernels"], grads["c2.bias"] = L.conv_backward(ga2, c["p1"], self.c2, out=c["a2"])
        ga1 = L.maxpool_backward(gp1, c["s1"])
        _, grads["c1.kernels"], grads["c1.bias"] = L.conv_backward(
            ga1, c["x"], self.c1, out=c["a1"], need_input_grad=False)
        return loss, grads


def _as_batch(x):
    x = np.asarray(x)
    return x[None] if x.ndim == 3 else x


def build_network(cfg: NetworkConfig, rng: np.random.Generator | None = None, dtype=TRAIN_DTYPE):
    """Construct and initialize the CNN described by ``cfg``.

    C1 is seeded with a Gabor or Gaussian bank depending on the variant. C2
    and F1 weights are drawn with std ``init_gain / sqrt(fan_in)`` and, with
    ``center_init``, centered per output unit: the sigmoid layers otherwise
    squash the per-sample signal toward a constant and training stalls. F2 uses
    std ``1 / sqrt(fan_in)``. Biases start at zero. DBN variants are assembled
    by :mod:`hbdr.dbn` instead.
    """
    if cfg.variant == "dbn":
        raise ValueError("DBN networks are built from a pretrained RBM stack (see hbdr.dbn)")
    rng = rng if rng is not None else make_rng(cfg.seed, "init")
    shapes = feature_shapes(cfg)
    k = cfg.kernel
    if cfg.c1_init == "gabor":
        c1_k = gabor_bank(cfg.c1_maps, k)
    else:
        c1_k = gaussian_bank(cfg.c1_maps, k, cfg.gaussian_std, rng)
    c2_fan = cfg.c1_maps * k * k
    s2 = shapes[3][1]
    flat = cfg.c2_maps * s2 * s2
    g = cfg.init_gain
    c2_k = rand_normal((cfg.c2_maps, cfg.c1_maps, k, k), 0, g * c2_fan ** -0.5, rng, dtype)
    f1_w = rand_normal((cfg.f1_units, flat), 0, g * flat ** -0.5, rng, dtype)
    if cfg.center_init:
        c2_k -= c2_k.mean(axis=(1, 2, 3), keepdims=True)
        f1_w -= f1_w.mean(axis=1, keepdims=True)
    c1 = L.ConvLayer(c1_k.astype(dtype), np.zeros((cfg.c1_maps, 1), dtype))
    c2 = L.ConvLayer(c2_k, np.zeros((cfg.c2_maps, cfg.c1_maps), dtype))
    f1 = L.FcLayer(f1_w, np.zeros((cfg.f1_units, cfg.c2_maps), dtype))
    f2 = L.FcLayer(rand_normal((cfg.n_classes, cfg.f1_units), 0, cfg.f1_units ** -0.5, rng, dtype),
                   np.zeros(cfg.n_classes, dtype),
                   activation="softmax" if cfg.loss == "xent" else "sigmoid")
    frozen = ("c1.kernels", "c1.bias") if cfg.freeze_c1 else ()
    return ConvNet(c1, c2, f1, f2, cfg.image_size, cfg.pool, cfg.keep_prob, cfg.loss, frozen)


def param_breakdown(network) -> dict[str, int]:
    """Trainable parameter count per layer (parameter-free pooling layers
    of a CNN are listed with 0)."""
    counts: dict[str, int] = {}
    for name, arr in network.params().items():
        layer = name.split(".")[0]
        counts[layer] = counts.get(layer, 0) + int(arr.size)
    if isinstance(network, ConvNet):
        order = ["c1", "s1", "c2", "s2", "f1", "f2"]
        counts.update(s1=0, s2=0)
        return {k: counts[k] for k in order}
    return counts


def param_count(network) -> int:
    if network is None:
        return 0
    return sum(int(a.size) for a in network.params().values())


# ------------------------------------------------------------------ training loop

def sgd_step(params: dict, grads: dict, lr: float, frozen=()) -> dict:
    """In-place ``p -= lr * g`` for every parameter not listed in ``frozen``."""
    if lr == 0:
        return params
    for name, p in params.items():
        if name in frozen or name not in grads:
            continue
        p -= np.asarray(lr, dtype=p.dtype) * grads[name].astype(p.dtype, copy=False)
    return params


@dataclass
class TrainReport:
    train_loss: list[float] = field(default_factory=list)
    test_accuracy: list[float] = field(default_factory=list)
    epoch_seconds: list[float] = field(default_factory=list)
    confusion: np.ndarray | None = None
    misclassified: list[tuple[int, int, int]] = field(default_factory=list)
    best_epoch: int | None = None

    @property
    def final_accuracy(self):
        return self.test_accuracy[-1] if self.test_accuracy else float("nan")

    @property
    def best_accuracy(self):
        return max(self.test_accuracy) if self.test_accuracy else float("nan")

    def write_csv(self, out_dir):
        """``report.csv``, ``confusion.csv`` and ``misclassified.csv``. Wall-clock
        times are deliberately left out so reruns are byte-identical."""
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / "report.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "train_loss", "test_accuracy"])
            for e, (loss, acc) in enumerate(zip(self.train_loss, self.test_accuracy), 1):
                w.writerow([e, repr(float(loss)), repr(float(acc))])
        if self.confusion is not None:
            with open(out_dir / "confusion.csv", "w", newline="") as fh:
                csv.writer(fh, lineterminator="\n").writerows(self.confusion.tolist())
        with open(out_dir / "misclassified.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["index", "true", "predicted"])
            w.writerows(self.misclassified)


def predict_labels(network, images, batch_size: int = 500, workers: int = 1):
    """Arg-max class per image; ties resolve to the lowest class index.

    Images are scored in fixed chunks of ``batch_size``; with ``workers > 1``
    the chunks run on a thread pool. Chunk boundaries do not depend on the
    worker count, so neither do the results.
    """
    chunks = [images[s:s + batch_size] for s in range(0, images.shape[0], batch_size)]
    if not chunks:
        return np.zeros(0, dtype=np.int64)
    score = lambda chunk: network.predict_proba(chunk).argmax(axis=1)
    if workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return np.concatenate(list(pool.map(score, chunks)))
    return np.concatenate([score(c) for c in chunks])


def confusion_matrix(labels, predictions, n_classes: int = 10):
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(labels), np.asarray(predictions)), 1)
    return cm


def evaluate(network, images, labels, n_classes: int = 10, workers: int = 1):
    """``(accuracy, confusion)``; rows of the confusion matrix are true classes."""
    if len(labels) == 0:
        raise ValueError("cannot evaluate on an empty split")
    cm = confusion_matrix(labels, predict_labels(network, images, workers=workers), n_classes)
    return float(np.trace(cm) / cm.sum()), cm


def train(network, dataset, cfg: NetworkConfig, seed: int | None = None, lr: float | None = None,
          epochs: int | None = None, batch_size: int | None = None, save_best: bool = False,
          on_epoch=None, workers: int = 1) -> TrainReport:
    """Minibatch SGD over the dataset's training split, evaluated on its test
    split after each epoch.

    Shuffling and dropout draw from the ``shuffle`` and ``dropout`` streams of
    ``seed`` (default ``cfg.seed``). With ``save_best`` the parameters of the
    most accurate epoch are restored at the end and the final confusion
    matrix refers to them. ``workers`` parallelizes the per-epoch evaluation.
    """
    if not dataset.has_split or len(dataset.train_idx) == 0 or len(dataset.test_idx) == 0:
        raise ValueError("dataset needs non-empty train and test splits")
    seed = cfg.seed if seed is None else seed
    lr = cfg.lr if lr is None else lr
    epochs = cfg.epochs if epochs is None else epochs
    batch_size = cfg.batch_size if batch_size is None else batch_size
    shuffle_rng = make_rng(seed, "shuffle")
    dropout_rng = make_rng(seed, "dropout")
    images, labels = dataset.images, dataset.labels
    test_x, test_y = images[dataset.test_idx], labels[dataset.test_idx]
    params = network.params()
    frozen = getattr(network, "frozen", ())
    report = TrainReport()
    best = None
    for epoch in range(epochs):
        t0 = time.perf_counter()
        order = shuffle_rng.permutation(dataset.train_idx)
        total = 0.0
        for start in range(0, order.size, batch_size):
            idx = order[start:start + batch_size]
            loss, grads = network.loss_and_grads(images[idx], labels[idx], dropout_rng)
            sgd_step(params, grads, lr, frozen)
            total += loss * idx.size
        acc, _ = evaluate(network, test_x, test_y, cfg.n_classes, workers)
        report.train_loss.append(total / order.size)
        report.test_accuracy.append(acc)
        report.epoch_seconds.append(time.perf_counter() - t0)
        if save_best and (best is None or acc > best[0]):
            best = (acc, epoch, {k: v.copy() for k, v in params.items()})
        if on_epoch is not None:
            on_epoch(epoch, report)
    if best is not None:
        for k, v in best[2].items():
            params[k][...] = v
        report.best_epoch = best[1] + 1
    preds = predict_labels(network, test_x, workers=workers)
    report.confusion = confusion_matrix(test_y, preds, cfg.n_classes)
    wrong = np.flatnonzero(preds != test_y)
    report.misclassified = [(int(dataset.test_idx[i]), int(test_y[i]), int(preds[i])) for i in wrong]
    return report
