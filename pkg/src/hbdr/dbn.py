"""Deep belief network: greedy RBM stacking and a fine-tuned softmax classifier."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import layers as L
from .rbm import CdConfig, RbmParams, init_rbm, prob_h_given_v, train_rbm
from .tensor import TRAIN_DTYPE, rand_normal


@dataclass
class DbnConfig:
    layer_sizes: tuple[int, ...] = (1024, 100, 100)
    cd: CdConfig = field(default_factory=CdConfig)
    pretrain_epochs: int = 10
    # fine-tuning (plain minibatch SGD, no momentum)
    lr: float = 0.1
    epochs: int = 30
    batch_size: int = 50
    n_classes: int = 10
    seed: int = 1
    binarize: float | None = None

    def __post_init__(self):
        self.layer_sizes = tuple(int(s) for s in self.layer_sizes)
        if len(self.layer_sizes) < 2 or min(self.layer_sizes) < 1:
            raise ValueError(f"need a visible size and at least one hidden size, got {self.layer_sizes}")
        if self.pretrain_epochs < 0:
            raise ValueError("pretrain_epochs must be >= 0")


def dbn_config_from(cfg) -> DbnConfig:
    """DbnConfig equivalent of a :class:`hbdr.training.NetworkConfig`."""
    return DbnConfig(
        layer_sizes=(cfg.image_size * cfg.image_size,) + tuple(cfg.dbn_hidden),
        cd=CdConfig(cfg.cd_k, cfg.cd_lr, cfg.cd_momentum, cfg.cd_penalty, cfg.cd_batch_size),
        pretrain_epochs=cfg.pretrain_epochs, lr=cfg.lr, epochs=cfg.epochs,
        batch_size=cfg.batch_size, n_classes=cfg.n_classes, seed=cfg.seed, binarize=cfg.binarize)


def prepare_visible(x, binarize: float | None = None, dtype=None):
    """Flatten images to ``[N, pixels]``; optionally threshold them."""
    x = np.asarray(x)
    x = x.reshape(x.shape[0], -1)
    if binarize is not None:
        x = (x > binarize).astype(x.dtype)
    return x if dtype is None else x.astype(dtype, copy=False)


def greedy_pretrain(data, cfg: DbnConfig, rng: np.random.Generator, trace: list | None = None,
                    on_epoch=None, dtype=TRAIN_DTYPE) -> list[RbmParams]:
    """Train one RBM per hidden layer, bottom-up.

    The first RBM sees the pixels; each following RBM is trained on the
    hidden probabilities of the one below. If ``trace`` is a list, the
    training input of every layer is appended to it.
    ``on_epoch(layer, epoch, params)`` is called after each epoch.
    """
    v = prepare_visible(data, cfg.binarize, dtype)
    if v.shape[1] != cfg.layer_sizes[0]:
        raise ValueError(f"data has {v.shape[1]} visible units, config expects {cfg.layer_sizes[0]}")
    stack = []
    for ell, (nv, nh) in enumerate(zip(cfg.layer_sizes[:-1], cfg.layer_sizes[1:])):
        if trace is not None:
            trace.append(v)
        params = init_rbm(nv, nh, rng, dtype=dtype)
        cb = None if on_epoch is None else (lambda e, p, ell=ell: on_epoch(ell, e, p))
        params = train_rbm(v, params, cfg.cd, cfg.pretrain_epochs, rng, callback=cb)
        stack.append(params)
        v = prob_h_given_v(v, params)
    return stack


class DbnClassifier:
    """Sigmoid layers initialized from an RBM stack, topped by a softmax layer."""

    kind = "dbn"

    def __init__(self, hidden: list[L.FcLayer], head: L.FcLayer, binarize: float | None = None):
        for lower, upper in zip(hidden, hidden[1:] + [head]):
            if upper.weights.shape[1] != lower.weights.shape[0]:
                raise ValueError("consecutive layer sizes do not match")
        self.hidden = hidden
        self.head = head
        self.binarize = binarize
        self.frozen = set()

    @classmethod
    def from_stack(cls, stack: list[RbmParams], n_classes: int, rng: np.random.Generator,
                   binarize: float | None = None, head_std: float = 0.01):
        dtype = stack[0].w.dtype
        hidden = [L.FcLayer(p.w.T.copy(), p.b.copy(), "sigmoid") for p in stack]
        top = stack[-1].n_hidden
        head = L.FcLayer(rand_normal((n_classes, top), 0.0, head_std, rng, dtype),
                         np.zeros(n_classes, dtype), "softmax")
        return cls(hidden, head, binarize)

    @property
    def n_visible(self):
        return self.hidden[0].weights.shape[1]

    def params(self) -> dict[str, np.ndarray]:
        out = {}
        for i, layer in enumerate(self.hidden):
            out[f"h{i}.weights"] = layer.weights
            out[f"h{i}.bias"] = layer.bias
        out["head.weights"] = self.head.weights
        out["head.bias"] = self.head.bias
        return out

    def _input(self, x):
        x = np.asarray(x)
        if x.ndim in (1, 3):
            x = x[None]
        v = prepare_visible(x, self.binarize)
        if v.shape[1] != self.n_visible:
            raise ValueError(f"input has {v.shape[1]} values, network expects {self.n_visible}")
        return v

    def hidden_activations(self, x):
        acts = [self._input(x)]
        for layer in self.hidden:
            acts.append(L.fc_forward(acts[-1], layer))
        return acts[1:]

    def predict_proba(self, x):
        acts = self.hidden_activations(x)
        return L.fc_forward(acts[-1], self.head)

    def predict(self, image):
        """``(label, probabilities)`` for one image; ties go to the lowest label."""
        probs = self.predict_proba(image)[0]
        return int(np.argmax(probs)), probs

    def loss_and_grads(self, x, y, rng=None, mode="training"):
        v = self._input(x)
        acts = [v]
        for layer in self.hidden:
            acts.append(L.fc_forward(acts[-1], layer))
        probs = L.fc_forward(acts[-1], self.head)
        loss, dz = L.cross_entropy(probs, y)
        grad, gw, gb = L.fc_backward(dz, acts[-1], self.head, "identity", out=dz)
        grads = {"head.weights": gw, "head.bias": gb}
        for i in range(len(self.hidden) - 1, -1, -1):
            grad, grads[f"h{i}.weights"], grads[f"h{i}.bias"] = L.fc_backward(
                grad, acts[i], self.hidden[i], out=acts[i + 1], need_input_grad=i > 0)
        return loss, grads


def finetune(stack: list[RbmParams], dataset, cfg: DbnConfig, rng: np.random.Generator,
             save_best: bool = False, on_epoch=None, workers: int = 1):
    """Unroll ``stack`` into a classifier and train it with backpropagation
    on ``dataset``'s training split. Returns ``(classifier, TrainReport)``."""
    from .training import train

    if stack[0].n_visible != cfg.layer_sizes[0]:
        raise ValueError("stack does not match the configured visible size")
    net = DbnClassifier.from_stack(stack, cfg.n_classes, rng, cfg.binarize)
    report = train(net, dataset, cfg, save_best=save_best, on_epoch=on_epoch, workers=workers)
    return net, report
