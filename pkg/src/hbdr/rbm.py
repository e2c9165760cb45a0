"""Bernoulli-Bernoulli restricted Boltzmann machine.

Sampling, contrastive-divergence training, and brute-force oracles
(partition function, log-likelihood, exact likelihood gradient) that
enumerate every joint state of small models.
"""
from __future__ import annotations

from dataclasses import dataclass
import itertools

import numpy as np

from .tensor import TRAIN_DTYPE, rand_normal, sigmoid

MAX_ENUMERABLE_UNITS = 20


@dataclass
class RbmParams:
    w: np.ndarray  # [n_visible, n_hidden]
    a: np.ndarray  # visible biases
    b: np.ndarray  # hidden biases

    def __post_init__(self):
        if self.w.ndim != 2:
            raise ValueError(f"w must be rank 2, got {self.w.shape}")
        nv, nh = self.w.shape
        if self.a.shape != (nv,) or self.b.shape != (nh,):
            raise ValueError(f"bias shapes {self.a.shape}, {self.b.shape} do not match w {self.w.shape}")

    @property
    def n_visible(self):
        return self.w.shape[0]

    @property
    def n_hidden(self):
        return self.w.shape[1]

    def copy(self):
        return RbmParams(self.w.copy(), self.a.copy(), self.b.copy())

    def astype(self, dtype):
        return RbmParams(self.w.astype(dtype), self.a.astype(dtype), self.b.astype(dtype))


@dataclass(frozen=True)
class CdConfig:
    k: int = 1
    learning_rate: float = 0.1
    momentum: float = 0.5
    weight_penalty: float = 2e-4
    batch_size: int = 50

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.learning_rate < 0:
            raise ValueError("learning rate must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")
        if self.weight_penalty < 0:
            raise ValueError("weight penalty must be non-negative")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")


@dataclass
class Velocity:
    w: np.ndarray
    a: np.ndarray
    b: np.ndarray

    @classmethod
    def zeros_like(cls, params: RbmParams):
        return cls(np.zeros_like(params.w), np.zeros_like(params.a), np.zeros_like(params.b))


def init_rbm(n_visible: int, n_hidden: int, rng: np.random.Generator,
             std: float = 0.01, dtype=TRAIN_DTYPE) -> RbmParams:
    """Small random weights N(0, std^2), zero biases."""
    return RbmParams(rand_normal((n_visible, n_hidden), 0.0, std, rng, dtype),
                     np.zeros(n_visible, dtype), np.zeros(n_hidden, dtype))


def _check_binary(x, name):
    x = np.asarray(x)
    if not np.all((x == 0) | (x == 1)):
        raise ValueError(f"{name} must be binary")
    return x


def energy(v, h, params: RbmParams) -> float:
    v = _check_binary(v, "v")
    h = _check_binary(h, "h")
    if v.shape != (params.n_visible,) or h.shape != (params.n_hidden,):
        raise ValueError(f"state shapes {v.shape}, {h.shape} do not match the model")
    return float(-(params.a @ v) - (params.b @ h) - v @ params.w @ h)


def prob_h_given_v(v, params: RbmParams):
    return sigmoid(params.b + np.asarray(v) @ params.w)


def prob_v_given_h(h, params: RbmParams):
    return sigmoid(params.a + np.asarray(h) @ params.w.T)


def _bernoulli(p, rng):
    return (rng.random(p.shape) < p).astype(p.dtype)


def gibbs_step(v, params: RbmParams, rng: np.random.Generator):
    """One alternating sweep: sample all hidden units given ``v``, then all
    visible units given that hidden sample.

    Returns ``(h_sample, v_reconstruction, h_probs, v_probs)``.
    """
    h_probs = prob_h_given_v(v, params)
    h = _bernoulli(h_probs, rng)
    v_probs = prob_v_given_h(h, params)
    v_new = _bernoulli(v_probs, rng)
    return h, v_new, h_probs, v_probs


def cd_statistics(batch, params: RbmParams, k: int, rng: np.random.Generator):
    """Data and reconstruction statistics of a CD-k chain.

    The data side uses hidden probabilities. The chain samples hidden states
    (and intermediate visible states); its final visible and hidden values
    are probabilities.

    Returns ``(grad_w, grad_a, grad_b)`` summed over the batch, i.e. the
    positive minus the negative statistics.
    """
    v0 = batch
    h0 = prob_h_given_v(v0, params)
    h = _bernoulli(h0, rng)
    for step in range(k):
        vk = prob_v_given_h(h, params)
        if step < k - 1:
            vs = _bernoulli(vk, rng)
            h = _bernoulli(prob_h_given_v(vs, params), rng)
    hk = prob_h_given_v(vk, params)
    grad_w = v0.T @ h0 - vk.T @ hk
    grad_a = v0.sum(axis=0) - vk.sum(axis=0)
    grad_b = h0.sum(axis=0) - hk.sum(axis=0)
    return grad_w, grad_a, grad_b


def cd_update(batch, params: RbmParams, cfg: CdConfig, rng: np.random.Generator,
              velocity: Velocity | None = None):
    """One momentum CD-k step on a minibatch. Returns new ``(params, velocity)``
    and leaves the inputs untouched.

    Visible data may be real-valued in [0, 1]; such values are used directly
    as Bernoulli probabilities. The L2 penalty applies to the weights only.
    """
    batch = np.asarray(batch, dtype=params.w.dtype)
    if batch.ndim == 1:
        batch = batch[None]
    if batch.shape[1] != params.n_visible:
        raise ValueError(f"batch has {batch.shape[1]} visible units, model has {params.n_visible}")
    if batch.min() < 0 or batch.max() > 1:
        raise ValueError("visible data must lie in [0, 1]")
    if velocity is None:
        velocity = Velocity.zeros_like(params)
    n = batch.shape[0]
    gw, ga, gb = cd_statistics(batch, params, cfg.k, rng)
    eps = params.w.dtype.type(cfg.learning_rate)
    mom = params.w.dtype.type(cfg.momentum)
    dw = gw / n - cfg.weight_penalty * params.w
    new_vel = Velocity(mom * velocity.w + eps * dw,
                       mom * velocity.a + eps * (ga / n),
                       mom * velocity.b + eps * (gb / n))
    new = RbmParams(params.w + new_vel.w, params.a + new_vel.a, params.b + new_vel.b)
    return new, new_vel


def train_rbm(data, params: RbmParams, cfg: CdConfig, epochs: int, rng: np.random.Generator,
              shuffle: bool = True, callback=None):
    """Run ``epochs`` passes of minibatch CD over ``data``.

    ``callback(epoch, params)`` is invoked after every epoch.
    """
    data = np.asarray(data, dtype=params.w.dtype)
    velocity = Velocity.zeros_like(params)
    n = data.shape[0]
    for epoch in range(epochs):
        order = rng.permutation(n) if shuffle else np.arange(n)
        for start in range(0, n, cfg.batch_size):
            params, velocity = cd_update(data[order[start:start + cfg.batch_size]],
                                         params, cfg, rng, velocity)
        if callback is not None:
            callback(epoch, params)
    return params


# ------------------------------------------------------------ exact oracles

def _all_states(n):
    return np.array(list(itertools.product((0.0, 1.0), repeat=n)), dtype=np.float64).reshape(-1, n)


def _guard(params):
    if params.n_visible + params.n_hidden > MAX_ENUMERABLE_UNITS:
        raise ValueError(f"{params.n_visible}+{params.n_hidden} units exceed the enumeration "
                         f"limit of {MAX_ENUMERABLE_UNITS}")


def _neg_energy_table(params):
    """-E(v, h) for every joint state, indexed [v_state, h_state]."""
    p = params.astype(np.float64)
    vs = _all_states(p.n_visible)
    hs = _all_states(p.n_hidden)
    table = (vs @ p.a)[:, None] + (hs @ p.b)[None, :] + vs @ p.w @ hs.T
    return vs, hs, table


def _logsumexp(x, axis=None):
    m = np.max(x, axis=axis, keepdims=True)
    out = m + np.log(np.exp(x - m).sum(axis=axis, keepdims=True))
    return np.squeeze(out, axis=axis) if axis is not None else float(out.squeeze())


def exact_log_partition(params: RbmParams) -> float:
    _guard(params)
    _, _, table = _neg_energy_table(params)
    return _logsumexp(table)


def exact_partition(params: RbmParams) -> float:
    """Z as the sum of exp(-E) over every (v, h) pair."""
    return float(np.exp(exact_log_partition(params)))


def joint_probabilities(params: RbmParams):
    """``(visible_states, hidden_states, p)`` with ``p[i, j] = p(v_i, h_j)``."""
    _guard(params)
    vs, hs, table = _neg_energy_table(params)
    return vs, hs, np.exp(table - _logsumexp(table))


def _state_index(v):
    v = np.asarray(v)
    weights = 2 ** np.arange(v.shape[-1] - 1, -1, -1)
    return (v @ weights).astype(int)


def exact_log_likelihood(dataset, params: RbmParams) -> float:
    """Mean over ``dataset`` of log p(v), with p(v) = sum_h exp(-E(v,h)) / Z."""
    _guard(params)
    data = _check_binary(np.atleast_2d(dataset), "dataset")
    _, _, table = _neg_energy_table(params)
    log_z = _logsumexp(table)
    log_unnorm = _logsumexp(table, axis=1)  # per visible state
    return float(np.mean(log_unnorm[_state_index(data)] - log_z))


def exact_gradient(dataset, params: RbmParams) -> RbmParams:
    """Gradient of the mean log-likelihood with respect to (w, a, b): the data
    expectation through p(h|v) minus the model expectation by enumeration."""
    _guard(params)
    data = _check_binary(np.atleast_2d(dataset), "dataset").astype(np.float64)
    p64 = params.astype(np.float64)
    ph = prob_h_given_v(data, p64)
    n = data.shape[0]
    pos_w = data.T @ ph / n
    pos_a = data.mean(axis=0)
    pos_b = ph.mean(axis=0)
    vs, hs, joint = joint_probabilities(p64)
    neg_w = vs.T @ joint @ hs
    neg_a = joint.sum(axis=1) @ vs
    neg_b = joint.sum(axis=0) @ hs
    return RbmParams(pos_w - neg_w, pos_a - neg_a, pos_b - neg_b)


def bars_and_stripes(side: int = 2) -> np.ndarray:
    """All distinct bars-and-stripes images of a ``side x side`` grid, flattened."""
    patterns = set()
    for bits in itertools.product((0, 1), repeat=side):
        rows = np.repeat(np.array(bits)[:, None], side, axis=1)
        patterns.add(tuple(rows.ravel()))
        patterns.add(tuple(rows.T.ravel()))
    return np.array(sorted(patterns), dtype=np.float64)
