"""Contrastive concept learner.

An encoder ``h`` maps observations to ``n`` concept coordinates.  For every
environment ``e`` a logistic classifier separates ``X^e`` from the base data
``X^0`` with a logit that mirrors the true log-odds::

    g_e(x) = alpha_e - sum_k (beta_e[k] * h_{s_k}(x))**2 + sum_k gamma_e[k] * h_{s_k}(x)

where ``s_k`` runs over the head's slots: the atoms filtered in ``e`` when the
structure is known, or all ``n`` outputs otherwise.  The objective is the sum
over environments of the balanced cross-entropy plus ``l1_weight * |beta|_1``.
Gradients are computed by hand and the parameters are updated with Adam under
a per-step cosine-annealed learning rate.
"""
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
from scipy.special import expit
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .exceptions import DimensionMismatch, NumericalDivergence
from .rng import as_generator

LEAKY_SLOPE = 0.2


@dataclass
class TrainConfig:
    epochs: int = 100
    l1_weight: float = 1e-4
    lr_head: float = 0.5
    lr_encoder: float = 0.005
    batch_size: int = 256
    betas: Sequence[float] = (0.9, 0.999)
    eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.lr_head <= 0 or self.lr_encoder <= 0:
            raise ValueError("learning rates must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        self.betas = tuple(float(b) for b in self.betas)


@dataclass
class ConceptModel:
    """Encoder weights and per-environment head parameters.

    ``params`` holds ``W{l}``/``b{l}`` for encoder layer ``l`` and ``alpha``,
    ``beta{e}``, ``gamma{e}`` for environment ``e`` (1-based).  ``slots[e-1]``
    lists the encoder outputs entering head ``e``.
    """

    params: Dict[str, np.ndarray]
    slots: List[np.ndarray]
    n_layers: int

    @property
    def m(self):
        return len(self.slots)

    @property
    def n(self):
        return self.params[f"W{self.n_layers - 1}"].shape[0]

    @property
    def d_x(self):
        return self.params["W0"].shape[1]

    def head_keys(self):
        return ["alpha"] + [f"{p}{e}" for e in range(1, self.m + 1) for p in ("beta", "gamma")]

    def encoder_keys(self):
        return [f"{p}{l}" for l in range(self.n_layers) for p in ("W", "b")]

    def copy(self):
        return ConceptModel({k: v.copy() for k, v in self.params.items()},
                            [s.copy() for s in self.slots], self.n_layers)


@dataclass
class Batch:
    """Rows ``X`` labelled with the environment whose head scores them and ``y``
    (1 for a sample of that environment, 0 for a base sample)."""

    X: np.ndarray
    env: np.ndarray
    y: np.ndarray


def init_model(d_x, n, m, rng=None, hidden=(32, 32), structure=None):
    """Encoder weights Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)); alpha=0, beta=1, gamma=0.

    ``hidden=()`` gives a linear encoder.  ``structure`` is a list of the atom
    indices filtered by each environment; ``None`` makes every head dense.
    """
    rng = as_generator(rng)
    sizes = [d_x, *hidden, n]
    params = {}
    for l, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        bound = 1.0 / math.sqrt(fan_in)
        params[f"W{l}"] = rng.uniform(-bound, bound, (fan_out, fan_in))
        params[f"b{l}"] = rng.uniform(-bound, bound, fan_out)
    if structure is None:
        slots = [np.arange(n) for _ in range(m)]
    else:
        if len(structure) != m:
            raise ValueError(f"structure lists {len(structure)} environments, expected {m}")
        slots = [np.asarray(sorted(S), dtype=int) for S in structure]
        if any(s.size and (s.min() < 0 or s.max() >= n) for s in slots):
            raise ValueError("structure refers to a nonexistent encoder output")
    params["alpha"] = np.zeros(m)
    for e, s in enumerate(slots, start=1):
        params[f"beta{e}"] = np.ones(s.size)
        params[f"gamma{e}"] = np.zeros(s.size)
    return ConceptModel(params, slots, len(sizes) - 1)


def _encode_with_cache(model, X):
    a = X
    cache = [X]
    for l in range(model.n_layers):
        z = a @ model.params[f"W{l}"].T + model.params[f"b{l}"]
        if l < model.n_layers - 1:
            cache.append(z)
            a = np.where(z > 0, z, LEAKY_SLOPE * z)
            cache.append(a)
        else:
            a = z
    return a, cache


def encode(model, X):
    """Recovered concept coordinates ``h(x)`` for every row of ``X``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != model.d_x:
        raise DimensionMismatch(f"encoder expects {model.d_x} features, got {X.shape[1]}")
    return _encode_with_cache(model, X)[0]


def head_logits(model, h, e):
    s = model.slots[e - 1]
    hs = h[:, s]
    beta, gamma = model.params[f"beta{e}"], model.params[f"gamma{e}"]
    return model.params["alpha"][e - 1] - np.sum((beta * hs) ** 2, axis=1) + hs @ gamma


def forward_logit(model, x, e):
    """``g_e(x)`` for a single observation."""
    h = encode(model, np.asarray(x, dtype=float)[None, :])
    return float(head_logits(model, h, e)[0])


def _ce_terms(g, y):
    return np.logaddexp(0.0, g) - y * g


def loss(model, batch, l1_weight=0.0):
    h = encode(model, batch.X)
    total = 0.0
    for e in np.unique(batch.env):
        rows = batch.env == e
        total += float(np.mean(_ce_terms(head_logits(model, h[rows], int(e)), batch.y[rows])))
    l1 = sum(np.abs(model.params[f"beta{e}"]).sum() for e in range(1, model.m + 1))
    return total + l1_weight * float(l1)


def loss_and_grads(model, batch, l1_weight=0.0):
    """Loss, its parts and exact gradients for every parameter.

    Returns ``(total, ce, l1, grads)`` where ``grads`` mirrors ``model.params``.
    The L1 subgradient at ``beta = 0`` is taken to be 0.
    """
    p = model.params
    h, cache = _encode_with_cache(model, batch.X)
    grads = {k: np.zeros_like(v) for k, v in p.items()}
    dh = np.zeros_like(h)
    ce = 0.0
    for e in np.unique(batch.env):
        e = int(e)
        rows = np.flatnonzero(batch.env == e)
        s = model.slots[e - 1]
        hs = h[np.ix_(rows, s)]
        y = batch.y[rows]
        beta, gamma = p[f"beta{e}"], p[f"gamma{e}"]
        g = p["alpha"][e - 1] - np.sum((beta * hs) ** 2, axis=1) + hs @ gamma
        ce += float(np.mean(_ce_terms(g, y)))
        dg = (expit(g) - y) / rows.size
        grads["alpha"][e - 1] += dg.sum()
        grads[f"beta{e}"] += -2.0 * beta * (dg @ hs**2)
        grads[f"gamma{e}"] += dg @ hs
        dh[np.ix_(rows, s)] += dg[:, None] * (gamma - 2.0 * beta**2 * hs)

    l1 = 0.0
    for e in range(1, model.m + 1):
        beta = p[f"beta{e}"]
        l1 += float(np.abs(beta).sum())
        grads[f"beta{e}"] += l1_weight * np.sign(beta)

    delta = dh
    for l in range(model.n_layers - 1, -1, -1):
        a_in = cache[2 * l]
        grads[f"W{l}"] = delta.T @ a_in
        grads[f"b{l}"] = delta.sum(axis=0)
        if l > 0:
            z_prev = cache[2 * l - 1]
            delta = (delta @ p[f"W{l}"]) * np.where(z_prev > 0, 1.0, LEAKY_SLOPE)
    return ce + l1_weight * l1, ce, l1_weight * l1, grads


class Adam:
    """Adam with one learning rate per parameter group and cosine annealing to 0."""

    def __init__(self, groups, total_steps, betas=(0.9, 0.999), eps=1e-8):
        self.groups = groups  # list of (keys, base_lr)
        self.total_steps = max(int(total_steps), 1)
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = {}
        self.v = {}

    def lr_scale(self, step):
        return 0.5 * (1.0 + math.cos(math.pi * step / self.total_steps))

    def step(self, params, grads):
        scale = self.lr_scale(self.t)
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for keys, base_lr in self.groups:
            lr = base_lr * scale
            for k in keys:
                g = grads[k]
                m = self.m.setdefault(k, np.zeros_like(g))
                v = self.v.setdefault(k, np.zeros_like(g))
                m *= self.b1
                m += (1.0 - self.b1) * g
                v *= self.b2
                v += (1.0 - self.b2) * g * g
                params[k] -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def full_batch(X_envs):
    """Every ``(x, e, y)`` triple: ``X^e`` with label 1 and ``X^0`` with label 0 per head."""
    parts, envs, ys = [], [], []
    for e in range(1, len(X_envs)):
        for x, label in ((X_envs[e], 1.0), (X_envs[0], 0.0)):
            parts.append(x)
            envs.append(np.full(len(x), e))
            ys.append(np.full(len(x), label))
    return Batch(np.vstack(parts), np.concatenate(envs), np.concatenate(ys))


@dataclass
class History:
    epoch: List[int] = field(default_factory=list)
    total_loss: List[float] = field(default_factory=list)
    ce_loss: List[float] = field(default_factory=list)
    l1_loss: List[float] = field(default_factory=list)

    def append(self, epoch, total, ce, l1):
        self.epoch.append(epoch)
        self.total_loss.append(total)
        self.ce_loss.append(ce)
        self.l1_loss.append(l1)

    def rows(self):
        return list(zip(self.epoch, self.total_loss, self.ce_loss, self.l1_loss))


def train(X_envs, n, structure=None, config=None, hidden=(32, 32), model=None):
    """Fit a model to ``X_envs = [X^0, X^1, ..., X^m]``.

    Each step takes ``batch_size`` rows of every ``X^e`` (label 1) and the same
    number of base rows (label 0, shared by all heads); every array is
    reshuffled each epoch.  The history records the full-data loss before
    training (epoch 0) and after every epoch.
    """
    config = config or TrainConfig()
    m = len(X_envs) - 1
    X_envs = [np.asarray(x, dtype=float) for x in X_envs]
    rng = as_generator(config.seed)
    if model is None:
        model = init_model(X_envs[0].shape[1], n, m, rng, hidden, structure)
    bs = config.batch_size
    steps_per_epoch = max(math.ceil(len(x) / bs) for x in X_envs)
    opt = Adam([(model.head_keys(), config.lr_head), (model.encoder_keys(), config.lr_encoder)],
               config.epochs * steps_per_epoch, config.betas, config.eps)
    everything = full_batch(X_envs)
    history = History()
    total, ce, l1, _ = loss_and_grads(model, everything, config.l1_weight)
    history.append(0, total, ce, l1)

    for epoch in range(1, config.epochs + 1):
        perms = [rng.permutation(len(x)) for x in X_envs]
        for step in range(steps_per_epoch):
            neg = X_envs[0][_chunk(perms[0], step, bs)]
            parts, envs, ys = [], [], []
            for e in range(1, m + 1):
                pos = X_envs[e][_chunk(perms[e], step, bs)]
                parts += [pos, neg]
                envs.append(np.full(len(pos) + len(neg), e))
                ys += [np.ones(len(pos)), np.zeros(len(neg))]
            batch = Batch(np.vstack(parts), np.concatenate(envs), np.concatenate(ys))
            _, _, _, grads = loss_and_grads(model, batch, config.l1_weight)
            opt.step(model.params, grads)
        total, ce, l1, _ = loss_and_grads(model, everything, config.l1_weight)
        if not np.isfinite(total):
            raise NumericalDivergence(f"non-finite loss at epoch {epoch}", epoch)
        history.append(epoch, total, ce, l1)
    return model, history


def _chunk(perm, step, bs):
    # wrap around so arrays shorter than the longest one still fill every step
    idx = np.arange(step * bs, (step + 1) * bs) % len(perm)
    return perm[idx]


class ConceptLearner(TransformerMixin, BaseEstimator):
    """Estimator wrapper: ``fit(X, y)`` with ``y`` the environment label (0 = base).

    ``transform`` returns the learned concept coordinates and
    ``decision_function`` the per-environment logits.

    Parameters
    ----------
    n_concepts : int, optional
        Encoder output width. Inferred from ``structure`` when omitted.
    structure : list of list of int, optional
        Atoms filtered by each environment ``1..m``. ``None`` gives dense heads.
    architecture : {"mlp", "linear"}
        ``mlp`` uses ``hidden_sizes`` LeakyReLU(0.2) layers.
    """

    def __init__(self, n_concepts=None, structure=None, architecture="mlp",
                 hidden_sizes=(32, 32), epochs=100, l1_weight=1e-4, lr_head=0.5,
                 lr_encoder=0.005, batch_size=256, betas=(0.9, 0.999), eps=1e-8,
                 random_state=0):
        self.n_concepts = n_concepts
        self.structure = structure
        self.architecture = architecture
        self.hidden_sizes = hidden_sizes
        self.epochs = epochs
        self.l1_weight = l1_weight
        self.lr_head = lr_head
        self.lr_encoder = lr_encoder
        self.batch_size = batch_size
        self.betas = betas
        self.eps = eps
        self.random_state = random_state

    def _hidden(self):
        if self.architecture == "linear":
            return ()
        if self.architecture == "mlp":
            return tuple(self.hidden_sizes)
        raise ValueError(f"unknown architecture {self.architecture!r}")

    def _train_config(self):
        return TrainConfig(self.epochs, self.l1_weight, self.lr_head, self.lr_encoder,
                           self.batch_size, self.betas, self.eps, self.random_state)

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        y = y.astype(int)
        labels = np.unique(y)
        if labels[0] != 0 or not np.array_equal(labels, np.arange(labels[-1] + 1)):
            raise ValueError("environment labels must be 0 (base) and 1..m without gaps")
        m = int(labels[-1])
        n = self.n_concepts
        if n is None:
            if self.structure is None:
                raise ValueError("n_concepts is required when structure is not given")
            n = max(max(S) for S in self.structure) + 1
        X_envs = [X[y == e] for e in range(m + 1)]
        self.model_, self.history_ = train(X_envs, n, self.structure, self._train_config(),
                                           self._hidden())
        self.n_features_in_ = X.shape[1]
        self.n_environments_ = m
        return self

    def transform(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=np.float64)
        return encode(self.model_, X)

    def decision_function(self, X):
        """Logits of every environment head, shape ``(n_samples, m)``."""
        h = self.transform(X)
        return np.column_stack([head_logits(self.model_, h, e)
                                for e in range(1, self.n_environments_ + 1)])
