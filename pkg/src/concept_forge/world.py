"""Ground-truth latent worlds: Gaussian-mixture base density, mixing maps, oracle log-densities."""
from dataclasses import dataclass
from typing import Tuple, Union

import numpy as np
from scipy.special import logsumexp

from .concepts import EnvironmentSystem, build_env_matrices, numerical_rank
from .exceptions import DimensionMismatch
from .rng import as_generator

LOG_2PI = np.log(2.0 * np.pi)
LEAKY_SLOPE = 0.2


@dataclass(frozen=True)
class GMMBase:
    """Diagonal-covariance Gaussian mixture over the latent space."""

    weights: np.ndarray
    means: np.ndarray
    diag_vars: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float).ravel()
        mu = np.atleast_2d(np.asarray(self.means, dtype=float))
        v = np.atleast_2d(np.asarray(self.diag_vars, dtype=float))
        if abs(w.sum() - 1.0) > 1e-12 or np.any(w < 0):
            raise ValueError("mixture weights must be a probability vector")
        if mu.shape != v.shape or mu.shape[0] != w.size:
            raise DimensionMismatch("weights, means and diag_vars disagree in shape")
        if np.any(v <= 0):
            raise ValueError("component variances must be positive")
        for name, a in (("weights", w), ("means", mu), ("diag_vars", v)):
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    @property
    def K(self):
        return self.weights.size

    @property
    def d_z(self):
        return self.means.shape[1]

    def to_dict(self):
        return {"weights": self.weights.tolist(), "means": self.means.tolist(),
                "diag_vars": self.diag_vars.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(d["weights"], d["means"], d["diag_vars"])


def random_gmm(d_z, rng=None, K=3):
    """Weights Unif(0.3, 1) normalised, means Unif(-1, 1), variances Unif(0.01, 0.015)."""
    rng = as_generator(rng)
    w = rng.uniform(0.3, 1.0, size=K)
    w = w / w.sum()
    means = rng.uniform(-1.0, 1.0, size=(K, d_z))
    variances = rng.uniform(0.01, 0.015, size=(K, d_z))
    w[-1] = 1.0 - w[:-1].sum()
    return GMMBase(w, means, variances)


def sample_base(gmm, rng, N):
    rng = as_generator(rng)
    if N == 0:
        return np.empty((0, gmm.d_z))
    comp = rng.choice(gmm.K, size=N, p=gmm.weights)
    eps = rng.standard_normal((N, gmm.d_z))
    return gmm.means[comp] + np.sqrt(gmm.diag_vars[comp]) * eps


def _as_batch(z, d):
    z = np.asarray(z, dtype=float)
    single = z.ndim == 1
    z = np.atleast_2d(z)
    if z.shape[1] != d:
        raise DimensionMismatch(f"expected latent dimension {d}, got {z.shape[1]}")
    return z, single


def _unbatch(values, single):
    return float(values[0]) if single else values


def log_density_base(gmm, z):
    """``log p(z)`` via log-sum-exp over components; accepts one point or a batch."""
    z, single = _as_batch(z, gmm.d_z)
    diff = z[:, None, :] - gmm.means[None, :, :]
    comp = -0.5 * np.sum(diff**2 / gmm.diag_vars + np.log(gmm.diag_vars) + LOG_2PI, axis=2)
    with np.errstate(divide="ignore"):
        logw = np.log(gmm.weights)
    return _unbatch(logsumexp(comp + logw, axis=1), single)


def log_odds_true(system, e, z):
    """``ln p^e(z) - ln p(z)`` up to an additive per-environment constant."""
    z, single = _as_batch(z, system.d_z)
    mats = build_env_matrices(system)
    u = z @ system.atoms.vectors.T
    vals = np.sum(-0.5 * mats.M[e - 1] * u**2 + mats.B[e - 1] * u, axis=1)
    return _unbatch(vals, single)


def g_function(system, e):
    """``g^e(z) = ln p^0(z) - ln p^e(z)`` (without its constant) as a callable."""
    return lambda z: -log_odds_true(system, e, z)


def log_filter(system, e, z):
    """Sum of Gaussian filter log-densities ``sum_k log q((A^e z - b^e)_k)``."""
    z, single = _as_batch(z, system.d_z)
    c = system.concept(e)
    r = z @ system.concept_matrix(e).T - c.valuation
    vals = np.sum(-0.5 * (r**2 / c.noise_variance + np.log(c.noise_variance) + LOG_2PI), axis=1)
    return _unbatch(vals, single)


def unnorm_log_density_concept(system, e, gmm, z):
    """``log p(z) + sum_k log q((A^e z - b^e)_k)``, i.e. ``log p_C(z) + log N_C``."""
    z, single = _as_batch(z, system.d_z)
    vals = log_density_base(gmm, z) + log_filter(system, e, z)
    return _unbatch(vals, single)


def leaky_relu(x, slope=LEAKY_SLOPE):
    return np.where(x > 0, x, slope * x)


@dataclass(frozen=True)
class LinearMixing:
    W: np.ndarray

    def __post_init__(self):
        W = np.atleast_2d(np.asarray(self.W, dtype=float))
        d_x, d_z = W.shape
        if d_x < d_z or numerical_rank(W) < d_z:
            raise DimensionMismatch("linear mixing needs full column rank")
        W.setflags(write=False)
        object.__setattr__(self, "W", W)

    kind = "linear"

    @property
    def d_z(self):
        return self.W.shape[1]

    @property
    def d_x(self):
        return self.W.shape[0]

    def to_dict(self):
        return {"kind": "linear", "W": self.W.tolist()}


@dataclass(frozen=True)
class MLPMixing:
    """Affine layers with LeakyReLU(0.2) between them and an identity output layer."""

    layers: Tuple[Tuple[np.ndarray, np.ndarray], ...]

    def __post_init__(self):
        layers = []
        for W, b in self.layers:
            W = np.atleast_2d(np.asarray(W, dtype=float))
            b = np.asarray(b, dtype=float).ravel()
            if b.size != W.shape[0]:
                raise DimensionMismatch("bias length must equal layer output width")
            W.setflags(write=False)
            b.setflags(write=False)
            layers.append((W, b))
        for (W1, _), (W2, _) in zip(layers, layers[1:]):
            if W2.shape[1] != W1.shape[0]:
                raise DimensionMismatch("consecutive layer widths disagree")
        d_z = layers[0][0].shape[1]
        if any(W.shape[0] < d_z for W, _ in layers):
            raise DimensionMismatch("every layer must be at least as wide as the input")
        object.__setattr__(self, "layers", tuple(layers))

    kind = "mlp"

    @property
    def d_z(self):
        return self.layers[0][0].shape[1]

    @property
    def d_x(self):
        return self.layers[-1][0].shape[0]

    def to_dict(self):
        return {"kind": "mlp",
                "layers": [{"W": W.tolist(), "b": b.tolist()} for W, b in self.layers]}


def mixing_from_dict(d):
    if d["kind"] == "linear":
        return LinearMixing(np.array(d["W"], dtype=float))
    if d["kind"] == "mlp":
        return MLPMixing(tuple((np.array(l["W"], dtype=float), np.array(l["b"], dtype=float))
                               for l in d["layers"]))
    raise ValueError(f"unknown mixing kind {d['kind']!r}")


def random_mixing(kind, d_z, d_x, rng=None, hidden=16, max_retries=100):
    """Random injective-in-practice mixing.

    ``linear``: iid standard normal ``W`` redrawn until well conditioned.
    ``mlp``: one hidden layer of ``hidden`` units, weights and biases
    Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)).  Injectivity of the MLP is not
    certified; generic weights with non-contracting widths make collisions a
    null event.
    """
    rng = as_generator(rng)
    if kind == "linear":
        for _ in range(max_retries):
            W = rng.standard_normal((d_x, d_z))
            s = np.linalg.svd(W, compute_uv=False)
            if s[-1] > 1e-3 * s[0]:
                return LinearMixing(W)
        raise DimensionMismatch("could not draw a full-rank linear mixing")
    if kind == "mlp":
        sizes = [d_z, hidden, d_x]
        layers = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            layers.append((rng.uniform(-bound, bound, (fan_out, fan_in)),
                           rng.uniform(-bound, bound, fan_out)))
        return MLPMixing(tuple(layers))
    raise ValueError(f"unknown mixing kind {kind!r}")


def mix(f, Z):
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    if Z.shape[1] != f.d_z:
        raise DimensionMismatch(f"mixing expects {f.d_z} latent dims, got {Z.shape[1]}")
    if isinstance(f, LinearMixing):
        return Z @ f.W.T
    out = Z
    for k, (W, b) in enumerate(f.layers):
        out = out @ W.T + b
        if k < len(f.layers) - 1:
            out = leaky_relu(out)
    return out


@dataclass(frozen=True)
class World:
    """Everything needed to generate data: concepts, base density and mixing."""

    system: EnvironmentSystem
    gmm: GMMBase
    mixing: Union[LinearMixing, MLPMixing]

    @property
    def d_x(self):
        return self.mixing.d_x

    def to_dict(self):
        d = self.system.to_dict()
        d["d_x"] = self.d_x
        d["gmm"] = self.gmm.to_dict()
        d["mixing"] = self.mixing.to_dict()
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(EnvironmentSystem.from_dict(d), GMMBase.from_dict(d["gmm"]),
                   mixing_from_dict(d["mixing"]))
