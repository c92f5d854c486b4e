"""Steering vectors and steering matrices built from counterfactual activation pairs.

A steering matrix ``M = sum_i (h_true_i - h_false_i) emb_i^T`` turns a context
embedding ``emb(x)`` into a direction ``eta(x) = M emb(x)``, i.e. a
similarity-weighted sum of the pair differences.  With every embedding equal it
reduces to the mean steering vector.

The synthetic world used for validation places a concept direction ``a`` in
activation space with a set of held-out concept directions orthogonal to it.
"""
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .exceptions import DimensionMismatch, ZeroDirection
from .rng import as_generator

ZERO_NORM = 1e-12


@dataclass(frozen=True)
class CounterfactualPair:
    h_false: np.ndarray
    h_true: np.ndarray
    ctx_embedding: np.ndarray

    def __post_init__(self):
        hf = np.asarray(self.h_false, dtype=float)
        ht = np.asarray(self.h_true, dtype=float)
        emb = np.asarray(self.ctx_embedding, dtype=float)
        if hf.shape != ht.shape:
            raise DimensionMismatch("h_false and h_true differ in dimension")
        if abs(np.linalg.norm(emb) - 1.0) > 1e-9:
            raise ValueError("context embedding must be unit norm")
        object.__setattr__(self, "h_false", hf)
        object.__setattr__(self, "h_true", ht)
        object.__setattr__(self, "ctx_embedding", emb)


@dataclass
class PairSet:
    """Column-stacked counterfactual pairs; rows of ``emb`` are unit vectors."""

    h_false: np.ndarray
    h_true: np.ndarray
    emb: np.ndarray

    def __post_init__(self):
        self.h_false = np.atleast_2d(np.asarray(self.h_false, dtype=float))
        self.h_true = np.atleast_2d(np.asarray(self.h_true, dtype=float))
        self.emb = np.atleast_2d(np.asarray(self.emb, dtype=float))
        if self.h_false.shape != self.h_true.shape or len(self.emb) != len(self.h_false):
            raise DimensionMismatch("pair arrays disagree in shape")
        if np.any(np.abs(np.linalg.norm(self.emb, axis=1) - 1.0) > 1e-9):
            raise ValueError("context embeddings must be unit norm")

    def __len__(self):
        return len(self.h_false)

    @property
    def diffs(self):
        return self.h_true - self.h_false

    @classmethod
    def from_pairs(cls, pairs: Sequence[CounterfactualPair]):
        return cls(np.array([p.h_false for p in pairs]), np.array([p.h_true for p in pairs]),
                   np.array([p.ctx_embedding for p in pairs]))


def _as_pairset(pairs):
    if isinstance(pairs, PairSet):
        return pairs
    return PairSet.from_pairs(list(pairs))


def _normalize(v):
    norm = np.linalg.norm(v)
    if norm < ZERO_NORM:
        raise ZeroDirection(f"direction norm {norm:.3g} is numerically zero")
    return v / norm


def mean_steering_vector(pairs):
    ps = _as_pairset(pairs)
    if len(ps) == 0:
        raise ValueError("at least one pair is required")
    return _normalize(ps.diffs.mean(axis=0))


@dataclass(frozen=True)
class SteeringMatrix:
    M: np.ndarray

    @property
    def d_act(self):
        return self.M.shape[0]

    @property
    def d_emb(self):
        return self.M.shape[1]


def build_steering_matrix(pairs):
    ps = _as_pairset(pairs)
    if len(ps) == 0:
        raise ValueError("at least one pair is required")
    return SteeringMatrix(ps.diffs.T @ ps.emb)


def apply_steering(M, ctx_embedding, normalize=True):
    """``eta(x) = M emb(x)``, unit-normalised unless ``normalize`` is false."""
    mat = M.M if isinstance(M, SteeringMatrix) else np.asarray(M, dtype=float)
    emb = np.asarray(ctx_embedding, dtype=float)
    if emb.shape[-1] != mat.shape[1]:
        raise DimensionMismatch(f"embedding has {emb.shape[-1]} dims, matrix expects {mat.shape[1]}")
    eta = mat @ emb
    return _normalize(eta) if normalize else eta


def dynamic_sigma(activations, direction):
    """Sample standard deviation (ddof=1) of activations projected on ``direction``."""
    acts = np.atleast_2d(np.asarray(activations, dtype=float))
    direction = np.asarray(direction, dtype=float)
    if len(acts) < 2:
        raise ValueError("need at least two activations")
    if abs(np.linalg.norm(direction) - 1.0) > 1e-9:
        raise ValueError("direction must be unit norm")
    return float(np.std(acts @ direction, ddof=1))


@dataclass(frozen=True)
class SyntheticSteeringWorld:
    """Activation space with one steered concept and held-out orthogonal concepts.

    ``concept`` is the concept direction ``a`` (false valuation ``b0``, true
    valuation ``b1``); rows of ``others`` are orthogonal to ``a``.
    Activations are ``value * a / |a|^2`` plus isotropic noise of scale
    ``orth_scale`` in the complement of ``a``.
    """

    concept: np.ndarray
    others: np.ndarray
    b0: float = 0.0
    b1: float = 1.0
    orth_scale: float = 1.0

    @property
    def d_act(self):
        return self.concept.size

    @property
    def shift(self):
        """Minimum-norm activation change taking the concept from ``b0`` to ``b1``."""
        a = self.concept
        return (self.b1 - self.b0) * a / (a @ a)

    def _orth(self, X):
        a = self.concept / np.linalg.norm(self.concept)
        return X - np.outer(X @ a, a)

    def activations(self, rng, N, value=None):
        rng = as_generator(rng)
        value = self.b0 if value is None else value
        a = self.concept
        return value * a / (a @ a) + self._orth(self.orth_scale * rng.standard_normal((N, self.d_act)))

    def counterfactual_pairs(self, rng, N, noise=0.0, d_emb=8, shared_embedding=False):
        """Pairs ``h_true = h_false + shift + noise``, the noise orthogonal to ``a``."""
        rng = as_generator(rng)
        h_false = self.activations(rng, N, self.b0)
        h_true = h_false + self.shift + self._orth(noise * rng.standard_normal((N, self.d_act)))
        if shared_embedding:
            u = rng.standard_normal(d_emb)
            emb = np.tile(u / np.linalg.norm(u), (N, 1))
        else:
            emb = rng.standard_normal((N, d_emb))
            emb /= np.linalg.norm(emb, axis=1, keepdims=True)
        return PairSet(h_false, h_true, emb)

    def to_dict(self):
        return {"concept": self.concept.tolist(), "others": self.others.tolist(),
                "b0": self.b0, "b1": self.b1, "orth_scale": self.orth_scale}

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["concept"], float), np.array(d["others"], float), d["b0"], d["b1"],
                   d.get("orth_scale", 1.0))


def random_steering_world(d_act, n_others, rng=None, b0=0.0, b1=1.0, orth_scale=1.0):
    rng = as_generator(rng)
    if n_others > d_act - 1:
        raise DimensionMismatch("too many orthogonal concepts for the activation dimension")
    Q, _ = np.linalg.qr(rng.standard_normal((d_act, n_others + 1)))
    concept = Q[:, 0] * rng.uniform(0.5, 2.0)
    others = (Q[:, 1:] * rng.uniform(0.5, 2.0, n_others)).T
    return SyntheticSteeringWorld(concept, others, b0, b1, orth_scale)


@dataclass
class SteerReport:
    concept_shift: float
    orthogonal_leakage: float
    n_pairs: int
    n_queries: int

    def to_dict(self):
        return dict(self.__dict__)


def steer_and_score(world, pairs, alpha, queries, query_embeddings=None, sigma=None):
    """Steer every query ``h`` to ``h + alpha * sigma * eta(x)`` and score the result.

    ``eta`` comes from the steering matrix applied to each query's embedding;
    without embeddings the mean steering vector is used.  ``sigma=None``
    computes it per direction from the query batch itself.

    ``concept_shift`` is the mean ``|<a, h'> - b1| / |b1 - b0|``;
    ``orthogonal_leakage`` the mean over queries and held-out concepts of
    ``|<c, h' - h>| / |c|``.
    """
    ps = _as_pairset(pairs)
    Q = np.atleast_2d(np.asarray(queries, dtype=float))
    if query_embeddings is None:
        etas = np.tile(mean_steering_vector(ps), (len(Q), 1))
    else:
        sm = build_steering_matrix(ps)
        etas = np.array([apply_steering(sm, q) for q in np.atleast_2d(query_embeddings)])
    if sigma is None:
        sig = np.array([dynamic_sigma(Q, eta) for eta in etas])
    else:
        sig = np.full(len(Q), float(sigma))
    moved = alpha * sig[:, None] * etas
    steered = Q + moved
    a = world.concept
    concept_shift = np.mean(np.abs(steered @ a - world.b1)) / abs(world.b1 - world.b0)
    others = np.atleast_2d(world.others)
    leak = np.abs(moved @ others.T) / np.linalg.norm(others, axis=1)
    return SteerReport(float(concept_shift), float(np.mean(leak)), len(ps), len(Q))
