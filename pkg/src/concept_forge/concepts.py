"""Atomic concepts, concept-conditional environments and their diversity checks.

An environment ``e`` (1-based, environment 0 is the unfiltered base data) filters
the latent distribution on a subset ``S^e`` of the atoms at valuations ``b^e``
with a Gaussian filter of variance ``sigma^2``.  Two matrices summarise a system:
the environment-concept matrix ``M`` (``1/sigma^2`` on the support) and the
environment-valuation matrix ``B`` (``b/sigma^2`` on the same support).
"""
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .exceptions import DegenerateSystem, RankDeficiency
from .rng import as_generator

RANK_RTOL = 1e-8
WITNESS_TOL = 1e-6


def numerical_rank(A, rtol=RANK_RTOL):
    """Rank from singular values above ``rtol`` times the largest one."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.size == 0:
        return 0
    s = np.linalg.svd(A, compute_uv=False)
    if s[0] == 0.0:
        return 0
    return int(np.sum(s > rtol * s[0]))


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class AtomicConceptSet:
    """``n`` linearly independent atom directions in a ``d_z``-dim latent space."""

    vectors: np.ndarray

    def __post_init__(self):
        v = np.atleast_2d(np.asarray(self.vectors, dtype=float))
        n, d_z = v.shape
        if n > d_z:
            raise RankDeficiency(f"{n} atoms cannot be independent in dimension {d_z}")
        if numerical_rank(v) != n:
            raise RankDeficiency("atom vectors are linearly dependent")
        object.__setattr__(self, "vectors", _frozen(v))

    @property
    def n(self):
        return self.vectors.shape[0]

    @property
    def d_z(self):
        return self.vectors.shape[1]


@dataclass(frozen=True)
class ConceptSpec:
    atom_indices: Tuple[int, ...]
    valuation: np.ndarray
    noise_variance: float = 0.005

    def __post_init__(self):
        idx = tuple(int(i) for i in self.atom_indices)
        if len(set(idx)) != len(idx):
            raise ValueError(f"duplicate atom indices in {idx}")
        val = np.atleast_1d(np.asarray(self.valuation, dtype=float))
        if val.shape != (len(idx),):
            raise ValueError("valuation length must match the number of atoms")
        if not self.noise_variance > 0:
            raise ValueError("noise_variance must be positive")
        object.__setattr__(self, "atom_indices", idx)
        object.__setattr__(self, "valuation", _frozen(val))
        object.__setattr__(self, "noise_variance", float(self.noise_variance))

    @property
    def dim(self):
        return len(self.atom_indices)


@dataclass(frozen=True)
class EnvMatrices:
    M: np.ndarray
    B: np.ndarray


@dataclass(frozen=True)
class EnvironmentSystem:
    """Atoms plus ``m`` concept-conditional environments (base environment implicit)."""

    atoms: AtomicConceptSet
    concepts: Tuple[ConceptSpec, ...]

    def __post_init__(self):
        concepts = tuple(self.concepts)
        n = self.atoms.n
        seen = set()
        for c in concepts:
            for i in c.atom_indices:
                if not 0 <= i < n:
                    raise ValueError(f"atom index {i} out of range [0, {n})")
                seen.add(i)
        if seen != set(range(n)):
            missing = sorted(set(range(n)) - seen)
            raise ValueError(f"atoms {missing} are not filtered by any environment")
        object.__setattr__(self, "concepts", concepts)

    @property
    def n(self):
        return self.atoms.n

    @property
    def d_z(self):
        return self.atoms.d_z

    @property
    def m(self):
        return len(self.concepts)

    def concept(self, e):
        """Concept of environment ``e`` (1-based)."""
        if not 1 <= e <= self.m:
            raise IndexError(f"environment {e} not in [1, {self.m}]")
        return self.concepts[e - 1]

    def concept_matrix(self, e):
        """Rows of ``A^e``: the atoms filtered in environment ``e``."""
        return self.atoms.vectors[list(self.concept(e).atom_indices)]

    def supports(self):
        return [set(c.atom_indices) for c in self.concepts]

    def permuted(self, perm):
        """Relabel atoms so that new atom ``k`` is old atom ``perm[k]``."""
        perm = list(perm)
        inv = np.argsort(perm)
        atoms = AtomicConceptSet(self.atoms.vectors[perm])
        concepts = [
            ConceptSpec([int(inv[i]) for i in c.atom_indices], c.valuation, c.noise_variance)
            for c in self.concepts
        ]
        return EnvironmentSystem(atoms, tuple(concepts))

    def to_dict(self):
        sig = {c.noise_variance for c in self.concepts}
        out = {
            "n": self.n,
            "d_z": self.d_z,
            "sigma2": sig.pop() if len(sig) == 1 else None,
            "atoms": self.atoms.vectors.tolist(),
            "concepts": [],
        }
        for c in self.concepts:
            entry = {"atom_indices": list(c.atom_indices), "valuation": c.valuation.tolist()}
            if out["sigma2"] is None:
                entry["sigma2"] = c.noise_variance
            out["concepts"].append(entry)
        return out

    @classmethod
    def from_dict(cls, d):
        atoms = AtomicConceptSet(np.array(d["atoms"], dtype=float).reshape(d["n"], d["d_z"]))
        concepts = [
            ConceptSpec(c["atom_indices"], c["valuation"], c.get("sigma2", d.get("sigma2")))
            for c in d["concepts"]
        ]
        return cls(atoms, tuple(concepts))


def build_env_matrices(system):
    m, n = system.m, system.n
    M = np.zeros((m, n))
    B = np.zeros((m, n))
    for e, c in enumerate(system.concepts):
        for k, i in enumerate(c.atom_indices):
            M[e, i] = 1.0 / c.noise_variance
            B[e, i] = c.valuation[k] / c.noise_variance
    return EnvMatrices(M, B)


@dataclass
class DiversityReport:
    holds: bool
    witness_v: Optional[np.ndarray] = None
    rank: int = 0


def check_diversity_one(mats, rng=None, tolerance=WITNESS_TOL, n_draws=16):
    """Test for a left null vector ``v`` of ``M`` with every entry of ``v^T B`` nonzero.

    Random unit vectors in the left null space of ``M`` are probed; the set of
    failing directions is a finite union of hyperplanes, so a random draw
    succeeds almost surely when such a vector exists.
    """
    M, B = np.asarray(mats.M, float), np.asarray(mats.B, float)
    m, n = M.shape
    if m < n:
        raise DegenerateSystem(f"m={m} environments cannot give rank {n}")
    rank = numerical_rank(M)
    if rank < n:
        return DiversityReport(False, None, rank)
    U, s, _ = np.linalg.svd(M)
    null = U[:, rank:]
    if null.shape[1] == 0:
        return DiversityReport(False, None, rank)
    rng = as_generator(0 if rng is None else rng)
    for _ in range(n_draws):
        c = rng.standard_normal(null.shape[1])
        v = null @ (c / np.linalg.norm(c))
        if np.max(np.abs(v @ M)) <= tolerance and np.min(np.abs(v @ B)) > tolerance:
            return DiversityReport(True, v, rank)
    return DiversityReport(False, None, rank)


@dataclass
class DiversityTwoReport:
    holds: bool
    violating_pairs: List[Tuple[int, int]] = field(default_factory=list)


def check_diversity_two(system):
    """Every ordered atom pair ``(i, j)`` must be separated by some environment."""
    supports = system.supports()
    bad = []
    for i in range(system.n):
        for j in range(system.n):
            if i != j and not any(i in S and j not in S for S in supports):
                bad.append((i, j))
    return DiversityTwoReport(not bad, bad)


def generate_random_system(n, d_z, m=None, sigma2=0.005, rng=None, valuation_scale=0.3,
                           anchors=None, max_retries=100):
    """Random atoms and a default environment layout.

    Environments ``1..n`` filter one atom each, environment ``n+1`` filters all
    atoms jointly, and any further environments filter random nonempty subsets.
    Atom entries are iid Uniform(-0.3, 0.3).  Valuations are iid
    Uniform(-valuation_scale, valuation_scale) times the atom norm, unless
    ``anchors`` (one latent point per environment) is given, in which case
    environment ``e`` is centred on ``A^e anchors[e-1]``.
    """
    m = n + 1 if m is None else m
    if n > d_z:
        raise RankDeficiency(f"{n} atoms cannot be independent in dimension {d_z}")
    if m < n + 1:
        raise ValueError("need m >= n + 1 environments")
    rng = as_generator(rng)
    for _ in range(max_retries):
        vectors = rng.uniform(-0.3, 0.3, size=(n, d_z))
        if numerical_rank(vectors) == n:
            break
    else:
        raise RankDeficiency(f"no rank-{n} atom draw in {max_retries} attempts")
    norms = np.linalg.norm(vectors, axis=1)

    supports: List[Sequence[int]] = [[i] for i in range(n)] + [list(range(n))]
    while len(supports) < m:
        mask = rng.random(n) < 0.5
        if not mask.any():
            mask[rng.integers(n)] = True
        supports.append(list(np.flatnonzero(mask)))

    concepts = []
    for e, S in enumerate(supports):
        if anchors is None:
            b = rng.uniform(-valuation_scale, valuation_scale, size=len(S)) * norms[S]
        else:
            b = vectors[S] @ np.asarray(anchors[e], dtype=float)
        concepts.append(ConceptSpec(S, b, sigma2))
    return EnvironmentSystem(AtomicConceptSet(vectors), tuple(concepts))
