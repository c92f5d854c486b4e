"""Recover which atoms each environment filters, and their valuations, from the
quadratic log-density differences ``g^e(z) = ln p^0(z) - ln p^e(z)``.

``g^e`` has Hessian ``sum_{i in S^e} M_ei a_i a_i^T``, so the rank of the summed
Hessians over a set ``T`` of environments counts ``|S_T|``, the atoms filtered
anywhere in ``T``.  Inclusion-exclusion over all ``T`` turns these counts into
the multiset of per-atom environment signatures.  Valuation gaps come from
constrained minima: restricted to the minimiser set of the environments that
ignore atom ``i``, moving from the minimiser of ``g^{e1}`` to that of ``g^{e2}``
costs ``(B_{e1 i} - B_{e2 i})^2 / 2`` in standardised units.
"""
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .concepts import RANK_RTOL, build_env_matrices, numerical_rank
from .exceptions import NotQuadratic, SignAmbiguity, SubsetBudget
from .rng import as_generator
from .world import g_function

MAX_ENVIRONMENTS = 16
QUAD_CERTIFY = 1e-8
QUAD_REJECT = 1e-6


@dataclass(frozen=True)
class QuadraticForm:
    """``q(z) = 0.5 z^T H z + c^T z + d``."""

    H: np.ndarray
    c: np.ndarray
    d: float = 0.0

    def __post_init__(self):
        H = np.asarray(self.H, dtype=float)
        if not np.allclose(H, H.T, atol=1e-10, rtol=0):
            raise ValueError("H must be symmetric")
        object.__setattr__(self, "H", 0.5 * (H + H.T))
        object.__setattr__(self, "c", np.asarray(self.c, dtype=float))

    def __call__(self, z):
        z = np.asarray(z, dtype=float)
        return 0.5 * z @ self.H @ z + self.c @ z + self.d


def _monomials(Z):
    N, d = Z.shape
    iu, ju = np.triu_indices(d)
    return np.column_stack([Z[:, iu] * Z[:, ju], Z, np.ones(N)])


def fit_quadratic(g_oracle, d_z, rng=None, margin=10, scale=1.0):
    """Least-squares quadratic through oracle values at random points.

    The fit is rejected when the largest residual, relative to the largest
    absolute oracle value, exceeds ``1e-6``.
    """
    rng = as_generator(0 if rng is None else rng)
    n_coef = (d_z + 1) * (d_z + 2) // 2
    Z = scale * rng.standard_normal((n_coef + margin, d_z))
    y = np.array([g_oracle(z) for z in Z], dtype=float)
    A = _monomials(Z)
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = np.max(np.abs(A @ coef - y)) / max(1.0, np.max(np.abs(y)))
    if resid > QUAD_REJECT:
        raise NotQuadratic(f"relative residual {resid:.3g} exceeds {QUAD_REJECT:g}")
    iu, ju = np.triu_indices(d_z)
    k = iu.size
    H = np.zeros((d_z, d_z))
    H[iu, ju] = coef[:k]
    H = H + H.T  # off-diagonal coefficient equals H_ij; diagonal coefficient is H_ii / 2
    return QuadraticForm(H, coef[k:k + d_z], float(coef[-1]))


def oracle_forms(system, rng=None):
    """Fitted forms for the exact ``g^e`` of every environment of ``system``."""
    rng = as_generator(0 if rng is None else rng)
    return [fit_quadratic(g_function(system, e), system.d_z, rng) for e in range(1, system.m + 1)]


def subset_concept_count(forms, T):
    """``|S_T|`` as the rank of the summed Hessians of the environments in ``T`` (0-based)."""
    T = list(T)
    if not T:
        return 0
    return numerical_rank(sum(forms[e].H for e in T), RANK_RTOL)


def signature_counts(forms):
    """Number of atoms filtered by exactly the environments in each bitmask.

    Bit ``e`` (0-based) of a mask stands for environment ``e + 1``.
    """
    m = len(forms)
    if m > MAX_ENVIRONMENTS:
        raise SubsetBudget(f"{m} environments exceed the subset budget of {MAX_ENVIRONMENTS}")
    full = (1 << m) - 1
    count = np.zeros(1 << m, dtype=np.int64)
    for mask in range(1 << m):
        count[mask] = subset_concept_count(forms, [e for e in range(m) if mask >> e & 1])
    n = int(count[full])
    # atoms whose signature lies inside W are exactly those missed by the complement of W
    inside = np.array([n - count[full ^ W] for W in range(1 << m)], dtype=np.int64)
    for e in range(m):  # Moebius inversion over the subset lattice
        bit = 1 << e
        for W in range(1 << m):
            if W & bit:
                inside[W] -= inside[W ^ bit]
    return inside


@dataclass
class IncidenceResult:
    incidence: np.ndarray  # m x n binary
    signatures: List[int]
    non_separable: List[int] = field(default_factory=list)


def _order_key(mask, m):
    # environment 1 is the most significant digit
    return sum(1 << (m - 1 - e) for e in range(m) if mask >> e & 1)


def recover_incidence(forms):
    """Binary environment-by-atom incidence, columns ordered by signature (descending)."""
    m = len(forms)
    exact = signature_counts(forms)
    sigs = []
    non_sep = []
    for mask in range(1, 1 << m):
        k = int(exact[mask])
        if k < 0:
            raise ValueError("inconsistent subset counts; the forms are not exact")
        sigs += [mask] * k
        if k > 1:
            non_sep.append(mask)
    sigs.sort(key=lambda s: _order_key(s, m), reverse=True)
    inc = np.array([[s >> e & 1 for s in sigs] for e in range(m)], dtype=int).reshape(m, len(sigs))
    return IncidenceResult(inc, sigs, non_sep)


def _null_basis(A, rtol=RANK_RTOL):
    if A.size == 0 or not np.any(A):
        return np.eye(A.shape[1])
    _, s, Vt = np.linalg.svd(A)
    r = int(np.sum(s > rtol * s[0]))
    return Vt[r:].T


def argmin_affine(form, base, basis):
    """Minimise ``form`` over ``base + span(basis)``; return the minimiser set and value."""
    if basis.shape[1] == 0:
        return base, basis, float(form(base))
    Hr = basis.T @ form.H @ basis
    gr = basis.T @ (form.H @ base + form.c)
    y = -np.linalg.pinv(Hr, rcond=RANK_RTOL, hermitian=True) @ gr
    new_base = base + basis @ y
    new_basis = basis @ _null_basis(Hr)
    return new_base, new_basis, float(form(new_base))


def argmin_set(forms, T, d_z):
    """Affine minimiser set of ``sum_{e in T} q_e`` as ``(point, basis)``."""
    base, basis = np.zeros(d_z), np.eye(d_z)
    if T:
        total = QuadraticForm(sum(forms[e].H for e in T), sum(forms[e].c for e in T))
        base, basis, _ = argmin_affine(total, base, basis)
    return base, basis


def valuation_gap_sq(forms, T_i, e1, e2, d_z):
    """``min_{I^{e1}} q_{e2} - min_{I} q_{e2}`` on ``I`` the argmin set of ``T_i``;
    equals ``(B_{e1 i} - B_{e2 i})^2 / 2`` in standardised units."""
    base, basis = argmin_set(forms, T_i, d_z)
    b1, basis1, _ = argmin_affine(forms[e1], base, basis)
    _, _, low = argmin_affine(forms[e2], base, basis)
    _, _, high = argmin_affine(forms[e2], b1, basis1)
    return high - low


def normalize_column(values, support):
    """Centre the support entries (zero column mean) and make the first one positive."""
    col = np.zeros(len(values))
    if not support:
        return col
    v = np.array([values[e] for e in support], dtype=float)
    v = v - v.mean()
    nz = np.flatnonzero(np.abs(v) > 1e-12 * max(1.0, np.max(np.abs(v))))
    if nz.size and v[nz[0]] < 0:
        v = -v
    col[support] = v
    return col


def recover_valuations(forms, incidence, tol=1e-6):
    """Normalised valuation matrix ``B_hat`` aligned with the columns of ``incidence``.

    Values are in standardised units ``b / sigma``.  Each column is centred and
    oriented so its first nonzero entry is positive.
    """
    incidence = np.asarray(incidence)
    m, n = incidence.shape
    d_z = forms[0].H.shape[0]
    B_hat = np.zeros((m, n))
    for i in range(n):
        support = [e for e in range(m) if incidence[e, i]]
        T_i = [e for e in range(m) if not incidence[e, i]]
        if not support:
            raise SignAmbiguity(f"atom column {i} is filtered by no environment")
        k = len(support)
        D = np.zeros((k, k))
        for a in range(k):
            for b in range(a + 1, k):
                sq = valuation_gap_sq(forms, T_i, support[a], support[b], d_z)
                D[a, b] = D[b, a] = np.sqrt(max(2.0 * sq, 0.0))
        p, q = np.unravel_index(np.argmax(D), D.shape)
        # with p, q the extreme valuations every other one lies in between
        x = D[p].copy()
        scale = max(1.0, D[p, q])
        if np.any(np.abs(D[p] + D[:, q] - D[p, q]) > tol * scale):
            raise SignAmbiguity(f"atom column {i}: valuation gaps are not collinear")
        values = np.zeros(m)
        values[support] = x
        B_hat[:, i] = normalize_column(values, support)
    return B_hat


def normalized_truth(system):
    """Ground-truth ``B`` in the same standardised, centred, oriented form as ``recover_valuations``."""
    mats = build_env_matrices(system)
    out = np.zeros_like(mats.B)
    for i in range(system.n):
        support = list(np.flatnonzero(mats.M[:, i]))
        std_vals = np.zeros(system.m)
        std_vals[support] = mats.B[support, i] / np.sqrt(mats.M[support, i])
        out[:, i] = normalize_column(std_vals, support)
    return out


@dataclass
class RecoveredStructure:
    M_hat: np.ndarray
    B_hat: Optional[np.ndarray]
    non_separable: List[int] = field(default_factory=list)

    def to_dict(self):
        return {"M_hat": self.M_hat.tolist(),
                "B_hat": None if self.B_hat is None else self.B_hat.tolist(),
                "non_separable": [int(s) for s in self.non_separable]}


def identify(forms):
    inc = recover_incidence(forms)
    B_hat = None if inc.non_separable else recover_valuations(forms, inc.incidence)
    return RecoveredStructure(inc.incidence, B_hat, inc.non_separable)


def compare_to_truth(system, recovered, tol=1e-6):
    """Match recovered columns to true atoms by signature and report the differences."""
    mats = build_env_matrices(system)
    true_inc = (mats.M != 0).astype(int)
    m = system.m
    true_sigs = [sum(1 << e for e in range(m) if true_inc[e, i]) for i in range(system.n)]
    rec_sigs = [sum(1 << e for e in range(m) if recovered.M_hat[e, j])
                for j in range(recovered.M_hat.shape[1])]
    incidence_match = sorted(true_sigs) == sorted(rec_sigs)
    report = {"incidence_match": incidence_match, "n_true": system.n,
              "n_recovered": len(rec_sigs)}
    if incidence_match and recovered.B_hat is not None and len(set(true_sigs)) == len(true_sigs):
        truth = normalized_truth(system)
        perm = [rec_sigs.index(s) for s in true_sigs]
        err = float(np.max(np.abs(recovered.B_hat[:, perm] - truth))) if system.n else 0.0
        report.update({"column_of_atom": perm, "max_valuation_error": err,
                       "valuation_match": err <= tol})
    return report
