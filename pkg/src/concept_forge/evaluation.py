"""Identifiability metrics for recovered concept valuations."""
import itertools
import warnings
from dataclasses import dataclass, field
from typing import List

import numpy as np
from scipy.optimize import linear_sum_assignment

from .exceptions import DegenerateTruth

SST_FLOOR = 1e-12
EXHAUSTIVE_MAX_N = 8


class ZeroVarianceWarning(UserWarning):
    pass


def true_valuations(system, Z):
    """``<a_i, z>`` for every atom (columns) and latent row."""
    return np.atleast_2d(np.asarray(Z, dtype=float)) @ system.atoms.vectors.T


def r_squared(recovered, truth, return_skipped=False):
    """Mean coefficient of determination of each truth column regressed on ``[recovered, 1]``."""
    recovered = np.atleast_2d(np.asarray(recovered, dtype=float))
    truth = np.atleast_2d(np.asarray(truth, dtype=float))
    N = truth.shape[0]
    if recovered.shape[0] != N:
        raise ValueError("recovered and truth have different row counts")
    if N <= recovered.shape[1] + 1:
        raise ValueError(f"need more than {recovered.shape[1] + 1} rows, got {N}")
    design = np.column_stack([recovered, np.ones(N)])
    coef, *_ = np.linalg.lstsq(design, truth, rcond=None)
    resid = truth - design @ coef
    sst = np.sum((truth - truth.mean(axis=0)) ** 2, axis=0)
    ok = sst >= SST_FLOOR
    skipped = list(np.flatnonzero(~ok))
    if not ok.any():
        raise DegenerateTruth("every truth column is constant")
    r2 = 1.0 - np.sum(resid[:, ok] ** 2, axis=0) / sst[ok]
    score = float(np.mean(r2))
    return (score, skipped) if return_skipped else score


def correlation_matrix(recovered, truth):
    """Pearson correlations ``C[i, j]`` between recovered column ``i`` and truth column ``j``.

    Pairs involving a constant column get correlation 0.
    """
    recovered = np.atleast_2d(np.asarray(recovered, dtype=float))
    truth = np.atleast_2d(np.asarray(truth, dtype=float))
    rc = recovered - recovered.mean(axis=0)
    tc = truth - truth.mean(axis=0)
    rn = np.sqrt(np.sum(rc**2, axis=0))
    tn = np.sqrt(np.sum(tc**2, axis=0))
    zero_r, zero_t = rn == 0, tn == 0
    if zero_r.any() or zero_t.any():
        warnings.warn("constant column in correlation; its correlations are set to 0",
                      ZeroVarianceWarning, stacklevel=2)
    C = (rc.T @ tc) / np.outer(np.where(zero_r, 1.0, rn), np.where(zero_t, 1.0, tn))
    C[zero_r, :] = 0.0
    C[:, zero_t] = 0.0
    return np.clip(C, -1.0, 1.0)


def best_permutation_exhaustive(score):
    """Permutation ``pi`` maximising ``sum_j score[pi[j], j]``; lexicographically first on ties."""
    n = score.shape[0]
    perms = np.array(list(itertools.permutations(range(n))), dtype=int)
    totals = score[perms, np.arange(n)].sum(axis=1)
    # itertools yields lexicographic order and argmax returns the first maximum
    return perms[int(np.argmax(totals))]


def best_permutation_assignment(score):
    rows, cols = linear_sum_assignment(-score)
    perm = np.empty(score.shape[1], dtype=int)
    perm[cols] = rows
    return perm


def mcc(recovered, truth):
    """Mean absolute correlation under the best matching.

    Returns ``(score, perm)`` where recovered column ``perm[j]`` is matched to
    truth column ``j``.
    """
    if np.shape(recovered)[0] <= 2:
        raise ValueError("correlations need at least three rows")
    C = np.abs(correlation_matrix(recovered, truth))
    if C.shape[0] <= EXHAUSTIVE_MAX_N:
        perm = best_permutation_exhaustive(C)
    else:
        perm = best_permutation_assignment(C)
    return float(np.mean(C[perm, np.arange(C.shape[1])])), perm


def affine_alignment_check(recovered, truth, perm):
    """Mean normalised RMSE of per-atom fits ``recovered[:, perm[j]] ~ slope * truth[:, j] + c``.

    A value near zero certifies recovery up to permutation, per-atom scaling and
    shift.  A constant recovered column contributes 1.
    """
    recovered = np.atleast_2d(np.asarray(recovered, dtype=float))
    truth = np.atleast_2d(np.asarray(truth, dtype=float))
    errs = []
    for j, i in enumerate(perm):
        r = recovered[:, i]
        sd = r.std()
        if sd == 0:
            errs.append(1.0)
            continue
        design = np.column_stack([truth[:, j], np.ones(len(r))])
        coef, *_ = np.linalg.lstsq(design, r, rcond=None)
        rmse = np.sqrt(np.mean((r - design @ coef) ** 2))
        errs.append(float(rmse / sd))
    return float(np.mean(errs))


@dataclass
class EvalReport:
    r2: float
    mcc: float
    permutation: List[int]
    per_atom_corr: List[float]
    affine_residual: float
    skipped_columns: List[int] = field(default_factory=list)
    eval_data: str = "fresh base samples"

    def to_dict(self):
        return dict(self.__dict__)


def evaluate(recovered, truth, eval_data="fresh base samples"):
    r2, skipped = r_squared(recovered, truth, return_skipped=True)
    score, perm = mcc(recovered, truth)
    C = correlation_matrix(recovered, truth)
    per_atom = [float(C[perm[j], j]) for j in range(C.shape[1])]
    return EvalReport(r2, score, [int(p) for p in perm], per_atom,
                      affine_alignment_check(recovered, truth, perm),
                      [int(s) for s in skipped], eval_data)
