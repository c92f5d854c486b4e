"""Rejection sampling from concept-conditional distributions and dataset assembly.

Proposals come from the base density ``p``; a proposal ``z`` is accepted with
probability ``prod_k q((A z - b)_k) / L^dim`` where ``L = 1/sqrt(2 pi sigma^2)``
is the maximum of the Gaussian filter density.  The acceptance test runs in
log space.

Samples are produced in blocks of ``block_size`` accepted points.  Block ``j``
draws from its own substream of the root seed, so the output does not depend
on how blocks are scheduled.
"""
from dataclasses import dataclass, field
from typing import List

import numpy as np
from scipy.special import logsumexp

from .exceptions import BudgetExceeded, InfeasibleConcept
from .rng import as_generator, child_seed, substream
from .world import LOG_2PI, log_filter, mix, sample_base

INFEASIBLE_RATE = 1e-12


@dataclass
class SamplerStats:
    trials: int
    accepted: int
    bound_M: float
    max_ratio: float = 0.0  # largest filter product / bound_M seen at an accepted point

    @property
    def empirical_rate(self):
        return self.accepted / self.trials if self.trials else float("nan")

    def to_dict(self):
        return {"trials": self.trials, "accepted": self.accepted,
                "rate": self.empirical_rate, "bound_M": self.bound_M}


def log_bound(system, e):
    """``log M`` with ``M = L^dim(C)`` and ``L`` the Gaussian filter maximum."""
    c = system.concept(e)
    return -0.5 * c.dim * (LOG_2PI + np.log(c.noise_variance))


def _seed_of(rng):
    if isinstance(rng, (int, np.integer)):
        return int(rng)
    return child_seed(as_generator(rng))


def _sample_block(system, e, gmm, rng, k, log_M, rate_guess, trial_cap):
    accepted = []
    n_acc = 0
    trials = 0
    max_log_ratio = -np.inf
    while n_acc < k:
        batch = int(min(max(64, np.ceil(1.25 * (k - n_acc) / max(rate_guess, 1e-6))), 2**20))
        z = sample_base(gmm, rng, batch)
        log_u = np.log(rng.random(batch))
        log_r = log_filter(system, e, z) - log_M
        hit = np.flatnonzero(log_r >= log_u)
        need = k - n_acc
        if hit.size >= need:
            hit = hit[:need]
            trials += int(hit[-1]) + 1
        else:
            trials += batch
        if trials > trial_cap:
            raise BudgetExceeded(f"environment {e}: more than {trial_cap} trials")
        if hit.size:
            accepted.append(z[hit])
            n_acc += hit.size
            max_log_ratio = max(max_log_ratio, float(np.max(log_r[hit])))
        rate_guess = max(n_acc / max(trials, 1), rate_guess / 4)
    return np.concatenate(accepted), trials, max_log_ratio


def rejection_sample(system, e, gmm, rng, N, max_trials=None, budget_factor=1e4,
                     block_size=256):
    """Draw ``N`` exact samples from the concept-conditional latent distribution of ``e``.

    The trial cap defaults to ``budget_factor * N`` times a pilot estimate of the
    expected number of trials per sample.
    """
    log_M = log_bound(system, e)
    if N == 0:
        return np.empty((0, system.d_z)), SamplerStats(0, 0, float(np.exp(log_M)))
    seed = _seed_of(rng)
    pilot = expected_trials(system, e, gmm, substream(seed, "pilot", e), N_mc=10_000)
    if max_trials is None:
        max_trials = budget_factor * N * pilot
    rate_guess = 1.0 / pilot

    blocks, trials, max_log_ratio = [], 0, -np.inf
    for j, start in enumerate(range(0, N, block_size)):
        k = min(block_size, N - start)
        z, t, r = _sample_block(system, e, gmm, substream(seed, "block", e, j), k, log_M,
                                rate_guess, max_trials - trials)
        blocks.append(z)
        trials += t
        max_log_ratio = max(max_log_ratio, r)
    stats = SamplerStats(trials, N, float(np.exp(log_M)), float(np.exp(max_log_ratio)))
    return np.concatenate(blocks), stats


def estimate_normalizer(system, e, gmm, rng, N_mc=100_000):
    """Monte Carlo estimate of ``N_C = E_p[prod_k q((A z - b)_k)]`` and its standard error."""
    z = sample_base(gmm, as_generator(rng), N_mc)
    w = np.exp(log_filter(system, e, z))
    return float(w.mean()), float(w.std(ddof=1) / np.sqrt(N_mc))


def expected_trials(system, e, gmm, rng, N_mc=100_000):
    """``M / N_C``: mean number of proposals per accepted sample."""
    z = sample_base(gmm, as_generator(rng), N_mc)
    log_rate = logsumexp(log_filter(system, e, z) - log_bound(system, e)) - np.log(N_mc)
    if not np.isfinite(log_rate) or log_rate < np.log(INFEASIBLE_RATE):
        raise InfeasibleConcept(f"environment {e}: acceptance rate below {INFEASIBLE_RATE:g}")
    return float(np.exp(-log_rate))


@dataclass
class Dataset:
    """Observations ``X[0..m]`` (``X[0]`` is the base environment) and their latents."""

    X: List[np.ndarray]
    Z: List[np.ndarray]
    stats: List[SamplerStats] = field(default_factory=list)

    @property
    def m(self):
        return len(self.X) - 1

    def stacked(self):
        """All observations in one matrix plus integer environment labels."""
        y = np.concatenate([np.full(len(x), e) for e, x in enumerate(self.X)])
        return np.vstack(self.X), y


def generate_dataset(world, rng, samples_per_env=5000, **sampler_kw):
    """Base samples plus rejection samples for every environment, pushed through the mixing."""
    seed = _seed_of(rng)
    system = world.system
    Z = [sample_base(world.gmm, substream(seed, "base"), samples_per_env)]
    stats = []
    for e in range(1, system.m + 1):
        z, s = rejection_sample(system, e, world.gmm, substream(seed, "env", e),
                                samples_per_env, **sampler_kw)
        Z.append(z)
        stats.append(s)
    X = [mix(world.mixing, z) for z in Z]
    return Dataset(X, Z, stats)
