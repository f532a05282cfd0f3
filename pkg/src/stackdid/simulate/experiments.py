"""Monte Carlo experiments: estimate correlation and pooled-CI coverage."""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..aggregate import EstimateSet, aggregate_gls, aggregate_ivw
from ..blockcov import att_correlation, att_covariance, att_variance
from ..errors import ValidationError
from .generator import PRNG_ID, FastSimulator, SimConfig

NOMINAL = 0.95

# Standard design grid: 6 timing settings x 2 shared fractions x 2
# correlation regimes, in this order.
TIMINGS = [(1, 1, 1), (1, 1, 2), (5, 5, 3), (5, 5, 6), (7, 3, 3), (7, 3, 6)]
SHARED = [0.25, 0.75]
REGIMES = [(0.10, 0.06, 0.02), (0.60, 0.40, 0.20)]


def table1_config(row, n_control_states=3, seed=0, persons_per_state=100):
    """Config for row ``row`` (1-based, 1..24) of the standard design grid."""
    if not 1 <= row <= 24:
        raise ValidationError("row must be between 1 and 24")
    i = row - 1
    (tp, tq, d), frac, (r, f, s) = TIMINGS[i // 4], SHARED[(i // 2) % 2], REGIMES[i % 2]
    return SimConfig(T_pre=tp, T_post=tq, delta=d, shared_fraction=frac,
                     rho=r, phi=f, psi=s, n_control_states=n_control_states,
                     persons_per_state=persons_per_state, seed=seed)


@dataclass
class MethodStats:
    bias: float
    mean_se: float
    coverage: float

    def to_dict(self):
        return {"bias": self.bias, "mean_se": self.mean_se, "coverage": self.coverage}


@dataclass
class ExperimentRow:
    config: SimConfig
    true_cor: float
    est_cor_mean: float = math.nan
    est_cor_bias: float = math.nan
    est_cor_sd: float = math.nan
    ivw: MethodStats = None
    gls: MethodStats = None
    n_replicates: int = 0
    n_correlation_batches: int = 0
    prng: str = PRNG_ID
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        d = {"config": self.config.to_dict(), "true_cor": self.true_cor,
             "est_cor_mean": _nan_none(self.est_cor_mean),
             "est_cor_bias": _nan_none(self.est_cor_bias),
             "est_cor_sd": _nan_none(self.est_cor_sd),
             "n_replicates": self.n_replicates,
             "n_correlation_batches": self.n_correlation_batches,
             "prng": self.prng, "seed": self.config.seed}
        d["ivw"] = self.ivw.to_dict() if self.ivw else None
        d["gls"] = self.gls.to_dict() if self.gls else None
        return d


def _nan_none(x):
    return None if x is None or (isinstance(x, float) and math.isnan(x)) else x


def true_correlation(config, j=0, k=1):
    """Closed-form correlation between cohorts ``j`` and ``k``."""
    if config.n_treated_states < 2:
        raise ValidationError("need two treated cohorts")
    return att_correlation(config.overlap(j, k), config.correlation_structure())


def closed_form_W(config):
    """Closed-form covariance matrix of all cohort estimates."""
    K = config.n_treated_states
    corr = config.correlation_structure()
    W = np.empty((K, K))
    for j in range(K):
        W[j, j] = att_variance(config.overlap(j, j).cohort_gamma(), corr)
        for k in range(j + 1, K):
            W[j, k] = W[k, j] = att_covariance(config.overlap(j, k), corr).value
    return W


def default_threads():
    try:
        return max(1, int(os.environ.get("STACKDID_THREADS", "1")))
    except ValueError:
        return 1


def _run(config, n, threads):
    """ATT draws for replicates ``0..n-1``, reduced in replicate order."""
    sim = FastSimulator(config)
    threads = threads or default_threads()
    if threads <= 1 or n < 2 * threads:
        return sim.atts_many(range(n))
    chunks = np.array_split(np.arange(n), threads)
    with ThreadPoolExecutor(max_workers=threads) as ex:
        parts = list(ex.map(lambda c: sim.atts_many(c), chunks))
    return np.vstack(parts)


def run_correlation_experiment(config, n_batches=100, pairs_per_batch=100, threads=None):
    """Average empirical correlation of cohort 0 and 1 estimates.

    Each batch draws ``pairs_per_batch`` independent replicates and computes
    the sample correlation of the two estimates; batches are averaged.
    """
    if n_batches < 1 or pairs_per_batch < 3:
        raise ValidationError("need n_batches >= 1 and pairs_per_batch >= 3")
    truth = true_correlation(config)
    A = _run(config, n_batches * pairs_per_batch, threads)
    A = A[:, :2].reshape(n_batches, pairs_per_batch, 2)
    x = A[..., 0] - A[..., 0].mean(axis=1, keepdims=True)
    y = A[..., 1] - A[..., 1].mean(axis=1, keepdims=True)
    cors = (x * y).sum(1) / np.sqrt((x * x).sum(1) * (y * y).sum(1))
    m = float(cors.mean())
    return ExperimentRow(config, truth, m, m - truth, float(cors.std(ddof=1)) if n_batches > 1 else math.nan,
                         n_replicates=n_batches * pairs_per_batch,
                         n_correlation_batches=n_batches)


def run_coverage_experiment(config, n_replicates=10000, level=NOMINAL, threads=None):
    """Coverage of IVW and GLS pooled intervals for the true effect.

    ``W`` comes from the closed forms at the generating parameters, so both
    methods use known variances; only the off-diagonal handling differs.
    """
    if n_replicates < 1:
        raise ValidationError("n_replicates must be >= 1")
    W = closed_form_W(config)
    labels = tuple(f"T{k}" for k in range(config.n_treated_states))
    zeros = EstimateSet(labels, np.zeros(len(labels)), W)
    ivw0, gls0 = aggregate_ivw(zeros, level), aggregate_gls(zeros, level)
    A = _run(config, n_replicates, threads)

    def stats(res):
        est = A @ np.asarray(res.weights)
        half = res.ci[1]  # interval around 0 gives the half-width
        cover = np.abs(est - config.beta2) <= half
        return MethodStats(float(est.mean() - config.beta2), res.se, float(cover.mean()))

    row = ExperimentRow(config, true_correlation(config) if len(labels) > 1 else 0.0,
                        ivw=stats(ivw0), gls=stats(gls0), n_replicates=n_replicates)
    row.extra["W"] = W.tolist()
    return row
