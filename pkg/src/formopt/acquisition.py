"""Expected improvement toward a user target, plus parallel-sample selection.

The desired target vector and a signed per-output attention weight enter
as a linear transform of the posterior (mu' = a*mu, sigma' = |a|*sigma,
f*' = a*f*), under a minimization convention; the sign flip on the safe
class converts its maximization. EI is computed either in closed form
per output from the marginal variances or jointly by Monte Carlo from
the full per-candidate covariance blocks. Batch selection offers the
highest-sum, peak-based, and crowding-distance strategies.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.stats import norm

from .candidates import CandidateSet
from .records import TARGET_NAMES
from .surrogate import PosteriorPrediction

STRATEGIES = ("highest_sum", "peak_based", "crowding_distance")


def default_attention() -> dict[str, float]:
    # magnitude 2 on the critical classes (inadequate stretch, severe
    # thinning, cracks), sign flip on the safe class
    return {"L1": 2.0, "L2": 1.0, "L3": 1.0, "L4": -1.0, "L5": 1.0, "L6": 2.0, "L7": 2.0}


def default_f_star() -> dict[str, float]:
    return {t: (100.0 if t == "L4" else 0.0) for t in TARGET_NAMES}


@dataclass
class TargetSpec:
    f_star: dict[str, float] = field(default_factory=default_f_star)
    attention: dict[str, float] = field(default_factory=default_attention)

    def __post_init__(self):
        for name in TARGET_NAMES:
            if name not in self.f_star:
                raise ValueError(f"f_star missing {name}")
            if name not in self.attention:
                raise ValueError(f"attention missing {name}")

    def vectors(self) -> tuple[np.ndarray, np.ndarray]:
        a = np.array([self.attention[t] for t in TARGET_NAMES])
        f = np.array([self.f_star[t] for t in TARGET_NAMES])
        return f, a

    def scalarize(self, targets: dict[str, float]) -> float:
        """Attention-weighted distance to the target; lower is better."""
        return sum(
            self.attention[t] * (targets[t] - self.f_star[t]) for t in TARGET_NAMES
        )


@dataclass
class AcquisitionScores:
    ei: np.ndarray  # (n_star, m), all >= 0
    method: str  # marginal | monte_carlo
    n_mc: int = 0

    @property
    def sum(self) -> np.ndarray:
        return self.ei.sum(axis=1)


def _ei_closed_form(gap: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    """EI = gap*Phi(gap/sigma) + sigma*phi(gap/sigma); gap = f*' - mu'."""
    ei = np.maximum(gap, 0.0)
    pos = sigma > 0
    z = np.zeros_like(gap)
    np.divide(gap, sigma, out=z, where=pos)
    ei = np.where(pos, gap * norm.cdf(z) + sigma * norm.pdf(z), ei)
    return ei


def ei_marginal(pred: PosteriorPrediction, target: TargetSpec) -> AcquisitionScores:
    if pred.full:
        raise ValueError("ei_marginal requires a marginal-mode prediction")
    if (pred.variance < 0).any():
        raise ValueError("negative variance in prediction")
    f, a = target.vectors()
    mu = pred.mean * a
    sigma = np.sqrt(pred.variance) * np.abs(a)
    gap = f * a - mu
    return AcquisitionScores(ei=_ei_closed_form(gap, sigma), method="marginal")


def ei_monte_carlo(
    pred: PosteriorPrediction,
    target: TargetSpec,
    n_mc: int = 10000,
    seed: int = 0,
) -> AcquisitionScores:
    """Joint EI by sampling the attention-transformed posterior."""
    if not pred.full:
        raise ValueError("ei_monte_carlo requires a full-covariance prediction")
    f, a = target.vectors()
    rng = np.random.default_rng(seed)
    n_star, m = pred.mean.shape
    f_prime = f * a
    ei = np.empty((n_star, m))
    for i in range(n_star):
        mu = pred.mean[i] * a
        cov = pred.covariance[i] * np.outer(a, a)
        cov = 0.5 * (cov + cov.T)
        try:
            chol = np.linalg.cholesky(cov + 1e-9 * np.eye(m))
        except np.linalg.LinAlgError as exc:
            raise ValueError(f"covariance block {i} not PSD after jitter") from exc
        draws = mu + rng.standard_normal((n_mc, m)) @ chol.T
        ei[i] = np.maximum(f_prime - draws, 0.0).mean(axis=0)
    return AcquisitionScores(ei=ei, method="monte_carlo", n_mc=n_mc)


def select_best(scores: AcquisitionScores, candidates: CandidateSet) -> tuple[int, dict]:
    if len(candidates) == 0:
        raise ValueError("empty candidate set")
    idx = int(np.argmax(scores.sum))  # argmax takes the lowest index on ties
    return idx, candidates.row(idx)


def _local_maxima(sums: np.ndarray) -> list[int]:
    """Strict local maxima in candidate order; endpoints qualify with one neighbor."""
    n = len(sums)
    if n == 1:
        return [0]
    peaks = []
    for i in range(n):
        left_ok = i == 0 or sums[i] > sums[i - 1]
        right_ok = i == n - 1 or sums[i] > sums[i + 1]
        if left_ok and right_ok:
            peaks.append(i)
    return peaks


def crowding_distance(ei: np.ndarray) -> np.ndarray:
    """NSGA-II crowding distance over the EI matrix.

    Per objective, candidates are ranked by their EI value; interior
    candidates accumulate the normalized gap between their sorted
    neighbors, extremes get +inf, and a degenerate objective (max == min)
    contributes nothing.
    """
    ei = np.asarray(ei, dtype=float)
    n, m = ei.shape
    if n < 2:
        raise ValueError("crowding distance needs at least 2 candidates")
    cd = np.zeros(n)
    for j in range(m):
        order = np.argsort(ei[:, j], kind="stable")
        lo, hi = ei[order[0], j], ei[order[-1], j]
        span = hi - lo
        if span <= 0:
            continue
        cd[order[0]] = np.inf
        cd[order[-1]] = np.inf
        for k in range(1, n - 1):
            i = order[k]
            if np.isinf(cd[i]):
                continue
            cd[i] += (ei[order[k + 1], j] - ei[order[k - 1], j]) / span
    return cd


def select_parallel(
    scores: AcquisitionScores,
    candidates: CandidateSet,
    p: int,
    strategy: str = "highest_sum",
) -> list[tuple[int, dict]]:
    """p distinct picks; the first always equals select_best."""
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}; choose from {STRATEGIES}")
    n = len(candidates)
    if p < 1:
        raise ValueError("p must be >= 1")
    if p > n:
        raise ValueError(f"p={p} exceeds candidate count {n}")
    sums = scores.sum
    best = int(np.argmax(sums))
    chosen = [best]
    if strategy == "highest_sum":
        ranked = sorted(range(n), key=lambda i: (-sums[i], i))
        pool = [i for i in ranked if i != best]
    elif strategy == "peak_based":
        peaks = [i for i in _local_maxima(sums) if i != best]
        peaks.sort(key=lambda i: (-sums[i], i))
        rest = sorted(
            (i for i in range(n) if i != best and i not in set(peaks)),
            key=lambda i: (-sums[i], i),
        )
        pool = peaks + rest
    else:
        cd = crowding_distance(scores.ei) if n >= 2 else np.zeros(1)
        pool = sorted(
            (i for i in range(n) if i != best),
            key=lambda i: (-cd[i], i),
        )
    chosen.extend(pool[: p - 1])
    return [(i, candidates.row(i)) for i in chosen]
