"""Permutation inference for single- and multi-set score statistics.

Permutations act on the response only; covariate sets stay fixed.  The
permutation stream of a response is a pure function of ``(seed,
response id)`` so results do not depend on worker count or order.
"""

from __future__ import annotations

import hashlib
import itertools
import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass
from typing import Literal

import numpy as np
from numpy.typing import NDArray

from .core import (
    CovariateSet,
    DegenerateResponseError,
    ResponseVector,
    _FactoredSet,
    combined_stat_with_corr,
)

logger = logging.getLogger(__name__)

Statistic = Literal["sum-raw", "sum-standardized", "with-corr"]
STATISTICS: tuple[str, ...] = ("sum-raw", "sum-standardized", "with-corr")
RHO_CLAMP = 0.999
# relative slack for ties between permuted and observed statistics
TIE_RTOL = 1e-10


@dataclass(frozen=True)
class PermutationPlan:
    n_permutations: int = 1000
    seed: int = 0
    exhaustive: bool = False
    scheme: str = "full-response-permutation"

    def __post_init__(self) -> None:
        if not self.exhaustive and self.n_permutations < 99:
            raise ValueError(f"need at least 99 permutations, got {self.n_permutations}")
        if self.scheme != "full-response-permutation":
            raise ValueError(f"unsupported permutation scheme {self.scheme!r}")


@dataclass(frozen=True)
class PermutationResult:
    p: float
    null_draws: NDArray[np.float64]
    observed: float
    statistic: str
    rho: float | None = None


def _stream_key(seed: int, response_id: str) -> list[int]:
    digest = hashlib.blake2b(response_id.encode("utf-8"), digest_size=8).digest()
    return [int(seed) & 0xFFFFFFFFFFFFFFFF, int.from_bytes(digest, "little")]


def permutation_indices(plan: PermutationPlan, response_id: str, n: int) -> NDArray[np.intp]:
    """Row ``b`` is the ``b``-th permutation of ``range(n)`` for this response.

    Exhaustive plans enumerate all ``n!`` orderings (identity first).
    """
    if plan.exhaustive:
        if math.factorial(n) > 5_000_000:
            raise ValueError(f"exhaustive enumeration of {n}! permutations is not feasible")
        return np.array(list(itertools.permutations(range(n))), dtype=np.intp)
    rng = np.random.Generator(np.random.Philox(key=_stream_key(plan.seed, response_id)))
    base = np.broadcast_to(np.arange(n), (plan.n_permutations, n))
    return rng.permuted(base, axis=1)


def _empirical_p(observed: float, draws: NDArray[np.float64], exhaustive: bool) -> float:
    hits = int(np.count_nonzero(draws >= observed - TIE_RTOL * abs(observed)))
    if exhaustive:
        return hits / draws.size
    return (1 + hits) / (1 + draws.size)


def _pearson(a: NDArray[np.float64], b: NDArray[np.float64]) -> float | None:
    a = a - a.mean()
    b = b - b.mean()
    denom = math.sqrt(float(a @ a) * float(b @ b))
    if denom <= 1e-300 or not np.isfinite(denom):
        return None
    return float(a @ b) / denom


def _clamp_rho(r: float | None) -> float:
    if r is None:
        logger.warning("permuted statistics have zero variance; using rho = 0")
        return 0.0
    return float(np.clip(r, -RHO_CLAMP, RHO_CLAMP))


class PermutationEngine:
    """Evaluates statistics of one response over its permutation stream.

    Covariate sets are factored once, so a single engine can be reused
    across many responses that share the same sets (as in a simulated
    region).
    """

    def __init__(self, sets: Sequence[CovariateSet], center: bool = True) -> None:
        if not sets:
            raise ValueError("at least one covariate set is required")
        self.sets = [_FactoredSet.from_set(s, center=center) for s in sets]
        self.n = sets[0].n
        if any(s.n != self.n for s in sets):
            raise ValueError("covariate sets disagree on sample count")

    def raw_statistics(self, y: ResponseVector, perms: NDArray[np.intp] | None
                       ) -> tuple[NDArray[np.float64], NDArray[np.float64] | None]:
        """Per-set ``q_raw`` for the observed response and each permutation."""
        if y.n != self.n:
            raise ValueError(f"response {y.id!r} has {y.n} samples, sets have {self.n}")
        yy = float(y.values @ y.values)
        if yy == 0.0:
            raise DegenerateResponseError(f"degenerate response {y.id!r}: zero variance after centering")
        obs = np.array([fs.q_raw(y.values[None, :], yy)[0] for fs in self.sets])
        if perms is None:
            return obs, None
        yp = y.values[perms]
        null = np.stack([fs.q_raw(yp, yy) for fs in self.sets], axis=1)
        return obs, null

    def standardize(self, q: NDArray[np.float64], df: int) -> NDArray[np.float64]:
        """Column-wise standardized statistics for an array of raw statistics."""
        q = np.atleast_2d(q)
        return np.column_stack([fs.standardize(q[:, k], df) for k, fs in enumerate(self.sets)])

    def test(self, y: ResponseVector, statistic: Statistic, plan: PermutationPlan,
             df: int | None = None, perms: NDArray[np.intp] | None = None
             ) -> PermutationResult:
        if perms is None:
            perms = permutation_indices(plan, y.id, y.n)
        df = y.n - 1 if df is None else df
        obs, null = self.raw_statistics(y, perms)
        return combine_permuted(obs, null, statistic, plan.exhaustive,
                                lambda q: self.standardize(q, df))


def combine_permuted(obs_raw, null_raw, statistic: str, exhaustive: bool, standardize
                     ) -> PermutationResult:
    """Joint statistic and p-value from per-set raw statistics."""
    rho = None
    if statistic == "sum-raw":
        observed = float(obs_raw.sum())
        draws = null_raw.sum(axis=1)
    elif statistic == "sum-standardized":
        observed = float(np.sum(standardize(obs_raw)[0] ** 2))
        draws = np.sum(standardize(null_raw) ** 2, axis=1)
    elif statistic == "with-corr":
        if obs_raw.size != 2:
            raise NotImplementedError(
                "the correlation-adjusted statistic is only available for two sets; use a sum statistic"
            )
        t_obs = standardize(obs_raw)[0]
        t_null = standardize(null_raw)
        rho = _clamp_rho(_pearson(t_null[:, 0], t_null[:, 1]))
        observed = combined_stat_with_corr(t_obs[0], t_obs[1], rho)
        draws = (t_null[:, 0] ** 2 + t_null[:, 1] ** 2
                 - 2.0 * rho * t_null[:, 0] * t_null[:, 1]) / (1.0 - rho)
    else:
        raise ValueError(f"unknown statistic {statistic!r}; choose from {STATISTICS}")
    return PermutationResult(_empirical_p(observed, draws, exhaustive), draws, observed, statistic, rho)


def permutation_pvalue(
    y: ResponseVector,
    sets: Sequence[CovariateSet],
    statistic: Statistic = "sum-raw",
    plan: PermutationPlan = PermutationPlan(),
    df: int | None = None,
) -> PermutationResult:
    """Permutation p-value ``(1 + #{stat_b >= stat_obs}) / (1 + B)``.

    ``y`` must already be centered (or residualized).  Exhaustive plans
    return the exact proportion over all ``N!`` orderings instead.
    """
    return PermutationEngine(sets).test(y, statistic, plan, df=df)


def estimate_rho(y: ResponseVector, x: CovariateSet, z: CovariateSet,
                 plan: PermutationPlan = PermutationPlan(), df: int | None = None) -> float:
    """Correlation of the standardized single-set statistics over permutations.

    Clamped to ``[-0.999, 0.999]``; zero-variance sequences give 0.
    """
    engine = PermutationEngine([x, z])
    perms = permutation_indices(plan, y.id, y.n)
    _, null = engine.raw_statistics(y, perms)
    t = engine.standardize(null, y.n - 1 if df is None else df)
    return _clamp_rho(_pearson(t[:, 0], t[:, 1]))
