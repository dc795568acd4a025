"""Simulated regions and ROC-based power comparison of joint statistics.

A region holds ``n_features`` responses and two covariate blocks of the
same width.  Response ``i`` in the first half of the region is driven by
covariate column ``i`` of the block(s) named by the regime; the second
half is pure noise.  Every response is then tested against the whole of
both blocks.
"""

from __future__ import annotations

from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd
from numpy.typing import ArrayLike, NDArray

from .core import CovariateSet, ResponseVector
from .genemap import DataMatrix
from .permute import STATISTICS, PermutationEngine, PermutationPlan, combine_permuted, permutation_indices

REGIMES = ("x-only", "additive", "multiplicative", "complementary", "null")
SIGNAL_REGIMES = REGIMES[:4]

# frozen by scripts/calibrate_effect.py
DEFAULT_EFFECT_SIZE = 0.5
DEFAULT_FEATURES = 200
FULL_SIZE_FEATURES = 1000


@dataclass(frozen=True)
class RegionConfig:
    regime: str = "additive"
    n_features: int = DEFAULT_FEATURES
    n_samples: int = 100
    effect_size: float = DEFAULT_EFFECT_SIZE
    seed: int = 0
    noise_sd: float = 1.0
    coupling_sd: float = 1.0

    def __post_init__(self) -> None:
        if self.regime not in REGIMES:
            raise ValueError(f"unknown regime {self.regime!r}; choose from {REGIMES}")
        if self.n_features < 2 or self.n_samples < 3:
            raise ValueError("need at least 2 features and 3 samples")
        if self.regime == "complementary" and self.n_samples % 2:
            raise ValueError("the complementary regime needs an even number of samples")


@dataclass
class SimulatedRegion:
    config: RegionConfig
    y: DataMatrix
    x: DataMatrix
    z: DataMatrix
    truth: NDArray[np.bool_]


@dataclass(frozen=True)
class RocCurve:
    thresholds: NDArray[np.float64]
    tpr: NDArray[np.float64]
    fpr: NDArray[np.float64]
    auc: float

    def at(self, threshold: float) -> tuple[float, float]:
        """(fpr, tpr) when calling every p-value <= ``threshold``."""
        k = np.searchsorted(self.thresholds, threshold, side="right") - 1
        return float(self.fpr[k]), float(self.tpr[k])


def _signal(regime: str, x: NDArray, z: NDArray, beta: float) -> NDArray:
    if regime == "x-only":
        return beta * x
    if regime == "additive":
        return beta * x + beta * z
    if regime == "multiplicative":
        return beta * x + beta * z + beta * x * z
    if regime == "complementary":
        half = x.shape[0] // 2
        return np.vstack([beta * x[:half], beta * z[half:]])
    return np.zeros_like(x)


def _region(cfg: RegionConfig, correlated: bool) -> SimulatedRegion:
    rng = np.random.default_rng(cfg.seed)
    n, m = cfg.n_samples, cfg.n_features
    x = rng.standard_normal((n, m))
    z = rng.standard_normal((n, m))
    if correlated:
        z = x + cfg.coupling_sd * z
    noise = cfg.noise_sd * rng.standard_normal((n, m))

    truth = np.zeros(m, dtype=bool)
    if cfg.regime != "null" and cfg.effect_size != 0:
        truth[: m // 2] = True
    y = noise.copy()
    k = int(truth.sum())
    y[:, :k] += _signal(cfg.regime, x[:, :k], z[:, :k], cfg.effect_size)

    samples = [f"S{s + 1:04d}" for s in range(n)]
    width = len(str(m))
    ids = lambda p: [f"{p}{j + 1:0{width}d}" for j in range(m)]  # noqa: E731
    blocks = {}
    for prefix, values in (("Y", y), ("X", x), ("Z", z)):
        fids = ids(prefix)
        ann = pd.DataFrame({"chromosome": "sim", "arm": "p", "position": np.zeros(m, dtype=np.int64)},
                           index=pd.Index(fids, name="feature_id"))
        blocks[prefix] = DataMatrix(values, samples, fids, ann)
    return SimulatedRegion(cfg, blocks["Y"], blocks["X"], blocks["Z"], truth)


def generate_region(cfg: RegionConfig) -> SimulatedRegion:
    """Independent standard-normal covariate blocks X and Z.

    All features sit at position 0 of chromosome ``sim`` so any positive
    window half-width puts every covariate in every response's set.
    """
    return _region(cfg, correlated=False)


def generate_correlated(cfg: RegionConfig) -> SimulatedRegion:
    """As :func:`generate_region` but with ``Z = X + coupling_sd * U``."""
    return _region(cfg, correlated=True)


def roc_from_pvalues(pvalues: ArrayLike, truth: ArrayLike) -> RocCurve:
    """ROC curve sweeping the threshold over the sorted unique p-values.

    Tied p-values form a single vertex; the area is the trapezoid sum,
    starting from (0, 0).
    """
    p = np.asarray(pvalues, dtype=float)
    t = np.asarray(truth, dtype=bool)
    if p.shape != t.shape:
        raise ValueError("p-values and truth labels differ in length")
    if np.isnan(p).any():
        raise ValueError("p-values contain NaN")
    n_pos, n_neg = int(t.sum()), int((~t).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC needs both true and false labels")
    thresholds, inverse = np.unique(p, return_inverse=True)
    pos = np.bincount(inverse, weights=t, minlength=thresholds.size)
    neg = np.bincount(inverse, weights=~t, minlength=thresholds.size)
    tpr = np.concatenate([[0.0], np.cumsum(pos) / n_pos])
    fpr = np.concatenate([[0.0], np.cumsum(neg) / n_neg])
    auc = float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2))
    return RocCurve(np.concatenate([[-np.inf], thresholds]), tpr, fpr, auc)


def region_pvalues(region: SimulatedRegion, plan: PermutationPlan = PermutationPlan(),
                statistics: Sequence[str] = STATISTICS) -> dict[str, NDArray[np.float64]]:
    """Permutation p-values of every response for each joint statistic.

    All statistics share one permutation stream per response.
    """
    engine = PermutationEngine([_block(region.x, "X"), _block(region.z, "Z")])
    n = region.y.n_samples
    out = {s: np.empty(region.y.n_features) for s in statistics}
    for k, rid in enumerate(region.y.feature_ids):
        col = region.y.values[:, k]
        y = ResponseVector(col - col.mean(), rid)
        obs, null = engine.raw_statistics(y, permutation_indices(plan, rid, n))
        for s in statistics:
            out[s][k] = combine_permuted(obs, null, s, plan.exhaustive,
                                         lambda q: engine.standardize(q, n - 1)).p
    return out


def _block(m: DataMatrix, label: str) -> CovariateSet:
    return CovariateSet(m.values, label, tuple(m.feature_ids))


@dataclass
class PowerResult:
    regime: str
    n_samples: int
    correlated: bool
    auc: dict[str, list[float]] = field(default_factory=dict)
    pvalues: dict[str, list[NDArray[np.float64]]] = field(default_factory=dict)
    truth: list[NDArray[np.bool_]] = field(default_factory=list)

    def mean_auc(self, statistic: str) -> float:
        return float(np.mean(self.auc[statistic]))

    def pooled_roc(self, statistic: str) -> RocCurve:
        return roc_from_pvalues(np.concatenate(self.pvalues[statistic]), np.concatenate(self.truth))


def power_study(
    regime: str,
    n_samples: int = 100,
    seeds: Iterable[int] = range(10),
    correlated: bool = False,
    n_features: int = DEFAULT_FEATURES,
    effect_size: float = DEFAULT_EFFECT_SIZE,
    plan: PermutationPlan = PermutationPlan(),
    statistics: Sequence[str] = STATISTICS,
) -> PowerResult:
    """AUC of each joint statistic over independently seeded regions."""
    gen = generate_correlated if correlated else generate_region
    res = PowerResult(regime, n_samples, correlated,
                      {s: [] for s in statistics}, {s: [] for s in statistics})
    for seed in seeds:
        cfg = RegionConfig(regime, n_features, n_samples, effect_size, seed)
        region = gen(cfg)
        pv = region_pvalues(region, replace(plan, seed=seed), statistics)
        res.truth.append(region.truth)
        for s in statistics:
            res.pvalues[s].append(pv[s])
            res.auc[s].append(roc_from_pvalues(pv[s], region.truth).auc)
    return res


def truth_frame(region: SimulatedRegion) -> pd.DataFrame:
    return pd.DataFrame({"response_id": region.y.feature_ids, "truth": region.truth.astype(int)})
