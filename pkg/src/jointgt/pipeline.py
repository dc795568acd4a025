"""Per-response joint testing over annotated matrices."""

from __future__ import annotations

import logging
from collections.abc import Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from .core import (
    CovariateSet,
    DegenerateResponseError,
    ResponseVector,
    combined_stat_sum,
    prepare_covariates,
    single_set_stat,
)
from .genemap import DataMatrix, WindowSets, residual_projector, residualize_confounders
from .nulldist import IntegrationError, pvalue_asymptotic, spectral_from_sets
from .permute import PermutationEngine, PermutationPlan, _empirical_p, combine_permuted, permutation_indices

logger = logging.getLogger(__name__)

JOINT_STATISTICS = {"sum": "sum-raw", "with-corr": "with-corr"}


@dataclass
class TestResult:
    response_id: str
    chromosome: str = ""
    arm: str = ""
    status: str = "ok"
    n_samples: int = 0
    set_sizes: dict[str, int] = field(default_factory=dict)
    q: dict[str, float] = field(default_factory=dict)
    t: dict[str, float] = field(default_factory=dict)
    p_set: dict[str, float] = field(default_factory=dict)
    q_joint: float = float("nan")
    t2_joint: float = float("nan")
    t2_with_corr: float = float("nan")
    rho: float = float("nan")
    p_joint: float = float("nan")

    __test__ = False  # keep pytest from collecting this class


def analyze_response(
    y_raw: np.ndarray,
    blocks: Sequence[tuple[str, np.ndarray, Sequence[str]]],
    response_id: str,
    plan: PermutationPlan,
    statistic: str = "sum",
    asymptotic: bool = False,
    confounders: np.ndarray | None = None,
    confounder_names: Sequence[str] | None = None,
    scale: bool = False,
) -> TestResult:
    """Test one response against its covariate blocks.

    Samples with a missing value in the response, any block or the
    confounders are dropped for this test only.
    """
    labels = [label for label, _, _ in blocks]
    res = TestResult(response_id)
    keep = np.isfinite(y_raw)
    for _, block, _ in blocks:
        keep &= np.isfinite(block).all(axis=1)
    if confounders is not None:
        keep &= np.isfinite(confounders).all(axis=1)
    n = int(keep.sum())
    res.n_samples = n
    n_conf = 0 if confounders is None else confounders.shape[1]
    if n < max(3, n_conf + 3):
        res.status = "too-few-samples"
        return _fill_nan(res, labels)

    conf = None if confounders is None else confounders[keep]
    y = residualize_confounders(ResponseVector(y_raw[keep], response_id), conf, confounder_names)
    df = n - 1 - n_conf
    sets = []
    for label, block, ids in blocks:
        x = prepare_covariates(CovariateSet(block[keep], label, tuple(ids)), scale=scale)
        if conf is not None:
            x = CovariateSet(residual_projector(n, conf) @ x.matrix, label, x.feature_ids)
        sets.append(x)
    res.set_sizes = {s.set_label: s.size for s in sets}

    try:
        stats = [single_set_stat(y, s, df=df, center=conf is None) for s in sets]
    except DegenerateResponseError:
        res.status = "degenerate"
        return _fill_nan(res, labels)
    res.q = {s.set_label: s.q_raw for s in stats}
    res.t = {s.set_label: s.t_standardized for s in stats}
    if len(stats) >= 2:
        res.q_joint = combined_stat_sum(stats, "raw").q_sum
        res.t2_joint = combined_stat_sum(stats, "standardized").t2_sum
    else:
        res.q_joint = stats[0].q_raw
        res.t2_joint = stats[0].t_standardized ** 2

    if asymptotic:
        if statistic != "sum":
            raise ValueError("asymptotic p-values are available for the sum statistic only")
        try:
            for s, st in zip(sets, stats):
                res.p_set[s.set_label] = pvalue_asymptotic(st, spectral_from_sets([s], df, center=False))
            res.p_joint = pvalue_asymptotic(res.q_joint, spectral_from_sets(sets, df, center=False))
        except IntegrationError as exc:
            logger.warning("response %s: %s; falling back to permutations", response_id, exc)
            return analyze_response(y_raw, blocks, response_id, plan, statistic, False,
                                 confounders, confounder_names, scale)
        return res

    engine = PermutationEngine(sets, center=conf is None)
    perms = permutation_indices(plan, response_id, n)
    obs, null = engine.raw_statistics(y, perms)
    for k, label in enumerate(res.set_sizes):
        res.p_set[label] = _empirical_p(obs[k], null[:, k], plan.exhaustive)
    joint = combine_permuted(obs, null, JOINT_STATISTICS[statistic], plan.exhaustive,
                             lambda q: engine.standardize(q, df))
    res.p_joint = joint.p
    if joint.rho is not None:
        res.rho = joint.rho
        res.t2_with_corr = joint.observed
    return res


def _fill_nan(res: TestResult, labels: Sequence[str]) -> TestResult:
    for label in labels:
        res.set_sizes.setdefault(label, 0)
        res.q[label] = res.t[label] = res.p_set[label] = float("nan")
    return res


def _run_chunk(jobs, plan, statistic, asymptotic, confounders, confounder_names, scale):
    out = []
    for rid, chrom, arm, y_raw, blocks in jobs:
        r = analyze_response(y_raw, blocks, rid, plan, statistic, asymptotic,
                          confounders, confounder_names, scale)
        r.chromosome, r.arm = chrom, arm
        out.append(r)
    return out


def run_tests(
    responses: DataMatrix,
    windows: Sequence[WindowSets],
    plan: PermutationPlan = PermutationPlan(),
    statistic: str = "sum",
    asymptotic: bool = False,
    confounders: DataMatrix | None = None,
    scale: bool = False,
    workers: int = 1,
    chunk_size: int = 64,
) -> list[TestResult]:
    """Test every response that has a non-empty window in all sets.

    Output order follows the response matrix; it does not depend on
    ``workers`` because each response owns its permutation stream.
    """
    if statistic not in JOINT_STATISTICS:
        raise ValueError(f"unknown statistic {statistic!r}; choose from {sorted(JOINT_STATISTICS)}")
    if statistic == "with-corr" and len(windows) != 2:
        raise ValueError("the correlation-adjusted statistic needs exactly two covariate sets")
    conf = None if confounders is None else confounders.reorder_samples(responses.sample_ids).values
    conf_names = None if confounders is None else confounders.feature_ids
    ann = responses.annotation
    jobs = []
    for k, rid in enumerate(responses.feature_ids):
        if not all(rid in w.indices for w in windows):
            continue
        blocks = [(w.spec.set_label, w.raw(rid),
                   [w.covariates.feature_ids[c] for c in w.indices[rid]]) for w in windows]
        chrom = "" if ann is None else str(ann.loc[rid, "chromosome"])
        arm = "" if ann is None else str(ann.loc[rid, "arm"])
        jobs.append((rid, chrom, arm, responses.values[:, k], blocks))
    chunks = [jobs[i:i + chunk_size] for i in range(0, len(jobs), chunk_size)]
    args = (plan, statistic, asymptotic, conf, conf_names, scale)
    if workers == 1 or len(chunks) <= 1:
        parts = [_run_chunk(c, *args) for c in chunks]
    else:
        parts = Parallel(n_jobs=workers)(delayed(_run_chunk)(c, *args) for c in chunks)
    return [r for part in parts for r in part]


def results_frame(results: Sequence[TestResult]) -> pd.DataFrame:
    rows = []
    for r in results:
        row = {"response_id": r.response_id, "chromosome": r.chromosome, "arm": r.arm,
               "status": r.status, "n_samples": r.n_samples}
        for label in r.set_sizes:
            row[f"size_{label}"] = r.set_sizes[label]
            row[f"q_{label}"] = r.q.get(label, np.nan)
            row[f"t_{label}"] = r.t.get(label, np.nan)
            row[f"p_{label}"] = r.p_set.get(label, np.nan)
        row.update(q_joint=r.q_joint, t2_joint=r.t2_joint, t2_with_corr=r.t2_with_corr,
                   rho=r.rho, p_joint=r.p_joint)
        rows.append(row)
    return pd.DataFrame(rows)


def write_results(results: Sequence[TestResult], path: str | Path) -> None:
    results_frame(results).to_csv(path, sep="\t", index=False, na_rep="NA",
                                  float_format="%.10g", lineterminator="\n")


def read_results(path: str | Path) -> list[TestResult]:
    """Inverse of :func:`write_results`."""
    frame = pd.read_csv(path, sep="\t", na_values=["NA"], keep_default_na=False,
                        dtype={"response_id": str, "chromosome": str, "arm": str, "status": str})
    labels = [c[2:] for c in frame.columns if c.startswith("p_") and c != "p_joint"]
    out = []
    for d in frame.to_dict("records"):
        out.append(TestResult(
            response_id=d["response_id"], chromosome=d.get("chromosome", ""),
            arm=d.get("arm", ""), status=d.get("status", "ok"),
            n_samples=int(d.get("n_samples", 0)),
            set_sizes={lab: int(d.get(f"size_{lab}", 0)) for lab in labels},
            q={lab: float(d.get(f"q_{lab}", np.nan)) for lab in labels},
            t={lab: float(d.get(f"t_{lab}", np.nan)) for lab in labels},
            p_set={lab: float(d[f"p_{lab}"]) for lab in labels},
            q_joint=float(d.get("q_joint", np.nan)), t2_joint=float(d.get("t2_joint", np.nan)),
            t2_with_corr=float(d.get("t2_with_corr", np.nan)), rho=float(d.get("rho", np.nan)),
            p_joint=float(d["p_joint"]),
        ))
    return out
