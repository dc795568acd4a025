"""Matrix/annotation ingestion and per-response covariate windows.

Matrix files are tab-separated with features as rows: the first column
holds feature ids, the header row holds sample ids, and ``NA`` marks a
missing value.  Annotation files are tab-separated with columns
``feature_id, chromosome, arm, position``.
"""

from __future__ import annotations

import logging
from collections.abc import Iterator, Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
from numpy.typing import ArrayLike, NDArray

from .core import CovariateSet, ResponseVector, _snap_zero

logger = logging.getLogger(__name__)

ANNOTATION_COLUMNS = ("feature_id", "chromosome", "arm", "position")
NA_TOKEN = "NA"


class IngestError(ValueError):
    """Malformed or inconsistent input file."""


@dataclass
class DataMatrix:
    """Samples x features matrix with optional per-feature annotation."""

    values: NDArray[np.float64]
    sample_ids: list[str]
    feature_ids: list[str]
    annotation: pd.DataFrame | None = None

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=float)
        self.sample_ids = [str(s) for s in self.sample_ids]
        self.feature_ids = [str(f) for f in self.feature_ids]
        if self.values.shape != (len(self.sample_ids), len(self.feature_ids)):
            raise ValueError(
                f"matrix shape {self.values.shape} does not match "
                f"{len(self.sample_ids)} samples x {len(self.feature_ids)} features"
            )
        if len(set(self.feature_ids)) != len(self.feature_ids):
            raise IngestError("duplicate feature ids")
        if len(set(self.sample_ids)) != len(self.sample_ids):
            raise IngestError("duplicate sample ids")

    @property
    def n_samples(self) -> int:
        return len(self.sample_ids)

    @property
    def n_features(self) -> int:
        return len(self.feature_ids)

    def column(self, feature_id: str) -> NDArray[np.float64]:
        return self.values[:, self.feature_ids.index(feature_id)]

    def with_annotation(self, annotation: pd.DataFrame) -> "DataMatrix":
        missing = [f for f in self.feature_ids if f not in annotation.index]
        if missing:
            raise IngestError(f"{len(missing)} feature(s) lack annotation, e.g. {missing[:5]}")
        return DataMatrix(self.values, self.sample_ids, self.feature_ids,
                          annotation.loc[self.feature_ids].copy())

    def reorder_samples(self, sample_ids: Sequence[str]) -> "DataMatrix":
        index = {s: i for i, s in enumerate(self.sample_ids)}
        rows = [index[s] for s in sample_ids]
        return DataMatrix(self.values[rows], list(sample_ids), self.feature_ids, self.annotation)


def read_matrix(path: str | Path) -> DataMatrix:
    path = Path(path)
    try:
        frame = pd.read_csv(path, sep="\t", index_col=0, na_values=[NA_TOKEN],
                            keep_default_na=False, dtype={0: str})
    except (OSError, pd.errors.ParserError) as exc:
        raise IngestError(f"{path}: {exc}") from exc
    try:
        values = frame.to_numpy(dtype=float).T
    except ValueError as exc:
        bad = _first_non_numeric(frame)
        raise IngestError(f"{path}:{bad}: non-numeric entry") from exc
    return DataMatrix(values, list(frame.columns), list(frame.index.astype(str)))


def _first_non_numeric(frame: pd.DataFrame) -> str:
    for line, (_, row) in enumerate(frame.iterrows(), start=2):
        coerced = pd.to_numeric(row, errors="coerce")
        if (coerced.isna() & row.notna()).any():
            return f"line {line}"
    return "unknown line"


def write_matrix(matrix: DataMatrix, path: str | Path, float_format: str = "%.10g") -> None:
    frame = pd.DataFrame(matrix.values.T, index=pd.Index(matrix.feature_ids, name="feature_id"),
                         columns=matrix.sample_ids)
    frame.to_csv(path, sep="\t", na_rep=NA_TOKEN, float_format=float_format, lineterminator="\n")


def read_annotation(path: str | Path) -> pd.DataFrame:
    path = Path(path)
    try:
        frame = pd.read_csv(path, sep="\t", dtype={"feature_id": str, "chromosome": str, "arm": str},
                            keep_default_na=False)
    except (OSError, pd.errors.ParserError) as exc:
        raise IngestError(f"{path}: {exc}") from exc
    missing = [c for c in ANNOTATION_COLUMNS if c not in frame.columns]
    if missing:
        raise IngestError(f"{path}: missing annotation column(s) {missing}")
    pos = pd.to_numeric(frame["position"], errors="coerce")
    bad = pos.isna() | (pos < 0)
    if bad.any():
        line = int(np.flatnonzero(bad.to_numpy())[0]) + 2
        raise IngestError(f"{path}:line {line}: position must be a non-negative integer")
    frame["position"] = pos.astype(np.int64)
    if frame["feature_id"].duplicated().any():
        raise IngestError(f"{path}: duplicate feature ids")
    return frame.set_index("feature_id")[["chromosome", "arm", "position"]]


def write_annotation(annotation: pd.DataFrame, path: str | Path) -> None:
    annotation.rename_axis("feature_id").reset_index()[list(ANNOTATION_COLUMNS)].to_csv(
        path, sep="\t", index=False, lineterminator="\n")


def align_samples(reference: DataMatrix, *others: DataMatrix) -> list[DataMatrix]:
    """Reorder ``others`` to the sample order of ``reference``.

    The sample-id sets must be identical; otherwise the symmetric
    difference is reported.
    """
    ref = set(reference.sample_ids)
    out = []
    for other in others:
        theirs = set(other.sample_ids)
        if theirs != ref:
            diff = sorted(ref ^ theirs)
            raise IngestError(f"sample ids differ between matrices: {diff[:20]}"
                              + (" ..." if len(diff) > 20 else ""))
        out.append(other.reorder_samples(reference.sample_ids))
    return out


@dataclass(frozen=True)
class CovariateWindowSpec:
    set_label: str
    window_halfwidth: int
    anchor: str = "transcription-start-site"

    def __post_init__(self) -> None:
        if self.window_halfwidth <= 0:
            raise ValueError("window half-width must be positive")


@dataclass
class WindowSets(Mapping):
    """Response id -> covariate set, materialized lazily from column indices."""

    covariates: DataMatrix
    spec: CovariateWindowSpec
    indices: dict[str, NDArray[np.intp]]
    excluded: list[str] = field(default_factory=list)

    def __getitem__(self, response_id: str) -> CovariateSet:
        cols = self.indices[response_id]
        return CovariateSet(self.covariates.values[:, cols], self.spec.set_label,
                            tuple(self.covariates.feature_ids[c] for c in cols))

    def __iter__(self) -> Iterator[str]:
        return iter(self.indices)

    def __len__(self) -> int:
        return len(self.indices)

    def raw(self, response_id: str) -> NDArray[np.float64]:
        """Covariate block with missing values kept (NaN)."""
        return self.covariates.values[:, self.indices[response_id]]


def build_window_sets(responses: DataMatrix, covariates: DataMatrix,
                      spec: CovariateWindowSpec) -> WindowSets:
    """Covariates on the response's chromosome within ``window_halfwidth`` of its anchor.

    The boundary is inclusive.  Covariate rows are reordered to the
    response sample order.  Responses with an empty window are listed in
    ``excluded`` and left out of the mapping.
    """
    if responses.annotation is None or covariates.annotation is None:
        raise IngestError("window construction needs annotated matrices")
    covariates = align_samples(responses, covariates)[0]

    cov = covariates.annotation
    by_chrom: dict[str, tuple[NDArray[np.int64], NDArray[np.intp]]] = {}
    chroms = cov["chromosome"].to_numpy()
    positions = cov["position"].to_numpy()
    for chrom in pd.unique(chroms):
        cols = np.flatnonzero(chroms == chrom)
        order = np.argsort(positions[cols], kind="stable")
        by_chrom[chrom] = (positions[cols][order], cols[order])

    half = int(spec.window_halfwidth)
    indices: dict[str, NDArray[np.intp]] = {}
    excluded: list[str] = []
    ann = responses.annotation
    for rid, chrom, pos in zip(responses.feature_ids, ann["chromosome"], ann["position"]):
        cols = np.empty(0, dtype=np.intp)
        if chrom in by_chrom:
            sorted_pos, sorted_cols = by_chrom[chrom]
            lo = np.searchsorted(sorted_pos, pos - half, side="left")
            hi = np.searchsorted(sorted_pos, pos + half, side="right")
            cols = np.sort(sorted_cols[lo:hi])
        if cols.size == 0:
            excluded.append(rid)
        else:
            indices[rid] = cols
    if excluded:
        logger.warning("set %s: %d response(s) have no covariates within %d bp",
                       spec.set_label, len(excluded), half)
    return WindowSets(covariates, spec, indices, excluded)


def methylation_logit(m: ArrayLike, u: ArrayLike, eps: float = 1e-3) -> NDArray[np.float64] | float:
    """``logit(clamp(m / (m + u), eps, 1 - eps))``; NaN where ``m + u == 0``."""
    m = np.asarray(m, dtype=float)
    u = np.asarray(u, dtype=float)
    if np.any(m < 0) or np.any(u < 0):
        raise ValueError("methylation signals must be non-negative")
    total = m + u
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = np.clip(m / total, eps, 1.0 - eps)
        out = np.where(total > 0, np.log(ratio) - np.log1p(-ratio), np.nan)
    return float(out) if out.ndim == 0 else out


def residualize_confounders(y: ResponseVector, confounders: ArrayLike | None = None,
                            names: Sequence[str] | None = None) -> ResponseVector:
    """Least-squares residuals of ``y`` on an intercept plus confounders."""
    design = _design(y.n, confounders, names)
    beta, *_ = np.linalg.lstsq(design, y.values, rcond=None)
    resid = y.values - design @ beta
    return ResponseVector(_snap_zero(resid, y.values), y.id)


def residual_projector(n: int, confounders: ArrayLike | None = None,
                       names: Sequence[str] | None = None) -> NDArray[np.float64]:
    """``I - D (D'D)^-1 D'`` for ``D = [1 | confounders]``."""
    design = _design(n, confounders, names)
    q, _ = np.linalg.qr(design)
    return np.eye(n) - q @ q.T


def _design(n: int, confounders: ArrayLike | None, names: Sequence[str] | None) -> NDArray[np.float64]:
    ones = np.ones((n, 1))
    if confounders is None:
        return ones
    conf = np.asarray(confounders, dtype=float)
    if conf.ndim == 1:
        conf = conf[:, None]
    if conf.shape[1] == 0:
        return ones
    if conf.shape[0] != n:
        raise ValueError(f"confounder matrix has {conf.shape[0]} rows, expected {n}")
    if conf.shape[1] >= n - 1:
        raise ValueError(f"{conf.shape[1]} confounders leave no residual degrees of freedom with N = {n}")
    names = list(names) if names is not None else [f"confounder{k}" for k in range(conf.shape[1])]
    design = np.hstack([ones, conf])
    if np.linalg.matrix_rank(design) < design.shape[1]:
        collinear, rank = [], 1
        for k in range(conf.shape[1]):
            r = np.linalg.matrix_rank(design[:, : k + 2])
            if r == rank:
                collinear.append(names[k])
            rank = r
        raise ValueError(f"confounders are collinear with the intercept or each other: {collinear}")
    return design
