"""Score statistics for one or more covariate sets.

For a centered response ``y`` and covariate matrix ``X`` (N x J) the
unscaled statistic is the ratio

    q_raw = y' X X' y / y' y

Summing ``q_raw`` over several sets gives the statistic of the merged
set ``[X | Z | ...]``, because ``X X' + Z Z'`` is the kernel of the
column-bound matrix.  The standardized statistic rescales the ratio so
that its permutation mean is exactly ``trace(X X') / J``::

    q_scaled = df * q_raw / J        (df = N - 1 for an intercept-only null)
    T = (q_scaled - trace(X X') / J) / sqrt(2 trace((X X')^2) / J^2)
"""

from __future__ import annotations

import logging
from collections.abc import Sequence
from dataclasses import dataclass, field
from typing import Literal

import numpy as np
from numpy.typing import ArrayLike, NDArray

logger = logging.getLogger(__name__)

__all__ = [
    "DegenerateResponseError",
    "ResponseVector",
    "CovariateSet",
    "SingleSetStat",
    "CombinedStat",
    "center_response",
    "prepare_covariates",
    "merge_sets",
    "kernel_factor",
    "single_set_stat",
    "combined_stat_sum",
    "combined_stat_with_corr",
]


class DegenerateResponseError(ValueError):
    """Raised when a response has zero variance after centering."""


@dataclass(frozen=True)
class ResponseVector:
    values: NDArray[np.float64]
    id: str = "response"

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 1:
            raise ValueError(f"response {self.id!r} must be one-dimensional")
        if values.size < 3:
            raise ValueError(f"response {self.id!r} needs at least 3 samples, got {values.size}")
        if not np.all(np.isfinite(values)):
            raise ValueError(f"response {self.id!r} contains non-finite values")
        object.__setattr__(self, "values", values)

    @property
    def n(self) -> int:
        return self.values.size


@dataclass(frozen=True)
class CovariateSet:
    matrix: NDArray[np.float64]
    set_label: str = "X"
    feature_ids: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        matrix = np.asarray(self.matrix, dtype=float)
        if matrix.ndim == 1:
            matrix = matrix[:, None]
        if matrix.ndim != 2 or matrix.shape[1] < 1:
            raise ValueError(f"covariate set {self.set_label!r} must be an N x J matrix with J >= 1")
        if not np.all(np.isfinite(matrix)):
            raise ValueError(f"covariate set {self.set_label!r} contains non-finite values")
        ids = tuple(self.feature_ids) or tuple(f"{self.set_label}{j}" for j in range(matrix.shape[1]))
        if len(ids) != matrix.shape[1]:
            raise ValueError(
                f"covariate set {self.set_label!r}: {len(ids)} feature ids for {matrix.shape[1]} columns"
            )
        object.__setattr__(self, "matrix", matrix)
        object.__setattr__(self, "feature_ids", ids)

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    @property
    def size(self) -> int:
        return self.matrix.shape[1]


@dataclass(frozen=True)
class SingleSetStat:
    """Score statistic of one covariate set against one response.

    ``q_raw`` is the pure ratio (proportionality constant 1); ``q_scaled``
    is the same quantity on the scale of ``expected_q`` and ``var_q``.
    """

    q_raw: float
    q_scaled: float
    expected_q: float
    var_q: float
    t_standardized: float
    set_label: str = "X"
    n_features: int = 0
    zero_covariates: bool = False


@dataclass(frozen=True)
class CombinedStat:
    q_sum: float | None = None
    t2_sum: float | None = None
    t2_with_corr: float | None = None
    rho_xz: float | None = None
    mode: str = "raw"


def center_response(y: ResponseVector) -> ResponseVector:
    """Subtract the sample mean, keeping sample order.

    >>> center_response(ResponseVector(np.array([1.0, 2.0, 3.0]))).values
    array([-1.,  0.,  1.])
    """
    return ResponseVector(_snap_zero(y.values - y.values.mean(), y.values), y.id)


def _snap_zero(resid: NDArray[np.float64], original: NDArray[np.float64]) -> NDArray[np.float64]:
    # rounding residue of an exact fit would otherwise pass as signal
    if np.abs(resid).max(initial=0.0) <= 1e-12 * max(1.0, float(np.abs(original).max(initial=0.0))):
        return np.zeros_like(resid)
    return resid


def prepare_covariates(x: CovariateSet, scale: bool = False) -> CovariateSet:
    """Center covariate columns, dropping constant ones.

    With ``scale=True`` columns are also divided by their standard deviation.
    A set whose every column is constant becomes a single zero column so
    that downstream statistics evaluate to zero rather than failing.
    """
    centered = x.matrix - x.matrix.mean(axis=0)
    sd = centered.std(axis=0)
    tol = 1e-12 * max(1.0, float(np.abs(x.matrix).max(initial=0.0)))
    keep = sd > tol
    if not keep.all():
        dropped = [fid for fid, k in zip(x.feature_ids, keep) if not k]
        logger.warning("set %s: dropping %d constant column(s): %s",
                       x.set_label, len(dropped), ", ".join(dropped[:10]))
    if not keep.any():
        return CovariateSet(np.zeros((x.n, 1)), x.set_label, (x.feature_ids[0],))
    centered = centered[:, keep]
    if scale:
        centered = centered / sd[keep]
    ids = tuple(fid for fid, k in zip(x.feature_ids, keep) if k)
    return CovariateSet(centered, x.set_label, ids)


def merge_sets(sets: Sequence[CovariateSet], label: str | None = None) -> CovariateSet:
    """Column-bind covariate sets sharing the sample axis."""
    if not sets:
        raise ValueError("no covariate sets to merge")
    n = {s.n for s in sets}
    if len(n) != 1:
        raise ValueError(f"covariate sets disagree on sample count: {sorted(n)}")
    label = label or "+".join(s.set_label for s in sets)
    ids = tuple(f"{s.set_label}:{fid}" for s in sets for fid in s.feature_ids)
    return CovariateSet(np.hstack([s.matrix for s in sets]), label, ids)


def kernel_factor(matrix: ArrayLike) -> NDArray[np.float64]:
    """Return ``F`` with ``F F' == X X'`` and at most ``min(N, J)`` columns.

    Wide matrices are reduced through a thin SVD so that quadratic forms
    ``||F' y||^2`` cost O(N * min(N, J)) per evaluation.
    """
    matrix = np.asarray(matrix, dtype=float)
    n, j = matrix.shape
    if j <= n:
        return matrix
    u, s, _ = np.linalg.svd(matrix, full_matrices=False)
    return u * s


def _kernel_moments(x: NDArray[np.float64]) -> tuple[float, float]:
    """trace(X X') and trace((X X')^2), computed on the smaller Gram matrix."""
    gram = x.T @ x if x.shape[1] <= x.shape[0] else x @ x.T
    return float(np.trace(gram)), float(np.sum(gram * gram))


def single_set_stat(
    y: ResponseVector,
    x: CovariateSet,
    df: int | None = None,
    center: bool = True,
) -> SingleSetStat:
    """Score statistic of one covariate set.

    Parameters
    ----------
    y : ResponseVector
        Centered (or residualized) response.
    x : CovariateSet
        Covariates on the same samples.  Columns are centered here unless
        ``center=False``; ``q_raw`` does not depend on it because ``y`` is
        already centered, but the null moments do.
    df : int, optional
        Residual degrees of freedom of the null model, ``N - 1`` by default.
    """
    if x.n != y.n:
        raise ValueError(f"response {y.id!r} has {y.n} samples but set {x.set_label!r} has {x.n}")
    yy = float(y.values @ y.values)
    if yy == 0.0:
        raise DegenerateResponseError(f"degenerate response {y.id!r}: zero variance after centering")
    mat = x.matrix - x.matrix.mean(axis=0) if center else x.matrix
    n_features = mat.shape[1]
    df = y.n - 1 if df is None else df

    proj = mat.T @ y.values
    q_raw = float(proj @ proj) / yy
    tr1, tr2 = _kernel_moments(mat)
    expected = tr1 / n_features
    var = 2.0 * tr2 / n_features**2
    q_scaled = df * q_raw / n_features
    zero = tr1 == 0.0
    if zero:
        logger.warning("set %s is identically zero for response %s", x.set_label, y.id)
        t = 0.0
    else:
        t = (q_scaled - expected) / np.sqrt(var)
    return SingleSetStat(q_raw, q_scaled, expected, var, float(t), x.set_label, n_features, zero)


def combined_stat_sum(
    stats: Sequence[SingleSetStat],
    mode: Literal["raw", "standardized"] = "raw",
) -> CombinedStat:
    """Joint statistic ignoring the correlation between single-set statistics.

    ``raw`` sums the unscaled ratios (equal to the merged-set ratio);
    ``standardized`` sums the squared standardized statistics.  Any number
    of sets M >= 2 is accepted.
    """
    if len(stats) < 2:
        raise ValueError(f"joint statistic needs at least two sets, got {len(stats)}")
    if mode == "raw":
        return CombinedStat(q_sum=float(sum(s.q_raw for s in stats)), mode="raw")
    if mode == "standardized":
        return CombinedStat(t2_sum=float(sum(s.t_standardized**2 for s in stats)), mode="standardized")
    raise ValueError(f"unknown mode {mode!r}")


def combined_stat_with_corr(tx: float, tz: float, rho: float) -> float:
    """Two-set statistic ``(tx^2 + tz^2 - 2 rho tx tz) / (1 - rho)``.

    Raises ``ValueError`` when ``rho`` is outside [-1, 1] and
    ``ZeroDivisionError`` when it is (numerically) 1, in which case the
    caller should use the sum statistic instead.
    """
    if not (np.isfinite(tx) and np.isfinite(tz)):
        raise ValueError("standardized statistics must be finite")
    if not -1.0 <= rho <= 1.0:
        raise ValueError(f"correlation must lie in [-1, 1], got {rho}")
    if 1.0 - rho < 1e-12:
        raise ZeroDivisionError("correlation is 1; fall back to the sum statistic")
    return (tx * tx + tz * tz - 2.0 * rho * tx * tz) / (1.0 - rho)


@dataclass(frozen=True)
class _FactoredSet:
    """Centered covariate set reduced for repeated evaluation."""

    label: str
    factor: NDArray[np.float64]
    n_features: int
    expected: float
    var: float
    zero: bool = field(default=False)

    @classmethod
    def from_set(cls, x: CovariateSet, center: bool = True) -> "_FactoredSet":
        mat = x.matrix - x.matrix.mean(axis=0) if center else x.matrix
        tr1, tr2 = _kernel_moments(mat)
        n_features = mat.shape[1]
        return cls(x.set_label, kernel_factor(mat), n_features,
                   tr1 / n_features, 2.0 * tr2 / n_features**2, tr1 == 0.0)

    def q_raw(self, ys: NDArray[np.float64], yy: float) -> NDArray[np.float64]:
        """Ratio statistic for each row of ``ys`` (rows share ``y'y``)."""
        proj = ys @ self.factor
        return np.einsum("ij,ij->i", proj, proj) / yy

    def standardize(self, q_raw: NDArray[np.float64], df: int) -> NDArray[np.float64]:
        if self.zero:
            return np.zeros_like(q_raw)
        return (df * q_raw / self.n_features - self.expected) / np.sqrt(self.var)
