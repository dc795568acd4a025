"""Finite-sample null distribution of the ratio statistic.

Under the linear model with normal errors, a residualized response is
spherically distributed on its ``df``-dimensional residual space, so

    q_raw = y' K y / y' y  ~  sum_i w_i chi2_i / sum_i chi2_i

with ``w`` the eigenvalues of the (projected) kernel ``K`` padded with
zeros up to ``df`` terms.  The tail ``P(q_raw >= q)`` equals
``P(sum_i (w_i - q) chi2_i >= 0)``, a weighted chi-square tail that is
evaluated by inverting its characteristic function (Imhof, 1961).
"""

from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy import integrate

from .core import CombinedStat, CovariateSet, SingleSetStat

__all__ = [
    "IntegrationError",
    "SpectralNull",
    "spectral_decompose",
    "spectral_from_sets",
    "weighted_chi2_sf",
    "pvalue_asymptotic",
]

EIGEN_RTOL = 1e-10
PSD_TOL = 1e-8


class IntegrationError(RuntimeError):
    """Characteristic-function inversion did not reach the requested accuracy."""

    def __init__(self, message: str, **diagnostics: float) -> None:
        super().__init__(f"{message} ({', '.join(f'{k}={v:.3g}' for k, v in diagnostics.items())})")
        self.diagnostics = diagnostics


@dataclass(frozen=True)
class SpectralNull:
    weights: NDArray[np.float64]
    n_samples: int
    df: int

    def __post_init__(self) -> None:
        w = np.sort(np.asarray(self.weights, dtype=float))[::-1]
        if w.size and w[-1] < 0:
            raise ValueError("spectral weights must be non-negative")
        if w.size > self.df:
            raise ValueError(f"rank {w.size} exceeds residual degrees of freedom {self.df}")
        object.__setattr__(self, "weights", w)

    @property
    def rank(self) -> int:
        return self.weights.size


def _truncate(eigvals: NDArray[np.float64]) -> NDArray[np.float64]:
    eigvals = np.sort(eigvals)[::-1]
    if eigvals.size == 0 or eigvals[0] <= 0:
        return eigvals[:0]
    return eigvals[eigvals > EIGEN_RTOL * eigvals[0]]


def spectral_decompose(kernel: ArrayLike, df: int | None = None) -> SpectralNull:
    """Nonzero eigenvalues of a symmetric positive semidefinite kernel.

    ``df`` is the dimension of the residual space the response lives in;
    it defaults to ``N - 1`` (intercept-only null) but is never allowed
    below the kernel rank.
    """
    kernel = np.asarray(kernel, dtype=float)
    if kernel.ndim != 2 or kernel.shape[0] != kernel.shape[1]:
        raise ValueError("kernel must be a square matrix")
    scale = max(1.0, float(np.abs(kernel).max(initial=0.0)))
    if np.abs(kernel - kernel.T).max(initial=0.0) > PSD_TOL * scale:
        raise ValueError("kernel is not symmetric")
    eig = np.linalg.eigvalsh((kernel + kernel.T) / 2)
    if eig.size and eig[0] < -PSD_TOL * scale:
        raise ValueError(f"kernel is indefinite (smallest eigenvalue {eig[0]:.3g})")
    w = _truncate(eig)
    n = kernel.shape[0]
    df = max(n - 1, w.size) if df is None else df
    return SpectralNull(w, n, df)


def spectral_from_sets(sets: Sequence[CovariateSet], df: int | None = None,
                       center: bool = True) -> SpectralNull:
    """Spectrum of the merged-set kernel via singular values.

    Equivalent to ``spectral_decompose(sum X X')`` on centered columns but
    never forms the N x N matrix.
    """
    mat = np.hstack([s.matrix for s in sets])
    if center:
        mat = mat - mat.mean(axis=0)
    sv = np.linalg.svd(mat, compute_uv=False)
    w = _truncate(sv**2)
    n = mat.shape[0]
    df = max(n - 1, w.size) if df is None else df
    return SpectralNull(w, n, df)


def weighted_chi2_sf(coefs: ArrayLike, multiplicity: ArrayLike | None = None,
                     atol: float = 1e-6) -> float:
    """``P(sum_i c_i chi2_1 > 0)`` by Imhof's characteristic-function inversion.

    ``multiplicity`` gives how many independent chi-square terms share each
    coefficient.  Half of ``atol`` is spent on truncating the integral at
    ``U`` (Imhof's tail bound) and half on the quadrature over ``[0, U]``.
    """
    c = np.asarray(coefs, dtype=float)
    m = np.ones_like(c) if multiplicity is None else np.asarray(multiplicity, dtype=float)
    keep = (c != 0) & (m > 0)
    c, m = c[keep], m[keep]
    if c.size == 0:
        return 0.0
    if np.all(c > 0):
        return 1.0
    if np.all(c < 0):
        return 0.0

    half_terms = 0.5 * m.sum()
    log_prod = 0.5 * float(np.sum(m * np.log(np.abs(c))))
    # truncation error <= 1 / (pi * k * U^k * prod|c|^(1/2)),  k = terms / 2
    trunc_tol = atol / 2
    log_u = (-math.log(math.pi * half_terms * trunc_tol) - log_prod) / half_terms
    if not log_u < 700.0:
        raise IntegrationError("truncation point out of floating-point range",
                               log_upper_limit=log_u, upper_limit=math.inf, n_terms=2 * half_terms)
    upper = math.exp(log_u)

    log_abs_c = np.log(np.abs(c))

    def log_space(s: float) -> float:
        # integrand(u) * u at u = exp(s); every factor kept in log form
        theta = 0.5 * np.sum(m * np.arctan(c * math.exp(s)))
        log_rho = 0.25 * np.sum(m * np.logaddexp(0.0, 2.0 * (log_abs_c + s)))
        return math.sin(theta) * math.exp(-log_rho)

    def integrand(u: float) -> float:
        return log_space(math.log(u)) / u if u > 0 else 0.5 * float(np.sum(m * c))

    # [0, u0] directly, [u0, U] in log u where the power-law tail is smooth
    u0 = min(0.1 / float(np.abs(c).max()), upper)
    pieces = [(integrand, 0.0, u0)]
    if upper > u0:
        pieces.append((log_space, math.log(u0), log_u))
    total, err = 0.0, 0.0
    for f, lo, hi in pieces:
        val, e = integrate.quad(f, lo, hi, epsabs=atol / 4 * math.pi, epsrel=0, limit=500)
        total += val
        err += e
    err /= math.pi
    if not np.isfinite(total) or err > atol / 2:
        raise IntegrationError("weighted chi-square inversion failed to converge",
                               quad_error=err, upper_limit=upper, n_terms=2 * half_terms)
    p = 0.5 + total / math.pi
    return float(min(1.0, max(0.0, p)))


def pvalue_asymptotic(stat: SingleSetStat | CombinedStat | float, null: SpectralNull,
                      atol: float = 1e-6) -> float:
    """Tail probability of an observed unscaled ratio statistic.

    ``stat`` is a raw single-set statistic, a raw combined statistic (whose
    ``q_sum`` is the merged-set ratio) or a plain float, and ``null`` must
    come from the kernel the statistic was computed with.
    """
    if isinstance(stat, SingleSetStat):
        q = stat.q_raw
    elif isinstance(stat, CombinedStat):
        if stat.q_sum is None:
            raise ValueError("asymptotic p-values need the raw (unscaled) combined statistic")
        q = stat.q_sum
    else:
        q = float(stat)
    w = null.weights
    n_zero = null.df - null.rank
    if q <= 0.0 or (n_zero == 0 and w.size and q <= w[-1]):
        return 1.0
    if w.size == 0 or q > w[0]:
        return 0.0
    coefs = np.append(w - q, -q)
    mult = np.append(np.ones_like(w), n_zero)
    return weighted_chi2_sf(coefs, mult, atol=atol)
