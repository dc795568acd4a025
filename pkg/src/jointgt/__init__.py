"""Joint score tests of a response against several high-dimensional covariate sets."""

__version__ = "0.1.0"

from .core import (
    CombinedStat,
    CovariateSet,
    DegenerateResponseError,
    ResponseVector,
    SingleSetStat,
    center_response,
    combined_stat_sum,
    combined_stat_with_corr,
    merge_sets,
    prepare_covariates,
    single_set_stat,
)
from .genemap import (
    CovariateWindowSpec,
    DataMatrix,
    IngestError,
    build_window_sets,
    methylation_logit,
    read_annotation,
    read_matrix,
    residualize_confounders,
)
from .nulldist import IntegrationError, SpectralNull, pvalue_asymptotic, spectral_decompose, spectral_from_sets
from .permute import PermutationPlan, PermutationResult, estimate_rho, permutation_pvalue
from .pipeline import TestResult, analyze_response, run_tests
from .report import ArmSummary, SelectionResult, arm_summary, select
from .simgen import RegionConfig, RocCurve, generate_correlated, generate_region, power_study, roc_from_pvalues

__all__ = [name for name in dir() if not name.startswith("_")]
