"""Penalized stratified and marginal proportional subdistribution hazards
regression for clustered competing-risks data."""

__version__ = "0.1.0"

from .data import CAUSE1, CAUSE2, CENSORED, Dataset, ModelKind, build_dataset, from_arrays, read_csv
from .errors import MCPSHError
from .inference import CovarianceReport, sandwich, sandwich_marginal, sandwich_stratified
from .ipcw import CensoringSurvival, km_censoring
from .objective import ObjectiveValue, PSHProblem
from .penalty import PenaltySpec
from .solver import FitResult, PathResult, fit_cd, fit_lqa, fit_path, fit_unpenalized, select_bic

__all__ = [
    "CAUSE1", "CAUSE2", "CENSORED", "Dataset", "ModelKind", "build_dataset", "from_arrays",
    "read_csv", "MCPSHError", "CovarianceReport", "sandwich", "sandwich_marginal",
    "sandwich_stratified", "CensoringSurvival", "km_censoring", "ObjectiveValue", "PSHProblem",
    "PenaltySpec", "FitResult", "PathResult", "fit_cd", "fit_lqa", "fit_path", "fit_unpenalized",
    "select_bic", "__version__",
]
