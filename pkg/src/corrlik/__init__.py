"""Meta-analysis of correlation coefficients with the exact likelihood.

The likelihood of a population correlation rho given a sample correlation r
from n bivariate-normal observations is evaluated through the Gauss
hypergeometric function; summed over independent studies it gives a
combined likelihood whose maximiser and highest likelihood regions are
compared with the classical Fisher-z pooled estimate.
"""

from .bspline import KnotVector, SplineModel, augment_knots, basis, basis_matrix, evaluate_spline, fit_least_squares
from .likelihood import (
    LikelihoodCurve,
    Study,
    build_curve,
    density_r,
    gauss_hypergeometric_F,
    log_likelihood,
)
from .meta import (
    Analysis,
    Homogeneity,
    IntervalEstimate,
    MetaResult,
    analyze,
    asymptotic_ci,
    combined_log_likelihood,
    hlr_interval,
    homogeneity_test,
    mle,
    pooled_ci,
    pooled_estimate,
)
from .numerics import ConvergenceError, DomainError, Tolerance
from .simulate import SimCase, SimResult, run_case
from .studyfile import read_studies, vitamin_c

__version__ = "0.1.0"

__all__ = [
    "Analysis", "ConvergenceError", "DomainError", "Homogeneity", "IntervalEstimate", "KnotVector",
    "LikelihoodCurve", "MetaResult", "SimCase", "SimResult", "SplineModel", "Study", "Tolerance",
    "analyze", "asymptotic_ci", "augment_knots", "basis", "basis_matrix", "build_curve",
    "combined_log_likelihood", "density_r", "evaluate_spline", "fit_least_squares",
    "gauss_hypergeometric_F", "hlr_interval", "homogeneity_test", "log_likelihood", "mle",
    "pooled_ci", "pooled_estimate", "read_studies", "run_case", "vitamin_c",
]
