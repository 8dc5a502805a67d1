"""Loop vertex expansion for quartic models at desk scale."""

from .engine import (
    BorelDiagnostics,
    DecayFit,
    QuadPolicy,
    SeriesAccumulator,
    TwoPointResult,
    borel_remainder_check,
    decay_rate_fit,
    pressure_series,
    taylor_coefficients,
    tree_term,
    two_point_function,
)
from .interp import QuadMode, QuadratureSpec, build_covariance, gaussian_expectation
from .kernels import BACKEND
from .model import ModelKind, ModelSpec, SliceSpec, eval_propagator
from .trees import LabeledTree, enumerate_trees

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "BorelDiagnostics", "DecayFit", "LabeledTree", "ModelKind", "ModelSpec",
    "QuadMode", "QuadPolicy", "QuadratureSpec", "SeriesAccumulator", "SliceSpec",
    "TwoPointResult", "borel_remainder_check", "build_covariance", "decay_rate_fit",
    "enumerate_trees", "eval_propagator", "gaussian_expectation", "pressure_series",
    "taylor_coefficients", "tree_term", "two_point_function",
]
