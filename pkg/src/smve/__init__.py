"""Minimum-variance analysis for sparse linear Gaussian models.

Variance lower bounds (sparse CRB, projection, RIP and coherence bounds,
HCRB), exact Barankin bounds and LMV estimators for diagonal bias in the
H = I model, reference estimators and a deterministic Monte Carlo engine.
"""
from .errors import *  # noqa: F401,F403
from .model import GaussianLinearModel, SparseProblem, build_model, whiten
from .bounds import BiasSpec, BoundKind, BoundReport, KSelector
from .estimators import DiagonalEstimator, VectorEstimator
from .mc import McConfig, McMoments, simulate

__version__ = "0.1.0"
