"""Clustering of camera sensor-pattern-noise fingerprints by source device.

Sparse self-representation with non-negative coefficients (solved by ADMM),
spectral clustering for single-solve problems, and a divide-and-conquer
pipeline for large collections.
"""
from .admm import SparseRepr, constrained_lasso, objective_value
from .config import AdmmConfig, LsConfig, PipelineConfig, default_gamma
from .fingerprint import (
    FingerprintMatrix,
    GaussianDenoiser,
    RawImage,
    SynthCameraSet,
    correlation,
    extract_residual,
    is_dark,
    normalize,
    synthesize,
)
from .largescale import MergeRegressor, ls_ssc
from .metrics import evaluate
from .spectral import ClusteringResult, ssc_nc

__version__ = "0.1.0"

__all__ = [
    "AdmmConfig",
    "ClusteringResult",
    "FingerprintMatrix",
    "GaussianDenoiser",
    "LsConfig",
    "MergeRegressor",
    "PipelineConfig",
    "RawImage",
    "SparseRepr",
    "SynthCameraSet",
    "constrained_lasso",
    "correlation",
    "default_gamma",
    "evaluate",
    "extract_residual",
    "is_dark",
    "ls_ssc",
    "normalize",
    "objective_value",
    "ssc_nc",
    "synthesize",
]
