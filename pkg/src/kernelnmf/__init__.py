"""Kernel nonnegative matrix factorization with input-space endmembers."""
from .factorization import (
    DivergedError,
    HyperCube,
    RunResult,
    SolverConfig,
    SolverError,
    UnsupportedConfigError,
    cost,
    run,
)
from .kernels import KernelSpec
from .metrics import feature_reconstruction_error, reconstruction_error
from .regularizers import RegularizerSet

__version__ = "0.1.0"

__all__ = [
    "DivergedError",
    "HyperCube",
    "KernelSpec",
    "RegularizerSet",
    "RunResult",
    "SolverConfig",
    "SolverError",
    "UnsupportedConfigError",
    "cost",
    "feature_reconstruction_error",
    "reconstruction_error",
    "run",
]
