"""Point clouds on homogeneous spaces with known intrinsic dimension, and tools to benchmark estimators on them."""
from .analysis import covariance_stats, local_density, manifoldness_ratio, relative_error
from .errors import IdBenchError, InvalidParameterError, ResourceLimitError
from .estimators import EstimatorConfig, LidResult, Method, aggregate, aggregate_all, run_estimator
from .fractal import box_count_dimension, fractal_lid_suite, hofstadter_cloud
from .harness import SweepConfig, run_cell, run_sweep
from .linalg import RandomStream, derive_stream
from .manifolds import (
    Family,
    ManifoldSpec,
    PointCloud,
    intrinsic_dim,
    load_cloud,
    min_ambient_dim,
    sample,
    save_cloud,
)
from .neighbors import NeighborTable, knn
from .perturb import NoiseKind, NoiseSpec, add_noise, squeeze

__version__ = "0.1.0"

__all__ = [
    "IdBenchError", "InvalidParameterError", "ResourceLimitError",
    "RandomStream", "derive_stream",
    "Family", "ManifoldSpec", "PointCloud", "intrinsic_dim", "min_ambient_dim", "sample", "save_cloud", "load_cloud",
    "NoiseKind", "NoiseSpec", "add_noise", "squeeze",
    "NeighborTable", "knn",
    "Method", "EstimatorConfig", "LidResult", "run_estimator", "aggregate", "aggregate_all",
    "relative_error", "covariance_stats", "manifoldness_ratio", "local_density",
    "hofstadter_cloud", "box_count_dimension", "fractal_lid_suite",
    "SweepConfig", "run_sweep", "run_cell",
]
