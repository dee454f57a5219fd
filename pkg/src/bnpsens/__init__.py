"""Stick-breaking Dirichlet-process Gaussian mixtures, fit by variational
inference, with local sensitivity analysis of posterior cluster counts."""

import jax

# Everything downstream assumes float64; flip the switch before any
# submodule builds traced functions.
jax.config.update("jax_enable_x64", True)

__version__ = "0.1.0"

from .model import (  # noqa: E402
    ClusterParams,
    Dataset,
    ModelSpec,
    NiwPriorSpec,
    StickPriorSpec,
    log_conjugate_prior,
    log_gaussian,
    log_stick_prior,
    sticks_to_weights,
)
from .variational import (  # noqa: E402
    GlobalParams,
    Responsibilities,
    StickMoments,
    all_stick_moments,
    cluster_covariances,
    expected_log_weights,
    flatten,
    optimal_responsibilities,
    param_count,
    stick_moments,
    tril_size,
    unflatten,
)
from .objective import (  # noqa: E402
    KLAssembly,
    ObjectiveError,
    kl_with_responsibilities,
    profiled_kl,
)
from .optimizer import (  # noqa: E402
    FitResult,
    initialize,
    minimize_smooth,
    optimize,
)
from .diffengine import (  # noqa: E402
    DerivativeError,
    DerivativePack,
    FdCheckReport,
    cross_derivative,
    derivatives,
    fd_check,
    gradient,
    hessian,
)
from .sensitivity import (  # noqa: E402
    PerturbationDirection,
    SensitivityPack,
    alpha_direction,
    build_pack,
    extrapolate,
    extrapolate_flat,
    functional_direction,
)
from .quantities import (  # noqa: E402
    ClusterCountQuery,
    CountEstimate,
    clusters_mc,
    clusters_predictive,
    distinct_clusters_closed,
    expected_cluster_count,
    predictive_count_given_weights,
)
from .perturbations import (  # noqa: E402
    Perturbation,
    beta_swap,
    builtin_perturbations,
    contaminated_log_prior,
    exp_tilt,
    load_tabulated,
    log_normalizer,
    prior_swap,
)
from .harness import (  # noqa: E402
    ExperimentConfig,
    SweepReport,
    SweepRow,
    config_hash,
    emit_report,
    parse_config,
    read_report,
    run_alpha_sweep,
    run_functional_sweep,
)
from .datasets import load_csv, load_iris  # noqa: E402

__all__ = [
    "ClusterParams",
    "Dataset",
    "ModelSpec",
    "NiwPriorSpec",
    "StickPriorSpec",
    "log_conjugate_prior",
    "log_gaussian",
    "log_stick_prior",
    "sticks_to_weights",
    "GlobalParams",
    "Responsibilities",
    "StickMoments",
    "all_stick_moments",
    "cluster_covariances",
    "expected_log_weights",
    "flatten",
    "optimal_responsibilities",
    "param_count",
    "stick_moments",
    "tril_size",
    "unflatten",
    "KLAssembly",
    "ObjectiveError",
    "kl_with_responsibilities",
    "profiled_kl",
    "FitResult",
    "initialize",
    "minimize_smooth",
    "optimize",
    "DerivativeError",
    "DerivativePack",
    "FdCheckReport",
    "cross_derivative",
    "derivatives",
    "fd_check",
    "gradient",
    "hessian",
    "PerturbationDirection",
    "SensitivityPack",
    "alpha_direction",
    "build_pack",
    "extrapolate",
    "extrapolate_flat",
    "functional_direction",
    "ClusterCountQuery",
    "CountEstimate",
    "clusters_mc",
    "clusters_predictive",
    "distinct_clusters_closed",
    "expected_cluster_count",
    "predictive_count_given_weights",
    "Perturbation",
    "beta_swap",
    "builtin_perturbations",
    "contaminated_log_prior",
    "exp_tilt",
    "load_tabulated",
    "log_normalizer",
    "prior_swap",
    "ExperimentConfig",
    "SweepReport",
    "SweepRow",
    "config_hash",
    "emit_report",
    "parse_config",
    "read_report",
    "run_alpha_sweep",
    "run_functional_sweep",
    "load_csv",
    "load_iris",
    "__version__",
]
