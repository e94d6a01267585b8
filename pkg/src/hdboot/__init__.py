"""Bootstrap inference for high-dimensional linear models via the de-sparsified Lasso."""

__version__ = "0.1.0"

from .bootstrap import (  # noqa: E402
    BootstrapDraws,
    BootstrapSpec,
    Center,
    Multiplier,
    Scheme,
    bootstrap_inference,
    equivalent_tests,
    group_pvalue,
    holm_adjust,
    individual_ci,
    run_bootstrap,
    simultaneous_ci,
    westfall_young,
)
from .despars import Studentization, desparsify, normal_approx_inference, studentize  # noqa: E402
from .lasso import LassoFit, SolverOptions, estimate_sigma, fit_lasso, select_lambda_cv  # noqa: E402
from .nodewise import NodewiseProjection, default_lambda_x, nodewise_residuals  # noqa: E402
