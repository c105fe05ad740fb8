"""PowLU activation, baselines, property checks and outlier diagnostics."""

from .activations import (
    POWLU,
    SWIGLU,
    ActivationKind,
    Branch,
    ScalarEval,
    Variant,
    eval_pair,
    eval_self,
    gate_derivative,
    gate_value,
    pair_backward,
    sigmoid,
)
from .estimators import ActivationTransformer, GluFfnRegressor
from .properties import (
    check_zero_regularity,
    find_bound_constants,
    g_prime,
    growth_ratio,
    phi,
    scan_monotonicity,
    verification_report,
)
from .trainer import TrainConfig, TrainRun, compare_runs, make_task, train

__version__ = "0.1.0"
