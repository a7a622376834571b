"""Gradient-informed temporal sampling for autoregressive PDE surrogates.

Selects a budgeted set of shared temporal start indices for surrogate
training by jointly maximizing pilot-model gradient-norm scores and two
facility-location temporal coverage terms, and ships the baselines,
metrics, and diagnostics needed to evaluate the selection end to end on
synthetic trajectory data.
"""

from .pde_data import SolverConfig, TrajectoryDataset, generate_dataset, read_dataset, write_dataset
from .pilot_scoring import (
    CandidateScores,
    CandidateSet,
    build_candidates,
    score_grad_norm,
    score_rollout_loss,
    train_pilot,
)
from .selector import (
    ObjectiveConfig,
    SelectionResult,
    budget_from_ratio,
    greedy_select,
    sample_coverage_only,
    sample_gits,
    sample_grad_match,
    sample_grad_only,
    sample_loss_div,
    sample_loss_only,
    sample_uniform,
)
from .surrogate import (
    SurrogateArch,
    SurrogateParams,
    TrainConfig,
    forward,
    init_params,
    rollout,
    rollout_loss_grad,
    train,
)
from .temporal_coverage import (
    CoverageConfig,
    build_windows,
    coverage_values,
    derive_coverage_config,
    kernel_global,
    kernel_window,
    state_update,
)
from .diagnostics import (
    GeometryReport,
    RolloutReport,
    auxiliary_metrics,
    rollout_nrmse,
    score_utility_alignment,
    spearman,
    subset_geometry,
)
from .harness import ExperimentConfig, run_experiment, run_selftest

__version__ = "0.1.0"
