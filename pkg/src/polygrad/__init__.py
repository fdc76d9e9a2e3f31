"""Learnable cubic-activation networks with analytic input-Jacobians.

Core pieces: a dual-stream forward pass that carries per-sample
input-Jacobians alongside activations, a Jacobian-norm training
penalty with exact tape gradients, matched ReLU baselines, the
gradient tail-ratio diagnostic with paired statistical tests, a
tabular data protocol, and a resumable sweep harness.
"""

from .baselines import BaselineNet, baseline_forward, baseline_input_grads, matched_capacity
from .checkpoint import load_checkpoint, save_checkpoint
from .config import load_config, parse_config
from .data import (
    Dataset,
    load_csv,
    make_blobs,
    make_pima_like,
    preprocess_pima,
    stratified_split,
    subsample_fraction,
)
from .errors import (
    ConfigError,
    CsvParseError,
    DegenerateDistributionError,
    MemoryBudgetError,
    NumericOverflowError,
    ShapeError,
)
from .harness import SweepPlan, plan_from_config, run_cell, stats_report, sweep
from .linalg import Rng, derive_seed, matmul, quantile
from .metrics import (
    StatTestResult,
    TailRatioReport,
    bonferroni,
    input_grad_norms,
    paired_t_one_sided,
    tail_ratio,
    wilcoxon_signed_rank,
)
from .polynet import (
    ActivationCoeffs,
    PolyLayer,
    PolyNetwork,
    dreg_penalty,
    forward_dual,
    forward_values,
    poly_deriv,
    poly_eval,
)
from .train import TrainConfig, loss_and_grads

__version__ = "0.1.0"

__all__ = [
    "ActivationCoeffs",
    "BaselineNet",
    "ConfigError",
    "CsvParseError",
    "Dataset",
    "DegenerateDistributionError",
    "MemoryBudgetError",
    "NumericOverflowError",
    "PolyLayer",
    "PolyNetwork",
    "Rng",
    "ShapeError",
    "StatTestResult",
    "SweepPlan",
    "TailRatioReport",
    "TrainConfig",
    "baseline_forward",
    "baseline_input_grads",
    "bonferroni",
    "derive_seed",
    "dreg_penalty",
    "forward_dual",
    "forward_values",
    "input_grad_norms",
    "load_checkpoint",
    "load_config",
    "load_csv",
    "loss_and_grads",
    "make_blobs",
    "make_pima_like",
    "matched_capacity",
    "matmul",
    "paired_t_one_sided",
    "parse_config",
    "plan_from_config",
    "poly_deriv",
    "poly_eval",
    "preprocess_pima",
    "quantile",
    "run_cell",
    "save_checkpoint",
    "stats_report",
    "stratified_split",
    "subsample_fraction",
    "sweep",
    "tail_ratio",
    "wilcoxon_signed_rank",
]
