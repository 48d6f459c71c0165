"""Asynchronous actor-learner RL with a target-clipped surrogate objective,
bounded-replay circular buffer, and importance-corrected advantages."""

from .cbuffer import CircularBuffer, TrainBatch
from .config import ExperimentConfig, parse_config
from .dists import DistParams, entropy, kl_divergence, log_prob
from .envs import make_env
from .gae import AdvantageSet, TrajectorySlice, vgae_advantages, vtrace_targets
from .nnet import (
    GradSet,
    NetLayout,
    OptState,
    ParamSet,
    apply_update,
    backward,
    forward_policy,
    forward_value,
    init_params,
)
from .objective import (
    LossInputs,
    LossReport,
    adaptive_kl_update,
    clipped_target_ratio,
    ratio_variant,
    surrogate_loss,
)
from .runtime import RunResult, evaluate_policy, run_experiment, sync_target

__version__ = "0.1.0"

__all__ = [
    "AdvantageSet",
    "CircularBuffer",
    "DistParams",
    "ExperimentConfig",
    "GradSet",
    "LossInputs",
    "LossReport",
    "NetLayout",
    "OptState",
    "ParamSet",
    "RunResult",
    "TrainBatch",
    "TrajectorySlice",
    "adaptive_kl_update",
    "apply_update",
    "backward",
    "clipped_target_ratio",
    "entropy",
    "evaluate_policy",
    "forward_policy",
    "forward_value",
    "init_params",
    "kl_divergence",
    "log_prob",
    "make_env",
    "parse_config",
    "ratio_variant",
    "run_experiment",
    "surrogate_loss",
    "sync_target",
    "vgae_advantages",
    "vtrace_targets",
]
