"""Surrogate loss for the asynchronous learner.

The headline ratio clips the worker-to-target likelihood ratio before
importance-sampling to the learner:

    min(pi_w / pi_t, rho) * pi_theta / pi_w  ==  pi_theta / max(pi_t, pi_w / rho)

computed in log-space as exp(logp_theta - max(logp_target, logp_worker - ln rho)),
which never divides by a vanishing probability. Ablation variants R1
(learner/target) and R2 (learner/worker) share the same plumbing.

The total scalar minimized by the learner is

    policy - entropy_coeff * entropy + value_coeff * value + kl_coeff * KL

with the policy term the epsilon-clipped pessimistic surrogate (clipping
optional, off for the pure importance-sampling baseline). Alongside the
report, ``surrogate_loss`` returns exact upstream gradients on the
learner's distribution parameters and value predictions, ready for the
network backward pass.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import dists
from .dists import DistGrad, DistParams

RATIO_VARIANTS = ("r1", "r2", "r3")

KL_ETA_MIN = 1e-4
KL_ETA_MAX = 1e2


class TrainingDiverged(RuntimeError):
    """A loss component went non-finite; the training step must abort."""


def clipped_target_ratio(
    logp_theta: np.ndarray,
    logp_target: np.ndarray,
    logp_worker: np.ndarray,
    rho: float,
) -> np.ndarray:
    """Target-worker clipped importance ratio, elementwise. ``rho`` may be
    a scalar or a per-row array."""
    if np.any(np.asarray(rho) < 1.0):
        raise ValueError("rho must be >= 1")
    denom = np.maximum(logp_target, logp_worker - np.log(rho))
    return np.exp(np.asarray(logp_theta) - denom)


def ratio_variant(
    variant: str,
    logp_theta: np.ndarray,
    logp_target: np.ndarray,
    logp_worker: np.ndarray,
    rho: float,
) -> np.ndarray:
    """R1 = pi/target, R2 = pi/worker, R3 = target-worker clipped."""
    if variant == "r1":
        return np.exp(np.asarray(logp_theta) - np.asarray(logp_target))
    if variant == "r2":
        return np.exp(np.asarray(logp_theta) - np.asarray(logp_worker))
    if variant == "r3":
        return clipped_target_ratio(logp_theta, logp_target, logp_worker, rho)
    raise ValueError(f"unknown ratio variant {variant!r}")


@dataclass(frozen=True)
class LossInputs:
    """Everything the learner step feeds the loss for one train batch."""

    learner_dist: DistParams  # differentiable side
    target_dist: DistParams  # frozen snapshot attached at first consumption
    actions: np.ndarray
    logp_target: np.ndarray
    logp_worker: np.ndarray
    advantages: np.ndarray
    values: np.ndarray  # V_w(s), differentiable side
    value_targets: np.ndarray
    clip_eps: float
    rho: float
    kl_coeff: float
    entropy_coeff: float
    value_coeff: float
    variant: str = "r3"
    eps_clip: bool = True
    standardize_advantages: bool = True
    kl_direction: str = "target_learner"  # or "learner_target"


@dataclass(frozen=True)
class LossReport:
    total: float
    policy_loss: float
    value_loss: float
    entropy: float
    mean_kl: float
    mean_ratio: float
    clip_fraction: float

    def check_finite(self) -> "LossReport":
        for name, val in self.__dict__.items():
            if not np.isfinite(val):
                raise TrainingDiverged(f"loss component {name} is {val}")
        return self


def standardize(adv: np.ndarray) -> np.ndarray:
    return (adv - adv.mean()) / (adv.std() + 1e-8)


def surrogate_loss(inputs: LossInputs) -> tuple[LossReport, DistGrad, np.ndarray]:
    """Scalar loss report plus upstream gradients (dist params, values)."""
    if not (0.0 < inputs.clip_eps < 1.0):
        raise ValueError("clip_eps must lie in (0, 1)")
    if inputs.rho < 1.0:
        raise ValueError("rho must be >= 1")
    n = len(inputs.actions)
    for name in ("logp_target", "logp_worker", "advantages", "values", "value_targets"):
        if len(getattr(inputs, name)) != n:
            raise ValueError(f"{name} length mismatch")

    adv = np.asarray(inputs.advantages, dtype=np.float64)
    if inputs.standardize_advantages:
        adv = standardize(adv)

    logp_theta = dists.log_prob(inputs.learner_dist, inputs.actions)
    ratio = ratio_variant(
        inputs.variant, logp_theta, inputs.logp_target, inputs.logp_worker, inputs.rho
    )

    if inputs.eps_clip:
        lo, hi = 1.0 - inputs.clip_eps, 1.0 + inputs.clip_eps
        clipped = np.clip(ratio, lo, hi)
        surr_raw = ratio * adv
        surr_clip = clipped * adv
        surr = np.minimum(surr_raw, surr_clip)
        # gradient flows through the raw branch only where it is the min
        d_surr_d_ratio = np.where(surr_raw <= surr_clip, adv, 0.0)
        clip_fraction = float(np.mean((ratio < lo) | (ratio > hi)))
    else:
        surr = ratio * adv
        d_surr_d_ratio = adv
        clip_fraction = 0.0

    policy_loss = -float(surr.mean())
    # dL/d logp_theta: ratio is exp(logp_theta - const), so dR/dlogp = R
    d_policy_d_logp = -(d_surr_d_ratio * ratio) / n

    values = np.asarray(inputs.values, dtype=np.float64)
    v_err = values - np.asarray(inputs.value_targets, dtype=np.float64)
    value_loss = float((v_err**2).mean())
    d_values = inputs.value_coeff * 2.0 * v_err / n

    ent = dists.entropy(inputs.learner_dist)
    entropy_mean = float(ent.mean())

    if inputs.kl_direction == "target_learner":
        kl = dists.kl_divergence(inputs.target_dist, inputs.learner_dist)
        kl_grad = dists.kl_grad_wrt_q(inputs.target_dist, inputs.learner_dist)
    elif inputs.kl_direction == "learner_target":
        kl = dists.kl_divergence(inputs.learner_dist, inputs.target_dist)
        kl_grad = dists.kl_grad_wrt_p(inputs.learner_dist, inputs.target_dist)
    else:
        raise ValueError(f"unknown kl_direction {inputs.kl_direction!r}")
    mean_kl = float(kl.mean())

    total = (
        policy_loss
        - inputs.entropy_coeff * entropy_mean
        + inputs.value_coeff * value_loss
        + inputs.kl_coeff * mean_kl
    )

    report = LossReport(
        total=total,
        policy_loss=policy_loss,
        value_loss=value_loss,
        entropy=entropy_mean,
        mean_kl=mean_kl,
        mean_ratio=float(ratio.mean()),
        clip_fraction=clip_fraction,
    ).check_finite()

    d_dist = dists.log_prob_grad(inputs.learner_dist, inputs.actions).scaled(d_policy_d_logp)
    if inputs.entropy_coeff != 0.0:
        ent_w = np.full(n, -inputs.entropy_coeff / n)
        d_dist = d_dist + dists.entropy_grad(inputs.learner_dist).scaled(ent_w)
    if inputs.kl_coeff != 0.0:
        d_dist = d_dist + kl_grad.scaled(np.full(n, inputs.kl_coeff / n))

    return report, d_dist, d_values


def adaptive_kl_update(current_eta: float, observed_kl: float, kl_target: float) -> float:
    """Doubling-zone controller for the KL penalty coefficient.

    eta == 0 means the penalty is configured off and stays off; the clamp
    would otherwise resurrect it.
    """
    if current_eta == 0.0:
        return 0.0
    if observed_kl > 2.0 * kl_target:
        eta = current_eta * 1.5
    elif observed_kl < kl_target / 2.0:
        eta = current_eta / 1.5
    else:
        eta = current_eta
    return float(np.clip(eta, KL_ETA_MIN, KL_ETA_MAX))
