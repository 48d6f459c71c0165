"""Value targets and advantages for off-policy trajectory fragments.

Two estimators over the same clipped importance weights:

* ``vtrace_targets``: corrected value targets
  v_t = V(s_t) + sum_i gamma^(i-t) (prod c_j) * delta_i, with
  delta_i = rho_i * (r_i + gamma * V(s_{i+1}) - V(s_i)).
* ``vgae_advantages``: lambda-weighted advantage
  A_t = sum_i (lambda * gamma)^(i-t) (prod c_j) * delta_i,
  value targets defined as A_t + V(s_t).

c_j = min(c_bar, pi_ref(a_j|s_j) / pi_behavior(a_j|s_j)) and rho_i likewise
with rho_bar. With on-policy data and c_bar = rho_bar = 1 both reduce to
the n-step return and vanilla GAE-lambda respectively.

Episode boundaries: a done flag at step i zeroes both the bootstrap inside
delta_i and the recursion across i, so no credit flows over a reset.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class TrajectorySlice:
    """One contiguous fragment of experience plus its bootstrap value.

    ``logp_ref`` is the reference policy that defines the importance-weight
    numerators (the target network in normal operation); ``logp_behavior``
    is the worker policy that produced the actions.
    """

    rewards: np.ndarray
    dones: np.ndarray
    values: np.ndarray
    bootstrap_value: float
    logp_ref: np.ndarray
    logp_behavior: np.ndarray
    gamma: float
    lam: float
    c_bar: float = 1.0
    rho_bar: float = 1.0

    def __post_init__(self):
        t = len(self.rewards)
        for name in ("dones", "values", "logp_ref", "logp_behavior"):
            if len(getattr(self, name)) != t:
                raise ValueError(f"{name} length {len(getattr(self, name))} != rewards length {t}")
        if not (0.0 <= self.gamma <= 1.0 and 0.0 <= self.lam <= 1.0):
            raise ValueError("gamma and lam must lie in [0, 1]")
        if self.c_bar < 1.0 or self.rho_bar < 1.0:
            raise ValueError("c_bar and rho_bar must be >= 1")

    def __len__(self) -> int:
        return len(self.rewards)


@dataclass(frozen=True)
class AdvantageSet:
    advantages: np.ndarray
    value_targets: np.ndarray


def _clipped_weights(s: TrajectorySlice) -> tuple[np.ndarray, np.ndarray]:
    ratio = np.exp(
        np.asarray(s.logp_ref, dtype=np.float64) - np.asarray(s.logp_behavior, dtype=np.float64)
    )
    return np.minimum(s.c_bar, ratio), np.minimum(s.rho_bar, ratio)


def _deltas(s: TrajectorySlice, rho: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    r = np.asarray(s.rewards, dtype=np.float64)
    v = np.asarray(s.values, dtype=np.float64)
    not_done = 1.0 - np.asarray(s.dones, dtype=np.float64)
    v_next = np.append(v[1:], s.bootstrap_value)
    delta = rho * (r + s.gamma * v_next * not_done - v)
    return delta, not_done


def vtrace_targets(s: TrajectorySlice) -> np.ndarray:
    """Corrected value targets v_t, shape (T,)."""
    c, rho = _clipped_weights(s)
    delta, not_done = _deltas(s, rho)
    v = np.asarray(s.values, dtype=np.float64)
    out = np.empty(len(s))
    acc = 0.0
    for t in range(len(s) - 1, -1, -1):
        acc = delta[t] + s.gamma * c[t] * not_done[t] * acc
        out[t] = v[t] + acc
    return out


def vgae_advantages(s: TrajectorySlice) -> AdvantageSet:
    """Lambda-weighted advantages and their value targets, each shape (T,).

    Standardization is deliberately not applied here; the loss owns it.
    """
    c, rho = _clipped_weights(s)
    delta, not_done = _deltas(s, rho)
    v = np.asarray(s.values, dtype=np.float64)
    adv = np.empty(len(s))
    acc = 0.0
    decay = s.gamma * s.lam
    for t in range(len(s) - 1, -1, -1):
        acc = delta[t] + decay * c[t] * not_done[t] * acc
        adv[t] = acc
    return AdvantageSet(advantages=adv, value_targets=adv + v)
