"""Action distributions: categorical and diagonal Gaussian.

All functions are vectorized over a batch dimension and operate on plain
numpy arrays. Alongside the usual log-prob / entropy / KL values, this
module provides their analytic gradients with respect to the distribution
parameters, which the loss assembles into upstream gradients for the
network backward pass.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class DistParams:
    """Batched parameters of an action distribution.

    kind == "categorical": ``logits`` has shape (B, n_actions).
    kind == "gaussian": ``mean`` and ``log_std`` have shape (B, action_dim).
    """

    kind: str
    logits: np.ndarray | None = None
    mean: np.ndarray | None = None
    log_std: np.ndarray | None = None

    def __post_init__(self):
        if self.kind == "categorical":
            if self.logits is None or self.logits.ndim != 2:
                raise ValueError("categorical DistParams needs 2-D logits")
        elif self.kind == "gaussian":
            if self.mean is None or self.log_std is None:
                raise ValueError("gaussian DistParams needs mean and log_std")
            if self.mean.shape != self.log_std.shape or self.mean.ndim != 2:
                raise ValueError("gaussian mean/log_std must share a 2-D shape")
        else:
            raise ValueError(f"unknown distribution kind: {self.kind!r}")

    @property
    def batch_size(self) -> int:
        arr = self.logits if self.kind == "categorical" else self.mean
        return arr.shape[0]


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def _check_actions(dist: DistParams, actions: np.ndarray) -> np.ndarray:
    actions = np.asarray(actions)
    if dist.kind == "categorical":
        if actions.ndim != 1 or actions.shape[0] != dist.batch_size:
            raise ValueError("categorical actions must be a (B,) index vector")
        n = dist.logits.shape[1]
        if actions.min(initial=0) < 0 or actions.max(initial=0) >= n:
            raise ValueError(f"categorical action index out of range [0, {n})")
        return actions.astype(np.int64)
    if actions.ndim == 1:
        actions = actions[:, None]
    if actions.shape != dist.mean.shape:
        raise ValueError("gaussian actions must match (B, action_dim)")
    return actions.astype(np.float64)


def log_prob(dist: DistParams, actions: np.ndarray) -> np.ndarray:
    """Per-row log-mass (categorical) or log-density (gaussian), shape (B,)."""
    actions = _check_actions(dist, actions)
    if dist.kind == "categorical":
        logp = _log_softmax(dist.logits)
        return logp[np.arange(len(actions)), actions]
    std = np.exp(dist.log_std)
    z = (actions - dist.mean) / std
    return (-0.5 * z * z - dist.log_std - 0.5 * LOG_2PI).sum(axis=1)


def entropy(dist: DistParams) -> np.ndarray:
    """Closed-form entropy per row, shape (B,)."""
    if dist.kind == "categorical":
        logp = _log_softmax(dist.logits)
        p = np.exp(logp)
        return -(p * logp).sum(axis=1)
    return (dist.log_std + 0.5 * (LOG_2PI + 1.0)).sum(axis=1)


def kl_divergence(p: DistParams, q: DistParams) -> np.ndarray:
    """KL(p || q) per row, shape (B,). Nonnegative, zero iff p == q."""
    if p.kind != q.kind:
        raise ValueError("cannot take KL between different distribution kinds")
    if p.kind == "categorical":
        logp = _log_softmax(p.logits)
        logq = _log_softmax(q.logits)
        return (np.exp(logp) * (logp - logq)).sum(axis=1)
    var_p = np.exp(2.0 * p.log_std)
    var_q = np.exp(2.0 * q.log_std)
    return (
        q.log_std
        - p.log_std
        + (var_p + (p.mean - q.mean) ** 2) / (2.0 * var_q)
        - 0.5
    ).sum(axis=1)


def sample(dist: DistParams, rng: np.random.Generator) -> np.ndarray:
    """Draw one action per row from the given generator."""
    if dist.kind == "categorical":
        p = np.exp(_log_softmax(dist.logits))
        # inverse-CDF per row keeps the draw count independent of n_actions
        u = rng.random(dist.batch_size)
        cdf = np.cumsum(p, axis=1)
        return (u[:, None] > cdf).sum(axis=1).astype(np.int64)
    noise = rng.standard_normal(dist.mean.shape)
    return dist.mean + np.exp(dist.log_std) * noise


def mode(dist: DistParams) -> np.ndarray:
    """Deterministic action: argmax logits or the gaussian mean."""
    if dist.kind == "categorical":
        return dist.logits.argmax(axis=1)
    return dist.mean.copy()


# --- analytic parameter gradients used by the surrogate loss ---


@dataclass(frozen=True)
class DistGrad:
    """Per-row gradients w.r.t. distribution parameters (same shapes)."""

    kind: str
    d_logits: np.ndarray | None = None
    d_mean: np.ndarray | None = None
    d_log_std: np.ndarray | None = None

    def scaled(self, w: np.ndarray) -> "DistGrad":
        """Multiply each row by weight w (shape (B,))."""
        w = np.asarray(w)
        if self.kind == "categorical":
            return DistGrad(kind=self.kind, d_logits=self.d_logits * w[:, None])
        return DistGrad(
            kind=self.kind,
            d_mean=self.d_mean * w[:, None],
            d_log_std=self.d_log_std * w[:, None],
        )

    def __add__(self, other: "DistGrad") -> "DistGrad":
        if self.kind != other.kind:
            raise ValueError("mismatched gradient kinds")
        if self.kind == "categorical":
            return DistGrad(kind=self.kind, d_logits=self.d_logits + other.d_logits)
        return DistGrad(
            kind=self.kind,
            d_mean=self.d_mean + other.d_mean,
            d_log_std=self.d_log_std + other.d_log_std,
        )


def zeros_like_grad(dist: DistParams) -> DistGrad:
    if dist.kind == "categorical":
        return DistGrad(kind="categorical", d_logits=np.zeros_like(dist.logits))
    return DistGrad(
        kind="gaussian",
        d_mean=np.zeros_like(dist.mean),
        d_log_std=np.zeros_like(dist.log_std),
    )


def log_prob_grad(dist: DistParams, actions: np.ndarray) -> DistGrad:
    """d log_prob / d params, per row."""
    actions = _check_actions(dist, actions)
    if dist.kind == "categorical":
        p = np.exp(_log_softmax(dist.logits))
        g = -p
        g[np.arange(len(actions)), actions] += 1.0
        return DistGrad(kind="categorical", d_logits=g)
    std = np.exp(dist.log_std)
    z = (actions - dist.mean) / std
    return DistGrad(kind="gaussian", d_mean=z / std, d_log_std=z * z - 1.0)


def entropy_grad(dist: DistParams) -> DistGrad:
    """d entropy / d params, per row."""
    if dist.kind == "categorical":
        logp = _log_softmax(dist.logits)
        p = np.exp(logp)
        h = -(p * logp).sum(axis=1, keepdims=True)
        return DistGrad(kind="categorical", d_logits=-p * (logp + h))
    return DistGrad(
        kind="gaussian",
        d_mean=np.zeros_like(dist.mean),
        d_log_std=np.ones_like(dist.log_std),
    )


def kl_grad_wrt_q(p: DistParams, q: DistParams) -> DistGrad:
    """d KL(p || q) / d q-params, per row (p held constant)."""
    if p.kind != q.kind:
        raise ValueError("cannot take KL between different distribution kinds")
    if p.kind == "categorical":
        pp = np.exp(_log_softmax(p.logits))
        qq = np.exp(_log_softmax(q.logits))
        return DistGrad(kind="categorical", d_logits=qq - pp)
    var_p = np.exp(2.0 * p.log_std)
    var_q = np.exp(2.0 * q.log_std)
    d_mean = (q.mean - p.mean) / var_q
    d_log_std = 1.0 - (var_p + (p.mean - q.mean) ** 2) / var_q
    return DistGrad(kind="gaussian", d_mean=d_mean, d_log_std=d_log_std)


def kl_grad_wrt_p(p: DistParams, q: DistParams) -> DistGrad:
    """d KL(p || q) / d p-params, per row (q held constant)."""
    if p.kind != q.kind:
        raise ValueError("cannot take KL between different distribution kinds")
    if p.kind == "categorical":
        logp = _log_softmax(p.logits)
        logq = _log_softmax(q.logits)
        pp = np.exp(logp)
        diff = logp - logq
        kl = (pp * diff).sum(axis=1, keepdims=True)
        return DistGrad(kind="categorical", d_logits=pp * (diff - kl))
    var_p = np.exp(2.0 * p.log_std)
    var_q = np.exp(2.0 * q.log_std)
    d_mean = (p.mean - q.mean) / var_q
    d_log_std = var_p / var_q - 1.0
    return DistGrad(kind="gaussian", d_mean=d_mean, d_log_std=d_log_std)


def select_rows(dist: DistParams, idx: np.ndarray) -> DistParams:
    """Row-subset view of a batched distribution."""
    if dist.kind == "categorical":
        return DistParams(kind="categorical", logits=dist.logits[idx])
    return DistParams(kind="gaussian", mean=dist.mean[idx], log_std=dist.log_std[idx])
