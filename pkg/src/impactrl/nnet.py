"""Dense policy/value network with hand-written reverse-mode gradients.

The whole parameter set (policy trunk + head, value head or separate value
stack, gaussian log-std vector) lives in one immutable ``ParamSet``.
Updates never mutate; they return a new ``ParamSet`` with the version
bumped, so snapshots can be handed across threads freely.

Float64 everywhere: the test suite drives gradient checks at 1e-4 relative
tolerance and run-equivalence checks at 1e-10, which float32 cannot hold.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass, replace

import numpy as np

from .dists import DistGrad, DistParams

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class ConfigurationError(ValueError):
    """Invalid network layout or incompatible shapes."""


@dataclass(frozen=True)
class NetLayout:
    """Static architecture description.

    ``shared_value``: the value head is a linear layer on the policy trunk's
    last hidden activation. Otherwise the value function gets its own stack
    with the same hidden sizes.
    """

    obs_dim: int
    hidden: tuple[int, ...]
    head_kind: str  # "categorical" | "gaussian"
    action_dim: int  # number of actions, or gaussian action dimension
    shared_value: bool = False
    log_std_init: float = 0.0
    log_std_min: float = -20.0
    log_std_max: float = 2.0

    def __post_init__(self):
        if self.obs_dim < 1:
            raise ConfigurationError("obs_dim must be >= 1")
        if len(self.hidden) < 1:
            raise ConfigurationError("at least one hidden layer required")
        if any(h < 1 for h in self.hidden):
            raise ConfigurationError("zero-width layer in layout")
        if self.head_kind not in ("categorical", "gaussian"):
            raise ConfigurationError(f"unknown head_kind {self.head_kind!r}")
        if self.action_dim < (2 if self.head_kind == "categorical" else 1):
            raise ConfigurationError("action_dim too small for head kind")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))


Layer = tuple[np.ndarray, np.ndarray]  # (W: in x out, b: out)


@dataclass(frozen=True)
class ParamSet:
    """Immutable snapshot of all weights, with a monotone version number."""

    layout: NetLayout
    policy_layers: tuple[Layer, ...]  # hidden layers + policy output layer
    value_layers: tuple[Layer, ...]  # full stack, or just the shared head
    log_std: np.ndarray | None  # (action_dim,), gaussian only
    version: int = 0

    def all_arrays(self) -> list[np.ndarray]:
        out: list[np.ndarray] = []
        for w, b in self.policy_layers:
            out += [w, b]
        for w, b in self.value_layers:
            out += [w, b]
        if self.log_std is not None:
            out.append(self.log_std)
        return out


@dataclass(frozen=True)
class GradSet:
    """Partial derivatives, shape-congruent with a ParamSet."""

    policy_layers: tuple[Layer, ...]
    value_layers: tuple[Layer, ...]
    log_std: np.ndarray | None

    def all_arrays(self) -> list[np.ndarray]:
        out: list[np.ndarray] = []
        for w, b in self.policy_layers:
            out += [w, b]
        for w, b in self.value_layers:
            out += [w, b]
        if self.log_std is not None:
            out.append(self.log_std)
        return out


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.setflags(write=False)
    return a


def _orthogonal(rng: np.random.Generator, rows: int, cols: int, gain: float) -> np.ndarray:
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))  # fix QR sign ambiguity for determinism
    if rows < cols:
        q = q.T
    return gain * q[:rows, :cols]


def _scaled_uniform(rng: np.random.Generator, rows: int, cols: int, gain: float) -> np.ndarray:
    bound = gain / np.sqrt(rows)
    return rng.uniform(-bound, bound, size=(rows, cols))


def _init_matrix(rng, rows, cols, gain, scheme) -> np.ndarray:
    if scheme == "orthogonal":
        return _orthogonal(rng, rows, cols, gain)
    if scheme == "scaled_uniform":
        return _scaled_uniform(rng, rows, cols, gain)
    raise ConfigurationError(f"unknown init scheme {scheme!r}")


def _init_stack(
    rng: np.random.Generator, sizes: list[int], out_gain: float, scheme: str
) -> tuple[Layer, ...]:
    layers = []
    for i in range(len(sizes) - 1):
        last = i == len(sizes) - 2
        gain = out_gain if last else np.sqrt(2.0)
        w = _init_matrix(rng, sizes[i], sizes[i + 1], gain, scheme)
        b = np.zeros(sizes[i + 1])
        layers.append((_freeze(w), _freeze(b)))
    return tuple(layers)


def init_params(layout: NetLayout, seed: int, scheme: str = "orthogonal") -> ParamSet:
    """Deterministic init: orthogonal hidden layers (gain sqrt(2)),
    output layers scaled to 0.01 so early policy ratios stay near 1."""
    rng = np.random.default_rng(seed)
    sizes = [layout.obs_dim, *layout.hidden, layout.action_dim]
    policy = _init_stack(rng, sizes, out_gain=0.01, scheme=scheme)
    if layout.shared_value:
        w = _init_matrix(rng, layout.hidden[-1], 1, 0.01, scheme)
        value = ((_freeze(w), _freeze(np.zeros(1))),)
    else:
        value = _init_stack(rng, [layout.obs_dim, *layout.hidden, 1], out_gain=0.01, scheme=scheme)
    log_std = None
    if layout.head_kind == "gaussian":
        log_std = _freeze(np.full(layout.action_dim, layout.log_std_init))
    return ParamSet(layout=layout, policy_layers=policy, value_layers=value, log_std=log_std)


def _check_obs(layout: NetLayout, obs: np.ndarray) -> np.ndarray:
    obs = np.asarray(obs, dtype=np.float64)
    if obs.ndim == 1:
        obs = obs[None, :]
    if obs.ndim != 2 or obs.shape[1] != layout.obs_dim:
        raise ConfigurationError(
            f"observation batch must be (B, {layout.obs_dim}), got {obs.shape}"
        )
    return obs


def _mlp_forward(layers: tuple[Layer, ...], obs: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
    """Tanh MLP; returns (linear head output, activations per layer incl. input)."""
    acts = [obs]
    h = obs
    for w, b in layers[:-1]:
        h = np.tanh(h @ w + b)
        acts.append(h)
    w, b = layers[-1]
    return h @ w + b, acts


def _mlp_backward(
    layers: tuple[Layer, ...], acts: list[np.ndarray], d_out: np.ndarray
) -> tuple[list[Layer], np.ndarray]:
    """Backprop through the stack; returns per-layer grads and d(input)."""
    grads: list[Layer] = [None] * len(layers)  # type: ignore[list-item]
    delta = d_out
    for i in range(len(layers) - 1, -1, -1):
        w, _ = layers[i]
        grads[i] = (acts[i].T @ delta, delta.sum(axis=0))
        delta = delta @ w.T
        if i > 0:
            delta = delta * (1.0 - acts[i] ** 2)  # tanh'
    return grads, delta


def _clamped_log_std(layout: NetLayout, log_std: np.ndarray) -> np.ndarray:
    return np.clip(log_std, layout.log_std_min, layout.log_std_max)


def forward_policy(params: ParamSet, obs: np.ndarray) -> DistParams:
    """Action distribution per observation row. Pure function."""
    obs = _check_obs(params.layout, obs)
    out, _ = _mlp_forward(params.policy_layers, obs)
    if params.layout.head_kind == "categorical":
        return DistParams(kind="categorical", logits=out)
    ls = _clamped_log_std(params.layout, params.log_std)
    return DistParams(
        kind="gaussian", mean=out, log_std=np.broadcast_to(ls, out.shape).copy()
    )


def forward_value(params: ParamSet, obs: np.ndarray) -> np.ndarray:
    """State-value estimate per observation row, shape (B,). Pure function."""
    obs = _check_obs(params.layout, obs)
    if params.layout.shared_value:
        _, acts = _mlp_forward(params.policy_layers, obs)
        w, b = params.value_layers[0]
        return (acts[-1] @ w + b)[:, 0]
    out, _ = _mlp_forward(params.value_layers, obs)
    return out[:, 0]


def backward(
    params: ParamSet,
    obs: np.ndarray,
    d_dist: DistGrad | None,
    d_values: np.ndarray | None,
) -> GradSet:
    """Exact reverse-mode gradients of the policy/value forward passes.

    ``d_dist`` holds per-row upstream gradients on the distribution
    parameters; ``d_values`` on the value output. Either may be None.
    """
    layout = params.layout
    obs = _check_obs(layout, obs)
    bsz = obs.shape[0]

    pol_out, pol_acts = _mlp_forward(params.policy_layers, obs)

    if d_dist is None:
        d_pol_out = np.zeros_like(pol_out)
        d_log_std_rows = None
    elif layout.head_kind == "categorical":
        if d_dist.kind != "categorical" or d_dist.d_logits.shape != pol_out.shape:
            raise ConfigurationError("upstream logits gradient shape mismatch")
        d_pol_out = d_dist.d_logits
        d_log_std_rows = None
    else:
        if d_dist.kind != "gaussian" or d_dist.d_mean.shape != pol_out.shape:
            raise ConfigurationError("upstream mean gradient shape mismatch")
        d_pol_out = d_dist.d_mean
        d_log_std_rows = d_dist.d_log_std

    pol_grads, d_trunk_from_policy = _mlp_backward(params.policy_layers, pol_acts, d_pol_out)

    if d_values is not None:
        d_values = np.asarray(d_values, dtype=np.float64).reshape(bsz, 1)
    if layout.shared_value:
        w, _ = params.value_layers[0]
        if d_values is None:
            val_grads = [(np.zeros_like(w), np.zeros(1))]
        else:
            h_last = pol_acts[-1]
            val_grads = [(h_last.T @ d_values, d_values.sum(axis=0))]
            # value head feeds the shared trunk: fold its delta into the
            # policy stack below the head layer
            delta = (d_values @ w.T) * (1.0 - h_last**2)
            for i in range(len(params.policy_layers) - 2, -1, -1):
                wp, _ = params.policy_layers[i]
                gw, gb = pol_grads[i]
                pol_grads[i] = (gw + pol_acts[i].T @ delta, gb + delta.sum(axis=0))
                delta = delta @ wp.T
                if i > 0:
                    delta = delta * (1.0 - pol_acts[i] ** 2)
    else:
        if d_values is None:
            val_grads = [(np.zeros_like(w), np.zeros_like(b)) for w, b in params.value_layers]
        else:
            _, val_acts = _mlp_forward(params.value_layers, obs)
            val_grads, _ = _mlp_backward(params.value_layers, val_acts, d_values)

    log_std_grad = None
    if layout.head_kind == "gaussian":
        log_std_grad = np.zeros_like(params.log_std)
        if d_log_std_rows is not None:
            # clamp is identity inside the bounds, zero-derivative outside
            mask = (params.log_std > layout.log_std_min) & (params.log_std < layout.log_std_max)
            log_std_grad = d_log_std_rows.sum(axis=0) * mask

    return GradSet(
        policy_layers=tuple((gw, gb) for gw, gb in pol_grads),
        value_layers=tuple((gw, gb) for gw, gb in val_grads),
        log_std=log_std_grad,
    )


# --- flat views (optimizer, finite differences, checkpoints) ---


def flatten_params(params: ParamSet) -> np.ndarray:
    return np.concatenate([a.ravel() for a in params.all_arrays()])


def flatten_grads(grads: GradSet) -> np.ndarray:
    return np.concatenate([a.ravel() for a in grads.all_arrays()])


def unflatten_params(params: ParamSet, flat: np.ndarray) -> ParamSet:
    """Rebuild a ParamSet from a flat vector (same layout, same version)."""
    arrays = params.all_arrays()
    pieces = []
    at = 0
    for a in arrays:
        pieces.append(_freeze(flat[at : at + a.size].reshape(a.shape)))
        at += a.size
    if at != flat.size:
        raise ConfigurationError("flat vector size mismatch")
    n_pol = len(params.policy_layers)
    n_val = len(params.value_layers)
    pol = tuple((pieces[2 * i], pieces[2 * i + 1]) for i in range(n_pol))
    val = tuple((pieces[2 * n_pol + 2 * i], pieces[2 * n_pol + 2 * i + 1]) for i in range(n_val))
    log_std = pieces[-1] if params.log_std is not None else None
    return replace(params, policy_layers=pol, value_layers=val, log_std=log_std)


def value_param_mask(params: ParamSet) -> np.ndarray:
    """Boolean flat mask selecting value-stack parameters (for a separate
    value learning rate)."""
    mask = []
    for w, b in params.policy_layers:
        mask.append(np.zeros(w.size + b.size, dtype=bool))
    for w, b in params.value_layers:
        mask.append(np.ones(w.size + b.size, dtype=bool))
    if params.log_std is not None:
        mask.append(np.zeros(params.log_std.size, dtype=bool))
    return np.concatenate(mask)


# --- optimizer ---


@dataclass
class OptState:
    """Adam moments over the flat parameter vector (ignored for sgd)."""

    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def zeros(cls, params: ParamSet) -> "OptState":
        n = flatten_params(params).size
        return cls(m=np.zeros(n), v=np.zeros(n))


def clip_grad_norm(flat_grad: np.ndarray, max_norm: float | None) -> np.ndarray:
    if max_norm is None or max_norm <= 0:
        return flat_grad
    norm = float(np.sqrt((flat_grad**2).sum()))
    if norm > max_norm:
        return flat_grad * (max_norm / norm)
    return flat_grad


def apply_update(
    params: ParamSet,
    grads: GradSet,
    opt_state: OptState,
    lr: float,
    *,
    optimizer: str = "adam",
    grad_clip: float | None = None,
    value_lr: float | None = None,
    beta1: float = ADAM_BETA1,
    beta2: float = ADAM_BETA2,
    eps: float = ADAM_EPS,
) -> tuple[ParamSet, OptState]:
    """One descent step on the flat parameter vector; version += 1.

    Gradient-norm clipping is global (whole flat vector). ``value_lr``
    applies to value-stack parameters only when given.
    """
    flat = flatten_params(params)
    g = clip_grad_norm(flatten_grads(grads), grad_clip)
    if g.shape != flat.shape:
        raise ConfigurationError("gradient/parameter size mismatch")

    lr_vec = lr
    if value_lr is not None and value_lr != lr:
        lr_vec = np.where(value_param_mask(params), value_lr, lr)

    if optimizer == "sgd":
        new_flat = flat - lr_vec * g
        new_state = OptState(m=opt_state.m, v=opt_state.v, step=opt_state.step + 1)
    elif optimizer == "adam":
        t = opt_state.step + 1
        m = beta1 * opt_state.m + (1.0 - beta1) * g
        v = beta2 * opt_state.v + (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1**t)
        v_hat = v / (1.0 - beta2**t)
        new_flat = flat - lr_vec * m_hat / (np.sqrt(v_hat) + eps)
        new_state = OptState(m=m, v=v, step=t)
    else:
        raise ConfigurationError(f"unknown optimizer {optimizer!r}")

    if not np.all(np.isfinite(new_flat)):
        raise FloatingPointError("non-finite parameters after update")
    out = unflatten_params(params, new_flat)
    return replace(out, version=params.version + 1), new_state


# --- checkpoint io: JSON with little-endian float64 payloads ---

CHECKPOINT_FORMAT = "impactrl-checkpoint-v1"


def _array_names(params: ParamSet) -> list[str]:
    names = []
    for i in range(len(params.policy_layers)):
        names += [f"policy.{i}.w", f"policy.{i}.b"]
    for i in range(len(params.value_layers)):
        names += [f"value.{i}.w", f"value.{i}.b"]
    if params.log_std is not None:
        names.append("log_std")
    return names


def save_checkpoint(params: ParamSet, path, extra: dict | None = None) -> None:
    layout = params.layout
    arrays = params.all_arrays()
    names = _array_names(params)
    doc = {
        "format": CHECKPOINT_FORMAT,
        "layout": {
            "obs_dim": layout.obs_dim,
            "hidden": list(layout.hidden),
            "head_kind": layout.head_kind,
            "action_dim": layout.action_dim,
            "shared_value": layout.shared_value,
            "log_std_init": layout.log_std_init,
            "log_std_min": layout.log_std_min,
            "log_std_max": layout.log_std_max,
        },
        "version": params.version,
        "order": names,
        "arrays": {
            name: {
                "shape": list(a.shape),
                "data": base64.b64encode(a.astype("<f8").tobytes()).decode("ascii"),
            }
            for name, a in zip(names, arrays)
        },
    }
    if extra:
        doc["extra"] = extra
    with open(path, "w") as f:
        json.dump(doc, f)


def load_checkpoint(path) -> tuple[ParamSet, dict]:
    with open(path) as f:
        doc = json.load(f)
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ConfigurationError(f"not a recognized checkpoint: {path}")
    ld = doc["layout"]
    layout = NetLayout(
        obs_dim=ld["obs_dim"],
        hidden=tuple(ld["hidden"]),
        head_kind=ld["head_kind"],
        action_dim=ld["action_dim"],
        shared_value=ld["shared_value"],
        log_std_init=ld["log_std_init"],
        log_std_min=ld["log_std_min"],
        log_std_max=ld["log_std_max"],
    )
    arrays = []
    for name in doc["order"]:
        rec = doc["arrays"][name]
        a = np.frombuffer(base64.b64decode(rec["data"]), dtype="<f8").reshape(rec["shape"])
        arrays.append(_freeze(a))
    n_hidden = len(layout.hidden)
    n_pol = n_hidden + 1
    n_val = 1 if layout.shared_value else n_hidden + 1
    pol = tuple((arrays[2 * i], arrays[2 * i + 1]) for i in range(n_pol))
    val = tuple((arrays[2 * n_pol + 2 * i], arrays[2 * n_pol + 2 * i + 1]) for i in range(n_val))
    log_std = arrays[-1] if layout.head_kind == "gaussian" else None
    params = ParamSet(
        layout=layout,
        policy_layers=pol,
        value_layers=val,
        log_std=log_std,
        version=doc["version"],
    )
    return params, doc.get("extra", {})
