"""Experiment configuration: profiles, file parsing, overrides, validation.

Config files are flat ``key = value`` text. Resolution is layered:
built-in profile (discrete or continuous, picked by env) -> file ->
explicit overrides -> ``finalize()``, which fills every derived field
(t_target from N*K, ratio variant and clipping from the mode, desk-scale
division of batch sizes) and validates the result. A finalized config
serializes and re-parses to itself.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .envs import ENV_IDS

MODES = ("impact", "ppo_sync", "impala_is", "appo")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    # environment / run shape
    env: str = "cartpole"
    mode: str = "impact"
    workers: int = 2
    total_timesteps: int = 300_000
    seeds: tuple[int, ...] = (1, 2, 3)
    out_dir: str = "runs"

    # batching and buffer
    sample_batch_size: int = 50  # S: steps per worker fragment
    train_batch_size: int = 500  # M: rows per buffer slot
    buffer_slots: int = 4  # N
    replay_count: int = 2  # K: max traversals per slot
    desk_divisor: int = 1  # shrinks profile batch sizes at parse time; 1 once resolved

    # learner schedule
    t_target: int | None = None  # None -> N * K
    t_frequency: int = 1

    # optimization
    lr: float = 1e-4
    value_lr: float | None = None
    lr_decay: str = "none"  # "linear": anneal with produced env steps
    optimizer: str = "adam"
    grad_clip: float | None = 10.0
    init_scheme: str = "orthogonal"

    # estimator constants
    gamma: float = 0.99
    lam: float = 0.995
    c_bar: float = 1.0
    rho_bar: float = 1.0

    # objective
    clip_eps: float = 0.3
    rho: float = 2.0
    kl_coeff: float = 0.0
    kl_target: float = 0.01
    entropy_coeff: float = 0.01
    value_coeff: float = 1.0
    ratio_variant: str | None = None  # None -> from mode
    eps_clip: bool | None = None  # None -> from mode
    standardize_advantages: bool = True
    kl_direction: str = "target_learner"

    # network
    hidden: tuple[int, ...] = (64, 64)
    shared_value: bool | None = None  # None -> True for discrete envs
    log_std_init: float = 0.0

    # runtime behavior
    max_episode_steps: int = 200
    value_source: str = "target"  # values used inside the advantage recursion
    buffer_selection: str = "uniform"
    allow_stale_evict: bool = False
    obs_norm: bool = False  # running mean-std observation filter
    deterministic: bool = False
    metrics_window: int = 100

    # periodic evaluation / early stop (0 disables)
    eval_every: int = 0
    eval_episodes: int = 20
    stop_return: float | None = None

    def is_discrete(self) -> bool:
        return self.env == "cartpole"

    def finalize(self) -> "ExperimentConfig":
        """Fill derived fields, apply mode presets, validate."""
        updates: dict = {}

        if self.mode == "impala_is":
            # single-pass importance sampling: no replay, no pessimistic
            # clipping, reference snapshot refreshed every learner step
            updates["replay_count"] = 1
            updates.setdefault("ratio_variant", self.ratio_variant or "r2")
            updates["eps_clip"] = False if self.eps_clip is None else self.eps_clip
            updates["t_target"] = 1 if self.t_target is None else self.t_target
        elif self.mode == "appo":
            updates.setdefault("ratio_variant", self.ratio_variant or "r2")
            updates["eps_clip"] = True if self.eps_clip is None else self.eps_clip
            updates["t_target"] = 1 if self.t_target is None else self.t_target
        elif self.mode == "ppo_sync":
            updates.setdefault("ratio_variant", self.ratio_variant or "r3")
            updates["eps_clip"] = True if self.eps_clip is None else self.eps_clip
            updates["buffer_selection"] = "least_traversed"
            updates["deterministic"] = True
        elif self.mode == "impact":
            updates.setdefault("ratio_variant", self.ratio_variant or "r3")
            updates["eps_clip"] = True if self.eps_clip is None else self.eps_clip
        else:
            raise ConfigError(f"unknown mode {self.mode!r}; known: {', '.join(MODES)}")

        cfg = dataclasses.replace(self, **updates)

        n_times_k = cfg.buffer_slots * cfg.replay_count
        if cfg.t_target is None:
            cfg = dataclasses.replace(cfg, t_target=n_times_k)
        if cfg.mode == "ppo_sync" and cfg.t_target != n_times_k:
            raise ConfigError("ppo_sync requires t_target == buffer_slots * replay_count")
        if cfg.shared_value is None:
            cfg = dataclasses.replace(cfg, shared_value=False)

        cfg.validate()
        return cfg

    def validate(self) -> None:
        if self.env not in ENV_IDS:
            raise ConfigError(f"unknown env id {self.env!r}; known: {', '.join(ENV_IDS)}")
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.sample_batch_size < 1 or self.train_batch_size < 1:
            raise ConfigError("batch sizes must be positive")
        if self.train_batch_size % self.sample_batch_size != 0:
            raise ConfigError(
                f"train_batch_size {self.train_batch_size} must be a multiple of "
                f"sample_batch_size {self.sample_batch_size}"
            )
        if self.buffer_slots < 1 or self.replay_count < 1:
            raise ConfigError("buffer_slots and replay_count must be >= 1")
        if self.t_target is not None and self.t_target < 1:
            raise ConfigError("t_target must be >= 1")
        if self.t_frequency < 1:
            raise ConfigError("t_frequency must be >= 1")
        if self.rho < 1.0:
            raise ConfigError("rho must be >= 1 (the target-worker clip bound)")
        if not (0.0 < self.clip_eps < 1.0):
            raise ConfigError("clip_eps must lie in (0, 1)")
        if not (0.0 <= self.gamma <= 1.0 and 0.0 <= self.lam <= 1.0):
            raise ConfigError("gamma and lam must lie in [0, 1]")
        if self.c_bar < 1.0 or self.rho_bar < 1.0:
            raise ConfigError("c_bar and rho_bar must be >= 1")
        if self.ratio_variant is not None and self.ratio_variant not in ("r1", "r2", "r3"):
            raise ConfigError(f"unknown ratio variant {self.ratio_variant!r}")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if self.lr_decay not in ("none", "linear"):
            raise ConfigError(f"unknown lr_decay {self.lr_decay!r}")
        if self.init_scheme not in ("orthogonal", "scaled_uniform"):
            raise ConfigError(f"unknown init scheme {self.init_scheme!r}")
        if self.value_source not in ("target", "learner"):
            raise ConfigError(f"value_source must be 'target' or 'learner'")
        if self.kl_direction not in ("target_learner", "learner_target"):
            raise ConfigError(f"unknown kl_direction {self.kl_direction!r}")
        if self.buffer_selection not in ("uniform", "least_traversed"):
            raise ConfigError(f"unknown buffer_selection {self.buffer_selection!r}")
        if not self.seeds:
            raise ConfigError("at least one seed required")
        if self.eval_every < 0 or self.eval_episodes < 0:
            raise ConfigError("eval settings must be nonnegative")
        if self.total_timesteps < 0:
            raise ConfigError("total_timesteps must be nonnegative")


# Hyperparameter profiles for the two task families. Batch sizes in the
# continuous profile are full-scale; parse_config divides them by the
# profile's desk_divisor. Pass desk_divisor=1 (--paper-scale) for the
# full-scale sizes.

DISCRETE_PROFILE = dict(
    env="cartpole",
    clip_eps=0.3,
    entropy_coeff=0.01,
    grad_clip=10.0,
    gamma=0.99,
    lam=0.995,
    # full-scale runs used 1e-4; at desk scale (~1k learner steps) the
    # policy needs the top of the searched range to move at all
    lr=3e-4,
    buffer_slots=4,
    replay_count=2,
    sample_batch_size=50,
    train_batch_size=500,
    kl_coeff=0.0,
    kl_target=0.01,
    value_coeff=1.0,
    rho=2.0,
    shared_value=False,
    desk_divisor=1,
    total_timesteps=300_000,
)

CONTINUOUS_PROFILE = dict(
    env="pointmass1d",
    clip_eps=0.4,
    entropy_coeff=0.0,
    grad_clip=0.5,
    # full-scale runs used 0.995; the shorter desk-scale horizon favors the
    # lower-variance setting (also the published synchronous baseline value)
    gamma=0.99,
    lam=0.995,
    lr=3e-4,
    # small desk-scale batches leave a noise floor in the standardized
    # advantages; annealing stops the converged policy from wandering on it
    lr_decay="linear",
    buffer_slots=16,
    replay_count=20,
    sample_batch_size=1024,
    train_batch_size=32768,
    kl_coeff=1.0,
    kl_target=0.04,
    value_coeff=1.0,
    rho=2.0,
    log_std_init=-0.5,
    desk_divisor=16,
    total_timesteps=500_000,
)

PROFILES = {"discrete": DISCRETE_PROFILE, "continuous": CONTINUOUS_PROFILE}

_FIELDS = {f.name: f for f in dataclasses.fields(ExperimentConfig)}


def profile_for_env(env: str) -> str:
    return "discrete" if env == "cartpole" else "continuous"


def _parse_value(name: str, raw):
    if name not in _FIELDS:
        raise ConfigError(f"unknown config key {name!r}")
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    ftype = _FIELDS[name].type
    if text.lower() in ("none", "null"):
        if "None" not in ftype:
            raise ConfigError(f"{name} may not be none")
        return None
    if ftype.startswith("tuple[int"):
        try:
            return tuple(int(x) for x in text.split(",") if x.strip() != "")
        except ValueError as e:
            raise ConfigError(f"bad int list for {name}: {text!r}") from e
    if ftype.startswith("bool"):
        if text.lower() in ("true", "1", "yes", "on"):
            return True
        if text.lower() in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"bad boolean for {name}: {text!r}")
    if ftype.startswith("int"):
        try:
            return int(text)
        except ValueError as e:
            raise ConfigError(f"bad integer for {name}: {text!r}") from e
    if ftype.startswith("float"):
        try:
            return float(text)
        except ValueError as e:
            raise ConfigError(f"bad float for {name}: {text!r}") from e
    return text


def _format_value(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def read_config_file(path) -> dict:
    """Flat ``key = value`` lines; '#' starts a comment; 'profile' is a
    reserved key selecting the base profile."""
    out: dict = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{lineno}: expected key = value, got {line!r}")
        key, _, val = stripped.partition("=")
        out[key.strip()] = val.strip()
    return out


def parse_config(
    path=None,
    overrides: dict | None = None,
    profile: str | None = None,
) -> ExperimentConfig:
    """Layered resolution: profile -> file -> overrides -> finalize."""
    file_items = read_config_file(path) if path else {}
    overrides = dict(overrides or {})

    profile_name = profile or file_items.pop("profile", None)
    if "profile" in overrides:
        profile_name = overrides.pop("profile")
    env_hint = overrides.get("env", file_items.get("env"))
    if profile_name is None:
        profile_name = profile_for_env(env_hint) if env_hint else "discrete"
    if profile_name not in PROFILES:
        raise ConfigError(f"unknown profile {profile_name!r}; known: discrete, continuous")

    profile_vals = dict(PROFILES[profile_name])
    divisor = profile_vals.get("desk_divisor", 1)
    for source in (file_items, overrides):
        if "desk_divisor" in source:
            divisor = _parse_value("desk_divisor", source["desk_divisor"])
    if divisor < 1:
        raise ConfigError("desk_divisor must be >= 1")
    # the desk-scale divisor shrinks the profile's batch sizes only;
    # explicitly given sizes are taken literally
    profile_vals["sample_batch_size"] = max(1, profile_vals["sample_batch_size"] // divisor)
    profile_vals["train_batch_size"] = max(1, profile_vals["train_batch_size"] // divisor)
    profile_vals["desk_divisor"] = 1

    merged: dict = profile_vals
    for source in (file_items, overrides):
        for key, raw in source.items():
            merged[key] = _parse_value(key, raw)
    merged["desk_divisor"] = 1

    try:
        cfg = ExperimentConfig(**merged)
    except TypeError as e:
        raise ConfigError(str(e)) from e
    return cfg.finalize()


def serialize_config(cfg: ExperimentConfig) -> str:
    lines = [f"{f.name} = {_format_value(getattr(cfg, f.name))}" for f in dataclasses.fields(ExperimentConfig)]
    return "\n".join(lines) + "\n"


def config_with(cfg: ExperimentConfig, **updates) -> ExperimentConfig:
    return dataclasses.replace(cfg, **updates).finalize()
