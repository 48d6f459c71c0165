"""Desk-scale environments with a uniform stepping interface.

Both environments are fully deterministic given (seed, action sequence):
all randomness enters through ``reset(seed)``. Each worker owns a private
instance; nothing here is shared across threads.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_MAX_EPISODE_STEPS = 200


@dataclass(frozen=True)
class EnvSpec:
    obs_dim: int
    action_kind: str  # "discrete" | "continuous"
    num_actions: int = 0  # discrete only
    action_dim: int = 0  # continuous only
    action_low: float = 0.0
    action_high: float = 0.0
    max_episode_steps: int = DEFAULT_MAX_EPISODE_STEPS

    def __post_init__(self):
        if self.obs_dim < 1:
            raise ValueError("obs_dim must be >= 1")
        if self.action_kind == "discrete" and self.num_actions < 2:
            raise ValueError("discrete action space needs >= 2 actions")
        if self.action_kind == "continuous" and not self.action_low < self.action_high:
            raise ValueError("continuous bounds must satisfy low < high")


@dataclass(frozen=True)
class StepResult:
    obs: np.ndarray
    reward: float
    done: bool
    episode_steps: int


class EpisodeDone(RuntimeError):
    """step() called on a finished episode without an intervening reset."""


class CartPole:
    """Classic cart-pole balancing, Euler-integrated at dt = 0.02.

    Observation (x, x_dot, theta, theta_dot); two actions pushing the cart
    left or right with fixed force. Reward +1 per step. Episode ends when
    |x| > 2.4 or |theta| > 12 degrees, or at the step cap.
    """

    GRAVITY = 9.8
    CART_MASS = 1.0
    POLE_MASS = 0.1
    POLE_HALF_LENGTH = 0.5
    FORCE_MAG = 10.0
    DT = 0.02
    X_LIMIT = 2.4
    THETA_LIMIT = 12.0 * np.pi / 180.0

    def __init__(self, max_episode_steps: int = DEFAULT_MAX_EPISODE_STEPS):
        self._spec = EnvSpec(
            obs_dim=4,
            action_kind="discrete",
            num_actions=2,
            max_episode_steps=max_episode_steps,
        )
        self._state: np.ndarray | None = None
        self._steps = 0
        self._done = True

    def spec(self) -> EnvSpec:
        return self._spec

    def reset(self, seed: int) -> np.ndarray:
        rng = np.random.default_rng(seed)
        self._state = rng.uniform(-0.05, 0.05, size=4)
        self._steps = 0
        self._done = False
        return self._state.copy()

    def step(self, action) -> StepResult:
        if self._done or self._state is None:
            raise EpisodeDone("episode finished; call reset() first")
        action = int(action)
        if action not in (0, 1):
            raise ValueError(f"invalid discrete action {action}")

        x, x_dot, theta, theta_dot = self._state
        force = self.FORCE_MAG if action == 1 else -self.FORCE_MAG
        total_mass = self.CART_MASS + self.POLE_MASS
        pole_ml = self.POLE_MASS * self.POLE_HALF_LENGTH

        cos_t, sin_t = np.cos(theta), np.sin(theta)
        temp = (force + pole_ml * theta_dot**2 * sin_t) / total_mass
        theta_acc = (self.GRAVITY * sin_t - cos_t * temp) / (
            self.POLE_HALF_LENGTH * (4.0 / 3.0 - self.POLE_MASS * cos_t**2 / total_mass)
        )
        x_acc = temp - pole_ml * theta_acc * cos_t / total_mass

        x = x + self.DT * x_dot
        x_dot = x_dot + self.DT * x_acc
        theta = theta + self.DT * theta_dot
        theta_dot = theta_dot + self.DT * theta_acc
        self._state = np.array([x, x_dot, theta, theta_dot])

        self._steps += 1
        failed = abs(x) > self.X_LIMIT or abs(theta) > self.THETA_LIMIT
        self._done = failed or self._steps >= self._spec.max_episode_steps
        return StepResult(
            obs=self._state.copy(), reward=1.0, done=self._done, episode_steps=self._steps
        )


class PointMass1D:
    """Damped point mass on a line with quadratic cost.

    Observation (position, velocity); one continuous action in [-1, 1]
    (the applied acceleration, clipped to bounds before the dynamics).
    Reward -(position - goal)^2 - 0.01 * action^2 with the goal at the
    origin; the action cost is charged on the commanded (pre-clip) action
    so policies keep a gradient back into the actuation range. Episodes
    run to the step cap; there is no failure state.

    Linear dynamics x' = A x + B a with the constants below, then position
    and velocity are held inside their limits. The damping keeps the
    system open-loop stable, so there is no absorbing corner an unlucky
    policy can wedge itself into.
    """

    DT = 0.05
    DAMPING = 0.95
    GOAL = 0.0
    POSITION_LIMIT = 2.0
    VELOCITY_LIMIT = 1.0

    def __init__(self, max_episode_steps: int = DEFAULT_MAX_EPISODE_STEPS):
        self._spec = EnvSpec(
            obs_dim=2,
            action_kind="continuous",
            action_dim=1,
            action_low=-1.0,
            action_high=1.0,
            max_episode_steps=max_episode_steps,
        )
        self._state: np.ndarray | None = None
        self._steps = 0
        self._done = True

    def spec(self) -> EnvSpec:
        return self._spec

    @classmethod
    def dynamics_matrices(cls) -> tuple[np.ndarray, np.ndarray]:
        """(A, B) of the unclipped linear dynamics, for control oracles."""
        a = np.array([[1.0, cls.DT], [0.0, cls.DAMPING]])
        b = np.array([[0.0], [cls.DT]])
        return a, b

    def reset(self, seed: int) -> np.ndarray:
        rng = np.random.default_rng(seed)
        self._state = np.array([rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)])
        self._steps = 0
        self._done = False
        return self._state.copy()

    def step(self, action) -> StepResult:
        if self._done or self._state is None:
            raise EpisodeDone("episode finished; call reset() first")
        a = np.asarray(action, dtype=np.float64).reshape(-1)
        if a.shape != (1,):
            raise ValueError(f"invalid continuous action shape {np.shape(action)}")
        commanded = float(a[0])
        a = float(np.clip(commanded, self._spec.action_low, self._spec.action_high))

        pos, vel = self._state
        pos = float(np.clip(pos + self.DT * vel, -self.POSITION_LIMIT, self.POSITION_LIMIT))
        vel = float(np.clip(self.DAMPING * vel + self.DT * a, -self.VELOCITY_LIMIT, self.VELOCITY_LIMIT))
        self._state = np.array([pos, vel])

        self._steps += 1
        reward = -((pos - self.GOAL) ** 2) - 0.01 * commanded**2
        self._done = self._steps >= self._spec.max_episode_steps
        return StepResult(
            obs=self._state.copy(), reward=reward, done=self._done, episode_steps=self._steps
        )


ENV_IDS = ("cartpole", "pointmass1d")


def make_env(env_id: str, max_episode_steps: int = DEFAULT_MAX_EPISODE_STEPS):
    if env_id == "cartpole":
        return CartPole(max_episode_steps)
    if env_id == "pointmass1d":
        return PointMass1D(max_episode_steps)
    raise ValueError(f"unknown env id {env_id!r}; known: {', '.join(ENV_IDS)}")
