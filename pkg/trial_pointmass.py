"""Scratch trial driver for the pointmass acceptance target (not shipped)."""

import sys
import time

import numpy as np

from impactrl.config import parse_config
from impactrl.envs import PointMass1D, make_env
from impactrl.runtime import EVAL_WORKER_ID, env_episode_seed, run_experiment


def dare_gains():
    A, B = PointMass1D.dynamics_matrices()
    Q = np.diag([1.0, 0.0])
    R = np.array([[0.01]])
    P = Q.copy()
    for _ in range(10_000):
        K = np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)
        P_new = Q + A.T @ P @ (A - B @ K)
        if np.abs(P_new - P).max() < 1e-12:
            break
        P = P_new
    return K[0]


def controller_return(seed, episodes=20):
    k = dare_gains()
    env = make_env("pointmass1d", 200)
    totals = []
    for e in range(episodes):
        obs = env.reset(env_episode_seed(seed, EVAL_WORKER_ID, e))
        total, done = 0.0, False
        while not done:
            r = env.step(np.array([float(np.clip(-k @ obs, -1, 1))]))
            total += r.reward
            done = r.done
            obs = r.obs
    # noqa: E501 returns appended below
        totals.append(total)
    return float(np.mean(totals))


def stream_evals():
    import impactrl.runtime as rt

    orig = rt._Run._maybe_eval

    def wrapped(self):
        before = len(self.eval_history)
        orig(self)
        for steps, ret in self.eval_history[before:]:
            print(f"  eval {steps}: {ret:.2f}", flush=True)

    rt._Run._maybe_eval = wrapped


if __name__ == "__main__":
    stream_evals()
    seed = int(sys.argv[1])
    deterministic = sys.argv[2] if len(sys.argv) > 2 else "true"
    extra = dict(arg.split("=", 1) for arg in sys.argv[3:])
    rstar = controller_return(seed)
    threshold = rstar - 0.1 * abs(rstar)
    cfg = parse_config(
        None,
        {
            "env": "pointmass1d",
            "eval_every": "25000",
            "eval_episodes": "20",
            "log_std_init": "-0.5",
            "deterministic": deterministic,
            "stop_return": str(threshold),
            **extra,
        },
    )
    t0 = time.time()
    res = run_experiment(cfg, seed=seed)
    first = next((s for s, r in res.eval_history if r >= threshold), None)
    hist = " ".join(f"{s//1000}k:{r:.1f}" for s, r in res.eval_history)
    print(
        f"seed{seed} det={deterministic} {extra}: {time.time()-t0:.0f}s "
        f"R*={rstar:.2f} thr={threshold:.2f} first_pass={first} | {hist}",
        flush=True,
    )
