"""Actor-learner orchestration.

One learner, W rollout workers. Workers collect fixed-size fragments with
their own policy copy, a collector glues fragments into learner-sized
train batches, and the circular buffer hands each batch to the learner at
most K times. The learner attaches target-network outputs and advantages
at a batch's first consumption, steps the master network, periodically
syncs the target and publishes weights for the workers to pull.

Execution schedulers:

* threaded: W worker threads plus the learner on the calling thread;
  the only shared state is the buffer, the collector and the versioned
  weight cell.
* deterministic: the same produce/consume logic on one thread under a
  fixed round-robin schedule; bit-identical metrics for a fixed config
  and seed (wall_clock becomes a virtual per-step clock).
* ppo_sync: strict alternation of a full buffer fill and a full N*K
  drain, which together with t_target == N*K reproduces synchronous
  minibatch training exactly.

Seeding contract (all derived from the run seed, documented so external
harnesses can reproduce trajectories):

* parameter init: ``seed``
* worker w, episode e: env reset seed ``(seed * 1_000_003 + 7 * (w + 1)) + e * 65_537``
* worker w action sampling: ``default_rng((seed, 1, w))``
* buffer slot selection: ``default_rng((seed, 2))``
* evaluation episode e: env reset seed via worker id 9_999
"""

from __future__ import annotations

import csv
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import dists, nnet
from .cbuffer import BufferClosed, CircularBuffer, SlotHandle, TrainBatch, WouldBlock
from .config import ExperimentConfig
from .envs import make_env
from .gae import TrajectorySlice, vgae_advantages, vtrace_targets
from .nnet import NetLayout, OptState, ParamSet
from .objective import LossInputs, LossReport, adaptive_kl_update, surrogate_loss

CSV_HEADER = (
    "wall_clock_s,env_steps,learner_steps,mean_return,mean_kl,mean_ratio,"
    "clip_fraction,buffer_occupancy,version_lag"
)

EVAL_WORKER_ID = 9_999


def env_episode_seed(seed: int, worker_id: int, episode: int) -> int:
    return (seed * 1_000_003 + 7 * (worker_id + 1) + episode * 65_537) % (2**63)


def layout_for(cfg: ExperimentConfig) -> NetLayout:
    spec = make_env(cfg.env, cfg.max_episode_steps).spec()
    if spec.action_kind == "discrete":
        head, adim = "categorical", spec.num_actions
    else:
        head, adim = "gaussian", spec.action_dim
    return NetLayout(
        obs_dim=spec.obs_dim,
        hidden=cfg.hidden,
        head_kind=head,
        action_dim=adim,
        shared_value=bool(cfg.shared_value),
        log_std_init=cfg.log_std_init,
    )


@dataclass(frozen=True)
class MetricsRow:
    wall_clock_s: float
    env_steps: int
    learner_steps: int
    mean_return: float
    mean_kl: float
    mean_ratio: float
    clip_fraction: float
    buffer_occupancy: float
    version_lag: int

    def as_list(self) -> list:
        return [
            f"{self.wall_clock_s:.6f}",
            self.env_steps,
            self.learner_steps,
            f"{self.mean_return:.6f}",
            f"{self.mean_kl:.8f}",
            f"{self.mean_ratio:.8f}",
            f"{self.clip_fraction:.6f}",
            f"{self.buffer_occupancy:.4f}",
            self.version_lag,
        ]


class WeightPublisher:
    """Versioned snapshot cell; workers pull latest-wins."""

    def __init__(self, params: ParamSet):
        self._lock = threading.Lock()
        self._latest = params

    def publish(self, params: ParamSet) -> None:
        with self._lock:
            self._latest = params

    def latest(self) -> ParamSet:
        with self._lock:
            return self._latest


class ObsNormalizer:
    """Thread-safe running mean-std filter over raw observations (Welford).

    Workers freeze a snapshot per fragment, normalize with it, and feed the
    raw rows back for the update, so stored batches are self-consistent.
    Disabled instances normalize to the identity.
    """

    def __init__(self, dim: int, enabled: bool):
        self.enabled = enabled
        self._lock = threading.Lock()
        self._count = 0.0
        self._mean = np.zeros(dim)
        self._m2 = np.zeros(dim)

    def update(self, rows: np.ndarray) -> None:
        if not self.enabled:
            return
        with self._lock:
            for row in rows:
                self._count += 1.0
                delta = row - self._mean
                self._mean = self._mean + delta / self._count
                self._m2 = self._m2 + delta * (row - self._mean)

    def snapshot(self) -> tuple[np.ndarray, np.ndarray] | None:
        if not self.enabled:
            return None
        with self._lock:
            if self._count < 2:
                return None
            var = self._m2 / self._count
            return self._mean.copy(), np.sqrt(np.maximum(var, 1e-8))

    @staticmethod
    def apply(stats: tuple[np.ndarray, np.ndarray] | None, obs: np.ndarray) -> np.ndarray:
        if stats is None:
            return obs
        mean, std = stats
        return (obs - mean) / std


def sync_target(master: ParamSet) -> ParamSet:
    """Target snapshot. ParamSet arrays are immutable, so sharing is a
    safe deep-copy equivalent."""
    return master


@dataclass
class SampleBatch:
    """One worker fragment of S consecutive steps.

    ``dones`` marks true environment terminations only. A step-cap cutoff
    is recorded in ``truncations`` together with the pre-reset observation
    in ``trunc_obs``, so the advantage recursion can bootstrap through the
    artificial time limit instead of aliasing the value function.
    """

    obs: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    dones: np.ndarray
    truncations: np.ndarray
    trunc_obs: np.ndarray
    logp: np.ndarray
    values: np.ndarray
    bootstrap_obs: np.ndarray
    worker_id: int
    policy_version: int
    episode_returns: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.rewards)


class RolloutWorker:
    """Owns a private env and a policy copy; episodes persist across
    fragments so bootstrap values stay meaningful."""

    def __init__(
        self,
        cfg: ExperimentConfig,
        worker_id: int,
        params: ParamSet,
        seed: int,
        normalizer: ObsNormalizer | None = None,
    ):
        self.cfg = cfg
        self.worker_id = worker_id
        self.params = params
        self.seed = seed
        self.env = make_env(cfg.env, cfg.max_episode_steps)
        self.action_rng = np.random.default_rng((seed, 1, worker_id))
        self.normalizer = normalizer or ObsNormalizer(self.env.spec().obs_dim, enabled=False)
        self.episode_idx = 0
        self.obs = self.env.reset(env_episode_seed(seed, worker_id, 0))
        self.episode_return = 0.0

    def collect(self) -> SampleBatch:
        cfg = self.cfg
        s = cfg.sample_batch_size
        spec = self.env.spec()
        obs_rows = np.empty((s, spec.obs_dim))
        discrete = spec.action_kind == "discrete"
        actions = np.empty(s, dtype=np.int64) if discrete else np.empty((s, spec.action_dim))
        rewards = np.empty(s)
        dones = np.zeros(s, dtype=bool)
        truncations = np.zeros(s, dtype=bool)
        trunc_obs = np.zeros((s, spec.obs_dim))
        logps = np.empty(s)
        values = np.empty(s)
        raw_rows = np.empty_like(obs_rows)
        finished: list[float] = []
        stats = self.normalizer.snapshot()  # frozen for the whole fragment

        for t in range(s):
            raw_rows[t] = self.obs
            norm_obs = ObsNormalizer.apply(stats, self.obs)
            obs_rows[t] = norm_obs
            dist = nnet.forward_policy(self.params, norm_obs[None, :])
            action = dists.sample(dist, self.action_rng)
            logps[t] = dists.log_prob(dist, action)[0]
            values[t] = nnet.forward_value(self.params, norm_obs[None, :])[0]
            act = int(action[0]) if discrete else action[0]
            result = self.env.step(act)
            actions[t] = act
            rewards[t] = result.reward
            self.episode_return += result.reward
            if result.done:
                # a cutoff at the step cap is a truncation, not a failure:
                # keep the pre-reset obs so the value bootstrap survives it
                if result.episode_steps >= spec.max_episode_steps:
                    truncations[t] = True
                    trunc_obs[t] = ObsNormalizer.apply(stats, result.obs)
                else:
                    dones[t] = True
                finished.append(self.episode_return)
                self.episode_return = 0.0
                self.episode_idx += 1
                self.obs = self.env.reset(
                    env_episode_seed(self.seed, self.worker_id, self.episode_idx)
                )
            else:
                self.obs = result.obs

        self.normalizer.update(raw_rows)
        return SampleBatch(
            obs=obs_rows,
            actions=actions,
            rewards=rewards,
            dones=dones,
            truncations=truncations,
            trunc_obs=trunc_obs,
            logp=logps,
            values=values,
            bootstrap_obs=ObsNormalizer.apply(stats, self.obs.copy()),
            worker_id=self.worker_id,
            policy_version=self.params.version,
            episode_returns=finished,
        )

    def maybe_pull(self, publisher: WeightPublisher) -> None:
        latest = publisher.latest()
        if latest.version > self.params.version:
            self.params = latest


class Collector:
    """Glues M/S fragments into train batches; tracks produced env steps
    and a sliding window of finished-episode returns."""

    def __init__(self, cfg: ExperimentConfig):
        self.fragments_per_batch = cfg.train_batch_size // cfg.sample_batch_size
        self._lock = threading.Lock()
        self._pending: list[SampleBatch] = []
        self._next_batch_id = 0
        self.env_steps = 0
        self.episode_returns: deque = deque(maxlen=cfg.metrics_window)

    def submit(self, sb: SampleBatch) -> TrainBatch | None:
        with self._lock:
            self.env_steps += len(sb)
            self.episode_returns.extend(sb.episode_returns)
            self._pending.append(sb)
            if len(self._pending) < self.fragments_per_batch:
                return None
            frags, self._pending = self._pending, []
            batch_id = self._next_batch_id
            self._next_batch_id += 1
        starts = np.cumsum([0] + [len(f) for f in frags[:-1]])
        return TrainBatch(
            obs=np.concatenate([f.obs for f in frags]),
            actions=np.concatenate([f.actions for f in frags]),
            rewards=np.concatenate([f.rewards for f in frags]),
            dones=np.concatenate([f.dones for f in frags]),
            truncations=np.concatenate([f.truncations for f in frags]),
            trunc_obs=np.concatenate([f.trunc_obs for f in frags]),
            logp_worker=np.concatenate([f.logp for f in frags]),
            values_worker=np.concatenate([f.values for f in frags]),
            fragment_starts=starts.astype(np.int64),
            bootstrap_obs=np.stack([f.bootstrap_obs for f in frags]),
            worker_ids=np.array([f.worker_id for f in frags], dtype=np.int64),
            policy_versions=np.array([f.policy_version for f in frags], dtype=np.int64),
            batch_id=batch_id,
        )

    def mean_return(self) -> float:
        with self._lock:
            if not self.episode_returns:
                return float("nan")
            return float(np.mean(self.episode_returns))


@dataclass
class TargetOutputs:
    """Frozen first-consumption evaluation of a batch: target distribution,
    log-probs, values, and the advantages/value targets derived from them.
    Reused verbatim on every later traversal."""

    dist: dists.DistParams
    logp: np.ndarray
    values: np.ndarray
    advantages: np.ndarray
    value_targets: np.ndarray
    target_version: int


class Learner:
    def __init__(self, cfg: ExperimentConfig, params: ParamSet, seed: int):
        self.cfg = cfg
        self.master = params
        self.target = sync_target(params)
        self.target_version = params.version
        self.opt_state = OptState.zeros(params)
        self.eta = cfg.kl_coeff
        self.steps = 0
        self.seed = seed

    def _advantage_inputs(self, batch: TrainBatch) -> TargetOutputs:
        cfg = self.cfg
        target_dist = nnet.forward_policy(self.target, batch.obs)
        logp_target = dists.log_prob(target_dist, batch.actions)
        value_net = self.target if cfg.value_source == "target" else self.master
        values = nnet.forward_value(value_net, batch.obs)
        boot_values = nnet.forward_value(value_net, batch.bootstrap_obs)
        trunc_rows = np.flatnonzero(batch.truncations)
        trunc_values = np.zeros(len(batch))
        if len(trunc_rows):
            trunc_values[trunc_rows] = nnet.forward_value(value_net, batch.trunc_obs[trunc_rows])

        advantages = np.empty(len(batch))
        value_targets = np.empty(len(batch))
        bounds = list(batch.fragment_starts) + [len(batch)]
        for f in range(len(batch.fragment_starts)):
            lo, hi = bounds[f], bounds[f + 1]
            # split the fragment at episode boundaries; a terminated segment
            # keeps its done flag (no bootstrap), a truncated one bootstraps
            # from the pre-reset obs, an unfinished one from the fragment
            # boundary obs
            seg_lo = lo
            for i in range(lo, hi):
                if not (batch.dones[i] or batch.truncations[i] or i == hi - 1):
                    continue
                seg_hi = i + 1
                if batch.truncations[i]:
                    boot = float(trunc_values[i])
                elif batch.dones[i]:
                    boot = 0.0
                else:
                    boot = float(boot_values[f])
                sl = TrajectorySlice(
                    rewards=batch.rewards[seg_lo:seg_hi],
                    dones=batch.dones[seg_lo:seg_hi],
                    values=values[seg_lo:seg_hi],
                    bootstrap_value=boot,
                    logp_ref=logp_target[seg_lo:seg_hi],
                    logp_behavior=batch.logp_worker[seg_lo:seg_hi],
                    gamma=cfg.gamma,
                    lam=cfg.lam,
                    c_bar=cfg.c_bar,
                    rho_bar=cfg.rho_bar,
                )
                adv = vgae_advantages(sl)
                advantages[seg_lo:seg_hi] = adv.advantages
                if cfg.mode == "impala_is":
                    value_targets[seg_lo:seg_hi] = vtrace_targets(sl)
                else:
                    value_targets[seg_lo:seg_hi] = adv.value_targets
                seg_lo = seg_hi

        return TargetOutputs(
            dist=target_dist,
            logp=logp_target,
            values=values,
            advantages=advantages,
            value_targets=value_targets,
            target_version=self.target_version,
        )

    def lr_factor(self, env_steps: int) -> float:
        if self.cfg.lr_decay == "linear" and self.cfg.total_timesteps > 0:
            return max(0.05, 1.0 - env_steps / self.cfg.total_timesteps)
        return 1.0

    def consume(
        self,
        buffer: CircularBuffer,
        handle: SlotHandle,
        publisher: WeightPublisher,
        env_steps: int = 0,
    ) -> tuple[LossReport, TargetOutputs]:
        cfg = self.cfg
        batch = handle.batch
        if handle.traversals_before == 0:
            tout = self._advantage_inputs(batch)
            buffer.attach(handle, tout)
        else:
            tout = handle.target_outputs

        learner_dist = nnet.forward_policy(self.master, batch.obs)
        values = nnet.forward_value(self.master, batch.obs)
        inputs = LossInputs(
            learner_dist=learner_dist,
            target_dist=tout.dist,
            actions=batch.actions,
            logp_target=tout.logp,
            logp_worker=batch.logp_worker,
            advantages=tout.advantages,
            values=values,
            value_targets=tout.value_targets,
            clip_eps=cfg.clip_eps,
            rho=cfg.rho,
            kl_coeff=self.eta,
            entropy_coeff=cfg.entropy_coeff,
            value_coeff=cfg.value_coeff,
            variant=cfg.ratio_variant,
            eps_clip=bool(cfg.eps_clip),
            standardize_advantages=cfg.standardize_advantages,
            kl_direction=cfg.kl_direction,
        )
        report, d_dist, d_values = surrogate_loss(inputs)
        grads = nnet.backward(self.master, batch.obs, d_dist, d_values)
        factor = self.lr_factor(env_steps)
        self.master, self.opt_state = nnet.apply_update(
            self.master,
            grads,
            self.opt_state,
            cfg.lr * factor,
            optimizer=cfg.optimizer,
            grad_clip=cfg.grad_clip,
            value_lr=None if cfg.value_lr is None else cfg.value_lr * factor,
        )
        self.steps += 1
        self.eta = adaptive_kl_update(self.eta, report.mean_kl, cfg.kl_target)
        if self.steps % cfg.t_target == 0:
            self.target = sync_target(self.master)
            self.target_version = self.master.version
        if self.steps % cfg.t_frequency == 0:
            publisher.publish(self.master)
        return report, tout


def evaluate_policy(
    params: ParamSet,
    cfg: ExperimentConfig,
    seed: int,
    episodes: int,
    obs_stats: tuple[np.ndarray, np.ndarray] | None = None,
) -> np.ndarray:
    """Deterministic-policy rollouts (mode action); one return per episode."""
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    env = make_env(cfg.env, cfg.max_episode_steps)
    discrete = env.spec().action_kind == "discrete"
    returns = np.empty(episodes)
    for e in range(episodes):
        obs = env.reset(env_episode_seed(seed, EVAL_WORKER_ID, e))
        total, done = 0.0, False
        while not done:
            dist = nnet.forward_policy(params, ObsNormalizer.apply(obs_stats, obs)[None, :])
            action = dists.mode(dist)
            act = int(action[0]) if discrete else action[0]
            result = env.step(act)
            total += result.reward
            done = result.done
            obs = result.obs
        returns[e] = total
    return returns


@dataclass
class RunResult:
    final_params: ParamSet
    rows: list[MetricsRow]
    metrics_path: Path | None
    checkpoint_path: Path | None
    env_steps: int
    learner_steps: int
    eval_history: list[tuple[int, float]]
    consumed_batches: list[tuple[int, int, int]]  # (batch_id, k, target_version)


class _Run:
    """Shared state and per-step bookkeeping for one experiment run."""

    def __init__(self, cfg: ExperimentConfig, seed: int, out_dir: Path | None):
        self.cfg = cfg
        self.seed = seed
        layout = layout_for(cfg)
        params = nnet.init_params(layout, seed, scheme=cfg.init_scheme)
        self.learner = Learner(cfg, params, seed)
        self.publisher = WeightPublisher(params)
        self.collector = Collector(cfg)
        self.buffer = CircularBuffer(
            cfg.buffer_slots,
            cfg.replay_count,
            selection=cfg.buffer_selection,
            rng=np.random.default_rng((seed, 2)),
            allow_stale_evict=cfg.allow_stale_evict,
        )
        self.normalizer = ObsNormalizer(layout.obs_dim, enabled=cfg.obs_norm)
        self.workers = [
            RolloutWorker(cfg, w, params, seed, normalizer=self.normalizer)
            for w in range(cfg.workers)
        ]
        self.rows: list[MetricsRow] = []
        self.eval_history: list[tuple[int, float]] = []
        self.consumed: list[tuple[int, int, int]] = []
        self.stop = threading.Event()
        self.start_time = time.perf_counter()
        self.next_eval_at = cfg.eval_every if cfg.eval_every > 0 else None
        self.out_dir = out_dir
        self._csv_file = None
        self._csv_writer = None
        if out_dir is not None:
            out_dir.mkdir(parents=True, exist_ok=True)
            self._csv_file = open(out_dir / "metrics.csv", "w", newline="")
            self._csv_file.write(CSV_HEADER + "\n")
            self._csv_writer = csv.writer(self._csv_file)

    def clock(self) -> float:
        if self.cfg.deterministic:
            return float(self.learner.steps)  # virtual clock: one tick per step
        return time.perf_counter() - self.start_time

    def learner_step(self, handle: SlotHandle, on_learner_step=None) -> None:
        report, tout = self.learner.consume(
            self.buffer, handle, self.publisher, env_steps=self.collector.env_steps
        )
        batch = handle.batch
        self.consumed.append((batch.batch_id, handle.traversals_before, tout.target_version))
        lag = self.learner.master.version - 1 - int(batch.policy_versions.min())
        row = MetricsRow(
            wall_clock_s=self.clock(),
            env_steps=self.collector.env_steps,
            learner_steps=self.learner.steps,
            mean_return=self.collector.mean_return(),
            mean_kl=report.mean_kl,
            mean_ratio=report.mean_ratio,
            clip_fraction=report.clip_fraction,
            buffer_occupancy=self.buffer.occupancy(),
            version_lag=lag,
        )
        self.rows.append(row)
        if self._csv_writer is not None:
            self._csv_writer.writerow(row.as_list())
        if on_learner_step is not None:
            on_learner_step(self.learner)
        self._maybe_eval()

    def _maybe_eval(self) -> None:
        cfg = self.cfg
        if self.next_eval_at is None or self.collector.env_steps < self.next_eval_at:
            return
        while self.next_eval_at <= self.collector.env_steps:
            self.next_eval_at += cfg.eval_every
        mean_ret = float(
            evaluate_policy(
                self.learner.master,
                cfg,
                self.seed,
                cfg.eval_episodes,
                obs_stats=self.normalizer.snapshot(),
            ).mean()
        )
        self.eval_history.append((self.collector.env_steps, mean_ret))
        if cfg.stop_return is not None and mean_ret >= cfg.stop_return:
            self.stop.set()

    def produced_enough(self) -> bool:
        return self.collector.env_steps >= self.cfg.total_timesteps

    def finish(self, diverged: BaseException | None = None) -> RunResult:
        checkpoint_path = None
        if self._csv_file is not None:
            self._csv_file.flush()
            self._csv_file.close()
        if self.out_dir is not None:
            checkpoint_path = self.out_dir / "checkpoint.json"
            extra = {"env": self.cfg.env, "mode": self.cfg.mode, "seed": self.seed}
            stats = self.normalizer.snapshot()
            if stats is not None:
                extra["obs_mean"] = stats[0].tolist()
                extra["obs_std"] = stats[1].tolist()
            nnet.save_checkpoint(self.learner.master, checkpoint_path, extra=extra)
        if diverged is not None:
            raise diverged
        return RunResult(
            final_params=self.learner.master,
            rows=self.rows,
            metrics_path=None if self.out_dir is None else self.out_dir / "metrics.csv",
            checkpoint_path=checkpoint_path,
            env_steps=self.collector.env_steps,
            learner_steps=self.learner.steps,
            eval_history=self.eval_history,
            consumed_batches=self.consumed,
        )


def _run_threaded(run: _Run, on_learner_step) -> RunResult:
    cfg, buffer, collector = run.cfg, run.buffer, run.collector
    errors: list[Exception] = []

    def worker_main(worker: RolloutWorker) -> None:
        try:
            while not run.stop.is_set() and not run.produced_enough():
                sb = worker.collect()
                tb = collector.submit(sb)
                if tb is not None:
                    buffer.push(tb)
                worker.maybe_pull(run.publisher)
        except BufferClosed:
            pass
        except Exception as e:  # env or numerical failure aborts the run
            errors.append(e)
            run.stop.set()
            buffer.close()

    threads = [
        threading.Thread(target=worker_main, args=(w,), name=f"worker-{w.worker_id}", daemon=True)
        for w in run.workers
    ]
    for t in threads:
        t.start()

    diverged: BaseException | None = None
    try:
        while not run.stop.is_set():
            if run.produced_enough() and not buffer.has_eligible():
                break
            try:
                handle = buffer.sample(timeout=0.05)
            except TimeoutError:
                continue
            except BufferClosed:
                break
            run.learner_step(handle, on_learner_step)
    except (Exception, KeyboardInterrupt) as e:
        diverged = e
    finally:
        run.stop.set()
        buffer.close()
        for t in threads:
            t.join(timeout=10.0)
    if errors and diverged is None:
        diverged = errors[0]
    return run.finish(diverged)


def _run_deterministic(run: _Run, on_learner_step) -> RunResult:
    """Single-threaded round-robin schedule: one learner step per cycle if
    data is eligible, then each worker in id order produces one fragment
    (held back under back-pressure)."""
    cfg, buffer, collector = run.cfg, run.buffer, run.collector
    stash: dict[int, TrainBatch] = {}
    diverged: BaseException | None = None
    try:
        while not run.stop.is_set():
            progressed = False
            try:
                handle = buffer.try_sample()
                run.learner_step(handle, on_learner_step)
                progressed = True
            except WouldBlock:
                pass
            if run.stop.is_set():
                break
            for worker in run.workers:
                if worker.worker_id in stash:
                    try:
                        buffer.try_push(stash[worker.worker_id])
                        del stash[worker.worker_id]
                        progressed = True
                    except WouldBlock:
                        continue
                elif not run.produced_enough():
                    tb = collector.submit(worker.collect())
                    progressed = True
                    if tb is not None:
                        try:
                            buffer.try_push(tb)
                        except WouldBlock:
                            stash[worker.worker_id] = tb
                    worker.maybe_pull(run.publisher)
            if run.produced_enough() and not buffer.has_eligible() and not progressed:
                break
    except (Exception, KeyboardInterrupt) as e:
        diverged = e
    return run.finish(diverged)


def _run_ppo_sync(run: _Run, on_learner_step) -> RunResult:
    """Fill all N slots synchronously, drain them N*K times, repeat."""
    cfg, buffer, collector = run.cfg, run.buffer, run.collector
    per_iteration = cfg.buffer_slots * (cfg.train_batch_size // cfg.sample_batch_size)
    diverged: BaseException | None = None
    try:
        while not run.stop.is_set() and not run.produced_enough():
            for i in range(per_iteration):
                worker = run.workers[i % len(run.workers)]
                tb = collector.submit(worker.collect())
                if tb is not None:
                    buffer.try_push(tb)
            for _ in range(cfg.buffer_slots * cfg.replay_count):
                if run.stop.is_set():
                    break
                run.learner_step(buffer.try_sample(), on_learner_step)
            for worker in run.workers:
                worker.maybe_pull(run.publisher)
    except (Exception, KeyboardInterrupt) as e:
        diverged = e
    return run.finish(diverged)


def run_experiment(
    cfg: ExperimentConfig,
    seed: int,
    out_dir=None,
    on_learner_step=None,
) -> RunResult:
    """Run one seed to total_timesteps; returns final params and metrics.

    Writes ``metrics.csv`` (fixed header) and ``checkpoint.json`` into
    ``out_dir`` when given. On a non-finite loss the run aborts with
    ``TrainingDiverged`` after checkpointing the last good parameters.
    """
    cfg.validate()
    out_dir = Path(out_dir) if out_dir is not None else None
    run = _Run(cfg, seed, out_dir)
    if cfg.total_timesteps <= 0:
        return run.finish()
    if cfg.mode == "ppo_sync":
        return _run_ppo_sync(run, on_learner_step)
    if cfg.deterministic or cfg.workers == 0:
        return _run_deterministic(run, on_learner_step)
    return _run_threaded(run, on_learner_step)
