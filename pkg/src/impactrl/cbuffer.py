"""Bounded-reuse circular buffer shared between workers and the learner.

N slots each hold one learner-sized train batch. A slot is served at most
K times; the K-th serve exhausts it and frees it for replacement by fresh
worker data. Whole batches move in and out; there is no transition-level
sampling.

Concurrency: many producer threads, exactly one consumer thread. All
operations take the internal lock; blocked producers/consumers wait on a
condition and are woken by state changes or ``close()``. Back-pressure is
the default when every slot is still in use (no eviction of fresh data);
``allow_stale_evict=True`` switches to drop-oldest for throughput
experiments.

The ``try_push`` / ``try_sample`` variants never block (they raise
``WouldBlock``) and are the substrate of the deterministic single-threaded
scheduler and the scripted-interleaving tests.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Any

import numpy as np


class WouldBlock(RuntimeError):
    """Non-blocking operation could not proceed; state is unchanged."""


class BufferClosed(RuntimeError):
    """The buffer was shut down while waiting or before the call."""


@dataclass
class TrainBatch:
    """One buffer slot's payload: M rows assembled from whole worker
    fragments, with the per-fragment structure preserved so advantage
    recursions never cross fragment boundaries."""

    obs: np.ndarray  # (M, obs_dim)
    actions: np.ndarray  # (M,) int or (M, action_dim) float
    rewards: np.ndarray  # (M,)
    dones: np.ndarray  # (M,) bool, true terminations only
    truncations: np.ndarray  # (M,) bool, step-cap cutoffs
    trunc_obs: np.ndarray  # (M, obs_dim), pre-reset obs at truncation rows
    logp_worker: np.ndarray  # (M,) log-probs under the producing policy
    values_worker: np.ndarray  # (M,) value estimates under the producing policy
    fragment_starts: np.ndarray  # (F,) row index where each fragment begins
    bootstrap_obs: np.ndarray  # (F, obs_dim) observation after each fragment
    worker_ids: np.ndarray  # (F,)
    policy_versions: np.ndarray  # (F,) producing policy version per fragment
    batch_id: int = -1

    def __len__(self) -> int:
        return len(self.rewards)


@dataclass
class BufferSlot:
    batch: TrainBatch
    traversals: int = 0
    target_outputs: Any = None
    insert_seq: int = 0


@dataclass(frozen=True)
class SlotHandle:
    """Identifies the slot a sample came from, for attaching target outputs."""

    index: int
    insert_seq: int
    batch: TrainBatch = field(repr=False)
    traversals_before: int = 0
    target_outputs: Any = field(default=None, repr=False)


class CircularBuffer:
    """C(N, K): N slots, each consumable at most K times."""

    def __init__(
        self,
        num_slots: int,
        max_traversals: int,
        *,
        selection: str = "uniform",
        rng: np.random.Generator | None = None,
        allow_stale_evict: bool = False,
    ):
        if num_slots < 1:
            raise ValueError("buffer needs at least one slot")
        if max_traversals < 1:
            raise ValueError("max_traversals must be >= 1")
        if selection not in ("uniform", "least_traversed"):
            raise ValueError(f"unknown selection policy {selection!r}")
        self.num_slots = num_slots
        self.max_traversals = max_traversals
        self.selection = selection
        self.allow_stale_evict = allow_stale_evict
        self._rng = rng if rng is not None else np.random.default_rng()
        self._slots: list[BufferSlot | None] = [None] * num_slots
        self._seq = 0
        self._closed = False
        self._cond = threading.Condition()

    # --- internal helpers (lock held) ---

    def _push_target(self) -> int | None:
        """Slot index a push would land in, or None if it must wait."""
        for i, slot in enumerate(self._slots):
            if slot is None:
                return i
        exhausted = [
            (slot.insert_seq, i)
            for i, slot in enumerate(self._slots)
            if slot is not None and slot.traversals >= self.max_traversals
        ]
        if exhausted:
            return min(exhausted)[1]  # oldest among max-traversal slots
        if self.allow_stale_evict:
            return min((s.insert_seq, i) for i, s in enumerate(self._slots))[1]
        return None

    def _eligible(self) -> list[int]:
        return [
            i
            for i, slot in enumerate(self._slots)
            if slot is not None and slot.traversals < self.max_traversals
        ]

    def _pick(self, eligible: list[int]) -> int:
        if self.selection == "uniform":
            return eligible[int(self._rng.integers(len(eligible)))]
        # least_traversed: fewest serves first, oldest batch breaking ties;
        # under a full drain this yields the minibatch-epoch order of
        # synchronous training
        return min(eligible, key=lambda i: (self._slots[i].traversals, self._slots[i].insert_seq, i))

    def _do_push(self, idx: int, batch: TrainBatch) -> None:
        self._slots[idx] = BufferSlot(batch=batch, traversals=0, insert_seq=self._seq)
        self._seq += 1
        self._cond.notify_all()

    def _do_sample(self, idx: int) -> SlotHandle:
        slot = self._slots[idx]
        handle = SlotHandle(
            index=idx,
            insert_seq=slot.insert_seq,
            batch=slot.batch,
            traversals_before=slot.traversals,
            target_outputs=slot.target_outputs,
        )
        slot.traversals += 1
        if slot.traversals >= self.max_traversals:
            self._cond.notify_all()  # slot became replaceable
        return handle

    # --- public api ---

    def push(self, batch: TrainBatch, timeout: float | None = None) -> None:
        """Store a batch, blocking under back-pressure until a slot frees."""
        with self._cond:
            while True:
                if self._closed:
                    raise BufferClosed("push on closed buffer")
                idx = self._push_target()
                if idx is not None:
                    self._do_push(idx, batch)
                    return
                if not self._cond.wait(timeout):
                    raise TimeoutError("push timed out waiting for a free slot")

    def try_push(self, batch: TrainBatch) -> None:
        with self._cond:
            if self._closed:
                raise BufferClosed("push on closed buffer")
            idx = self._push_target()
            if idx is None:
                raise WouldBlock("no empty or exhausted slot")
            self._do_push(idx, batch)

    def sample(self, timeout: float | None = None) -> SlotHandle:
        """Serve one batch, blocking until some slot has traversals < K."""
        with self._cond:
            while True:
                if self._closed:
                    raise BufferClosed("sample on closed buffer")
                eligible = self._eligible()
                if eligible:
                    return self._do_sample(self._pick(eligible))
                if not self._cond.wait(timeout):
                    raise TimeoutError("sample timed out waiting for data")

    def try_sample(self) -> SlotHandle:
        with self._cond:
            if self._closed:
                raise BufferClosed("sample on closed buffer")
            eligible = self._eligible()
            if not eligible:
                raise WouldBlock("no slot with remaining traversals")
            return self._do_sample(self._pick(eligible))

    def attach(self, handle: SlotHandle, target_outputs: Any) -> None:
        """Attach first-consumption outputs to the slot a handle came from.

        Valid only right after the k=0 serve of that slot's batch.
        """
        with self._cond:
            slot = self._slots[handle.index]
            if slot is None or slot.insert_seq != handle.insert_seq:
                raise ValueError("slot was replaced; attach target expired")
            if handle.traversals_before != 0 or slot.target_outputs is not None:
                raise ValueError("target outputs may only be attached at first consumption")
            slot.target_outputs = target_outputs

    def has_eligible(self) -> bool:
        with self._cond:
            return bool(self._eligible())

    def occupancy(self) -> float:
        """Fraction of slots holding a batch with traversals remaining."""
        with self._cond:
            return len(self._eligible()) / self.num_slots

    def close(self) -> None:
        with self._cond:
            self._closed = True
            self._cond.notify_all()

    @property
    def closed(self) -> bool:
        with self._cond:
            return self._closed
