import itertools
import threading

import numpy as np
import pytest

from impactrl.cbuffer import (
    BufferClosed,
    CircularBuffer,
    TrainBatch,
    WouldBlock,
)


def tb(batch_id: int) -> TrainBatch:
    """Minimal one-row train batch carrying only an identity."""
    return TrainBatch(
        obs=np.zeros((1, 2)),
        actions=np.zeros(1, dtype=np.int64),
        rewards=np.zeros(1),
        dones=np.zeros(1, dtype=bool),
        truncations=np.zeros(1, dtype=bool),
        trunc_obs=np.zeros((1, 2)),
        logp_worker=np.zeros(1),
        values_worker=np.zeros(1),
        fragment_starts=np.array([0]),
        bootstrap_obs=np.zeros((1, 2)),
        worker_ids=np.array([0]),
        policy_versions=np.array([0]),
        batch_id=batch_id,
    )


class TestConstruction:
    def test_paper_scale_shapes(self):
        buf = CircularBuffer(16, 20)
        assert buf.num_slots == 16 and buf.max_traversals == 20
        assert buf.occupancy() == 0.0

    def test_degenerate_single_slot(self):
        buf = CircularBuffer(1, 2)
        assert buf.num_slots == 1 and buf.max_traversals == 2

    def test_zero_slots_rejected(self):
        with pytest.raises(ValueError):
            CircularBuffer(0, 5)
        with pytest.raises(ValueError):
            CircularBuffer(4, 0)


class TestPush:
    def test_fills_empty_slot(self):
        buf = CircularBuffer(2, 3)
        buf.try_push(tb(0))
        assert buf._slots[0] is not None and buf._slots[0].traversals == 0
        assert buf.occupancy() == 0.5

    def test_replaces_exhausted_slot(self):
        buf = CircularBuffer(2, 1, selection="least_traversed")
        buf.try_push(tb(0))
        buf.try_push(tb(1))
        handle = buf.try_sample()
        assert handle.batch.batch_id == 0  # slot 0 now exhausted
        buf.try_push(tb(2))
        ids = sorted(s.batch.batch_id for s in buf._slots)
        assert ids == [1, 2]

    def test_blocks_when_all_slots_fresh(self):
        buf = CircularBuffer(2, 5)
        buf.try_push(tb(0))
        buf.try_push(tb(1))
        with pytest.raises(WouldBlock):
            buf.try_push(tb(2))
        # the failed push changed nothing
        assert sorted(s.batch.batch_id for s in buf._slots) == [0, 1]

    def test_stale_evict_drops_oldest(self):
        buf = CircularBuffer(2, 5, allow_stale_evict=True)
        buf.try_push(tb(0))
        buf.try_push(tb(1))
        buf.try_push(tb(2))  # evicts batch 0 despite remaining traversals
        assert sorted(s.batch.batch_id for s in buf._slots) == [1, 2]


class TestSample:
    def test_single_slot_k2_sequence(self):
        buf = CircularBuffer(1, 2)
        buf.try_push(tb(0))
        h0 = buf.try_sample()
        assert (h0.batch.batch_id, h0.traversals_before) == (0, 0)
        h1 = buf.try_sample()
        assert (h1.batch.batch_id, h1.traversals_before) == (0, 1)
        with pytest.raises(WouldBlock):
            buf.try_sample()  # exhausted; must wait for a push
        buf.try_push(tb(1))
        assert buf.try_sample().batch.batch_id == 1

    def test_least_traversed_order_is_fifo_epochs(self):
        buf = CircularBuffer(3, 2, selection="least_traversed")
        for i in range(3):
            buf.try_push(tb(i))
        order = [buf.try_sample().batch.batch_id for _ in range(6)]
        assert order == [0, 1, 2, 0, 1, 2]

    def test_uniform_selection_covers_slots(self):
        buf = CircularBuffer(3, 10_000, rng=np.random.default_rng(0))
        for i in range(3):
            buf.try_push(tb(i))
        counts = np.zeros(3)
        for _ in range(3000):
            counts[buf.try_sample().batch.batch_id] += 1
        assert np.all(counts > 800)  # roughly uniform across eligible slots

    def test_attach_once_at_first_consumption(self):
        buf = CircularBuffer(1, 3)
        buf.try_push(tb(0))
        h0 = buf.try_sample()
        assert h0.target_outputs is None
        buf.attach(h0, {"tag": 7})
        h1 = buf.try_sample()
        assert h1.target_outputs == {"tag": 7}
        with pytest.raises(ValueError):
            buf.attach(h1, {"tag": 8})  # not the first consumption

    def test_attach_expires_after_replacement(self):
        buf = CircularBuffer(1, 1)
        buf.try_push(tb(0))
        h0 = buf.try_sample()
        buf.try_push(tb(1))
        with pytest.raises(ValueError):
            buf.attach(h0, {})


class TestClose:
    def test_operations_raise_after_close(self):
        buf = CircularBuffer(1, 1)
        buf.close()
        with pytest.raises(BufferClosed):
            buf.try_push(tb(0))
        with pytest.raises(BufferClosed):
            buf.try_sample()

    def test_close_wakes_blocked_consumer(self):
        buf = CircularBuffer(1, 1)
        errors = []

        def consumer():
            try:
                buf.sample(timeout=5.0)
            except BufferClosed:
                errors.append("closed")

        t = threading.Thread(target=consumer)
        t.start()
        buf.close()
        t.join(timeout=2.0)
        assert errors == ["closed"]


class TestScriptedInterleavings:
    """Exhaustive push/sample scripts: every batch consumed at most K times,
    first-consumption attach exactly once, and no batch evicted before
    exhaustion under back-pressure."""

    def run_script(self, n, k, script, selection):
        buf = CircularBuffer(n, k, selection=selection, rng=np.random.default_rng(1234))
        next_id = 0
        consumptions: dict[int, list[int]] = {}
        pushed = 0
        for op in script:
            if op == "P":
                try:
                    buf.try_push(tb(next_id))
                except WouldBlock:
                    # a blocked push must leave every count unchanged
                    continue
                consumptions[next_id] = []
                next_id += 1
                pushed += 1
            else:
                try:
                    handle = buf.try_sample()
                except WouldBlock:
                    continue
                bid = handle.batch.batch_id
                consumptions[bid].append(handle.traversals_before)
                if handle.traversals_before == 0:
                    assert handle.target_outputs is None
                    buf.attach(handle, ("target", bid))
                else:
                    assert handle.target_outputs == ("target", bid)
            # invariants after every event
            completed = sum(1 for c in consumptions.values() if len(c) == k)
            for bid, ks in consumptions.items():
                assert len(ks) <= k, f"batch {bid} consumed {len(ks)} > K={k}"
                assert ks == list(range(len(ks))), f"batch {bid} k-sequence {ks}"
            # back-pressure: batches not yet exhausted never exceed slot count
            assert pushed - completed <= n

    def test_exhaustive_small_configs(self):
        for n, k in itertools.product((1, 2, 3), repeat=2):
            for script in itertools.product("PS", repeat=12):
                self.run_script(n, k, script, selection="uniform")
                self.run_script(n, k, script, selection="least_traversed")

    def test_n4_k1_serves_each_batch_once(self):
        # saturated single-traversal buffer: every pushed batch is consumed
        # exactly once before being replaced
        for selection in ("uniform", "least_traversed"):
            buf = CircularBuffer(4, 1, selection=selection, rng=np.random.default_rng(5))
            served: list[int] = []
            next_id = 0
            for _ in range(4):
                buf.try_push(tb(next_id))
                next_id += 1
            for _ in range(40):
                served.append(buf.try_sample().batch.batch_id)
                buf.try_push(tb(next_id))
                next_id += 1
            assert len(served) == len(set(served))


class TestLiveness:
    def test_producers_and_consumer_terminate(self):
        # bounded wait: neither side blocks forever under a saturated producer
        buf = CircularBuffer(2, 3, rng=np.random.default_rng(2))
        batches_per_producer = 20
        produced_ids: list[int] = []
        consumed: list[int] = []
        lock = threading.Lock()

        def producer(offset):
            for i in range(batches_per_producer):
                bid = offset * 1000 + i
                buf.push(tb(bid), timeout=20.0)
                with lock:
                    produced_ids.append(bid)

        def consumer():
            counts: dict[int, int] = {}
            total = batches_per_producer * 2 * 3  # every batch exactly K times
            for _ in range(total):
                handle = buf.sample(timeout=20.0)
                if handle.traversals_before == 0:
                    buf.attach(handle, "t")
                counts[handle.batch.batch_id] = counts.get(handle.batch.batch_id, 0) + 1
            consumed.append(sum(counts.values()))
            assert all(c <= 3 for c in counts.values())

        threads = [threading.Thread(target=producer, args=(i,)) for i in range(2)]
        threads.append(threading.Thread(target=consumer))
        for t in threads:
            t.start()
        for t in threads:
            t.join(timeout=30.0)
            assert not t.is_alive(), "liveness violated: thread stuck"
        assert consumed == [batches_per_producer * 2 * 3]
