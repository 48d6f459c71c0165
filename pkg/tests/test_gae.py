import numpy as np
import pytest

from impactrl.gae import AdvantageSet, TrajectorySlice, vgae_advantages, vtrace_targets

# --- independent oracles ---


def vanilla_gae_oracle(rewards, values, bootstrap, dones, gamma, lam):
    """Plain GAE-lambda backward recursion, no importance weighting."""
    t_len = len(rewards)
    v_next = np.append(values[1:], bootstrap)
    adv = np.zeros(t_len)
    acc = 0.0
    for t in range(t_len - 1, -1, -1):
        nd = 0.0 if dones[t] else 1.0
        delta = rewards[t] + gamma * v_next[t] * nd - values[t]
        acc = delta + gamma * lam * nd * acc
        adv[t] = acc
    return adv


def nstep_return_oracle(rewards, values, bootstrap, dones, gamma):
    """Discounted sum of rewards to the horizon (or first done), plus the
    discounted bootstrap. Direct double loop, no recursion."""
    t_len = len(rewards)
    out = np.zeros(t_len)
    for t in range(t_len):
        total, disc = 0.0, 1.0
        ended = False
        for i in range(t, t_len):
            total += disc * rewards[i]
            if dones[i]:
                ended = True
                break
            disc *= gamma  # after this loop disc == gamma^(steps taken)
        if not ended:
            total += disc * bootstrap
        out[t] = total
    return out


def random_slice(rng, on_policy=False, c_bar=1.0, rho_bar=1.0):
    t_len = int(rng.integers(1, 40))
    logp_b = rng.normal(size=t_len)
    logp_r = logp_b.copy() if on_policy else logp_b + rng.normal(size=t_len) * 0.5
    return TrajectorySlice(
        rewards=rng.normal(size=t_len),
        dones=rng.random(t_len) < 0.1,
        values=rng.normal(size=t_len),
        bootstrap_value=float(rng.normal()),
        logp_ref=logp_r,
        logp_behavior=logp_b,
        gamma=float(rng.uniform(0.8, 1.0)),
        lam=float(rng.uniform(0.0, 1.0)),
        c_bar=c_bar,
        rho_bar=rho_bar,
    )


class TestVtraceTargets:
    def test_two_step_hand_case(self):
        # r=[1,1], V=[0,0], bootstrap 0, gamma=1, on-policy ratios
        s = TrajectorySlice(
            rewards=np.array([1.0, 1.0]),
            dones=np.array([False, False]),
            values=np.array([0.0, 0.0]),
            bootstrap_value=0.0,
            logp_ref=np.zeros(2),
            logp_behavior=np.zeros(2),
            gamma=1.0,
            lam=1.0,
        )
        np.testing.assert_allclose(vtrace_targets(s), [2.0, 1.0], atol=1e-15)

    def test_zero_rewards_zero_values(self):
        s = TrajectorySlice(
            rewards=np.zeros(7),
            dones=np.zeros(7, dtype=bool),
            values=np.zeros(7),
            bootstrap_value=0.0,
            logp_ref=np.random.default_rng(0).normal(size=7),
            logp_behavior=np.zeros(7),
            gamma=0.9,
            lam=0.9,
        )
        np.testing.assert_allclose(vtrace_targets(s), np.zeros(7), atol=1e-15)

    def test_on_policy_matches_nstep_oracle(self):
        rng = np.random.default_rng(1)
        for _ in range(300):
            s = random_slice(rng, on_policy=True)
            expected = nstep_return_oracle(
                s.rewards, s.values, s.bootstrap_value, s.dones, s.gamma
            )
            np.testing.assert_allclose(vtrace_targets(s), expected, atol=1e-10)

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError):
            TrajectorySlice(
                rewards=np.zeros(3),
                dones=np.zeros(2, dtype=bool),
                values=np.zeros(3),
                bootstrap_value=0.0,
                logp_ref=np.zeros(3),
                logp_behavior=np.zeros(3),
                gamma=0.9,
                lam=0.9,
            )


class TestVgaeAdvantages:
    def test_on_policy_equals_vanilla_gae(self):
        # oracle equivalence over 1000 random slices at 1e-10
        rng = np.random.default_rng(2)
        for _ in range(1000):
            c_bar = float(rng.uniform(1.0, 3.0))
            rho_bar = float(rng.uniform(1.0, 3.0))
            s = random_slice(rng, on_policy=True, c_bar=c_bar, rho_bar=rho_bar)
            expected = vanilla_gae_oracle(
                s.rewards, s.values, s.bootstrap_value, s.dones, s.gamma, s.lam
            )
            got = vgae_advantages(s)
            np.testing.assert_allclose(got.advantages, expected, atol=1e-10)
            np.testing.assert_allclose(got.value_targets, expected + s.values, atol=1e-10)

    def test_lambda_zero_collapses_to_weighted_td(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            s = random_slice(rng, c_bar=1.5, rho_bar=1.5)
            s = TrajectorySlice(
                rewards=s.rewards,
                dones=s.dones,
                values=s.values,
                bootstrap_value=s.bootstrap_value,
                logp_ref=s.logp_ref,
                logp_behavior=s.logp_behavior,
                gamma=s.gamma,
                lam=0.0,
                c_bar=s.c_bar,
                rho_bar=s.rho_bar,
            )
            rho = np.minimum(s.rho_bar, np.exp(s.logp_ref - s.logp_behavior))
            v_next = np.append(s.values[1:], s.bootstrap_value)
            nd = 1.0 - s.dones.astype(float)
            td = rho * (s.rewards + s.gamma * v_next * nd - s.values)
            np.testing.assert_allclose(vgae_advantages(s).advantages, td, atol=1e-12)

    def test_zero_rewards_zero_values(self):
        s = TrajectorySlice(
            rewards=np.zeros(5),
            dones=np.zeros(5, dtype=bool),
            values=np.zeros(5),
            bootstrap_value=0.0,
            logp_ref=np.ones(5),
            logp_behavior=np.zeros(5),
            gamma=0.99,
            lam=0.95,
        )
        np.testing.assert_allclose(vgae_advantages(s).advantages, np.zeros(5), atol=1e-15)

    def test_linearity_in_rewards_with_zero_values(self):
        rng = np.random.default_rng(4)
        for _ in range(100):
            s = random_slice(rng, c_bar=2.0, rho_bar=2.0)
            base = TrajectorySlice(
                rewards=s.rewards,
                dones=s.dones,
                values=np.zeros(len(s)),
                bootstrap_value=0.0,
                logp_ref=s.logp_ref,
                logp_behavior=s.logp_behavior,
                gamma=s.gamma,
                lam=s.lam,
                c_bar=s.c_bar,
                rho_bar=s.rho_bar,
            )
            doubled = TrajectorySlice(
                rewards=2.0 * s.rewards,
                dones=s.dones,
                values=np.zeros(len(s)),
                bootstrap_value=0.0,
                logp_ref=s.logp_ref,
                logp_behavior=s.logp_behavior,
                gamma=s.gamma,
                lam=s.lam,
                c_bar=s.c_bar,
                rho_bar=s.rho_bar,
            )
            np.testing.assert_allclose(
                vgae_advantages(doubled).advantages,
                2.0 * vgae_advantages(base).advantages,
                atol=1e-12,
            )

    def test_no_credit_across_episode_boundary(self):
        rng = np.random.default_rng(5)
        for _ in range(100):
            s = random_slice(rng, c_bar=2.0, rho_bar=2.0)
            done_idx = np.flatnonzero(s.dones)
            if len(done_idx) == 0 or done_idx[0] >= len(s) - 1:
                continue
            cut = int(done_idx[0])
            perturbed_rewards = s.rewards.copy()
            perturbed_rewards[cut + 1 :] += rng.normal(size=len(s) - cut - 1) * 10
            perturbed = TrajectorySlice(
                rewards=perturbed_rewards,
                dones=s.dones,
                values=s.values,
                bootstrap_value=s.bootstrap_value,
                logp_ref=s.logp_ref,
                logp_behavior=s.logp_behavior,
                gamma=s.gamma,
                lam=s.lam,
                c_bar=s.c_bar,
                rho_bar=s.rho_bar,
            )
            np.testing.assert_allclose(
                vgae_advantages(perturbed).advantages[: cut + 1],
                vgae_advantages(s).advantages[: cut + 1],
                atol=1e-12,
            )
            np.testing.assert_allclose(
                vtrace_targets(perturbed)[: cut + 1], vtrace_targets(s)[: cut + 1], atol=1e-12
            )

    def test_raising_clip_bounds_never_shrinks_weights(self):
        rng = np.random.default_rng(6)
        logp_r = rng.normal(size=50) * 2
        logp_b = rng.normal(size=50) * 2
        ratio = np.exp(logp_r - logp_b)
        for low, high in ((1.0, 1.5), (1.5, 4.0), (4.0, 10.0)):
            assert np.all(np.minimum(high, ratio) >= np.minimum(low, ratio))

    def test_invalid_clip_bounds_rejected(self):
        with pytest.raises(ValueError):
            TrajectorySlice(
                rewards=np.zeros(2),
                dones=np.zeros(2, dtype=bool),
                values=np.zeros(2),
                bootstrap_value=0.0,
                logp_ref=np.zeros(2),
                logp_behavior=np.zeros(2),
                gamma=0.9,
                lam=0.9,
                c_bar=0.5,
            )
