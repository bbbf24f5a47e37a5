import logging
import math

import numpy as np
import pytest
import torch

from skilldisc import env
from skilldisc.encoder import FeatureExtractor
from skilldisc.policy import GOAL_VEC_DIM, MCPPolicy, goal_to_vec, parameter_checksum
from skilldisc.sac import (
    EpisodeData,
    ReplayBuffer,
    SacSettings,
    SACTrainer,
    TemperatureModel,
    her_relabel,
    multitask_sample,
)


def make_episode(T=50, n_objects=1, seed=0, phase="gcrl", goal=None, cond_dim=3):
    rng = np.random.default_rng(seed)
    goal = np.zeros(3) if goal is None else goal
    cond = np.tile(goal_to_vec(goal), (T, 1))
    if cond.shape[1] < cond_dim:
        cond = np.concatenate([cond, np.zeros((T, cond_dim - cond.shape[1]))], axis=1)
    achieved_next = rng.uniform(-0.2, 0.2, (T, 3))
    w = np.zeros((T, 8))
    w[:, 0] = 1.0
    return EpisodeData(
        robot=rng.normal(size=(T, 7)),
        objects=rng.normal(size=(T, n_objects, 6)),
        next_robot=rng.normal(size=(T, 7)),
        next_objects=rng.normal(size=(T, n_objects, 6)),
        action=rng.uniform(-1, 1, (T, 4)),
        reward=np.array([env.sparse_reward(achieved_next[t], goal, 0.05) for t in range(T)]),
        done=np.eye(T)[T - 1].astype(np.float64),
        cond=cond,
        achieved_next=achieved_next,
        w=w,
        goal=goal,
        phase=phase,
    )


def reward_fn(achieved, desired):
    return env.sparse_reward(achieved, desired, 0.05)


class TestHer:
    def test_k_zero_identity(self):
        ep = make_episode()
        out = her_relabel(ep, "future", 0, np.random.default_rng(0), reward_fn)
        assert len(out) == len(ep)
        assert np.array_equal(out.reward, ep.reward)
        assert np.array_equal(out.cond, ep.cond)

    def test_transition_count(self):
        out = her_relabel(make_episode(T=50), "future", 4, np.random.default_rng(0), reward_fn)
        assert len(out) == 250

    def test_rewards_recompute_identically(self):
        # fuzz: every relabeled reward must equal the sparse reward recomputed
        # from the stored achieved/goal pair
        total = 0
        for seed in range(40):
            ep = make_episode(T=50, seed=seed)
            out = her_relabel(ep, "future", 4, np.random.default_rng(seed), reward_fn)
            for row in range(len(out)):
                expect = reward_fn(out.achieved_next[row], out.cond[row, :GOAL_VEC_DIM])
                assert out.reward[row] == expect
                total += 1
        assert total >= 10_000

    def test_future_goals_come_from_later_steps(self):
        ep = make_episode(T=10)
        out = her_relabel(ep, "future", 3, np.random.default_rng(1), reward_fn)
        k1 = 4  # original + 3 copies per step
        for t in range(10):
            for c in range(1, k1):
                goal = out.cond[t * k1 + c, :GOAL_VEC_DIM]
                candidates = [goal_to_vec(ep.achieved_next[u]) for u in range(min(t + 1, 9), 10)]
                assert any(np.array_equal(goal, g) for g in candidates)

    def test_last_step_falls_back_to_final(self):
        ep = make_episode(T=10)
        out = her_relabel(ep, "future", 2, np.random.default_rng(2), reward_fn)
        final = goal_to_vec(ep.achieved_next[-1])
        for c in (1, 2):
            assert np.array_equal(out.cond[9 * 3 + c, :GOAL_VEC_DIM], final)
            assert out.reward[9 * 3 + c] == 1.0  # own achieved state: distance zero

    def test_intention_never_relabeled(self):
        ep = make_episode(T=20)
        ep.w[:, 0] = 0
        ep.w[:, 3] = 1
        out = her_relabel(ep, "future", 4, np.random.default_rng(3), reward_fn)
        assert np.all(out.w[:, 3] == 1)

    def test_final_strategy(self):
        ep = make_episode(T=10)
        out = her_relabel(ep, "final", 1, np.random.default_rng(4), reward_fn)
        final = goal_to_vec(ep.achieved_next[-1])
        for t in range(10):
            assert np.array_equal(out.cond[2 * t + 1, :GOAL_VEC_DIM], final)

    def test_unknown_strategy(self):
        with pytest.raises(ValueError):
            her_relabel(make_episode(), "episode", 1, np.random.default_rng(0), reward_fn)


class TestReplayBuffer:
    def test_len_counts_transitions(self):
        buf = ReplayBuffer(10_000, np.random.default_rng(0))
        buf.add_episode(make_episode(T=50))
        buf.add_episode(make_episode(T=30, seed=1))
        assert len(buf) == 80

    def test_eviction_oldest_first(self):
        buf = ReplayBuffer(100, np.random.default_rng(0))
        first = make_episode(T=50, seed=0)
        buf.add_episode(first)
        buf.add_episode(make_episode(T=50, seed=1))
        buf.add_episode(make_episode(T=50, seed=2))
        assert len(buf) == 100
        assert not any(ep is first for ep in buf.episodes)

    def test_sampled_rows_bit_identical(self):
        buf = ReplayBuffer(10_000, np.random.default_rng(7))
        for seed in range(4):
            buf.add_episode(make_episode(T=25, seed=seed))
        idx = buf.sample_indices(64)
        batch = buf.gather(idx)
        for row, (e, t) in enumerate(idx):
            ep = buf.episodes[e]
            assert batch["robot"][row].tobytes() == ep.robot[t].tobytes()
            assert batch["action"][row].tobytes() == ep.action[t].tobytes()
            assert batch["reward"][row] == ep.reward[t]
            assert batch["cond"][row].tobytes() == ep.cond[t].tobytes()

    def test_empty_buffer_raises(self):
        with pytest.raises(ValueError):
            ReplayBuffer(100, np.random.default_rng(0)).sample(4)


class TestMultitaskSample:
    def buffers(self, tasks=4, fill=(0, 1, 2, 3)):
        out = {}
        for j in range(tasks):
            out[j] = ReplayBuffer(10_000, np.random.default_rng(j))
            if j in fill:
                ep = make_episode(T=50, seed=j, cond_dim=3)
                ep.task_index = j
                out[j].add_episode(ep)
        return out

    def test_equal_shares(self):
        batch, shares = multitask_sample(self.buffers(4), 256)
        assert shares == {0: 64, 1: 64, 2: 64, 3: 64}
        assert len(batch["reward"]) == 256

    def test_remainder_round_robin(self):
        _, shares = multitask_sample(self.buffers(3, fill=(0, 1, 2)), 256)
        assert shares == {0: 86, 1: 85, 2: 85}

    def test_empty_buffer_skipped(self, caplog):
        with caplog.at_level(logging.WARNING):
            batch, shares = multitask_sample(self.buffers(4, fill=(0, 2, 3)), 256)
        assert 1 not in shares
        assert sorted(shares) == [0, 2, 3]
        assert sum(shares.values()) == 256
        assert "empty" in caplog.text

    def test_task_indices_attached(self):
        batch, shares = multitask_sample(self.buffers(2, fill=(0, 1)), 8)
        assert set(batch["task_index"]) == {0, 1}


class TestTemperature:
    def test_positive_always(self):
        tm = TemperatureModel(n_tasks=4)
        rng = np.random.default_rng(0)
        for _ in range(200):
            tm.update(rng.normal(size=32) * 10, rng.integers(0, 4, 32), -4.0)
        assert np.all(tm.alpha(np.arange(4)) > 0)

    def test_absent_task_untouched(self):
        tm = TemperatureModel(n_tasks=4)
        before = tm.log_alpha.copy()
        tm.update(np.full(16, -2.0), np.full(16, 2, dtype=np.int64), -4.0)
        assert tm.log_alpha[2] != before[2]
        assert tm.log_alpha[0] == before[0]
        assert tm.log_alpha[1] == before[1]
        assert tm.log_alpha[3] == before[3]

    def test_dual_direction(self):
        # entropy below target -> alpha grows to buy entropy back; above
        # target -> alpha decays (standard SAC dual)
        low = TemperatureModel(n_tasks=0)
        for _ in range(50):
            low.update(np.full(8, +6.0), None, -4.0)  # entropy -6 < target -4
        assert low.alpha()[0] > 0.1
        high = TemperatureModel(n_tasks=0)
        for _ in range(50):
            high.update(np.full(8, -10.0), None, -4.0)  # entropy 10 > target -4
        assert high.alpha()[0] < 0.1

    def test_distinct_gaps_distinct_trajectories(self):
        tm = TemperatureModel(n_tasks=4)
        rng = np.random.default_rng(0)
        gaps = [-8.0, -5.0, -3.0, -1.0]
        for _ in range(100):
            logp = np.concatenate([np.full(16, g) + 0.01 * rng.standard_normal(16) for g in gaps])
            idx = np.repeat(np.arange(4), 16)
            tm.update(logp, idx, -4.0)
        alphas = tm.alpha(np.arange(4))
        assert len(np.unique(np.round(alphas, 10))) == 4


class TestTrainer:
    def build(self, seed=0, gamma=0.98, n_tasks=0, cond_dim=3):
        torch.manual_seed(seed)
        extractor = FeatureExtractor(max_objects=8, multi_object=False)
        policy = MCPPolicy(feature_dim=extractor.feature_dim, cond_dim=cond_dim)
        gen = torch.Generator().manual_seed(seed)
        trainer = SACTrainer(policy, extractor, cond_dim, 4,
                             SacSettings(gamma=gamma), n_tasks=n_tasks, generator=gen)
        return trainer

    def batch(self, seed=0, B=32, reward=None, done=None, cond_dim=3):
        rng = np.random.default_rng(seed)
        return {
            "robot": rng.normal(size=(B, 7)),
            "objects": rng.normal(size=(B, 1, 6)),
            "next_robot": rng.normal(size=(B, 7)),
            "next_objects": rng.normal(size=(B, 1, 6)),
            "action": rng.uniform(-1, 1, (B, 4)),
            "reward": np.zeros(B) if reward is None else reward,
            "done": np.zeros(B) if done is None else done,
            "cond": rng.normal(size=(B, cond_dim)),
            "w": np.tile(np.eye(8)[0], (B, 1)),
            "task_index": np.zeros(B, dtype=np.int64),
        }

    def test_gamma_zero_targets_equal_reward(self):
        trainer = self.build(gamma=0.0)
        rec = trainer.update(self.batch(reward=np.zeros(32)), "gcrl")
        assert rec["target_mean"] == 0.0 and rec["target_max"] == 0.0

    def test_gamma_zero_single_transition_hand_check(self):
        trainer = self.build(gamma=0.0)
        rec = trainer.update(self.batch(B=32, reward=np.ones(32)), "gcrl")
        assert rec["target_mean"] == 1.0

    def test_deterministic_given_seed(self):
        records = []
        for _ in range(2):
            trainer = self.build(seed=11)
            out = [trainer.update(self.batch(seed=s), "gcrl") for s in range(5)]
            records.append(out)
        assert records[0] == records[1]

    def test_frozen_primitives_unchanged(self):
        trainer = self.build(seed=2)
        trainer.policy.freeze_primitives()
        trainer.actor_opt = torch.optim.Adam(
            [p for p in trainer.policy.parameters() if p.requires_grad], lr=3e-4)
        checksum = parameter_checksum(trainer.policy.primitives)
        for s in range(20):
            trainer.update(self.batch(seed=s), "gcrl")
        assert parameter_checksum(trainer.policy.primitives) == checksum

    def test_gating_changes_under_updates(self):
        trainer = self.build(seed=2)
        checksum = parameter_checksum(trainer.policy.gating)
        trainer.update(self.batch(), "gcrl")
        assert parameter_checksum(trainer.policy.gating) != checksum

    def test_critic_targets_bounded_sparse_rewards(self):
        # band: [-alpha*cH, 1/(1-gamma) + alpha*cH] with cH the entropy
        # magnitude bound accumulated over the discounted horizon
        trainer = self.build(seed=3, gamma=0.9)
        rng = np.random.default_rng(0)
        max_logp = 0.0
        max_alpha = 0.0
        lo, hi = np.inf, -np.inf
        for s in range(300):
            b = self.batch(seed=s, reward=rng.integers(0, 2, 32).astype(float))
            rec = trainer.update(b, "gcrl")
            lo, hi = min(lo, rec["target_min"]), max(hi, rec["target_max"])
            max_logp = max(max_logp, abs(rec["entropy"]))
            max_alpha = max(max_alpha, rec["alpha_mean"])
        c_h = (max_logp + 20.0) / (1 - 0.9)  # slack for pointwise log-prob spread
        assert hi <= 1 / (1 - 0.9) + max_alpha * c_h
        assert lo >= -max_alpha * c_h - 1.0

    def test_per_task_alpha_in_update(self):
        trainer = self.build(seed=4, n_tasks=3, cond_dim=6)
        b = self.batch(cond_dim=6)
        b["task_index"] = np.full(32, 1, dtype=np.int64)
        before = trainer.temperature.log_alpha.copy()
        trainer.update(b, "mtrl")
        after = trainer.temperature.log_alpha
        assert after[1] != before[1]
        assert after[0] == before[0] and after[2] == before[2]
