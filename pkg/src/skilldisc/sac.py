"""Off-policy actor-critic machinery over the latent-augmented MDP.

Episodes are stored whole (hindsight relabeling needs the full trajectory),
evicted oldest-first, and sampled uniformly over transitions. Goal phases
relabel at insertion time: each step emits the original transition plus k
hindsight copies whose goal is the achieved state of a later step, with the
sparse reward recomputed from scratch. Pretraining inserts raw transitions;
their rewards are recomputed from the current MI estimators at sample time.

The trainer is a twin-critic SAC step with a temperature dual. In the
multi-task phase the temperature is a per-task vector alpha_j = f(T_j)
(log-linear in the one-hot task embedding) updated with a per-entry Adam so
that tasks absent from a batch are left exactly untouched.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import TrainingAborted
from .policy import GOAL_VEC_DIM, goal_to_vec

logger = logging.getLogger(__name__)


@dataclass
class EpisodeData:
    """One rollout, as flat arrays of length T (plus per-episode metadata)."""

    robot: np.ndarray          # (T, 7)
    objects: np.ndarray        # (T, n, 6)
    next_robot: np.ndarray
    next_objects: np.ndarray
    action: np.ndarray         # (T, A)
    reward: np.ndarray         # (T,)
    done: np.ndarray           # (T,) 1.0 only at horizon truncation
    cond: np.ndarray           # (T, C) gating/critic conditioning vector
    achieved_next: np.ndarray  # (T, Gd) achieved goal after each step
    w: np.ndarray              # (T, max_objects) intention one-hot
    z: np.ndarray | None = None       # (T, z_dim) skill latent (pretrain)
    goal: np.ndarray | None = None    # (Gd,) desired goal (gcrl/mtrl)
    task_index: int = 0
    phase: str = "pretrain"

    def __len__(self) -> int:
        return self.robot.shape[0]

    def copy(self) -> "EpisodeData":
        return replace(
            self,
            **{k: (v.copy() if isinstance(v, np.ndarray) else v)
               for k, v in self.__dict__.items()},
        )


def her_relabel(episode: EpisodeData, strategy: str, k: int,
                rng: np.random.Generator, reward_fn) -> EpisodeData:
    """Original transitions plus k hindsight copies per step.

    'future' draws the relabeled goal from the achieved state of a strictly
    later step, falling back to the final state at the last step; 'final'
    always uses the final achieved state. reward_fn(achieved, desired) is the
    task's sparse reward. Intentions are never relabeled.
    """
    if strategy not in ("future", "final"):
        raise ValueError(f"unknown HER strategy {strategy!r}")
    if k == 0:
        return episode.copy()
    T = len(episode)
    rows = []
    for t in range(T):
        rows.append((t, None))
        for _ in range(k):
            if strategy == "final" or t + 1 >= T:
                u = T - 1
            else:
                u = int(rng.integers(t + 1, T))
            rows.append((t, u))
    idx = np.array([t for t, _ in rows])
    out = replace(
        episode,
        robot=episode.robot[idx].copy(),
        objects=episode.objects[idx].copy(),
        next_robot=episode.next_robot[idx].copy(),
        next_objects=episode.next_objects[idx].copy(),
        action=episode.action[idx].copy(),
        reward=episode.reward[idx].copy(),
        done=episode.done[idx].copy(),
        cond=episode.cond[idx].copy(),
        achieved_next=episode.achieved_next[idx].copy(),
        w=episode.w[idx].copy(),
        z=None if episode.z is None else episode.z[idx].copy(),
    )
    for row, (t, u) in enumerate(rows):
        if u is None:
            continue
        new_goal = episode.achieved_next[u]
        out.cond[row, :GOAL_VEC_DIM] = goal_to_vec(new_goal)
        out.reward[row] = reward_fn(episode.achieved_next[t], new_goal)
    return out


class ReplayBuffer:
    """Ring of whole episodes with uniform transition sampling."""

    def __init__(self, capacity: int, rng: np.random.Generator):
        self.capacity = capacity
        self.rng = rng
        self.episodes: list[EpisodeData] = []
        self._total = 0
        self._lengths: np.ndarray | None = None

    def __len__(self) -> int:
        return self._total

    def add_episode(self, episode: EpisodeData) -> None:
        self.episodes.append(episode)
        self._total += len(episode)
        while self._total > self.capacity and len(self.episodes) > 1:
            dropped = self.episodes.pop(0)
            self._total -= len(dropped)
        self._lengths = None

    def sample_indices(self, batch_size: int) -> list[tuple[int, int]]:
        if self._total == 0:
            raise ValueError("buffer is empty")
        if self._lengths is None:
            self._lengths = np.cumsum([len(e) for e in self.episodes])
        flat = self.rng.integers(0, self._total, size=batch_size)
        eps = np.searchsorted(self._lengths, flat, side="right")
        out = []
        for f, e in zip(flat, eps):
            prev = 0 if e == 0 else self._lengths[e - 1]
            out.append((int(e), int(f - prev)))
        return out

    def sample(self, batch_size: int) -> dict:
        idx = self.sample_indices(batch_size)
        return self.gather(idx)

    def gather(self, idx: list[tuple[int, int]]) -> dict:
        eps = self.episodes
        batch = {
            "robot": np.stack([eps[e].robot[t] for e, t in idx]),
            "objects": np.stack([eps[e].objects[t] for e, t in idx]),
            "next_robot": np.stack([eps[e].next_robot[t] for e, t in idx]),
            "next_objects": np.stack([eps[e].next_objects[t] for e, t in idx]),
            "action": np.stack([eps[e].action[t] for e, t in idx]),
            "reward": np.array([eps[e].reward[t] for e, t in idx]),
            "done": np.array([eps[e].done[t] for e, t in idx]),
            "cond": np.stack([eps[e].cond[t] for e, t in idx]),
            "w": np.stack([eps[e].w[t] for e, t in idx]),
            "task_index": np.array([eps[e].task_index for e, t in idx], dtype=np.int64),
        }
        if all(eps[e].z is not None for e, _ in idx):
            batch["z"] = np.stack([eps[e].z[t] for e, t in idx])
        return batch


def multitask_sample(buffers: dict[int, ReplayBuffer], batch_size: int,
                     ) -> tuple[dict, dict[int, int]]:
    """Equal-share batch over per-task buffers (remainder round-robin).

    Empty buffers are skipped with a warning and the shares renormalize over
    the remaining tasks. Returns (merged batch, task -> share).
    """
    live = [j for j in sorted(buffers) if len(buffers[j]) > 0]
    for j in sorted(buffers):
        if j not in live:
            logger.warning("task %d buffer empty; renormalizing shares", j)
    if not live:
        raise ValueError("all task buffers are empty")
    base, rem = divmod(batch_size, len(live))
    shares = {j: base + (1 if i < rem else 0) for i, j in enumerate(live)}
    parts = [buffers[j].sample(shares[j]) for j in live if shares[j] > 0]
    merged = {k: np.concatenate([p[k] for p in parts]) for k in parts[0]}
    return merged, shares


class TemperatureModel:
    """SAC temperature dual: alpha_j = exp(<log_alpha, T_j>) per task.

    A log-linear map of the one-hot task embedding; the scalar mode is the
    single-task special case. Per-entry Adam keeps absent tasks bit-frozen.
    """

    def __init__(self, n_tasks: int = 0, init_alpha: float = 0.1, lr: float = 3e-4):
        self.per_task = n_tasks > 0
        n = max(n_tasks, 1)
        self.log_alpha = np.full(n, math.log(init_alpha))
        self._m = np.zeros(n)
        self._v = np.zeros(n)
        self._steps = np.zeros(n, dtype=np.int64)
        self.lr = lr
        self.betas = (0.9, 0.999)
        self.eps = 1e-8

    def alpha(self, task_index: np.ndarray | None = None) -> np.ndarray:
        if not self.per_task or task_index is None:
            return np.exp(self.log_alpha[:1])
        return np.exp(self.log_alpha[np.asarray(task_index)])

    def update(self, log_probs: np.ndarray, task_index: np.ndarray | None,
               target_entropy: float) -> float:
        """One dual step: loss = E[-alpha * (log_pi + target)], per task."""
        log_probs = np.asarray(log_probs, dtype=np.float64)
        if not self.per_task or task_index is None:
            task_index = np.zeros(len(log_probs), dtype=np.int64)
        task_index = np.asarray(task_index)
        loss = 0.0
        b1, b2 = self.betas
        for j in np.unique(task_index):
            rows = task_index == j
            gap = float(np.mean(log_probs[rows]) + target_entropy)
            alpha_j = math.exp(self.log_alpha[j])
            loss += -alpha_j * gap * (rows.sum() / len(log_probs))
            grad = -alpha_j * gap
            self._steps[j] += 1
            t = self._steps[j]
            self._m[j] = b1 * self._m[j] + (1 - b1) * grad
            self._v[j] = b2 * self._v[j] + (1 - b2) * grad * grad
            m_hat = self._m[j] / (1 - b1**t)
            v_hat = self._v[j] / (1 - b2**t)
            self.log_alpha[j] -= self.lr * m_hat / (math.sqrt(v_hat) + self.eps)
        return loss

    def state_dict(self) -> dict:
        return {"log_alpha": self.log_alpha.copy(), "m": self._m.copy(),
                "v": self._v.copy(), "steps": self._steps.copy()}

    def load_state_dict(self, state: dict) -> None:
        self.log_alpha = np.asarray(state["log_alpha"]).copy()
        self._m = np.asarray(state["m"]).copy()
        self._v = np.asarray(state["v"]).copy()
        self._steps = np.asarray(state["steps"]).copy()


def _mlp(sizes):
    layers = []
    for i in range(len(sizes) - 2):
        layers += [nn.Linear(sizes[i], sizes[i + 1]), nn.ReLU()]
    layers.append(nn.Linear(sizes[-2], sizes[-1]))
    return nn.Sequential(*layers)


class QNetwork(nn.Module):
    def __init__(self, feature_dim: int, cond_dim: int, action_dim: int, hidden: int = 128):
        super().__init__()
        self.net = _mlp([feature_dim + cond_dim + action_dim, hidden, hidden, 1])

    def forward(self, features, cond, action):
        return self.net(torch.cat([features, cond, action], dim=-1)).squeeze(-1)


class CriticPair(nn.Module):
    """Twin critics plus Polyak-averaged target copies."""

    def __init__(self, feature_dim: int, cond_dim: int, action_dim: int, hidden: int = 128):
        super().__init__()
        self.q1 = QNetwork(feature_dim, cond_dim, action_dim, hidden)
        self.q2 = QNetwork(feature_dim, cond_dim, action_dim, hidden)
        self.q1_target = QNetwork(feature_dim, cond_dim, action_dim, hidden)
        self.q2_target = QNetwork(feature_dim, cond_dim, action_dim, hidden)
        self.q1_target.load_state_dict(self.q1.state_dict())
        self.q2_target.load_state_dict(self.q2.state_dict())
        for p in list(self.q1_target.parameters()) + list(self.q2_target.parameters()):
            p.requires_grad_(False)

    def forward(self, features, cond, action):
        return self.q1(features, cond, action), self.q2(features, cond, action)

    def target_min(self, features, cond, action):
        return torch.min(self.q1_target(features, cond, action),
                         self.q2_target(features, cond, action))

    def polyak(self, tau: float) -> None:
        with torch.no_grad():
            for live, tgt in ((self.q1, self.q1_target), (self.q2, self.q2_target)):
                for p, pt in zip(live.parameters(), tgt.parameters()):
                    pt.mul_(1 - tau).add_(p, alpha=tau)


@dataclass
class SacSettings:
    gamma: float = 0.98
    tau: float = 0.005
    lr: float = 3e-4
    batch_size: int = 256
    hidden: int = 128
    entropy_target: float | None = None  # defaults to -action_dim


class SACTrainer:
    """One owner of all gradient updates for a phase."""

    def __init__(self, policy, extractor, cond_dim: int, action_dim: int,
                 settings: SacSettings, n_tasks: int = 0,
                 generator: torch.Generator | None = None):
        self.policy = policy
        self.extractor = extractor
        self.settings = settings
        self.generator = generator
        self.n_tasks = n_tasks
        self.entropy_target = (settings.entropy_target
                               if settings.entropy_target is not None else -float(action_dim))
        self.critics = CriticPair(extractor.feature_dim, cond_dim, action_dim, settings.hidden)
        self.temperature = TemperatureModel(n_tasks=n_tasks)
        actor_params = [p for p in policy.parameters() if p.requires_grad]
        self.actor_opt = torch.optim.Adam(actor_params, lr=settings.lr)
        # the shared encoder is trained through the critic loss only
        critic_params = list(self.critics.q1.parameters()) + list(self.critics.q2.parameters())
        critic_params += [p for p in extractor.parameters() if p.requires_grad]
        self.critic_opt = torch.optim.Adam(critic_params, lr=settings.lr)

    def update(self, batch: dict, phase: str) -> dict:
        s = self.settings
        robot = torch.as_tensor(batch["robot"], dtype=torch.float32)
        objects = torch.as_tensor(batch["objects"], dtype=torch.float32)
        next_robot = torch.as_tensor(batch["next_robot"], dtype=torch.float32)
        next_objects = torch.as_tensor(batch["next_objects"], dtype=torch.float32)
        w = torch.as_tensor(batch["w"], dtype=torch.float32)
        cond = torch.as_tensor(batch["cond"], dtype=torch.float32)
        action = torch.as_tensor(batch["action"], dtype=torch.float32)
        reward = torch.as_tensor(batch["reward"], dtype=torch.float32)
        done = torch.as_tensor(batch["done"], dtype=torch.float32)
        task_index = batch.get("task_index")

        alpha = torch.as_tensor(
            self.temperature.alpha(task_index if self.n_tasks else None), dtype=torch.float32)

        features = self.extractor(robot, objects, w)
        with torch.no_grad():
            next_features = self.extractor(next_robot, next_objects, w)
            next_action, next_logp = self.policy.rsample(next_features, cond, self.generator)
            target_q = self.critics.target_min(next_features, cond, next_action)
            target = reward + s.gamma * (1.0 - done) * (target_q - alpha * next_logp)

        q1, q2 = self.critics(features, cond, action)
        critic_loss = F.mse_loss(q1, target) + F.mse_loss(q2, target)
        self.critic_opt.zero_grad()
        critic_loss.backward()
        self.critic_opt.step()

        det_features = features.detach()
        pi_action, pi_logp = self.policy.rsample(det_features, cond, self.generator)
        q_pi = torch.min(*self.critics(det_features, cond, pi_action))
        actor_loss = (alpha * pi_logp - q_pi).mean()
        self.actor_opt.zero_grad()
        actor_loss.backward()
        self.actor_opt.step()

        alpha_loss = self.temperature.update(
            pi_logp.detach().numpy(), task_index if self.n_tasks else None, self.entropy_target)

        self.critics.polyak(s.tau)

        record = {
            "critic_loss": float(critic_loss.detach()),
            "actor_loss": float(actor_loss.detach()),
            "alpha_loss": float(alpha_loss),
            "alpha_mean": float(np.mean(self.temperature.alpha(task_index if self.n_tasks else None))),
            "entropy": float(-pi_logp.detach().mean()),
            "target_mean": float(target.mean()),
            "target_max": float(target.max()),
            "target_min": float(target.min()),
            "reward_mean": float(reward.mean()),
        }
        if not all(np.isfinite(v) for v in record.values()):
            raise TrainingAborted(f"non-finite loss in {phase} update: {record}")
        return record

    def state_dicts(self) -> dict:
        return {
            "critics": self.critics.state_dict(),
            "temperature": self.temperature.state_dict(),
        }

    def load_state_dicts(self, state: dict) -> None:
        self.critics.load_state_dict(state["critics"])
        self.temperature.load_state_dict(state["temperature"])
