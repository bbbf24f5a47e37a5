"""Multiplicative compositional policy.

A bank of N state-conditioned Gaussian primitives is fused by a nonnegative
gating network into a single diagonal Gaussian per action dimension:

    sigma_j = ( sum_i W_i / sigma_ij )^-1
    mu_j    = sigma_j * sum_i (W_i / sigma_ij) * mu_ij

Note the first power of sigma in the precision-like terms; that is the form
implemented and tested here (the squared-sigma product-of-Gaussians variant
is deliberately not used). Scaling every gate by c > 0 leaves the mean alone
and shrinks the composed std by 1/c.

Composition happens in pre-squash space; actions are tanh-squashed to
[-1, 1]^4 with the exact change-of-variables log-density correction.
Primitives condition on the state feature only, so they can be frozen after
pretraining and reused while the gating is retrained on a new conditioning
signal (skill latent -> goal -> goal + task embedding).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigError, DegenerateGatingError

LOG_STD_MIN = -5.0
LOG_STD_MAX = 2.0
W_FLOOR = 1e-4
ACTION_DIM = 4
Z_DIM = 2
GOAL_VEC_DIM = 3  # articulated 1-D goals are zero-padded to this width


@dataclass
class ComposedGaussian:
    """Diagonal Gaussian over pre-squash actions."""

    mean: torch.Tensor
    std: torch.Tensor


@dataclass
class Conditioning:
    """Tagged union over the three conditioning variants.

    Exactly one of skill z, goal g, or goal+task (g, T) is active; the
    intention vector w rides along in multi-object mode and feeds the
    encoder, not the gating input.
    """

    z: np.ndarray | None = None
    goal: np.ndarray | None = None
    task_onehot: np.ndarray | None = None
    w: np.ndarray | None = None

    def __post_init__(self):
        if self.task_onehot is not None and self.goal is None:
            raise ConfigError("task conditioning requires a goal")
        if (self.z is None) == (self.goal is None):
            raise ConfigError("exactly one of z or goal must be set")
        if self.z is not None and np.any(np.abs(self.z) > 1.0):
            raise ConfigError("z outside the [-1, 1] prior support")

    @property
    def variant(self) -> str:
        if self.z is not None:
            return "skill"
        return "goal" if self.task_onehot is None else "goal_task"

    def vec(self) -> np.ndarray:
        """Gating-side conditioning vector (z, padded g, or padded g + T)."""
        if self.z is not None:
            return np.asarray(self.z, dtype=np.float64)
        g = goal_to_vec(self.goal)
        if self.task_onehot is None:
            return g
        return np.concatenate([g, np.asarray(self.task_onehot, dtype=np.float64)])


def goal_to_vec(goal: np.ndarray, width: int = GOAL_VEC_DIM) -> np.ndarray:
    g = np.asarray(goal, dtype=np.float64).reshape(-1)
    if len(g) > width:
        raise ConfigError(f"goal dim {len(g)} exceeds goal vector width {width}")
    out = np.zeros(width)
    out[: len(g)] = g
    return out


def cond_dim_for(variant: str, z_dim: int = Z_DIM, n_tasks: int = 0) -> int:
    if variant == "skill":
        return z_dim
    if variant == "goal":
        return GOAL_VEC_DIM
    if variant == "goal_task":
        return GOAL_VEC_DIM + n_tasks
    raise ConfigError(f"unknown conditioning variant {variant!r}")


def compose(means: torch.Tensor, stds: torch.Tensor, weights: torch.Tensor) -> ComposedGaussian:
    """Fuse N primitives with nonnegative gates, exactly as stated above.

    means, stds: (..., N, A); weights: (..., N). Raises DegenerateGatingError
    when the gate sum falls below the floor.
    """
    total = weights.sum(dim=-1)
    if torch.any(total < W_FLOOR):
        raise DegenerateGatingError(f"gate sum {float(total.min()):.3e} below floor {W_FLOOR}")
    precision = weights.unsqueeze(-1) / stds
    std = 1.0 / precision.sum(dim=-2)
    mean = std * (precision * means).sum(dim=-2)
    return ComposedGaussian(mean=mean, std=std)


def _bounded_log_std(raw: torch.Tensor) -> torch.Tensor:
    # tanh keeps sigma inside [e^LOG_STD_MIN, e^LOG_STD_MAX]
    return LOG_STD_MIN + 0.5 * (LOG_STD_MAX - LOG_STD_MIN) * (torch.tanh(raw) + 1.0)


def _squash_correction(x: torch.Tensor) -> torch.Tensor:
    # log(1 - tanh(x)^2) evaluated stably
    return 2.0 * (math.log(2.0) - x - F.softplus(-2.0 * x))


def _mlp(sizes: list[int]) -> nn.Sequential:
    layers = []
    for i in range(len(sizes) - 2):
        layers += [nn.Linear(sizes[i], sizes[i + 1]), nn.ReLU()]
    layers.append(nn.Linear(sizes[-2], sizes[-1]))
    return nn.Sequential(*layers)


class PrimitiveSet(nn.Module):
    """N Gaussian primitives over the action space, conditioned on the feature only."""

    def __init__(self, feature_dim: int, n_primitives: int = 8, action_dim: int = ACTION_DIM,
                 hidden: int = 128):
        super().__init__()
        self.n_primitives = n_primitives
        self.action_dim = action_dim
        self.feature_dim = feature_dim
        self.trunk = _mlp([feature_dim, hidden, hidden, 2 * n_primitives * action_dim])
        self.frozen = False

    def forward(self, features: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        out = self.trunk(features)
        n, a = self.n_primitives, self.action_dim
        means = out[..., : n * a].reshape(*out.shape[:-1], n, a)
        log_stds = _bounded_log_std(out[..., n * a :].reshape(*out.shape[:-1], n, a))
        return means, torch.exp(log_stds)


class GatingNet(nn.Module):
    """Nonnegative gates W_i(feature, cond) with a collapse floor.

    Softplus keeps every gate >= 0; if the sum still drops below W_FLOOR the
    weights are rescaled up to the floor (uniform fallback if they are all
    exactly zero), so composition never divides by a vanishing gate sum.
    """

    def __init__(self, feature_dim: int, cond_dim: int, n_primitives: int = 8, hidden: int = 128):
        super().__init__()
        self.feature_dim = feature_dim
        self.cond_dim = cond_dim
        self.n_primitives = n_primitives
        self.net = _mlp([feature_dim + cond_dim, hidden, hidden, n_primitives])

    def forward(self, features: torch.Tensor, cond: torch.Tensor) -> torch.Tensor:
        if cond.shape[-1] != self.cond_dim:
            raise ConfigError(f"conditioning width {cond.shape[-1]} != expected {self.cond_dim}")
        w = F.softplus(self.net(torch.cat([features, cond], dim=-1)))
        total = w.sum(dim=-1, keepdim=True)
        low = total < W_FLOOR
        if bool(low.any()):
            scaled = w * (W_FLOOR / total.clamp_min(1e-30))
            uniform = torch.full_like(w, W_FLOOR / self.n_primitives)
            w = torch.where(low & (total > 0), scaled, torch.where(low, uniform, w))
        return w


class MCPPolicy(nn.Module):
    """Primitives + gating, with freeze/reinit hooks for transfer."""

    def __init__(self, feature_dim: int, cond_dim: int, n_primitives: int = 8,
                 action_dim: int = ACTION_DIM, hidden: int = 128):
        super().__init__()
        self.primitives = PrimitiveSet(feature_dim, n_primitives, action_dim, hidden)
        self.gating = GatingNet(feature_dim, cond_dim, n_primitives, hidden)
        self.hidden = hidden

    @property
    def action_dim(self) -> int:
        return self.primitives.action_dim

    def dist(self, features: torch.Tensor, cond: torch.Tensor) -> ComposedGaussian:
        means, stds = self.primitives(features)
        weights = self.gating(features, cond)
        return compose(means, stds, weights)

    def act(self, features: torch.Tensor, cond: torch.Tensor, deterministic: bool = False,
            generator: torch.Generator | None = None) -> tuple[torch.Tensor, torch.Tensor | None]:
        """Squashed action in [-1, 1]^A and its log-density (None when deterministic)."""
        d = self.dist(features, cond)
        if deterministic:
            return torch.tanh(d.mean), None
        eps = torch.randn(d.mean.shape, generator=generator, dtype=d.mean.dtype)
        x = d.mean + d.std * eps
        return torch.tanh(x), self._log_prob_presquash(d, x)

    def rsample(self, features: torch.Tensor, cond: torch.Tensor,
                generator: torch.Generator | None = None) -> tuple[torch.Tensor, torch.Tensor]:
        """Reparameterized sample for the actor loss."""
        d = self.dist(features, cond)
        eps = torch.randn(d.mean.shape, generator=generator, dtype=d.mean.dtype)
        x = d.mean + d.std * eps
        return torch.tanh(x), self._log_prob_presquash(d, x)

    @staticmethod
    def _log_prob_presquash(d: ComposedGaussian, x: torch.Tensor) -> torch.Tensor:
        base = -0.5 * (((x - d.mean) / d.std) ** 2 + math.log(2 * math.pi)) - torch.log(d.std)
        return (base - _squash_correction(x)).sum(dim=-1)

    def freeze_primitives(self) -> "MCPPolicy":
        """Exclude primitive parameters from any future optimizer. Idempotent."""
        for p in self.primitives.parameters():
            p.requires_grad_(False)
        self.primitives.frozen = True
        return self

    def reinit_gating(self, cond_dim: int) -> "MCPPolicy":
        """Fresh gating for a new conditioning width; primitives untouched."""
        self.gating = GatingNet(self.primitives.feature_dim, cond_dim,
                                self.primitives.n_primitives, self.hidden)
        return self

    def afs_forward(self, features: torch.Tensor, cond: torch.Tensor, target: str,
                    generator: torch.Generator | None = None) -> tuple[torch.Tensor, torch.Tensor]:
        """Log-density of fresh policy actions as a function of a per-primitive
        intermediate (gates or primitive means), exposed as a grad-enabled leaf.

        Returns (log_probs (B,), h) with h of shape (B, N, 1) for gating or
        (B, N, A) for primitive means.
        """
        with torch.no_grad():
            means, stds = self.primitives(features)
            weights = self.gating(features, cond)
        if target == "gating":
            h = weights.detach().clone().unsqueeze(-1).requires_grad_(True)
            d = compose(means, stds, h.squeeze(-1))
        elif target == "primitive_mean":
            h = means.detach().clone().requires_grad_(True)
            d = compose(h, stds, weights)
        else:
            raise ValueError(f"unknown AFS target {target!r}")
        with torch.no_grad():
            eps = torch.randn(d.mean.shape, generator=generator, dtype=d.mean.dtype)
            x = (d.mean + d.std * eps).detach()
        return self._log_prob_presquash(d, x), h


class GaussianPolicy(nn.Module):
    """Minimal squashed-Gaussian baseline with the same calling surface."""

    def __init__(self, feature_dim: int, cond_dim: int, action_dim: int = ACTION_DIM,
                 hidden: int = 128):
        super().__init__()
        self.action_dim = action_dim
        self.net = _mlp([feature_dim + cond_dim, hidden, hidden, 2 * action_dim])

    def dist(self, features: torch.Tensor, cond: torch.Tensor) -> ComposedGaussian:
        out = self.net(torch.cat([features, cond], dim=-1))
        mean = out[..., : self.action_dim]
        std = torch.exp(_bounded_log_std(out[..., self.action_dim :]))
        return ComposedGaussian(mean=mean, std=std)

    def act(self, features, cond, deterministic=False, generator=None):
        d = self.dist(features, cond)
        if deterministic:
            return torch.tanh(d.mean), None
        eps = torch.randn(d.mean.shape, generator=generator, dtype=d.mean.dtype)
        x = d.mean + d.std * eps
        return torch.tanh(x), MCPPolicy._log_prob_presquash(d, x)

    def rsample(self, features, cond, generator=None):
        d = self.dist(features, cond)
        eps = torch.randn(d.mean.shape, generator=generator, dtype=d.mean.dtype)
        x = d.mean + d.std * eps
        return torch.tanh(x), MCPPolicy._log_prob_presquash(d, x)

    def freeze_primitives(self):
        return self

    def reinit_gating(self, cond_dim: int):
        raise ConfigError("gaussian baseline has no gating to reinitialize")


def parameter_checksum(module: nn.Module) -> str:
    """Stable digest of all parameters, for freeze contracts."""
    import hashlib

    h = hashlib.sha256()
    for name, p in sorted(module.state_dict().items()):
        h.update(name.encode())
        h.update(p.detach().cpu().numpy().tobytes())
    return h.hexdigest()
