"""Mutual-information intrinsic rewards.

Two estimators drive unsupervised interaction:

1. A Jensen-Shannon variational bound on I(S_o; S_r) between object and
   gripper states. A witness network g(s_o, s_r) produces raw scores which
   are passed through T(x) = log 2 - log(1 + e^-x), with convex conjugate
   f*(t) = -log(2 - e^t). The bound is

       E_joint[ T(g) ] - E_marginal[ f*(T(g)) ]

   where the marginal expectation uses in-batch shuffled (s_o, s_r) pairs.
   Both terms reduce to softplus identities (T(g) = log2 - softplus(-g),
   f*(T(g)) = softplus(g) - log2), which is how they are evaluated; the raw
   closed forms are kept as standalone functions for the record. Note the
   conjugate pairing measures KL(P||M) + KL(Q||M), so the supremum on
   identical variables is log 4, not log 2.

2. A skill-dynamics model q(s_o' | s_o, z) (mixture of diagonal Gaussians
   over the object-state delta). Its conditional-MI reward is the log-ratio
   of the conditioned density against a Monte-Carlo marginal over L skill
   prior samples, clipped to a configurable range.

The combined intrinsic reward is the plain sum of the two pointwise terms.
Pointwise JSD credit is T(g) on the real pair minus the current minibatch's
shuffled-pair mean of f*(T(g)), so the batch mean of the pointwise rewards
equals the batch bound exactly.
"""

from __future__ import annotations

import math

import torch
import torch.nn as nn
import torch.nn.functional as F

LOG_TWO = math.log(2.0)
LOG_STD_MIN = -5.0
LOG_STD_MAX = 2.0


def jsd_witness_transform(raw: torch.Tensor) -> torch.Tensor:
    """T(x) = log 2 - log(1 + e^-x); always strictly below log 2."""
    return LOG_TWO - F.softplus(-raw)


def jsd_conjugate_fstar(t: torch.Tensor) -> torch.Tensor:
    """f*(t) = -log(2 - e^t), defined for t < log 2."""
    t = torch.as_tensor(t)
    if bool((t >= LOG_TWO).any()):
        raise ValueError("f* domain requires t < log 2")
    return -torch.log(2.0 - torch.exp(t))


def _fstar_of_transform(raw: torch.Tensor) -> torch.Tensor:
    # f*(T(raw)) collapses to softplus(raw) - log 2; stable for any raw
    return F.softplus(raw) - LOG_TWO


def _mlp(sizes):
    layers = []
    for i in range(len(sizes) - 2):
        layers += [nn.Linear(sizes[i], sizes[i + 1]), nn.ReLU()]
    layers.append(nn.Linear(sizes[-2], sizes[-1]))
    return nn.Sequential(*layers)


class JsdEstimator(nn.Module):
    """Witness network plus optimizer for the Jensen-Shannon MI bound."""

    def __init__(self, so_dim: int, sr_dim: int, hidden: int = 64, lr: float = 3e-4,
                 input_scale: float = 1.0):
        super().__init__()
        self.so_dim = so_dim
        self.sr_dim = sr_dim
        self.input_scale = input_scale
        self.net = _mlp([so_dim + sr_dim, hidden, hidden, 1])
        self.opt = torch.optim.Adam(self.net.parameters(), lr=lr)

    def witness(self, s_o: torch.Tensor, s_r: torch.Tensor) -> torch.Tensor:
        x = torch.cat([s_o, s_r], dim=-1) * self.input_scale
        return self.net(x).squeeze(-1)

    def _terms(self, s_o: torch.Tensor, s_r: torch.Tensor,
               generator: torch.Generator | None) -> tuple[torch.Tensor, torch.Tensor]:
        """Per-sample joint T values and the shuffled-pair marginal mean."""
        if s_o.shape[0] < 2:
            raise ValueError("bound needs at least 2 samples to shuffle")
        joint = jsd_witness_transform(self.witness(s_o, s_r))
        perm = torch.randperm(s_o.shape[0], generator=generator)
        marginal = _fstar_of_transform(self.witness(s_o, s_r[perm])).mean()
        return joint, marginal

    def lower_bound(self, s_o, s_r, generator: torch.Generator | None = None) -> float:
        with torch.no_grad():
            joint, marginal = self._terms(s_o, s_r, generator)
        return float(joint.mean() - marginal)

    def pointwise_reward(self, s_o, s_r, marginal_stat: float) -> torch.Tensor:
        """r1 = T(g(s_o, s_r)) - current shuffled-pair f* mean."""
        with torch.no_grad():
            return jsd_witness_transform(self.witness(s_o, s_r)) - marginal_stat

    def reward_batch(self, s_o, s_r, generator: torch.Generator | None = None) -> torch.Tensor:
        """Pointwise r1 for a batch; its mean equals the batch bound."""
        with torch.no_grad():
            joint, marginal = self._terms(s_o, s_r, generator)
        return joint - marginal

    def update(self, s_o, s_r, generator: torch.Generator | None = None) -> float:
        """One ascent step on the bound; returns the pre-step bound value."""
        joint, marginal = self._terms(s_o, s_r, generator)
        bound = joint.mean() - marginal
        self.opt.zero_grad()
        (-bound).backward()
        self.opt.step()
        return float(bound.detach())


class DvEstimator(nn.Module):
    """Donsker-Varadhan comparison estimator (diagnostics only)."""

    def __init__(self, so_dim: int, sr_dim: int, hidden: int = 64, lr: float = 3e-4,
                 input_scale: float = 1.0):
        super().__init__()
        self.input_scale = input_scale
        self.net = _mlp([so_dim + sr_dim, hidden, hidden, 1])
        self.opt = torch.optim.Adam(self.net.parameters(), lr=lr)

    def witness(self, s_o, s_r):
        return self.net(torch.cat([s_o, s_r], dim=-1) * self.input_scale).squeeze(-1)

    def _bound(self, s_o, s_r, generator):
        if s_o.shape[0] < 2:
            raise ValueError("bound needs at least 2 samples to shuffle")
        joint = self.witness(s_o, s_r).mean()
        perm = torch.randperm(s_o.shape[0], generator=generator)
        marg = self.witness(s_o, s_r[perm])
        return joint - (torch.logsumexp(marg, dim=0) - math.log(marg.shape[0]))

    def lower_bound(self, s_o, s_r, generator: torch.Generator | None = None) -> float:
        with torch.no_grad():
            return float(self._bound(s_o, s_r, generator))

    def update(self, s_o, s_r, generator: torch.Generator | None = None) -> float:
        bound = self._bound(s_o, s_r, generator)
        self.opt.zero_grad()
        (-bound).backward()
        self.opt.step()
        return float(bound.detach())


def dv_lower_bound(joint_scores: torch.Tensor, marginal_scores: torch.Tensor) -> float:
    """mean_joint[g] - log mean_marginal[e^g] on precomputed witness scores."""
    lse = torch.logsumexp(marginal_scores, dim=0) - math.log(marginal_scores.shape[0])
    return float(joint_scores.mean() - lse)


class SkillDynamics(nn.Module):
    """Mixture-of-Gaussians predictor of the object-state delta given (s_o, z).

    The conditional-MI reward contrasts the conditioned log-density against
    a Monte-Carlo marginal over skill prior samples (uniform on [-1, 1]^z).
    """

    def __init__(self, so_dim: int, z_dim: int, hidden: int = 64, n_components: int = 4,
                 lr: float = 3e-4, input_scale: float = 1.0):
        super().__init__()
        self.so_dim = so_dim
        self.z_dim = z_dim
        self.n_components = n_components
        self.input_scale = input_scale
        out = n_components * (1 + 2 * so_dim)
        self.net = _mlp([so_dim + z_dim, hidden, hidden, out])
        self.opt = torch.optim.Adam(self.net.parameters(), lr=lr)

    def _mixture(self, s_o: torch.Tensor, z: torch.Tensor):
        x = torch.cat([s_o * self.input_scale, z], dim=-1)
        out = self.net(x)
        k, d = self.n_components, self.so_dim
        log_w = torch.log_softmax(out[..., :k], dim=-1)
        means = out[..., k : k + k * d].reshape(*out.shape[:-1], k, d)
        raw = out[..., k + k * d :].reshape(*out.shape[:-1], k, d)
        log_std = LOG_STD_MIN + 0.5 * (LOG_STD_MAX - LOG_STD_MIN) * (torch.tanh(raw) + 1.0)
        return log_w, means, log_std

    def log_prob(self, s_o: torch.Tensor, z: torch.Tensor, s_o_next: torch.Tensor) -> torch.Tensor:
        """log q(s_o' | s_o, z), evaluated on the delta s_o' - s_o."""
        log_w, means, log_std = self._mixture(s_o, z)
        delta = ((s_o_next - s_o) * self.input_scale).unsqueeze(-2)
        comp = -0.5 * (((delta - means) / torch.exp(log_std)) ** 2 + math.log(2 * math.pi)) - log_std
        # density of the scaled delta; constant Jacobian term keeps it a
        # proper density over the raw delta
        jac = self.so_dim * math.log(self.input_scale)
        return torch.logsumexp(log_w + comp.sum(dim=-1), dim=-1) + jac

    def reward(self, s_o: torch.Tensor, z: torch.Tensor, s_o_next: torch.Tensor,
               prior_samples: torch.Tensor, clip: float = 50.0) -> torch.Tensor:
        """r2 = log q(s_o'|s_o,z) - log (1/L) sum_l q(s_o'|s_o,z_l), clipped.

        Evaluated as log L - logsumexp_l(lp_l - lp): when the model ignores z
        every lp_l equals lp bitwise and the reward is exactly zero.
        """
        L = prior_samples.shape[0]
        with torch.no_grad():
            lp = self.log_prob(s_o, z, s_o_next)
            b = s_o.shape[0]
            s_rep = s_o.unsqueeze(1).expand(b, L, self.so_dim).reshape(-1, self.so_dim)
            n_rep = s_o_next.unsqueeze(1).expand(b, L, self.so_dim).reshape(-1, self.so_dim)
            z_rep = prior_samples.unsqueeze(0).expand(b, L, self.z_dim).reshape(-1, self.z_dim)
            lp_marg = self.log_prob(s_rep, z_rep, n_rep).reshape(b, L)
            r = math.log(L) - torch.logsumexp(lp_marg - lp.unsqueeze(1), dim=1)
        return torch.clamp(r, -clip, clip)

    def update(self, s_o, z, s_o_next) -> float:
        """One maximum-likelihood step; returns the pre-step NLL."""
        nll = -self.log_prob(s_o, z, s_o_next).mean()
        self.opt.zero_grad()
        nll.backward()
        self.opt.step()
        return float(nll.detach())


def sample_skill_prior(n: int, z_dim: int, generator: torch.Generator | None = None) -> torch.Tensor:
    return torch.rand(n, z_dim, generator=generator) * 2.0 - 1.0


def combined_reward(jsd: JsdEstimator, dynamics: SkillDynamics,
                    s_o: torch.Tensor, s_r: torch.Tensor, z: torch.Tensor,
                    s_o_next: torch.Tensor, n_prior_samples: int = 64, clip: float = 50.0,
                    generator: torch.Generator | None = None,
                    jsd_weight: float = 1.0, dads_weight: float = 1.0) -> torch.Tensor:
    """Per-transition intrinsic reward r1 + r2 (weights default to the plain sum)."""
    r1 = jsd.reward_batch(s_o, s_r, generator=generator)
    prior = sample_skill_prior(n_prior_samples, dynamics.z_dim, generator=generator)
    r2 = dynamics.reward(s_o, z, s_o_next, prior, clip=clip)
    return jsd_weight * r1 + dads_weight * r2
