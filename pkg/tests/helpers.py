"""Shared oracles and fixtures for the test suite.

Everything here is deliberately independent of the library's own math paths:
quadrature integrals, scalar loops, and scripted controllers used to check
the real implementations from the outside.
"""

import numpy as np
import torch
from scipy.stats import multivariate_normal

from skilldisc import env
from skilldisc.intrinsic import JsdEstimator


def quadrature_jsd_fgan(cov_joint, grid_half_width=8.0, n=1201):
    """KL(P||M) + KL(Q||M) for P = N(0, cov_joint), Q = product of marginals.

    This is the f-divergence the witness transform/conjugate pair actually
    bounds (its supremum on identical variables is log 4). Computed by brute
    2-D quadrature on a regular grid.
    """
    cov_joint = np.asarray(cov_joint, dtype=np.float64)
    q_cov = np.diag(np.diag(cov_joint))
    xs = np.linspace(-grid_half_width, grid_half_width, n)
    dx = xs[1] - xs[0]
    xx, yy = np.meshgrid(xs, xs, indexing="ij")
    pts = np.stack([xx.ravel(), yy.ravel()], axis=1)
    p = multivariate_normal(mean=[0, 0], cov=cov_joint).pdf(pts)
    q = multivariate_normal(mean=[0, 0], cov=q_cov).pdf(pts)
    m = 0.5 * (p + q)
    kl_pm = np.sum(p * (np.log(p) - np.log(m))) * dx * dx
    kl_qm = np.sum(q * (np.log(q) - np.log(m))) * dx * dx
    return kl_pm + kl_qm


def correlated_gaussian_batch(rng, n, rho=0.9):
    s_o = rng.standard_normal((n, 1))
    s_r = rho * s_o + np.sqrt(1 - rho**2) * rng.standard_normal((n, 1))
    return (torch.as_tensor(s_o, dtype=torch.float32),
            torch.as_tensor(s_r, dtype=torch.float32))


def independent_batch(rng, n):
    return (torch.as_tensor(rng.standard_normal((n, 1)), dtype=torch.float32),
            torch.as_tensor(rng.standard_normal((n, 1)), dtype=torch.float32))


def train_jsd_on(sampler, seed, steps=3000, batch=512, hidden=64, lr=1e-3):
    """Fit a fresh witness to a data sampler; returns the estimator."""
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    est = JsdEstimator(so_dim=1, sr_dim=1, hidden=hidden, lr=lr)
    gen = torch.Generator().manual_seed(seed)
    for _ in range(steps):
        s_o, s_r = sampler(rng, batch)
        est.update(s_o, s_r, generator=gen)
    return est


def eval_jsd(est, sampler, seed, n_batches=40, batch=2048):
    rng = np.random.default_rng(seed)
    gen = torch.Generator().manual_seed(seed)
    vals = [est.lower_bound(*sampler(rng, batch), generator=gen) for _ in range(n_batches)]
    return float(np.mean(vals))


def scripted_pick_place(obs, goal, w=None):
    """Hand-written pick&place controller for the toy simulator.

    Reach above the object, descend, close, carry to the goal. Assumes the
    single-object layout (robot block then one object block).
    """
    gripper = obs.robot_block[:3]
    idx = 0 if w is None else int(np.argmax(w))
    obj = obs.object_blocks[idx, :3]
    aim = np.zeros(4)
    if np.linalg.norm(gripper - obj) > 0.02:
        # not holding yet: line up in xy first, then descend
        delta = obj - gripper
        if np.linalg.norm(delta[:2]) > 0.01:
            aim[:2] = delta[:2] / env.MAX_STEP
            aim[2] = (obj[2] + 0.05 - gripper[2]) / env.MAX_STEP
        else:
            aim[:3] = delta / env.MAX_STEP
        aim[3] = 1.0
    else:
        aim[:3] = (goal - gripper) / env.MAX_STEP
        aim[3] = -1.0
    return np.clip(aim, -1.0, 1.0)
