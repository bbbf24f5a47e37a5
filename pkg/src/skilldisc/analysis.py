"""Behavioral and structural diagnostics.

Trajectory metrics quantify interaction-oriented behavior: the grasp ratio
counts states with the gripper within a threshold of the intended object,
the interaction ratio counts trajectories where that happens in more than a
given fraction of steps (strictly more), and the object-state entropy
histograms visited object positions over a spatial grid, normalized by the
uniform maximum.

Average Fisher Sensitivity measures how unevenly the policy relies on its
primitives: a diagonal Fisher of log pi with respect to per-primitive
intermediates (gating weights or primitive means), normalized across
primitives per feature. The per-primitive totals, renormalized, act as a
pseudo categorical distribution whose entropy summarizes primitive
specialization (0 = single primitive does everything, log N = even reliance).
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
import torch

from .env import WORKSPACE_HI, WORKSPACE_LO


@dataclass
class TrajectorySet:
    """Batched rollouts: gripper (E, T, 3), objects (E, T, n, 3), and the
    index of the intended object per trajectory (E,)."""

    gripper: np.ndarray
    objects: np.ndarray
    intended: np.ndarray

    def __post_init__(self):
        if self.gripper.ndim != 3 or self.objects.ndim != 4:
            raise ValueError("gripper must be (E,T,3) and objects (E,T,n,3)")
        if len(self.gripper) == 0:
            raise ValueError("empty trajectory set")

    @property
    def n_trajectories(self) -> int:
        return self.gripper.shape[0]

    @property
    def horizon(self) -> int:
        return self.gripper.shape[1]

    def intended_positions(self) -> np.ndarray:
        e = np.arange(self.n_trajectories)
        return self.objects[e, :, self.intended, :]

    def save(self, path) -> None:
        np.savez_compressed(path, gripper=self.gripper, objects=self.objects,
                            intended=self.intended)

    @classmethod
    def load(cls, path) -> "TrajectorySet":
        data = np.load(path)
        return cls(gripper=data["gripper"], objects=data["objects"], intended=data["intended"])


def _within_threshold(trajs: TrajectorySet, threshold: float) -> np.ndarray:
    dist = np.linalg.norm(trajs.gripper - trajs.intended_positions(), axis=-1)
    return dist <= threshold


def grasp_ratio(trajs: TrajectorySet, threshold: float = 0.05) -> float:
    """Fraction of all states with the gripper within threshold of the
    intended object."""
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    return float(_within_threshold(trajs, threshold).mean())


def interaction_ratio(trajs: TrajectorySet, threshold: float = 0.05,
                      frac: float = 0.6) -> float:
    """Fraction of trajectories interacting in strictly more than frac of steps."""
    if not 0 < frac < 1:
        raise ValueError("frac must lie in (0, 1)")
    counts = _within_threshold(trajs, threshold).sum(axis=1)
    return float((counts > frac * trajs.horizon).mean())


def state_entropy(trajs: TrajectorySet, bins_per_axis: int = 10,
                  lo: np.ndarray | None = None, hi: np.ndarray | None = None) -> float:
    """Histogram entropy of intended-object positions, in [0, 1].

    0 when every state falls into one spatial bin, 1 for a uniform spread
    over all bins_per_axis^3 cells of the workspace.
    """
    if bins_per_axis < 1:
        raise ValueError("bins_per_axis must be >= 1")
    lo = WORKSPACE_LO if lo is None else lo
    hi = WORKSPACE_HI if hi is None else hi
    pts = trajs.intended_positions().reshape(-1, 3)
    counts, _ = np.histogramdd(pts, bins=bins_per_axis,
                               range=list(zip(lo, hi)))
    total_bins = bins_per_axis**3
    if total_bins == 1:
        return 0.0
    p = counts.reshape(-1) / counts.sum()
    p = p[p > 0]
    return float(-(p * np.log(p)).sum() / np.log(total_bins))


@dataclass
class AfsReport:
    afs_matrix: np.ndarray        # (N, M): share of primitive i in feature m
    afs_per_primitive: np.ndarray  # (N,): AFS(i) = sum_m AFS(i, m)
    pseudo_entropy: float
    degenerate_features: np.ndarray  # feature columns with zero total Fisher
    target: str


def afs(policy, features: torch.Tensor, cond: torch.Tensor, target: str = "gating",
        generator: torch.Generator | None = None,
        entropy_over: str = "primitive") -> AfsReport:
    """Average Fisher Sensitivity of log pi w.r.t. per-primitive intermediates.

    The policy must expose afs_forward(features, cond, target, generator)
    returning (log_probs (B,), h (B, N, M)) with h a grad-enabled leaf.
    Fisher is the batch mean of squared gradients; columns are normalized
    across primitives (zero-total columns fall back to uniform and are
    flagged). The pseudo-entropy is computed over the per-primitive totals
    by default, or per-feature shares with entropy_over="feature".
    """
    log_probs, h = policy.afs_forward(features, cond, target, generator)
    (grads,) = torch.autograd.grad(log_probs.sum(), h)
    fisher = (grads.double() ** 2).mean(dim=0).numpy()  # (N, M)
    col_totals = fisher.sum(axis=0)
    degenerate = col_totals == 0
    n = fisher.shape[0]
    matrix = np.empty_like(fisher)
    matrix[:, ~degenerate] = fisher[:, ~degenerate] / col_totals[~degenerate]
    matrix[:, degenerate] = 1.0 / n
    per_primitive = matrix.sum(axis=1)
    if entropy_over == "primitive":
        p = per_primitive / per_primitive.sum()
    elif entropy_over == "feature":
        p = (matrix / matrix.sum()).reshape(-1)
    else:
        raise ValueError(f"unknown entropy_over {entropy_over!r}")
    p = p[p > 0]
    pseudo_entropy = float(-(p * np.log(p)).sum())
    return AfsReport(afs_matrix=matrix, afs_per_primitive=per_primitive,
                     pseudo_entropy=pseudo_entropy,
                     degenerate_features=np.flatnonzero(degenerate), target=target)


def mi_curve(records: list[dict] | str, key: str = "jsd_bound",
             window: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Step-indexed, trailing-window-smoothed series of one metrics key."""
    if isinstance(records, str):
        with open(records) as fh:
            records = [json.loads(line) for line in fh if line.strip()]
    rows = [(r["step"], r[key]) for r in records if key in r]
    if not rows:
        raise KeyError(f"no records with key {key!r}")
    steps = np.array([s for s, _ in rows], dtype=np.int64)
    vals = np.array([v for _, v in rows], dtype=np.float64)
    if window > 1:
        smoothed = np.empty_like(vals)
        for i in range(len(vals)):
            smoothed[i] = vals[max(0, i - window + 1): i + 1].mean()
        vals = smoothed
    return steps, vals
