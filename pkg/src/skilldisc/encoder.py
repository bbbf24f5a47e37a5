"""Set-attention state encoder for the multi-object setting.

Each object contributes one token: the robot block, that object's block,
its one-hot identity indicator, and the intention vector w, concatenated.
Tokens pass through pre-normalization attention blocks (no positional
embedding, since only object identity matters) and are mean-pooled into a
fixed-width feature, so one parameter set serves any object count up to
max_objects. With a single object the encoder is bypassed entirely and the
flat observation is the feature.

The encoder runs in float64 internally; permutation invariance is then far
below the 1e-6 tolerance the rest of the system assumes.
"""

from __future__ import annotations

import numpy as np
import torch
import torch.nn as nn

from .env import OBJECT_BLOCK_DIM, ROBOT_BLOCK_DIM, Observation
from .errors import ConfigError


def token_dim(max_objects: int) -> int:
    return ROBOT_BLOCK_DIM + OBJECT_BLOCK_DIM + 2 * max_objects


def tokenize(obs: Observation, w: np.ndarray) -> np.ndarray:
    """Build the (n_objects, token_dim) token set for one observation."""
    w = np.asarray(w, dtype=np.float64)
    max_objects = obs.layout_manifest["indicator_dim"]
    if w.shape != (max_objects,):
        raise ConfigError(f"w must have length {max_objects}, got {w.shape}")
    if not (np.count_nonzero(w) == 1 and np.isclose(w.sum(), 1.0) and np.all((w == 0) | (w == 1))):
        raise ConfigError("w must be one-hot")
    n = obs.object_blocks.shape[0]
    tokens = np.empty((n, token_dim(max_objects)))
    for i in range(n):
        tokens[i] = np.concatenate([obs.robot_block, obs.object_blocks[i], obs.indicator_blocks[i], w])
    return tokens


class _PreNormBlock(nn.Module):
    def __init__(self, width: int, n_heads: int, mlp_width: int):
        super().__init__()
        self.ln_attn = nn.LayerNorm(width)
        self.attn = nn.MultiheadAttention(width, n_heads, batch_first=True)
        self.ln_mlp = nn.LayerNorm(width)
        self.mlp = nn.Sequential(nn.Linear(width, mlp_width), nn.ReLU(), nn.Linear(mlp_width, width))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = self.ln_attn(x)
        x = x + self.attn(h, h, h, need_weights=False)[0]
        return x + self.mlp(self.ln_mlp(x))


class SetAttentionEncoder(nn.Module):
    """Tokens (B, n, token_dim) -> feature (B, model_width), any n >= 1."""

    def __init__(self, in_dim: int, model_width: int = 64, n_heads: int = 2,
                 n_layers: int = 2, mlp_width: int = 128):
        super().__init__()
        if model_width % n_heads:
            raise ConfigError(f"model_width {model_width} not divisible by n_heads {n_heads}")
        self.in_dim = in_dim
        self.model_width = model_width
        self.in_proj = nn.Linear(in_dim, model_width)
        self.blocks = nn.ModuleList(
            _PreNormBlock(model_width, n_heads, mlp_width) for _ in range(n_layers)
        )
        self.double()

    def forward(self, tokens: torch.Tensor) -> torch.Tensor:
        squeeze = tokens.dim() == 2
        if squeeze:
            tokens = tokens.unsqueeze(0)
        if tokens.shape[1] == 0:
            raise ValueError("empty token set")
        x = self.in_proj(tokens.double())
        for block in self.blocks:
            x = block(x)
        out = x.mean(dim=1)
        return out[0] if squeeze else out


class FeatureExtractor(nn.Module):
    """Policy/critic state feature: encoder output, or the flat observation
    when running single-object."""

    def __init__(self, max_objects: int, multi_object: bool,
                 model_width: int = 64, n_heads: int = 2, n_layers: int = 2, mlp_width: int = 128):
        super().__init__()
        self.max_objects = max_objects
        self.multi_object = multi_object
        if multi_object:
            self.encoder = SetAttentionEncoder(token_dim(max_objects), model_width,
                                               n_heads, n_layers, mlp_width)
            self.feature_dim = model_width
        else:
            self.encoder = None
            self.feature_dim = ROBOT_BLOCK_DIM + OBJECT_BLOCK_DIM

    def forward(self, robot: torch.Tensor, objects: torch.Tensor,
                w: torch.Tensor | None = None) -> torch.Tensor:
        """robot (B, 7), objects (B, n, 6), w (B, max_objects) -> (B, feature_dim)."""
        if not self.multi_object:
            return torch.cat([robot, objects[:, 0, :]], dim=-1)
        if w is None:
            raise ConfigError("multi-object features require an intention vector")
        b, n, _ = objects.shape
        eye = torch.eye(self.max_objects, dtype=objects.dtype)[:n]
        indicators = eye.unsqueeze(0).expand(b, n, self.max_objects)
        tokens = torch.cat([
            robot.unsqueeze(1).expand(b, n, robot.shape[-1]),
            objects,
            indicators,
            w.unsqueeze(1).expand(b, n, self.max_objects),
        ], dim=-1)
        return self.encoder(tokens).to(robot.dtype)

    def features_np(self, obs: Observation, w: np.ndarray | None = None) -> torch.Tensor:
        """Single-observation convenience path used by rollouts."""
        robot = torch.as_tensor(obs.robot_block, dtype=torch.float32).unsqueeze(0)
        objects = torch.as_tensor(obs.object_blocks, dtype=torch.float32).unsqueeze(0)
        wt = None if w is None else torch.as_tensor(w, dtype=torch.float32).unsqueeze(0)
        return self.forward(robot, objects, wt)[0]
