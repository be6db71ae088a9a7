"""Region-aware spatial pooling with trainable correlation weighting, and
temporal pair-average pooling.

Spatial pooling contracts a (batch, channels, frames, nodes) feature map onto
region nodes through a binary assignment matrix. Each source node's share is
modulated by 1 + its correlation value, computed per frame from learned
projections; the bare structural path acts as a residual and can be disabled
for ablations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Parameter, Tensor

SIGMAS = ("tanh", "sigmoid", "softmax")


@dataclass
class PoolingParams:
    """Projection weights and normalization choice for the correlation field."""

    w_phi: Parameter  # (channels, channels/ratio)
    w_psi: Parameter  # (channels, channels/ratio)
    ratio: int
    sigma: str = "tanh"

    @classmethod
    def init(cls, channels: int, ratio: int = 4, sigma: str = "tanh",
             rng=None, dtype=np.float32, name: str = "pool"):
        if ratio < 1:
            raise ValueError("ratio must be >= 1")
        if channels % ratio != 0:
            raise ValueError(f"channels {channels} not divisible by ratio {ratio}")
        if sigma not in SIGMAS:
            raise ValueError(f"sigma must be one of {SIGMAS}")
        rng = rng if rng is not None else np.random.default_rng(0)
        proj = channels // ratio
        return cls(
            w_phi=Parameter(T.glorot(rng, (channels, proj)), name=f"{name}.w_phi", dtype=dtype),
            w_psi=Parameter(T.glorot(rng, (channels, proj)), name=f"{name}.w_psi", dtype=dtype),
            ratio=ratio, sigma=sigma)

    def named_parameters(self, prefix: str):
        return [(f"{prefix}.w_phi", self.w_phi), (f"{prefix}.w_psi", self.w_psi)]


def correlation(x: Tensor, params: PoolingParams) -> Tensor:
    """Per-frame, per-node mean embedding similarity to all nodes, normalized.

    Returns a (batch, frames, nodes) field; with tanh every value lies in
    (-1, 1), with softmax each frame's values sum to 1 over nodes.
    """
    if x.ndim != 4:
        raise ValueError("correlation expects a (batch, channels, frames, nodes) input")
    if x.shape[1] != params.w_phi.shape[0]:
        raise ValueError(f"input channels {x.shape[1]} do not match projection "
                         f"{params.w_phi.shape}")
    u = T.conv1x1(x, params.w_phi)                 # (B, P, T, N)
    v = T.conv1x1(x, params.w_psi)
    ut = T.transpose(u, (0, 2, 3, 1))              # (B, T, N, P)
    vt = T.transpose(v, (0, 2, 1, 3))              # (B, T, P, N)
    sim = T.matmul(ut, vt)                         # (B, T, N, N) inner products
    mean = T.tmean(sim, axes=(3,))                 # mean over the partner node
    if params.sigma == "tanh":
        return T.tanh(mean)
    if params.sigma == "sigmoid":
        return T.sigmoid(mean)
    return T.softmax(mean)                         # over nodes (last axis)


def spatial_pool(x: Tensor, corr: Tensor | None, assignment: Tensor,
                 residual: bool = True) -> Tensor:
    """Contract nodes onto regions: sum of member features weighted by 1 + corr.

    With `corr=None` the correlation term is dropped (plain structural
    pooling); with `residual=False` only the correlation-weighted path remains.
    """
    if x.ndim != 4:
        raise ValueError("spatial_pool expects a 4-D feature map")
    b, c, t, n = x.shape
    if assignment.ndim != 2 or assignment.shape[0] != n:
        raise ValueError(f"assignment {assignment.shape} does not match {n} nodes")
    if corr is None:
        return T.matmul(x, assignment)
    if corr.shape != (b, t, n):
        raise ValueError(f"correlation field {corr.shape} != {(b, t, n)}")
    weights = T.expand(T.reshape(corr, (b, 1, t, n)), (b, c, t, n))
    weighted = T.mul(x, weights)
    pre = T.add(x, weighted) if residual else weighted
    return T.matmul(pre, assignment)


def temporal_pool(x: Tensor) -> Tensor:
    """Average non-overlapping frame pairs; an odd trailing frame passes through."""
    return T.pair_avg_time(x)


def st_pool(x: Tensor, params: PoolingParams | None, assignment: Tensor,
            residual: bool = True, corr_out: list | None = None) -> Tensor:
    """Spatial pooling followed by temporal pair averaging.

    `params=None` selects the purely structural path. `corr_out`, when given,
    receives the correlation field tensor for inspection/export.
    """
    corr = correlation(x, params) if params is not None else None
    if corr is not None and corr_out is not None:
        corr_out.append(corr)
    return temporal_pool(spatial_pool(x, corr, assignment, residual=residual))
