"""Generic spatial-temporal graph convolution block and batch normalization.

One block is: pointwise channel update, right-multiplication by a normalized
adjacency (the neighbor aggregation), batch norm, rectifier, temporal
convolution, and an identity skip when shapes line up. The adjacency is a
fixed constant per graph resolution.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Parameter, Tensor


@dataclass
class BatchNorm:
    """Per-channel normalization with trainable affine and running moments."""

    gamma: Parameter
    beta: Parameter
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.1
    eps: float = 1e-5

    @classmethod
    def init(cls, channels: int, dtype=np.float32, name: str = "norm"):
        return cls(
            gamma=Parameter(np.ones(channels), name=f"{name}.gamma", decay=False, dtype=dtype),
            beta=Parameter(np.zeros(channels), name=f"{name}.beta", decay=False, dtype=dtype),
            running_mean=np.zeros(channels, dtype=dtype),
            running_var=np.ones(channels, dtype=dtype))

    def named_parameters(self, prefix: str):
        return [(f"{prefix}.gamma", self.gamma), (f"{prefix}.beta", self.beta)]

    def named_state(self, prefix: str):
        return [(f"{prefix}.running_mean", self.running_mean),
                (f"{prefix}.running_var", self.running_var)]


def batch_normalize(x: Tensor, norm: BatchNorm, train: bool) -> Tensor:
    """Train mode: batch statistics (and a running-moment update). Eval mode:
    a pure affine map from the saved moments."""
    if x.shape[1] != norm.gamma.shape[0]:
        raise ValueError(f"batch_normalize: {x.shape[1]} channels vs "
                         f"{norm.gamma.shape[0]} norm parameters")
    if train:
        if x.shape[0] == 0:
            raise ValueError("batch_normalize: empty batch")
        axes = tuple(i for i in range(x.ndim) if i != 1)
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        norm.running_mean += norm.momentum * (mu - norm.running_mean)
        norm.running_var += norm.momentum * (var - norm.running_var)
        return T.batch_norm_train(x, norm.gamma, norm.beta, eps=norm.eps)
    scale = norm.gamma.data / np.sqrt(norm.running_var + norm.eps)
    shift = norm.beta.data - norm.running_mean * scale
    return T.channel_affine(x, Tensor(scale.astype(x.dtype)), Tensor(shift.astype(x.dtype)))


def spatial_graph_conv(x: Tensor, w: Tensor, adjacency: Tensor) -> Tensor:
    """Pointwise channel update followed by neighbor aggregation over the graph."""
    n = x.shape[3]
    if adjacency.shape != (n, n):
        raise ValueError(f"adjacency {adjacency.shape} does not match {n} nodes")
    return T.matmul(T.conv1x1(x, w), adjacency)


def temporal_conv(x: Tensor, w: Tensor, stride: int = 1) -> Tensor:
    """Per-node 1-D convolution along frames (odd kernel, symmetric padding)."""
    return T.temporal_conv(x, w, stride=stride)


@dataclass
class GraphConvParams:
    """Weights for one spatial-temporal block on a fixed graph resolution."""

    w_spatial: Parameter   # (c_in, c_out)
    w_temporal: Parameter  # (c_out, c_out, kernel)
    norm: BatchNorm
    norm_out: BatchNorm
    kernel: int = 5
    stride: int = 1

    @classmethod
    def init(cls, c_in: int, c_out: int, kernel: int = 5, stride: int = 1,
             rng=None, dtype=np.float32, name: str = "gcn"):
        if kernel % 2 == 0:
            raise ValueError("temporal kernel must be odd")
        rng = rng if rng is not None else np.random.default_rng(0)
        return cls(
            w_spatial=Parameter(T.glorot(rng, (c_in, c_out)),
                                name=f"{name}.w_spatial", dtype=dtype),
            w_temporal=Parameter(T.glorot(rng, (c_out, c_out, kernel),
                                          fan_in=c_out * kernel, fan_out=c_out * kernel),
                                 name=f"{name}.w_temporal", dtype=dtype),
            norm=BatchNorm.init(c_out, dtype=dtype, name=f"{name}.norm"),
            norm_out=BatchNorm.init(c_out, dtype=dtype, name=f"{name}.norm_out"),
            kernel=kernel, stride=stride)

    def named_parameters(self, prefix: str):
        return ([(f"{prefix}.w_spatial", self.w_spatial),
                 (f"{prefix}.w_temporal", self.w_temporal)]
                + self.norm.named_parameters(f"{prefix}.norm")
                + self.norm_out.named_parameters(f"{prefix}.norm_out"))

    def named_state(self, prefix: str):
        return (self.norm.named_state(f"{prefix}.norm")
                + self.norm_out.named_state(f"{prefix}.norm_out"))


def gcn_block(x: Tensor, params: GraphConvParams, adjacency: Tensor, train: bool) -> Tensor:
    """spatial conv -> norm -> rectifier -> temporal conv -> norm (+ skip) -> rectifier.

    Normalizing after each convolution keeps activations bounded across stacked
    stages; the skip applies whenever shapes line up.
    """
    y = spatial_graph_conv(x, params.w_spatial, adjacency)
    y = batch_normalize(y, params.norm, train)
    y = T.relu(y)
    y = temporal_conv(y, params.w_temporal, stride=params.stride)
    y = batch_normalize(y, params.norm_out, train)
    if y.shape == x.shape:
        y = T.add(y, x)
    return T.relu(y)
