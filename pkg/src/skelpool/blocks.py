"""Composite model blocks: cross fusion, input supplement, feature derivations,
and the classification head.

The cross fusion block runs a coarse branch (pool, then graph-convolve on the
pooled graph) and a fine branch (graph-convolve at full resolution, then pool
to align), and fuses the two as a weighted sum or a channel concatenation with
a learned re-projection.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .gcn import GraphConvParams, batch_normalize, gcn_block, spatial_graph_conv
from .pooling import PoolingParams, st_pool
from .skeleton import SkeletonTopology
from .tensor import Parameter, Tensor

FUSION_MODES = ("sum", "concat")


@dataclass
class CrossFusionParams:
    """Both branches of one cross fusion block.

    `pool_in` pools the block input (c_in channels); `pool_fine` aligns the
    convolved fine branch (c_out channels). Either may be None for the
    non-adaptive (purely structural) pooling mode.
    """

    gcn_coarse: GraphConvParams
    gcn_fine: GraphConvParams
    pool_in: PoolingParams | None
    pool_fine: PoolingParams | None
    weight: float = 0.5
    fuse: str = "sum"
    w_merge: Parameter | None = None  # (2*c_out, c_out), concat mode only
    residual_pool: bool = True

    @classmethod
    def init(cls, c_in: int, c_out: int, ratio: int = 4, sigma: str = "tanh",
             kernel: int = 5, fuse: str = "sum", weight: float = 0.5,
             adaptive: bool = True, residual_pool: bool = True,
             rng=None, dtype=np.float32, name: str = "cfb"):
        if fuse not in FUSION_MODES:
            raise ValueError(f"fuse must be one of {FUSION_MODES}")
        if not 0.0 <= weight <= 1.0:
            raise ValueError("fusion weight must lie in [0, 1]")
        rng = rng if rng is not None else np.random.default_rng(0)
        pool_in = pool_fine = None
        if adaptive:
            pool_in = PoolingParams.init(c_in, ratio=ratio, sigma=sigma, rng=rng,
                                         dtype=dtype, name=f"{name}.pool_in")
            pool_fine = PoolingParams.init(c_out, ratio=ratio, sigma=sigma, rng=rng,
                                           dtype=dtype, name=f"{name}.pool_fine")
        w_merge = None
        if fuse == "concat":
            w_merge = Parameter(T.glorot(rng, (2 * c_out, c_out)),
                                name=f"{name}.w_merge", dtype=dtype)
        return cls(
            gcn_coarse=GraphConvParams.init(c_in, c_out, kernel=kernel, rng=rng,
                                            dtype=dtype, name=f"{name}.gcn_coarse"),
            gcn_fine=GraphConvParams.init(c_in, c_out, kernel=kernel, rng=rng,
                                          dtype=dtype, name=f"{name}.gcn_fine"),
            pool_in=pool_in, pool_fine=pool_fine,
            weight=weight, fuse=fuse, w_merge=w_merge, residual_pool=residual_pool)

    def named_parameters(self, prefix: str):
        out = self.gcn_coarse.named_parameters(f"{prefix}.gcn_coarse")
        out += self.gcn_fine.named_parameters(f"{prefix}.gcn_fine")
        if self.pool_in is not None:
            out += self.pool_in.named_parameters(f"{prefix}.pool_in")
        if self.pool_fine is not None:
            out += self.pool_fine.named_parameters(f"{prefix}.pool_fine")
        if self.w_merge is not None:
            out.append((f"{prefix}.w_merge", self.w_merge))
        return out

    def named_state(self, prefix: str):
        return (self.gcn_coarse.named_state(f"{prefix}.gcn_coarse")
                + self.gcn_fine.named_state(f"{prefix}.gcn_fine"))


def cross_fusion_split(x: Tensor, params: CrossFusionParams, assignment: Tensor | None,
                       adj_coarse: Tensor, adj_fine: Tensor, train: bool,
                       corr_out: list | None = None) -> tuple[Tensor, Tensor]:
    """The two aligned branch outputs (coarse h, fine e) before fusion.

    With `assignment=None` both branches skip pooling and stay at full
    resolution (the no-pooling control).
    """
    if assignment is not None:
        xp = st_pool(x, params.pool_in, assignment,
                     residual=params.residual_pool, corr_out=corr_out)
    else:
        xp = x
    h = gcn_block(xp, params.gcn_coarse, adj_coarse, train)
    xf = gcn_block(x, params.gcn_fine, adj_fine, train)
    e = st_pool(xf, params.pool_fine, assignment,
                residual=params.residual_pool) if assignment is not None else xf
    return h, e


def fuse_branches(h: Tensor, e: Tensor, params: CrossFusionParams) -> Tensor:
    """Weighted sum (s*h + (1-s)*e) or channel concat plus learned re-projection."""
    if params.fuse == "sum":
        return T.add(T.scale(h, params.weight), T.scale(e, 1.0 - params.weight))
    merged = T.concat_channels(h, e)
    if merged.ndim == 2:  # fused after global pooling: plain matrix product
        return T.matmul(merged, params.w_merge)
    return T.conv1x1(merged, params.w_merge)


def cross_fusion_block(x: Tensor, params: CrossFusionParams, assignment: Tensor | None,
                       adj_coarse: Tensor, adj_fine: Tensor, train: bool,
                       corr_out: list | None = None) -> Tensor:
    h, e = cross_fusion_split(x, params, assignment, adj_coarse, adj_fine, train,
                              corr_out=corr_out)
    return fuse_branches(h, e, params)


# ---------------------------------------------------------------------------
# input feature derivations


def bone_matrix(topology: SkeletonTopology, dtype=np.float64) -> np.ndarray:
    """Linear map taking joint positions to bone vectors (joint minus parent;
    the root maps to zero)."""
    if topology.parents is None:
        raise ValueError(f"topology '{topology.name}' has no parent map")
    n = topology.node_count
    mat = np.zeros((n, n), dtype=dtype)
    for child, parent in topology.parents.items():
        mat[child - 1, child - 1] = 1.0
        mat[parent - 1, child - 1] = -1.0
    return mat


def bone_features(x: Tensor, topology: SkeletonTopology) -> Tensor:
    """Vector-based features: per joint, position minus parent position."""
    if x.ndim != 4:
        raise ValueError("bone_features expects a 4-D feature map")
    return T.matmul(x, Tensor(bone_matrix(topology).astype(x.dtype)))


def motion_features(x: Tensor) -> Tensor:
    """Forward frame differences; the final frame slot is zero."""
    if x.ndim != 4:
        raise ValueError("motion_features expects a 4-D feature map")
    t = x.shape[2]
    diff = np.zeros((t, t))
    for i in range(t - 1):
        diff[i + 1, i] = 1.0
        diff[i, i] = -1.0
    shifted = T.matmul(T.transpose(x, (0, 1, 3, 2)), Tensor(diff.astype(x.dtype)))
    return T.transpose(shifted, (0, 1, 3, 2))


# ---------------------------------------------------------------------------
# input supplement: embed positions and bone vectors, concatenate


@dataclass
class IsmParams:
    """Two embedding streams (bone vectors and positions), each a normalization
    plus two graph-convolution layers into `channels` dimensions."""

    vec_norm: "BatchNorm"
    pos_norm: "BatchNorm"
    vec_conv1: Parameter
    vec_conv2: Parameter
    pos_conv1: Parameter
    pos_conv2: Parameter
    normalize: bool = True

    @classmethod
    def init(cls, channels: int = 32, normalize: bool = True,
             rng=None, dtype=np.float32, name: str = "ism"):
        from .gcn import BatchNorm
        rng = rng if rng is not None else np.random.default_rng(0)

        def conv(tag, c_in, c_out):
            return Parameter(T.glorot(rng, (c_in, c_out)), name=f"{name}.{tag}", dtype=dtype)

        return cls(
            vec_norm=BatchNorm.init(3, dtype=dtype, name=f"{name}.vec_norm"),
            pos_norm=BatchNorm.init(3, dtype=dtype, name=f"{name}.pos_norm"),
            vec_conv1=conv("vec_conv1", 3, channels),
            vec_conv2=conv("vec_conv2", channels, channels),
            pos_conv1=conv("pos_conv1", 3, channels),
            pos_conv2=conv("pos_conv2", channels, channels),
            normalize=normalize)

    @property
    def out_channels(self) -> int:
        return 2 * self.vec_conv2.shape[1]

    def named_parameters(self, prefix: str):
        out = []
        if self.normalize:
            out += self.vec_norm.named_parameters(f"{prefix}.vec_norm")
            out += self.pos_norm.named_parameters(f"{prefix}.pos_norm")
        out += [(f"{prefix}.vec_conv1", self.vec_conv1),
                (f"{prefix}.vec_conv2", self.vec_conv2),
                (f"{prefix}.pos_conv1", self.pos_conv1),
                (f"{prefix}.pos_conv2", self.pos_conv2)]
        return out

    def named_state(self, prefix: str):
        if not self.normalize:
            return []
        return (self.vec_norm.named_state(f"{prefix}.vec_norm")
                + self.pos_norm.named_state(f"{prefix}.pos_norm"))


def information_supplement(x: Tensor, params: IsmParams, topology: SkeletonTopology,
                           adjacency: Tensor, train: bool) -> Tensor:
    """Embed bone-vector and position streams and concatenate on channels
    (bone stream leading), doubling the per-stream embedding width."""
    if x.ndim != 4 or x.shape[1] != 3:
        raise ValueError("information_supplement expects raw (batch, 3, frames, nodes) input")

    def stream(feat, norm, w1, w2):
        if params.normalize:
            feat = batch_normalize(feat, norm, train)
        feat = spatial_graph_conv(feat, w1, adjacency)
        feat = T.relu(feat)
        return spatial_graph_conv(feat, w2, adjacency)

    vec = stream(bone_features(x, topology), params.vec_norm,
                 params.vec_conv1, params.vec_conv2)
    pos = stream(x, params.pos_norm, params.pos_conv1, params.pos_conv2)
    return T.concat_channels(vec, pos)


# ---------------------------------------------------------------------------
# classification head


@dataclass
class ClassifierHead:
    """Global average pool over frames and nodes, then an affine map to logits.

    Zero initialization keeps initial logits uniform and makes training
    equivariant to class relabeling.
    """

    w: Parameter  # (channels, classes)
    b: Parameter  # (classes,)

    @classmethod
    def init(cls, channels: int, classes: int, rng=None, dtype=np.float32,
             name: str = "head"):
        return cls(w=Parameter(np.zeros((channels, classes)), name=f"{name}.w", dtype=dtype),
                   b=Parameter(np.zeros(classes), name=f"{name}.b", dtype=dtype))

    def named_parameters(self, prefix: str):
        return [(f"{prefix}.w", self.w), (f"{prefix}.b", self.b)]

    def affine(self, pooled: Tensor) -> Tensor:
        return T.add_bias(T.matmul(pooled, self.w), self.b)


def global_average(x: Tensor) -> Tensor:
    return T.tmean(x, axes=(2, 3))


def classifier_head(x: Tensor, head: ClassifierHead) -> Tensor:
    """Logits from a (batch, channels, frames, nodes) feature map."""
    return head.affine(global_average(x))
