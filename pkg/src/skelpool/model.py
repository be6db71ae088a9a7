"""Model assembly (light and heavy variants) and checkpoint serialization.

A model is an optional input-supplement stem followed by three stages and a
classification head. Light stages are pool-then-graph-convolve; heavy stages
are full cross fusion blocks. Pooling locations form a prefix of the stages
(later partition stages are defined on earlier pooled graphs), and the last
heavy fusion happens after global average pooling.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from .blocks import (ClassifierHead, CrossFusionParams, IsmParams, classifier_head,
                     cross_fusion_block, cross_fusion_split, fuse_branches,
                     global_average, information_supplement)
from .gcn import GraphConvParams, gcn_block
from .pooling import SIGMAS, PoolingParams, st_pool
from .skeleton import PartitionScheme, SkeletonTopology, load_topology, stage_matrices
from .tensor import Tensor

VARIANTS = ("light", "heavy")
_MAGIC = b"SKPL"
_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    variant: str = "light"
    topology: str = "ntu25"
    classes: int = 8
    frames: int = 64
    channels: tuple[int, int, int] = (64, 128, 256)
    pooling_locations: tuple[int, ...] = (1, 2, 3)
    ratio: int = 4
    sigma: str = "tanh"
    fusion_weight: float = 0.5
    fusion_mode: str = "sum"
    temporal_kernel: int = 5
    ism: bool = True
    ism_channels: int = 32
    adaptive: bool = True
    residual_pool: bool = True
    dtype: str = "f32"

    def validate(self) -> "ModelConfig":
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        if self.sigma not in SIGMAS:
            raise ValueError(f"sigma must be one of {SIGMAS}")
        if self.fusion_mode not in ("sum", "concat"):
            raise ValueError("fusion_mode must be 'sum' or 'concat'")
        if not 0.0 <= self.fusion_weight <= 1.0:
            raise ValueError("fusion_weight must lie in [0, 1]")
        if len(self.channels) != 3 or any(c < 1 for c in self.channels):
            raise ValueError("channel plan must list three positive widths")
        locs = tuple(self.pooling_locations)
        if locs != tuple(range(1, len(locs) + 1)):
            raise ValueError("pooling locations must form a prefix of (1, 2, 3): "
                             "each pooled stage builds on the previous pooled graph")
        if len(locs) > 3:
            raise ValueError("at most three pooling locations")
        if self.temporal_kernel % 2 == 0:
            raise ValueError("temporal kernel must be odd")
        if self.ratio < 1:
            raise ValueError("ratio must be >= 1")
        if self.classes < 2:
            raise ValueError("need at least two classes")
        if self.frames < 1:
            raise ValueError("frames must be >= 1")
        if self.ism_channels < 1:
            raise ValueError("ism_channels must be >= 1")
        if self.dtype not in ("f32", "f64"):
            raise ValueError("dtype must be 'f32' or 'f64'")
        return self

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "f32" else np.float64

    @property
    def stem_channels(self) -> int:
        return 2 * self.ism_channels if self.ism else 3

    def to_dict(self) -> dict:
        return {
            "variant": self.variant, "topology": self.topology, "classes": self.classes,
            "frames": self.frames, "channels": list(self.channels),
            "pooling_locations": list(self.pooling_locations), "ratio": self.ratio,
            "sigma": self.sigma, "fusion_weight": self.fusion_weight,
            "fusion_mode": self.fusion_mode, "temporal_kernel": self.temporal_kernel,
            "ism": self.ism, "ism_channels": self.ism_channels,
            "adaptive": self.adaptive, "residual_pool": self.residual_pool,
            "dtype": self.dtype,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ModelConfig":
        kwargs = dict(doc)
        if "channels" in kwargs:
            kwargs["channels"] = tuple(kwargs["channels"])
        if "pooling_locations" in kwargs:
            kwargs["pooling_locations"] = tuple(kwargs["pooling_locations"])
        unknown = set(kwargs) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        return cls(**kwargs).validate()


@dataclass(frozen=True)
class StagePlan:
    index: int
    pooled: bool
    c_in: int
    c_out: int
    n_in: int
    n_out: int
    t_in: int
    t_out: int


def stage_plan(config: ModelConfig, topology: SkeletonTopology,
               scheme: PartitionScheme | None) -> list[StagePlan]:
    """Shape trajectory through the three stages (shared by build and MAC count)."""
    config.validate()
    pooled_stages = len(config.pooling_locations)
    if pooled_stages > 0:
        if scheme is None:
            raise ValueError(f"topology '{topology.name}' has no partition scheme "
                             "but pooling is enabled")
        if len(scheme.stages) < pooled_stages:
            raise ValueError(f"scheme defines {len(scheme.stages)} pooling stages, "
                             f"{pooled_stages} requested")
    counts = scheme.node_counts if scheme is not None else [topology.node_count]
    plans = []
    n, t, c = topology.node_count, config.frames, config.stem_channels
    for i in range(1, 4):
        pooled = i <= pooled_stages
        n_out = counts[i] if pooled else n
        t_out = -(-t // 2) if pooled else t
        c_out = config.channels[i - 1]
        if pooled and config.adaptive and c % config.ratio != 0:
            raise ValueError(f"stage {i} pools {c} channels, not divisible by "
                             f"ratio {config.ratio}")
        if (pooled and config.adaptive and config.variant == "heavy"
                and c_out % config.ratio != 0):
            raise ValueError(f"stage {i} fine branch has {c_out} channels, not "
                             f"divisible by ratio {config.ratio}")
        plans.append(StagePlan(i, pooled, c, c_out, n, n_out, t, t_out))
        n, t, c = n_out, t_out, c_out
    return plans


@dataclass
class Stage:
    plan: StagePlan
    assignment: Tensor | None
    adj_in: Tensor
    adj_out: Tensor
    pool: PoolingParams | None = None       # light variant
    gcn: GraphConvParams | None = None      # light variant
    cfb: CrossFusionParams | None = None    # heavy variant

    def named_parameters(self, prefix: str):
        out = []
        if self.pool is not None:
            out += self.pool.named_parameters(f"{prefix}.pool")
        if self.gcn is not None:
            out += self.gcn.named_parameters(f"{prefix}.gcn")
        if self.cfb is not None:
            out += self.cfb.named_parameters(f"{prefix}.cfb")
        return out

    def named_state(self, prefix: str):
        out = []
        if self.gcn is not None:
            out += self.gcn.named_state(f"{prefix}.gcn")
        if self.cfb is not None:
            out += self.cfb.named_state(f"{prefix}.cfb")
        return out


class Model:
    """A built network: constant graph matrices plus the parameter tree."""

    def __init__(self, config: ModelConfig, topology: SkeletonTopology,
                 scheme: PartitionScheme | None, ism: IsmParams | None,
                 stages: list[Stage], head: ClassifierHead, seed: int):
        self.config = config
        self.topology = topology
        self.scheme = scheme
        self.ism = ism
        self.stages = stages
        self.head = head
        self.seed = seed

    @property
    def dtype(self):
        return self.config.np_dtype

    def named_parameters(self):
        out = []
        if self.ism is not None:
            out += self.ism.named_parameters("ism")
        for stage in self.stages:
            out += stage.named_parameters(f"stage{stage.plan.index}")
        out += self.head.named_parameters("head")
        return out

    def named_state(self):
        out = []
        if self.ism is not None:
            out += self.ism.named_state("ism")
        for stage in self.stages:
            out += stage.named_state(f"stage{stage.plan.index}")
        return out

    def node_trajectory(self) -> list[int]:
        """Node counts from input graph through every stage output."""
        return [self.stages[0].plan.n_in] + [s.plan.n_out for s in self.stages]

    def forward(self, x, train: bool = False, corr_out: list | None = None) -> Tensor:
        """Logits for a (batch, 3, frames, nodes) input.

        `corr_out`, when a list, collects one (stage_index, correlation array)
        pair per adaptive pooling on the main path.
        """
        if not isinstance(x, Tensor):
            x = Tensor(np.asarray(x), dtype=self.dtype)
        if x.dtype != self.dtype:
            x = Tensor(x.data, dtype=self.dtype)
        cfg = self.config
        expect = (3, cfg.frames, self.topology.node_count)
        if x.ndim != 4 or x.shape[1:] != expect:
            raise ValueError(f"input shape {x.shape} does not match (batch, {expect[0]}, "
                             f"{expect[1]}, {expect[2]})")

        h = x
        if self.ism is not None:
            h = information_supplement(h, self.ism, self.topology,
                                       self.stages[0].adj_in, train)
        for stage in self.stages:
            stage_corr: list = []
            last = stage.plan.index == 3
            if stage.cfb is not None:  # heavy
                if last:
                    hb, eb = cross_fusion_split(h, stage.cfb, stage.assignment,
                                                stage.adj_out, stage.adj_in, train,
                                                corr_out=stage_corr)
                    fused = fuse_branches(global_average(hb), global_average(eb),
                                          stage.cfb)
                    logits = self.head.affine(fused)
                else:
                    h = cross_fusion_block(h, stage.cfb, stage.assignment,
                                           stage.adj_out, stage.adj_in, train,
                                           corr_out=stage_corr)
            else:  # light
                if stage.plan.pooled:
                    h = st_pool(h, stage.pool, stage.assignment,
                                residual=self.config.residual_pool,
                                corr_out=stage_corr)
                h = gcn_block(h, stage.gcn, stage.adj_out, train)
                if last:
                    logits = classifier_head(h, self.head)
            if corr_out is not None and stage_corr:
                corr_out.append((stage.plan.index, stage_corr[0].data.copy()))
        return logits


def build_model(config: ModelConfig, seed: int = 0) -> Model:
    """Deterministically initialize a model from a validated config and a seed."""
    config = config.validate()
    topo, scheme = load_topology(config.topology)
    plans = stage_plan(config, topo, scheme)
    dtype = config.np_dtype
    rng = np.random.default_rng(seed)

    mats = stage_matrices(topo, scheme)[: len(config.pooling_locations)] \
        if scheme is not None else []
    from .skeleton import normalized_adjacency
    adj_chain = [Tensor(normalized_adjacency(topo), dtype=dtype)]
    assign_chain = []
    for p, norm, _ in mats:
        assign_chain.append(Tensor(p, dtype=dtype))
        adj_chain.append(Tensor(norm, dtype=dtype))

    ism = IsmParams.init(channels=config.ism_channels, rng=rng, dtype=dtype,
                         name="ism") if config.ism else None

    stages = []
    for plan in plans:
        res_in = min(plan.index - 1, len(mats))
        res_out = min(plan.index, len(mats))
        adj_in, adj_out = adj_chain[res_in], adj_chain[res_out]
        assignment = assign_chain[plan.index - 1] if plan.pooled else None
        name = f"stage{plan.index}"
        if config.variant == "heavy":
            cfb = CrossFusionParams.init(
                plan.c_in, plan.c_out, ratio=config.ratio, sigma=config.sigma,
                kernel=config.temporal_kernel, fuse=config.fusion_mode,
                weight=config.fusion_weight,
                adaptive=config.adaptive and plan.pooled,
                residual_pool=config.residual_pool,
                rng=rng, dtype=dtype, name=f"{name}.cfb")
            stages.append(Stage(plan, assignment, adj_in, adj_out, cfb=cfb))
        else:
            pool = None
            if plan.pooled and config.adaptive:
                pool = PoolingParams.init(plan.c_in, ratio=config.ratio,
                                          sigma=config.sigma, rng=rng, dtype=dtype,
                                          name=f"{name}.pool")
            gcn = GraphConvParams.init(plan.c_in, plan.c_out,
                                       kernel=config.temporal_kernel,
                                       rng=rng, dtype=dtype, name=f"{name}.gcn")
            stages.append(Stage(plan, assignment, adj_in, adj_out, pool=pool, gcn=gcn))

    head = ClassifierHead.init(config.channels[-1], config.classes, rng=rng,
                               dtype=dtype, name="head")
    return Model(config, topo, scheme, ism, stages, head, seed)


# ---------------------------------------------------------------------------
# checkpoint container: magic, version, json header, raw little-endian blobs


def _dtype_code(arr: np.ndarray) -> str:
    return {np.dtype(np.float32): "f4", np.dtype(np.float64): "f8"}[arr.dtype]


def save_checkpoint(model: Model, path: str) -> None:
    params = model.named_parameters()
    state = model.named_state()
    header = {
        "config": model.config.to_dict(),
        "seed": model.seed,
        "params": [{"name": n, "shape": list(p.shape), "dtype": _dtype_code(p.data)}
                   for n, p in params],
        "state": [{"name": n, "shape": list(a.shape), "dtype": _dtype_code(a)}
                  for n, a in state],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", _VERSION))
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for _, p in params:
            fh.write(p.data.astype("<" + _dtype_code(p.data)).tobytes())
        for _, a in state:
            fh.write(a.astype("<" + _dtype_code(a)).tobytes())


def load_checkpoint(path: str) -> Model:
    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != _VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        (hlen,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        config = ModelConfig.from_dict(header["config"])
        model = build_model(config, seed=int(header.get("seed", 0)))

        def read_block(meta):
            shape = tuple(meta["shape"])
            count = int(np.prod(shape)) if shape else 1
            itemsize = 4 if meta["dtype"] == "f4" else 8
            buf = fh.read(count * itemsize)
            if len(buf) != count * itemsize:
                raise ValueError(f"{path}: truncated checkpoint")
            return np.frombuffer(buf, dtype="<" + meta["dtype"]).reshape(shape)

        by_name = dict(model.named_parameters())
        saved = [m["name"] for m in header["params"]]
        if saved != [n for n, _ in model.named_parameters()]:
            raise ValueError(f"{path}: parameter set does not match the config")
        for meta in header["params"]:
            by_name[meta["name"]].assign(read_block(meta).astype(model.dtype))
        state_by_name = dict(model.named_state())
        for meta in header["state"]:
            if meta["name"] not in state_by_name:
                raise ValueError(f"{path}: unknown state entry {meta['name']}")
            state_by_name[meta["name"]][...] = read_block(meta).astype(model.dtype)
    return model
