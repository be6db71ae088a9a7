"""Dataset files, synthetic skeleton-motion generation, frame resampling, and
multi-stream score fusion.

Datasets are single JSON documents (64-bit coordinates, inspectable and
diffable); score files are plain comma-separated rows. The synthetic generator
assigns each class a parametric motion on the kinematic tree: localized limb
oscillations for most classes, whole-body bounce for every fourth, so classes
differ by active region, frequency, axis, and phase.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .skeleton import SkeletonTopology, load_topology
from .tensor import Tensor


@dataclass
class LabeledSequence:
    frames: np.ndarray  # (T, N, 3) float64, meters
    label: int
    id: str


@dataclass
class Dataset:
    topology: str
    classes: list[str]
    split: str
    sequences: list[LabeledSequence] = field(default_factory=list)

    @property
    def class_count(self) -> int:
        return len(self.classes)

    def histogram(self) -> list[int]:
        counts = [0] * self.class_count
        for seq in self.sequences:
            counts[seq.label] += 1
        return counts


def _validate(ds: Dataset, topology: SkeletonTopology) -> None:
    if not ds.sequences:
        raise ValueError("empty dataset")
    n = topology.node_count
    for seq in ds.sequences:
        if seq.frames.ndim != 3 or seq.frames.shape[1:] != (n, 3):
            raise ValueError(f"sample '{seq.id}': frames {seq.frames.shape} do not "
                             f"match ({n} joints, 3 coords)")
        if seq.frames.shape[0] < 1:
            raise ValueError(f"sample '{seq.id}': no frames")
        if not np.isfinite(seq.frames).all():
            raise ValueError(f"sample '{seq.id}': non-finite coordinates")
        if not 0 <= seq.label < ds.class_count:
            raise ValueError(f"sample '{seq.id}': label {seq.label} outside "
                             f"0..{ds.class_count - 1}")


def save_dataset(ds: Dataset, path: str) -> None:
    doc = {
        "topology": ds.topology,
        "classes": ds.classes,
        "split": ds.split,
        "samples": [{"id": s.id, "label": s.label, "frames": s.frames.tolist()}
                    for s in ds.sequences],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_dataset(path: str) -> Dataset:
    with open(path) as fh:
        doc = json.load(fh)
    topo, _ = load_topology(doc["topology"])
    ds = Dataset(
        topology=doc["topology"], classes=list(doc["classes"]),
        split=doc.get("split", "train"),
        sequences=[LabeledSequence(frames=np.asarray(s["frames"], dtype=np.float64),
                                   label=int(s["label"]), id=str(s["id"]))
                   for s in doc["samples"]])
    _validate(ds, topo)
    return ds


def to_arrays(ds: Dataset, dtype=np.float32):
    """Stack into (samples, 3, frames, nodes) plus labels and ids."""
    frames = {seq.frames.shape[0] for seq in ds.sequences}
    if len(frames) != 1:
        raise ValueError(f"mixed frame counts {sorted(frames)}; resample first")
    x = np.stack([seq.frames.transpose(2, 0, 1) for seq in ds.sequences]).astype(dtype)
    y = np.array([seq.label for seq in ds.sequences], dtype=np.int64)
    ids = [seq.id for seq in ds.sequences]
    return x, y, ids


# ---------------------------------------------------------------------------
# synthetic motions


def _direction(joint_id: int) -> np.ndarray:
    theta = joint_id * 2.399963  # golden-angle spread around the tree
    z = (joint_id * 0.618034) % 1.0 * 1.2 - 0.6
    r = np.sqrt(max(1.0 - z * z, 1e-9))
    return np.array([r * np.cos(theta), r * np.sin(theta), z])


def rest_pose(topology: SkeletonTopology, bone_length: float = 0.35) -> np.ndarray:
    """Deterministic rest coordinates grown along the parent tree."""
    if topology.parents is None:
        raise ValueError(f"topology '{topology.name}' has no parent map")
    n = topology.node_count
    pos = np.zeros((n, 3))
    placed = {topology.root}
    pending = dict(topology.parents)
    while pending:
        progressed = False
        for child in sorted(pending):
            parent = pending[child]
            if parent in placed:
                pos[child - 1] = pos[parent - 1] + bone_length * _direction(child)
                placed.add(child)
                del pending[child]
                progressed = True
        if not progressed:
            raise ValueError("disconnected parent map")
    return pos


def _depths(topology: SkeletonTopology) -> dict[int, int]:
    out = {}
    for j in range(1, topology.node_count + 1):
        d, cur = 0, j
        while topology.parents is not None and cur in topology.parents:
            cur = topology.parents[cur]
            d += 1
        out[j] = d
    return out


def _class_motion(c: int, topology: SkeletonTopology):
    """Deterministic per-class motion recipe: active joints, axis, freq, phase."""
    depths = _depths(topology)
    deepest = sorted(depths, key=lambda j: (-depths[j], j))
    whole_body = c % 4 == 3
    if whole_body:
        active = list(range(1, topology.node_count + 1))
        axis = np.array([0.25, 0.1, 1.0])
    else:
        anchor = deepest[c % len(deepest)]
        active = [anchor]
        cur = anchor
        for _ in range(2):  # anchor plus two joints toward the root
            if cur in topology.parents:
                cur = topology.parents[cur]
                active.append(cur)
        axis = np.array([np.sin(1.0 + 0.9 * c), np.cos(0.4 + 0.5 * c),
                         0.4 + 0.2 * np.sin(0.3 * c)])
    axis = axis / np.linalg.norm(axis)
    freq = 1.0 + 0.5 * c
    phase = 0.9 * c
    amp = 0.15 if whole_body else 0.25
    return active, axis, freq, phase, amp


def synth_generate(classes: int, per_class: int, frames: int,
                   topology: str = "ntu25", noise: float = 0.01, seed: int = 0,
                   split: str = "train") -> Dataset:
    """Seeded synthetic dataset with `per_class` sequences per class."""
    if classes < 2:
        raise ValueError("need at least two classes")
    topo, _ = load_topology(topology)
    rest = rest_pose(topo)
    rng = np.random.default_rng(seed)
    tau = np.arange(frames) / frames
    sequences = []
    for c in range(classes):
        active, axis, freq, phase, amp = _class_motion(c, topo)
        mask = np.zeros(topo.node_count)
        mask[[j - 1 for j in active]] = 1.0
        for k in range(per_class):
            amp_jit = rng.uniform(0.9, 1.1)
            freq_jit = rng.uniform(0.98, 1.02)
            wave = amp * amp_jit * np.sin(2 * np.pi * freq * freq_jit * tau + phase)
            coords = rest[None, :, :] + wave[:, None, None] * mask[None, :, None] * axis
            if noise > 0:
                coords = coords + rng.normal(0.0, noise, size=coords.shape)
            sequences.append(LabeledSequence(frames=coords, label=c,
                                             id=f"{split}-{c:02d}-{k:03d}"))
    ds = Dataset(topology=topology, classes=[f"motion_{c}" for c in range(classes)],
                 split=split, sequences=sequences)
    _validate(ds, topo)
    return ds


def nearest_centroid_accuracy(train: Dataset, test: Dataset) -> float:
    """Baseline separability oracle on flattened coordinates."""
    xtr, ytr, _ = to_arrays(train, dtype=np.float64)
    xte, yte, _ = to_arrays(test, dtype=np.float64)
    k = train.class_count
    centroids = np.stack([xtr[ytr == c].mean(axis=0).ravel() for c in range(k)])
    flat = xte.reshape(len(yte), -1)
    dists = ((flat[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    return float((np.argmin(dists, axis=1) == yte).mean())


# ---------------------------------------------------------------------------
# frame resampling and input streams


def resample_frames(seq: LabeledSequence, t_target: int) -> LabeledSequence:
    """Linear interpolation onto `t_target` uniformly spaced frames."""
    if t_target < 1:
        raise ValueError("t_target must be >= 1")
    t = seq.frames.shape[0]
    if t == t_target:
        return LabeledSequence(seq.frames.copy(), seq.label, seq.id)
    src = np.linspace(0.0, 1.0, t) if t > 1 else np.zeros(1)
    dst = np.linspace(0.0, 1.0, t_target) if t_target > 1 else np.zeros(1)
    flat = seq.frames.reshape(t, -1)
    out = np.empty((t_target, flat.shape[1]))
    for col in range(flat.shape[1]):
        out[:, col] = np.interp(dst, src, flat[:, col])
    return LabeledSequence(out.reshape(t_target, *seq.frames.shape[1:]),
                           seq.label, seq.id)


def resample_dataset(ds: Dataset, t_target: int) -> Dataset:
    return Dataset(ds.topology, list(ds.classes), ds.split,
                   [resample_frames(s, t_target) for s in ds.sequences])


STREAMS = ("joint", "bone", "motion")


def apply_stream(ds: Dataset, stream: str) -> Dataset:
    """Ingestion-side input transform for multi-stream training."""
    from .blocks import bone_features, motion_features
    if stream not in STREAMS:
        raise ValueError(f"stream must be one of {STREAMS}")
    if stream == "joint":
        return ds
    topo, _ = load_topology(ds.topology)
    out = []
    for seq in ds.sequences:
        x = Tensor(seq.frames.transpose(2, 0, 1)[None], dtype=np.float64)
        y = bone_features(x, topo) if stream == "bone" else motion_features(x)
        out.append(LabeledSequence(y.data[0].transpose(1, 2, 0), seq.label, seq.id))
    return Dataset(ds.topology, list(ds.classes), ds.split, out)


# ---------------------------------------------------------------------------
# score files and fusion


@dataclass
class ScoreFile:
    ids: list[str]
    labels: np.ndarray   # (samples,)
    scores: np.ndarray   # (samples, classes)

    def accuracy(self) -> float:
        # np.argmax breaks ties toward the lower class index
        return float((np.argmax(self.scores, axis=1) == self.labels).mean())


def save_scores(sf: ScoreFile, path: str) -> None:
    with open(path, "w") as fh:
        for i, sample_id in enumerate(sf.ids):
            row = ",".join(repr(float(v)) for v in sf.scores[i])
            fh.write(f"{sample_id},{int(sf.labels[i])},{row}\n")


def load_scores(path: str) -> ScoreFile:
    ids, labels, rows = [], [], []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) < 3:
                raise ValueError(f"{path}: malformed score row {line!r}")
            ids.append(parts[0])
            labels.append(int(parts[1]))
            rows.append([float(v) for v in parts[2:]])
    if not ids:
        raise ValueError(f"{path}: empty score file")
    widths = {len(r) for r in rows}
    if len(widths) != 1:
        raise ValueError(f"{path}: inconsistent score vector lengths {sorted(widths)}")
    if len(set(ids)) != len(ids):
        raise ValueError(f"{path}: duplicate sample ids")
    return ScoreFile(ids, np.array(labels, dtype=np.int64), np.array(rows))


def fuse_scores(files: list[ScoreFile], weights=None) -> tuple[float, ScoreFile]:
    """Weighted per-sample sum of score vectors; returns (accuracy, fused file)."""
    if not files:
        raise ValueError("no score files to fuse")
    if weights is None:
        weights = [1.0] * len(files)
    weights = [float(w) for w in weights]
    if len(weights) != len(files):
        raise ValueError(f"{len(weights)} weights for {len(files)} score files")
    if any(w < 0 for w in weights) or sum(weights) <= 0:
        raise ValueError("weights must be nonnegative with a positive sum")
    base = files[0]
    k = base.scores.shape[1]
    id_set = set(base.ids)
    fused = np.zeros_like(base.scores, dtype=np.float64)
    for sf, w in zip(files, weights):
        if sf.scores.shape[1] != k:
            raise ValueError(f"class count mismatch: {sf.scores.shape[1]} vs {k}")
        if set(sf.ids) != id_set:
            raise ValueError("score files cover different sample ids")
        index = {sid: i for i, sid in enumerate(sf.ids)}
        perm = [index[sid] for sid in base.ids]
        if not np.array_equal(sf.labels[perm], base.labels):
            raise ValueError("score files disagree on sample labels")
        fused += w * sf.scores[perm]
    out = ScoreFile(list(base.ids), base.labels.copy(), fused)
    return out.accuracy(), out
