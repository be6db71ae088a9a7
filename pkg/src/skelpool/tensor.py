"""Minimal dense tensor core with recorded forward passes and reverse-mode gradients.

The operator set is closed and enumerated: matrix product (plain and batched),
pointwise add/sub/mul, scalar scale, bias/affine broadcasts on the channel axis,
tanh, sigmoid, relu, softmax over the last axis, sum/mean reductions, temporal
1-D convolution, pair-averaging over time, channel concatenation, reshape,
transpose, explicit expansion, fused batch normalization and fused softmax
cross-entropy. Every operator registers a backward rule and is covered by the
finite-difference suite in `gradcheck`.

Recording: operators executed inside a `with Tape() as t:` block append one
entry each (operator id, input refs, output ref, replayable forward closure,
backward closure). Outside a tape, operators just compute values (eval mode).
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Sequence

import numpy as np

DEFAULT_DTYPE = np.float32


class NonFiniteError(ArithmeticError):
    """An operator produced a NaN or infinity; carries the operator id."""

    def __init__(self, op: str):
        super().__init__(f"non-finite values produced by operator '{op}'")
        self.op = op


class Tensor:
    """Dense row-major array of 32- or 64-bit scalars.

    Treated as immutable once constructed: operators never write into an
    existing buffer, and records stay valid for replay. The one sanctioned
    mutation is `Parameter.assign`, reserved for the training owner between
    recorded passes.
    """

    __slots__ = ("data",)

    def __init__(self, data, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name})"


class Parameter(Tensor):
    """Trainable tensor with a stable name and a weight-decay flag."""

    __slots__ = ("name", "decay")

    def __init__(self, data, name: str = "", decay: bool = True, dtype=None):
        super().__init__(data, dtype=dtype)
        self.name = name
        self.decay = decay

    def assign(self, data: np.ndarray) -> None:
        """Replace the stored value. Owner-only; never call inside a recording."""
        arr = np.asarray(data, dtype=self.data.dtype)
        if arr.shape != self.data.shape:
            raise ValueError(f"assign shape {arr.shape} != parameter shape {self.data.shape}")
        self.data = arr

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape}, dtype={self.dtype.name})"


def glorot(rng: np.random.Generator, shape: tuple[int, ...],
           fan_in: int | None = None, fan_out: int | None = None) -> np.ndarray:
    """Uniform Glorot initialization; fans default to the first/last extents."""
    fan_in = shape[0] if fan_in is None else fan_in
    fan_out = shape[-1] if fan_out is None else fan_out
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


class TapeEntry:
    __slots__ = ("op", "inputs", "output", "forward", "backward")

    def __init__(self, op, inputs, output, forward, backward):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.forward = forward    # (*input arrays) -> output array, pure
        self.backward = backward  # (grad array, input arrays, output array) -> per-input grads


class Tape:
    """Ordered record of operator applications (a replayable computation record).

    Entries are appended in execution order, so every entry's inputs are
    produced by earlier entries or are leaves; reverse iteration is a valid
    reverse-topological order for gradient accumulation.
    """

    def __init__(self):
        self.entries: list[TapeEntry] = []

    def __enter__(self) -> "Tape":
        global _ACTIVE_TAPE
        if _ACTIVE_TAPE is not None:
            raise RuntimeError("tapes do not nest")
        _ACTIVE_TAPE = self
        return self

    def __exit__(self, *exc):
        global _ACTIVE_TAPE
        _ACTIVE_TAPE = None

    def __len__(self):
        return len(self.entries)


_ACTIVE_TAPE: Tape | None = None


def _finite_or_raise(arr: np.ndarray, op: str) -> None:
    # One-pass check: the sum is non-finite iff some element is (magnitudes
    # here are far from overflow, so finite elements cannot overflow the sum).
    if not math.isfinite(float(arr.sum())):
        raise NonFiniteError(op)


def _apply(op: str, inputs: tuple[Tensor, ...], forward: Callable, backward: Callable) -> Tensor:
    out_arr = forward(*[t.data for t in inputs])
    _finite_or_raise(out_arr, op)
    out = Tensor.__new__(Tensor)
    out.data = out_arr
    if _ACTIVE_TAPE is not None:
        _ACTIVE_TAPE.entries.append(TapeEntry(op, inputs, out, forward, backward))
    return out


def _same_dtype(*tensors: Tensor):
    dt = tensors[0].dtype
    for t in tensors[1:]:
        if t.dtype != dt:
            raise ValueError(f"mixed dtypes {dt} vs {t.dtype}")
    return dt


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient down to `shape` after numpy broadcasting in the forward."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] > 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# pointwise arithmetic


def _require_same_shape(a: Tensor, b: Tensor, op: str):
    if a.shape != b.shape:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape} (no implicit broadcasting)")


def add(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape(a, b, "add")
    _same_dtype(a, b)
    return _apply("add", (a, b), lambda x, y: x + y, lambda g, ins, out: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape(a, b, "sub")
    _same_dtype(a, b)
    return _apply("sub", (a, b), lambda x, y: x - y, lambda g, ins, out: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape(a, b, "mul")
    _same_dtype(a, b)
    return _apply("mul", (a, b), lambda x, y: x * y,
                  lambda g, ins, out: (g * ins[1], g * ins[0]))


def scale(x: Tensor, c: float) -> Tensor:
    """Multiply by a python scalar constant (not a differentiable input)."""
    c = float(c)
    return _apply("scale", (x,), lambda xd: xd * np.asarray(c, dtype=xd.dtype),
                  lambda g, ins, out: (g * np.asarray(c, dtype=g.dtype),))


def add_bias(x: Tensor, bias: Tensor) -> Tensor:
    """Add a per-channel bias, broadcast over every axis except axis 1."""
    if x.ndim < 2 or bias.shape != (x.shape[1],):
        raise ValueError(f"add_bias: bias {bias.shape} does not match channel axis of {x.shape}")
    _same_dtype(x, bias)
    expand = (1, -1) + (1,) * (x.ndim - 2)
    reduce_axes = tuple(i for i in range(x.ndim) if i != 1)
    return _apply("add_bias", (x, bias),
                  lambda xd, bd: xd + bd.reshape(expand),
                  lambda g, ins, out: (g, g.sum(axis=reduce_axes)))


def channel_affine(x: Tensor, gamma: Tensor, beta: Tensor) -> Tensor:
    """Per-channel scale and shift on axis 1 (the batch-norm affine form)."""
    if x.ndim < 2 or gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
        raise ValueError(f"channel_affine: params {gamma.shape}/{beta.shape} vs input {x.shape}")
    _same_dtype(x, gamma, beta)
    expand = (1, -1) + (1,) * (x.ndim - 2)
    reduce_axes = tuple(i for i in range(x.ndim) if i != 1)

    def bwd(g, ins, out):
        xd, gd, _ = ins
        return (g * gd.reshape(expand),
                (g * xd).sum(axis=reduce_axes),
                g.sum(axis=reduce_axes))

    return _apply("channel_affine", (x, gamma, beta),
                  lambda xd, gd, bd: xd * gd.reshape(expand) + bd.reshape(expand), bwd)


def expand(x: Tensor, shape: Sequence[int]) -> Tensor:
    """Explicitly tile size-1 axes up to `shape` (same rank required)."""
    shape = tuple(int(s) for s in shape)
    if len(shape) != x.ndim:
        raise ValueError(f"expand: rank mismatch {x.shape} -> {shape}")
    for have, want in zip(x.shape, shape):
        if have != want and have != 1:
            raise ValueError(f"expand: cannot expand {x.shape} to {shape}")
    axes = tuple(i for i in range(len(shape)) if x.shape[i] == 1 and shape[i] > 1)
    return _apply("expand", (x,),
                  lambda xd: np.ascontiguousarray(np.broadcast_to(xd, shape)),
                  lambda g, ins, out: (g.sum(axis=axes, keepdims=True) if axes else g,))


# ---------------------------------------------------------------------------
# nonlinearities


def tanh(x: Tensor) -> Tensor:
    return _apply("tanh", (x,), np.tanh, lambda g, ins, out: (g * (1.0 - out * out),))


def sigmoid(x: Tensor) -> Tensor:
    def fwd(xd):
        # exp on the negative half-line only, for overflow safety
        pos = xd >= 0
        z = np.empty_like(xd)
        z[pos] = 1.0 / (1.0 + np.exp(-xd[pos]))
        e = np.exp(xd[~pos])
        z[~pos] = e / (1.0 + e)
        return z

    return _apply("sigmoid", (x,), fwd, lambda g, ins, out: (g * out * (1.0 - out),))


def relu(x: Tensor) -> Tensor:
    return _apply("relu", (x,), lambda xd: np.maximum(xd, 0.0),
                  lambda g, ins, out: (g * (ins[0] > 0),))


def softmax(x: Tensor) -> Tensor:
    """Softmax over the last axis."""
    def fwd(xd):
        e = np.exp(xd - xd.max(axis=-1, keepdims=True))
        return e / e.sum(axis=-1, keepdims=True)

    def bwd(g, ins, out):
        return ((g - (g * out).sum(axis=-1, keepdims=True)) * out,)

    return _apply("softmax", (x,), fwd, bwd)


# ---------------------------------------------------------------------------
# reductions


def _norm_axes(axes, ndim) -> tuple[int, ...]:
    if axes is None:
        return tuple(range(ndim))
    if isinstance(axes, int):
        axes = (axes,)
    return tuple(sorted(a % ndim for a in axes))


def _expand_reduced(g: np.ndarray, in_shape, axes) -> np.ndarray:
    shape = list(in_shape)
    for a in axes:
        shape[a] = 1
    return np.broadcast_to(g.reshape(shape), in_shape)


def tsum(x: Tensor, axes=None) -> Tensor:
    """Sum over the given axes (all axes when None, yielding a scalar)."""
    ax = _norm_axes(axes, x.ndim)
    return _apply("sum", (x,), lambda xd: xd.sum(axis=ax),
                  lambda g, ins, out: (_expand_reduced(g, ins[0].shape, ax).astype(g.dtype),))


def tmean(x: Tensor, axes=None) -> Tensor:
    """Mean over the given axes (all axes when None)."""
    ax = _norm_axes(axes, x.ndim)
    count = 1
    for a in ax:
        count *= x.shape[a]

    def bwd(g, ins, out):
        return (_expand_reduced(g, ins[0].shape, ax).astype(g.dtype) / count,)

    return _apply("mean", (x,), lambda xd: xd.mean(axis=ax), bwd)


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes, batch axes broadcast numpy-style."""
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul requires rank >= 2 operands")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul: inner extents differ {a.shape} @ {b.shape}")
    _same_dtype(a, b)

    def bwd(g, ins, out):
        ad, bd = ins
        ga = _unbroadcast(np.matmul(g, bd.swapaxes(-1, -2)), ad.shape)
        if bd.ndim == 2 and ad.ndim > 2:
            # shared right operand: contract all batch axes in one pass
            axes = tuple(range(ad.ndim - 1))
            gb = np.tensordot(ad, g, axes=(axes, axes))
        else:
            gb = _unbroadcast(np.matmul(ad.swapaxes(-1, -2), g), bd.shape)
        return ga, gb

    return _apply("matmul", (a, b), np.matmul, bwd)


def _channel_map(xd: np.ndarray, wd: np.ndarray) -> np.ndarray:
    # contract the channel axis through BLAS: (b,c,t,n) x (c,o) -> (b,o,t,n)
    return np.ascontiguousarray(np.moveaxis(np.tensordot(xd, wd, axes=([1], [0])), 3, 1))


def conv1x1(x: Tensor, w: Tensor) -> Tensor:
    """Pointwise channel map on a (batch, channels, frames, nodes) feature map.

    `w` has shape (channels_in, channels_out); equivalent to a 1x1 2-D
    convolution over the frame/node grid.
    """
    if x.ndim != 4 or w.ndim != 2 or w.shape[0] != x.shape[1]:
        raise ValueError(f"conv1x1: weight {w.shape} does not match input {x.shape}")
    _same_dtype(x, w)

    def bwd(g, ins, out):
        xd, wd = ins
        gx = _channel_map(g, wd.T)
        gw = np.tensordot(xd, g, axes=([0, 2, 3], [0, 2, 3]))
        return gx, gw

    return _apply("conv1x1", (x, w), _channel_map, bwd)


def temporal_conv(x: Tensor, w: Tensor, stride: int = 1) -> Tensor:
    """1-D convolution along the frame axis, per node, mixing channels.

    `w` has shape (channels_out, channels_in, k) with k odd; symmetric zero
    padding of (k-1)/2 keeps ceil(frames/stride) output frames.
    """
    if x.ndim != 4 or w.ndim != 3:
        raise ValueError("temporal_conv: expects 4-D input and 3-D weights")
    c_out, c_in, k = w.shape
    if c_in != x.shape[1]:
        raise ValueError(f"temporal_conv: weight channels {c_in} != input channels {x.shape[1]}")
    if k % 2 == 0:
        raise ValueError("temporal_conv: kernel size must be odd")
    if stride < 1:
        raise ValueError("temporal_conv: stride must be >= 1")
    _same_dtype(x, w)
    pad = (k - 1) // 2
    t_in = x.shape[2]
    t_out = (t_in + 2 * pad - k) // stride + 1

    def fwd(xd, wd):
        xp = np.pad(xd, ((0, 0), (0, 0), (pad, pad), (0, 0)))
        s0, s1, s2, s3 = xp.strides
        windows = np.lib.stride_tricks.as_strided(
            xp, shape=(xd.shape[0], c_in, t_out, k, xd.shape[3]),
            strides=(s0, s1, s2 * stride, s2, s3), writeable=False)
        out = np.tensordot(windows, wd, axes=([1, 3], [1, 2]))  # -> (b, t, n, o)
        return np.ascontiguousarray(np.moveaxis(out, 3, 1))

    def bwd(g, ins, out):
        xd, wd = ins
        xp = np.pad(xd, ((0, 0), (0, 0), (pad, pad), (0, 0)))
        gxp = np.zeros_like(xp)
        gw = np.zeros_like(wd)
        for i in range(k):
            sl = slice(i, i + stride * (t_out - 1) + 1, stride)
            gxp[:, :, sl, :] += _channel_map(g, wd[:, :, i])
            gw[:, :, i] = np.tensordot(g, xp[:, :, sl, :], axes=([0, 2, 3], [0, 2, 3]))
        gx = gxp[:, :, pad : pad + t_in, :] if pad else gxp
        return np.ascontiguousarray(gx), gw

    return _apply("temporal_conv", (x, w), fwd, bwd)


def pair_avg_time(x: Tensor) -> Tensor:
    """Average non-overlapping frame pairs; an odd trailing frame passes through."""
    if x.ndim != 4:
        raise ValueError("pair_avg_time: expects a 4-D feature map")
    t_in = x.shape[2]
    pairs = t_in // 2
    odd = t_in % 2 == 1

    def fwd(xd):
        even = xd[:, :, 0 : 2 * pairs : 2, :]
        out = 0.5 * (even + xd[:, :, 1 : 2 * pairs : 2, :]) if pairs else \
            np.zeros(xd.shape[:2] + (0,) + xd.shape[3:], dtype=xd.dtype)
        if odd:
            out = np.concatenate([out, xd[:, :, -1:, :]], axis=2)
        return np.ascontiguousarray(out)

    def bwd(g, ins, out):
        gx = np.zeros_like(ins[0])
        if pairs:
            gx[:, :, 0 : 2 * pairs : 2, :] = 0.5 * g[:, :, :pairs, :]
            gx[:, :, 1 : 2 * pairs : 2, :] = 0.5 * g[:, :, :pairs, :]
        if odd:
            gx[:, :, -1, :] += g[:, :, -1, :]
        return (gx,)

    return _apply("pair_avg_time", (x,), fwd, bwd)


# ---------------------------------------------------------------------------
# shape ops


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    """Concatenate along the channel axis (axis 1); `a` leads."""
    if a.ndim != b.ndim or a.ndim < 2:
        raise ValueError("concat_channels: rank mismatch")
    if a.shape[:1] + a.shape[2:] != b.shape[:1] + b.shape[2:]:
        raise ValueError(f"concat_channels: non-channel extents differ {a.shape} vs {b.shape}")
    _same_dtype(a, b)
    ca = a.shape[1]
    return _apply("concat_channels", (a, b),
                  lambda x, y: np.concatenate([x, y], axis=1),
                  lambda g, ins, out: (np.ascontiguousarray(g[:, :ca]),
                                       np.ascontiguousarray(g[:, ca:])))


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    return _apply("reshape", (x,), lambda xd: xd.reshape(shape),
                  lambda g, ins, out: (g.reshape(ins[0].shape),))


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(int(a) for a in axes)
    inv = tuple(np.argsort(axes))
    return _apply("transpose", (x,),
                  lambda xd: np.ascontiguousarray(xd.transpose(axes)),
                  lambda g, ins, out: (np.ascontiguousarray(g.transpose(inv)),))


# ---------------------------------------------------------------------------
# fused training ops


def batch_norm_train(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize per channel with batch statistics over all non-channel axes."""
    if x.ndim < 2 or gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
        raise ValueError("batch_norm_train: parameter shapes must match the channel axis")
    if x.size == 0 or x.shape[0] == 0:
        raise ValueError("batch_norm_train: empty batch")
    _same_dtype(x, gamma, beta)
    axes = tuple(i for i in range(x.ndim) if i != 1)
    expand_shape = (1, -1) + (1,) * (x.ndim - 2)
    m = x.size // x.shape[1]

    def fwd(xd, gd, bd):
        mu = xd.mean(axis=axes, keepdims=True)
        var = xd.var(axis=axes, keepdims=True)
        xhat = (xd - mu) / np.sqrt(var + eps)
        return xhat * gd.reshape(expand_shape) + bd.reshape(expand_shape)

    def bwd(g, ins, out):
        xd, gd, _ = ins
        mu = xd.mean(axis=axes, keepdims=True)
        var = xd.var(axis=axes, keepdims=True)
        inv_std = 1.0 / np.sqrt(var + eps)
        xhat = (xd - mu) * inv_std
        dbeta = g.sum(axis=axes)
        dgamma = (g * xhat).sum(axis=axes)
        dxhat = g * gd.reshape(expand_shape)
        dx = (dxhat - dxhat.mean(axis=axes, keepdims=True)
              - xhat * (dxhat * xhat).mean(axis=axes, keepdims=True)) * inv_std
        return dx, dgamma, dbeta

    return _apply("batch_norm", (x, gamma, beta), fwd, bwd)


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean softmax cross-entropy of (batch, classes) logits against int labels."""
    labels = np.asarray(labels)
    if logits.ndim != 2:
        raise ValueError("cross_entropy: logits must be (batch, classes)")
    n, k = logits.shape
    if labels.shape != (n,):
        raise ValueError(f"cross_entropy: labels shape {labels.shape} != ({n},)")
    if labels.min() < 0 or labels.max() >= k:
        raise ValueError("cross_entropy: label index out of range")
    idx = labels.astype(np.intp).copy()

    def fwd(ld):
        m = ld.max(axis=1, keepdims=True)
        lse = m[:, 0] + np.log(np.exp(ld - m).sum(axis=1))
        return np.asarray((lse - ld[np.arange(n), idx]).mean(), dtype=ld.dtype)

    def bwd(g, ins, out):
        ld = ins[0]
        e = np.exp(ld - ld.max(axis=1, keepdims=True))
        p = e / e.sum(axis=1, keepdims=True)
        p[np.arange(n), idx] -= 1.0
        return (p * (g / n),)

    return _apply("cross_entropy", (logits,), fwd, bwd)


# ---------------------------------------------------------------------------
# gradient evaluation and replay


class GradientSet:
    """Gradients of one scalar output with respect to requested leaves.

    `unreached` lists leaves that did not contribute to the output; their
    gradients are present and zero.
    """

    def __init__(self, pairs: list[tuple[Tensor, Tensor]], unreached: list[Tensor]):
        self._by_id = {id(leaf): grad for leaf, grad in pairs}
        self.pairs = pairs
        self.unreached = unreached

    def __getitem__(self, leaf: Tensor) -> Tensor:
        return self._by_id[id(leaf)]

    def __contains__(self, leaf: Tensor) -> bool:
        return id(leaf) in self._by_id

    def __len__(self) -> int:
        return len(self.pairs)


def gradients(tape: Tape, output: Tensor, leaves: Iterable[Tensor]) -> GradientSet:
    """Reverse-accumulate d(output)/d(leaf) over a recorded tape.

    `output` must be scalar. Forward values are left untouched. A leaf the
    output does not depend on gets a zero gradient and is flagged in
    `GradientSet.unreached`.
    """
    leaves = list(leaves)
    if output.shape != ():
        raise ValueError(f"gradient output must be scalar, got shape {output.shape}")
    seen = set()
    for leaf in leaves:
        if id(leaf) in seen:
            raise ValueError("duplicate leaf in gradient request")
        seen.add(id(leaf))

    grads: dict[int, np.ndarray] = {id(output): np.ones((), dtype=output.dtype)}
    for entry in reversed(tape.entries):
        g = grads.pop(id(entry.output), None)
        if g is None:
            continue
        in_grads = entry.backward(g, tuple(t.data for t in entry.inputs), entry.output.data)
        for t, ig in zip(entry.inputs, in_grads):
            acc = grads.get(id(t))
            grads[id(t)] = ig if acc is None else acc + ig

    pairs, unreached = [], []
    for leaf in leaves:
        g = grads.get(id(leaf))
        if g is None:
            unreached.append(leaf)
            g = np.zeros(leaf.shape, dtype=leaf.dtype)
        else:
            _finite_or_raise(g, "gradient accumulation")
        pairs.append((leaf, Tensor(np.ascontiguousarray(g, dtype=leaf.dtype))))
    return GradientSet(pairs, unreached)


def verify_replay(tape: Tape) -> None:
    """Re-run every recorded entry and require bitwise-identical outputs."""
    for i, entry in enumerate(tape.entries):
        redo = entry.forward(*[t.data for t in entry.inputs])
        if not np.array_equal(redo, entry.output.data):
            raise AssertionError(f"replay mismatch at entry {i} ({entry.op})")
