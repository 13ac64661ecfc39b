"""Minimal reverse-mode differentiable toolkit for the two policy networks.

Everything is numpy float64. A Tensor is a tape node; backward() walks the
tape once. Parameters live in a ParamSet (named arrays + version counter);
the taped forward paths are used for gradients, and each network also has a
tape-free forward for acting, which must agree bit-for-bit with the tape.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np


class ShapeMismatch(ValueError):
    """Operands have incompatible shapes."""


class NonFiniteLoss(FloatingPointError):
    """A loss or gradient came out non-finite."""


class NonFiniteUpdate(FloatingPointError):
    """A parameter update produced non-finite values."""


# ---------------------------------------------------------------------------
# autograd tape

class Tensor:
    __slots__ = ("data", "grad", "parents", "bw", "requires_grad")

    def __init__(self, data, parents=(), bw: Optional[Callable] = None, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.parents = parents
        self.bw = bw
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.data.shape

    def _accum(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64)
        else:
            self.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum g down to `shape` (inverse of numpy broadcasting)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def add(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data + b.data, (a, b))
    def bw(g):
        a._accum(_unbroadcast(g, a.data.shape))
        b._accum(_unbroadcast(g, b.data.shape))
    out.bw = bw
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data - b.data, (a, b))
    def bw(g):
        a._accum(_unbroadcast(g, a.data.shape))
        b._accum(-_unbroadcast(g, b.data.shape))
    out.bw = bw
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data * b.data, (a, b))
    def bw(g):
        a._accum(_unbroadcast(g * b.data, a.data.shape))
        b._accum(_unbroadcast(g * a.data, b.data.shape))
    out.bw = bw
    return out


def scale(a: Tensor, c: float) -> Tensor:
    out = Tensor(a.data * c, (a,))
    out.bw = lambda g: a._accum(g * c)
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeMismatch(f"matmul {a.data.shape} @ {b.data.shape}")
    out = Tensor(a.data @ b.data, (a, b))
    def bw(g):
        a._accum(g @ b.data.T)
        b._accum(a.data.T @ g)
    out.bw = bw
    return out


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    out = Tensor(y, (a,))
    out.bw = lambda g: a._accum(g * (1.0 - y * y))
    return out


def sigmoid(a: Tensor) -> Tensor:
    y = 1.0 / (1.0 + np.exp(-a.data))
    out = Tensor(y, (a,))
    out.bw = lambda g: a._accum(g * y * (1.0 - y))
    return out


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.data)
    out = Tensor(y, (a,))
    out.bw = lambda g: a._accum(g * y)
    return out


def tsum(a: Tensor, axis=None, keepdims=False) -> Tensor:
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims), (a,))
    def bw(g):
        if axis is None:
            a._accum(np.broadcast_to(g, a.data.shape).copy())
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
            a._accum(np.broadcast_to(gg, a.data.shape).copy())
    out.bw = bw
    return out


def concat(ts: list[Tensor], axis=1) -> Tensor:
    out = Tensor(np.concatenate([t.data for t in ts], axis=axis), tuple(ts))
    sizes = [t.data.shape[axis] for t in ts]
    def bw(g):
        offset = 0
        for t, n in zip(ts, sizes):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(offset, offset + n)
            t._accum(g[tuple(sl)])
            offset += n
    out.bw = bw
    return out


def gather_rows(a: Tensor, idx: np.ndarray) -> Tensor:
    idx = np.asarray(idx, dtype=np.int64)
    out = Tensor(a.data[idx], (a,))
    def bw(g):
        if a.grad is None:
            a.grad = np.zeros_like(a.data)
        np.add.at(a.grad, idx, g)
    out.bw = bw
    return out


def take_row(a: Tensor, i: int) -> Tensor:
    out = Tensor(a.data[i:i + 1], (a,))
    def bw(g):
        if a.grad is None:
            a.grad = np.zeros_like(a.data)
        a.grad[i] += g[0]
    out.bw = bw
    return out


def select_cols(a: Tensor, idx: np.ndarray) -> Tensor:
    """Per-row column pick: out[i, 0] = a[i, idx[i]]."""
    idx = np.asarray(idx, dtype=np.int64)
    rows = np.arange(a.data.shape[0])
    out = Tensor(a.data[rows, idx][:, None], (a,))
    def bw(g):
        if a.grad is None:
            a.grad = np.zeros_like(a.data)
        np.add.at(a.grad, (rows, idx), g[:, 0])
    out.bw = bw
    return out


def log_softmax(a: Tensor) -> Tensor:
    x = a.data
    m = x.max(axis=1, keepdims=True)
    z = x - m
    ls = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    out = Tensor(ls, (a,))
    def bw(g):
        a._accum(g - np.exp(ls) * g.sum(axis=1, keepdims=True))
    out.bw = bw
    return out


def backward(t: Tensor) -> None:
    """Backpropagate from a scalar tensor through the tape."""
    if t.data.size != 1:
        raise ShapeMismatch("backward() expects a scalar loss")
    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(t, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            stack.append((p, False))
    t.grad = np.ones_like(t.data)
    for node in reversed(topo):
        if node.bw is not None and node.grad is not None:
            node.bw(node.grad)


def softmax_np(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


# ---------------------------------------------------------------------------
# parameters

class ParamSet:
    """Named float64 arrays with a version counter; snapshots are deep copies."""

    def __init__(self, arrays: dict[str, np.ndarray] | None = None):
        self.arrays: dict[str, np.ndarray] = {k: np.asarray(v, dtype=np.float64)
                                              for k, v in (arrays or {}).items()}
        self.version = 0

    def __getitem__(self, name: str) -> np.ndarray:
        return self.arrays[name]

    def __contains__(self, name):
        return name in self.arrays

    def names(self) -> list[str]:
        return list(self.arrays)

    def snapshot(self) -> "ParamSet":
        s = ParamSet({k: v.copy() for k, v in self.arrays.items()})
        s.version = self.version
        return s

    def zeros_like(self) -> dict[str, np.ndarray]:
        return {k: np.zeros_like(v) for k, v in self.arrays.items()}

    def check_finite(self) -> None:
        for k, v in self.arrays.items():
            if not np.all(np.isfinite(v)):
                raise NonFiniteUpdate(f"non-finite values in parameter {k}")

    def lift(self) -> dict[str, Tensor]:
        return {k: Tensor(v, requires_grad=True) for k, v in self.arrays.items()}


def grads_from(lifted: dict[str, Tensor], params: ParamSet) -> dict[str, np.ndarray]:
    out = {}
    for k, t in lifted.items():
        g = t.grad if t.grad is not None else np.zeros_like(params[k])
        if not np.all(np.isfinite(g)):
            raise NonFiniteLoss(f"non-finite gradient for {k}")
        out[k] = g
    return out


def add_grads(acc: dict[str, np.ndarray], g: dict[str, np.ndarray]) -> None:
    for k in g:
        acc[k] += g[k]


def grad_norm(g: dict[str, np.ndarray]) -> float:
    return float(np.sqrt(sum(float((v * v).sum()) for v in g.values())))


def _uniform_init(rng: np.random.Generator, shape: tuple, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(max(fan_in, 1))
    return rng.uniform(-bound, bound, size=shape)


# ---------------------------------------------------------------------------
# optimizers

@dataclass
class RmsPropState:
    decay: float = 0.99
    eps: float = 1e-5
    sq: dict[str, np.ndarray] = field(default_factory=dict)


def apply_update(params: ParamSet, grads: dict[str, np.ndarray], lr: float,
                 opt_state: Optional[RmsPropState] = None) -> None:
    """Descend the gradient in place: plain step, or RMSProp when given state."""
    for k, g in grads.items():
        p = params.arrays[k]
        if opt_state is None:
            p -= lr * g
        else:
            sq = opt_state.sq.get(k)
            if sq is None:
                sq = opt_state.sq[k] = np.zeros_like(p)
            sq *= opt_state.decay
            sq += (1.0 - opt_state.decay) * g * g
            p -= lr * g / (np.sqrt(sq) + opt_state.eps)
    params.version += 1
    params.check_finite()


# ---------------------------------------------------------------------------
# layers (fused tape nodes: one backward closure per layer keeps tapes short)

def linear(pt: dict[str, Tensor], prefix: str, x: Tensor) -> Tensor:
    w, b = pt[f"{prefix}.w"], pt[f"{prefix}.b"]
    if x.data.ndim != 2 or x.data.shape[1] != w.data.shape[0]:
        raise ShapeMismatch(f"linear {x.data.shape} @ {w.data.shape}")
    out = Tensor(x.data @ w.data + b.data, (x, w, b))
    def bw(g):
        x._accum(g @ w.data.T)
        w._accum(x.data.T @ g)
        b._accum(g.sum(axis=0))
    out.bw = bw
    return out


def dense(pt: dict[str, Tensor], prefix: str, x: Tensor) -> Tensor:
    """Linear layer followed by tanh, as a single tape node."""
    w, b = pt[f"{prefix}.w"], pt[f"{prefix}.b"]
    if x.data.ndim != 2 or x.data.shape[1] != w.data.shape[0]:
        raise ShapeMismatch(f"dense {x.data.shape} @ {w.data.shape}")
    y = np.tanh(x.data @ w.data + b.data)
    out = Tensor(y, (x, w, b))
    def bw(g):
        da = g * (1.0 - y * y)
        x._accum(da @ w.data.T)
        w._accum(x.data.T @ da)
        b._accum(da.sum(axis=0))
    out.bw = bw
    return out


def dense_np(params: ParamSet, prefix: str, x: np.ndarray) -> np.ndarray:
    return x @ params[f"{prefix}.w"] + params[f"{prefix}.b"]


def _dense_params(rng, prefix, n_in, n_out) -> dict[str, np.ndarray]:
    return {
        f"{prefix}.w": _uniform_init(rng, (n_in, n_out), n_in),
        f"{prefix}.b": _uniform_init(rng, (n_out,), n_in),
    }


def gru_cell(pt: dict[str, Tensor], prefix: str, x: Tensor, h: Tensor) -> Tensor:
    p = {k: pt[f"{prefix}.{k}"] for k in ("wz", "uz", "bz", "wr", "ur", "br", "wh", "uh", "bh")}
    xd, hd = x.data, h.data
    z = 1.0 / (1.0 + np.exp(-(xd @ p["wz"].data + hd @ p["uz"].data + p["bz"].data)))
    r = 1.0 / (1.0 + np.exp(-(xd @ p["wr"].data + hd @ p["ur"].data + p["br"].data)))
    rh = r * hd
    c = np.tanh(xd @ p["wh"].data + rh @ p["uh"].data + p["bh"].data)
    out = Tensor((1.0 - z) * hd + z * c, (x, h) + tuple(p.values()))
    def bw(g):
        dz = g * (c - hd) * z * (1.0 - z)
        dc = g * z * (1.0 - c * c)
        dh = g * (1.0 - z)
        drh = dc @ p["uh"].data.T
        dr = drh * hd * r * (1.0 - r)
        dh += drh * r
        dh += dz @ p["uz"].data.T + dr @ p["ur"].data.T
        dx = dz @ p["wz"].data.T + dr @ p["wr"].data.T + dc @ p["wh"].data.T
        x._accum(dx)
        h._accum(dh)
        p["wz"]._accum(xd.T @ dz); p["uz"]._accum(hd.T @ dz); p["bz"]._accum(dz.sum(axis=0))
        p["wr"]._accum(xd.T @ dr); p["ur"]._accum(hd.T @ dr); p["br"]._accum(dr.sum(axis=0))
        p["wh"]._accum(xd.T @ dc); p["uh"]._accum(rh.T @ dc); p["bh"]._accum(dc.sum(axis=0))
    out.bw = bw
    return out


def gru_cell_np(params: ParamSet, prefix: str, x: np.ndarray, h: np.ndarray) -> np.ndarray:
    z = 1.0 / (1.0 + np.exp(-(x @ params[f"{prefix}.wz"] + h @ params[f"{prefix}.uz"] + params[f"{prefix}.bz"])))
    r = 1.0 / (1.0 + np.exp(-(x @ params[f"{prefix}.wr"] + h @ params[f"{prefix}.ur"] + params[f"{prefix}.br"])))
    c = np.tanh(x @ params[f"{prefix}.wh"] + (r * h) @ params[f"{prefix}.uh"] + params[f"{prefix}.bh"])
    return (1.0 - z) * h + z * c


def _gru_params(rng, prefix, n_in, n_hid) -> dict[str, np.ndarray]:
    out = {}
    for gate in ("z", "r", "h"):
        out[f"{prefix}.w{gate}"] = _uniform_init(rng, (n_in, n_hid), n_in)
        out[f"{prefix}.u{gate}"] = _uniform_init(rng, (n_hid, n_hid), n_hid)
        out[f"{prefix}.b{gate}"] = _uniform_init(rng, (n_hid,), n_hid)
    return out


def embedding_bag(pt: dict[str, Tensor], name: str, ids: np.ndarray, length: int,
                  dim: int) -> Tensor:
    """Mean of the embeddings of the first `length` ids; zeros when empty."""
    if length == 0:
        return Tensor(np.zeros((1, dim)))
    rows = gather_rows(pt[name], np.asarray(ids[:length]))
    return scale(tsum(rows, axis=0, keepdims=True), 1.0 / length)


def embedding_bag_np(params: ParamSet, name: str, ids, length: int, dim: int) -> np.ndarray:
    if length == 0:
        return np.zeros((1, dim))
    return params[name][np.asarray(ids[:length])].mean(axis=0, keepdims=True)


# ---------------------------------------------------------------------------
# the two network shapes

@dataclass(frozen=True)
class ExecutorNet:
    """Grid view -> dense x2 -> GRU -> concat subgoal one-hot -> dense -> head."""

    obs_dim: int
    n_subgoals: int
    n_out: int
    fc_dim: int = 128
    gru_dim: int = 64
    comb_dim: int = 64

    def init_params(self, rng: np.random.Generator) -> ParamSet:
        arrays = {}
        arrays.update(_dense_params(rng, "fc1", self.obs_dim, self.fc_dim))
        arrays.update(_dense_params(rng, "fc2", self.fc_dim, self.fc_dim))
        arrays.update(_gru_params(rng, "gru", self.fc_dim, self.gru_dim))
        arrays.update(_dense_params(rng, "comb", self.gru_dim + self.n_subgoals, self.comb_dim))
        arrays.update(_dense_params(rng, "head", self.comb_dim, self.n_out))
        return ParamSet(arrays)

    def initial_state(self) -> np.ndarray:
        return np.zeros((1, self.gru_dim))

    def forward(self, pt: dict[str, Tensor], obs: np.ndarray, subgoal: np.ndarray,
                h: Tensor) -> tuple[Tensor, Tensor, Tensor]:
        """Taped forward; returns (output, new_state, penultimate)."""
        x = dense(pt, "fc1", Tensor(np.atleast_2d(obs)))
        x = dense(pt, "fc2", x)
        h2 = gru_cell(pt, "gru", x, h)
        z = concat([h2, Tensor(np.atleast_2d(subgoal))], axis=1)
        z = dense(pt, "comb", z)
        return linear(pt, "head", z), h2, z

    def forward_np(self, params: ParamSet, obs: np.ndarray, subgoal: np.ndarray,
                   h: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        x = np.tanh(dense_np(params, "fc1", np.atleast_2d(obs)))
        x = np.tanh(dense_np(params, "fc2", x))
        h2 = gru_cell_np(params, "gru", x, h)
        z = np.tanh(dense_np(params, "comb", np.concatenate([h2, np.atleast_2d(subgoal)], axis=1)))
        return dense_np(params, "head", z), h2, z

    def forward_sequence(self, pt: dict[str, Tensor], obs_seq: np.ndarray,
                         subgoal: np.ndarray, h0: Tensor) -> Tensor:
        return self.forward_sequence_h(pt, obs_seq, subgoal, h0)[0]

    def forward_sequence_h(self, pt: dict[str, Tensor], obs_seq: np.ndarray,
                           subgoal: np.ndarray, h0: Tensor) -> tuple[Tensor, Tensor]:
        """Taped forward over a whole segment; the non-recurrent trunk and the
        heads run batched, only the GRU walks the steps."""
        t_len = obs_seq.shape[0]
        x = dense(pt, "fc1", Tensor(obs_seq))
        x = dense(pt, "fc2", x)
        h = h0
        hs = []
        for t in range(t_len):
            h = gru_cell(pt, "gru", take_row(x, t), h)
            hs.append(h)
        big_h = concat(hs, axis=0)
        goals = Tensor(np.repeat(np.atleast_2d(subgoal), t_len, axis=0))
        z = dense(pt, "comb", concat([big_h, goals], axis=1))
        return linear(pt, "head", z), h


@dataclass(frozen=True)
class SelectorNet:
    """Token embedding-bag + observation dense -> dense x2 -> 24 Q-values."""

    vocab_size: int
    n_obs: int = 24
    n_out: int = 24
    emb_dim: int = 16
    obs_dim: int = 64
    hid_dim: int = 64

    def init_params(self, rng: np.random.Generator) -> ParamSet:
        arrays = {"emb": _uniform_init(rng, (self.vocab_size, self.emb_dim), self.emb_dim)}
        arrays.update(_dense_params(rng, "obs", self.n_obs, self.obs_dim))
        arrays.update(_dense_params(rng, "h1", self.emb_dim + self.obs_dim, self.hid_dim))
        arrays.update(_dense_params(rng, "h2", self.hid_dim, self.hid_dim))
        arrays.update(_dense_params(rng, "head", self.hid_dim, self.n_out))
        return ParamSet(arrays)

    def forward(self, pt: dict[str, Tensor], ids, length: int,
                obs: np.ndarray) -> tuple[Tensor, Tensor]:
        e = embedding_bag(pt, "emb", np.asarray(ids), length, self.emb_dim)
        o = dense(pt, "obs", Tensor(np.atleast_2d(obs).astype(np.float64)))
        z = dense(pt, "h1", concat([e, o], axis=1))
        z = dense(pt, "h2", z)
        return linear(pt, "head", z), z

    def forward_np(self, params: ParamSet, ids, length: int,
                   obs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        e = embedding_bag_np(params, "emb", ids, length, self.emb_dim)
        o = np.tanh(dense_np(params, "obs", np.atleast_2d(obs).astype(np.float64)))
        z = np.tanh(dense_np(params, "h1", np.concatenate([e, o], axis=1)))
        z = np.tanh(dense_np(params, "h2", z))
        return dense_np(params, "head", z), z


# ---------------------------------------------------------------------------
# checkpoint format: magic, u32 version, u32 count, then per array
# u16 name length, utf-8 name, u8 ndim, u32 dims, float32 little-endian data

_MAGIC = b"LGCK"


def save_arrays(path: str | Path, arrays: dict[str, np.ndarray]) -> None:
    chunks = [_MAGIC, np.uint32(1).tobytes(), np.uint32(len(arrays)).tobytes()]
    for name, arr in arrays.items():
        nb = name.encode("utf-8")
        chunks.append(np.uint16(len(nb)).tobytes())
        chunks.append(nb)
        chunks.append(np.uint8(arr.ndim).tobytes())
        chunks.append(np.asarray(arr.shape, dtype="<u4").tobytes())
        chunks.append(np.asarray(arr, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_arrays(path: str | Path) -> dict[str, np.ndarray]:
    buf = Path(path).read_bytes()
    if buf[:4] != _MAGIC:
        raise ValueError(f"not a checkpoint file: {path}")
    pos = 4
    version = int(np.frombuffer(buf, "<u4", 1, pos)[0]); pos += 4
    if version != 1:
        raise ValueError(f"unknown checkpoint version {version}")
    count = int(np.frombuffer(buf, "<u4", 1, pos)[0]); pos += 4
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        nlen = int(np.frombuffer(buf, "<u2", 1, pos)[0]); pos += 2
        name = buf[pos:pos + nlen].decode("utf-8"); pos += nlen
        ndim = int(np.frombuffer(buf, "<u1", 1, pos)[0]); pos += 1
        shape = tuple(np.frombuffer(buf, "<u4", ndim, pos).tolist()); pos += 4 * ndim
        n = int(np.prod(shape)) if shape else 1
        data = np.frombuffer(buf, "<f4", n, pos).reshape(shape); pos += 4 * n
        out[name] = data.astype(np.float64)
    return out
