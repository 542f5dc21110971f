"""U-shaped tangent-convolution classifier for octree vertices.

Point branch: per scale a signal/tangent convolution stack with mean pooling
between scales and an unpooling decoder with skip concatenation. Vertex
branch: per-scale tangent convolutions reading point features of the same
scale, joined by 1x1 convolutions and vertex unpooling, ending in one logit.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .autodiff import Tape, Var, matmul, sigmoid
from .errors import (
    CorruptCheckpoint,
    HyperparameterMismatch,
    IndexOutOfRange,
    NonFiniteLoss,
    ShapeMismatch,
    VersionMismatch,
)
from .features import PartInputs
from .tangent import N_SIGNALS, TangentConfig

STATE_VERSION = 1


@dataclass(frozen=True)
class NetworkConfig:
    point_widths: tuple = (16, 32, 64)
    vertex_widths: tuple = (64, 32)
    extent: int = 3
    slope: float = 0.1
    convs_per_scale: int = 2
    depth: int | None = None  # octree depth the weights were trained for; None accepts any

    def __post_init__(self):
        object.__setattr__(self, "point_widths", tuple(int(w) for w in self.point_widths))
        object.__setattr__(self, "vertex_widths", tuple(int(w) for w in self.vertex_widths))
        if len(self.point_widths) != 3 or len(self.vertex_widths) != 2:
            raise ValueError("need three point widths and two vertex widths")
        if min(self.point_widths + self.vertex_widths) < 1 or self.convs_per_scale < 1:
            raise ValueError("widths and convs_per_scale must be positive")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["point_widths"] = list(self.point_widths)
        d["vertex_widths"] = list(self.vertex_widths)
        return d

    def layer_shapes(self) -> dict[str, tuple[int, int]]:
        """(fan_in, fan_out) of every layer, in a fixed order."""
        P = self.extent * self.extent
        w1, w2, w3 = self.point_widths
        u2, u1 = self.vertex_widths
        shapes = {"p1_sig": (P * N_SIGNALS, w1)}
        for k in range(1, self.convs_per_scale):
            shapes[f"p1_conv{k}"] = (P * w1, w1)
        for s, (cin, cout) in ((2, (w1, w2)), (3, (w2, w3))):
            shapes[f"p{s}_conv0"] = (P * cin, cout)
            for k in range(1, self.convs_per_scale):
                shapes[f"p{s}_conv{k}"] = (P * cout, cout)
        shapes["d2"] = (P * (w3 + w2), w2)
        shapes["d1"] = (P * (w2 + w1), w1)
        shapes["v3"] = (P * w3, w3)
        shapes["v2"] = (P * w2, w2)
        shapes["v1"] = (P * w1, w1)
        shapes["v1_sig"] = (P * N_SIGNALS, w1)
        shapes["u2"] = (w3 + w2, u2)
        shapes["u1"] = (u2 + 2 * w1, u1)
        shapes["head"] = (u1, 1)
        return shapes


@dataclass
class NetworkState:
    config: NetworkConfig
    params: dict  # name -> float32 array; weights "<layer>.w", biases "<layer>.b"
    version: int = STATE_VERSION
    meta: dict = field(default_factory=dict)

    @property
    def parameter_count(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def copy(self) -> "NetworkState":
        return NetworkState(self.config, {k: v.copy() for k, v in self.params.items()},
                            self.version, dict(self.meta))

    def validate(self) -> None:
        for name, (fi, fo) in self.config.layer_shapes().items():
            w, b = self.params.get(f"{name}.w"), self.params.get(f"{name}.b")
            if w is None or b is None or w.shape != (fi, fo) or b.shape != (fo,):
                raise ShapeMismatch(f"layer {name} does not match hyperparameters")
        for name, p in self.params.items():
            if not np.isfinite(p).all():
                raise ShapeMismatch(f"non-finite entries in {name}")


def init_state(config: NetworkConfig = NetworkConfig(), seed: int = 0) -> NetworkState:
    """Uniform fan-in initialization, zero biases."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, (fi, fo) in config.layer_shapes().items():
        bound = 1.0 / math.sqrt(fi)
        params[f"{name}.w"] = rng.uniform(-bound, bound, size=(fi, fo)).astype(np.float32)
        params[f"{name}.b"] = np.zeros(fo, dtype=np.float32)
    return NetworkState(config, params)


def zero_state(config: NetworkConfig = NetworkConfig()) -> NetworkState:
    return NetworkState(config, {f"{n}{s}": np.zeros(shape if s == ".w" else shape[1], np.float32)
                                 for n, shape in config.layer_shapes().items()
                                 for s in (".w", ".b")})


def receptive_radius(depth: int, tcfg: TangentConfig = TangentConfig(),
                     config: NetworkConfig = NetworkConfig()) -> float:
    """Upper bound on the distance from a vertex to any raw input point that can
    influence its prediction, including hash-cell membership of every
    representative on the way."""
    r = [tcfg.radius(depth, s) for s in (1, 2, 3)]
    a = [math.sqrt(3) / (1 << (depth + 2 - s)) for s in (0, 1, 2)]  # point cell diagonals
    b = [0.0, math.sqrt(3) / (1 << (depth - 1)), math.sqrt(3) / (1 << (depth - 2))]  # vertex cells

    def conv(s, rho):
        return r[s] + max(rho, a[s])

    x = conv(0, a[0])
    for _ in range(1, config.convs_per_scale):
        x = conv(0, x)
    x1 = x
    x = x1 + a[1]
    for _ in range(config.convs_per_scale):
        x = conv(1, x)
    x2 = x
    x = x2 + a[2]
    for _ in range(config.convs_per_scale):
        x = conv(2, x)
    x3 = x
    d2 = conv(1, max(x3 + a[2], x2))
    d1 = conv(0, max(d2 + a[1], x1))
    v3 = conv(2, x3)
    v2 = conv(1, d2)
    v1 = max(conv(0, d1), conv(0, a[0]))
    u2 = max(v3 + b[2], v2)
    return max(u2 + b[1], v1)


# --------------------------------------------------------------------------
# stand-alone operations (no tape)


def tangent_conv_forward(x: np.ndarray, table: sp.csr_matrix, w: np.ndarray,
                         b: np.ndarray | None = None) -> np.ndarray:
    """out[q] = W^T vec(gathered l*l x C_in image at q) + b."""
    if table.shape[1] != x.shape[0]:
        raise ShapeMismatch(f"table has {table.shape[1]} sources, input has {x.shape[0]} rows")
    c_in = x.shape[1]
    if w.shape[0] % c_in or table.shape[0] % (w.shape[0] // c_in):
        raise ShapeMismatch(f"weight {w.shape} incompatible with {c_in} input channels")
    pixels = w.shape[0] // c_in
    img = np.asarray(table @ x).reshape(-1, pixels * c_in)
    out = matmul(img, w)
    return out if b is None else out + b


def conv1x1_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    if x.shape[1] != w.shape[0] or b.shape != (w.shape[1],):
        raise ShapeMismatch(f"input {x.shape}, weight {w.shape}, bias {b.shape}")
    return matmul(x, w) + b


def pool_forward(x: np.ndarray, pool_index: np.ndarray, n_coarse: int | None = None) -> np.ndarray:
    """Per-cell mean of fine features; ``pool_index[i]`` is the cell of fine element i."""
    pool_index = np.asarray(pool_index, dtype=np.int64)
    n = int(pool_index.max()) + 1 if n_coarse is None else n_coarse
    if len(pool_index) != len(x):
        raise ShapeMismatch("pool index length differs from input rows")
    if len(pool_index) and (pool_index.min() < 0 or pool_index.max() >= n):
        raise IndexOutOfRange("pool index outside coarse range")
    counts = np.bincount(pool_index, minlength=n).astype(x.dtype)
    sums = np.stack([np.bincount(pool_index, x[:, c], minlength=n) for c in range(x.shape[1])], 1)
    return (sums / np.maximum(counts, 1)[:, None]).astype(x.dtype)


def unpool_forward(x: np.ndarray, unpool_index: np.ndarray) -> np.ndarray:
    """Broadcast coarse features to members; ``unpool_index[i]`` is the cell of fine element i."""
    unpool_index = np.asarray(unpool_index, dtype=np.int64)
    if len(unpool_index) and (unpool_index.min() < 0 or unpool_index.max() >= len(x)):
        raise IndexOutOfRange("unpool index outside coarse range")
    return x[unpool_index]


# --------------------------------------------------------------------------
# composed network


def _check(part: PartInputs, cfg: NetworkConfig) -> None:
    if part.extent != cfg.extent:
        raise HyperparameterMismatch(f"part built with extent {part.extent}, network expects {cfg.extent}")
    if cfg.depth is not None and part.depth != cfg.depth:
        raise HyperparameterMismatch(f"part built at depth {part.depth}, network trained at {cfg.depth}")


class _Net:
    def __init__(self, tape: Tape, params: dict[str, Var], cfg: NetworkConfig):
        self.t, self.p, self.cfg = tape, params, cfg

    def act(self, x):
        return self.t.leaky_relu(x, self.cfg.slope)

    def dense(self, x, name):
        return self.t.affine(x, self.p[f"{name}.w"], self.p[f"{name}.b"])

    def tconv(self, x, table, name):
        img = self.t.spmm(table, x)
        rows = table.shape[0] // (self.cfg.extent ** 2)
        return self.dense(self.t.reshape(img, (rows, -1)), name)

    def signal_conv(self, signal, name):
        x = self.t.leaf(signal.reshape(len(signal), -1), requires_grad=False)
        return self.dense(x, name)

    def encode_points(self, inp: dict):
        t, cfg = self.t, self.cfg
        G = inp["p_tables"]
        x = self.act(self.signal_conv(inp["p_signal"], "p1_sig"))
        for k in range(1, cfg.convs_per_scale):
            x = self.act(self.tconv(x, G[0], f"p1_conv{k}"))
        x1 = x
        x = t.spmm(inp["p_pool"][0], x1)
        for k in range(cfg.convs_per_scale):
            x = self.act(self.tconv(x, G[1], f"p2_conv{k}"))
        x2 = x
        x = t.spmm(inp["p_pool"][1], x2)
        for k in range(cfg.convs_per_scale):
            x = self.act(self.tconv(x, G[2], f"p3_conv{k}"))
        x3 = x
        d2 = self.act(self.tconv(t.concat([t.spmm(inp["p_unpool"][1], x3), x2]), G[1], "d2"))
        d1 = self.act(self.tconv(t.concat([t.spmm(inp["p_unpool"][0], d2), x1]), G[0], "d1"))
        return x3, d2, d1

    def classify_vertices(self, inp: dict, feats):
        t = self.t
        x3, d2, d1 = feats
        H = inp["v_tables"]
        v3 = self.act(self.tconv(x3, H[2], "v3"))
        v2 = self.act(self.tconv(d2, H[1], "v2"))
        v1 = self.act(self.tconv(d1, H[0], "v1"))
        vs = self.act(self.signal_conv(inp["v_signal"], "v1_sig"))
        u2 = self.act(self.dense(t.concat([t.spmm(inp["v_unpool"][1], v3), v2]), "u2"))
        u1 = self.act(self.dense(t.concat([t.spmm(inp["v_unpool"][0], u2), v1, vs]), "u1"))
        return self.dense(u1, "head")


def _run(part: PartInputs, state: NetworkState, dtype, requires_grad: bool, point_features=None):
    _check(part, state.config)
    tape = Tape()
    params = {k: tape.leaf(v.astype(dtype, copy=False), requires_grad) for k, v in state.params.items()}
    net = _Net(tape, params, state.config)
    inp = part.cast(dtype)
    if point_features is None:
        feats = net.encode_points(inp)
    else:
        feats = tuple(tape.leaf(f, requires_grad=False) for f in point_features)
    logits = net.classify_vertices(inp, feats)
    return tape, params, logits, feats


def encode_points(part: PartInputs, state: NetworkState, dtype=np.float32) -> tuple:
    """Point-branch features; reusable across parts sharing the same point set."""
    _, _, _, feats = _run(part, state, dtype, False)
    return tuple(f.value for f in feats)


def forward_logits(part: PartInputs, state: NetworkState, dtype=np.float32,
                   point_features: tuple | None = None) -> np.ndarray:
    _, _, logits, _ = _run(part, state, dtype, False, point_features)
    return logits.value.reshape(-1)


def forward(part: PartInputs, state: NetworkState, dtype=np.float32,
            point_features: tuple | None = None) -> np.ndarray:
    """Per-vertex probability of lying in front of the surface."""
    return sigmoid(forward_logits(part, state, dtype, point_features))


def predict_labels(part: PartInputs, state: NetworkState, dtype=np.float32,
                   point_features: tuple | None = None) -> np.ndarray:
    return (forward_logits(part, state, dtype, point_features) > 0).astype(np.uint8)


def backward(part: PartInputs, state: NetworkState, labels: np.ndarray | None = None,
             dtype=np.float32) -> tuple[float, dict[str, np.ndarray]]:
    """Mean BCE loss and its gradient for every parameter."""
    labels = part.labels if labels is None else labels
    if labels is None:
        raise ValueError("no labels supplied")
    labels = np.asarray(labels)
    if not np.isin(labels, (0, 1)).all():
        raise ValueError("labels must be 0 or 1")
    tape, params, logits, _ = _run(part, state, dtype, True)
    loss = tape.bce_with_logits(logits, labels)
    if not np.isfinite(loss.value):
        raise NonFiniteLoss("loss is not finite; check inputs for NaN")
    tape.backward(loss)
    grads = {k: (v.grad if v.grad is not None else np.zeros_like(v.value)) for k, v in params.items()}
    return float(loss.value), grads


# --------------------------------------------------------------------------
# checkpoints

_CK_MAGIC = b"SRCK"


def save_checkpoint(state: NetworkState, path) -> None:
    hyper = json.dumps({"config": state.config.to_dict(), "meta": state.meta},
                       sort_keys=True).encode()
    out = [_CK_MAGIC, struct.pack("<II", state.version, len(hyper)), hyper,
           struct.pack("<I", len(state.params))]
    for name in sorted(state.params):
        a = np.ascontiguousarray(state.params[name], dtype="<f4")
        nb = name.encode()
        out.append(struct.pack("<H", len(nb)) + nb + struct.pack("<B", a.ndim)
                   + struct.pack(f"<{a.ndim}q", *a.shape) + a.tobytes())
    body = b"".join(out)
    body += hashlib.blake2b(body, digest_size=8).digest()
    Path(path).write_bytes(body)


def load_checkpoint(path) -> NetworkState:
    buf = Path(path).read_bytes()
    if len(buf) < 20 or buf[:4] != _CK_MAGIC:
        raise CorruptCheckpoint(f"{path}: not a checkpoint")
    if hashlib.blake2b(buf[:-8], digest_size=8).digest() != buf[-8:]:
        raise CorruptCheckpoint(f"{path}: checksum mismatch (truncated or modified)")
    version, hl = struct.unpack_from("<II", buf, 4)
    if version != STATE_VERSION:
        raise VersionMismatch(f"{path}: checkpoint version {version}, expected {STATE_VERSION}")
    pos = 12
    try:
        hyper = json.loads(buf[pos:pos + hl]); pos += hl
        (n,) = struct.unpack_from("<I", buf, pos); pos += 4
        params = {}
        for _ in range(n):
            (nl,) = struct.unpack_from("<H", buf, pos); pos += 2
            name = buf[pos:pos + nl].decode(); pos += nl
            (ndim,) = struct.unpack_from("<B", buf, pos); pos += 1
            shape = struct.unpack_from(f"<{ndim}q", buf, pos); pos += 8 * ndim
            size = int(np.prod(shape))
            params[name] = np.frombuffer(buf, "<f4", size, pos).reshape(shape).astype(np.float32)
            pos += 4 * size
        cfg = hyper["config"]
        config = NetworkConfig(**{k: tuple(v) if isinstance(v, list) else v for k, v in cfg.items()})
    except (struct.error, ValueError, KeyError, TypeError) as exc:
        raise CorruptCheckpoint(f"{path}: {exc}") from None
    state = NetworkState(config, params, version, hyper.get("meta", {}))
    state.validate()
    return state
