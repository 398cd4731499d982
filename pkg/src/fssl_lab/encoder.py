"""Feedforward encoder pair with hand-derived gradients.

The online/target pair mirrors a query encoder plus a momentum-updated key
encoder. Parameters live in one flat float64 vector so federation,
projection, and aggregation can treat a model as a point in R^n; layer
matrices are exposed as views into that vector. Forward ends with L2
normalization, so every embedding lies on the unit sphere and backward has
to route through the normalization Jacobian (I - e e^T)/||raw||.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .core import RngStream
from .errors import CacheMismatch, DimMismatch, ZeroNorm

_ACTIVATIONS = ("tanh", "relu")
_CKPT_MAGIC = b"FSSL"
_CKPT_VERSION = 1


@dataclass(frozen=True)
class LayerLayout:
    """Widths [d_in, hidden..., d_emb] plus one activation per hidden layer."""

    dims: tuple[int, ...]
    activation: tuple[str, ...]

    def __init__(self, dims, activation="tanh"):
        dims = tuple(int(d) for d in dims)
        if len(dims) < 3:
            raise ValueError("layout needs input, >=1 hidden, and output widths")
        if dims[-1] < 2:
            raise ValueError("embedding dimension must be >= 2")
        if any(d < 1 for d in dims):
            raise ValueError("layer widths must be positive")
        n_hidden = len(dims) - 2
        if isinstance(activation, str):
            activation = (activation,) * n_hidden
        activation = tuple(activation)
        if len(activation) != n_hidden:
            raise ValueError(f"need {n_hidden} activations, got {len(activation)}")
        for a in activation:
            if a not in _ACTIVATIONS:
                raise ValueError(f"unknown activation {a!r}")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "activation", activation)

    @property
    def in_dim(self) -> int:
        return self.dims[0]

    @property
    def emb_dim(self) -> int:
        return self.dims[-1]

    @property
    def n_params(self) -> int:
        return sum(
            fo * fi + fo for fi, fo in zip(self.dims[:-1], self.dims[1:])
        )


@dataclass(eq=False)
class ModelParams:
    """All weights and biases of one encoder, flattened in layout order."""

    flat: np.ndarray
    layout: LayerLayout

    def __post_init__(self):
        self.flat = np.asarray(self.flat, dtype=np.float64)
        if self.flat.shape != (self.layout.n_params,):
            raise ValueError(
                f"flat has {self.flat.shape}, layout implies ({self.layout.n_params},)"
            )

    def copy(self) -> "ModelParams":
        return ModelParams(self.flat.copy(), self.layout)

    def layers(self) -> list[tuple[np.ndarray, np.ndarray]]:
        """(W, b) views into ``flat``; W has shape (fan_out, fan_in)."""
        out = []
        off = 0
        for fi, fo in zip(self.layout.dims[:-1], self.layout.dims[1:]):
            w = self.flat[off : off + fo * fi].reshape(fo, fi)
            off += fo * fi
            b = self.flat[off : off + fo]
            off += fo
            out.append((w, b))
        return out


@dataclass(eq=False)
class EncoderPair:
    """Online (trained) and target (momentum copy) encoders."""

    online: ModelParams
    target: ModelParams
    momentum: float

    def __post_init__(self):
        if self.online.layout != self.target.layout:
            raise ValueError("online/target layouts differ")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")


def init(layout: LayerLayout, rng: RngStream) -> ModelParams:
    """Glorot-uniform weights, zero biases."""
    chunks = []
    for fi, fo in zip(layout.dims[:-1], layout.dims[1:]):
        s = np.sqrt(6.0 / (fi + fo))
        chunks.append(rng.uniform(-s, s, size=fo * fi))
        chunks.append(np.zeros(fo))
    return ModelParams(np.concatenate(chunks), layout)


@dataclass(eq=False)
class ForwardCache:
    layout: LayerLayout
    x: np.ndarray                       # (n, d_in)
    hidden: list[tuple[np.ndarray, np.ndarray]]   # (pre-activation, activation) per hidden layer
    raw: np.ndarray                     # (n, d_emb) pre-normalization
    emb: np.ndarray                     # (n, d_emb) unit rows
    raw_norm: np.ndarray                # (n,)


def _act(name: str, z: np.ndarray) -> np.ndarray:
    return np.tanh(z) if name == "tanh" else np.maximum(z, 0.0)


def _act_grad(name: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    return 1.0 - a * a if name == "tanh" else (z > 0.0).astype(np.float64)


def forward_batch(p: ModelParams, x: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    """Embed a batch of inputs; rows of the result are unit-norm."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[1] != p.layout.in_dim:
        raise DimMismatch(f"input width {x.shape[1]}, layout wants {p.layout.in_dim}")
    layers = p.layers()
    a = x
    hidden = []
    for (w, b), act in zip(layers[:-1], p.layout.activation):
        z = a @ w.T + b
        a = _act(act, z)
        hidden.append((z, a))
    w_out, b_out = layers[-1]
    raw = a @ w_out.T + b_out
    norms = np.linalg.norm(raw, axis=1)
    if np.any(norms < 1e-12):
        raise ZeroNorm("raw encoder output has (near-)zero norm")
    emb = raw / norms[:, None]
    return emb, ForwardCache(p.layout, x, hidden, raw, emb, norms)


def backward_batch(p: ModelParams, cache: ForwardCache, d_emb: np.ndarray) -> np.ndarray:
    """Gradient of sum_i d_emb[i] . emb[i] with respect to the flat params."""
    if cache.layout != p.layout:
        raise CacheMismatch("cache built for a different layout")
    d = np.atleast_2d(np.asarray(d_emb, dtype=np.float64))
    if d.shape != cache.emb.shape:
        raise CacheMismatch(f"cotangent shape {d.shape} vs embeddings {cache.emb.shape}")

    # Through the normalization: d_raw = (d - (d.e) e) / ||raw||
    proj = np.sum(d * cache.emb, axis=1, keepdims=True)
    d_raw = (d - proj * cache.emb) / cache.raw_norm[:, None]

    layers = p.layers()
    grads: list[np.ndarray | None] = [None] * len(layers)

    a_prev = cache.hidden[-1][1] if cache.hidden else cache.x
    w_out, _ = layers[-1]
    grads[-1] = (d_raw.T @ a_prev, d_raw.sum(axis=0))
    d_a = d_raw @ w_out

    for li in range(len(cache.hidden) - 1, -1, -1):
        z, a = cache.hidden[li]
        d_z = d_a * _act_grad(p.layout.activation[li], z, a)
        a_prev = cache.hidden[li - 1][1] if li > 0 else cache.x
        w, _ = layers[li]
        grads[li] = (d_z.T @ a_prev, d_z.sum(axis=0))
        d_a = d_z @ w

    flat = np.empty_like(p.flat)
    off = 0
    for gw, gb in grads:
        flat[off : off + gw.size] = gw.ravel()
        off += gw.size
        flat[off : off + gb.size] = gb
        off += gb.size
    return flat


def forward(p: ModelParams, x: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    """Single-sample forward; returns (unit embedding, activation cache)."""
    emb, cache = forward_batch(p, np.asarray(x, dtype=np.float64).reshape(1, -1))
    return emb[0], cache

def backward(p: ModelParams, cache: ForwardCache, d_emb: np.ndarray) -> np.ndarray:
    """Single-sample vector-Jacobian product, shaped like ``p.flat``."""
    return backward_batch(p, cache, np.asarray(d_emb, dtype=np.float64).reshape(1, -1))


def momentum_update(pair: EncoderPair) -> EncoderPair:
    """target <- m*target + (1-m)*online; online is untouched."""
    m = pair.momentum
    pair.target.flat = m * pair.target.flat + (1.0 - m) * pair.online.flat
    return pair


def save_checkpoint(path, p: ModelParams) -> None:
    """Write header (magic, version, dim count, dims, activation codes) then float32 LE payload."""
    with open(path, "wb") as f:
        f.write(_CKPT_MAGIC)
        f.write(struct.pack("<I", _CKPT_VERSION))
        f.write(struct.pack("<I", len(p.layout.dims)))
        f.write(struct.pack(f"<{len(p.layout.dims)}I", *p.layout.dims))
        acts = [_ACTIVATIONS.index(a) for a in p.layout.activation]
        f.write(struct.pack(f"<{len(acts)}I", *acts))
        f.write(p.flat.astype("<f4").tobytes())


def load_checkpoint(path) -> ModelParams:
    with open(path, "rb") as f:
        if f.read(4) != _CKPT_MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        (version,) = struct.unpack("<I", f.read(4))
        if version != _CKPT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        (ndims,) = struct.unpack("<I", f.read(4))
        dims = struct.unpack(f"<{ndims}I", f.read(4 * ndims))
        acts = struct.unpack(f"<{ndims - 2}I", f.read(4 * (ndims - 2)))
        layout = LayerLayout(dims, tuple(_ACTIVATIONS[a] for a in acts))
        flat = np.frombuffer(f.read(4 * layout.n_params), dtype="<f4").astype(np.float64)
    return ModelParams(flat, layout)
