"""Small numpy neural-network substrate: dense stacks with explicit
backpropagation, same-size average pooling, Adam and a binary checkpoint.

Checkpoint layout (``.rtom``), all little-endian::

    b"RTOM"  u32 version  u32 n_layers
    per layer: u32 in  u32 out  u8 activation  f32[in*out] W (row-major)  f32[out] b
"""
from __future__ import annotations

import functools
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.special import expit

ACTIVATIONS = ("linear", "relu", "sigmoid")
MAGIC = b"RTOM"
VERSION = 1


class CheckpointError(ValueError):
    pass


def relu(x):
    return np.maximum(x, 0)


def sigmoid(x):
    return expit(x)


@dataclass
class Dense:
    w: np.ndarray
    b: np.ndarray
    activation: str = "relu"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.w.ndim != 2 or self.b.shape != (self.w.shape[1],):
            raise ValueError(f"inconsistent layer shapes {self.w.shape}, {self.b.shape}")

    @property
    def in_dim(self) -> int:
        return self.w.shape[0]

    @property
    def out_dim(self) -> int:
        return self.w.shape[1]


class Mlp:
    """Sequence of affine layers, each followed by its activation."""

    def __init__(self, layers: list[Dense]):
        if not layers:
            raise ValueError("an MLP needs at least one layer")
        for a, b in zip(layers, layers[1:]):
            if a.out_dim != b.in_dim:
                raise ValueError(f"layer widths do not chain: {a.out_dim} -> {b.in_dim}")
        self.layers = layers

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    @property
    def dtype(self):
        return self.layers[0].w.dtype

    @property
    def dims(self) -> list[int]:
        return [self.in_dim] + [layer.out_dim for layer in self.layers]

    def params(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out += [layer.w, layer.b]
        return out

    def astype(self, dtype) -> "Mlp":
        return Mlp([Dense(l.w.astype(dtype), l.b.astype(dtype), l.activation) for l in self.layers])

    def copy(self) -> "Mlp":
        return self.astype(self.dtype)

    def forward(self, x):
        """Returns ``(output, cache)``; ``cache`` feeds :meth:`backward`."""
        x = np.asarray(x, dtype=self.dtype)
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ValueError(f"expected input of shape (batch, {self.in_dim}), got {x.shape}")
        cache = []
        h = x
        for layer in self.layers:
            a = h @ layer.w + layer.b
            if layer.activation == "relu":
                out = relu(a)
            elif layer.activation == "sigmoid":
                out = sigmoid(a)
            else:
                out = a
            cache.append((h, a, out))
            h = out
        return h, cache

    def __call__(self, x):
        return self.forward(x)[0]

    def backward(self, cache, dy):
        """Reverse pass.  Returns ``(grads, dx)`` with ``grads`` aligned to
        :meth:`params`."""
        if cache is None or len(cache) != len(self.layers):
            raise ValueError("backward needs the cache of a forward pass through this network")
        grads = [None] * (2 * len(self.layers))
        g = np.asarray(dy, dtype=self.dtype)
        for i in reversed(range(len(self.layers))):
            layer = self.layers[i]
            h, a, out = cache[i]
            if layer.activation == "relu":
                g = g * (a > 0)
            elif layer.activation == "sigmoid":
                g = g * out * (1 - out)
            grads[2 * i] = h.T @ g
            grads[2 * i + 1] = g.sum(axis=0)
            g = g @ layer.w.T
        return grads, g


def init_params(dims, activations, seed, dtype=np.float32) -> Mlp:
    """He-uniform weights for ReLU layers, Glorot-uniform otherwise; zero biases."""
    if isinstance(activations, str):
        activations = [activations] * (len(dims) - 1)
    if len(activations) != len(dims) - 1:
        raise ValueError("need one activation per layer")
    rng = np.random.default_rng(seed)
    layers = []
    for fan_in, fan_out, act in zip(dims[:-1], dims[1:], activations):
        if act == "relu":
            limit = np.sqrt(6.0 / fan_in)
        else:
            limit = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-limit, limit, size=(fan_in, fan_out)).astype(dtype)
        layers.append(Dense(w, np.zeros(fan_out, dtype=dtype), act))
    return Mlp(layers)


@functools.lru_cache(maxsize=8)
def pool_matrix(shape: tuple[int, int], window: int) -> sp.csr_matrix:
    """Sparse operator for a stride-1 mean filter with edge-replicate padding."""
    if window < 1 or window % 2 == 0:
        raise ValueError(f"pooling window must be a positive odd integer, got {window}")
    ny, nx = shape
    r = window // 2
    rows, cols = np.indices(shape)
    rows, cols = rows.ravel(), cols.ravel()
    out_idx, in_idx = [], []
    for dr in range(-r, r + 1):
        for dc in range(-r, r + 1):
            out_idx.append(rows * nx + cols)
            in_idx.append(np.clip(rows + dr, 0, ny - 1) * nx + np.clip(cols + dc, 0, nx - 1))
    vals = np.full(window * window * ny * nx, 1.0 / window ** 2)
    p = sp.coo_matrix((vals, (np.concatenate(out_idx), np.concatenate(in_idx))), shape=(ny * nx, ny * nx))
    return p.tocsr()


class AvgPool:
    """Stride-1 average pooling on flattened ``(batch, ny*nx)`` images."""

    def __init__(self, shape: tuple[int, int], window: int):
        self.shape = tuple(shape)
        self.window = window
        self.matrix = pool_matrix(self.shape, window)
        self._t = self.matrix.T.tocsr()

    def forward(self, x):
        x = np.asarray(x)
        return (self.matrix @ x.T).T.astype(x.dtype, copy=False)

    __call__ = forward

    def backward(self, dy):
        dy = np.asarray(dy)
        return (self._t @ dy.T).T.astype(dy.dtype, copy=False)


def avg_pool_same(image, window: int) -> np.ndarray:
    """Pool one image (2-D) or a stack of images (3-D) without changing shape."""
    image = np.asarray(image)
    shape = image.shape[-2:]
    flat = image.reshape(-1, shape[0] * shape[1])
    return AvgPool(shape, window)(flat).reshape(image.shape)


class Adam:
    """Adam with bias correction; updates parameter arrays in place."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in self.params]
        self.v = [np.zeros_like(p) for p in self.params]

    def step(self, grads) -> None:
        if len(grads) != len(self.params):
            raise ValueError("gradient list does not match parameters")
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1 - b1 ** self.t
        c2 = 1 - b2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            if g.shape != p.shape:
                raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape}")
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p -= (self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.dtype, copy=False)


_LAYER = struct.Struct("<IIB")


def mlp_to_bytes(mlp: Mlp) -> bytes:
    chunks = [MAGIC, struct.pack("<II", VERSION, len(mlp.layers))]
    for layer in mlp.layers:
        chunks.append(_LAYER.pack(layer.in_dim, layer.out_dim, ACTIVATIONS.index(layer.activation)))
        chunks.append(np.ascontiguousarray(layer.w, dtype="<f4").tobytes())
        chunks.append(np.ascontiguousarray(layer.b, dtype="<f4").tobytes())
    return b"".join(chunks)


def mlp_from_bytes(data: bytes) -> Mlp:
    if data[:4] != MAGIC:
        raise CheckpointError(f"bad magic {data[:4]!r}")
    try:
        version, n_layers = struct.unpack_from("<II", data, 4)
        if version != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        pos = 12
        layers = []
        for _ in range(n_layers):
            n_in, n_out, act = _LAYER.unpack_from(data, pos)
            pos += _LAYER.size
            w = np.frombuffer(data, "<f4", n_in * n_out, pos).reshape(n_in, n_out).astype(np.float32)
            pos += 4 * n_in * n_out
            b = np.frombuffer(data, "<f4", n_out, pos).astype(np.float32)
            pos += 4 * n_out
            layers.append(Dense(w, b, ACTIVATIONS[act]))
    except (struct.error, ValueError, IndexError) as exc:
        if isinstance(exc, CheckpointError):
            raise
        raise CheckpointError(f"truncated or corrupt checkpoint: {exc}") from exc
    if pos != len(data):
        raise CheckpointError(f"{len(data) - pos} trailing bytes in checkpoint")
    return Mlp(layers)


def save_mlp(mlp: Mlp, path) -> None:
    Path(path).write_bytes(mlp_to_bytes(mlp))


def load_mlp(path) -> Mlp:
    return mlp_from_bytes(Path(path).read_bytes())
