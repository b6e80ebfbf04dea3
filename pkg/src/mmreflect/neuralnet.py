"""Dense networks, a diagonal Gaussian policy head and Adam, in float64 numpy.

Networks take batches ``(B, input_dim)``; a single vector is treated as a
batch of one and returned with the batch axis dropped.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .vectormath import ContractError

LOG_2PI = math.log(2.0 * math.pi)
ACTIVATIONS = ("relu", "identity")


@dataclass
class Layer:
    weights: np.ndarray  # (in, out)
    biases: np.ndarray  # (out,)
    activation: str = "relu"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ContractError(f"unknown activation {self.activation!r}")
        if self.weights.ndim != 2 or self.biases.shape != (self.weights.shape[1],):
            raise ContractError("bias length must equal layer output width")


@dataclass
class DenseNet:
    layers: list

    def __post_init__(self):
        if not self.layers:
            raise ContractError("a network needs at least one layer")
        for a, b in zip(self.layers, self.layers[1:]):
            if a.weights.shape[1] != b.weights.shape[0]:
                raise ContractError("consecutive layer dimensions do not chain")

    @property
    def input_dim(self) -> int:
        return self.layers[0].weights.shape[0]

    @property
    def output_dim(self) -> int:
        return self.layers[-1].weights.shape[1]

    def params(self) -> list[np.ndarray]:
        """Parameter arrays in a fixed order (W0, b0, W1, b1, ...), shared not copied."""
        out = []
        for layer in self.layers:
            out += [layer.weights, layer.biases]
        return out

    def copy(self) -> "DenseNet":
        return DenseNet([Layer(l.weights.copy(), l.biases.copy(), l.activation) for l in self.layers])


def orthogonal(rng: np.random.Generator, n_in: int, n_out: int, gain: float) -> np.ndarray:
    a = rng.standard_normal((max(n_in, n_out), min(n_in, n_out)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if n_in < n_out:
        q = q.T
    return gain * q[:n_in, :n_out]


def build_mlp(rng: np.random.Generator, sizes, out_gain: float = 1.0, hidden_gain: float = math.sqrt(2.0)) -> DenseNet:
    """ReLU hidden layers, linear output, orthogonal init and zero biases."""
    sizes = list(sizes)
    if len(sizes) < 2:
        raise ContractError("need input and output sizes")
    layers = []
    for i, (a, b) in enumerate(zip(sizes, sizes[1:])):
        last = i == len(sizes) - 2
        w = orthogonal(rng, a, b, out_gain if last else hidden_gain)
        layers.append(Layer(w, np.zeros(b), "identity" if last else "relu"))
    return DenseNet(layers)


def _as_batch(net: DenseNet, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    x = x[None, :] if single else x
    if x.ndim != 2 or x.shape[1] != net.input_dim:
        raise ContractError(f"expected input width {net.input_dim}, got shape {x.shape}")
    return x, single


def forward(net: DenseNet, x) -> np.ndarray:
    h, single = _as_batch(net, x)
    for layer in net.layers:
        h = h @ layer.weights + layer.biases
        if layer.activation == "relu":
            h = np.maximum(h, 0.0)
    return h[0] if single else h


def forward_cached(net: DenseNet, x) -> tuple[np.ndarray, list]:
    """Forward pass keeping each layer's input and pre-activation for :func:`grad`."""
    h, _ = _as_batch(net, x)
    cache = []
    for layer in net.layers:
        z = h @ layer.weights + layer.biases
        cache.append((h, z))
        h = np.maximum(z, 0.0) if layer.activation == "relu" else z
    return h, cache


def grad(net: DenseNet, x, upstream) -> tuple[list[np.ndarray], np.ndarray]:
    """Reverse-mode gradients of ``sum(upstream * forward(x))``.

    Returns parameter gradients in :meth:`DenseNet.params` order (summed
    over the batch) and the gradient with respect to ``x``.
    """
    xb, single = _as_batch(net, x)
    out, cache = forward_cached(net, xb)
    g = np.asarray(upstream, dtype=float)
    g = g[None, :] if g.ndim == 1 else g
    if g.shape != out.shape:
        raise ContractError(f"upstream shape {g.shape} does not match output {out.shape}")
    grads = []
    for layer, (h, z) in zip(reversed(net.layers), reversed(cache)):
        if layer.activation == "relu":
            g = g * (z > 0)
        grads.append(g.sum(axis=0))
        grads.append(h.T @ g)
        g = g @ layer.weights.T
    grads.reverse()
    return grads, (g[0] if single else g)


# -- Adam -------------------------------------------------------------

@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0
    lr: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def for_params(cls, params, **kw) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], **kw)


def adam_step(params: list, grads: list, state: AdamState) -> tuple[list, AdamState]:
    """One bias-corrected Adam descent step, updating ``params`` and ``state`` in place."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ContractError("params, grads and moments must have equal counts")
    state.t += 1
    c1 = 1.0 - state.beta1 ** state.t
    c2 = 1.0 - state.beta2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape or p.shape != m.shape:
            raise ContractError(f"shape mismatch {p.shape} vs {g.shape}")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.epsilon)
    return params, state


# -- Gaussian policy --------------------------------------------------

@dataclass
class GaussianPolicyHead:
    net: DenseNet
    log_std: np.ndarray

    def __post_init__(self):
        self.log_std = np.asarray(self.log_std, dtype=float)
        if self.log_std.shape != (self.net.output_dim,):
            raise ContractError("one log_std per action dimension")
        if not np.all(np.isfinite(self.log_std)):
            raise ContractError("log_std must be finite")

    @property
    def action_dim(self) -> int:
        return self.net.output_dim

    def params(self) -> list[np.ndarray]:
        return self.net.params() + [self.log_std]

    def mean(self, obs) -> np.ndarray:
        return forward(self.net, obs)

    def copy(self) -> "GaussianPolicyHead":
        return GaussianPolicyHead(self.net.copy(), self.log_std.copy())


def gaussian_log_prob(mean, log_std, actions) -> np.ndarray:
    """Diagonal Gaussian log density, summed over the last axis."""
    z = (np.asarray(actions) - mean) * np.exp(-log_std)
    return np.sum(-0.5 * z * z - log_std - 0.5 * LOG_2PI, axis=-1)


def log_prob(head: GaussianPolicyHead, obs, actions) -> np.ndarray:
    return gaussian_log_prob(head.mean(obs), head.log_std, actions)


def policy_sample(head: GaussianPolicyHead, obs, rng: np.random.Generator):
    """Sample an action and return it with its log density (before any clipping)."""
    mu = head.mean(obs)
    action = mu + np.exp(head.log_std) * rng.standard_normal(mu.shape)
    return action, gaussian_log_prob(mu, head.log_std, action)


def policy_entropy(head: GaussianPolicyHead) -> float:
    return float(np.sum(head.log_std + 0.5 * (LOG_2PI + 1.0)))


def make_policy(rng: np.random.Generator, obs_dim: int, action_dim: int, hidden=(256, 256),
                init_std: float = 0.3) -> GaussianPolicyHead:
    net = build_mlp(rng, [obs_dim, *hidden, action_dim], out_gain=0.01)
    return GaussianPolicyHead(net, np.full(action_dim, math.log(init_std)))


# -- checkpoints ------------------------------------------------------

CHECKPOINT_MAGIC = b"MMRCKPT"
CHECKPOINT_VERSION = 1


def save_checkpoint(path, tensors: dict, meta: dict | None = None) -> None:
    """Write named float arrays plus JSON metadata in a deterministic binary layout.

    Layout: magic, version byte, header length (uint64 LE), UTF-8 JSON header
    with sorted keys, then each tensor's little-endian float64 bytes in
    header order.  Identical inputs give identical bytes.
    """
    names = sorted(tensors)
    arrays = [np.ascontiguousarray(tensors[n], dtype="<f8") for n in names]
    header = {"version": CHECKPOINT_VERSION, "meta": meta or {},
              "tensors": [{"name": n, "shape": list(a.shape)} for n, a in zip(names, arrays)]}
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC + bytes([CHECKPOINT_VERSION]))
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for a in arrays:
            fh.write(a.tobytes())


def load_checkpoint(path) -> tuple[dict, dict]:
    with open(path, "rb") as fh:
        data = fh.read()
    n = len(CHECKPOINT_MAGIC)
    if data[:n] != CHECKPOINT_MAGIC:
        raise ContractError(f"{path} is not a checkpoint")
    if data[n] != CHECKPOINT_VERSION:
        raise ContractError(f"unsupported checkpoint version {data[n]}")
    (hlen,) = struct.unpack("<Q", data[n + 1:n + 9])
    off = n + 9
    header = json.loads(data[off:off + hlen].decode())
    off += hlen
    tensors = {}
    for entry in header["tensors"]:
        count = int(np.prod(entry["shape"], dtype=int))
        tensors[entry["name"]] = np.frombuffer(data, "<f8", count, off).reshape(entry["shape"]).copy()
        off += 8 * count
    if off != len(data):
        raise ContractError("trailing bytes in checkpoint")
    return tensors, header["meta"]
