"""Minimal feed-forward network toolkit on numpy.

Fully-connected nets with analytic reverse-mode gradients, a bias-corrected
adaptive-moment optimizer, deep-copy snapshots for target networks, and a
bit-exact checkpoint format.  Training uses float32 parameters; float64 is
available where gradient checks demand it.
"""

from __future__ import annotations

import copy
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

CHECKPOINT_VERSION = 1

_ACTIVATIONS = ("elu", "relu", "tanh")


def _activate(name: str, z: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    # elu via exp: much faster than expm1 and exact to float rounding
    neg = np.minimum(z, 0.0)
    out = np.exp(neg)
    out -= 1.0
    np.maximum(z, 0.0, out=neg)
    out += neg
    return out


def _activate_grad(name: str, h: np.ndarray) -> np.ndarray:
    """Derivative of the activation expressed through its own output h."""
    if name == "relu":
        return (h > 0.0).astype(h.dtype)
    if name == "tanh":
        return 1.0 - h * h
    return np.where(h > 0.0, h.dtype.type(1.0), h + h.dtype.type(1.0))


class Mlp:
    """Fully-connected network: linear layers with a hidden nonlinearity and
    a linear output layer.  Parameters live in `weights`/`biases` lists."""

    def __init__(self, sizes, activation: str = "elu",
                 rng: np.random.Generator | None = None,
                 dtype=np.float32):
        if activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        if len(sizes) < 2:
            raise ValueError("need at least input and output sizes")
        self.sizes = [int(s) for s in sizes]
        self.activation = activation
        self.dtype = np.dtype(dtype)
        rng = rng if rng is not None else np.random.default_rng(0)
        self.weights = []
        self.biases = []
        for fan_in, fan_out in zip(self.sizes[:-1], self.sizes[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            self.weights.append(rng.uniform(-bound, bound,
                                            (fan_in, fan_out)).astype(self.dtype))
            self.biases.append(rng.uniform(-bound, bound,
                                           fan_out).astype(self.dtype))

    @property
    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    _CHUNK = 8192  # rows per block in the no-cache path; big batches run
    # markedly faster through the cache-sized blocks

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=self.dtype)
        if x.ndim == 2 and x.shape[0] > self._CHUNK:
            out = np.empty((x.shape[0], self.sizes[-1]), dtype=self.dtype)
            for s in range(0, x.shape[0], self._CHUNK):
                out[s:s + self._CHUNK], _ = self.forward_cached(
                    x[s:s + self._CHUNK], keep=False)
            return out
        y, _ = self.forward_cached(x, keep=False)
        return y

    def forward_cached(self, x: np.ndarray, keep: bool = True):
        """Run the net; optionally keep per-layer activations for backward."""
        x = np.asarray(x, dtype=self.dtype)
        squeeze = x.ndim == 1
        h = x.reshape(1, -1) if squeeze else x
        if h.shape[1] != self.sizes[0]:
            raise ValueError(f"input width {h.shape[1]} != {self.sizes[0]}")
        cache = [h] if keep else None
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w
            h += b
            if i != last:
                h = _activate(self.activation, h)
            if keep and i != last:
                cache.append(h)
        return (h[0] if squeeze else h), cache

    def backward(self, cache: list[np.ndarray],
                 grad_out: np.ndarray) -> list[np.ndarray]:
        """Gradients of a scalar loss w.r.t. every parameter, given the loss
        gradient at the network output.  Layout matches `params`."""
        g = np.asarray(grad_out, dtype=self.dtype)
        if g.ndim == 1:
            g = g.reshape(1, -1)
        if g.shape != (cache[0].shape[0], self.sizes[-1]):
            raise ValueError(f"output-gradient shape {g.shape} mismatch")
        grads: list[np.ndarray] = [None] * (2 * len(self.weights))
        for i in range(len(self.weights) - 1, -1, -1):
            h_in = cache[i]
            grads[2 * i] = h_in.T @ g
            grads[2 * i + 1] = g.sum(axis=0)
            if i > 0:
                g = g @ self.weights[i].T
                g *= _activate_grad(self.activation, cache[i])
        return grads

    def snapshot(self) -> "Mlp":
        return copy.deepcopy(self)


@dataclass
class AdamState:
    """Adaptive-moment optimizer state for one parameter list."""

    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    @classmethod
    def for_params(cls, params, lr: float, **kw) -> "AdamState":
        state = cls(lr=lr, **kw)
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
        return state


def adam_step(params: list[np.ndarray], grads: list[np.ndarray],
              state: AdamState, lr: float | None = None) -> None:
    """One bias-corrected Adam update, in place."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("parameter/gradient/state length mismatch")
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(
                f"non-finite gradient (|g|max={np.abs(g).max()}) at step "
                f"{state.step_count}")
    state.step_count += 1
    lr = state.lr if lr is None else lr
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** state.step_count
    bc2 = 1.0 - b2 ** state.step_count
    for p, g, m, v in zip(params, grads, state.m, state.v):
        g = g.astype(p.dtype, copy=False)
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * np.square(g)
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


def save_checkpoint(path: Path, nets: dict[str, Mlp],
                    meta: dict | None = None) -> None:
    """Serialize named nets to one .npz container; round-trips bit-exactly."""
    payload = {"version": np.int64(CHECKPOINT_VERSION)}
    names = sorted(nets)
    payload["net_names"] = np.array(names)
    for name, net in nets.items():
        payload[f"{name}:sizes"] = np.array(net.sizes, dtype=np.int64)
        payload[f"{name}:activation"] = np.array(net.activation)
        for i, (w, b) in enumerate(zip(net.weights, net.biases)):
            payload[f"{name}:W{i}"] = w
            payload[f"{name}:b{i}"] = b
    if meta:
        for key, value in meta.items():
            payload[f"meta:{key}"] = np.array(value)
    buf = io.BytesIO()
    np.savez(buf, **payload)
    Path(path).write_bytes(buf.getvalue())


def load_checkpoint(path: Path) -> tuple[dict[str, Mlp], dict]:
    with np.load(Path(path), allow_pickle=False) as data:
        version = int(data["version"])
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        nets = {}
        for name in data["net_names"]:
            name = str(name)
            sizes = data[f"{name}:sizes"].tolist()
            net = Mlp.__new__(Mlp)
            net.sizes = [int(s) for s in sizes]
            net.activation = str(data[f"{name}:activation"])
            net.weights = []
            net.biases = []
            for i in range(len(sizes) - 1):
                net.weights.append(data[f"{name}:W{i}"].copy())
                net.biases.append(data[f"{name}:b{i}"].copy())
            net.dtype = net.weights[0].dtype
            nets[name] = net
        meta = {}
        for key in data.files:
            if key.startswith("meta:"):
                value = data[key]
                meta[key[5:]] = value.item() if value.ndim == 0 else value
    return nets, meta
