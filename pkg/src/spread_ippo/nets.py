"""Small ReLU MLPs with hand-written reverse mode, plus Adam.

Everything is float64. Layers store weights as ``(out, in)`` matrices so a
forward pass on a batch ``x`` of shape ``(B, in)`` is ``x @ W.T + b``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


@dataclass
class DenseLayer:
    weights: np.ndarray  # (out, in)
    biases: np.ndarray  # (out,)

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]


@dataclass
class MLP:
    """Dense layers with ReLU between them and a linear head."""

    layers: list[DenseLayer]

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    @property
    def dims(self) -> list[int]:
        return [self.in_dim] + [layer.out_dim for layer in self.layers]

    def params(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out.extend((layer.weights, layer.biases))
        return out

    def copy(self):
        return type(self)(
            [DenseLayer(l.weights.copy(), l.biases.copy()) for l in self.layers]
        )


class ActorNet(MLP):
    """Observation -> action logits; probabilities via :func:`actor_forward`."""


class CriticNet(MLP):
    """Global state -> scalar value."""


@dataclass
class Gradients:
    """Parameter gradients laid out exactly like the network they belong to."""

    layers: list[DenseLayer]

    def params(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out.extend((layer.weights, layer.biases))
        return out


def init_net(
    dims: Sequence[int],
    rng: np.random.Generator,
    output_scale: float = 0.01,
    cls: type[MLP] = MLP,
) -> MLP:
    """Glorot-uniform weights, zero biases, output layer shrunk by ``output_scale``."""
    if len(dims) < 2 or any(int(d) < 1 for d in dims):
        raise ValueError(f"invalid layer dims: {list(dims)}")
    layers = []
    n_layers = len(dims) - 1
    for k in range(n_layers):
        fan_in, fan_out = int(dims[k]), int(dims[k + 1])
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-limit, limit, size=(fan_out, fan_in))
        if k == n_layers - 1:
            w = w * output_scale
        layers.append(DenseLayer(w, np.zeros(fan_out)))
    return cls(layers)


def init_actor(obs_dim, n_actions, rng, hidden=128, hidden_layers=1, output_scale=0.01):
    dims = [obs_dim] + [hidden] * hidden_layers + [n_actions]
    return init_net(dims, rng, output_scale=output_scale, cls=ActorNet)


def init_critic(global_dim, rng, hidden=128, hidden_layers=1, output_scale=0.01):
    dims = [global_dim] + [hidden] * hidden_layers + [1]
    return init_net(dims, rng, output_scale=output_scale, cls=CriticNet)


def _as_batch(net: MLP, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != net.in_dim:
        raise ValueError(f"input shape {x.shape} does not match network input dim {net.in_dim}")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite network input")
    return x, single


def forward(net: MLP, x) -> tuple[np.ndarray, list[np.ndarray]]:
    """Batched forward pass. Returns the raw output and the list of layer inputs."""
    h, _ = _as_batch(net, x)
    inputs = []
    last = len(net.layers) - 1
    for k, layer in enumerate(net.layers):
        inputs.append(h)
        h = h @ layer.weights.T + layer.biases
        if k < last:
            h = np.maximum(h, 0.0)
    return h, inputs


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def actor_logits(net: ActorNet, obs) -> np.ndarray:
    _, single = _as_batch(net, obs)
    out, _ = forward(net, obs)
    return out[0] if single else out


def actor_forward(net: ActorNet, obs) -> np.ndarray:
    """Action probabilities; shape (5,) for one observation, (B, 5) for a batch."""
    return _softmax(actor_logits(net, obs))


def critic_forward(net: CriticNet, gs):
    """Scalar value for one global state, or a (B,) array for a batch."""
    _, single = _as_batch(net, gs)
    out, _ = forward(net, gs)
    return float(out[0, 0]) if single else out[:, 0]


def policy_entropy(p) -> np.ndarray | float:
    """Entropy in nats along the last axis, with 0 log 0 taken as 0."""
    p = np.asarray(p, dtype=np.float64)
    safe = np.where(p > 0, p, 1.0)
    h = -np.sum(np.where(p > 0, p * np.log(safe), 0.0), axis=-1)
    return float(h) if h.ndim == 0 else h


def sample_action(p, rng: np.random.Generator) -> tuple[int, float]:
    """Inverse-CDF draw in fixed action order; returns (action, log-prob)."""
    p = np.asarray(p, dtype=np.float64)
    u = rng.random()
    idx = int(np.searchsorted(np.cumsum(p), u, side="right"))
    if idx >= p.size:
        # u landed past a cumsum that rounded below 1
        idx = int(np.flatnonzero(p > 0)[-1])
    return idx, float(np.log(p[idx]))


def greedy_action(p) -> int:
    """Argmax with ties going to the lowest action index."""
    return int(np.argmax(np.asarray(p)))


def backward(net: MLP, x, upstream) -> Gradients:
    """Exact parameter gradients given d(loss)/d(output).

    ``upstream`` has the network's output shape: (out,) for a single input
    or (B, out) for a batch. Batch contributions are summed.
    """
    out, inputs = forward(net, x)
    g = np.asarray(upstream, dtype=np.float64)
    if g.ndim == 1:
        g = g[None, :]
    if g.shape != out.shape:
        raise ValueError(f"upstream shape {g.shape} does not match output shape {out.shape}")
    grads: list[DenseLayer] = [None] * len(net.layers)  # type: ignore[list-item]
    for k in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[k]
        h_in = inputs[k]
        grads[k] = DenseLayer(g.T @ h_in, g.sum(axis=0))
        if k > 0:
            g = g @ layer.weights
            # relu' is 0 at 0; h_in is the post-relu activation
            g = g * (h_in > 0)
    return Gradients(grads)


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_init(params: Sequence[np.ndarray], beta1=0.9, beta2=0.999, eps=1e-8) -> AdamState:
    return AdamState(
        m=[np.zeros_like(p) for p in params],
        v=[np.zeros_like(p) for p in params],
        beta1=beta1,
        beta2=beta2,
        eps=eps,
    )


def adam_step(
    params: Sequence[np.ndarray],
    grads: Sequence[np.ndarray],
    state: AdamState,
    lr: float,
) -> None:
    """Bias-corrected Adam update, applied in place to ``params`` and ``state``."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("params, grads and optimizer state disagree in length")
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {p.shape}")
        if not np.all(np.isfinite(g)):
            raise ValueError("non-finite gradient passed to adam_step")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1**state.t
    bc2 = 1.0 - b2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
