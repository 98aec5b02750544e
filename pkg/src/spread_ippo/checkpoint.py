"""JSON checkpoints for the per-agent networks and optimizer states.

Floats are written with Python's shortest round-trip repr, so a
save/load cycle reproduces every parameter bit-for-bit.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import nets
from .env import N_ACTIONS, WorldConfig
from .ppo import Agent, PPOConfig

FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    agents: list[Agent]
    world: WorldConfig
    ppo: PPOConfig
    episode_count: int = 0
    rng_state: dict = field(default_factory=dict)
    config_echo: dict = field(default_factory=dict)


def _layer_to_json(layer: nets.DenseLayer) -> dict:
    return {"w": layer.weights.tolist(), "b": layer.biases.tolist()}


def _net_to_json(net: nets.MLP) -> dict:
    return {
        "hidden": [_layer_to_json(l) for l in net.layers[:-1]],
        "output": _layer_to_json(net.layers[-1]),
    }


def _adam_to_json(state: nets.AdamState) -> dict:
    return {
        "t": state.t,
        "beta1": state.beta1,
        "beta2": state.beta2,
        "eps": state.eps,
        "m": [a.tolist() for a in state.m],
        "v": [a.tolist() for a in state.v],
    }


def _layer_from_json(d: dict) -> nets.DenseLayer:
    w = np.asarray(d["w"], dtype=np.float64)
    b = np.asarray(d["b"], dtype=np.float64)
    if w.ndim != 2 or b.shape != (w.shape[0],):
        raise CheckpointError(f"malformed layer: weights {w.shape}, biases {b.shape}")
    return nets.DenseLayer(w, b)


def _net_from_json(d: dict, cls):
    layers = [_layer_from_json(l) for l in d["hidden"]] + [_layer_from_json(d["output"])]
    for a, b in zip(layers, layers[1:]):
        if a.out_dim != b.in_dim:
            raise CheckpointError("layer dimensions do not chain")
    return cls(layers)


def _adam_from_json(d: dict, params) -> nets.AdamState:
    m = [np.asarray(a, dtype=np.float64) for a in d["m"]]
    v = [np.asarray(a, dtype=np.float64) for a in d["v"]]
    if [a.shape for a in m] != [p.shape for p in params] or [a.shape for a in v] != [
        p.shape for p in params
    ]:
        raise CheckpointError("optimizer state shapes do not match network parameters")
    return nets.AdamState(m=m, v=v, t=int(d["t"]), beta1=d["beta1"], beta2=d["beta2"], eps=d["eps"])


def checkpoint_to_dict(ckpt: Checkpoint) -> dict:
    echo = ckpt.config_echo or {
        "world": ckpt.world.to_dict(),
        "ppo": dataclasses.asdict(ckpt.ppo),
    }
    return {
        "format_version": FORMAT_VERSION,
        "config_echo": echo,
        "episode_count": ckpt.episode_count,
        "rng_state": ckpt.rng_state,
        "agents": [
            {
                "actor": _net_to_json(a.actor),
                "critic": _net_to_json(a.critic),
                "actor_adam": _adam_to_json(a.actor_opt),
                "critic_adam": _adam_to_json(a.critic_opt),
            }
            for a in ckpt.agents
        ],
    }


def save_checkpoint(ckpt: Checkpoint, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(checkpoint_to_dict(ckpt), separators=(",", ":")) + "\n")
    return path


def load_checkpoint(path, world: WorldConfig | None = None) -> Checkpoint:
    """Read a checkpoint; when ``world`` is given, reject shape mismatches against it."""
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    if not isinstance(data, dict) or "format_version" not in data:
        raise CheckpointError(f"{path}: not a checkpoint file")
    if data["format_version"] != FORMAT_VERSION:
        raise CheckpointError(
            f"{path}: format_version {data['format_version']} is not supported (expected {FORMAT_VERSION})"
        )
    try:
        echo = data["config_echo"]
        saved_world = WorldConfig(**echo["world"])
        ppo = PPOConfig(**echo["ppo"])
        agents = []
        for entry in data["agents"]:
            actor = _net_from_json(entry["actor"], nets.ActorNet)
            critic = _net_from_json(entry["critic"], nets.CriticNet)
            agents.append(
                Agent(
                    actor,
                    critic,
                    _adam_from_json(entry["actor_adam"], actor.params()),
                    _adam_from_json(entry["critic_adam"], critic.params()),
                )
            )
    except (KeyError, TypeError) as exc:
        raise CheckpointError(f"{path}: corrupt checkpoint ({exc!r})") from None

    world = world or saved_world
    _check_dims(agents, world)
    return Checkpoint(
        agents=agents,
        world=world,
        ppo=ppo,
        episode_count=int(data.get("episode_count", 0)),
        rng_state=data.get("rng_state", {}),
        config_echo=echo,
    )


def _check_dims(agents: list[Agent], world: WorldConfig) -> None:
    if len(agents) != world.n_agents:
        raise CheckpointError(
            f"dimension mismatch: checkpoint has {len(agents)} agents, config expects {world.n_agents}"
        )
    for i, a in enumerate(agents):
        if a.actor.in_dim != world.obs_dim or a.actor.out_dim != N_ACTIONS:
            raise CheckpointError(
                f"dimension mismatch: agent {i} actor is {a.actor.in_dim}->{a.actor.out_dim}, "
                f"config expects {world.obs_dim}->{N_ACTIONS}"
            )
        if a.critic.in_dim != world.global_dim or a.critic.out_dim != 1:
            raise CheckpointError(
                f"dimension mismatch: agent {i} critic input is {a.critic.in_dim}, "
                f"config expects {world.global_dim}"
            )


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()
