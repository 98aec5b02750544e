"""Cooperative-coverage particle world.

N point agents with damped double-integrator dynamics move in a square
world of half-width ``bound`` and try to cover M static landmarks. All
state transitions are pure: ``step`` returns a fresh :class:`WorldState`
and never mutates its input.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from ._checks import check_fields

N_ACTIONS = 5


class Action(IntEnum):
    STAY = 0
    LEFT = 1
    RIGHT = 2
    DOWN = 3
    UP = 4


# unit direction per action, indexed by Action value
_DIRECTIONS = np.array(
    [[0.0, 0.0], [-1.0, 0.0], [1.0, 0.0], [0.0, -1.0], [0.0, 1.0]]
)


class EpisodeFinishedError(RuntimeError):
    """Raised when ``step`` is called on a state that already hit max_steps."""


@dataclass(frozen=True)
class WorldConfig:
    n_agents: int = 3
    n_landmarks: int = 3
    max_steps: int = 25
    dt: float = 0.1
    damping: float = 0.25
    accel_gain: float = 5.0
    mass: float = 1.0
    agent_radius: float = 0.15
    bound: float = 1.0
    collision_penalty: bool = False
    spawn_range: float = 1.0
    reward_metric: str = "squared"

    def __post_init__(self):
        checks = [
            ("n_agents", self.n_agents >= 1),
            ("n_landmarks", self.n_landmarks >= 1),
            ("max_steps", self.max_steps >= 1),
            ("damping", 0.0 <= self.damping < 1.0),
            ("dt", self.dt > 0),
            ("mass", self.mass > 0),
            ("agent_radius", self.agent_radius >= 0),
            ("bound", self.bound > 0),
            ("spawn_range", 0.0 <= self.spawn_range <= self.bound),
            ("reward_metric", self.reward_metric in ("squared", "euclidean")),
        ]
        check_fields(self, checks)

    @property
    def obs_dim(self) -> int:
        return 4 + 2 * self.n_landmarks + 4 * (self.n_agents - 1)

    @property
    def global_dim(self) -> int:
        return self.n_agents * self.obs_dim + 2 * self.n_landmarks

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass(frozen=True)
class WorldState:
    agent_pos: np.ndarray  # (N, 2)
    agent_vel: np.ndarray  # (N, 2)
    landmark_pos: np.ndarray  # (M, 2)
    step: int = 0

    @property
    def n_agents(self) -> int:
        return self.agent_pos.shape[0]

    @property
    def n_landmarks(self) -> int:
        return self.landmark_pos.shape[0]


def reset(config: WorldConfig, rng: np.random.Generator) -> WorldState:
    """Sample a fresh episode: agents and landmarks uniform in the spawn square."""
    r = config.spawn_range
    agent_pos = rng.uniform(-r, r, size=(config.n_agents, 2))
    landmark_pos = rng.uniform(-r, r, size=(config.n_landmarks, 2))
    return WorldState(
        agent_pos=agent_pos,
        agent_vel=np.zeros((config.n_agents, 2)),
        landmark_pos=landmark_pos,
        step=0,
    )


def action_to_force(action: int, accel_gain: float = 5.0) -> np.ndarray:
    return _DIRECTIONS[int(action)] * accel_gain


def step(
    state: WorldState, actions, config: WorldConfig
) -> tuple[WorldState, float, bool]:
    """Advance the world one tick under the joint action.

    Returns ``(next_state, team_reward, done)`` where the reward is evaluated
    on the next state and ``done`` marks truncation at ``max_steps``.
    """
    if state.step >= config.max_steps:
        raise EpisodeFinishedError(
            f"episode already finished at step {state.step} (max_steps={config.max_steps})"
        )
    acts = np.asarray(actions, dtype=np.int64)
    if acts.shape != (state.n_agents,):
        raise ValueError(f"expected {state.n_agents} actions, got shape {acts.shape}")
    if np.any((acts < 0) | (acts >= N_ACTIONS)):
        raise ValueError(f"actions out of range: {acts.tolist()}")

    force = _DIRECTIONS[acts] * config.accel_gain
    vel = state.agent_vel * (1.0 - config.damping) + force / config.mass * config.dt
    raw = state.agent_pos + vel * config.dt
    pos = np.clip(raw, -config.bound, config.bound)
    # zero the normal velocity component on any wall contact
    vel = np.where(np.abs(raw) >= config.bound, 0.0, vel)

    nxt = WorldState(
        agent_pos=pos,
        agent_vel=vel,
        landmark_pos=state.landmark_pos,
        step=state.step + 1,
    )
    return nxt, team_reward(nxt, config), nxt.step == config.max_steps


def _pairwise_agent_distances(agent_pos: np.ndarray) -> np.ndarray:
    """Distances of all unordered pairs (i < k) in row-major pair order."""
    n = agent_pos.shape[0]
    iu, ku = np.triu_indices(n, k=1)
    return np.linalg.norm(agent_pos[iu] - agent_pos[ku], axis=1)


def team_reward(state: WorldState, config: WorldConfig | None = None) -> float:
    """Shared coverage reward: minus the summed nearest-agent distance cost per landmark."""
    config = config or WorldConfig(
        n_agents=state.n_agents, n_landmarks=state.n_landmarks
    )
    diff = state.agent_pos[:, None, :] - state.landmark_pos[None, :, :]  # (N, M, 2)
    sq = np.sum(diff * diff, axis=2)
    nearest = sq.min(axis=0)
    if config.reward_metric == "euclidean":
        nearest = np.sqrt(nearest)
    reward = -float(np.sum(nearest))
    if config.collision_penalty:
        reward -= float(count_collisions(state, config))
    return reward


def observe(state: WorldState, i: int) -> np.ndarray:
    """Local observation of agent ``i``.

    Layout: own position, own velocity, landmark offsets, then for every
    other agent (ascending index) its offset followed by its velocity.
    """
    n = state.n_agents
    if not 0 <= i < n:
        raise IndexError(f"agent index {i} out of range for {n} agents")
    p_i = state.agent_pos[i]
    others = [j for j in range(n) if j != i]
    rel_landmarks = (state.landmark_pos - p_i).ravel()
    other_blocks = np.concatenate(
        [state.agent_pos[others] - p_i, state.agent_vel[others]], axis=1
    ).ravel()
    return np.concatenate([p_i, state.agent_vel[i], rel_landmarks, other_blocks])


def observe_all(state: WorldState) -> np.ndarray:
    """Stacked observations, shape (N, obs_dim)."""
    return np.stack([observe(state, i) for i in range(state.n_agents)])


def global_state(state: WorldState) -> np.ndarray:
    """Critic input: every agent's observation followed by absolute landmark positions."""
    return np.concatenate([observe_all(state).ravel(), state.landmark_pos.ravel()])


def count_collisions(state: WorldState, config: WorldConfig) -> int:
    if state.n_agents < 2:
        return 0
    d = _pairwise_agent_distances(state.agent_pos)
    return int(np.sum(d < 2.0 * config.agent_radius))


@dataclass
class StepRecord:
    """One line of a trajectory dump."""

    step: int
    agent_pos: list
    agent_vel: list
    actions: list
    reward: float
    episode: int | None = None
    landmark_pos: list | None = field(default=None)

    def to_dict(self) -> dict:
        d = {
            "step": self.step,
            "agent_pos": self.agent_pos,
            "agent_vel": self.agent_vel,
            "actions": self.actions,
            "reward": self.reward,
        }
        if self.episode is not None:
            d = {"episode": self.episode, **d}
        if self.landmark_pos is not None:
            d["landmark_pos"] = self.landmark_pos
        return d
