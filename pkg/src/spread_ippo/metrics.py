"""Evaluation battery: rewards, coverage, success, spacing, heatmaps, seed aggregation."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .env import N_ACTIONS, WorldState

EXHAUSTIVE_MAX_AGENTS = 8


@dataclass
class SeriesStat:
    values: np.ndarray
    label: str = ""


@dataclass
class HeatmapGrid:
    counts: np.ndarray  # (res, res); counts[ix, iy]
    bound: float = 1.0

    @property
    def resolution(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())


@dataclass
class SeedAggregate:
    mean: np.ndarray
    std: np.ndarray
    n_seeds: int
    std_kind: str = field(default="population")


def mean_episode_reward(per_agent_episode_rewards) -> float:
    r = np.asarray(per_agent_episode_rewards, dtype=np.float64)
    if r.size < 1:
        raise ValueError("need at least one agent")
    return float(r.mean())


def cumulative_reward(step_rewards) -> np.ndarray:
    return np.cumsum(np.asarray(step_rewards, dtype=np.float64))


def sliding_average(series, w: int) -> np.ndarray:
    """Trailing mean over the last ``w`` points; early points average what exists."""
    if w < 1:
        raise ValueError(f"window must be >= 1, got {w}")
    x = np.asarray(series, dtype=np.float64)
    if x.size == 0:
        return x.copy()
    c = np.concatenate([[0.0], np.cumsum(x)])
    t = np.arange(x.size)
    lo = np.maximum(0, t - w + 1)
    return (c[t + 1] - c[lo]) / (t + 1 - lo)


def _within(final: WorldState, delta: float) -> np.ndarray:
    """Boolean (N, M) matrix: agent i is within ``delta`` of landmark j."""
    diff = final.agent_pos[:, None, :] - final.landmark_pos[None, :, :]
    return np.linalg.norm(diff, axis=2) <= delta


def coordination_score(final: WorldState, delta: float) -> float:
    """Fraction of landmarks with at least one agent within ``delta``."""
    if delta <= 0:
        raise ValueError("delta must be positive")
    covered = _within(final, delta).any(axis=0)
    return float(covered.sum()) / covered.size


def _perfect_matching_exhaustive(adj: np.ndarray) -> bool:
    n, m = adj.shape
    for agents in itertools.permutations(range(n), m):
        if all(adj[a, j] for j, a in enumerate(agents)):
            return True
    return False


def _perfect_matching_augmenting(adj: np.ndarray) -> bool:
    """Kuhn's augmenting-path algorithm; True iff every landmark gets its own agent."""
    n, m = adj.shape
    owner = [-1] * n  # owner[i] = landmark matched to agent i

    def augment(j, seen):
        for i in range(n):
            if adj[i, j] and not seen[i]:
                seen[i] = True
                if owner[i] == -1 or augment(owner[i], seen):
                    owner[i] = j
                    return True
        return False

    return all(augment(j, [False] * n) for j in range(m))


def success(final: WorldState, delta: float) -> bool:
    """True iff each landmark can be paired with a distinct agent within ``delta``."""
    n, m = final.n_agents, final.n_landmarks
    if n < m:
        return False
    adj = _within(final, delta)
    if n <= EXHAUSTIVE_MAX_AGENTS:
        return _perfect_matching_exhaustive(adj)
    return _perfect_matching_augmenting(adj)


def success_rate(flags: Sequence[bool]) -> float:
    flags = list(flags)
    if not flags:
        raise ValueError("success_rate needs at least one episode")
    return 100.0 * sum(bool(f) for f in flags) / len(flags)


def avg_inter_agent_distance(state: WorldState) -> float:
    n = state.n_agents
    if n < 2:
        raise ValueError("inter-agent distance needs at least two agents")
    iu, ku = np.triu_indices(n, k=1)
    return float(np.linalg.norm(state.agent_pos[iu] - state.agent_pos[ku], axis=1).mean())


def _cell_index(coord: np.ndarray, resolution: int, bound: float) -> np.ndarray:
    idx = np.floor((coord + bound) / (2.0 * bound) * resolution).astype(np.int64)
    return np.clip(idx, 0, resolution - 1)


def visitation_heatmap(positions: Iterable, resolution: int = 50, bound: float = 1.0) -> HeatmapGrid:
    """Bin every (x, y) position into a ``resolution``² grid over [-bound, bound]².

    ``positions`` is any iterable of position arrays shaped (..., 2), e.g. the
    per-step ``agent_pos`` lists of a trajectory dump.
    """
    if resolution < 1:
        raise ValueError("resolution must be >= 1")
    counts = np.zeros((resolution, resolution), dtype=np.int64)
    for chunk in positions:
        p = np.asarray(chunk, dtype=np.float64).reshape(-1, 2)
        ix = _cell_index(p[:, 0], resolution, bound)
        iy = _cell_index(p[:, 1], resolution, bound)
        np.add.at(counts, (ix, iy), 1)
    return HeatmapGrid(counts, bound)


def action_histogram(actions: Iterable) -> np.ndarray:
    """Counts of each discrete action over any nesting of action sequences."""
    counts = np.zeros(N_ACTIONS, dtype=np.int64)
    for chunk in actions:
        a = np.asarray(chunk, dtype=np.int64).ravel()
        counts += np.bincount(a, minlength=N_ACTIONS)[:N_ACTIONS]
    return counts


def aggregate_seeds(per_seed: Sequence[Sequence[float]], window: int | None = None) -> SeedAggregate:
    """Pointwise mean and population std across seeds, optionally after smoothing."""
    if not per_seed:
        raise ValueError("need at least one seed")
    lengths = {len(s) for s in per_seed}
    if len(lengths) != 1:
        raise ValueError(f"per-seed series differ in length: {sorted(lengths)}")
    rows = [np.asarray(s, dtype=np.float64) for s in per_seed]
    if window is not None:
        rows = [sliding_average(r, window) for r in rows]
    mat = np.stack(rows)
    return SeedAggregate(mat.mean(axis=0), mat.std(axis=0), len(rows))
