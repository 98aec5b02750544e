"""Episode rollouts, the per-seed training loop, and evaluation."""

from __future__ import annotations

import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import env, metrics, nets
from .checkpoint import Checkpoint, CheckpointError, load_checkpoint, save_checkpoint
from .config import TrainConfig
from .export import write_manifest
from .env import N_ACTIONS, WorldConfig, WorldState
from .ppo import Agent, NonFiniteLossError, PPOConfig, Trajectory, compute_targets, update_agent

log = logging.getLogger(__name__)

# spawn keys for the independent RNG streams derived from one seed
_STREAM_INIT = 0
_STREAM_ENV = 1
_STREAM_SAMPLE = 2
_STREAM_EVAL_ENV = 3
_STREAM_EVAL_SAMPLE = 4


def make_rng(seed: int, *purpose: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=purpose))


@dataclass
class RunStreams:
    env: np.random.Generator
    sample: list[np.random.Generator]

    @classmethod
    def for_training(cls, seed: int, n_agents: int) -> "RunStreams":
        return cls(
            make_rng(seed, _STREAM_ENV),
            [make_rng(seed, _STREAM_SAMPLE, i) for i in range(n_agents)],
        )

    @classmethod
    def for_eval(cls, seed: int, n_agents: int) -> "RunStreams":
        return cls(
            make_rng(seed, _STREAM_EVAL_ENV),
            [make_rng(seed, _STREAM_EVAL_SAMPLE, i) for i in range(n_agents)],
        )

    def state(self) -> dict:
        return {
            "env": self.env.bit_generator.state,
            "sample": [g.bit_generator.state for g in self.sample],
        }


def init_agents(world: WorldConfig, ppo: PPOConfig, seed: int) -> list[Agent]:
    rng = make_rng(seed, _STREAM_INIT)
    return [
        Agent.create(world.obs_dim, world.global_dim, N_ACTIONS, rng, ppo)
        for _ in range(world.n_agents)
    ]


@dataclass
class EpisodeResult:
    trajectories: list[Trajectory]
    steps: list[env.StepRecord]
    step_rewards: list[float]
    final_state: WorldState
    stats: dict = field(default_factory=dict)


def run_episode(
    world: WorldConfig,
    agents: list[Agent],
    streams: RunStreams,
    mode: str = "sample",
    delta: float = 0.10,
    with_values: bool = True,
    policy=None,
) -> EpisodeResult:
    """Roll one episode to truncation.

    ``policy`` optionally replaces the actors: a callable
    ``(state, agent_index) -> action`` used for scripted baselines.
    """
    if mode not in ("sample", "greedy"):
        raise ValueError(f"unknown rollout mode {mode!r}")
    state = env.reset(world, streams.env)
    n = world.n_agents
    trajs = [Trajectory() for _ in range(n)]
    steps: list[env.StepRecord] = []
    rewards: list[float] = []
    distances, collisions = [], 0
    action_counts = np.zeros(N_ACTIONS, dtype=np.int64)
    done = False
    while not done:
        obs = env.observe_all(state)
        gs = env.global_state(state)
        actions = np.empty(n, dtype=np.int64)
        for i, agent in enumerate(agents):
            if policy is not None:
                a, logp, ent = int(policy(state, i)), 0.0, 0.0
            else:
                probs = nets.actor_forward(agent.actor, obs[i])
                ent = nets.policy_entropy(probs)
                if mode == "sample":
                    a, logp = nets.sample_action(probs, streams.sample[i])
                else:
                    a = nets.greedy_action(probs)
                    logp = float(np.log(probs[a]))
            value = nets.critic_forward(agent.critic, gs) if with_values and policy is None else 0.0
            trajs[i].append(obs[i], gs, a, logp, value, ent)
            actions[i] = a
        state, reward, done = env.step(state, actions, world)
        rewards.append(reward)
        for t in trajs:
            t.rewards.append(reward)
        action_counts += np.bincount(actions, minlength=N_ACTIONS)
        collisions += env.count_collisions(state, world)
        if n >= 2:
            distances.append(metrics.avg_inter_agent_distance(state))
        steps.append(
            env.StepRecord(
                step=state.step,
                agent_pos=state.agent_pos.tolist(),
                agent_vel=state.agent_vel.tolist(),
                actions=actions.tolist(),
                reward=reward,
                landmark_pos=state.landmark_pos.tolist() if state.step == 1 else None,
            )
        )

    team_reward = sum(rewards)
    per_agent_entropy = [float(np.mean(t.entropies)) for t in trajs]
    stats = {
        "team_reward": team_reward,
        "step_rewards": rewards,
        "per_agent_reward": [sum(t.rewards) for t in trajs],
        "mean_episode_reward": metrics.mean_episode_reward([sum(t.rewards) for t in trajs]),
        "per_agent_entropy": per_agent_entropy,
        "mean_entropy": float(np.mean(per_agent_entropy)),
        "inter_agent_distance": float(np.mean(distances)) if distances else 0.0,
        "final_inter_agent_distance": distances[-1] if distances else 0.0,
        "coordination_score": metrics.coordination_score(state, delta),
        "success": metrics.success(state, delta),
        "collisions": collisions,
        "action_counts": action_counts.tolist(),
    }
    return EpisodeResult(trajs, steps, rewards, state, stats)


def _config_echo(config: TrainConfig) -> dict:
    return config.to_dict(include_output_dir=False)


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def train_seed(config: TrainConfig, seed: int, out_dir=None) -> Path:
    """Train one seed to completion; returns the seed directory."""
    seed_dir = Path(out_dir or config.output_dir) / f"seed{seed}"
    seed_dir.mkdir(parents=True, exist_ok=True)
    world, ppo = config.world, config.ppo
    agents = init_agents(world, ppo, seed)
    streams = RunStreams.for_training(seed, world.n_agents)
    echo = _config_echo(config)

    def checkpoint(episode: int) -> Checkpoint:
        return Checkpoint(agents, world, ppo, episode, streams.state(), echo)

    window_rewards = []
    with open(seed_dir / "log.jsonl", "w") as log_file:
        for episode in range(1, config.episodes + 1):
            result = run_episode(world, agents, streams, "sample", config.success_radius)
            updates = []
            for i, (agent, traj) in enumerate(zip(agents, result.trajectories)):
                targets = compute_targets(traj, ppo)
                try:
                    updates.append(update_agent(agent, traj, targets, ppo).to_dict())
                except NonFiniteLossError as exc:
                    dump = {"seed": seed, "episode": episode, "agent": i, **exc.dump}
                    (seed_dir / "nonfinite_dump.json").write_text(_dumps(dump) + "\n")
                    raise
            record = {"episode": episode, "seed": seed, **result.stats, "update": updates}
            log_file.write(_dumps(record) + "\n")

            window_rewards.append(result.stats["team_reward"])
            if episode % config.log_every == 0:
                log.info(
                    "seed %d | episode %d | avg reward %.2f | entropy %.3f | success %s",
                    seed,
                    episode,
                    float(np.mean(window_rewards)),
                    result.stats["mean_entropy"],
                    result.stats["success"],
                )
                window_rewards = []
            if episode % config.checkpoint_every == 0 and episode != config.episodes:
                save_checkpoint(checkpoint(episode), seed_dir / f"checkpoint_ep{episode}.json")

    final_path = save_checkpoint(checkpoint(config.episodes), seed_dir / "final.json")
    report = evaluate(
        final_path,
        world,
        config.eval_episodes,
        mode="greedy",
        seed=seed,
        delta=config.success_radius,
        trajectories_path=seed_dir / "trajectories.jsonl",
    )
    (seed_dir / "eval.json").write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    return seed_dir


def _train_seed_job(args):
    config, seed, out_dir = args
    return train_seed(config, seed, out_dir)


def train(config: TrainConfig, seeds=None, out_dir=None, workers: int = 1) -> list[Path]:
    """Train every seed; seeds are independent, so ``workers > 1`` runs them in parallel."""
    seeds = list(config.seeds if seeds is None else seeds)
    out = Path(out_dir or config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    jobs = [(config, s, out) for s in seeds]
    if workers > 1 and len(seeds) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            dirs = list(pool.map(_train_seed_job, jobs))
    else:
        dirs = [_train_seed_job(j) for j in jobs]
    write_manifest(out, config, seeds)
    return dirs


@dataclass
class EvalReport:
    n_episodes: int
    mode: str
    seed: int
    delta: float
    success_rate: float
    mean_coordination_score: float
    mean_inter_agent_distance: float
    mean_entropy: float
    mean_reward: float
    action_counts: list
    episodes: dict

    def to_dict(self) -> dict:
        return {
            "n_episodes": self.n_episodes,
            "mode": self.mode,
            "seed": self.seed,
            "delta": self.delta,
            "success_rate": self.success_rate,
            "mean_coordination_score": self.mean_coordination_score,
            "mean_inter_agent_distance": self.mean_inter_agent_distance,
            "mean_entropy": self.mean_entropy,
            "mean_reward": self.mean_reward,
            "action_counts": self.action_counts,
            "episodes": self.episodes,
        }


def evaluate(
    checkpoint,
    world: WorldConfig | None = None,
    n_episodes: int = 100,
    mode: str = "greedy",
    seed: int = 0,
    delta: float = 0.10,
    trajectories_path=None,
    policy=None,
) -> EvalReport:
    """Roll ``n_episodes`` without learning and summarise the metrics battery.

    ``checkpoint`` is a path, a :class:`Checkpoint`, or a list of agents.
    """
    if isinstance(checkpoint, (str, Path)):
        ckpt = load_checkpoint(checkpoint, world)
        agents, world = ckpt.agents, ckpt.world
    elif isinstance(checkpoint, Checkpoint):
        agents, world = checkpoint.agents, world or checkpoint.world
    else:
        agents = list(checkpoint)
    if world is None:
        raise ValueError("a world config is required when passing raw agents")
    if len(agents) != world.n_agents:
        raise CheckpointError(
            f"dimension mismatch: {len(agents)} agents for a {world.n_agents}-agent world"
        )
    streams = RunStreams.for_eval(seed, world.n_agents)
    per_ep = {k: [] for k in ("reward", "success", "coordination_score", "inter_agent_distance",
                              "final_inter_agent_distance", "entropy")}
    actions = np.zeros(N_ACTIONS, dtype=np.int64)
    dump = open(trajectories_path, "w") if trajectories_path else None
    try:
        for ep in range(n_episodes):
            res = run_episode(world, agents, streams, mode, delta, with_values=False, policy=policy)
            s = res.stats
            per_ep["reward"].append(s["team_reward"])
            per_ep["success"].append(bool(s["success"]))
            per_ep["coordination_score"].append(s["coordination_score"])
            per_ep["inter_agent_distance"].append(s["inter_agent_distance"])
            per_ep["final_inter_agent_distance"].append(s["final_inter_agent_distance"])
            per_ep["entropy"].append(s["mean_entropy"])
            actions += np.asarray(s["action_counts"])
            if dump:
                for rec in res.steps:
                    rec.episode = ep
                    dump.write(_dumps(rec.to_dict()) + "\n")
    finally:
        if dump:
            dump.close()
    return EvalReport(
        n_episodes=n_episodes,
        mode=mode,
        seed=seed,
        delta=delta,
        success_rate=metrics.success_rate(per_ep["success"]),
        mean_coordination_score=float(np.mean(per_ep["coordination_score"])),
        mean_inter_agent_distance=float(np.mean(per_ep["inter_agent_distance"])),
        mean_entropy=float(np.mean(per_ep["entropy"])),
        mean_reward=float(np.mean(per_ep["reward"])),
        action_counts=actions.tolist(),
        episodes=per_ep,
    )
