"""On-policy PPO pieces: returns, advantages, losses and the per-agent update."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nets
from ._checks import check_fields


@dataclass(frozen=True)
class PPOConfig:
    gamma: float = 0.99
    clip_eps: float = 0.2
    entropy_coef: float = 0.01
    value_coef: float = 1.0
    lr: float = 1e-3
    epochs_per_batch: int = 4
    normalize_advantages: bool = False
    hidden_size: int = 128
    hidden_layers: int = 1
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        checks = [
            ("gamma", 0.0 <= self.gamma <= 1.0),
            ("clip_eps", self.clip_eps > 0),
            ("entropy_coef", self.entropy_coef >= 0),
            ("value_coef", self.value_coef >= 0),
            ("lr", self.lr > 0),
            ("epochs_per_batch", self.epochs_per_batch >= 1),
            ("hidden_size", self.hidden_size >= 1),
            ("hidden_layers", self.hidden_layers >= 1),
            ("adam_beta1", 0.0 <= self.adam_beta1 < 1.0),
            ("adam_beta2", 0.0 <= self.adam_beta2 < 1.0),
            ("adam_eps", self.adam_eps > 0),
        ]
        check_fields(self, checks)


class NonFiniteLossError(FloatingPointError):
    """A loss went NaN/inf; ``dump`` carries the offending batch for diagnosis."""

    def __init__(self, message: str, dump: dict):
        super().__init__(message)
        self.dump = dump


@dataclass
class Trajectory:
    """One agent's record of one episode."""

    obs: list = field(default_factory=list)
    global_states: list = field(default_factory=list)
    actions: list = field(default_factory=list)
    log_probs_old: list = field(default_factory=list)
    rewards: list = field(default_factory=list)
    values: list = field(default_factory=list)
    entropies: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.actions)

    def append(self, obs, gs, action, log_prob, value, entropy):
        self.obs.append(obs)
        self.global_states.append(gs)
        self.actions.append(int(action))
        self.log_probs_old.append(float(log_prob))
        self.values.append(float(value))
        self.entropies.append(float(entropy))


@dataclass
class ComputedTargets:
    returns: np.ndarray
    advantages: np.ndarray


@dataclass
class UpdateStats:
    actor_loss: float
    critic_loss: float
    mean_entropy: float
    mean_ratio: float
    clip_fraction: float
    per_epoch: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "actor_loss": self.actor_loss,
            "critic_loss": self.critic_loss,
            "mean_entropy": self.mean_entropy,
            "mean_ratio": self.mean_ratio,
            "clip_fraction": self.clip_fraction,
        }


def compute_returns(rewards, gamma: float) -> np.ndarray:
    """Discounted reward-to-go, no bootstrap past the last step."""
    rewards = np.asarray(rewards, dtype=np.float64)
    out = np.empty_like(rewards)
    running = 0.0
    for t in range(rewards.size - 1, -1, -1):
        running = rewards[t] + gamma * running
        out[t] = running
    return out


def compute_advantages(returns, values, config: PPOConfig) -> np.ndarray:
    returns = np.asarray(returns, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    if returns.shape != values.shape:
        raise ValueError(f"returns {returns.shape} and values {values.shape} differ in shape")
    adv = returns - values
    if config.normalize_advantages:
        adv = (adv - adv.mean()) / max(adv.std(), 1e-8)
    return adv


def compute_targets(traj: Trajectory, config: PPOConfig) -> ComputedTargets:
    returns = compute_returns(traj.rewards, config.gamma)
    return ComputedTargets(returns, compute_advantages(returns, traj.values, config))


def clipped_surrogate(ratio, advantages, clip_eps: float) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample ``min(r A, clip(r) A)`` and its derivative with respect to ``r``.

    The derivative is ``A`` when the unclipped branch attains the minimum
    (including ties) and 0 when the clipped branch is strictly smaller.
    """
    r = np.asarray(ratio, dtype=np.float64)
    a = np.asarray(advantages, dtype=np.float64)
    unclipped = r * a
    clipped = np.clip(r, 1.0 - clip_eps, 1.0 + clip_eps) * a
    surrogate = np.minimum(unclipped, clipped)
    d_ratio = np.where(clipped < unclipped, 0.0, a)
    return surrogate, d_ratio


@dataclass
class ActorLoss:
    loss: float
    dlogits: np.ndarray  # (T, n_actions)
    ratio: np.ndarray
    clipped: np.ndarray  # bool mask, clipped branch strictly active
    entropy: np.ndarray


def actor_loss(logits, actions, old_log_probs, advantages, config: PPOConfig) -> ActorLoss:
    """Clipped-surrogate loss with entropy bonus, plus its gradient w.r.t. the logits."""
    logits = np.asarray(logits, dtype=np.float64)
    actions = np.asarray(actions, dtype=np.int64)
    old = np.asarray(old_log_probs, dtype=np.float64)
    adv = np.asarray(advantages, dtype=np.float64)
    T = actions.size

    logp_all = nets.log_softmax(logits)
    probs = np.exp(logp_all)
    idx = np.arange(T)
    logp = logp_all[idx, actions]
    ratio = np.exp(logp - old)
    surrogate, d_ratio = clipped_surrogate(ratio, adv, config.clip_eps)
    entropy = -np.sum(probs * logp_all, axis=1)
    loss = -surrogate.mean() - config.entropy_coef * entropy.mean()

    # d ratio / d logits = ratio * (onehot - p);  dH/dlogits = -p (log p + H)
    onehot = np.zeros_like(probs)
    onehot[idx, actions] = 1.0
    d_surr = (d_ratio * ratio)[:, None] * (onehot - probs)
    d_ent = -probs * (logp_all + entropy[:, None])
    dlogits = -(d_surr + config.entropy_coef * d_ent) / T

    clipped = surrogate < ratio * adv
    return ActorLoss(float(loss), dlogits, ratio, clipped, entropy)


def critic_loss(values, returns) -> float:
    values = np.asarray(values, dtype=np.float64)
    returns = np.asarray(returns, dtype=np.float64)
    if values.shape != returns.shape:
        raise ValueError(f"values {values.shape} and returns {returns.shape} differ in shape")
    return float(np.mean((values - returns) ** 2))


@dataclass
class Agent:
    """One independent learner: its own actor, critic and two optimizers."""

    actor: nets.ActorNet
    critic: nets.CriticNet
    actor_opt: nets.AdamState
    critic_opt: nets.AdamState

    @classmethod
    def create(cls, obs_dim, global_dim, n_actions, rng, config: PPOConfig):
        actor = nets.init_actor(
            obs_dim, n_actions, rng, hidden=config.hidden_size, hidden_layers=config.hidden_layers
        )
        critic = nets.init_critic(
            global_dim, rng, hidden=config.hidden_size, hidden_layers=config.hidden_layers
        )
        opt_kw = dict(beta1=config.adam_beta1, beta2=config.adam_beta2, eps=config.adam_eps)
        return cls(
            actor,
            critic,
            nets.adam_init(actor.params(), **opt_kw),
            nets.adam_init(critic.params(), **opt_kw),
        )


def update_agent(
    agent: Agent, traj: Trajectory, targets: ComputedTargets, config: PPOConfig
) -> UpdateStats:
    """Run ``epochs_per_batch`` full-batch actor and critic steps on one episode.

    Reported losses/entropy come from the first epoch (the pre-update batch);
    ratio and clip fraction are averaged over all epochs.
    """
    obs = np.asarray(traj.obs, dtype=np.float64)
    gs = np.asarray(traj.global_states, dtype=np.float64)
    actions = np.asarray(traj.actions, dtype=np.int64)
    old = np.asarray(traj.log_probs_old, dtype=np.float64)
    per_epoch = []
    for epoch in range(config.epochs_per_batch):
        logits, _ = nets.forward(agent.actor, obs)
        a = actor_loss(logits, actions, old, targets.advantages, config)
        values, _ = nets.forward(agent.critic, gs)
        values = values[:, 0]
        c_loss = critic_loss(values, targets.returns)
        if not (np.isfinite(a.loss) and np.isfinite(c_loss)):
            raise NonFiniteLossError(
                f"non-finite loss at epoch {epoch}: actor={a.loss}, critic={c_loss}",
                dump={
                    "epoch": epoch,
                    "actor_loss": a.loss,
                    "critic_loss": c_loss,
                    "obs": obs.tolist(),
                    "actions": actions.tolist(),
                    "old_log_probs": old.tolist(),
                    "returns": targets.returns.tolist(),
                    "advantages": targets.advantages.tolist(),
                },
            )
        per_epoch.append(
            {
                "actor_loss": a.loss,
                "critic_loss": c_loss,
                "mean_entropy": float(a.entropy.mean()),
                "mean_ratio": float(a.ratio.mean()),
                "clip_fraction": float(a.clipped.mean()),
            }
        )
        actor_grads = nets.backward(agent.actor, obs, a.dlogits)
        nets.adam_step(agent.actor.params(), actor_grads.params(), agent.actor_opt, config.lr)
        dvalues = config.value_coef * 2.0 * (values - targets.returns) / values.size
        critic_grads = nets.backward(agent.critic, gs, dvalues[:, None])
        nets.adam_step(agent.critic.params(), critic_grads.params(), agent.critic_opt, config.lr)

    first = per_epoch[0]
    return UpdateStats(
        actor_loss=first["actor_loss"],
        critic_loss=first["critic_loss"],
        mean_entropy=first["mean_entropy"],
        mean_ratio=float(np.mean([e["mean_ratio"] for e in per_epoch])),
        clip_fraction=float(np.mean([e["clip_fraction"] for e in per_epoch])),
        per_epoch=per_epoch,
    )
