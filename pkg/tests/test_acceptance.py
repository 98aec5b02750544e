"""Acceptance checks, one test per criterion.

Criteria 1-7 are fast. Criteria 6 and 8-12 share one default training run
(5 seeds x 1500 episodes, plus a repeat of seed 0), which takes a few
minutes on one CPU core. Each test prints a PASS/FAIL line; the full list
is repeated in the pytest terminal summary.
"""

import itertools
import json
import math
import time
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from spread_ippo import env, export, metrics, nets, trainer
from spread_ippo.config import TrainConfig
from spread_ippo.env import WorldConfig
from spread_ippo.ppo import PPOConfig, actor_loss, clipped_surrogate, compute_returns, critic_loss

from test_nets import numeric_grad, rel_error

GRAD_H = 1e-5


# ---------------------------------------------------------------- fast suite


def _preactivations(net, x):
    out, inputs = nets.forward(net, x)
    zs = [h @ l.weights.T + l.biases for h, l in zip(inputs, net.layers)]
    return np.concatenate([z.ravel() for z in zs[:-1]]) if len(zs) > 1 else np.array([1.0])


def _gradient_instance(rng):
    """A random small actor/critic pair, batch and PPO loss, away from kinks."""
    while True:
        obs_dim, gs_dim = int(rng.integers(2, 9)), int(rng.integers(2, 11))
        hidden = [int(rng.integers(3, 11)) for _ in range(int(rng.integers(1, 3)))]
        T = int(rng.integers(1, 9))
        actor = nets.init_net([obs_dim, *hidden, 5], rng, output_scale=1.0, cls=nets.ActorNet)
        critic = nets.init_net([gs_dim, *hidden, 1], rng, output_scale=1.0, cls=nets.CriticNet)
        for layer in actor.layers + critic.layers:
            layer.biases[:] = rng.normal(scale=0.1, size=layer.biases.shape)
        obs = rng.normal(size=(T, obs_dim))
        gs = rng.normal(size=(T, gs_dim))
        actions = rng.integers(0, 5, T)
        logits, _ = nets.forward(actor, obs)
        old = nets.log_softmax(logits)[np.arange(T), actions] + rng.normal(scale=0.2, size=T)
        adv = rng.normal(size=T)
        returns = rng.normal(size=T)
        cfg = PPOConfig(clip_eps=0.2, entropy_coef=float(rng.uniform(0, 0.1)))
        ratio = np.exp(nets.log_softmax(logits)[np.arange(T), actions] - old)
        near_clip = np.min(np.abs(np.abs(ratio - 1) - cfg.clip_eps)) < 1e-3
        near_relu = min(np.abs(_preactivations(actor, obs)).min(), np.abs(_preactivations(critic, gs)).min()) < 1e-3
        if not (near_clip or near_relu):
            return actor, critic, obs, gs, actions, old, adv, returns, cfg


def test_criterion_01_gradient_correctness(report_criterion):
    rng = np.random.default_rng(2024)
    start = time.perf_counter()
    worst_actor = worst_critic = 0.0
    for _ in range(200):
        actor, critic, obs, gs, actions, old, adv, returns, cfg = _gradient_instance(rng)

        def a_loss():
            logits, _ = nets.forward(actor, obs)
            return actor_loss(logits, actions, old, adv, cfg).loss

        logits, _ = nets.forward(actor, obs)
        a = actor_loss(logits, actions, old, adv, cfg)
        analytic = nets.backward(actor, obs, a.dlogits).params()
        worst_actor = max(worst_actor, rel_error(analytic, numeric_grad(a_loss, actor.params(), GRAD_H)))

        def c_loss():
            values, _ = nets.forward(critic, gs)
            return critic_loss(values[:, 0], returns)

        values, _ = nets.forward(critic, gs)
        dvalues = 2.0 * (values[:, 0] - returns) / returns.size
        analytic = nets.backward(critic, gs, dvalues[:, None]).params()
        worst_critic = max(worst_critic, rel_error(analytic, numeric_grad(c_loss, critic.params(), GRAD_H)))
    elapsed = time.perf_counter() - start
    ok = worst_actor < 1e-6 and worst_critic < 1e-6 and elapsed < 30
    report_criterion(1, "gradient correctness", ok,
                     f"max rel err actor {worst_actor:.2e}, critic {worst_critic:.2e} (< 1e-6); {elapsed:.1f}s (< 30s)")
    assert ok


def test_criterion_02_returns_oracle(report_criterion):
    rng = np.random.default_rng(7)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(1000):
        T = int(rng.integers(1, 101))
        rewards = rng.uniform(-3, 0, T)
        gamma = float(rng.uniform(0, 1))
        brute = [math.fsum(gamma ** (k - t) * rewards[k] for k in range(t, T)) for t in range(T)]
        worst = max(worst, float(np.max(np.abs(compute_returns(rewards, gamma) - brute))))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-12 and elapsed < 5
    report_criterion(2, "returns oracle", ok, f"max abs err {worst:.1e} (<= 1e-12); {elapsed:.2f}s (< 5s)")
    assert ok


def test_criterion_03_clip_semantics(report_criterion):
    r = np.round(np.arange(1, 31) * 0.1, 10)
    A = np.round(np.arange(-8, 9) * 0.25, 10)
    bad_value = bad_grad = 0
    for ri, ai in itertools.product(r, A):
        s, d = clipped_surrogate(ri, ai, 0.2)
        unclipped, clipped = ri * ai, min(max(ri, 0.8), 1.2) * ai
        bad_value += s != min(unclipped, clipped)
        if clipped < unclipped:
            bad_grad += d != 0.0
    ok = bad_value == 0 and bad_grad == 0
    report_criterion(3, "clip semantics", ok,
                     f"{len(r) * len(A)} grid points, {bad_value} value mismatches, {bad_grad} nonzero clipped grads")
    assert ok


def test_criterion_04_environment_invariants(report_criterion):
    cfg = WorldConfig()
    rng = np.random.default_rng(11)
    state = env.reset(cfg, rng)
    out_of_bounds = positive = 0
    for _ in range(100_000):
        if state.step == cfg.max_steps:
            state = env.reset(cfg, rng)
        state, reward, _ = env.step(state, rng.integers(0, 5, cfg.n_agents), cfg)
        out_of_bounds += bool(np.any(np.abs(state.agent_pos) > cfg.bound))
        positive += reward > 0
    obs_len = env.observe(state, 0).size
    ok = out_of_bounds == 0 and positive == 0 and obs_len == 18
    report_criterion(4, "environment invariants", ok,
                     f"1e5 steps: {out_of_bounds} out of bounds, {positive} positive rewards; obs length {obs_len}")
    assert ok


def test_criterion_05_matching_oracle(report_criterion):
    rng = np.random.default_rng(5)
    disagreements = successes = 0
    delta = 0.10
    for _ in range(10_000):
        agents = rng.uniform(-0.15, 0.15, (3, 2))
        landmarks = rng.uniform(-0.15, 0.15, (3, 2))
        state = env.WorldState(agents, np.zeros_like(agents), landmarks)
        dist = np.linalg.norm(agents[:, None] - landmarks[None], axis=2)
        brute = any(all(dist[p[j], j] <= delta for j in range(3)) for p in itertools.permutations(range(3)))
        adj = metrics._within(state, delta)
        matched = metrics._perfect_matching_augmenting(adj)
        disagreements += (matched != brute) + (metrics.success(state, delta) != brute)
        successes += brute
    ok = disagreements == 0
    report_criterion(5, "success/matching oracle", ok,
                     f"1e4 configs ({successes} successful), {disagreements} disagreements")
    assert ok


def test_criterion_07_initial_entropy(report_criterion):
    world = WorldConfig()
    agents = trainer.init_agents(world, PPOConfig(), seed=0)
    rng = np.random.default_rng(0)
    ent = []
    for _ in range(100):
        state = env.reset(world, rng)
        for i, a in enumerate(agents):
            ent.append(nets.policy_entropy(nets.actor_forward(a.actor, env.observe(state, i))))
    mean = float(np.mean(ent))
    ok = 1.55 <= mean <= 1.6095
    report_criterion(7, "initial entropy", ok, f"mean {mean:.5f} nats in [1.55, 1.6095]; reference 1.58 +/- 0.01")
    assert ok


# ---------------------------------------------------------- default training


@pytest.fixture(scope="module")
def default_runs(tmp_path_factory):
    out = tmp_path_factory.mktemp("acceptance_runs")
    config = TrainConfig(output_dir=str(out / "main"))
    start = time.perf_counter()
    dirs = trainer.train(config)
    elapsed = time.perf_counter() - start
    logs = [export.read_log(d / "log.jsonl") for d in dirs]
    evals = [json.loads((d / "eval.json").read_text()) for d in dirs]
    return {"config": config, "root": out, "dirs": dirs, "logs": logs, "evals": evals, "elapsed": elapsed}


@pytest.mark.slow
def test_criterion_06_determinism(report_criterion, default_runs):
    config = default_runs["config"]
    (repeat,) = trainer.train(config, seeds=[0], out_dir=default_runs["root"] / "repeat")
    first = default_runs["dirs"][0]
    same = {f: (first / f).read_bytes() == (repeat / f).read_bytes() for f in ("log.jsonl", "final.json")}
    ok = all(same.values())
    report_criterion(6, "determinism", ok, ", ".join(f"{f} {'identical' if s else 'DIFFERS'}" for f, s in same.items()))
    assert ok


@pytest.mark.slow
def test_criterion_08_learning_improvement(report_criterion, default_runs):
    parts, passing = [], 0
    for seed, log in zip(default_runs["config"].seeds, default_runs["logs"]):
        r = np.array([rec["team_reward"] for rec in log])
        first = r[:100].mean()
        last = metrics.sliding_average(r, 100)[-100:].mean()
        gain = (last - first) / abs(first)
        passing += gain >= 0.25
        parts.append(f"s{seed} {first:.1f}->{last:.1f} ({100 * gain:+.0f}%)")
    elapsed = default_runs["elapsed"]
    ok = passing >= 4 and elapsed < 600
    report_criterion(8, "learning improvement", ok,
                     f"{passing}/5 seeds >= 25% (need 4); {'; '.join(parts)}; 5-seed training {elapsed:.0f}s (< 600s)")
    assert ok


@pytest.mark.slow
def test_criterion_09_success_rate(report_criterion, default_runs):
    world = default_runs["config"].world
    untrained = trainer.init_agents(world, default_runs["config"].ppo, seed=0)
    baseline = trainer.evaluate(untrained, world, 100, "sample", seed=0, delta=0.10).success_rate
    rates = [e["success_rate"] for e in default_runs["evals"]]
    assert all(e["mode"] == "greedy" and e["n_episodes"] == 100 and e["delta"] == 0.10 for e in default_runs["evals"])
    passing = sum(r >= 60 for r in rates)
    ok = passing >= 3 and baseline < 5
    report_criterion(9, "success rate", ok,
                     f"greedy success {rates} % ({passing}/5 >= 60%, need 3); mean {np.mean(rates):.1f}% "
                     f"vs reference 91 +/- 3.5%; untrained baseline {baseline:.0f}% (< 5%)")
    assert ok


@pytest.mark.slow
def test_criterion_10_entropy_decay(report_criterion, default_runs):
    parts, passing = [], 0
    for seed, log in zip(default_runs["config"].seeds, default_runs["logs"]):
        e = np.array([rec["mean_entropy"] for rec in log])
        initial, final = e[0], e[-max(1, len(e) // 10):].mean()
        good = final < 0.8 and initial - final >= 0.5
        passing += good
        parts.append(f"s{seed} {initial:.3f}->{final:.3f}")
    ok = passing >= 3
    report_criterion(10, "entropy decay", ok,
                     f"{passing}/5 seeds final < 0.8 and drop >= 0.5 (need 3); {'; '.join(parts)}; reference 0.406")
    assert ok


@pytest.mark.slow
def test_criterion_11_spatial_separation(report_criterion, default_runs):
    series = [e["episodes"]["inter_agent_distance"] for e in default_runs["evals"]]
    agg = metrics.aggregate_seeds(series, window=20)
    value, spread = float(agg.mean[-1]), float(agg.std[-1])
    per_seed = [float(metrics.sliding_average(s, 20)[-1]) for s in series]
    ok = 0.40 <= value <= 0.90
    report_criterion(11, "spatial separation", ok,
                     f"window-20 distance {value:.3f} +/- {spread:.3f} in [0.40, 0.90]; "
                     f"per seed {[round(v, 3) for v in per_seed]}; reference 0.651")
    assert ok


@pytest.mark.slow
def test_criterion_12_plot_reproduction(report_criterion, default_runs, tmp_path):
    summary = export.compare_seeds(default_runs["root"] / "main", tmp_path / "figures")
    wanted = {
        2: "fig2_reward_per_agent.svg", 3: "fig3_training_curve.svg", 6: "fig6_action_histogram.svg",
        7: "fig7_inter_agent_distance.svg", 8: "fig8_success_rate.svg", 9: "fig9_entropy.svg",
    }
    missing = []
    for fig, name in wanted.items():
        path = tmp_path / "figures" / name
        try:
            ET.parse(path)
        except (OSError, ET.ParseError):
            missing.append(fig)
    ok = not missing and set(wanted.values()) <= set(summary["figures"])
    report_criterion(12, "plot reproduction", ok,
                     f"figures {sorted(wanted)} emitted as SVG" if ok else f"missing figures {missing}")
    assert ok


@pytest.mark.slow
def test_critic_loss_falls_during_training(default_runs):
    for log in default_runs["logs"]:
        c = np.array([np.mean([u["critic_loss"] for u in rec["update"]]) for rec in log])
        k = len(c) // 10
        assert c[-k:].mean() < c[:k].mean()
