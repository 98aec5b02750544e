import json
import math

import numpy as np
import pytest

from spread_ippo import trainer
from spread_ippo.checkpoint import CheckpointError, load_checkpoint
from spread_ippo.config import TrainConfig
from spread_ippo.env import WorldConfig
from spread_ippo.ppo import PPOConfig

from oracles import assigned_landmark_planner, replay_rewards


def tiny_config(tmp_path, **kw):
    base = dict(
        ppo=PPOConfig(hidden_size=16),
        episodes=3,
        seeds=(0,),
        log_every=1,
        checkpoint_every=2,
        eval_episodes=4,
        output_dir=str(tmp_path),
    )
    base.update(kw)
    return TrainConfig(**base)


@pytest.fixture
def agents():
    return trainer.init_agents(WorldConfig(), PPOConfig(hidden_size=16), seed=0)


class TestStreams:
    def test_independent_of_agent_count(self):
        a = trainer.RunStreams.for_training(3, 2).env.random(5)
        b = trainer.RunStreams.for_training(3, 6).env.random(5)
        np.testing.assert_array_equal(a, b)

    def test_streams_differ(self):
        s = trainer.RunStreams.for_training(0, 2)
        assert s.sample[0].random() != s.sample[1].random()
        assert trainer.make_rng(0, 1).random() != trainer.make_rng(1, 1).random()


class TestRunEpisode:
    def test_single_step(self, agents):
        w = WorldConfig(max_steps=1)
        res = trainer.run_episode(w, agents, trainer.RunStreams.for_training(0, 3))
        assert all(len(t) == 1 and len(t.rewards) == 1 for t in res.trajectories)

    def test_trajectory_invariants(self, agents):
        res = trainer.run_episode(WorldConfig(), agents, trainer.RunStreams.for_training(0, 3))
        for t in res.trajectories:
            assert len(t.obs) == len(t.actions) == len(t.log_probs_old) == len(t.values) == 25
            assert all(lp <= 0 for lp in t.log_probs_old)
            assert t.rewards == res.step_rewards
        assert res.stats["team_reward"] == sum(res.step_rewards)
        assert sum(res.stats["action_counts"]) == 75

    def test_greedy_repeatable(self, agents):
        runs = [
            trainer.run_episode(WorldConfig(), agents, trainer.RunStreams.for_eval(5, 3), mode="greedy")
            for _ in range(2)
        ]
        assert runs[0].trajectories[0].actions == runs[1].trajectories[0].actions
        assert runs[0].final_state.agent_pos.tobytes() == runs[1].final_state.agent_pos.tobytes()

    def test_greedy_never_samples(self, agents):
        streams = trainer.RunStreams.for_eval(0, 3)
        before = [g.bit_generator.state for g in streams.sample]
        trainer.run_episode(WorldConfig(), agents, streams, mode="greedy")
        assert [g.bit_generator.state for g in streams.sample] == before

    def test_bad_mode(self, agents):
        with pytest.raises(ValueError):
            trainer.run_episode(WorldConfig(), agents, trainer.RunStreams.for_eval(0, 3), mode="argmax")

    def test_replay_matches_logged_rewards(self, agents, tmp_path):
        path = tmp_path / "traj.jsonl"
        report = trainer.evaluate(agents, WorldConfig(), 5, "sample", 0, trajectories_path=path)
        records = [json.loads(line) for line in path.read_text().splitlines()]
        replayed = replay_rewards(records, WorldConfig())
        for ep, reward in enumerate(report.episodes["reward"]):
            assert math.fsum(replayed[ep]) == pytest.approx(reward, abs=1e-12)
            assert len(replayed[ep]) == 25


class TestEvaluate:
    def test_untrained_baseline(self, agents):
        report = trainer.evaluate(agents, WorldConfig(), 100, "sample", 0)
        assert report.success_rate < 5
        assert 1.55 <= report.mean_entropy <= math.log(5)

    def test_scripted_oracle_reaches_every_landmark(self, agents):
        world = WorldConfig()
        report = trainer.evaluate(agents, world, 100, "greedy", 0, policy=assigned_landmark_planner(world))
        assert report.success_rate == 100.0
        assert report.mean_coordination_score == 1.0

    def test_repeatable(self, agents):
        a = trainer.evaluate(agents, WorldConfig(), 3, "greedy", 2).to_dict()
        b = trainer.evaluate(agents, WorldConfig(), 3, "greedy", 2).to_dict()
        assert json.dumps(a) == json.dumps(b)

    def test_agent_count_mismatch(self, agents):
        with pytest.raises(CheckpointError, match="dimension mismatch"):
            trainer.evaluate(agents[:2], WorldConfig(), 1)


class TestTrain:
    def test_one_episode(self, tmp_path):
        cfg = tiny_config(tmp_path, episodes=1)
        (seed_dir,) = trainer.train(cfg)
        lines = (seed_dir / "log.jsonl").read_text().splitlines()
        assert len(lines) == 1
        assert (seed_dir / "final.json").exists()
        assert not list(seed_dir.glob("checkpoint_ep*.json"))
        assert (tmp_path / "manifest.json").exists()

    def test_artifacts(self, tmp_path):
        cfg = tiny_config(tmp_path, episodes=5)
        (seed_dir,) = trainer.train(cfg)
        names = sorted(p.name for p in seed_dir.iterdir())
        assert names == ["checkpoint_ep2.json", "checkpoint_ep4.json", "eval.json", "final.json",
                         "log.jsonl", "trajectories.jsonl"]
        records = [json.loads(line) for line in (seed_dir / "log.jsonl").read_text().splitlines()]
        assert [r["episode"] for r in records] == [1, 2, 3, 4, 5]
        for r in records:
            assert r["team_reward"] == sum(r["step_rewards"])
            assert len(r["update"]) == 3
            assert all(0 <= u["clip_fraction"] <= 1 for u in r["update"])
        ev = json.loads((seed_dir / "eval.json").read_text())
        assert ev["n_episodes"] == 4 and ev["mode"] == "greedy" and "success_rate" in ev
        assert load_checkpoint(seed_dir / "final.json").episode_count == 5

    def test_rerun_byte_identical(self, tmp_path):
        dirs = []
        for name in ("a", "b"):
            cfg = tiny_config(tmp_path / name, episodes=4)
            dirs.append(trainer.train(cfg)[0])
        for f in ("log.jsonl", "final.json", "checkpoint_ep2.json", "eval.json", "trajectories.jsonl"):
            assert (dirs[0] / f).read_bytes() == (dirs[1] / f).read_bytes(), f
        assert (tmp_path / "a" / "manifest.json").read_bytes() == (tmp_path / "b" / "manifest.json").read_bytes()

    def test_parallel_matches_serial(self, tmp_path):
        serial = trainer.train(tiny_config(tmp_path / "s", seeds=(0, 1)))
        parallel = trainer.train(tiny_config(tmp_path / "p", seeds=(0, 1)), workers=2)
        for a, b in zip(serial, parallel):
            assert (a / "log.jsonl").read_bytes() == (b / "log.jsonl").read_bytes()

    def test_seeds_differ(self, tmp_path):
        d0, d1 = trainer.train(tiny_config(tmp_path, seeds=(0, 1)))
        assert (d0 / "log.jsonl").read_bytes() != (d1 / "log.jsonl").read_bytes()

    def test_nonfinite_writes_dump(self, tmp_path, monkeypatch):
        from spread_ippo import ppo

        monkeypatch.setattr(trainer, "update_agent", _poisoned_update)
        with pytest.raises(ppo.NonFiniteLossError):
            trainer.train(tiny_config(tmp_path))
        dump = json.loads((tmp_path / "seed0" / "nonfinite_dump.json").read_text())
        assert dump["episode"] == 1 and dump["agent"] == 0

    def test_learning_sanity_short(self, tmp_path):
        """A lone agent chasing one landmark improves within a few hundred episodes."""
        world = WorldConfig(n_agents=1, n_landmarks=1)
        cfg = tiny_config(tmp_path, world=world, ppo=PPOConfig(), episodes=300, log_every=100,
                          checkpoint_every=1000, eval_episodes=1)
        (seed_dir,) = trainer.train(cfg)
        rewards = [json.loads(l)["team_reward"] for l in (seed_dir / "log.jsonl").read_text().splitlines()]
        assert np.mean(rewards[-50:]) > np.mean(rewards[:50])


def _poisoned_update(agent, traj, targets, config):
    from spread_ippo import ppo

    targets.returns[0] = np.nan
    return ppo.update_agent(agent, traj, targets, config)
