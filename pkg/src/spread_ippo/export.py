"""Run-artifact export: per-episode CSV, run manifest, cross-seed figures."""

from __future__ import annotations

import csv
import io
import json
import re
from pathlib import Path

import numpy as np

from . import metrics
from .checkpoint import file_sha256
from .env import Action
from .plot import PlotSpec, render_plot

MANIFEST_VERSION = 1
ACTION_NAMES = [a.name.lower() for a in Action]


class LogFormatError(ValueError):
    pass


def read_log(path) -> list[dict]:
    """Parse a JSONL run log, reporting any bad line by number."""
    records = []
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise LogFormatError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from None
            if not isinstance(rec, dict) or "episode" not in rec or "team_reward" not in rec:
                raise LogFormatError(f"{path}:{lineno}: not an episode record")
            records.append(rec)
    return records


def _metric_columns(n_agents: int) -> list[tuple[str, str]]:
    cols = [
        ("episode", "1-based episode index"),
        ("seed", "training seed"),
        ("team_reward", "sum over steps of the shared per-step reward"),
        ("mean_episode_reward", "per-agent episode reward averaged over agents"),
        ("mean_entropy", "policy entropy (nats) averaged over steps and agents"),
    ]
    cols += [(f"entropy_agent{i}", f"mean policy entropy of agent {i}") for i in range(n_agents)]
    cols += [(f"reward_agent{i}", f"episode reward credited to agent {i}") for i in range(n_agents)]
    cols += [
        ("inter_agent_distance", "mean pairwise agent distance averaged over steps"),
        ("final_inter_agent_distance", "mean pairwise agent distance at the last step"),
        ("coordination_score", "fraction of landmarks covered at the last step"),
        ("success", "1 if every landmark had a distinct agent within the radius at the last step"),
        ("collisions", "agent pairs closer than two radii, summed over steps"),
    ]
    cols += [(f"action_{name}", f"count of '{name}' actions") for name in ACTION_NAMES]
    cols += [
        ("actor_loss", "first-epoch actor loss averaged over agents"),
        ("critic_loss", "first-epoch critic loss averaged over agents"),
        ("clip_fraction", "fraction of clipped samples averaged over epochs and agents"),
        ("mean_ratio", "mean probability ratio averaged over epochs and agents"),
    ]
    return cols


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def metrics_rows(records: list[dict]) -> tuple[list[str], list[list]]:
    n_agents = len(records[0]["per_agent_entropy"]) if records else 0
    names = [c for c, _ in _metric_columns(n_agents)]
    rows = []
    for r in records:
        upd = r.get("update") or []
        row = [
            r["episode"],
            r.get("seed", 0),
            r["team_reward"],
            r["mean_episode_reward"],
            r["mean_entropy"],
            *r["per_agent_entropy"],
            *r["per_agent_reward"],
            r["inter_agent_distance"],
            r["final_inter_agent_distance"],
            r["coordination_score"],
            bool(r["success"]),
            r["collisions"],
            *r["action_counts"],
        ]
        for key in ("actor_loss", "critic_loss", "clip_fraction", "mean_ratio"):
            row.append(float(np.mean([u[key] for u in upd])) if upd else 0.0)
        rows.append(row)
    return names, rows


def export_metrics(log_path, out_csv) -> Path:
    """One CSV row per logged episode; ``#`` lines up top document the columns."""
    records = read_log(log_path)
    n_agents = len(records[0]["per_agent_entropy"]) if records else 0
    names, rows = metrics_rows(records)
    buf = io.StringIO()
    for name, desc in _metric_columns(n_agents):
        buf.write(f"# {name}: {desc}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(names)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    out = Path(out_csv)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(buf.getvalue())
    return out


def read_csv(path) -> dict[str, list]:
    """Column-oriented read of a CSV, skipping ``#`` comment lines; numbers become floats."""
    with open(path) as f:
        lines = [l for l in f if not l.startswith("#")]
    reader = csv.reader(lines)
    try:
        header = next(reader)
    except StopIteration:
        raise ValueError(f"{path}: empty CSV") from None
    cols: dict[str, list] = {h: [] for h in header}
    for row in reader:
        for h, v in zip(header, row):
            try:
                cols[h].append(float(v))
            except ValueError:
                cols[h].append(v)
    return cols


def read_matrix_csv(path) -> np.ndarray:
    with open(path) as f:
        rows = [l for l in f if l.strip() and not l.startswith("#")]
    return np.array([[float(v) for v in r.split(",")] for r in rows])


def write_matrix_csv(matrix, path) -> Path:
    out = Path(path)
    with open(out, "w") as f:
        f.write("# rows: x cell index (left to right), columns: y cell index (bottom to top)\n")
        for row in np.asarray(matrix):
            f.write(",".join(_fmt(v.item()) for v in row) + "\n")
    return out


def write_manifest(run_dir, config, seeds) -> Path:
    """Inventory every file under ``run_dir`` with its SHA-256."""
    run_dir = Path(run_dir)
    files = sorted(p for p in run_dir.rglob("*") if p.is_file() and p.name != "manifest.json")
    manifest = {
        "format_version": MANIFEST_VERSION,
        "config": config.to_dict(include_output_dir=False),
        "seeds": list(seeds),
        "files": {str(p.relative_to(run_dir)): file_sha256(p) for p in files},
    }
    out = run_dir / "manifest.json"
    out.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return out


def _write_aggregate_csv(path, x, agg: metrics.SeedAggregate, xname="episode"):
    with open(path, "w") as f:
        f.write(f"# mean and population std across {agg.n_seeds} seeds\n")
        f.write(f"{xname},mean,std\n")
        for xi, m, s in zip(x, agg.mean, agg.std):
            f.write(f"{_fmt(xi)},{_fmt(float(m))},{_fmt(float(s))}\n")


def _seed_dirs(runs_dir: Path) -> list[Path]:
    dirs = [p for p in runs_dir.iterdir() if p.is_dir() and re.fullmatch(r"seed\d+", p.name)]
    return sorted(dirs, key=lambda p: int(p.name[4:]))


def _read_trajectories(path):
    with open(path) as f:
        for line in f:
            yield json.loads(line)


def compare_seeds(runs_dir, out_dir, resolution: int = 50, entropy_points: int = 50) -> dict:
    """Aggregate every ``seed*/`` run under ``runs_dir`` into CSVs and SVG figures."""
    runs_dir, out_dir = Path(runs_dir), Path(out_dir)
    seed_dirs = _seed_dirs(runs_dir)
    if not seed_dirs:
        raise FileNotFoundError(f"no seed*/ run directories under {runs_dir}")
    out_dir.mkdir(parents=True, exist_ok=True)
    logs = [read_log(d / "log.jsonl") for d in seed_dirs]
    n_ep = min(len(l) for l in logs)
    logs = [l[:n_ep] for l in logs]
    episodes = np.arange(1, n_ep + 1)
    seeds = [int(d.name[4:]) for d in seed_dirs]
    n_agents = len(logs[0][0]["per_agent_reward"])
    written = []

    # per-agent episode reward trajectories, averaged over seeds
    per_agent = {
        f"agent{i}": metrics.aggregate_seeds(
            [[r["per_agent_reward"][i] for r in l] for l in logs], window=20
        ).mean
        for i in range(n_agents)
    }
    written.append(render_plot(
        PlotSpec("line", list(per_agent), xlabel="episode", ylabel="episode reward (window 20)",
                 title="Reward trajectories per agent", output=out_dir / "fig2_reward_per_agent.svg"),
        {"x": episodes, **per_agent},
    ))

    reward = metrics.aggregate_seeds([[r["team_reward"] for r in l] for l in logs], window=100)
    _write_aggregate_csv(out_dir / "reward_aggregate.csv", episodes, reward)
    written.append(render_plot(
        PlotSpec("band", ["mean", "std"], xlabel="episode", ylabel="team reward (window 100)",
                 title="Training curve", output=out_dir / "fig3_training_curve.svg",
                 labels=[f"mean ± std, {len(seeds)} seeds"]),
        {"x": episodes, "mean": reward.mean, "std": reward.std},
    ))

    entropy = metrics.aggregate_seeds([[r["mean_entropy"] for r in l] for l in logs])
    _write_aggregate_csv(out_dir / "entropy_aggregate.csv", episodes, entropy)
    # downsample to evenly spaced blocks for the entropy figure
    blocks = np.array_split(np.arange(n_ep), min(entropy_points, n_ep))
    ent_m = np.array([entropy.mean[b].mean() for b in blocks])
    ent_s = np.array([entropy.std[b].mean() for b in blocks])
    written.append(render_plot(
        PlotSpec("band", ["mean", "std"], xlabel="training block", ylabel="policy entropy (nats)",
                 title="Policy entropy over training", output=out_dir / "fig9_entropy.svg",
                 labels=[f"mean ± std, {len(seeds)} seeds"]),
        {"x": np.arange(1, len(blocks) + 1), "mean": ent_m, "std": ent_s},
    ))

    summary = {"seeds": seeds, "n_episodes": n_ep, "std_kind": "population"}
    evals = [json.loads((d / "eval.json").read_text()) for d in seed_dirs if (d / "eval.json").exists()]
    if len(evals) == len(seed_dirs):
        dist = metrics.aggregate_seeds([e["episodes"]["inter_agent_distance"] for e in evals], window=20)
        ev_x = np.arange(1, dist.mean.size + 1)
        _write_aggregate_csv(out_dir / "distance_aggregate.csv", ev_x, dist, xname="eval_episode")
        written.append(render_plot(
            PlotSpec("band", ["mean", "std"], xlabel="evaluation episode", ylabel="inter-agent distance (window 20)",
                     title="Average inter-agent distance", output=out_dir / "fig7_inter_agent_distance.svg",
                     labels=[f"mean ± std, {len(seeds)} seeds"]),
            {"x": ev_x, "mean": dist.mean, "std": dist.std},
        ))

        rates = np.array([e["success_rate"] for e in evals])
        with open(out_dir / "success_by_seed.csv", "w") as f:
            f.write("seed,success_rate\n")
            for s, r in zip(seeds, rates):
                f.write(f"{s},{_fmt(float(r))}\n")
        written.append(render_plot(
            PlotSpec("bar", ["rate", "err"], xlabel="seed", ylabel="success rate (%)",
                     title="Landmark coverage success rate", output=out_dir / "fig8_success_rate.svg",
                     labels=[f"seed {s}" for s in seeds] + ["mean"]),
            {"rate": np.append(rates, rates.mean()), "err": np.append(np.zeros_like(rates), rates.std())},
        ))

        traj_files = [d / "trajectories.jsonl" for d in seed_dirs if (d / "trajectories.jsonl").exists()]
        positions, actions = [], []
        for tf in traj_files:
            for rec in _read_trajectories(tf):
                positions.append(rec["agent_pos"])
                actions.append(rec["actions"])
        echo = json.loads((seed_dirs[0] / "final.json").read_text())["config_echo"]
        bound = float(echo["world"]["bound"])
        if positions:
            grid = metrics.visitation_heatmap(positions, resolution, bound)
            write_matrix_csv(grid.counts, out_dir / "heatmap.csv")
            written.append(render_plot(
                PlotSpec("heatmap", xlabel="x", ylabel="y", title="Visitation heatmap (evaluation)",
                         output=out_dir / "fig5_heatmap.svg"),
                {"counts": grid.counts, "bound": bound},
            ))
            hist = metrics.action_histogram(actions)
            with open(out_dir / "action_histogram.csv", "w") as f:
                f.write("action,count\n")
                for name, c in zip(ACTION_NAMES, hist):
                    f.write(f"{name},{int(c)}\n")
            written.append(render_plot(
                PlotSpec("bar", ["count"], xlabel="action", ylabel="count",
                         title="Action distribution (evaluation)", output=out_dir / "fig6_action_histogram.svg",
                         labels=ACTION_NAMES),
                {"count": hist},
            ))
        summary.update(
            success_rate_mean=float(rates.mean()),
            success_rate_std=float(rates.std()),
            final_smoothed_distance_mean=float(dist.mean[-1]),
            final_smoothed_distance_std=float(dist.std[-1]),
        )

    summary.update(
        final_window100_reward_mean=float(reward.mean[-1]),
        final_window100_reward_std=float(reward.std[-1]),
        figures=[p.name for p in written],
    )
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary
