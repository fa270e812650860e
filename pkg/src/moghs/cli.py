"""Command-line interface: run experiments, score fronts, plot, enumerate.

Subcommands:
  run        execute one search run and persist its logs
  metrics    hypervolume / generational distances across run directories
  plot       objective-space scatter of each run's front
  enumerate  census of a grammar's terminal language

Thread count for the accelerated kernels follows MOGHS_NUM_THREADS;
MOGHS_DISABLE_NUMBA=1 selects the pure-NumPy lane.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, load_run_config, normalize_algorithm
from .grammar import GrammarError, enumerate_designs, load_grammar_file
from .objectives import Evaluator
from .pareto import (
    ParetoArchive,
    build_reference_set,
    generational_distance,
    hypervolume,
    inverse_generational_distance,
)
from .search import run as run_algorithm

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_MISSING_FILE = 2


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="moghs",
        description="Multi-objective co-design search over graph-grammar robot morphologies.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute one search run")
    p_run.add_argument("--config", required=True, help="TOML run configuration")
    p_run.add_argument("--seed", type=int, default=None, help="override the config seed")
    p_run.add_argument("--algorithm", default=None, help="moghs | dw | random")
    p_run.add_argument("--out-dir", default=None, help="override the config output directory")

    p_met = sub.add_parser("metrics", help="front quality metrics over run directories")
    p_met.add_argument("dirs", nargs="+", help="run directories")
    p_met.add_argument("--out", default=None, help="write the JSON report here")

    p_plot = sub.add_parser("plot", help="scatter each run's front in objective space")
    p_plot.add_argument("dirs", nargs="+", help="run directories")
    p_plot.add_argument("--out", required=True, help="output directory for images")

    p_enum = sub.add_parser("enumerate", help="count a grammar's terminal designs")
    p_enum.add_argument("--grammar", required=True, help="grammar JSON path or builtin:<name>")
    p_enum.add_argument("--cap", type=int, default=100_000)

    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            return cmd_run(args.config, args.seed, args.algorithm, args.out_dir)
        if args.command == "metrics":
            return cmd_metrics(args.dirs, args.out)
        if args.command == "plot":
            return cmd_plot(args.dirs, args.out)
        return cmd_enumerate(args.grammar, args.cap)
    except FileNotFoundError as e:
        print(f"error: missing file: {e.filename or e}", file=sys.stderr)
        return EXIT_MISSING_FILE
    except (ConfigError, GrammarError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR


def cmd_run(config_path, seed=None, algorithm=None, out_dir=None) -> int:
    cfg = load_run_config(config_path)
    grammar_path = cfg.resolve_grammar_path()
    if not grammar_path.exists():
        print(f"error: missing file: {grammar_path}", file=sys.stderr)
        return EXIT_MISSING_FILE
    grammar = load_grammar_file(grammar_path)
    search_cfg = cfg.search_config(seed=seed, algorithm=normalize_algorithm(algorithm) if algorithm else None)

    run_id = f"{search_cfg.algorithm}_seed{search_cfg.seed}"
    base = Path(out_dir) if out_dir else cfg.out_dir
    run_dir = base / run_id
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.toml").write_text(cfg.text)

    evaluator = Evaluator(cfg.mppi, cfg.sim)
    kinds = [o.kind for o in search_cfg.objectives]

    t_start = time.perf_counter()
    with open(run_dir / "episodes.jsonl", "w") as ep_fh, open(run_dir / "timings.jsonl", "w") as tm_fh:

        def on_episode(rec):
            ep_fh.write(json.dumps(rec.log_obj(), sort_keys=True) + "\n")
            tm_fh.write(
                json.dumps(
                    {"episode": rec.index, "wall_time": rec.wall_time, **rec.phase_times},
                    sort_keys=True,
                )
                + "\n"
            )

        result = run_algorithm(search_cfg, grammar, evaluator, on_episode)
    wall = time.perf_counter() - t_start

    _write_archive_csv(run_dir / "archive.csv", result.archive, kinds)
    phase_totals: dict = {}
    for rec in result.episodes:
        for name, val in rec.phase_times.items():
            phase_totals[name] = phase_totals.get(name, 0.0) + val
    (run_dir / "run.json").write_text(
        json.dumps(
            {
                "run_id": run_id,
                "version": __version__,
                "algorithm": search_cfg.algorithm,
                "seed": search_cfg.seed,
                "episodes_completed": len(result.episodes),
                "eval_calls": result.eval_calls,
                "exhausted": result.exhausted,
                "objective_kinds": kinds,
                "config": cfg.to_dict(),
                "timing": {"wall_time": wall, "phases": phase_totals},
            },
            indent=2,
            sort_keys=True,
        )
    )

    front = result.archive.front()
    print(f"run {run_id}: {len(result.episodes)} episodes, archive size {len(result.archive)}")
    for i, kind in enumerate(kinds):
        best = front[:, i].max() if len(front) else float("nan")
        print(f"  best {kind}: {best:.4f}")
    print(f"  logs: {run_dir}")
    return EXIT_OK


def _write_archive_csv(path, archive: ParetoArchive, kinds) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(list(kinds) + ["key", "episode"])
        for key, reward, ep in zip(archive.keys, archive.rewards, archive.episodes):
            w.writerow([repr(float(v)) for v in reward] + [key, ep])


def read_archive_csv(path):
    """Returns (front array, keys, episodes, objective kinds)."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    kinds = rows[0][:-2]
    m = len(kinds)
    front, keys, eps = [], [], []
    for row in rows[1:]:
        front.append([float(v) for v in row[:m]])
        keys.append(row[m])
        eps.append(int(row[m + 1]))
    return np.array(front).reshape(-1, m), keys, eps, kinds


def load_run(run_dir):
    run_dir = Path(run_dir)
    meta = json.loads((run_dir / "run.json").read_text())
    episodes = [
        json.loads(line)
        for line in (run_dir / "episodes.jsonl").read_text().splitlines()
        if line.strip()
    ]
    front, keys, eps, kinds = read_archive_csv(run_dir / "archive.csv")
    return {"dir": run_dir, "meta": meta, "episodes": episodes, "front": front, "kinds": kinds}


def replay_archive(run_dir) -> ParetoArchive:
    """Rebuild the final archive from the episode stream alone."""
    run = load_run(run_dir)
    m = len(run["kinds"])
    archive = ParetoArchive(m)
    best: dict[str, np.ndarray] = {}
    for ep in run["episodes"]:
        if not ep["valid"]:
            continue
        r = np.asarray(ep["rewards"], dtype=float)
        key = ep["key"]
        best[key] = np.maximum(best[key], r) if key in best else r
        archive.insert(key, best[key].copy(), ep["episode"])
    return archive


def cmd_metrics(dirs, out=None) -> int:
    runs = [load_run(d) for d in dirs]
    kinds = runs[0]["kinds"]
    for run in runs[1:]:
        if run["kinds"] != kinds:
            print(
                f"error: mixed objective suites: {kinds} vs {run['kinds']} in {run['dir']}",
                file=sys.stderr,
            )
            return EXIT_ERROR
    all_rewards = [
        [ep["rewards"] for ep in run["episodes"] if ep["valid"]] for run in runs
    ]
    reference = build_reference_set([r for r in all_rewards if r])

    per_run = []
    for run in runs:
        front = run["front"]
        if not len(front):
            warnings.warn(f"empty archive in {run['dir']}")
            hv = 0.0
            gd = igd = float("nan")
        else:
            hv = hypervolume(front)
            gd = generational_distance(front, reference, p=1.0)
            igd = inverse_generational_distance(front, reference)
        per_run.append(
            {
                "dir": str(run["dir"]),
                "run_id": run["meta"]["run_id"],
                "algorithm": run["meta"]["algorithm"],
                "seed": run["meta"]["seed"],
                "hv": hv,
                "gd": gd,
                "igd": igd,
            }
        )

    summary = {}
    for row in per_run:
        summary.setdefault(row["algorithm"], []).append(row)
    table = {
        algo: {
            "runs": len(rows),
            "hv": float(np.mean([r["hv"] for r in rows])),
            "gd": float(np.mean([r["gd"] for r in rows])),
            "igd": float(np.mean([r["igd"] for r in rows])),
        }
        for algo, rows in summary.items()
    }

    print(f"{'algorithm':<18}{'HV':>12}{'GD':>12}{'IGD':>12}{'runs':>6}")
    for algo, row in table.items():
        print(f"{algo:<18}{row['hv']:>12.4f}{row['gd']:>12.4f}{row['igd']:>12.4f}{row['runs']:>6}")

    report = {"objective_kinds": kinds, "reference_size": len(reference),
              "runs": per_run, "summary": table}
    if out:
        Path(out).write_text(json.dumps(report, indent=2, sort_keys=True))
        print(f"report: {out}")
    return EXIT_OK


ALGO_COLORS = {"moghs": "tab:blue", "discrete_weights": "tab:orange", "random": "tab:green"}


def cmd_plot(dirs, out) -> int:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for d in dirs:
        run = load_run(d)
        kinds = run["kinds"]
        m = len(kinds)
        if m > 3:
            print("error: plotting supports at most three objectives", file=sys.stderr)
            return EXIT_ERROR
        front = run["front"]
        color = ALGO_COLORS.get(run["meta"]["algorithm"], "tab:gray")
        pairs = [(0, 1)] if m == 2 else [(0, 1), (0, 2), (1, 2)]
        fig, axes = plt.subplots(1, len(pairs), figsize=(5 * len(pairs), 4.2), squeeze=False)
        for ax, (i, j) in zip(axes[0], pairs):
            if len(front):
                order = np.argsort(front[:, i])
                ax.scatter(front[order, i], front[order, j], c=color, s=28)
                ax.plot(front[order, i], front[order, j], c=color, alpha=0.4, lw=1)
            else:
                warnings.warn(f"empty archive in {run['dir']}")
                ax.text(0.5, 0.5, "empty archive", ha="center", va="center",
                        transform=ax.transAxes)
            ax.set_xlabel(kinds[i])
            ax.set_ylabel(kinds[j])
            ax.grid(True, alpha=0.3)
        fig.suptitle(run["meta"]["run_id"])
        fig.tight_layout()
        target = out_dir / f"{run['meta']['run_id']}.png"
        fig.savefig(target, dpi=120)
        plt.close(fig)
        print(f"wrote {target}")
    return EXIT_OK


def cmd_enumerate(grammar_path, cap) -> int:
    if str(grammar_path).startswith("builtin:"):
        from . import builtin_grammar_path

        grammar_path = str(builtin_grammar_path(str(grammar_path).split(":", 1)[1]))
    grammar = load_grammar_file(grammar_path)
    try:
        terminals, states = enumerate_designs(grammar, cap=cap)
    except RuntimeError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR
    print(f"terminal designs: {len(terminals)}")
    print(f"states visited:   {states}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
