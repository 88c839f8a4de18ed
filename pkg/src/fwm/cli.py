"""Command-line entry point: ``fwm <subcommand> [flags]``.

Every subcommand also accepts ``--config FILE`` with ``key = value`` lines
(``#`` starts a comment).  Keys are flag names without the leading dashes;
they are validated against the subcommand's flags before any work starts and
explicit command-line flags take precedence.
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path
from typing import Callable, Sequence

from .evaluation import EPSILON_GRID, RankingConfig
from .model import ModelConfig
from .pipeline import (BenchConfig, HeadConfig, eval_rank, eval_rmse, make_dataset, make_head,
                       make_member, make_negative_set, plan_episodes, run_bench)
from .planner import HeuristicConfig
from .sim import TASKS
from .sim.dataset import DataGenConfig
from .train import LR_SCHEDULES, PRESETS, get_preset


class UsageError(Exception):
    """Invalid flags or configuration; reported with exit status 2."""


def _csv_floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.split(",") if v.strip())


def _csv_ints(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.split(",") if v.strip())


def _csv_paths(text: str) -> tuple[Path, ...]:
    return tuple(Path(v) for v in text.split(",") if v.strip())


def _model_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("model")
    defaults = ModelConfig()
    for name in ("d_z", "num_layers", "hidden", "edge_dim", "encoder_hidden", "max_objects"):
        g.add_argument("--" + name.replace("_", "-"), type=int, default=getattr(defaults, name))
    g.add_argument("--no-rgb", action="store_true", help="bounding-box channels only")
    g.add_argument("--no-coords", action="store_true", help="RGB channels only")
    g.add_argument("--no-edge-actions", action="store_true")
    g.add_argument("--monolithic", action="store_true", help="non-factorized transition")


def _model_config(a: argparse.Namespace) -> ModelConfig:
    return ModelConfig(d_z=a.d_z, num_layers=a.num_layers, hidden=a.hidden, edge_dim=a.edge_dim,
                       encoder_hidden=a.encoder_hidden, max_objects=a.max_objects,
                       use_rgb=not a.no_rgb, use_coords=not a.no_coords,
                       edge_actions=not a.no_edge_actions, factorized=not a.monolithic)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fwm", description="Factored world models for "
                                     "pick-and-place: data, training, evaluation, planning.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def command(name: str, help: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help, description=help)
        p.add_argument("--config", type=Path, help="key = value file with defaults for the flags")
        p.add_argument("--run-dir", type=Path, default=Path("runs/default"),
                       help="directory for outputs without an explicit path")
        p.add_argument("--force", action="store_true", help="ignore cached outputs")
        return p

    p = command("gen-data", "generate a recorded dataset")
    p.add_argument("--task", choices=sorted(TASKS), default="stack3")
    p.add_argument("--kind", choices=("train", "eval"), default="train")
    p.add_argument("--transitions", type=int, default=20_000, help="train kind")
    p.add_argument("--episodes", type=int, default=100, help="eval kind")
    p.add_argument("--episode-length", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--held-out", default="row3", help="comma-separated structures to exclude")
    p.add_argument("--goal-tolerance", type=float, default=0.25)
    p.add_argument("--distinct-colors", action="store_true")
    p.add_argument("--out", type=Path)

    p = command("train", "train one world model with the contrastive objective")
    p.add_argument("--data", "--dataset", dest="data", type=Path, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--preset", choices=sorted(PRESETS), default="desk")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--lr-schedule", choices=LR_SCHEDULES)
    p.add_argument("--gamma", type=float)
    p.add_argument("--sigma", type=float)
    p.add_argument("--out", type=Path)
    _model_flags(p)

    for name, what in (("train-probe", "position probe"), ("train-inhand", "in-hand classifier")):
        p = command(name, f"fit the {what} on a frozen world model")
        p.add_argument("--ckpt", type=Path, required=True)
        p.add_argument("--data", "--dataset", dest="data", type=Path, required=True)
        p.add_argument("--epochs", type=int, default=5)
        p.add_argument("--batch", type=int, default=256)
        p.add_argument("--lr", type=float, default=1e-3)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", type=Path, required=True)

    p = command("eval", "offline metrics of one checkpoint")
    p.add_argument("--metric", choices=("rmse", "rank"), required=True)
    p.add_argument("--ckpt", type=Path, required=True)
    p.add_argument("--data", "--dataset", dest="data", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--horizon", type=int, default=10)
    p.add_argument("--eps", type=_csv_floats, default=EPSILON_GRID,
                   help="comma-separated perturbation radii (cm)")
    p.add_argument("--n-negatives", type=int, default=10)
    p.add_argument("--tolerance", type=float, default=0.25,
                   help="goal tolerance a negative must violate (cm)")
    p.add_argument("--seed", type=int, default=0)

    p = command("plan", "closed-loop planning towards recorded goals")
    p.add_argument("--ensemble", type=_csv_paths, required=True, help="comma-separated checkpoints")
    p.add_argument("--goal", type=Path, required=True, help="evaluation dataset of goals")
    p.add_argument("--heuristic", choices=("pp", "seq", "l2"), default="pp")
    p.add_argument("--budget", type=int, default=20)
    p.add_argument("--seed", type=int, default=0,
                   help="recorded in the manifest; planning itself has no randomness")
    p.add_argument("--episodes", type=int, help="plan for the first N goals only")
    p.add_argument("--delta", type=float, default=0.175)
    p.add_argument("--tolerance", type=float, default=1.0, help="success tolerance (cm)")
    p.add_argument("--trace", type=Path, required=True)

    p = command("bench", "full desk pipeline and acceptance tables")
    p.add_argument("--preset", choices=sorted(PRESETS), default="desk")
    p.add_argument("--members", type=_csv_ints, default=(0, 1, 2))
    p.add_argument("--planning-episodes", type=int, default=20)
    p.add_argument("--ranking-episodes", type=int, default=100)
    p.add_argument("--no-planning", action="store_true")
    return parser


def read_config_file(path: Path) -> dict[str, str]:
    out = {}
    for n, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise UsageError(f"{path}:{n}: expected 'key = value'")
        out[key.strip().replace("_", "-")] = value.strip()
    return out


def _config_argv(sub: argparse.ArgumentParser, values: dict[str, str], path: Path) -> list[str]:
    """Translate config entries into flags, rejecting unknown keys and
    malformed values up front."""
    actions = {opt[2:]: a for a in sub._actions for opt in a.option_strings if opt.startswith("--")}
    argv = []
    for key, value in values.items():
        action = actions.get(key)
        if action is None or key in ("config", "help"):
            raise UsageError(f"{path}: unknown key {key!r}")
        if isinstance(action, argparse._StoreTrueAction):
            if value.lower() in ("1", "true", "yes", "on"):
                argv.append("--" + key)
            elif value.lower() not in ("0", "false", "no", "off"):
                raise UsageError(f"{path}: {key} expects true or false, got {value!r}")
            continue
        if action.choices is not None and value not in action.choices:
            raise UsageError(f"{path}: {key} must be one of {sorted(action.choices)}")
        if action.type is not None:
            try:
                action.type(value)
            except (TypeError, ValueError):
                raise UsageError(f"{path}: invalid value {value!r} for {key}") from None
        argv += ["--" + key, value]
    return argv


def parse(argv: Sequence[str]) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config is not None:
        sub = parser._subparsers._group_actions[0].choices[args.command]
        values = read_config_file(args.config)
        # config values first so explicit flags override them
        args = parser.parse_args([args.command, *_config_argv(sub, values, args.config), *argv[1:]])
    return args


def _say(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


def cmd_gen_data(a: argparse.Namespace) -> Callable[[], dict]:
    cfg = DataGenConfig(task=a.task, kind=a.kind, transitions=a.transitions, episodes=a.episodes,
                        episode_length=a.episode_length, seed=a.seed,
                        held_out=tuple(t for t in a.held_out.split(",") if t),
                        goal_tolerance=a.goal_tolerance, distinct_colors=a.distinct_colors)
    for t in cfg.held_out:
        if t not in TASKS:
            raise UsageError(f"unknown held-out task {t!r}")
    out = a.out or a.run_dir / "data" / f"{a.task}_{a.kind}_seed{a.seed}.fwmd"
    return lambda: make_dataset(cfg, out, a.force)


def cmd_train(a: argparse.Namespace) -> Callable[[], dict]:
    model_cfg = _model_config(a)
    preset = get_preset(a.preset)
    overrides = {k: v for k, v in (("epochs", a.epochs), ("batch_size", a.batch_size),
                                   ("lr", a.lr), ("lr_schedule", a.lr_schedule), ("gamma", a.gamma),
                                   ("sigma", a.sigma))
                 if v is not None}
    loss_cfg = replace(preset.loss, **overrides)
    if not a.data.exists():
        raise UsageError(f"dataset not found: {a.data}")
    out = a.out or a.run_dir / "models" / f"world_seed{a.seed}.fwmc"
    return lambda: make_member(a.data, model_cfg, loss_cfg, a.seed, out, log=_say, force=a.force)


def _cmd_head(kind: str):
    def prepare(a: argparse.Namespace) -> Callable[[], dict]:
        cfg = HeadConfig(epochs=a.epochs, batch=a.batch, lr=a.lr, seed=a.seed)
        for p in (a.ckpt, a.data):
            if not p.exists():
                raise UsageError(f"file not found: {p}")
        return lambda: make_head(kind, a.ckpt, a.data, a.out, cfg, a.force)
    return prepare


def cmd_eval(a: argparse.Namespace) -> Callable[[], dict]:
    for p in (a.ckpt, a.data):
        if not p.exists():
            raise UsageError(f"file not found: {p}")
    if a.metric == "rmse":
        if a.horizon < 0:
            raise UsageError("--horizon must be non-negative")
        return lambda: eval_rmse(a.ckpt, a.data, a.out, a.horizon, a.force)
    grid = tuple(a.eps)
    if not grid or any(e <= 0 for e in grid) or any(y <= x for x, y in zip(grid, grid[1:])):
        raise UsageError("--eps must be positive and strictly ascending")
    cfgs = [RankingConfig(e, a.n_negatives, tolerance=a.tolerance) for e in grid]

    def run() -> dict:
        negs = {}
        for j, cfg in enumerate(cfgs):
            negs[cfg.epsilon] = a.out.with_name(f"{a.out.stem}.negatives_eps{cfg.epsilon:g}.npz")
            make_negative_set(a.data, cfg, a.seed + 1000 * j, negs[cfg.epsilon], a.force)
        return eval_rank(a.ckpt, a.data, negs, a.out, a.force)

    return run


def cmd_plan(a: argparse.Namespace) -> Callable[[], dict]:
    cfg = HeuristicConfig(delta=a.delta, mode=a.heuristic)
    if a.budget < 1:
        raise UsageError("--budget must be at least 1")
    for p in (*a.ensemble, a.goal):
        if not p.exists():
            raise UsageError(f"file not found: {p}")
    return lambda: plan_episodes(list(a.ensemble), a.goal, cfg, a.budget, a.trace, a.episodes,
                                 a.tolerance, seed=a.seed, log=_say, force=a.force)


def cmd_bench(a: argparse.Namespace) -> Callable[[], dict]:
    cfg = BenchConfig(preset=a.preset, members=tuple(a.members),
                      planning_episodes=a.planning_episodes, ranking_episodes=a.ranking_episodes,
                      planning=not a.no_planning)

    def run() -> dict:
        run_bench(a.run_dir, cfg, log=_say)
        for name in ("rmse.csv", "rank.csv", "planning.csv"):
            path = a.run_dir / "tables" / name
            if path.exists():
                print(f"== {path}")
                print(path.read_text(), end="")
        return {"summary": str(a.run_dir / "tables" / "bench.json")}

    return run


COMMANDS = {"gen-data": cmd_gen_data, "train": cmd_train, "train-probe": _cmd_head("probe"),
            "train-inhand": _cmd_head("inhand"), "eval": cmd_eval, "plan": cmd_plan,
            "bench": cmd_bench}


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parse(argv)
    except (UsageError, OSError) as e:
        print(f"fwm: error: {e}", file=sys.stderr)
        return 2
    except SystemExit as e:  # argparse reports usage errors this way
        return int(e.code or 0)
    try:
        work = COMMANDS[args.command](args)  # validates everything, computes nothing
    except (UsageError, ValueError, KeyError) as e:
        print(f"fwm {args.command}: error: {e}", file=sys.stderr)
        return 2
    try:
        result = work()
    except Exception as e:  # one-line diagnostic for runtime failures
        print(f"fwm {args.command}: {type(e).__name__}: {e}", file=sys.stderr)
        return 1
    if args.command != "bench":
        print(json.dumps(result.get("outputs", result), sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
