"""Reproducible pipeline steps with content-addressed manifests, and the
end-to-end desk benchmark built from them.

Every step writes ``<output>.manifest.json`` recording the step name, its full
configuration, the sha256 of each input and of each output.  A step whose
manifest matches the requested configuration and inputs, and whose outputs
still hash to the recorded values, is skipped.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .evaluation import (EPSILON_GRID, RankingConfig, load_negatives, make_negatives,
                         normalized_auc, ranking_eval, rmse_eval, save_negatives, write_table)
from .model import ModelConfig, load_checkpoint, save_checkpoint
from .planner import Ensemble, HeuristicConfig, goals_from_dataset, run_episode
from .sim.dataset import DataGenConfig, Dataset, file_sha256, generate_dataset
from .train import LossConfig, get_preset, inhand_accuracy, train_inhand, train_probe, \
    train_world_model

Log = Callable[[str], None]


def manifest_path(output: str | Path) -> Path:
    output = Path(output)
    return output.with_name(output.name + ".manifest.json")


def read_manifest(output: str | Path) -> dict:
    return json.loads(manifest_path(output).read_text())


def _request(step: str, config: dict, inputs: dict[str, str | Path]) -> dict:
    return {"step": step, "config": config,
            "inputs": {k: {"path": str(v), "sha256": file_sha256(v)} for k, v in sorted(inputs.items())}}


def _is_current(request: dict, outputs: list[Path]) -> bool:
    mp = manifest_path(outputs[0])
    if not mp.exists() or not all(o.exists() for o in outputs):
        return False
    recorded = json.loads(mp.read_text())
    if {k: recorded.get(k) for k in ("step", "config")} != {k: request[k] for k in ("step", "config")}:
        return False
    if {k: v["sha256"] for k, v in recorded.get("inputs", {}).items()} != \
            {k: v["sha256"] for k, v in request["inputs"].items()}:
        return False
    return all(recorded["outputs"].get(o.name) == file_sha256(o) for o in outputs)


def write_manifest(request: dict, outputs: list[Path], extra: dict | None = None) -> dict:
    manifest = dict(request)
    manifest["outputs"] = {o.name: file_sha256(o) for o in outputs}
    if extra:
        manifest["results"] = extra
    manifest_path(outputs[0]).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def cached_step(step: str, config: dict, inputs: dict[str, str | Path], outputs: Sequence[Path],
                run: Callable[[], dict | None], force: bool = False) -> dict:
    """Run ``run`` unless an identical earlier run left valid outputs; returns the manifest."""
    outputs = [Path(o) for o in outputs]
    request = _request(step, config, inputs)
    if not force and _is_current(request, outputs):
        return json.loads(manifest_path(outputs[0]).read_text())
    for o in outputs:
        o.parent.mkdir(parents=True, exist_ok=True)
    extra = run()
    return write_manifest(request, outputs, extra)


# -- steps --------------------------------------------------------------------

def make_dataset(cfg: DataGenConfig, out: Path, force: bool = False) -> dict:
    return cached_step("gen-data", asdict(cfg), {}, [out],
                       lambda: {"episodes": len(Dataset(generate_dataset(cfg, out)))}, force)


def metrics_path(ckpt: Path) -> Path:
    return ckpt.with_name(ckpt.stem + ".metrics.csv")


def make_member(data: Path, model_cfg: ModelConfig, loss_cfg: LossConfig, seed: int, out: Path,
                log: Log | None = None, force: bool = False) -> dict:
    """Train the world model for one seed and save it with its metrics log."""
    metrics = metrics_path(out)
    config = {"model": model_cfg.to_dict(), "loss": asdict(loss_cfg), "seed": seed}

    def run():
        res = train_world_model(Dataset(data), model_cfg, loss_cfg, seed, metrics_path=metrics,
                                log=log)
        meta = {"seed": seed, "epochs": loss_cfg.epochs, "dataset_sha256": file_sha256(data),
                "final_loss": res.metrics[-1].loss, "first_loss": res.metrics[0].loss}
        save_checkpoint(res.model, out, meta)
        return meta

    return cached_step("train", config, {"dataset": data}, [out, metrics], run, force)


@dataclass(frozen=True)
class HeadConfig:
    epochs: int = 5
    batch: int = 256
    lr: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch < 1 or not self.lr > 0:
            raise ValueError("head training needs positive epochs, batch and lr")


def make_head(kind: str, ckpt: Path, data: Path, out: Path, cfg: HeadConfig = HeadConfig(),
              force: bool = False) -> dict:
    """Fit the position probe (``kind="probe"``) or the in-hand classifier
    (``kind="inhand"``) on a frozen checkpoint and save the extended model."""
    if kind not in ("probe", "inhand"):
        raise ValueError(f"unknown head {kind!r}")

    def run():
        model, meta = load_checkpoint(ckpt)
        ds = Dataset(data)
        fit = train_probe if kind == "probe" else train_inhand
        losses = fit(model, ds, epochs=cfg.epochs, batch=cfg.batch, lr=cfg.lr, seed=cfg.seed)
        result = {f"{kind}_losses": losses}
        if kind == "inhand":
            result["inhand_train_accuracy"] = inhand_accuracy(model, ds)
        save_checkpoint(model, out, dict(meta, **result))
        return result

    return cached_step(f"train-{kind}", asdict(cfg), {"ckpt": ckpt, "dataset": data}, [out], run,
                       force)


def eval_rmse(ckpt: Path, data: Path, out: Path, horizon: int = 10, force: bool = False) -> dict:
    def run():
        model, _ = load_checkpoint(ckpt)
        rmse = rmse_eval(model, Dataset(data), horizon)
        write_table(out, [("rmse", t, v) for t, v in enumerate(rmse)])
        return {"rmse": rmse.tolist()}

    return cached_step("eval-rmse", {"horizon": horizon}, {"ckpt": ckpt, "dataset": data}, [out],
                       run, force)


def make_negative_set(data: Path, cfg: RankingConfig, seed: int, out: Path,
                      force: bool = False) -> dict:
    def run():
        save_negatives(out, make_negatives(Dataset(data), cfg, seed))
        return None

    return cached_step("negatives", dict(asdict(cfg), seed=seed), {"dataset": data}, [out], run,
                       force)


def eval_rank(ckpt: Path, data: Path, negatives: dict[float, Path], out: Path,
              force: bool = False) -> dict:
    """Hits@1 and MRR for each stored negative set (keyed by epsilon)."""
    grid = sorted(negatives)

    def run():
        model, _ = load_checkpoint(ckpt)
        ds = Dataset(data)
        recs = [ranking_eval(model, ds, load_negatives(negatives[e])) for e in grid]
        rows = []
        for e, r in zip(grid, recs):
            rows += [("hits_at_1", e, r.hits_at_1), ("mrr", e, r.mrr)]
        hits = [r.hits_at_1 for r in recs]
        rows.append(("auc", float("nan"), normalized_auc(grid, hits)))
        write_table(out, rows)
        return {"epsilon": grid, "hits_at_1": hits, "mrr": [r.mrr for r in recs],
                "ranks": [list(r.ranks) for r in recs]}

    inputs: dict[str, str | Path] = {"ckpt": ckpt, "dataset": data}
    inputs.update({f"negatives_{e:g}": p for e, p in negatives.items()})
    return cached_step("eval-rank", {"epsilon": grid}, inputs, [out], run, force)


def plan_episodes(ckpts: Sequence[Path], goals: Path, cfg: HeuristicConfig, budget: int,
                  out: Path, episodes: int | None = None, tolerance: float = 1.0, seed: int = 0,
                  workers: int | None = None, log: Log | None = None, force: bool = False) -> dict:
    """Closed-loop planning on each goal of an evaluation dataset; writes a
    JSON-lines trace (one record per step and one summary per episode)."""
    config = {"heuristic": asdict(cfg), "budget": budget, "episodes": episodes,
              "tolerance": tolerance, "members": len(ckpts), "seed": seed}

    def run():
        ens = Ensemble.load(ckpts)
        pairs = goals_from_dataset(Dataset(goals), tolerance)
        if episodes is not None:
            pairs = pairs[:episodes]
        results = []
        with open(out, "w") as f:
            for i, (start, goal) in enumerate(pairs):
                res = run_episode(ens, start, goal, cfg, budget, workers=workers)
                for rec in res.trace:
                    f.write(json.dumps({"episode": i, **rec}) + "\n")
                summary = {"episode": i, "success": res.success, "steps": res.steps,
                           "progress": res.progress}
                f.write(json.dumps(summary) + "\n")
                results.append(summary)
                if log:
                    log(f"plan {out.stem} episode {i}: success={res.success} steps={res.steps} "
                        f"progress={res.progress:.2f}")
        return {"episodes": results, "successes": sum(r["success"] for r in results),
                "success_rate": float(np.mean([r["success"] for r in results])),
                "mean_progress": float(np.mean([r["progress"] for r in results]))}

    inputs: dict[str, str | Path] = {f"member{i}": p for i, p in enumerate(ckpts)}
    inputs["goals"] = goals
    return cached_step("plan", config, inputs, [out], run, force)


# -- benchmark ----------------------------------------------------------------

@dataclass(frozen=True)
class BenchConfig:
    preset: str = "desk"
    train_task: str = "stack3"
    transfer_task: str = "row3"
    members: tuple[int, ...] = (0, 1, 2)
    heldout_transitions: int = 1000
    ranking_episodes: int = 100
    planning_episodes: int = 20
    horizon: int = 10
    epsilon_grid: tuple[float, ...] = EPSILON_GRID
    n_negatives: int = 10
    budget: int = 20
    planning: bool = True

    def __post_init__(self):
        get_preset(self.preset)
        if not self.members:
            raise ValueError("at least one ensemble member required")


def _say(log: Log | None, msg: str) -> None:
    if log:
        log(msg)


def run_bench(run_dir: str | Path, cfg: BenchConfig = BenchConfig(), log: Log | None = None) -> dict:
    """Data, ensemble training, offline metrics and planning; every step is
    cached, so re-running only does missing work.  Returns the summary that is
    also written to ``tables/bench.json``."""
    run = Path(run_dir)
    preset = get_preset(cfg.preset)
    data, models, tables = run / "data", run / "models", run / "tables"
    train = data / f"train_{cfg.train_task}.fwmd"
    heldout = data / f"heldout_{cfg.train_task}.fwmd"
    rank_sets = {cfg.train_task: data / f"eval_{cfg.train_task}.fwmd",
                 cfg.transfer_task: data / f"eval_{cfg.transfer_task}.fwmd"}
    goals = {"stack2": data / "goals_stack2.fwmd", "stack3": data / "goals_stack3.fwmd"}

    make_dataset(DataGenConfig(task=cfg.train_task, transitions=preset.transitions, seed=0), train)
    make_dataset(DataGenConfig(task=cfg.train_task, transitions=cfg.heldout_transitions, seed=1),
                 heldout)
    for k, (task, path) in enumerate(rank_sets.items()):
        make_dataset(DataGenConfig(task=task, kind="eval", episodes=cfg.ranking_episodes,
                                   seed=2 + k), path)
    for k, (task, path) in enumerate(goals.items()):
        make_dataset(DataGenConfig(task=task, kind="eval", episodes=cfg.planning_episodes,
                                   seed=4 + k), path)
    _say(log, "datasets ready")

    members = []
    for s in cfg.members:
        world = models / f"member{s}.world.fwmc"
        make_member(train, ModelConfig(), preset.loss, s, world, log=log)
        probe = models / f"member{s}.probe.fwmc"
        make_head("probe", world, train, probe)
        final = models / f"member{s}.fwmc"
        make_head("inhand", probe, train, final)
        members.append(final)
        _say(log, f"member {s} ready")

    summary: dict = {"members": list(cfg.members), "rmse": {}, "rank": {}, "planning": {}}
    for s, ckpt in zip(cfg.members, members):
        m = eval_rmse(ckpt, heldout, tables / f"member{s}.rmse.csv", cfg.horizon)
        summary["rmse"][f"member{s}"] = m["results"]["rmse"]
    summary["rmse"]["mean"] = np.mean([summary["rmse"][f"member{s}"] for s in cfg.members],
                                      axis=0).tolist()

    for k, (task, path) in enumerate(rank_sets.items()):
        negs = {}
        for j, eps in enumerate(cfg.epsilon_grid):
            negs[eps] = data / f"negatives_{task}_eps{eps:g}.npz"
            make_negative_set(path, RankingConfig(eps, cfg.n_negatives), 100 * k + j, negs[eps])
        per = {}
        for s, ckpt in zip(cfg.members, members):
            per[f"member{s}"] = eval_rank(ckpt, path, negs, tables / f"member{s}.rank_{task}.csv")[
                "results"]
        hits = np.mean([per[m]["hits_at_1"] for m in per], axis=0)
        summary["rank"][task] = {
            "epsilon": list(cfg.epsilon_grid), "members": per, "mean_hits_at_1": hits.tolist(),
            "mean_mrr": np.mean([per[m]["mrr"] for m in per], axis=0).tolist(),
            "auc": normalized_auc(cfg.epsilon_grid, hits)}
    _say(log, "offline metrics ready")

    if cfg.planning:
        plans = {"stack2_ensemble_pp": (members, "pp", goals["stack2"]),
                 "stack3_ensemble_pp": (members, "pp", goals["stack3"]),
                 "stack3_single_pp": (members[:1], "pp", goals["stack3"]),
                 "stack3_ensemble_l2": (members, "l2", goals["stack3"])}
        for name, (ckpts, mode, gpath) in plans.items():
            res = plan_episodes(ckpts, gpath, HeuristicConfig(mode=mode), cfg.budget,
                                run / "plans" / f"{name}.trace.jsonl", log=log)["results"]
            summary["planning"][name] = {k: res[k] for k in
                                         ("successes", "success_rate", "mean_progress")}
            summary["planning"][name]["episodes"] = len(res["episodes"])
        _say(log, "planning ready")

    write_bench_tables(tables, summary)
    return summary


def write_bench_tables(tables: Path, summary: dict) -> None:
    tables.mkdir(parents=True, exist_ok=True)
    rows = []
    for name, values in summary["rmse"].items():
        rows += [(f"rmse_{name}", t, v) for t, v in enumerate(values)]
    write_table(tables / "rmse.csv", rows)
    rows = []
    for task, rec in summary["rank"].items():
        for name, per in rec["members"].items():
            rows += [(f"hits_at_1_{task}_{name}", e, v) for e, v in zip(rec["epsilon"], per["hits_at_1"])]
        rows += [(f"hits_at_1_{task}_mean", e, v) for e, v in zip(rec["epsilon"], rec["mean_hits_at_1"])]
        rows += [(f"mrr_{task}_mean", e, v) for e, v in zip(rec["epsilon"], rec["mean_mrr"])]
        rows.append((f"auc_{task}_mean", float("nan"), rec["auc"]))
    write_table(tables / "rank.csv", rows)
    if summary["planning"]:
        with open(tables / "planning.csv", "w") as f:
            f.write("config,episodes,successes,success_rate,mean_progress\n")
            for name, r in summary["planning"].items():
                f.write(f"{name},{r['episodes']},{r['successes']},{r['success_rate']:.4f},"
                        f"{r['mean_progress']:.4f}\n")
    (tables / "bench.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
