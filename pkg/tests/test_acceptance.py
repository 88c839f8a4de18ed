"""Acceptance criteria, one test each.  Every test records a PASS/FAIL line
that is repeated in the terminal summary.

Criteria 6 to 8 read the artifacts of ``fwm bench --preset desk``; point
FWM_RUN_DIR at the run directory (default: runs/desk in the repository).
"""
import itertools
import json
import os
import time
from pathlib import Path

import numpy as np
import pytest

from fwm.cli import main
from fwm.diffcore import ComputationSpec, grad_check
from fwm.model import ModelConfig, WorldModel, encode_actions
from fwm.pipeline import read_manifest
from fwm.planner import (COUNTER, Ensemble, HeuristicConfig, brute_force_minimum,
                         goals_from_dataset, hungarian_match, plan_step, score_l2, score_pp,
                         score_seq)
from fwm.sim import DataGenConfig, Dataset, generate_dataset, render
from fwm.train import LossConfig, contrastive_loss, contrastive_objective

RUN_DIR = Path(os.environ.get("FWM_RUN_DIR", Path(__file__).resolve().parents[1] / "runs" / "desk"))
TINY = ModelConfig(d_z=4, hidden=16, edge_dim=8, encoder_hidden=16, inhand_hidden=8,
                   probe_hidden=8)


def bench() -> dict:
    path = RUN_DIR / "tables" / "bench.json"
    if not path.exists():
        pytest.skip(f"no bench results at {path}; run `fwm bench --preset desk` first")
    return json.loads(path.read_text())


# 1 -------------------------------------------------------------------------

def test_equivariance(report):
    model = WorldModel(ModelConfig(), seed=0).eval()
    rng = np.random.default_rng(0)
    start, worst = time.perf_counter(), 0.0
    for k in range(2, 9):
        obs = rng.uniform(-1, 1, (2, k, 14, 18, 18)).astype(np.float32)
        act = rng.uniform(-1, 1, (2, 3)).astype(np.float32)
        z = model.encode_np(obs)
        nxt = model.transition_np(z, act)
        for _ in range(50):
            perm = rng.permutation(k)
            worst = max(worst, np.abs(model.encode_np(obs[:, perm]) - z[:, perm]).max(),
                        np.abs(model.transition_np(z[:, perm], act) - nxt[:, perm]).max())
    elapsed = time.perf_counter() - start
    ok = worst < 1e-5 and elapsed < 60
    report(1, ok, f"max abs deviation {worst:.2e} over K=2..8 x 50 permutations in {elapsed:.1f}s")
    assert ok


# 2 -------------------------------------------------------------------------

def _gradient_error(cfg: ModelConfig, abs_floor: float) -> float:
    rng = np.random.default_rng(7)
    model = WorldModel(cfg, seed=1)
    b, k = 4, 3
    obs = rng.uniform(-1, 1, (b, k, 14, 18, 18))
    nxt = rng.uniform(-1, 1, (b, k, 14, 18, 18))
    act = encode_actions(rng.integers(0, 2, b), rng.uniform(0, 30, b),
                         rng.uniform(0, 30, b)).astype(np.float64)
    loss = LossConfig(gamma=50.0)  # hinge active, so both terms carry gradient

    def fn(inp):
        return contrastive_objective(model, inp["obs"], inp["next"], act, np.array([1, 2, 3, 0]),
                                     loss)[0]

    spec = ComputationSpec(fn, model.world_parameters(), (model,))
    return grad_check(spec, {"obs": obs, "next": nxt}, h=1e-5, n_samples=300, seed=0,
                      abs_floor=abs_floor)


def test_gradient_check(report):
    start = time.perf_counter()
    tiny = _gradient_error(TINY, abs_floor=1e-6)
    # conv biases ahead of batch norm have an exactly zero gradient; their
    # central differences are float64 cancellation noise of a few 1e-9
    desk = _gradient_error(ModelConfig(), abs_floor=1e-5)
    elapsed = time.perf_counter() - start
    ok = tiny < 1e-3 and desk < 1e-3 and elapsed < 120
    report(2, ok, f"max rel error {tiny:.1e} (small model), {desk:.1e} (desk model) "
                  f"in {elapsed:.1f}s")
    assert ok


# 3 -------------------------------------------------------------------------

def _scalar_loss(z_t, z_next, z_pred, z_neg, gamma, sigma):
    k, d = len(z_t), len(z_t[0])
    pos = neg = 0.0
    for i in range(k):
        for j in range(d):
            pos += (z_next[i][j] - z_pred[i][j]) ** 2
            neg += (z_t[i][j] - z_neg[i][j]) ** 2
    c = 1.0 / (2 * k * sigma * sigma)
    return c * pos + max(0.0, gamma - c * neg)


def test_loss_oracle(report):
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(100):
        k, d = rng.integers(1, 7), rng.integers(1, 6)
        zs = [rng.standard_normal((k, d)) * rng.uniform(0.1, 2) for _ in range(4)]
        gamma, sigma = rng.uniform(0.1, 3), rng.uniform(0.2, 2)
        got = contrastive_loss(*zs, LossConfig(gamma=gamma, sigma=sigma))
        ref = _scalar_loss(*(z.tolist() for z in zs), gamma, sigma)
        worst = max(worst, abs(got - ref) / max(abs(ref), 1e-12))
    hand = contrastive_loss([[0.0]], [[1.0]], [[0.0]], [[1.0]], LossConfig(gamma=1.0, sigma=1.0))
    ok = worst < 1e-6 and hand == 1.0
    report(3, ok, f"max rel error {worst:.1e} on 100 instances, hand case = {hand!r}")
    assert ok


# 4 -------------------------------------------------------------------------

def test_hungarian_oracle(report):
    rng = np.random.default_rng(4)
    mismatches = 0
    for i in range(1000):
        n, m = rng.integers(1, 7, size=2)
        cost = rng.integers(0, 5, (n, m)).astype(float) if i % 2 else rng.random((n, m)) * 10
        if hungarian_match(cost).total != brute_force_minimum(cost):
            mismatches += 1
    report(4, mismatches == 0, f"{mismatches} mismatches out of 1000 matrices with K <= 6")
    assert mismatches == 0


# 5 -------------------------------------------------------------------------

GOAL2 = np.array([[0.0, 0.0], [10.0, 0.0]])
GOAL3 = np.array([[0.0, 0.0], [10.0, 0.0], [20.0, 0.0]])
DELTA = 0.175

PP_CASES = [  # (prediction, in hand, value): dyadic numbers keep the sums exact
    ([[0.125, 0.0], [10.0, 0.25]], [0, 0], 1 / 64 + 1 / 16),   # both within delta
    ([[0.125, 0.0], [10.0, 10.0]], [0, 1], 1 / 64 + 1),        # far and held
    ([[0.125, 0.0], [10.0, 10.0]], [0, 0], 1 / 64 + 2),        # far and on the ground
    ([[10.0, 0.25], [0.125, 0.0]], [1, 1], 1 / 64 + 1 / 16),   # slots matched before scoring
]
SEQ_CASES = [  # (prediction, in hand, order, value)
    ([[0.125, 0], [10, 0.25], [20, 0]], [0, 0, 0], (0, 1, 2), 1 / 64 + 1 / 16),
    ([[0.125, 0], [5, 5], [25, 5]], [0, 1, 0], (0, 1, 2), 1 / 64 + 1 + 2),
    ([[5, 5], [12, 5], [20, 0]], [0, 1, 0], (0, 1, 2), 2 + 3 + 0),   # wrong object picked
    ([[5, 5], [12, 5], [25, 5]], [1, 1, 0], (0, 1, 2), 1 + 3 + 2),
    ([[5, 5], [12, 5], [20, 0]], [1, 0, 0], (1, 0, 2), 2 + 3 + 0),
]
L2_CASES = [
    ([[0.0, 0.0], [10.0, 0.0]], 0.0),
    ([[0.125, 0.0], [10.0, 0.25]], 1 / 64 + 1 / 16),
    ([[10.0, 0.5], [0.0, 0.0]], 1 / 4),
]


def test_heuristic_tables(report):
    failures = []
    for pred, held, want in PP_CASES:
        got = score_pp(np.array([pred]), np.array([held]), GOAL2, DELTA)[0]
        if got != want:
            failures.append(("pp", pred, got, want))
    for pred, held, order, want in SEQ_CASES:
        got = score_seq(np.array([pred], float), np.array([held]), GOAL3, order, DELTA)[0]
        if got != want:
            failures.append(("seq", pred, got, want))
    for pred, want in L2_CASES:
        got = score_l2(np.array([pred]), GOAL2)[0]
        if got != want:
            failures.append(("l2", pred, got, want))
    total = len(PP_CASES) + len(SEQ_CASES) + len(L2_CASES)
    report(5, not failures, f"{total - len(failures)}/{total} table rows exact")
    assert not failures


# 6 -------------------------------------------------------------------------

def test_desk_training(report):
    summary = bench()
    rmse = np.array(summary["rmse"]["mean"][:9])
    hits = dict(zip(summary["rank"]["stack3"]["epsilon"], summary["rank"]["stack3"]["mean_hits_at_1"]))
    ok = bool(np.all(rmse < 3.0)) and hits[4.0] >= 0.8
    report(6, ok, f"max RMSE[t<=8] {rmse.max():.2f} cm, Hits@1 at eps=4 {hits[4.0]:.3f} "
                  f"(mean of {len(summary['members'])} members)")
    assert ok


# 7 -------------------------------------------------------------------------

def test_zero_shot(report):
    rank = bench()["rank"]
    train = dict(zip(rank["stack3"]["epsilon"], rank["stack3"]["mean_hits_at_1"]))[4.0]
    transfer = dict(zip(rank["row3"]["epsilon"], rank["row3"]["mean_hits_at_1"]))[4.0]
    drop = 100 * (train - transfer)
    report(7, drop <= 10, f"Hits@1 at eps=4: stack3 {train:.3f}, row3 {transfer:.3f}, "
                          f"drop {drop:.1f} points")
    assert drop <= 10


# 8 -------------------------------------------------------------------------

def test_planning(report):
    plans = bench()["planning"]
    if not plans:
        pytest.skip("bench was run without planning")
    s2 = plans["stack2_ensemble_pp"]
    ens, single, l2 = (plans[k]["successes"] for k in
                       ("stack3_ensemble_pp", "stack3_single_pp", "stack3_ensemble_l2"))
    ok = (s2["episodes"] == 20 and s2["successes"] >= 18 and ens > single and ens > l2
          and all(plans[k]["episodes"] == 20 for k in plans))
    report(8, ok, f"stack2 ensemble pp {s2['successes']}/20; stack3 ensemble pp {ens}/20, "
                  f"single pp {single}/20, ensemble l2 {l2}/20")
    assert ok


# 9 -------------------------------------------------------------------------

def _run(*argv) -> None:
    assert main([str(a) for a in argv]) == 0


def _hashes(path: Path) -> dict:
    return read_manifest(path)["outputs"]


def test_determinism(tmp_path, report, capsys):
    tiny = ["--d-z", 4, "--hidden", 16, "--edge-dim", 8, "--encoder-hidden", 16]
    runs = []
    for name in ("first", "second"):
        d = tmp_path / name
        _run("gen-data", "--transitions", 60, "--seed", 11, "--out", d / "train.fwmd")
        _run("gen-data", "--kind", "eval", "--task", "stack2", "--episodes", 1, "--seed", 12,
             "--out", d / "goals.fwmd")
        _run("train", "--data", d / "train.fwmd", "--epochs", 1, "--batch-size", 16, "--seed", 5,
             *tiny, "--out", d / "w.fwmc")
        _run("train-probe", "--ckpt", d / "w.fwmc", "--data", d / "train.fwmd", "--epochs", 1,
             "--out", d / "p.fwmc")
        _run("train-inhand", "--ckpt", d / "p.fwmc", "--data", d / "train.fwmd", "--epochs", 1,
             "--out", d / "m.fwmc")
        _run("plan", "--ensemble", d / "m.fwmc", "--goal", d / "goals.fwmd", "--budget", 2,
             "--trace", d / "plan.jsonl")
        runs.append({step: _hashes(d / f) for step, f in
                     (("gen-data", "train.fwmd"), ("train", "w.fwmc"), ("plan", "plan.jsonl"))})
    capsys.readouterr()
    same = [step for step in runs[0] if runs[0][step] == runs[1][step]]
    ok = len(same) == 3
    report(9, ok, f"identical output hashes for {', '.join(same) or 'nothing'}")
    assert ok


# 10 ------------------------------------------------------------------------

def test_grid_cardinality(tmp_path, report):
    data = Dataset(generate_dataset(DataGenConfig(task="stack3", kind="eval", episodes=1, seed=3),
                                    tmp_path / "g.fwmd"))
    (start, goal), = goals_from_dataset(data)
    ensemble = Ensemble([WorldModel(ModelConfig(), seed=s).eval() for s in (0, 1, 2)])
    COUNTER.clear()
    decision = plan_step(ensemble, render(start), goal, HeuristicConfig(), holding=False)
    ok = COUNTER["actions"] == 10_000 and decision.evaluated == 10_000 \
        and COUNTER["member_scores"] == 30_000
    report(10, ok, f"{COUNTER['actions']} actions per step, {COUNTER['member_scores']} member "
                   f"scores for 3 members")
    assert ok
