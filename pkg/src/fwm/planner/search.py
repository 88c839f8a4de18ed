"""One-step search over a grid of pick/place actions with a model ensemble,
and closed-loop episodes in the simulator."""
from __future__ import annotations

import os
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ..model import WorldModel, encode_actions, load_checkpoint
from ..sim import Action, GoalSpec, RenderOptions, SimState, goal_reached, render, step
from ..sim.dataset import Dataset, Episode
from ..sim.state import WORKSPACE
from ..sim.tasks import objects_match
from .heuristics import HeuristicConfig, score
from .matching import hungarian_match

# instrumentation: candidate actions scored and per-member evaluations
COUNTER: Counter = Counter()
CHUNK = 2000


class Ensemble:
    """Members share one architecture and differ only in their weights."""

    def __init__(self, members: Sequence[WorldModel]):
        if not members:
            raise ValueError("an ensemble needs at least one member")
        if any(m.cfg != members[0].cfg for m in members):
            raise ValueError("ensemble members must share one model configuration")
        self.members = list(members)

    @classmethod
    def load(cls, paths: Sequence[str | Path]) -> "Ensemble":
        return cls([load_checkpoint(p)[0] for p in paths])

    def __len__(self) -> int:
        return len(self.members)


def action_grid(n: int = 100) -> np.ndarray:
    """(n*n, 2) cell centres of a uniform n x n partition of the workspace.
    Index ``i * n + j`` is the i-th x and j-th y position."""
    c = (np.arange(n) + 0.5) * (WORKSPACE / n)
    x, y = np.meshgrid(c, c, indexing="ij")
    return np.stack([x.ravel(), y.ravel()], axis=1)


def planner_workers() -> int:
    """Worker threads, capped by ``FWM_THREADS`` when set."""
    cap = os.environ.get("FWM_THREADS")
    n = os.cpu_count() or 1
    if cap:
        n = min(n, max(1, int(cap)))
    return n


def member_scores(member: WorldModel, obs: np.ndarray, goal_obs: np.ndarray, actions: np.ndarray,
                  cfg: HeuristicConfig, order: Sequence[int] | None = None,
                  workers: int = 1) -> np.ndarray:
    """Heuristic value of every normalised action for one member.  Actions are
    scored in fixed chunks, so the result does not depend on ``workers``."""
    z = member.encode_np(obs[None])
    zg = member.encode_np(goal_obs[None])[0]
    out = np.empty(len(actions))

    def run(lo: int) -> None:
        hi = min(lo + CHUNK, len(actions))
        pred = member.transition_np(np.repeat(z, hi - lo, axis=0), actions[lo:hi])
        held = None if cfg.mode == "l2" else member.inhand_predict(pred)
        out[lo:hi] = score(cfg.mode, pred, held, zg, order, cfg.delta)

    starts = range(0, len(actions), CHUNK)
    if workers <= 1:
        for lo in starts:
            run(lo)
    else:
        with ThreadPoolExecutor(workers) as pool:
            list(pool.map(run, starts))
    COUNTER["member_scores"] += len(actions)
    return out


@dataclass(frozen=True)
class PlanDecision:
    action: Action
    index: int
    score: float
    top: tuple[tuple[int, float, float, float], ...]  # (index, x, y, score), best first
    evaluated: int


def plan_step(ensemble: Ensemble, obs: np.ndarray, goal: GoalSpec, cfg: HeuristicConfig,
              holding: bool, workers: int | None = None) -> PlanDecision:
    """Score every grid action with every member, average, and return the
    argmin (lowest grid index among exact ties)."""
    if goal.goal_obs is None:
        raise ValueError("planning needs a goal observation")
    grid = action_grid(cfg.grid)
    kind = np.full(len(grid), 1 if holding else 0)
    actions = encode_actions(kind, grid[:, 0], grid[:, 1])
    workers = planner_workers() if workers is None else workers
    per_member = np.stack([member_scores(m, obs, goal.goal_obs, actions, cfg, goal.order, workers)
                           for m in ensemble.members])
    # sorting before summation makes the mean independent of member order
    mean = np.sort(per_member, axis=0).sum(axis=0) / len(ensemble)
    COUNTER["actions"] += len(mean)
    ranked = np.argsort(mean, kind="stable")
    best = int(ranked[0])
    top = tuple((int(i), float(grid[i, 0]), float(grid[i, 1]), float(mean[i])) for i in ranked[:5])
    action = Action("place" if holding else "pick", float(grid[best, 0]), float(grid[best, 1]))
    return PlanDecision(action, best, float(mean[best]), top, len(mean))


def goal_progress(state: SimState, goal: GoalSpec) -> float:
    """Fraction of goal objects that can be simultaneously matched to a
    current object of the same shape within tolerance."""
    k = goal.goal_state.num_objects
    if k == 0:
        return 1.0
    cost = [[0.0 if objects_match(o, g, goal.tolerance) else 1.0 for g in goal.goal_state.objects]
            for o in state.objects]
    if not state.objects:
        return 0.0
    matched = sum(1 for r, c in hungarian_match(cost).pairs if cost[r][c] == 0.0)
    return matched / k


@dataclass
class EpisodeResult:
    success: bool
    steps: int
    progress: float
    trace: list[dict] = field(default_factory=list)


def run_episode(ensemble: Ensemble, start: SimState, goal: GoalSpec, cfg: HeuristicConfig,
                budget: int = 20, options: RenderOptions = RenderOptions(),
                workers: int | None = None) -> EpisodeResult:
    """Closed loop: render, plan one action, execute it, check the goal."""
    if budget < 1:
        raise ValueError("budget must be at least 1")
    state = start
    trace: list[dict] = []
    steps = 0
    while not goal_reached(state, goal) and steps < budget:
        d = plan_step(ensemble, render(state, options), goal, cfg, state.held is not None, workers)
        state = step(state, d.action)
        steps += 1
        trace.append({"step": steps, "kind": d.action.kind, "x": d.action.x, "y": d.action.y,
                      "score": d.score, "top": [list(t) for t in d.top]})
    return EpisodeResult(goal_reached(state, goal), steps, goal_progress(state, goal), trace)


def episode_order(ep: Episode) -> tuple[int, ...]:
    """Objects that never move, by slot, then the rest in placement order."""
    held = ep.in_hand.astype(bool)
    placed = [int(np.flatnonzero(held[t])[0]) for t in range(ep.length)
              if held[t].any() and not held[t + 1].any()]
    moved = set(np.flatnonzero(held.any(axis=0)).tolist())
    still = [k for k in range(ep.num_objects) if k not in moved]
    seen: list[int] = []
    for k in placed[::-1]:
        if k not in seen:
            seen.insert(0, k)
    return tuple(still + seen)


def goals_from_dataset(data: Dataset, tolerance: float = 1.0) -> list[tuple[SimState, GoalSpec]]:
    """(start state, goal) per recorded episode; the goal is the final state
    together with its stored observation and placement order."""
    out = []
    for ep in data:
        goal = GoalSpec(ep.state(ep.length), goal_obs=ep.obs[-1], order=episode_order(ep),
                        tolerance=tolerance)
        out.append((ep.state(0), goal))
    return out
