"""Offline metrics: probed position error over prediction horizons and
action-sequence ranking against perturbed negatives."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..model import WorldModel, encode_actions
from ..sim import Action, GoalSpec, SimState, goal_reached, step
from ..sim.dataset import Dataset, Episode
from ..sim.state import WORKSPACE

log = logging.getLogger(__name__)

EPSILON_GRID = (0.5, 1.0, 2.0, 4.0, 8.0)


@dataclass(frozen=True)
class RankingConfig:
    epsilon: float = 4.0
    n_negatives: int = 10
    resample_cap: int = 100
    tolerance: float = 0.25  # goal tolerance (cm) a negative must violate

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.n_negatives < 1:
            raise ValueError("need at least one negative")
        if self.resample_cap < 1:
            raise ValueError("resample_cap must be at least 1")


@dataclass(frozen=True)
class RankingRecord:
    ranks: tuple[int, ...]

    def __post_init__(self):
        if any(r < 1 for r in self.ranks):
            raise ValueError("ranks start at 1")

    @property
    def hits_at_1(self) -> float:
        return float(np.mean([r == 1 for r in self.ranks])) if self.ranks else 0.0

    @property
    def mrr(self) -> float:
        return float(np.mean([1.0 / r for r in self.ranks])) if self.ranks else 0.0


class PerturbationError(RuntimeError):
    pass


# -- position error -----------------------------------------------------------

def _episode_actions(ep: Episode) -> np.ndarray:
    return encode_actions(ep.actions[:, 0], ep.actions[:, 1], ep.actions[:, 2])


def rmse_eval(model: WorldModel, data: Dataset, horizon: int) -> np.ndarray:
    """Probe error (cm) at t = 0..horizon after encoding the first state and
    rolling the latents through the recorded actions.

    The error of one object is the Euclidean distance between predicted and
    true centres; entry t is the root of its mean over all objects of all
    trajectories that reach t.  Shorter trajectories are truncated.
    """
    if horizon < 0:
        raise ValueError("horizon must be non-negative")
    sq = np.zeros(horizon + 1)
    count = np.zeros(horizon + 1)
    for ep in data:
        steps = min(horizon, ep.length)
        z = model.encode_np(ep.obs[:1])
        latents = [z]
        if steps:
            acts = _episode_actions(ep)
            latents += model.rollout(z, [acts[t:t + 1] for t in range(steps)])
        pred = model.probe_positions(np.concatenate(latents))
        err = ((pred - ep.positions[:steps + 1]) ** 2).sum(-1)
        sq[:steps + 1] += err.sum(-1)
        count[:steps + 1] += err.shape[-1]
    with np.errstate(invalid="ignore"):
        return np.sqrt(sq / count)


# -- negatives ----------------------------------------------------------------

def polar_offsets(n: int, epsilon: float, rng: np.random.Generator) -> np.ndarray:
    """(n, 2) displacements with radius ~ U[0, epsilon] and angle ~ U[0, 2pi)."""
    r = rng.uniform(0.0, epsilon, n)
    theta = rng.uniform(0.0, 2 * np.pi, n)
    return np.stack([r * np.cos(theta), r * np.sin(theta)], axis=1)


def _simulate(start: SimState, actions: np.ndarray) -> SimState:
    state = start
    for kind, x, y in actions:
        state = step(state, Action("place" if kind > 0.5 else "pick", float(x), float(y)))
    return state


def perturb_sequence(actions: np.ndarray, start: SimState, goal: GoalSpec, cfg: RankingConfig,
                     rng: np.random.Generator, episode: int | str = "?") -> np.ndarray:
    """Displace every action's (x, y) and resample until the sequence no
    longer reaches the goal.  Coordinates are clipped to the workspace, which
    can only shorten a displacement."""
    actions = np.asarray(actions, np.float64)
    for _ in range(cfg.resample_cap):
        out = actions.copy()
        out[:, 1:] = np.clip(out[:, 1:] + polar_offsets(len(out), cfg.epsilon, rng), 0.0, WORKSPACE)
        if not goal_reached(_simulate(start, out), goal):
            return out.astype(np.float32)
    raise PerturbationError(f"episode {episode}: every perturbation within epsilon="
                            f"{cfg.epsilon} still reaches the goal after {cfg.resample_cap} draws")


def episode_goal(ep: Episode, tolerance: float) -> GoalSpec:
    return GoalSpec(ep.state(ep.length), tolerance=tolerance)


def make_negatives(data: Dataset, cfg: RankingConfig, seed: int) -> list[np.ndarray]:
    """Per episode an (n_negatives, T, 3) array of perturbed sequences.
    Episode ``i`` draws from its own generator so results do not depend on
    which other episodes are evaluated."""
    out = []
    for i, ep in enumerate(data):
        rng = np.random.Generator(np.random.PCG64([seed, i]))
        start, goal = ep.state(0), episode_goal(ep, cfg.tolerance)
        if not goal_reached(_simulate(start, ep.actions), goal):
            raise ValueError(f"episode {i}: recorded actions do not reach the final state")
        out.append(np.stack([perturb_sequence(ep.actions, start, goal, cfg, rng, episode=i)
                             for _ in range(cfg.n_negatives)]))
    return out


def save_negatives(path, negatives: Sequence[np.ndarray]) -> None:
    with open(path, "wb") as f:
        np.savez(f, **{f"ep{i}": n for i, n in enumerate(negatives)})


def load_negatives(path) -> list[np.ndarray]:
    with np.load(path) as f:
        return [f[f"ep{i}"] for i in range(len(f.files))]


# -- ranking ------------------------------------------------------------------

def rank_of_correct(distances: Sequence[float]) -> int:
    """Rank of entry 0 among ``distances``; ties count against it."""
    d = np.asarray(distances, np.float64)
    return 1 + int(np.sum(d[1:] <= d[0]))


def sequence_distances(model: WorldModel, start_obs: np.ndarray, sequences: Sequence[np.ndarray],
                       final_obs: np.ndarray) -> np.ndarray:
    """Summed squared slot distance between each sequence's predicted final
    latent and the encoding of ``final_obs``.  Sequences are raw (kind, x, y)
    arrays of equal length."""
    if len(sequences) < 2:
        raise ValueError("need at least two sequences")
    seqs = np.stack([np.asarray(s, np.float32) for s in sequences])
    z0 = model.encode_np(start_obs[None])
    z0 = np.repeat(z0, len(seqs), axis=0)
    acts = encode_actions(seqs[..., 0], seqs[..., 1], seqs[..., 2])
    pred = model.rollout(z0, [acts[:, t] for t in range(seqs.shape[1])])[-1]
    target = model.encode_np(final_obs[None])
    return ((pred - target) ** 2).sum(axis=(1, 2))


def rank_sequences(model: WorldModel, start_obs: np.ndarray, sequences: Sequence[np.ndarray],
                   final_obs: np.ndarray) -> int:
    """Rank (1 = best) of ``sequences[0]``, the correct one."""
    return rank_of_correct(sequence_distances(model, start_obs, sequences, final_obs))


def ranking_eval(model: WorldModel, data: Dataset, negatives: Sequence[np.ndarray]) -> RankingRecord:
    if len(negatives) != len(data):
        raise ValueError("one negative set per episode required")
    ranks = []
    for ep, neg in zip(data, negatives):
        ranks.append(rank_sequences(model, ep.obs[0], [ep.actions, *neg], ep.obs[-1]))
    return RankingRecord(tuple(ranks))


def normalized_auc(grid: Sequence[float], values: Sequence[float]) -> float:
    """Trapezoid area under ``values`` with the grid rescaled to [0, 1]."""
    x = np.asarray(grid, np.float64)
    y = np.asarray(values, np.float64)
    if len(x) == 1:
        return float(y[0])
    x = (x - x[0]) / (x[-1] - x[0])
    return float(np.sum((x[1:] - x[:-1]) * (y[1:] + y[:-1]) / 2))


@dataclass(frozen=True)
class SweepResult:
    grid: tuple[float, ...]
    records: tuple[RankingRecord, ...]

    @property
    def hits(self) -> list[float]:
        return [r.hits_at_1 for r in self.records]

    @property
    def auc(self) -> float:
        return normalized_auc(self.grid, self.hits)

    def rows(self) -> list[tuple[str, float, float]]:
        out = []
        for eps, rec in zip(self.grid, self.records):
            out += [("hits_at_1", eps, rec.hits_at_1), ("mrr", eps, rec.mrr)]
        return out + [("auc", float("nan"), self.auc)]


def sweep_negatives(data: Dataset, grid: Sequence[float], seed: int, n_negatives: int = 10,
                    tolerance: float = 0.25) -> dict[float, list[np.ndarray]]:
    grid = tuple(float(e) for e in grid)
    if not grid or any(e <= 0 for e in grid) or any(b <= a for a, b in zip(grid, grid[1:])):
        raise ValueError("epsilon grid must be positive and strictly ascending")
    return {eps: make_negatives(data, RankingConfig(eps, n_negatives, tolerance=tolerance),
                                seed + 1000 * k)
            for k, eps in enumerate(grid)}


def sweep_epsilon(model: WorldModel, data: Dataset,
                  negatives: dict[float, list[np.ndarray]]) -> SweepResult:
    """Hits@1 for each pre-generated negative set, in ascending epsilon."""
    grid = tuple(sorted(negatives))
    records = tuple(ranking_eval(model, data, negatives[e]) for e in grid)
    result = SweepResult(grid, records)
    for (e0, h0), (e1, h1) in zip(zip(grid, result.hits), zip(grid[1:], result.hits[1:])):
        if h1 < h0:
            log.warning("Hits@1 decreases from %.3f at eps=%g to %.3f at eps=%g", h0, e0, h1, e1)
    return result


def write_table(path, rows: Sequence[tuple[str, float, float]]) -> None:
    with open(path, "w") as f:
        f.write("metric,t_or_eps,value\n")
        for metric, key, value in rows:
            f.write(f"{metric},{key:g},{value:.6f}\n")
