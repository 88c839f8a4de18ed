"""Heuristic distances between a predicted latent state and a goal latent.

The ``score_*`` functions work on a batch of N predicted states at once; the
``heuristic_*`` wrappers evaluate a single (state, action) pair with a model.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..model import WorldModel
from .matching import batched_match

MODES = ("pp", "seq", "l2")


@dataclass(frozen=True)
class HeuristicConfig:
    delta: float = 0.175  # threshold on squared latent distance
    grid: int = 100
    mode: str = "pp"

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError("delta must be positive")
        if self.grid < 1:
            raise ValueError("grid must have at least one point per axis")
        if self.mode not in MODES:
            raise ValueError(f"unknown heuristic {self.mode!r}; expected one of {MODES}")


def _matched_distances(z_pred: np.ndarray, goal: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Squared distances of matched pairs (N, M) and the predicted slot of each."""
    d = ((z_pred[:, :, None, :].astype(np.float64) - goal[None, None].astype(np.float64)) ** 2).sum(-1)
    rows, cols, _ = batched_match(d)
    n = np.arange(len(d))[:, None]
    return d[n, rows, cols], rows


def score_pp(z_pred: np.ndarray, in_hand: np.ndarray, goal: np.ndarray, delta: float) -> np.ndarray:
    """Pick-and-place heuristic: matched pairs within ``delta`` add their
    distance, objects predicted in hand add 1, the rest add 2."""
    d, rows = _matched_distances(z_pred, goal)
    held = np.take_along_axis(np.asarray(in_hand, bool), rows, 1)
    per = np.where(d < delta, d, np.where(held, 1.0, 2.0))
    return per.sum(axis=1)


def score_seq(z_pred: np.ndarray, in_hand: np.ndarray, goal: np.ndarray, order: Sequence[int] | None,
              delta: float) -> np.ndarray:
    """Sequential variant: slots are visited in placement order without
    matching.  Holding an object while an earlier one is still unplaced adds
    3 instead of 1."""
    if order is None:
        raise ValueError("the sequential heuristic needs a placement order")
    z_pred = np.asarray(z_pred, np.float64)
    goal = np.asarray(goal, np.float64)
    held = np.asarray(in_hand, bool)
    h = np.zeros(len(z_pred))
    f = np.ones(len(z_pred), bool)
    for k in order:
        d = ((z_pred[:, k] - goal[k]) ** 2).sum(-1)
        close = d < delta
        hand = ~close & held[:, k]
        h += np.where(close, d, 0.0) + np.where(hand, np.where(f, 1.0, 3.0), 0.0) \
            + np.where(~close & ~held[:, k], 2.0, 0.0)
        f &= close
    return h


def score_l2(z_pred: np.ndarray, goal: np.ndarray) -> np.ndarray:
    """Sum of matched squared distances."""
    d, _ = _matched_distances(z_pred, goal)
    return d.sum(axis=1)


def score(mode: str, z_pred: np.ndarray, in_hand: np.ndarray | None, goal: np.ndarray,
          order: Sequence[int] | None, delta: float) -> np.ndarray:
    if mode == "pp":
        return score_pp(z_pred, in_hand, goal, delta)
    if mode == "seq":
        return score_seq(z_pred, in_hand, goal, order, delta)
    if mode == "l2":
        return score_l2(z_pred, goal)
    raise ValueError(f"unknown heuristic {mode!r}")


def _predict(member: WorldModel, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    return member.transition_np(np.asarray(z, np.float32)[None], np.asarray(a, np.float32)[None])


def heuristic_pp(z: np.ndarray, a: np.ndarray, goal: np.ndarray, member: WorldModel,
                 cfg: HeuristicConfig = HeuristicConfig()) -> float:
    pred = _predict(member, z, a)
    return float(score_pp(pred, member.inhand_predict(pred), goal, cfg.delta)[0])


def heuristic_seq(z: np.ndarray, a: np.ndarray, goal: np.ndarray, order: Sequence[int] | None,
                  member: WorldModel, cfg: HeuristicConfig = HeuristicConfig(mode="seq")) -> float:
    pred = _predict(member, z, a)
    return float(score_seq(pred, member.inhand_predict(pred), goal, order, cfg.delta)[0])


def heuristic_l2(z: np.ndarray, a: np.ndarray, goal: np.ndarray, member: WorldModel) -> float:
    return float(score_l2(_predict(member, z, a), goal)[0])
