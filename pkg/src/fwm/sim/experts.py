"""Noisy data-collection experts."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .state import FLAT_SHAPES, SHAPES, WORKSPACE, Action, SimState, action_for, is_covered, overlaps
from .tasks import Task, blueprint_targets

CUBES_SCRIPTED_PROB = 0.7
SHAPES_SCRIPTED_PROB = 0.8
ACTION_NOISE = 1.0


@dataclass(frozen=True)
class Blueprint:
    """A task instantiated at an anchor position: what the expert builds."""

    task: Task
    anchor: tuple[float, float]


@dataclass(frozen=True)
class ExpertChoice:
    action: Action
    scripted: bool
    target: tuple[float, float]


def _uniform_xy(rng: np.random.Generator) -> tuple[float, float]:
    return float(rng.uniform(0, WORKSPACE)), float(rng.uniform(0, WORKSPACE))


def _disk_noise(rng: np.random.Generator, radius: float) -> tuple[float, float]:
    r = radius * math.sqrt(rng.random())
    theta = 2 * math.pi * rng.random()
    return r * math.cos(theta), r * math.sin(theta)


def _cubes_scripted(state: SimState, rng: np.random.Generator) -> tuple[float, float] | None:
    uncovered = [b for b in state.placed() if not is_covered(state, b)]
    if state.held is None:
        pool = uncovered
    else:
        pool = [b for b in uncovered if b.shape in FLAT_SHAPES]
    if not pool:
        return None
    b = pool[int(rng.integers(len(pool)))]
    return b.x, b.y


def _blueprint_scripted(state: SimState, bp: Blueprint, rng: np.random.Generator) -> tuple[float, float]:
    targets = blueprint_targets(bp.task, bp.anchor)
    claimed: set[int] = set()
    pending = None
    for item, (tx, ty, tz) in zip(bp.task.blueprint, targets):
        hit = next((b for b in state.placed() if b.sid not in claimed and b.shape == item.shape
                    and b.z == tz and math.hypot(b.x - tx, b.y - ty) <= 1.0), None)
        if hit is None:
            pending = (item, tx, ty)
            break
        claimed.add(hit.sid)
    if pending is None:
        # structure complete: idle action
        return _uniform_xy(rng)
    item, tx, ty = pending
    if state.held is not None:
        if state.block(state.held).shape == item.shape:
            return tx, ty
        return _free_ground_spot(state, state.block(state.held).shape, rng)
    movable = [b for b in state.placed() if b.sid not in claimed and not is_covered(state, b)]
    right = [b for b in movable if b.shape == item.shape]
    pool = right or movable
    if not pool:
        return _uniform_xy(rng)
    b = min(pool, key=lambda o: o.sid)
    return b.x, b.y


def _free_ground_spot(state: SimState, shape: str, rng: np.random.Generator) -> tuple[float, float]:
    hx, hy = SHAPES[shape]
    for _ in range(100):
        x = float(rng.uniform(hx, WORKSPACE - hx))
        y = float(rng.uniform(hy, WORKSPACE - hy))
        fp = (x - hx - 0.5, x + hx + 0.5, y - hy - 0.5, y + hy + 0.5)
        if not any(overlaps(fp, b.footprint()) for b in state.placed()):
            return x, y
    return _uniform_xy(rng)


def expert_choice(state: SimState, blueprint: Blueprint, rng: np.random.Generator,
                  noise: float = ACTION_NOISE) -> ExpertChoice:
    """One expert decision with its provenance.

    Cubes style: with p=0.7 pick a random uncovered block or place onto a
    random uncovered flat block, otherwise act at a uniform random point.
    Shapes style: with p=0.8 follow the blueprint; otherwise pick a random
    object (50%) or a random point (50%), or place at a random point.
    Uniform-disk noise of radius ``noise`` is added to every emitted (x, y).
    """
    if blueprint.task.style == "cubes":
        scripted = rng.random() < CUBES_SCRIPTED_PROB
        target = _cubes_scripted(state, rng) if scripted else None
        if target is None:
            target = _uniform_xy(rng)
    else:
        scripted = rng.random() < SHAPES_SCRIPTED_PROB
        if scripted:
            target = _blueprint_scripted(state, blueprint, rng)
        elif state.held is None and state.placed() and rng.random() < 0.5:
            objs = state.placed()
            b = objs[int(rng.integers(len(objs)))]
            target = (b.x, b.y)
        else:
            target = _uniform_xy(rng)
    dx, dy = _disk_noise(rng, noise)
    x = min(max(target[0] + dx, 0.0), WORKSPACE)
    y = min(max(target[1] + dy, 0.0), WORKSPACE)
    return ExpertChoice(action_for(state, x, y), scripted, (float(target[0]), float(target[1])))


def expert_action(state: SimState, blueprint: Blueprint, rng: np.random.Generator) -> Action:
    return expert_choice(state, blueprint, rng).action
