"""Construction tasks, goal definitions and goal predicates."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .state import SHAPES, WORKSPACE, Action, Block, SimState, step


@dataclass(frozen=True)
class BlueprintItem:
    shape: str
    dx: float
    dy: float
    z: int


@dataclass(frozen=True)
class Task:
    """A structure to build, relative to the position of its first item."""

    name: str
    shapes: tuple[str, ...]
    blueprint: tuple[BlueprintItem, ...]
    style: str = "cubes"  # expert family: "cubes" or "shapes"

    @property
    def num_objects(self) -> int:
        return len(self.shapes)


def _cubes(n: int) -> tuple[str, ...]:
    return ("cube",) * n


TASKS: dict[str, Task] = {t.name: t for t in [
    Task("stack2", _cubes(3), (BlueprintItem("cube", 0, 0, 0), BlueprintItem("cube", 0, 0, 1))),
    Task("stack3", _cubes(3), tuple(BlueprintItem("cube", 0, 0, z) for z in range(3))),
    Task("row3", _cubes(3), tuple(BlueprintItem("cube", 4.0 * i, 0, 0) for i in range(3))),
    Task("stack4", _cubes(4), tuple(BlueprintItem("cube", 0, 0, z) for z in range(4))),
    Task("bridge", ("cube", "cube", "roof"),
         (BlueprintItem("cube", 0, 0, 0), BlueprintItem("cube", 6.0, 0, 0),
          BlueprintItem("roof", 3.0, 0, 1)), style="shapes"),
    Task("tower_triangle", ("cube", "cube", "triangle"),
         (BlueprintItem("cube", 0, 0, 0), BlueprintItem("cube", 0, 0, 1),
          BlueprintItem("triangle", 0, 0, 2)), style="shapes"),
    Task("brick_roof", ("brick", "cube", "roof"),
         (BlueprintItem("brick", 0, 0, 0), BlueprintItem("cube", 0, 0, 1),
          BlueprintItem("roof", 0, 0, 2)), style="shapes"),
]}


def get_task(name: str) -> Task:
    try:
        return TASKS[name]
    except KeyError:
        raise KeyError(f"unknown task {name!r}; known: {sorted(TASKS)}") from None


@dataclass(frozen=True)
class GoalSpec:
    goal_state: SimState
    goal_obs: Optional[np.ndarray] = None
    order: Optional[tuple[int, ...]] = None
    tolerance: float = 1.0

    def __post_init__(self):
        if self.order is not None:
            k = self.goal_state.num_objects
            if len(set(self.order)) != len(self.order) or not all(0 <= i < k for i in self.order):
                raise ValueError("placement order must be a permutation of a subset of slots")


def objects_match(a: Block, b: Block, tol: float) -> bool:
    """Same shape, and either both held or same level within ``tol`` in (x, y)."""
    if a.shape != b.shape:
        return False
    if a.held or b.held:
        return a.held and b.held
    return a.z == b.z and math.hypot(a.x - b.x, a.y - b.y) <= tol


def _bijection(objs: Sequence[Block], targets: Sequence[Block], tol: float) -> bool:
    used = [False] * len(targets)

    def assign(i: int) -> bool:
        if i == len(objs):
            return True
        for j, t in enumerate(targets):
            if not used[j] and objects_match(objs[i], t, tol):
                used[j] = True
                if assign(i + 1):
                    return True
                used[j] = False
        return False

    return assign(0)


def goal_reached(state: SimState, goal: GoalSpec) -> bool:
    """True iff a shape-respecting bijection matches every object to a goal
    object within ``goal.tolerance`` in (x, y) at the same level."""
    if sorted(b.shape for b in state.objects) != sorted(b.shape for b in goal.goal_state.objects):
        return False
    return _bijection(state.objects, goal.goal_state.objects, goal.tolerance)


def blueprint_targets(task: Task, anchor: tuple[float, float]) -> list[tuple[float, float, int]]:
    return [(anchor[0] + it.dx, anchor[1] + it.dy, it.z) for it in task.blueprint]


def structure_solved(state: SimState, task: Task, tol: float = 1.0) -> bool:
    """Location-free check: the blueprint is built somewhere in the workspace."""
    first = task.blueprint[0]
    placed = state.placed()
    for anchor_obj in placed:
        if anchor_obj.shape != first.shape or anchor_obj.z != first.z:
            continue
        anchor = (anchor_obj.x - first.dx, anchor_obj.y - first.dy)
        targets = [Block(it.shape, x, y, z, -1) for it, (x, y, z)
                   in zip(task.blueprint, blueprint_targets(task, anchor))]
        used: set[int] = set()

        def assign(i: int) -> bool:
            if i == len(targets):
                return True
            for o in placed:
                if o.sid not in used and objects_match(o, targets[i], tol):
                    used.add(o.sid)
                    if assign(i + 1):
                        return True
                    used.discard(o.sid)
            return False

        if assign(0):
            return True
    return False


def random_initial_state(shapes: Sequence[str], rng: np.random.Generator, gap: float = 1.0,
                         margin: float = 1.5) -> SimState:
    """All objects on the table at random, non-touching positions."""
    while True:
        blocks: list[Block] = []
        for sid, shape in enumerate(shapes):
            hx, hy = SHAPES[shape]
            for _ in range(200):
                x = rng.uniform(hx + margin, WORKSPACE - hx - margin)
                y = rng.uniform(hy + margin, WORKSPACE - hy - margin)
                cand = Block(shape, float(x), float(y), 0, sid)
                if all(not _near(cand, b, gap) for b in blocks):
                    blocks.append(cand)
                    break
            else:
                break
        if len(blocks) == len(shapes):
            return SimState(tuple(blocks))


def _near(a: Block, b: Block, gap: float) -> bool:
    ax0, ax1, ay0, ay1 = a.footprint()
    bx0, bx1, by0, by1 = b.footprint()
    return ax0 < bx1 + gap and bx0 < ax1 + gap and ay0 < by1 + gap and by0 < ay1 + gap


def optimal_actions(state: SimState, task: Task, anchor_sid: int) -> list[Action] | None:
    """Noise-free construction keeping object ``anchor_sid`` in place.

    Objects are assigned to blueprint items in stable-id order.  Returns None
    if a target falls outside the workspace.
    """
    anchor_obj = state.block(anchor_sid)
    first = task.blueprint[0]
    if anchor_obj.held or anchor_obj.shape != first.shape or anchor_obj.z != first.z:
        return None
    anchor = (anchor_obj.x - first.dx, anchor_obj.y - first.dy)
    targets = blueprint_targets(task, anchor)
    free = [b for b in state.objects if b.sid != anchor_sid]
    actions: list[Action] = []
    for item, (tx, ty, _) in zip(task.blueprint[1:], targets[1:]):
        hx, hy = SHAPES[item.shape]
        if not (hx <= tx <= WORKSPACE - hx and hy <= ty <= WORKSPACE - hy):
            return None
        pick = next((b for b in free if b.shape == item.shape), None)
        if pick is None:
            return None
        free.remove(pick)
        actions += [Action("pick", pick.x, pick.y), Action("place", tx, ty)]
    return actions


def run_actions(state: SimState, actions: Sequence[Action]) -> list[SimState]:
    """States visited while executing ``actions`` with gripper gating; the
    kind of each action is re-derived from the hand state."""
    states = [state]
    for a in actions:
        cur = states[-1]
        kind = "pick" if cur.held is None else "place"
        states.append(step(cur, Action(kind, a.x, a.y)))
    return states


def construct(state: SimState, task: Task, rng: np.random.Generator,
              tolerance: float = 0.25) -> tuple[list[Action], GoalSpec] | None:
    """Pick a feasible anchor (random order) and return the optimal action
    sequence together with the goal it reaches."""
    first = task.blueprint[0]
    candidates = [b.sid for b in state.objects if b.shape == first.shape and not b.held]
    for sid in rng.permutation(candidates):
        actions = optimal_actions(state, task, int(sid))
        if actions is None:
            continue
        final = run_actions(state, actions)[-1]
        if final.held is None and structure_solved(final, task, tol=1e-6):
            order = (int(sid),) + tuple(_placement_order(state, actions))
            return actions, GoalSpec(final, order=order, tolerance=tolerance)
    return None


def _placement_order(state: SimState, actions: Sequence[Action]) -> list[int]:
    order = []
    states = run_actions(state, actions)
    for a, before in zip(actions, states[:-1]):
        if a.kind == "place" and before.held is not None:
            order.append(before.held)
    return order
