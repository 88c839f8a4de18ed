"""Ground-truth block world and its deterministic pick/place rules.

Units are centimetres.  The workspace is a 30x30 cm square; every block is
3 cm tall and ``z`` counts stack levels (0 = on the table).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

WORKSPACE = 30.0
BLOCK_HEIGHT = 3.0
CUBE_HALF = 1.5

PICK_RADIUS = 1.0
STABILITY_MARGIN = 1.0
SLIDE_DISTANCE = 3.0

# half extents (x, y); bricks and roofs are long along x
SHAPES: dict[str, tuple[float, float]] = {
    "cube": (1.5, 1.5),
    "brick": (4.5, 1.5),
    "triangle": (1.5, 1.5),
    "roof": (4.5, 1.5),
}
FLAT_SHAPES = frozenset({"cube", "brick"})
SHAPE_CODES = {name: i for i, name in enumerate(SHAPES)}
CODE_SHAPES = {i: name for name, i in SHAPE_CODES.items()}

_EPS = 1e-9


@dataclass(frozen=True)
class Block:
    shape: str
    x: Optional[float]
    y: Optional[float]
    z: Optional[int]
    sid: int

    @property
    def half(self) -> tuple[float, float]:
        return SHAPES[self.shape]

    @property
    def held(self) -> bool:
        return self.z is None

    def footprint(self, x: float | None = None, y: float | None = None) -> tuple[float, float, float, float]:
        hx, hy = self.half
        cx = self.x if x is None else x
        cy = self.y if y is None else y
        return cx - hx, cx + hx, cy - hy, cy + hy

    def position_cm(self) -> tuple[float, float, float]:
        """Centre of the block in cm; z is the centre height."""
        return self.x, self.y, self.z * BLOCK_HEIGHT + BLOCK_HEIGHT / 2


@dataclass(frozen=True)
class SimState:
    objects: tuple[Block, ...]
    held: Optional[int] = None

    def __post_init__(self):
        ids = [b.sid for b in self.objects]
        if ids != sorted(ids) or len(set(ids)) != len(ids):
            raise ValueError("objects must be sorted by unique stable_id")
        held = [b.sid for b in self.objects if b.held]
        if held != ([] if self.held is None else [self.held]):
            raise ValueError("held flag inconsistent with object poses")

    @property
    def num_objects(self) -> int:
        return len(self.objects)

    def block(self, sid: int) -> Block:
        for b in self.objects:
            if b.sid == sid:
                return b
        raise KeyError(sid)

    def placed(self) -> list[Block]:
        return [b for b in self.objects if not b.held]

    def with_block(self, new: Block, held: Optional[int]) -> "SimState":
        objs = tuple(new if b.sid == new.sid else b for b in self.objects)
        return SimState(objs, held)


@dataclass(frozen=True)
class Action:
    kind: str  # "pick" | "place"
    x: float
    y: float

    def __post_init__(self):
        if self.kind not in ("pick", "place"):
            raise ValueError(f"unknown action kind {self.kind!r}")


def action_for(state: SimState, x: float, y: float) -> Action:
    """Gripper-gated primitive: empty hand picks, full hand places."""
    return Action("pick" if state.held is None else "place", float(x), float(y))


def overlaps(a: tuple[float, float, float, float], b: tuple[float, float, float, float]) -> bool:
    return a[0] < b[1] - _EPS and b[0] < a[1] - _EPS and a[2] < b[3] - _EPS and b[2] < a[3] - _EPS


def is_covered(state: SimState, block: Block) -> bool:
    fp = block.footprint()
    return any(o.z == block.z + 1 and overlaps(fp, o.footprint()) for o in state.placed())


def _clamp(v: float, lo: float, hi: float) -> float:
    return min(max(v, lo), hi)


def step(state: SimState, action: Action) -> SimState:
    """Pure transition function; actions that do not apply are no-ops."""
    if action.kind == "pick":
        return _pick(state, action.x, action.y) if state.held is None else state
    return _place(state, action.x, action.y) if state.held is not None else state


def _pick(state: SimState, x: float, y: float) -> SimState:
    best = None
    for b in state.placed():
        d = math.hypot(b.x - x, b.y - y)
        if d <= PICK_RADIUS + _EPS and not is_covered(state, b):
            key = (-b.z, d, b.sid)
            if best is None or key < best[0]:
                best = (key, b)
    if best is None:
        return state
    b = best[1]
    return state.with_block(replace(b, x=None, y=None, z=None), held=b.sid)


def _admissible_offset(center: float, half: float, lo: float, hi: float) -> float:
    # distance from `center` to the set of centres whose extent fits in [lo, hi]
    a, b = lo + half, hi - half
    if a > b:
        a = b = (lo + hi) / 2
    if center < a:
        return a - center
    if center > b:
        return center - b
    return 0.0


def _place(state: SimState, x: float, y: float) -> SimState:
    held = state.block(state.held)
    hx, hy = held.half
    x = _clamp(x, hx, WORKSPACE - hx)
    y = _clamp(y, hy, WORKSPACE - hy)
    fp = held.footprint(x, y)
    under = [o for o in state.placed() if overlaps(fp, o.footprint())]
    if not under:
        return state.with_block(replace(held, x=x, y=y, z=0), held=None)

    top = max(o.z for o in under)
    supports = [o for o in under if o.z == top]
    ux0 = min(o.footprint()[0] for o in supports)
    ux1 = max(o.footprint()[1] for o in supports)
    uy0 = min(o.footprint()[2] for o in supports)
    uy1 = max(o.footprint()[3] for o in supports)
    if all(o.shape in FLAT_SHAPES for o in supports):
        off = math.hypot(_admissible_offset(x, hx, ux0, ux1), _admissible_offset(y, hy, uy0, uy1))
        if off <= STABILITY_MARGIN + _EPS:
            return state.with_block(replace(held, x=x, y=y, z=top + 1), held=None)

    landing = _slide_landing(state, held, y, ux0, ux1)
    if landing is None:
        return state
    return state.with_block(replace(held, x=landing, y=y, z=0), held=None)


def _slide_landing(state: SimState, held: Block, y: float, ux0: float, ux1: float) -> float | None:
    """Ground x for a block that slid off a support spanning [ux0, ux1].

    Lands ``SLIDE_DISTANCE`` past the +x support edge (for a cube-wide block),
    clamped to the workspace; if that spot is taken, scans outward in 0.5 cm
    steps, first along +x, then on the -x side.
    """
    hx, _ = held.half
    extra = SLIDE_DISTANCE - CUBE_HALF
    ground = [o.footprint() for o in state.placed() if o.z == 0]

    def free(cx: float) -> bool:
        fp = held.footprint(cx, y)
        return not any(overlaps(fp, g) for g in ground)

    start = _clamp(ux1 + hx + extra, hx, WORKSPACE - hx)
    cx = start
    while cx <= WORKSPACE - hx + _EPS:
        if free(cx):
            return cx
        cx += 0.5
    cx = _clamp(ux0 - hx - extra, hx, WORKSPACE - hx)
    while cx >= hx - _EPS:
        if free(cx):
            return cx
        cx -= 0.5
    return None


def ground_truth_positions(state: SimState, hand_position=(15.0, 15.0, 30.0)) -> list[tuple[float, float, float]]:
    """(x, y, z) centre per slot in cm; held blocks report a fixed hand position."""
    return [tuple(hand_position) if b.held else b.position_cm() for b in state.objects]


def check_invariants(state: SimState) -> None:
    """Raise AssertionError if the state violates the world's structural rules."""
    placed = state.placed()
    for i, a in enumerate(placed):
        hx, hy = a.half
        assert hx - _EPS <= a.x <= WORKSPACE - hx + _EPS and hy - _EPS <= a.y <= WORKSPACE - hy + _EPS, a
        for b in placed[i + 1:]:
            if a.z == b.z:
                assert not overlaps(a.footprint(), b.footprint()), (a, b)
        if a.z > 0:
            below = [o for o in placed if o.z == a.z - 1 and overlaps(a.footprint(), o.footprint())]
            assert below, f"{a} floats"
            assert all(o.shape in FLAT_SHAPES for o in below), f"{a} rests on a slanted top"
