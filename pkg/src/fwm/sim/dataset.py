"""Episode generation and the little-endian binary dataset file.

Layout::

    header  = b"FWMD", u32 version, u32 K, u32 channels, u32 H, u32 W, u32 episodes
    episode = u64 record length (bytes after this field), u32 T, then
              obs       f32 (T+1, K, C, H, W)
              actions   f32 (T, 3)          kind (0 pick, 1 place), x, y
              positions f32 (T+1, K, 3)     cm; held objects report the hand position
              in_hand   u8  (T+1, K)
              goal      u8  (T+1,)
              shapes    u8  (K,)            shape codes

Every episode draws from its own PCG64 generator seeded with
``(seed, episode_index, attempt)`` so episodes are independent and the output
is identical across platforms.
"""
from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .experts import Blueprint, expert_choice
from .render import CHANNELS, CROP_SIZE, RenderOptions, render
from .state import BLOCK_HEIGHT, CODE_SHAPES, SHAPE_CODES, Action, Block, SimState, ground_truth_positions, step
from .tasks import Task, construct, get_task, goal_reached, random_initial_state, structure_solved

MAGIC = b"FWMD"
VERSION = 1
_HEADER = struct.Struct("<4s6I")
_ATTEMPT_CAP = 1000


@dataclass(frozen=True)
class DataGenConfig:
    """``kind="train"`` writes noisy expert episodes of fixed length until
    ``transitions`` is reached; ``kind="eval"`` writes ``episodes`` optimal
    goal-reaching trajectories."""

    task: str = "stack3"
    kind: str = "train"
    transitions: int = 20_000
    episodes: int = 100
    episode_length: int = 10
    seed: int = 0
    held_out: tuple[str, ...] = ("row3",)
    goal_tolerance: float = 0.25
    distinct_colors: bool = False

    def __post_init__(self):
        if self.kind not in ("train", "eval"):
            raise ValueError(f"kind must be 'train' or 'eval', got {self.kind!r}")
        if self.episode_length < 1:
            raise ValueError("episode_length must be >= 1")
        if self.transitions < 1 or self.episodes < 1:
            raise ValueError("transitions and episodes must be positive")
        get_task(self.task)
        for name in self.held_out:
            get_task(name)


@dataclass
class Episode:
    obs: np.ndarray
    actions: np.ndarray
    positions: np.ndarray
    in_hand: np.ndarray
    goal: np.ndarray
    shapes: np.ndarray

    def __post_init__(self):
        t = self.actions.shape[0]
        if t < 1:
            raise ValueError("zero-length episode")
        k = self.shapes.shape[0]
        if (self.obs.shape[:2] != (t + 1, k) or self.positions.shape != (t + 1, k, 3)
                or self.in_hand.shape != (t + 1, k) or self.goal.shape != (t + 1,)):
            raise ValueError("episode arrays have inconsistent shapes")

    @property
    def length(self) -> int:
        return self.actions.shape[0]

    @property
    def num_objects(self) -> int:
        return self.shapes.shape[0]

    def action(self, t: int) -> Action:
        kind, x, y = self.actions[t]
        return Action("place" if kind > 0.5 else "pick", float(x), float(y))

    def state(self, t: int) -> SimState:
        """Rebuild the ground-truth state at step ``t`` from stored labels."""
        blocks, held = [], None
        for sid in range(self.num_objects):
            shape = CODE_SHAPES[int(self.shapes[sid])]
            if self.in_hand[t, sid]:
                blocks.append(Block(shape, None, None, None, sid))
                held = sid
            else:
                x, y, zc = (float(v) for v in self.positions[t, sid])
                level = int(round((zc - BLOCK_HEIGHT / 2) / BLOCK_HEIGHT))
                blocks.append(Block(shape, x, y, level, sid))
        return SimState(tuple(blocks), held)


def episode_rng(seed: int, index: int, attempt: int = 0) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64([seed, index, attempt]))


def record_episode(states: Sequence[SimState], actions: Sequence[Action], goal_flags: Sequence[bool],
                   options: RenderOptions = RenderOptions()) -> Episode:
    first = states[0]
    return Episode(
        obs=np.stack([render(s, options) for s in states]),
        actions=np.array([(0.0 if a.kind == "pick" else 1.0, a.x, a.y) for a in actions],
                         np.float32).reshape(-1, 3),
        positions=np.array([ground_truth_positions(s) for s in states], np.float32),
        in_hand=np.array([[b.held for b in s.objects] for s in states], np.uint8),
        goal=np.array(goal_flags, np.uint8),
        shapes=np.array([SHAPE_CODES[b.shape] for b in first.objects], np.uint8),
    )


def _train_episode(cfg: DataGenConfig, task: Task, held_out: Sequence[Task],
                   rng: np.random.Generator):
    state = random_initial_state(task.shapes, rng)
    first = next(b for b in state.objects if b.shape == task.blueprint[0].shape)
    blueprint = Blueprint(task, (first.x - task.blueprint[0].dx, first.y - task.blueprint[0].dy))
    states, actions = [state], []
    for _ in range(cfg.episode_length):
        a = expert_choice(state, blueprint, rng).action
        state = step(state, a)
        if any(structure_solved(state, h) for h in held_out):
            return None
        actions.append(a)
        states.append(state)
    flags = [structure_solved(s, task) for s in states]
    return states, actions, flags


def _eval_episode(cfg: DataGenConfig, task: Task, rng: np.random.Generator):
    state = random_initial_state(task.shapes, rng)
    built = construct(state, task, rng, tolerance=cfg.goal_tolerance)
    if built is None:
        return None
    actions, goal = built
    states = [state]
    for a in actions:
        states.append(step(states[-1], a))
    flags = [goal_reached(s, goal) for s in states]
    if not flags[-1]:
        return None
    return states, actions, flags


def iter_episodes(cfg: DataGenConfig) -> Iterator[Episode]:
    task = get_task(cfg.task)
    held_out = [get_task(n) for n in cfg.held_out if n != cfg.task]
    options = RenderOptions(cfg.distinct_colors)
    if cfg.kind == "train":
        count = -(-cfg.transitions // cfg.episode_length)
    else:
        count = cfg.episodes
    for index in range(count):
        for attempt in range(_ATTEMPT_CAP):
            rng = episode_rng(cfg.seed, index, attempt)
            out = (_train_episode(cfg, task, held_out, rng) if cfg.kind == "train"
                   else _eval_episode(cfg, task, rng))
            if out is not None:
                yield record_episode(*out, options=options)
                break
        else:
            raise RuntimeError(f"episode {index}: no valid episode in {_ATTEMPT_CAP} attempts")


def _episode_bytes(ep: Episode) -> bytes:
    body = [struct.pack("<I", ep.length)]
    for arr, dt in ((ep.obs, "<f4"), (ep.actions, "<f4"), (ep.positions, "<f4"),
                    (ep.in_hand, "u1"), (ep.goal, "u1"), (ep.shapes, "u1")):
        body.append(np.ascontiguousarray(arr, dtype=dt).tobytes())
    payload = b"".join(body)
    return struct.pack("<Q", len(payload)) + payload


def write_dataset(path: str | Path, episodes: Iterable[Episode]) -> int:
    """Stream episodes to ``path``; returns the episode count."""
    n, k, obs_shape = 0, 0, (CHANNELS, CROP_SIZE, CROP_SIZE)
    with open(path, "wb") as f:
        f.write(_HEADER.pack(MAGIC, VERSION, 0, *obs_shape, 0))
        for ep in episodes:
            if n == 0:
                k, obs_shape = ep.num_objects, ep.obs.shape[2:]
            elif ep.num_objects != k or ep.obs.shape[2:] != obs_shape:
                raise ValueError("all episodes in a file must share K and observation shape")
            f.write(_episode_bytes(ep))
            n += 1
        if n == 0:
            raise ValueError("dataset must contain at least one episode")
        f.seek(0)
        f.write(_HEADER.pack(MAGIC, VERSION, k, *obs_shape, n))
    return n


def generate_dataset(cfg: DataGenConfig, path: str | Path) -> Path:
    """Generate episodes for ``cfg`` and write them to ``path``."""
    path = Path(path)
    if path.parent and not path.parent.exists():
        raise FileNotFoundError(f"output directory does not exist: {path.parent}")
    write_dataset(path, iter_episodes(cfg))
    return path


class Dataset:
    """Read-only memory-mapped view of a dataset file."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._mm = np.memmap(self.path, dtype=np.uint8, mode="r")
        if self._mm.size < _HEADER.size:
            raise ValueError(f"{self.path}: truncated header")
        magic, version, k, c, h, w, n = _HEADER.unpack(bytes(self._mm[:_HEADER.size]))
        if magic != MAGIC:
            raise ValueError(f"{self.path}: not a dataset file (bad magic {magic!r})")
        if version != VERSION:
            raise ValueError(f"{self.path}: unsupported dataset version {version}")
        self.num_objects, self.obs_shape = k, (c, h, w)
        self._episodes: list[Episode] = []
        off = _HEADER.size
        for _ in range(n):
            (length,) = struct.unpack("<Q", bytes(self._mm[off:off + 8]))
            off += 8
            self._episodes.append(self._read_episode(off))
            off += length
        if off != self._mm.size:
            raise ValueError(f"{self.path}: trailing or missing bytes")

    def _read_episode(self, off: int) -> Episode:
        (t,) = struct.unpack("<I", bytes(self._mm[off:off + 4]))
        off += 4
        k, (c, h, w) = self.num_objects, self.obs_shape
        arrays = []
        for shape, dt in (((t + 1, k, c, h, w), "<f4"), ((t, 3), "<f4"), ((t + 1, k, 3), "<f4"),
                          ((t + 1, k), "u1"), ((t + 1,), "u1"), ((k,), "u1")):
            arr = np.ndarray(shape, dtype=dt, buffer=self._mm, offset=off)
            arrays.append(arr)
            off += arr.nbytes
        return Episode(*arrays)

    def __len__(self) -> int:
        return len(self._episodes)

    def __getitem__(self, i: int) -> Episode:
        return self._episodes[i]

    def __iter__(self) -> Iterator[Episode]:
        return iter(self._episodes)

    @property
    def num_transitions(self) -> int:
        return sum(ep.length for ep in self._episodes)

    def transitions(self) -> tuple[np.ndarray, np.ndarray]:
        """(episode, t) index pairs of every transition, in file order."""
        eps = np.concatenate([np.full(ep.length, i) for i, ep in enumerate(self._episodes)])
        ts = np.concatenate([np.arange(ep.length) for ep in self._episodes])
        return eps, ts


def file_sha256(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()

