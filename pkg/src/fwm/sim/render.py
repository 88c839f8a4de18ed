"""Rasterise a SimState into per-object factored observations.

Two orthographic side cameras produce 90x90 RGB images: the front view looks
along +y (image columns follow x) and the side view looks along +x (columns
follow y).  Each object gets a crop of RGB plus four full-image coordinate
grids around its visible bounding box, resized to 18x18.  Channel layout per
slot: [front RGB, front grids(4), side RGB, side grids(4)].
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .state import BLOCK_HEIGHT, FLAT_SHAPES, WORKSPACE, SimState

IMAGE_SIZE = 90
PX_PER_CM = IMAGE_SIZE / WORKSPACE
GROUND_ROW = 81  # image row of the table surface
CROP_SIZE = 18
CROP_PAD = 4
CHANNELS = 14

RED = (0.85, 0.1, 0.1)
FLOOR = (0.35, 0.35, 0.35)
PALETTE = [RED, (0.1, 0.7, 0.15), (0.15, 0.3, 0.9), (0.9, 0.8, 0.1),
           (0.7, 0.2, 0.8), (0.1, 0.8, 0.8), (0.95, 0.5, 0.1), (0.6, 0.6, 0.6)]

_cols = np.arange(IMAGE_SIZE)
_rows = np.arange(IMAGE_SIZE)
_lin = -1.0 + 2.0 * np.arange(IMAGE_SIZE) / (IMAGE_SIZE - 1)
# left-to-right, right-to-left, top-to-bottom, bottom-to-top
COORD_GRIDS = np.stack([
    np.broadcast_to(_lin[None, :], (IMAGE_SIZE, IMAGE_SIZE)),
    np.broadcast_to(-_lin[None, :], (IMAGE_SIZE, IMAGE_SIZE)),
    np.broadcast_to(_lin[:, None], (IMAGE_SIZE, IMAGE_SIZE)),
    np.broadcast_to(-_lin[:, None], (IMAGE_SIZE, IMAGE_SIZE)),
]).astype(np.float32)


@dataclass(frozen=True)
class RenderOptions:
    distinct_colors: bool = False

    def color(self, slot: int) -> tuple[float, float, float]:
        return PALETTE[slot % len(PALETTE)] if self.distinct_colors else RED


def _coverage(block, view: int) -> np.ndarray:
    """Boolean mask of pixels covered by the block's silhouette in one view."""
    x0, x1, y0, y1 = block.footprint()
    lo, hi = (x0, x1) if view == 0 else (y0, y1)
    zb = block.z * BLOCK_HEIGHT
    u = (_cols + 0.5) / PX_PER_CM                     # horizontal cm per column
    h = (GROUND_ROW - (_rows + 0.5)) / PX_PER_CM      # height cm per row
    in_u = (u >= lo) & (u < hi)
    if view == 1 and block.shape not in FLAT_SHAPES:
        # ridge runs along x, so the slanted profile shows in the side view
        centre, half = (lo + hi) / 2, (hi - lo) / 2
        top = zb + BLOCK_HEIGHT * np.clip(1.0 - np.abs(u - centre) / half, 0.0, 1.0)
        return in_u[None, :] & (h[:, None] >= zb) & (h[:, None] < top[None, :])
    in_h = (h >= zb) & (h < zb + BLOCK_HEIGHT)
    return in_h[:, None] & in_u[None, :]


def _depth(block, view: int) -> float:
    x0, _, y0, _ = block.footprint()
    return y0 if view == 0 else x0


def _outline(mask: np.ndarray) -> np.ndarray:
    inner = mask.copy()
    inner[1:, :] &= mask[:-1, :]
    inner[:-1, :] &= mask[1:, :]
    inner[:, 1:] &= mask[:, :-1]
    inner[:, :-1] &= mask[:, 1:]
    return mask & ~inner


def render_views(state: SimState, options: RenderOptions = RenderOptions()):
    """Return (images, visible_masks, coverage_masks) for the two views.

    images: (2, 3, 90, 90); masks: (2, K, 90, 90) bool.  Held blocks are not drawn.
    """
    k = state.num_objects
    images = np.zeros((2, 3, IMAGE_SIZE, IMAGE_SIZE), np.float32)
    images[:, :, GROUND_ROW:, :] = np.asarray(FLOOR, np.float32)[None, :, None, None]
    visible = np.zeros((2, k, IMAGE_SIZE, IMAGE_SIZE), bool)
    coverage = np.zeros_like(visible)
    for view in range(2):
        depth = np.full((IMAGE_SIZE, IMAGE_SIZE), np.inf)
        owner = np.full((IMAGE_SIZE, IMAGE_SIZE), -1)
        for slot, b in enumerate(state.objects):
            if b.held:
                continue
            cov = _coverage(b, view)
            coverage[view, slot] = cov
            d = _depth(b, view)
            win = cov & (d < depth)
            depth[win] = d
            owner[win] = slot
        for slot, b in enumerate(state.objects):
            mask = owner == slot
            visible[view, slot] = mask
            if not mask.any():
                continue
            color = np.asarray(options.color(slot), np.float32)
            edge = _outline(coverage[view, slot]) & mask
            images[view][:, mask] = color[:, None]
            images[view][:, edge] = (0.55 * color)[:, None]
    return images, visible, coverage


def mask_box(mask: np.ndarray) -> tuple[int, int, int, int] | None:
    """Inclusive (r0, r1, c0, c1) bounding box of a mask, or None if empty."""
    rows = np.flatnonzero(mask.any(axis=1))
    if rows.size == 0:
        return None
    cols = np.flatnonzero(mask.any(axis=0))
    return int(rows[0]), int(rows[-1]), int(cols[0]), int(cols[-1])


def crop_box(box: tuple[int, int, int, int]) -> tuple[int, int, int, int]:
    """Pad a tight box by CROP_PAD px, grow it to at least CROP_SIZE and shift it
    inside the image.  Returns half-open (r0, r1, c0, c1)."""
    r0, r1, c0, c1 = box
    r0, r1, c0, c1 = r0 - CROP_PAD, r1 + 1 + CROP_PAD, c0 - CROP_PAD, c1 + 1 + CROP_PAD

    def grow(lo: int, hi: int) -> tuple[int, int]:
        short = CROP_SIZE - (hi - lo)
        if short > 0:
            lo -= short // 2
            hi += short - short // 2
        if hi - lo > IMAGE_SIZE:
            return 0, IMAGE_SIZE
        if lo < 0:
            lo, hi = 0, hi - lo
        if hi > IMAGE_SIZE:
            lo, hi = lo - (hi - IMAGE_SIZE), IMAGE_SIZE
        return lo, hi

    r0, r1 = grow(r0, r1)
    c0, c1 = grow(c0, c1)
    return r0, r1, c0, c1


def resize_nearest(img: np.ndarray, size: int = CROP_SIZE) -> np.ndarray:
    """Nearest-neighbour resize of a (C, H, W) array to (C, size, size)."""
    _, h, w = img.shape
    ri = np.minimum(((np.arange(size) + 0.5) * h / size).astype(int), h - 1)
    ci = np.minimum(((np.arange(size) + 0.5) * w / size).astype(int), w - 1)
    return img[:, ri[:, None], ci[None, :]]


def hand_images(shape: str, color=RED) -> np.ndarray:
    """Two canonical 3x18x18 gripper images (front, side) holding ``shape``."""
    out = np.zeros((2, 3, CROP_SIZE, CROP_SIZE), np.float32)
    grey = np.float32(0.6)
    c = np.asarray(color, np.float32)[:, None]
    # front: two vertical fingers, block between them
    out[0, :, 2:16, 0:3] = grey
    out[0, :, 2:16, 15:18] = grey
    # side: palm bar on top, block below
    out[1, :, 0:3, 2:16] = grey
    wide = shape in ("brick", "roof")
    rr, cc = np.mgrid[0:CROP_SIZE, 0:CROP_SIZE]
    for view in range(2):
        span = (4, 14) if (wide and view == 0) else (6, 12)
        body = (rr >= 6) & (rr < 13) & (cc >= span[0]) & (cc < span[1])
        if shape not in FLAT_SHAPES and view == 1:
            mid = (span[0] + span[1] - 1) / 2
            body &= (rr - 6) >= np.abs(cc - mid) * 7 / ((span[1] - span[0]) / 2) - 1
        out[view][:, body] = c
    return out


def render(state: SimState, options: RenderOptions = RenderOptions()) -> np.ndarray:
    """Factored observation, float32 array of shape (K, 14, 18, 18)."""
    images, visible, coverage = render_views(state, options)
    full = [np.concatenate([images[v], COORD_GRIDS], axis=0) for v in range(2)]
    out = np.zeros((state.num_objects, CHANNELS, CROP_SIZE, CROP_SIZE), np.float32)
    for slot, b in enumerate(state.objects):
        if b.held:
            hands = hand_images(b.shape, options.color(slot))
            out[slot, 0:3] = hands[0]
            out[slot, 7:10] = hands[1]
            continue
        for view in range(2):
            box = mask_box(visible[view, slot])
            if box is None:
                box = mask_box(coverage[view, slot])
            if box is None:
                box = (GROUND_ROW - 1, GROUND_ROW - 1, 0, 0)
            r0, r1, c0, c1 = crop_box(box)
            out[slot, 7 * view:7 * view + 7] = resize_nearest(full[view][:, r0:r1, c0:c1])
    return out
