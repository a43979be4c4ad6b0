"""Semantic spatial memory with windowed egocentric reads and writes.

The memory is an H x W x (K+3) float array in [0,1]: K per-class probability
channels (small objects and receptacles share the class list), then free
space (initialized to the 0.5 prior), coverage, and navigation intent. All
learnable updates flow through an odd-sized egocentric window (forward
offsets 0..s-1, lateral -s//2..+s//2, rotated so the heading is the forward
axis); a single update can only ever change cells inside that footprint.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .world import AgentState, CLASS_INDEX, NUM_CLASSES, RECEPTACLE_CLASSES, SMALL_CLASSES
from .geometry import HEADING_VECS

FREE = NUM_CLASSES
COVERAGE = NUM_CLASSES + 1
INTENT = NUM_CLASSES + 2
NUM_CHANNELS = NUM_CLASSES + 3

_SMALL_CHANNELS = tuple(CLASS_INDEX[c] for c in SMALL_CLASSES)


@dataclass(frozen=True)
class MemoryConfig:
    alpha: float = 0.5  # moving-average fusion rate
    tau: float = 0.5  # readout threshold
    window: int = 5  # odd egocentric window size

    def __post_init__(self):
        if self.window % 2 != 1 or self.window < 1:
            raise ValueError("window must be odd and positive")
        if not (0.0 < self.alpha <= 1.0):
            raise ValueError("alpha must be in (0, 1]")


class SpatialMemory:
    def __init__(self, width: int, height: int, config: MemoryConfig = MemoryConfig()):
        self.width = width
        self.height = height
        self.config = config
        self.grid = np.zeros((height, width, NUM_CHANNELS), dtype=np.float64)
        self.grid[:, :, FREE] = 0.5

    def copy(self) -> "SpatialMemory":
        m = SpatialMemory(self.width, self.height, self.config)
        m.grid = self.grid.copy()
        return m

    def in_bounds(self, cell: tuple[int, int]) -> bool:
        return 0 <= cell[0] < self.width and 0 <= cell[1] < self.height

    def window_cells(self, pose: AgentState) -> list[tuple[int, int, tuple[int, int]]]:
        """(row, col, world cell) triples of the window, row=forward offset,
        col=lateral+half. World cells may be out of bounds."""
        s = self.config.window
        half = s // 2
        fx, fy = HEADING_VECS[pose.heading]
        rx, ry = HEADING_VECS[(pose.heading + 1) % 4]
        out = []
        for f in range(s):
            for li, lat in enumerate(range(-half, half + 1)):
                c = (pose.cell[0] + f * fx + lat * rx, pose.cell[1] + f * fy + lat * ry)
                out.append((f, li, c))
        return out

    def read_window(self, pose: AgentState) -> np.ndarray:
        """s x s x C egocentric patch; out-of-bounds cells read as zeros
        (including free=0, i.e. known-solid padding)."""
        s = self.config.window
        win = np.zeros((s, s, NUM_CHANNELS), dtype=np.float64)
        for f, li, (x, y) in self.window_cells(pose):
            if 0 <= x < self.width and 0 <= y < self.height:
                win[f, li] = self.grid[y, x]
        return win

    def write_window(self, pose: AgentState, values: np.ndarray) -> None:
        """Write the window back; only in-bounds footprint cells change and
        values clamp to [0,1]."""
        s = self.config.window
        if values.shape != (s, s, NUM_CHANNELS):
            raise ValueError(f"window shape {values.shape} != {(s, s, NUM_CHANNELS)}")
        for f, li, (x, y) in self.window_cells(pose):
            if 0 <= x < self.width and 0 <= y < self.height:
                self.grid[y, x] = np.clip(values[f, li], 0.0, 1.0)

    def integrate(self, detections) -> list[tuple[int, int]]:
        """Fuse one detector pass through the emitting pose's window.

        Observation cells outside the window footprint are dropped (the write
        locality contract). Free-space and object channels move by
        v' = (1-alpha) v + alpha * target; object absence at inspected cells
        pulls toward 0; receptacle sightings write 1 directly; coverage is
        set to 1 monotonically. Returns the world cells that were updated.
        """
        pose = detections.pose
        a = self.config.alpha
        win = self.read_window(pose)
        cells = self.window_cells(pose)
        index = {c: (f, li) for f, li, c in cells}

        def slot(cell):
            fl = index.get(cell)
            if fl is None:
                return None
            if not (0 <= cell[0] < self.width and 0 <= cell[1] < self.height):
                return None
            return fl

        touched = []
        for cell, is_free in detections.free_space:
            fl = slot(cell)
            if fl is None:
                continue
            f, li = fl
            target = 1.0 if is_free else 0.0
            win[f, li, FREE] = (1 - a) * win[f, li, FREE] + a * target
            win[f, li, COVERAGE] = 1.0
            touched.append(cell)
        hit_map: dict[tuple[int, int], set[int]] = {}
        for class_id, cell in detections.objects:
            fl = slot(cell)
            if fl is None:
                continue
            ch = CLASS_INDEX[class_id]
            hit_map.setdefault(cell, set()).add(ch)
            f, li = fl
            win[f, li, ch] = (1 - a) * win[f, li, ch] + a * 1.0
        for cell in detections.inspected:
            fl = slot(cell)
            if fl is None:
                continue
            f, li = fl
            hits = hit_map.get(cell, ())
            for ch in _SMALL_CHANNELS:
                if ch in hits:
                    continue
                win[f, li, ch] = (1 - a) * win[f, li, ch]
        for class_id, cell, _is_open in detections.receptacles:
            fl = slot(cell)
            if fl is None:
                continue
            f, li = fl
            win[f, li, CLASS_INDEX[class_id]] = 1.0
        self.write_window(pose, win)
        return touched

    def mark_intent(self, cell: tuple[int, int]) -> None:
        if not self.in_bounds(cell):
            raise ValueError(f"intent cell {cell} out of bounds")
        self.grid[cell[1], cell[0], INTENT] = 1.0

    def clear_intent(self) -> None:
        self.grid[:, :, INTENT] = 0.0

    def coverage_fraction(self, free_cells) -> float:
        """Mean coverage over the scene's ground-truth free cells."""
        cells = list(free_cells)
        if not cells:
            return 1.0
        total = sum(self.grid[y, x, COVERAGE] for x, y in cells)
        return float(total / len(cells))

    def free_prob(self, cell: tuple[int, int]) -> float:
        return float(self.grid[cell[1], cell[0], FREE])

    def class_prob(self, cell: tuple[int, int], class_id: str) -> float:
        return float(self.grid[cell[1], cell[0], CLASS_INDEX[class_id]])
