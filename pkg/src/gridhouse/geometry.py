"""Grid geometry: headings, pitch bands, egocentric transforms, view rays.

Coordinates are (x, y) with x growing east and y growing south. Headings are
indices into HEADINGS; pitch is an index into PITCH_DEGREES. All field-of-view
tests use exact integer arithmetic so tie-breaking is deterministic.
"""

from __future__ import annotations

HEADINGS = ("N", "E", "S", "W")
HEADING_VECS = ((0, -1), (1, 0), (0, 1), (-1, 0))  # unit vectors, x east / y south

PITCH_DEGREES = (-30, 0, 30)
# Per-pitch visible range band (inclusive, in cells) around the agent.
PITCH_RANGE = {0: (0, 4), 1: (2, 12), 2: (4, 12)}
VIEW_DEPTH = 12


def rotate_left(heading: int) -> int:
    return (heading - 1) % 4


def rotate_right(heading: int) -> int:
    return (heading + 1) % 4


def right_vec(heading: int) -> tuple[int, int]:
    # Rightward lateral axis of the agent frame.
    return HEADING_VECS[(heading + 1) % 4]


def ego_to_world(cell: tuple[int, int], heading: int, forward: int, lateral: int) -> tuple[int, int]:
    """Map an agent-frame offset (forward, lateral-right) to a world cell."""
    fx, fy = HEADING_VECS[heading]
    rx, ry = right_vec(heading)
    return (cell[0] + forward * fx + lateral * rx, cell[1] + forward * fy + lateral * ry)


def world_to_ego(cell: tuple[int, int], heading: int, target: tuple[int, int]) -> tuple[int, int]:
    """Inverse of ego_to_world: world cell -> (forward, lateral) offsets."""
    dx, dy = target[0] - cell[0], target[1] - cell[1]
    fx, fy = HEADING_VECS[heading]
    rx, ry = right_vec(heading)
    return (dx * fx + dy * fy, dx * rx + dy * ry)


def in_frustum(dx: int, dy: int, heading: int) -> bool:
    """90-degree frustum centered on the heading; the boundary diagonals count.

    Exact test: dot > 0 and 2*dot^2 >= |off|^2. The agent's own cell is
    treated as inside (it is visible when the pitch range starts at 0).
    """
    if dx == 0 and dy == 0:
        return True
    fx, fy = HEADING_VECS[heading]
    dot = dx * fx + dy * fy
    return dot > 0 and 2 * dot * dot >= dx * dx + dy * dy


def bresenham(a: tuple[int, int], b: tuple[int, int]) -> list[tuple[int, int]]:
    """Cells on the ray from a to b inclusive (standard integer Bresenham)."""
    x0, y0 = a
    x1, y1 = b
    cells = []
    dx = abs(x1 - x0)
    dy = abs(y1 - y0)
    sx = 1 if x0 < x1 else -1
    sy = 1 if y0 < y1 else -1
    err = dx - dy
    x, y = x0, y0
    while True:
        cells.append((x, y))
        if x == x1 and y == y1:
            return cells
        e2 = 2 * err
        if e2 > -dy:
            err -= dy
            x += sx
        if e2 < dx:
            err += dx
            y += sy


def _build_view_offsets() -> dict[tuple[int, int], tuple]:
    """Precompute, per (heading, pitch), the candidate offsets and their rays.

    Each entry is a tuple of (offset, intermediate ray offsets). Offsets are
    sorted by squared range then (dy, dx) so downstream iteration order is
    deterministic.
    """
    table = {}
    for heading in range(4):
        for pitch, (lo, hi) in PITCH_RANGE.items():
            entries = []
            for dy in range(-VIEW_DEPTH, VIEW_DEPTH + 1):
                for dx in range(-VIEW_DEPTH, VIEW_DEPTH + 1):
                    d2 = dx * dx + dy * dy
                    if d2 < lo * lo or d2 > hi * hi:
                        continue
                    if not in_frustum(dx, dy, heading):
                        continue
                    ray = bresenham((0, 0), (dx, dy))[1:-1]
                    entries.append(((dx, dy), tuple(ray)))
            entries.sort(key=lambda e: (e[0][0] ** 2 + e[0][1] ** 2, e[0][1], e[0][0]))
            table[(heading, pitch)] = tuple(entries)
    return table


VIEW_OFFSETS = _build_view_offsets()
