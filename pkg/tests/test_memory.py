"""Spatial memory tests: window geometry, fusion arithmetic, write locality.

The egocentric footprint is recomputed here from first principles (heading
vector tables written out by hand) so a rotation bug in the implementation
cannot hide. Fusion updates are checked against frozen by-hand values.
"""

import numpy as np
import pytest

from gridhouse.controllers import Detections
from gridhouse.memory import (
    COVERAGE,
    FREE,
    INTENT,
    NUM_CHANNELS,
    MemoryConfig,
    SpatialMemory,
)
from gridhouse.world import AgentState, CLASS_INDEX, NUM_CLASSES, SMALL_CLASSES

# forward vectors per heading index, written out rather than imported
FWD = {0: (0, -1), 1: (1, 0), 2: (0, 1), 3: (-1, 0)}
RIGHT = {0: (1, 0), 1: (0, 1), 2: (-1, 0), 3: (0, -1)}


def footprint(pose, window=5):
    """Independent window footprint: forward 0..s-1, lateral -s//2..s//2."""
    half = window // 2
    fx, fy = FWD[pose.heading]
    rx, ry = RIGHT[pose.heading]
    cells = set()
    for f in range(window):
        for lat in range(-half, half + 1):
            cells.add((pose.cell[0] + f * fx + lat * rx,
                       pose.cell[1] + f * fy + lat * ry))
    return cells


def pose_at(cell, heading=0):
    return AgentState(cell=cell, heading=heading, pitch=1)


def det(pose, free=(), objects=(), receptacles=(), inspected=()):
    return Detections(pose=pose, free_space=tuple(free),
                      objects=tuple(objects), receptacles=tuple(receptacles),
                      inspected=tuple(inspected))


# ---- layout and config ----

def test_channel_layout_and_init():
    m = SpatialMemory(7, 5)
    assert m.grid.shape == (5, 7, NUM_CHANNELS)
    assert NUM_CHANNELS == NUM_CLASSES + 3
    assert (FREE, COVERAGE, INTENT) == (NUM_CLASSES, NUM_CLASSES + 1, NUM_CLASSES + 2)
    # free starts at the unknown prior, everything else at zero
    assert np.all(m.grid[:, :, FREE] == 0.5)
    other = np.delete(m.grid, FREE, axis=2)
    assert np.all(other == 0.0)
    assert m.config.alpha == 0.5 and m.config.tau == 0.5 and m.config.window == 5


def test_config_validation():
    with pytest.raises(ValueError):
        MemoryConfig(window=4)
    with pytest.raises(ValueError):
        MemoryConfig(window=-3)
    with pytest.raises(ValueError):
        MemoryConfig(alpha=0.0)
    with pytest.raises(ValueError):
        MemoryConfig(alpha=1.5)
    MemoryConfig(alpha=1.0, window=1)  # both boundaries legal


# ---- window geometry ----

def test_window_rotation_mapping():
    # slot (f, li) must land on cell + f*fwd + (li-half)*right for each heading
    m = SpatialMemory(11, 11)
    for x in range(11):
        for y in range(11):
            m.grid[y, x, COVERAGE] = (y * 16 + x) / 1000.0
    cx, cy = 5, 5
    for heading in range(4):
        win = m.read_window(pose_at((cx, cy), heading))
        fx, fy = FWD[heading]
        rx, ry = RIGHT[heading]
        for f in range(5):
            for li in range(5):
                wx = cx + f * fx + (li - 2) * rx
                wy = cy + f * fy + (li - 2) * ry
                assert win[f, li, COVERAGE] == (wy * 16 + wx) / 1000.0


def test_read_zero_pads_out_of_bounds():
    m = SpatialMemory(6, 6)
    # facing west from the corner the window hangs off both low edges
    win = m.read_window(pose_at((0, 0), heading=3))
    fp = sorted(footprint(pose_at((0, 0), heading=3)))
    assert any(x < 0 or y < 0 for x, y in fp)
    for f in range(5):
        for li in range(5):
            x, y = 0 - f, 0 - (li - 2)
            if 0 <= x < 6 and 0 <= y < 6:
                assert win[f, li, FREE] == 0.5
            else:
                # padding reads as known-solid zeros on every channel
                assert np.all(win[f, li] == 0.0)


def test_write_clips_and_drops_out_of_bounds():
    m = SpatialMemory(6, 6, MemoryConfig())
    pose = pose_at((0, 0), heading=3)
    values = np.full((5, 5, NUM_CHANNELS), 2.0)
    values[1] = -3.0
    m.write_window(pose, values)
    assert np.all(m.grid >= 0.0) and np.all(m.grid <= 1.0)
    inside = {c for c in footprint(pose) if 0 <= c[0] < 6 and 0 <= c[1] < 6}
    for y in range(6):
        for x in range(6):
            if (x, y) not in inside:
                assert np.all(m.grid[y, x, :FREE] == 0.0)
                assert m.grid[y, x, FREE] == 0.5
    # (0, 0) itself is slot f=0, li=2, written with 2.0 then clamped
    assert m.grid[0, 0, FREE] == 1.0
    with pytest.raises(ValueError):
        m.write_window(pose, np.zeros((5, 5, 2)))


# ---- fusion arithmetic ----

def test_moving_average_frozen_values():
    m = SpatialMemory(9, 9)  # alpha 0.5
    pose = pose_at((4, 4), heading=0)
    cell = (4, 2)
    apple = CLASS_INDEX["apple"]
    m.integrate(det(pose, objects=((("apple"), cell),)))
    assert m.grid[2, 4, apple] == 0.5
    m.integrate(det(pose, objects=((("apple"), cell),)))
    assert m.grid[2, 4, apple] == 0.75
    m.integrate(det(pose, inspected=(cell,)))
    assert m.grid[2, 4, apple] == 0.375

    # free belief moves off the 0.5 prior symmetrically
    m.integrate(det(pose, free=((cell, True),)))
    assert m.grid[2, 4, FREE] == 0.75
    m.integrate(det(pose, free=(((4, 3), False),)))
    assert m.grid[3, 4, FREE] == 0.25

    # alpha 1 snaps straight to the observation
    o = SpatialMemory(9, 9, MemoryConfig(alpha=1.0))
    o.integrate(det(pose, objects=((("apple"), cell),)))
    assert o.grid[2, 4, apple] == 1.0
    o.integrate(det(pose, inspected=(cell,)))
    assert o.grid[2, 4, apple] == 0.0


def test_negative_evidence_needs_license():
    m = SpatialMemory(9, 9)
    pose = pose_at((4, 4), heading=0)
    a, b = (4, 2), (4, 3)  # both inside the footprint
    apple = CLASS_INDEX["apple"]
    cabinet = CLASS_INDEX["cabinet"]
    m.grid[2, 4, apple] = 0.8
    m.grid[3, 4, apple] = 0.8
    m.grid[2, 4, cabinet] = 0.9
    m.integrate(det(pose, inspected=(a,)))
    assert m.grid[2, 4, apple] == 0.4  # licensed miss decays
    assert m.grid[3, 4, apple] == 0.8  # unlicensed cell untouched
    assert m.grid[2, 4, cabinet] == 0.9  # receptacle channels never decay


def test_hit_wins_over_same_pass_miss():
    m = SpatialMemory(9, 9)
    pose = pose_at((4, 4), heading=0)
    cell = (4, 2)
    m.grid[2, 4, CLASS_INDEX["book"]] = 0.8
    m.integrate(det(pose, objects=(("apple", cell),), inspected=(cell,)))
    assert m.grid[2, 4, CLASS_INDEX["apple"]] == 0.5  # fused toward 1, not decayed
    assert m.grid[2, 4, CLASS_INDEX["book"]] == 0.4  # other small classes decay


def test_receptacle_sightings_snap_to_one():
    m = SpatialMemory(9, 9)
    pose = pose_at((4, 4), heading=0)
    cell = (4, 2)
    cabinet = CLASS_INDEX["cabinet"]
    m.grid[2, 4, cabinet] = 0.2
    m.integrate(det(pose, receptacles=(("cabinet", cell, False),)))
    # direct write, not the moving average (which would give 0.6)
    assert m.grid[2, 4, cabinet] == 1.0


def test_coverage_monotone():
    rng = np.random.default_rng(5)
    m = SpatialMemory(10, 10)
    free_cells = [(x, y) for x in range(10) for y in range(10)]
    prev_plane = m.grid[:, :, COVERAGE].copy()
    prev_frac = m.coverage_fraction(free_cells)
    assert prev_frac == 0.0
    for _ in range(60):
        pose = pose_at((int(rng.integers(10)), int(rng.integers(10))),
                       int(rng.integers(4)))
        cells = [((int(rng.integers(-2, 12)), int(rng.integers(-2, 12))),
                  bool(rng.random() < 0.5)) for _ in range(6)]
        m.integrate(det(pose, free=cells))
        plane = m.grid[:, :, COVERAGE]
        assert np.all(plane >= prev_plane)
        frac = m.coverage_fraction(free_cells)
        assert frac >= prev_frac
        prev_plane, prev_frac = plane.copy(), frac
    assert 0.0 < prev_frac <= 1.0
    assert m.coverage_fraction([]) == 1.0


# ---- write locality ----

def test_write_locality_fuzz():
    # no integrate call may touch a cell outside its pose's window footprint
    rng = np.random.default_rng(23)
    m = SpatialMemory(12, 9)
    for _ in range(300):
        pose = pose_at((int(rng.integers(12)), int(rng.integers(9))),
                       int(rng.integers(4)))
        def cell():
            return (int(rng.integers(-3, 15)), int(rng.integers(-3, 12)))
        free = tuple((cell(), bool(rng.random() < 0.5))
                     for _ in range(rng.integers(0, 8)))
        objects = tuple((SMALL_CLASSES[rng.integers(len(SMALL_CLASSES))], cell())
                        for _ in range(rng.integers(0, 5)))
        recepts = tuple(("table", cell(), False)
                        for _ in range(rng.integers(0, 3)))
        inspected = tuple(cell() for _ in range(rng.integers(0, 5)))
        before = m.grid.copy()
        touched = m.integrate(det(pose, free, objects, recepts, inspected))
        allowed = {c for c in footprint(pose)
                   if 0 <= c[0] < 12 and 0 <= c[1] < 9}
        changed = np.argwhere(np.any(m.grid != before, axis=2))
        for y, x in changed:
            assert (int(x), int(y)) in allowed, (pose, (int(x), int(y)))
        assert touched == [c for c, _ in free if c in allowed]


# ---- intent and copies ----

def test_intent_channel():
    m = SpatialMemory(8, 8)
    m.mark_intent((3, 6))
    plane = m.grid[:, :, INTENT]
    assert plane[6, 3] == 1.0 and plane.sum() == 1.0
    m.mark_intent((0, 0))
    assert plane.sum() == 2.0
    m.clear_intent()
    assert np.all(m.grid[:, :, INTENT] == 0.0)
    with pytest.raises(ValueError):
        m.mark_intent((8, 0))
    with pytest.raises(ValueError):
        m.mark_intent((0, -1))


def test_copy_isolation():
    m = SpatialMemory(6, 6)
    c = m.copy()
    m.integrate(det(pose_at((3, 3)), free=(((3, 2), True),)))
    assert np.all(c.grid[:, :, FREE] == 0.5)
    assert c.config is m.config
