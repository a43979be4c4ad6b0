"""Procedural kitchen-style room family.

Rooms are rectangular grids with a few interior wall blocks and receptacles
along the walls. Generation retries derived seeds until the layout satisfies
the guarantees the rest of the stack relies on: connected free space, every
receptacle interactable and band-scannable from some free cell, every floor
cell inspectable from 2-4 cells away at pitch 0.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .world import (
    Layout,
    MalformedSpec,
    OPENABLE_CLASSES,
    RECEPTACLE_CLASSES,
    SCHEMA_VERSION,
    UnreachableLayout,
    band_stand_poses,
    floor_view_poses,
)

# class -> default height band; cabinets alternate low/high per instance.
_BANDS = {
    "fridge": "mid",
    "microwave": "mid",
    "countertop": "mid",
    "table": "mid",
    "drawer": "low",
    "cabinet": "high",
}


def _candidate_spec(room_id: str, rng: np.random.Generator, width: int, height: int,
                    n_receptacles: int, n_obstacles: int) -> dict:
    wall_cells = [(x, y) for x in range(width) for y in (0, height - 1)]
    wall_cells += [(x, y) for x in (0, width - 1) for y in range(1, height - 1)]
    rng.shuffle(wall_cells)
    classes = list(RECEPTACLE_CLASSES)
    rng.shuffle(classes)
    while len(classes) < n_receptacles:
        classes.append(str(rng.choice(RECEPTACLE_CLASSES)))
    receptacles = []
    used = set()
    cabinet_low = bool(rng.integers(0, 2))
    for i, cls in enumerate(classes[:n_receptacles]):
        # keep receptacles spaced out so approach lanes stay open
        cell = None
        for cand in wall_cells:
            if all(abs(cand[0] - u[0]) + abs(cand[1] - u[1]) >= 3 for u in used):
                cell = cand
                break
        if cell is None:
            break
        used.add(cell)
        wall_cells.remove(cell)
        band = _BANDS[cls]
        if cls == "cabinet":
            band = "low" if cabinet_low else "high"
            cabinet_low = not cabinet_low
        receptacles.append(
            dict(rid=f"{cls}_{i}", class_id=cls, cell=list(cell),
                 openable=cls in OPENABLE_CLASSES, height_band=band)
        )
    blocked = set()
    for _ in range(n_obstacles):
        bx = int(rng.integers(2, max(3, width - 3)))
        by = int(rng.integers(2, max(3, height - 3)))
        bw = int(rng.integers(1, 3))
        bh = int(rng.integers(1, 3))
        for x in range(bx, min(bx + bw, width - 2)):
            for y in range(by, min(by + bh, height - 2)):
                if (x, y) not in used:
                    blocked.add((x, y))
    return dict(
        schema_version=SCHEMA_VERSION,
        room_id=room_id,
        width=width,
        height=height,
        blocked=sorted([list(c) for c in blocked]),
        receptacles=receptacles,
    )


def _usable(layout: Layout) -> bool:
    for r in layout.receptacle_specs:
        if not band_stand_poses(layout, r["cell"], r["height_band"], r["openable"]):
            return False
    for cell in layout.free_cells:
        if not floor_view_poses(layout, cell):
            return False
    return True


def make_room(room_id: str, seed: int, width: int, height: int,
              n_receptacles: int = 4, n_obstacles: int = 1) -> dict:
    """Generate one validated room spec (deterministic in its arguments)."""
    for attempt in range(200):
        rng = np.random.default_rng((seed, attempt))
        spec = _candidate_spec(room_id, rng, width, height, n_receptacles, n_obstacles)
        try:
            layout = Layout(spec)
        except (MalformedSpec, UnreachableLayout):
            continue
        if _usable(layout):
            return spec
    raise UnreachableLayout(f"could not generate a usable room for {room_id}")


def make_family(name: str, n_train: int, n_test: int, seed: int,
                size_range: tuple[int, int] = (11, 15),
                n_receptacles: tuple[int, int] = (3, 6),
                n_obstacles: tuple[int, int] = (0, 2)) -> tuple[list[dict], dict[str, str]]:
    """A named family of rooms plus its train/test split map."""
    rng = np.random.default_rng(seed)
    specs = []
    split = {}
    for i in range(n_train + n_test):
        role = "train" if i < n_train else "test"
        room_id = f"{name}_{i:02d}"
        w = int(rng.integers(size_range[0], size_range[1] + 1))
        h = int(rng.integers(size_range[0], size_range[1] + 1))
        nr = int(rng.integers(n_receptacles[0], n_receptacles[1] + 1))
        no = int(rng.integers(n_obstacles[0], n_obstacles[1] + 1))
        specs.append(make_room(room_id, int(rng.integers(0, 2**31)), w, h, nr, no))
        split[room_id] = role
    return specs, split


def house_family(seed: int = 11) -> tuple[list[dict], dict[str, str]]:
    """30 rooms (25 train / 5 test) for full-scale dataset generation."""
    return make_family("kitchen", 25, 5, seed)


def desk_family(seed: int = 7) -> tuple[list[dict], dict[str, str]]:
    """8 small rooms (6 train / 2 test) used for training runs and evals."""
    return make_family("small", 6, 2, seed, size_range=(9, 10),
                       n_receptacles=(2, 3), n_obstacles=(0, 1))


def tiny_room(seed: int = 3) -> dict:
    """One 7x7 room with a single receptacle, for fast fuzz tests."""
    return make_room("tiny_00", seed, 7, 7, n_receptacles=1, n_obstacles=0)


def save_rooms(path: str | Path, specs: list[dict], split: dict[str, str]) -> None:
    doc = dict(schema_version=SCHEMA_VERSION, rooms=specs, split=split)
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True))


def load_rooms(path: str | Path) -> tuple[list[dict], dict[str, str]]:
    doc = json.loads(Path(path).read_text())
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise MalformedSpec("unsupported rooms file version")
    return doc["rooms"], doc["split"]
