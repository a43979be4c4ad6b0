"""Grid-house world: scenes, low-level actions, visibility, interaction.

One cell is 25 cm. The agent occupies a free cell, faces one of four headings
and holds one of three pitch bands. Seven low-level actions mutate nothing but
the agent pose and, for Open/Close, a single receptacle flag.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum
from fractions import Fraction

from .geometry import (
    HEADING_VECS,
    VIEW_OFFSETS,
    bresenham,
    ego_to_world,
    rotate_left,
    rotate_right,
)

SCHEMA_VERSION = 1

SMALL_CLASSES = ("apple", "book", "bread", "cup", "fork", "lettuce")
RECEPTACLE_CLASSES = ("cabinet", "countertop", "drawer", "fridge", "microwave", "table")
OPENABLE_CLASSES = frozenset({"cabinet", "drawer", "fridge", "microwave"})
ALL_CLASSES = SMALL_CLASSES + RECEPTACLE_CLASSES
CLASS_INDEX = {c: i for i, c in enumerate(ALL_CLASSES)}
NUM_CLASSES = len(ALL_CLASSES)

HEIGHT_BANDS = ("low", "mid", "high")
BAND_FOR_PITCH = {0: "low", 1: "mid", 2: "high"}
PITCH_FOR_BAND = {"low": 0, "mid": 1, "high": 2}

INTERACTION_RANGE = 4  # Euclidean cells (1 m)
MAX_COUNT = 3  # counting answers clamp here


class Action(IntEnum):
    MOVE_AHEAD = 0
    ROTATE_LEFT = 1
    ROTATE_RIGHT = 2
    LOOK_UP = 3
    LOOK_DOWN = 4
    OPEN = 5
    CLOSE = 6


ACTION_NAMES = tuple(a.name for a in Action)


class MalformedSpec(ValueError):
    """Room spec or scene config violates the schema or an invariant."""


class UnreachableLayout(ValueError):
    """Free cells are not mutually connected or a receptacle is unusable."""


@dataclass(frozen=True)
class ObjectInstance:
    class_id: str
    instance_id: str


@dataclass
class Receptacle:
    rid: str
    class_id: str
    cell: tuple[int, int]
    openable: bool
    height_band: str
    is_open: bool = False
    contents: list[ObjectInstance] = field(default_factory=list)
    surface: list[ObjectInstance] = field(default_factory=list)


@dataclass(frozen=True)
class AgentState:
    cell: tuple[int, int]
    heading: int  # index into HEADINGS
    pitch: int  # index into PITCH_DEGREES


@dataclass(frozen=True)
class ActionOutcome:
    success: bool
    reason: str | None = None
    receptacle: str | None = None  # rid affected by Open/Close


@dataclass(frozen=True)
class Observation:
    """Everything visible from one pose. Lists are sorted for stable equality."""

    pose: AgentState
    cells: tuple  # ((cell, is_free), ...)
    receptacles: tuple  # ((class_id, cell, is_open, height_band, rid), ...)
    objects: tuple  # ((class_id, cell, containing_rid_or_None), ...)


class Layout:
    """Static geometry of a room: bounds, walls, receptacle sites.

    Shared across every scene configuration of the room; caches visibility
    sets per pose (occlusion depends only on static cells).
    """

    def __init__(self, spec: dict):
        if spec.get("schema_version") != SCHEMA_VERSION:
            raise MalformedSpec(f"unsupported schema_version {spec.get('schema_version')!r}")
        self.room_id = spec["room_id"]
        self.width = int(spec["width"])
        self.height = int(spec["height"])
        if self.width < 1 or self.height < 1:
            raise MalformedSpec("non-positive grid size")
        self.blocked = frozenset((int(x), int(y)) for x, y in spec.get("blocked", ()))
        for c in self.blocked:
            if not self.in_bounds(c):
                raise MalformedSpec(f"blocked cell {c} out of bounds")
        self.receptacle_specs = []
        seen_cells = set()
        for r in spec.get("receptacles", ()):
            cell = (int(r["cell"][0]), int(r["cell"][1]))
            if not self.in_bounds(cell):
                raise MalformedSpec(f"receptacle {r['rid']} out of bounds")
            if cell in self.blocked or cell in seen_cells:
                raise MalformedSpec(f"receptacle {r['rid']} overlaps another solid cell")
            if r["height_band"] not in HEIGHT_BANDS:
                raise MalformedSpec(f"receptacle {r['rid']} bad height_band")
            if r["class_id"] not in RECEPTACLE_CLASSES:
                raise MalformedSpec(f"receptacle {r['rid']} unknown class {r['class_id']}")
            seen_cells.add(cell)
            self.receptacle_specs.append(
                dict(rid=r["rid"], class_id=r["class_id"], cell=cell,
                     openable=bool(r["openable"]), height_band=r["height_band"])
            )
        if len({r["rid"] for r in self.receptacle_specs}) != len(self.receptacle_specs):
            raise MalformedSpec("duplicate receptacle rid")
        self.receptacle_cells = frozenset(r["cell"] for r in self.receptacle_specs)
        self.free_cells = frozenset(
            (x, y)
            for y in range(self.height)
            for x in range(self.width)
            if (x, y) not in self.blocked and (x, y) not in self.receptacle_cells
        )
        if not self.free_cells:
            raise UnreachableLayout("no free cells")
        self._check_connected()
        self._vis_cache: dict[tuple, tuple] = {}

    def in_bounds(self, cell: tuple[int, int]) -> bool:
        return 0 <= cell[0] < self.width and 0 <= cell[1] < self.height

    def is_free(self, cell: tuple[int, int]) -> bool:
        return self.in_bounds(cell) and cell in self.free_cells

    def cell_index(self, cell: tuple[int, int]) -> int:
        return cell[1] * self.width + cell[0]

    def _check_connected(self) -> None:
        start = min(self.free_cells)
        seen = {start}
        stack = [start]
        while stack:
            x, y = stack.pop()
            for dx, dy in HEADING_VECS:
                n = (x + dx, y + dy)
                if n in self.free_cells and n not in seen:
                    seen.add(n)
                    stack.append(n)
        if seen != self.free_cells:
            raise UnreachableLayout("free cells are not connected")

    def visible_cells(self, cell: tuple[int, int], heading: int, pitch: int) -> tuple:
        """((cell, is_free), ...) for the pose; cached per layout.

        A cell is visible when it sits in the pitch range band, inside the
        frustum, and the ray to it crosses no solid (blocked or receptacle)
        cell; the terminal cell itself may be solid.
        """
        key = (cell, heading, pitch)
        hit = self._vis_cache.get(key)
        if hit is not None:
            return hit
        out = []
        solid = self.blocked | self.receptacle_cells
        for off, ray in VIEW_OFFSETS[(heading, pitch)]:
            c = (cell[0] + off[0], cell[1] + off[1])
            if not self.in_bounds(c):
                continue
            ok = True
            for rx, ry in ray:
                if (cell[0] + rx, cell[1] + ry) in solid:
                    ok = False
                    break
            if ok:
                out.append((c, c in self.free_cells))
        result = tuple(out)
        self._vis_cache[key] = result
        return result


@dataclass
class Scene:
    layout: Layout
    receptacles: list[Receptacle]
    loose: dict[tuple[int, int], list[ObjectInstance]]  # floor cell -> objects
    config_seed: int

    def receptacle_by_id(self, rid: str) -> Receptacle:
        for r in self.receptacles:
            if r.rid == rid:
                return r
        raise KeyError(rid)

    def free(self, cell: tuple[int, int]) -> bool:
        return self.layout.is_free(cell)

    def open_flags(self) -> dict[str, bool]:
        return {r.rid: r.is_open for r in self.receptacles}


def load_scene(layout: Layout | dict, config) -> Scene:
    """Build a Scene from a room layout and a scene configuration.

    `config` is a questions.SceneConfig or an equivalent dict with keys
    room_id / seed / placements. Raises MalformedSpec on any invariant
    violation (unknown receptacle, occupied site, contents in a non-openable).
    """
    if isinstance(layout, dict):
        layout = Layout(layout)
    if isinstance(config, dict):
        room_id, seed, placements = config["room_id"], config["seed"], config["placements"]
    else:
        room_id, seed, placements = config.room_id, config.seed, config.placements
    if room_id != layout.room_id:
        raise MalformedSpec(f"config room {room_id!r} != layout room {layout.room_id!r}")
    receptacles = [Receptacle(**spec) for spec in layout.receptacle_specs]
    by_id = {r.rid: r for r in receptacles}
    loose: dict[tuple[int, int], list[ObjectInstance]] = {}
    used: set[tuple] = set()  # (site-key, class) pairs, one instance of a class per site
    ids = set()
    for p in placements:
        if isinstance(p, dict):
            class_id, instance_id, site = p["class_id"], p["instance_id"], p["site"]
        else:
            class_id, instance_id, site = p
        if class_id not in SMALL_CLASSES:
            raise MalformedSpec(f"unknown object class {class_id!r}")
        if instance_id in ids:
            raise MalformedSpec(f"duplicate instance id {instance_id!r}")
        ids.add(instance_id)
        obj = ObjectInstance(class_id, instance_id)
        kind, where = site[0], site[1]
        if kind == "floor":
            cell = (int(where[0]), int(where[1]))
            if not layout.is_free(cell):
                raise MalformedSpec(f"floor placement {instance_id} on non-free cell {cell}")
            key = ("floor", cell, class_id)
            if key in used:
                raise MalformedSpec(f"two {class_id} on floor cell {cell}")
            used.add(key)
            loose.setdefault(cell, []).append(obj)
        elif kind in ("in", "on"):
            r = by_id.get(where)
            if r is None:
                raise MalformedSpec(f"placement {instance_id} references unknown receptacle {where!r}")
            if kind == "in" and not r.openable:
                raise MalformedSpec(f"contents in non-openable receptacle {where}")
            key = ("recept", where, class_id)
            if key in used:
                raise MalformedSpec(f"two {class_id} at receptacle {where}")
            used.add(key)
            (r.contents if kind == "in" else r.surface).append(obj)
        else:
            raise MalformedSpec(f"bad site kind {kind!r}")
    return Scene(layout=layout, receptacles=receptacles, loose=loose, config_seed=int(seed))


def initial_agent(scene: Scene) -> AgentState:
    """Deterministic spawn pose derived from the config seed."""
    cells = sorted(scene.layout.free_cells)
    i = scene.config_seed % len(cells)
    heading = (scene.config_seed // len(cells)) % 4
    return AgentState(cell=cells[i], heading=heading, pitch=1)


def observe(scene: Scene, agent: AgentState) -> Observation:
    """Ground-truth view from the agent pose.

    Receptacles (plus surface objects, plus contents when open) are reported
    when their cell is visible and their height band matches the pitch. Loose
    floor objects are reported only at pitch 0.
    """
    vis = scene.layout.visible_cells(agent.cell, agent.heading, agent.pitch)
    vis_set = {c for c, _ in vis}
    band = BAND_FOR_PITCH[agent.pitch]
    recepts = []
    objects = []
    for r in scene.receptacles:
        if r.cell in vis_set and r.height_band == band:
            recepts.append((r.class_id, r.cell, r.is_open, r.height_band, r.rid))
            for o in r.surface:
                objects.append((o.class_id, r.cell, r.rid))
            if r.is_open:
                for o in r.contents:
                    objects.append((o.class_id, r.cell, r.rid))
    if agent.pitch == 1:
        for c, free in vis:
            if free and c in scene.loose:
                for o in scene.loose[c]:
                    objects.append((o.class_id, c, None))
    recepts.sort(key=lambda t: (t[1][1], t[1][0], t[0]))
    objects.sort(key=lambda t: (t[1][1], t[1][0], t[0], str(t[2])))
    return Observation(pose=agent, cells=vis, receptacles=tuple(recepts), objects=tuple(objects))


def _interaction_target(scene: Scene, agent: AgentState, want_open: bool) -> Receptacle | None:
    """Openable receptacle the pose would act on: visible cell, within range,
    correct state, smallest angle to the view axis; ties by range then cell
    index. Angle comparison is exact (dot^2 / |off|^2 as a Fraction)."""
    vis_set = {c for c, _ in scene.layout.visible_cells(agent.cell, agent.heading, agent.pitch)}
    fx, fy = HEADING_VECS[agent.heading]
    best = None
    best_key = None
    for r in scene.receptacles:
        if not r.openable or r.is_open == want_open:
            continue
        dx = r.cell[0] - agent.cell[0]
        dy = r.cell[1] - agent.cell[1]
        d2 = dx * dx + dy * dy
        if d2 > INTERACTION_RANGE * INTERACTION_RANGE or r.cell not in vis_set:
            continue
        dot = dx * fx + dy * fy
        # Larger dot^2/d2 means smaller angle; negate for min-sorting.
        key = (-Fraction(dot * dot, d2), d2, scene.layout.cell_index(r.cell))
        if best_key is None or key < best_key:
            best_key = key
            best = r
    return best


def apply_action(scene: Scene, agent: AgentState, action: Action) -> tuple[AgentState, ActionOutcome]:
    """Execute one low-level action. Open/Close mutate one receptacle flag on
    the scene; everything else only produces a new agent state."""
    if action == Action.MOVE_AHEAD:
        target = ego_to_world(agent.cell, agent.heading, 1, 0)
        if scene.free(target):
            return AgentState(target, agent.heading, agent.pitch), ActionOutcome(True)
        return agent, ActionOutcome(False, "blocked")
    if action == Action.ROTATE_LEFT:
        return AgentState(agent.cell, rotate_left(agent.heading), agent.pitch), ActionOutcome(True)
    if action == Action.ROTATE_RIGHT:
        return AgentState(agent.cell, rotate_right(agent.heading), agent.pitch), ActionOutcome(True)
    if action == Action.LOOK_UP:
        if agent.pitch >= 2:
            return agent, ActionOutcome(False, "at_bound")
        return AgentState(agent.cell, agent.heading, agent.pitch + 1), ActionOutcome(True)
    if action == Action.LOOK_DOWN:
        if agent.pitch <= 0:
            return agent, ActionOutcome(False, "at_bound")
        return AgentState(agent.cell, agent.heading, agent.pitch - 1), ActionOutcome(True)
    if action in (Action.OPEN, Action.CLOSE):
        want_open = action == Action.OPEN
        r = _interaction_target(scene, agent, want_open)
        if r is None:
            return agent, ActionOutcome(False, "out_of_range")
        r.is_open = want_open
        return agent, ActionOutcome(True, receptacle=r.rid)
    raise ValueError(f"unknown action {action!r}")


def valid_low_level(scene: Scene, agent: AgentState) -> tuple[bool, ...]:
    """Mask over the seven actions: True iff apply_action would succeed."""
    target = ego_to_world(agent.cell, agent.heading, 1, 0)
    return (
        scene.free(target),
        True,
        True,
        agent.pitch < 2,
        agent.pitch > 0,
        _interaction_target(scene, agent, True) is not None,
        _interaction_target(scene, agent, False) is not None,
    )


def band_stand_poses(layout: Layout, cell: tuple[int, int], band: str,
                     openable: bool) -> list[tuple[tuple[int, int], int]]:
    """(stand cell, heading) pairs from which a receptacle at `cell` with the
    given height band can be interacted with and band-scanned in the agent's
    write window (forward <= 4, |lateral| <= 2, clear ray).

    low: any aligned cell 1-4 away; mid: 2-4 away; high: exactly 4 straight
    ahead when openable (interaction range meets the 4..12 pitch gate only
    there), else forward 4 with lateral slack.
    """
    out = []
    solid = layout.blocked | layout.receptacle_cells
    for heading in range(4):
        for f in range(1, 5):
            for lat in (-2, -1, 0, 1, 2):
                if abs(lat) > f:
                    continue  # outside the frustum
                d2 = f * f + lat * lat
                if band == "low" and d2 > 16:
                    continue
                if band == "mid" and not (4 <= d2 <= 16):
                    continue
                if band == "high":
                    if openable and not (f == 4 and lat == 0):
                        continue
                    if not openable and not (f == 4 and 16 <= d2 <= 20):
                        continue
                fx, fy = HEADING_VECS[heading]
                rx, ry = HEADING_VECS[(heading + 1) % 4]
                p = (cell[0] - f * fx - lat * rx, cell[1] - f * fy - lat * ry)
                if not layout.is_free(p):
                    continue
                clear = True
                for rc in bresenham(p, cell)[1:-1]:
                    if rc in solid:
                        clear = False
                        break
                if clear:
                    out.append((p, heading))
    out.sort(key=lambda ph: (layout.cell_index(ph[0]), ph[1]))
    return out


def floor_view_poses(layout: Layout, cell: tuple[int, int]) -> list[tuple[tuple[int, int], int]]:
    """(stand cell, heading) pairs that see floor cell `cell` at pitch 0 within
    the write window: forward 2..4, |lateral| <= min(forward, 2), clear ray."""
    out = []
    solid = layout.blocked | layout.receptacle_cells
    for heading in range(4):
        for f in range(2, 5):
            for lat in (-2, -1, 0, 1, 2):
                if abs(lat) > f:
                    continue
                d2 = f * f + lat * lat
                if d2 < 4:
                    continue  # below the pitch-0 near gate
                fx, fy = HEADING_VECS[heading]
                rx, ry = HEADING_VECS[(heading + 1) % 4]
                p = (cell[0] - f * fx - lat * rx, cell[1] - f * fy - lat * ry)
                if not layout.is_free(p):
                    continue
                clear = True
                for rc in bresenham(p, cell)[1:-1]:
                    if rc in solid:
                        clear = False
                        break
                if clear:
                    out.append((p, heading))
    out.sort(key=lambda ph: (layout.cell_index(ph[0]), ph[1]))
    return out
