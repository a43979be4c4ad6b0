"""Low-level controllers: path planning, detection, scanning, navigation,
manipulation, and the deterministic answer readout.

The navigator replans A* over the memory's free-space channel after every
primitive step; unknown cells (still at the 0.5 prior) are traversable at
double cost. The detector is either an oracle over ground-truth observations
or a parametric noise model on top of them. The answerer reads thresholded
class channels out of memory and never touches the world.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field

import numpy as np

from .geometry import HEADING_VECS
from .memory import COVERAGE, FREE, MemoryConfig, SpatialMemory
from .questions import CONTAINMENT, COUNTING, EXISTENCE, Question
from .world import (
    Action,
    AgentState,
    CLASS_INDEX,
    MAX_COUNT,
    NUM_CLASSES,
    OPENABLE_CLASSES,
    Observation,
    Scene,
    SMALL_CLASSES,
    apply_action,
    observe,
)


# ---- detector ----

@dataclass(frozen=True)
class DetectorModel:
    """Parametric error model over ground-truth object sightings.

    recall: chance a true object is reported. false_positive_rate: chance of a
    spurious report per (visible cell, small class). localization_noise:
    chance a kept report shifts one cell along its view ray.
    """

    mode: str = "oracle"
    recall: float = 1.0
    false_positive_rate: float = 0.0
    localization_noise: float = 0.0

    def __post_init__(self):
        if self.mode not in ("oracle", "noisy"):
            raise ValueError(f"unknown detector mode {self.mode!r}")
        for name in ("recall", "false_positive_rate", "localization_noise"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0,1]")
        if self.mode == "oracle" and (
            self.recall != 1.0 or self.false_positive_rate != 0.0 or self.localization_noise != 0.0
        ):
            raise ValueError("oracle mode requires recall=1, false_positive_rate=0, localization_noise=0")


@dataclass(frozen=True)
class Detections:
    """One detector pass, in world coordinates.

    `inspected` lists cells whose small-object absence this view proves:
    visible free cells at level pitch, and band-matched receptacles that are
    open or not openable. Memory derives negative evidence only there.
    """

    pose: AgentState
    free_space: tuple  # ((cell, is_free), ...)
    objects: tuple  # ((class_id, cell), ...)
    receptacles: tuple  # ((class_id, cell, is_open), ...)
    inspected: tuple  # (cell, ...)


def detect(obs: Observation, model: DetectorModel,
           rng: np.random.Generator | None = None,
           bounds: tuple[int, int] | None = None) -> Detections:
    """Turn a ground-truth observation into (possibly noisy) detections.

    Noise touches only small-object reports; free space, receptacle markers
    and absence licensing stay exact (receptacles are large and static).
    Displaced reports clamp into `bounds` when given.
    """
    pose = obs.pose
    inspected = []
    contents_visible = set()
    for class_id, cell, is_open, _band, _rid in obs.receptacles:
        if is_open or class_id not in OPENABLE_CLASSES:
            contents_visible.add(cell)
    for c, is_free in obs.cells:
        if (is_free and pose.pitch == 1) or c in contents_visible:
            inspected.append(c)
    hits = [(class_id, cell) for class_id, cell, _rid in obs.objects]
    if model.mode == "noisy":
        if rng is None:
            raise ValueError("noisy detector needs an rng")
        kept = []
        for class_id, cell in hits:
            if rng.random() >= model.recall:
                continue
            if rng.random() < model.localization_noise:
                dx = cell[0] - pose.cell[0]
                dy = cell[1] - pose.cell[1]
                sign = 1 if rng.random() < 0.5 else -1
                moved = (cell[0] + sign * int(np.sign(dx)),
                         cell[1] + sign * int(np.sign(dy)))
                if bounds is not None:
                    moved = (min(max(moved[0], 0), bounds[0] - 1),
                             min(max(moved[1], 0), bounds[1] - 1))
                if moved != cell and moved != pose.cell:
                    cell = moved
            kept.append((class_id, cell))
        hits = kept
        if model.false_positive_rate > 0:
            for c, _free in obs.cells:
                for class_id in SMALL_CLASSES:
                    if rng.random() < model.false_positive_rate:
                        hits.append((class_id, c))
    hits.sort(key=lambda t: (t[1][1], t[1][0], t[0]))
    recepts = tuple((class_id, cell, is_open)
                    for class_id, cell, is_open, _b, _r in obs.receptacles)
    return Detections(pose=pose, free_space=obs.cells, objects=tuple(hits),
                      receptacles=recepts, inspected=tuple(inspected))


# ---- A* ----

def astar(occupancy: np.ndarray, start: tuple[int, int], goal: tuple[int, int],
          threshold: float = 0.5) -> list[tuple[int, int]] | None:
    """Minimum-cost 4-connected path over a free-probability grid.

    occupancy[y, x] is the free probability. Cells above the threshold cost 1
    to enter, cells at the threshold (the untouched prior) cost 2, lower cells
    are untraversable. The Manhattan heuristic times the minimum step cost (1)
    is admissible. Returns the start..goal cell list, or None when no route
    exists. Deterministic: heap ties resolve by insertion order.
    """
    h, w = occupancy.shape[0], occupancy.shape[1]
    eps = 1e-9

    def enter_cost(cell):
        p = occupancy[cell[1], cell[0]]
        if p > threshold + eps:
            return 1
        if p >= threshold - eps:
            return 2
        return None

    if not (0 <= start[0] < w and 0 <= start[1] < h):
        return None
    if not (0 <= goal[0] < w and 0 <= goal[1] < h):
        return None
    if enter_cost(goal) is None:
        return None
    if start == goal:
        return [start]

    def heur(cell):
        return abs(cell[0] - goal[0]) + abs(cell[1] - goal[1])

    counter = 0
    open_heap = [(heur(start), 0, counter, start)]
    g_cost = {start: 0}
    came: dict[tuple[int, int], tuple[int, int]] = {}
    closed = set()
    while open_heap:
        _f, g, _c, cell = heapq.heappop(open_heap)
        if cell in closed:
            continue
        closed.add(cell)
        if cell == goal:
            path = [cell]
            while cell in came:
                cell = came[cell]
                path.append(cell)
            path.reverse()
            return path
        for dx, dy in HEADING_VECS:
            n = (cell[0] + dx, cell[1] + dy)
            if not (0 <= n[0] < w and 0 <= n[1] < h) or n in closed:
                continue
            step = enter_cost(n)
            if step is None:
                continue
            ng = g + step
            if ng < g_cost.get(n, 1 << 30):
                g_cost[n] = ng
                came[n] = cell
                counter += 1
                heapq.heappush(open_heap, (ng + heur(n), ng, counter, n))
    return None


# ---- primitive plumbing ----

@dataclass
class PrimitiveStep:
    action: Action
    success: bool
    reason: str | None = None
    receptacle: str | None = None
    # free-space belief of the MoveAhead target before stepping, for audits
    belief_ahead: float | None = None


@dataclass
class NavOutcome:
    status: str  # arrived | terminated_unreachable | budget_exhausted
    trace: list[PrimitiveStep] = field(default_factory=list)
    planned_paths: list[list[tuple[int, int]]] = field(default_factory=list)


class EpisodeWorld:
    """Mutable bundle the controllers act on: scene, pose, memory, detector.

    `on_primitive` / `on_detect`, set by the episode, observe every primitive
    step and detector pass so budgets and trajectory logs stay centralized.
    """

    def __init__(self, scene: Scene, agent: AgentState, mem: SpatialMemory,
                 detector: DetectorModel, rng: np.random.Generator | None = None):
        self.scene = scene
        self.agent = agent
        self.mem = mem
        self.detector = detector
        self.rng = rng
        self.primitive_steps = 0
        self.max_primitive_steps: int | None = None
        self.on_primitive = None
        self.on_detect = None

    def budget_left(self) -> bool:
        return self.max_primitive_steps is None or self.primitive_steps < self.max_primitive_steps

    def do_primitive(self, action: Action, belief_ahead: float | None = None) -> PrimitiveStep:
        agent, outcome = apply_action(self.scene, self.agent, action)
        self.agent = agent
        self.primitive_steps += 1
        step = PrimitiveStep(action, outcome.success, outcome.reason,
                             outcome.receptacle, belief_ahead)
        if self.on_primitive:
            self.on_primitive(step)
        return step

    def sense(self) -> Detections:
        """One detector pass at the current pose, fused into memory."""
        obs = observe(self.scene, self.agent)
        det = detect(obs, self.detector, self.rng,
                     bounds=(self.scene.layout.width, self.scene.layout.height))
        self.mem.integrate(det)
        if self.on_detect:
            self.on_detect(det)
        return det

    def note_free(self, cell: tuple[int, int], is_free: bool) -> None:
        """Proprioceptive free-space evidence (the agent's own cell, or a wall
        it bumped) written through the window like any observation."""
        det = Detections(pose=self.agent, free_space=((cell, is_free),),
                         objects=(), receptacles=(), inspected=())
        self.mem.integrate(det)


SCAN_DIRECTIONS = ("up", "down", "left", "right")
_SCAN_ACTION = {
    "up": Action.LOOK_UP,
    "down": Action.LOOK_DOWN,
    "left": Action.ROTATE_LEFT,
    "right": Action.ROTATE_RIGHT,
}


def scan(world: EpisodeWorld, direction: str) -> PrimitiveStep:
    """Rotate or tilt once and run a detector pass at the resulting pose.

    Rotations persist (no restore); tilts clamp at the pitch bounds but the
    detector pass still runs on the unchanged view.
    """
    step = world.do_primitive(_SCAN_ACTION[direction])
    world.sense()
    return step


def _wide_scan(world: EpisodeWorld) -> list[PrimitiveStep]:
    """Full look-around: four scan(left), net heading unchanged."""
    steps = []
    for _ in range(4):
        if not world.budget_left():
            break
        steps.append(scan(world, "left"))
    return steps


def navigate(world: EpisodeWorld, goal: tuple[int, int], budget: int | None = None,
             scan_every: int = 8,
             occupancy_override: np.ndarray | None = None) -> NavOutcome:
    """Drive to an absolute goal cell with an observe-integrate-replan loop.

    Each iteration senses, replans A* over the free-space channel, and emits
    one primitive (a rotation toward the next path cell, or MoveAhead). A
    blocked MoveAhead writes the target cell as non-free, so the next replan
    routes around it or declares the goal unreachable. Wide-scans on arrival
    and after every `scan_every` movement primitives. `budget` caps the
    primitives this call may emit; `occupancy_override` substitutes a fixed
    grid (ground truth) for the belief, for the oracle-navigation arm.
    """
    out = NavOutcome(status="budget_exhausted")
    if not world.mem.in_bounds(goal):
        out.status = "terminated_unreachable"
        return out
    world.mem.clear_intent()
    world.mem.mark_intent(goal)
    start_steps = world.primitive_steps
    since_scan = 0
    while True:
        if not world.budget_left() or (
            budget is not None and world.primitive_steps - start_steps >= budget
        ):
            out.status = "budget_exhausted"
            return out
        world.sense()
        world.note_free(world.agent.cell, True)
        if world.agent.cell == goal:
            out.trace += _wide_scan(world)
            out.status = "arrived"
            return out
        occ = occupancy_override if occupancy_override is not None \
            else world.mem.grid[:, :, FREE]
        path = astar(occ, world.agent.cell, goal)
        if path is None:
            out.status = "terminated_unreachable"
            return out
        out.planned_paths.append(path)
        nxt = path[1]
        dx, dy = nxt[0] - world.agent.cell[0], nxt[1] - world.agent.cell[1]
        want = HEADING_VECS.index((dx, dy))
        delta = (want - world.agent.heading) % 4
        if delta == 0:
            belief = world.mem.free_prob(nxt)
            step = world.do_primitive(Action.MOVE_AHEAD, belief_ahead=belief)
            if step.success:
                world.note_free(world.agent.cell, True)
            elif step.reason == "blocked":
                world.note_free(nxt, False)
        elif delta == 3:
            step = world.do_primitive(Action.ROTATE_LEFT)
        else:
            step = world.do_primitive(Action.ROTATE_RIGHT)
        out.trace.append(step)
        since_scan += 1
        if since_scan >= scan_every:
            since_scan = 0
            out.trace += _wide_scan(world)


def manipulate(world: EpisodeWorld, op: str) -> PrimitiveStep:
    """Open or close the angularly selected receptacle; a success runs one
    detector pass so newly revealed contents land in memory."""
    if op not in ("open", "close"):
        raise ValueError(f"bad manipulate op {op!r}")
    step = world.do_primitive(Action.OPEN if op == "open" else Action.CLOSE)
    if step.success:
        world.sense()
    return step


# ---- answer readout ----

EPSILON = 0.01


@dataclass(frozen=True)
class AnswerDistribution:
    choices: tuple[str, ...]
    probs: tuple[float, ...]

    def top1(self) -> str:
        return self.choices[int(np.argmax(self.probs))]


def _distribution(choices: tuple[str, ...], pick: str) -> AnswerDistribution:
    n = len(choices)
    probs = tuple((1.0 - EPSILON) if c == pick else EPSILON / (n - 1) for c in choices)
    return AnswerDistribution(choices, probs)


def answer_question(mem: SpatialMemory, question: Question,
                    tau: float | None = None) -> AnswerDistribution:
    """Deterministic threshold readout over the memory. Read-only.

    Existence: any cell above tau on the class channel. Counting: number of
    such cells, clamped. Containment: some cell above tau on both the object
    and the container-class channel (the 2-D same-cell conjunction).
    """
    t = mem.config.tau if tau is None else tau
    channels = mem.grid[:, :, :NUM_CLASSES]
    above = channels[:, :, CLASS_INDEX[question.object_class]] > t
    if question.qtype == EXISTENCE:
        pick = "yes" if bool(above.any()) else "no"
    elif question.qtype == COUNTING:
        pick = str(min(int(above.sum()), MAX_COUNT))
    elif question.qtype == CONTAINMENT:
        cont = channels[:, :, CLASS_INDEX[question.container_class]] > t
        pick = "yes" if bool((above & cont).any()) else "no"
    else:
        raise ValueError(question.qtype)
    return _distribution(question.choices, pick)


def answer_from_observation(det: Detections, question: Question) -> AnswerDistribution:
    """Memoryless readout from a single detector pass (baseline agents)."""
    obj_cells = {cell for class_id, cell in det.objects
                 if class_id == question.object_class}
    if question.qtype == EXISTENCE:
        pick = "yes" if obj_cells else "no"
    elif question.qtype == COUNTING:
        pick = str(min(len(obj_cells), MAX_COUNT))
    elif question.qtype == CONTAINMENT:
        cont_cells = {cell for class_id, cell, _o in det.receptacles
                      if class_id == question.container_class}
        pick = "yes" if obj_cells & cont_cells else "no"
    else:
        raise ValueError(question.qtype)
    return _distribution(question.choices, pick)


def ground_truth_memory(scene: Scene, config: MemoryConfig | None = None) -> SpatialMemory:
    """Fully-explored memory built from the scene itself: certainty on every
    channel, full coverage. The answerer's exactness reference."""
    mem = SpatialMemory(scene.layout.width, scene.layout.height,
                        config or MemoryConfig())
    mem.grid[:, :, FREE] = 0.0
    for x, y in scene.layout.free_cells:
        mem.grid[y, x, FREE] = 1.0
    mem.grid[:, :, COVERAGE] = 1.0
    for r in scene.receptacles:
        mem.grid[r.cell[1], r.cell[0], CLASS_INDEX[r.class_id]] = 1.0
        for o in list(r.contents) + list(r.surface):
            mem.grid[r.cell[1], r.cell[0], CLASS_INDEX[o.class_id]] = 1.0
    for cell, objs in scene.loose.items():
        for o in objs:
            mem.grid[cell[1], cell[0], CLASS_INDEX[o.class_id]] = 1.0
    return mem
