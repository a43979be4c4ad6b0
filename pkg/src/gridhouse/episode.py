"""Episode state machine: the 32-action planner command surface, reward
accounting, validity masks, and per-step logging.

One Episode owns one (scene, question) pair from reset to the answer. Planner
control dispatches the 32 high-level actions to the controllers; primitive
control (the human-play path) exposes the seven low-level actions plus an
answer submission, with each low-level command counted as one planner command
for reward and metric purposes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .controllers import (
    DetectorModel,
    EpisodeWorld,
    answer_from_observation,
    answer_question,
    manipulate,
    navigate,
    scan,
)
from .geometry import ego_to_world
from .memory import MemoryConfig, SpatialMemory
from .questions import Question, answer_of
from .world import (
    Action,
    AgentState,
    Layout,
    Scene,
    initial_agent,
    load_scene,
    valid_low_level,
)


class EpisodeFinished(RuntimeError):
    """A step was attempted on an episode that already ended."""


# ---- planner action space ----

NAVIGATE_GOALS = tuple((f, l) for f in range(1, 6) for l in range(-2, 3))

SCAN_UP = 25
SCAN_DOWN = 26
SCAN_LEFT = 27
SCAN_RIGHT = 28
OPEN_ACTION = 29
CLOSE_ACTION = 30
ANSWER_ACTION = 31
N_PLANNER_ACTIONS = 32

_SCAN_DIRS = {SCAN_UP: "up", SCAN_DOWN: "down", SCAN_LEFT: "left", SCAN_RIGHT: "right"}


@dataclass(frozen=True)
class PlannerAction:
    kind: str  # navigate | scan | manipulate | answer
    forward: int = 0
    lateral: int = 0
    direction: str | None = None
    op: str | None = None

    def label(self) -> str:
        if self.kind == "navigate":
            return f"navigate({self.forward:+d},{self.lateral:+d})"
        if self.kind == "scan":
            return f"scan({self.direction})"
        if self.kind == "manipulate":
            return self.op
        return "answer"


def index_to_action(i: int) -> PlannerAction:
    if 0 <= i < 25:
        f, l = NAVIGATE_GOALS[i]
        return PlannerAction("navigate", forward=f, lateral=l)
    if i in _SCAN_DIRS:
        return PlannerAction("scan", direction=_SCAN_DIRS[i])
    if i == OPEN_ACTION:
        return PlannerAction("manipulate", op="open")
    if i == CLOSE_ACTION:
        return PlannerAction("manipulate", op="close")
    if i == ANSWER_ACTION:
        return PlannerAction("answer")
    raise ValueError(f"planner action index {i} out of range")


def action_to_index(a: PlannerAction) -> int:
    if a.kind == "navigate":
        return (a.forward - 1) * 5 + (a.lateral + 2)
    if a.kind == "scan":
        return {v: k for k, v in _SCAN_DIRS.items()}[a.direction]
    if a.kind == "manipulate":
        return OPEN_ACTION if a.op == "open" else CLOSE_ACTION
    if a.kind == "answer":
        return ANSWER_ACTION
    raise ValueError(f"bad planner action {a!r}")


PLANNER_ACTION_LABELS = tuple(index_to_action(i).label() for i in range(N_PLANNER_ACTIONS))


# ---- rewards ----

@dataclass(frozen=True)
class RewardConfig:
    r_answer: float = 10.0
    c_time: float = 0.01
    c_invalid: float = 1.0
    c_coverage: float = 10.0
    max_planner_steps: int = 100
    max_primitive_steps: int = 2000

    def __post_init__(self):
        for name in ("r_answer", "c_time", "c_invalid", "c_coverage"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.max_planner_steps < 1 or self.max_primitive_steps < 1:
            raise ValueError("step caps must be positive")


@dataclass
class StepLog:
    action: int
    label: str
    reward: float
    was_valid: bool
    pose: tuple  # (cell, heading, pitch) after the step
    coverage: float
    primitive_steps: int
    answer: str | None = None


class Episode:
    """Live episode: scene + agent + memory + budgets + trajectory log.

    `control` picks the command surface: "planner" steps the 32 high-level
    actions, "primitive" steps the 7 low-level actions (plus submit_answer).
    The primitive trace records every low-level action actually executed, in
    order, so any episode replays through the world alone.
    """

    def __init__(self, layout: Layout, config, question: Question, *,
                 reward: RewardConfig | None = None,
                 detector: DetectorModel | None = None,
                 mem_config: MemoryConfig | None = None,
                 seed: int = 0,
                 scan_every: int = 8,
                 control: str = "planner",
                 oracle_navigation: bool = False,
                 answer_mode: str = "memory"):
        if control not in ("planner", "primitive"):
            raise ValueError(f"bad control mode {control!r}")
        if answer_mode not in ("memory", "observation"):
            raise ValueError(f"bad answer mode {answer_mode!r}")
        self.layout = layout
        self.config = config
        self.question = question
        self.reward = reward or RewardConfig()
        self.scan_every = scan_every
        self.control = control
        self.oracle_navigation = oracle_navigation
        self.answer_mode = answer_mode
        self.seed = seed
        self.expected_answer = answer_of(layout, config, question)

        scene = load_scene(layout, config)
        agent = initial_agent(scene)
        mem = SpatialMemory(layout.width, layout.height,
                            mem_config or MemoryConfig())
        rng = np.random.default_rng(seed)
        self.world = EpisodeWorld(scene, agent, mem, detector or DetectorModel(), rng)
        self.world.max_primitive_steps = self.reward.max_primitive_steps
        self.primitive_trace: list[int] = []
        self.inspected_cells: set[tuple[int, int]] = set()
        self.last_detections = None
        self.world.on_primitive = self._on_primitive
        self.world.on_detect = self._on_detect
        self._free_cells = sorted(layout.free_cells)
        self._truth_occ = None

        self.planner_steps = 0
        self.invalid_count = 0
        self.total_reward = 0.0
        self.done = False
        self.answer_given: str | None = None
        self.correct: bool | None = None
        self.log: list[StepLog] = []
        self.last_action: int | None = None
        self.last_success = True

        # agents start with one free look at the spawn pose
        self.world.sense()

    # -- plumbing --

    @property
    def scene(self) -> Scene:
        return self.world.scene

    @property
    def agent(self) -> AgentState:
        return self.world.agent

    @property
    def mem(self) -> SpatialMemory:
        return self.world.mem

    def _on_primitive(self, step) -> None:
        self.primitive_trace.append(int(step.action))

    def _on_detect(self, det) -> None:
        self.last_detections = det
        # only cells inside the write window actually reached memory
        footprint = {c for _f, _l, c in self.mem.window_cells(det.pose)}
        self.inspected_cells.update(c for c in det.inspected if c in footprint)

    def coverage(self) -> float:
        return self.mem.coverage_fraction(self._free_cells)

    def truth_occupancy(self) -> np.ndarray:
        if self._truth_occ is None:
            occ = np.zeros((self.layout.height, self.layout.width))
            for x, y in self.layout.free_cells:
                occ[y, x] = 1.0
            self._truth_occ = occ
        return self._truth_occ

    # -- validity --

    def valid_actions(self) -> np.ndarray:
        """Ground-truth 32-action mask; the validity head's training target."""
        mask = np.zeros(N_PLANNER_ACTIONS, dtype=bool)
        agent = self.agent
        for i, (f, l) in enumerate(NAVIGATE_GOALS):
            goal = ego_to_world(agent.cell, agent.heading, f, l)
            mask[i] = self.layout.is_free(goal) and goal != agent.cell
        low = valid_low_level(self.scene, agent)
        mask[SCAN_UP] = low[Action.LOOK_UP]
        mask[SCAN_DOWN] = low[Action.LOOK_DOWN]
        mask[SCAN_LEFT] = True
        mask[SCAN_RIGHT] = True
        mask[OPEN_ACTION] = low[Action.OPEN]
        mask[CLOSE_ACTION] = low[Action.CLOSE]
        mask[ANSWER_ACTION] = True
        return mask

    # -- answering --

    def _readout(self) -> str:
        if self.answer_mode == "observation":
            return answer_from_observation(self.last_detections, self.question).top1()
        return answer_question(self.mem, self.question).top1()

    def _finish_with_answer(self, answer: str) -> float:
        self.answer_given = answer
        self.correct = answer == self.expected_answer
        self.done = True
        return self.reward.r_answer if self.correct else -self.reward.r_answer

    def _cap_hit(self) -> bool:
        return (self.planner_steps >= self.reward.max_planner_steps
                or self.world.primitive_steps >= self.reward.max_primitive_steps)

    # -- planner control --

    def step(self, action_index: int, answer_choice: str | None = None):
        """Execute one planner action. Returns (reward, done, info).

        Invalid actions are executed anyway and penalized. The episode ends on
        Answer or when a step cap is hit; a cap-forced end scores as an
        incorrect answer (reward and metrics both).
        """
        if self.done:
            raise EpisodeFinished("episode is over")
        if self.control != "planner":
            raise ValueError("planner step on a primitive-control episode")
        if not 0 <= action_index < N_PLANNER_ACTIONS:
            raise ValueError(f"planner action index {action_index} out of range")
        action = index_to_action(action_index)
        was_valid = bool(self.valid_actions()[action_index])
        cov_before = self.coverage()
        reward = -self.reward.c_time
        if not was_valid:
            reward -= self.reward.c_invalid

        answer = None
        if action.kind == "navigate":
            goal = ego_to_world(self.agent.cell, self.agent.heading,
                                action.forward, action.lateral)
            override = self.truth_occupancy() if self.oracle_navigation else None
            nav = navigate(self.world, goal, scan_every=self.scan_every,
                           occupancy_override=override)
            outcome_ok = nav.status == "arrived"
        elif action.kind == "scan":
            step = scan(self.world, action.direction)
            outcome_ok = step.success
        elif action.kind == "manipulate":
            step = manipulate(self.world, action.op)
            outcome_ok = step.success
        else:
            answer = answer_choice if answer_choice is not None else self._readout()
            reward += self._finish_with_answer(answer)
            outcome_ok = True

        self.planner_steps += 1
        if not was_valid:
            self.invalid_count += 1
        reward += self.reward.c_coverage * (self.coverage() - cov_before)

        if not self.done and self._cap_hit():
            # forced end counts as an incorrect answer
            reward -= self.reward.r_answer
            self.correct = False
            self.done = True

        self.total_reward += reward
        self.last_action = action_index
        self.last_success = outcome_ok
        self.log.append(StepLog(
            action=action_index, label=action.label(), reward=reward,
            was_valid=was_valid,
            pose=(self.agent.cell, self.agent.heading, self.agent.pitch),
            coverage=self.coverage(),
            primitive_steps=self.world.primitive_steps,
            answer=answer,
        ))
        return reward, self.done, {"was_valid": was_valid, "answer": answer,
                                   "correct": self.correct}

    # -- primitive control --

    def step_primitive(self, action: int):
        """Execute one low-level action (human/server path). Each command
        counts as one planner command for reward and metric purposes."""
        if self.done:
            raise EpisodeFinished("episode is over")
        if self.control != "primitive":
            raise ValueError("primitive step on a planner-control episode")
        act = Action(action)
        was_valid = bool(valid_low_level(self.scene, self.agent)[act])
        cov_before = self.coverage()
        reward = -self.reward.c_time
        if not was_valid:
            reward -= self.reward.c_invalid
        step = self.world.do_primitive(act)
        self.world.sense()
        self.planner_steps += 1
        if not was_valid:
            self.invalid_count += 1
        reward += self.reward.c_coverage * (self.coverage() - cov_before)
        if not self.done and self._cap_hit():
            reward -= self.reward.r_answer
            self.correct = False
            self.done = True
        self.total_reward += reward
        self.last_action = int(act)
        self.last_success = step.success
        self.log.append(StepLog(
            action=int(act), label=act.name.lower(), reward=reward,
            was_valid=was_valid,
            pose=(self.agent.cell, self.agent.heading, self.agent.pitch),
            coverage=self.coverage(),
            primitive_steps=self.world.primitive_steps,
        ))
        return reward, self.done, {"was_valid": was_valid, "success": step.success}

    def submit_answer(self, choice: str):
        """Answer and end a primitive-control episode."""
        if self.done:
            raise EpisodeFinished("episode is over")
        if choice not in self.question.choices:
            raise ValueError(f"{choice!r} is not one of {self.question.choices}")
        reward = -self.reward.c_time
        reward += self._finish_with_answer(choice)
        self.planner_steps += 1
        self.total_reward += reward
        self.log.append(StepLog(
            action=ANSWER_ACTION, label="answer", reward=reward, was_valid=True,
            pose=(self.agent.cell, self.agent.heading, self.agent.pitch),
            coverage=self.coverage(),
            primitive_steps=self.world.primitive_steps,
            answer=choice,
        ))
        return reward, True, {"was_valid": True, "answer": choice,
                              "correct": self.correct}


def valid_planner_actions(episode: Episode) -> np.ndarray:
    return episode.valid_actions()
