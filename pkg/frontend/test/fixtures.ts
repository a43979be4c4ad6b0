// Hand-built protocol payloads for the model tests.

import {
  ReplayCommand,
  ReplayFrame,
  ReplayHeader,
  ReplayMsg,
  StateMsg,
  StepCounters,
} from "../src/protocol.js";

export function mkCounters(over: Partial<StepCounters> = {}): StepCounters {
  return {
    planner_steps: 0,
    primitive_steps: 0,
    invalid_count: 0,
    total_reward: 0,
    coverage: 0,
    ...over,
  };
}

export function mkState(over: Partial<StateMsg> = {}): StateMsg {
  return {
    type: "state",
    session: "tcp-1",
    question: {
      qtype: "existence",
      object_class: "apple",
      container_class: null,
      text: "is there an apple in the room?",
      choices: ["yes", "no"],
    },
    control: "primitive",
    pose: [[2, 3], "N", 1],
    egocentric_view: {
      pose: [[2, 3], "N", 1],
      cells: [{ cell: [2, 2], ego: [1, 0], free: true }],
      receptacles: [],
      objects: [],
    },
    topdown_map: {
      width: 4,
      height: 4,
      covered: [
        [0, 0, 0, 0],
        [0, 0, 0, 0],
        [0, 0, 1, 0],
        [0, 0, 1, 0],
      ],
      free_belief: [
        [0.5, 0.5, 0.5, 0.5],
        [0.5, 0.5, 0.5, 0.5],
        [0.5, 0.5, 1.0, 0.5],
        [0.5, 0.5, 1.0, 0.5],
      ],
      markers: [],
    },
    last_reward: 0,
    done: false,
    valid_actions: [true, true, true, true, true, false, false, true],
    action_labels: [
      "move_ahead", "rotate_left", "rotate_right", "look_up",
      "look_down", "open", "close", "answer",
    ],
    step_counters: mkCounters(),
    ...over,
  };
}

function frame(
  index: number,
  command: number,
  phase: ReplayFrame["phase"],
  cell: number[],
  coverage: number,
): ReplayFrame {
  return { index, command, phase, action: phase === "init" ? null : 0,
           pose: [cell, "N", 1], coverage };
}

function command(over: Partial<ReplayCommand>): ReplayCommand {
  return {
    action: 0,
    label: "move_ahead",
    reward: -0.01,
    was_valid: true,
    pose: [[0, 0], "N", 1],
    coverage: 0,
    primitive_steps: 1,
    answer: null,
    first_frame: 1,
    last_frame: 1,
    ...over,
  };
}

// five frames: init, a two-primitive navigate command, one rotate, the answer
export const FRAMES: ReplayFrame[] = [
  frame(0, -1, "init", [1, 1], 0.0),
  frame(1, 0, "planner", [1, 2], 0.1),
  frame(2, 0, "controller", [1, 3], 0.2),
  frame(3, 1, "planner", [1, 3], 0.25),
  frame(4, 2, "planner", [1, 3], 0.25),
];

export const COMMANDS: ReplayCommand[] = [
  command({ label: "navigate(+0,+2)", reward: 1.99, primitive_steps: 2,
            first_frame: 1, last_frame: 2, coverage: 0.2 }),
  command({ action: 2, label: "rotate_right", reward: -0.51, was_valid: false,
            primitive_steps: 3, first_frame: 3, last_frame: 3, coverage: 0.25 }),
  command({ action: 7, label: "answer", reward: 9.99, answer: "yes",
            primitive_steps: 3, first_frame: 4, last_frame: 4, coverage: 0.25 }),
];

export function mkHeader(over: Partial<ReplayHeader> = {}): ReplayHeader {
  return {
    question: "is there an apple in the room?",
    agent: "human",
    control: "primitive",
    room_id: "small_00",
    answer: "yes",
    expected: "yes",
    correct: true,
    planner_steps: 3,
    primitive_steps: 3,
    invalid_count: 1,
    total_reward: 1.99 - 0.51 + 9.99,
    width: 5,
    height: 5,
    ...over,
  };
}

export function mkReplayMsg(over: Partial<ReplayMsg> = {}): ReplayMsg {
  return {
    type: "replay",
    log_id: "q0.human.7",
    total_frames: FRAMES.length,
    start: 0,
    frames: FRAMES,
    commands: COMMANDS,
    consistent: true,
    header: mkHeader(),
    ...over,
  };
}
