// Wire types for the episode server's JSON protocol, plus a small client
// for the one-request-per-call HTTP transport (POST /api). The browser is a
// thin client: every field here is produced server-side and rendered as-is.

export type Heading = "N" | "E" | "S" | "W";

// [[x, y], heading, pitch]
export type Pose = [number[], Heading, number];

export interface Question {
  qtype: string;
  object_class: string | null;
  container_class: string | null;
  text: string;
  choices: string[];
}

export interface EgoCell {
  cell: number[];
  ego: number[]; // [forward, lateral] in agent frame
  free: boolean;
}

export interface EgoReceptacle {
  class_id: string;
  cell: number[];
  ego: number[];
  open: boolean;
  openable: boolean;
}

export interface EgoObject {
  class_id: string;
  cell: number[];
  ego: number[];
}

export interface EgoView {
  pose: Pose;
  cells: EgoCell[];
  receptacles: EgoReceptacle[];
  objects: EgoObject[];
}

export interface MapMarker {
  cell: number[];
  class_id: string;
  p: number;
}

export interface TopdownMap {
  width: number;
  height: number;
  covered: number[][]; // [y][x], 1 where the agent has looked
  free_belief: number[][];
  markers: MapMarker[];
}

export interface StepCounters {
  planner_steps: number;
  primitive_steps: number;
  invalid_count: number;
  total_reward: number;
  coverage: number;
}

export interface StateMsg {
  type: "state";
  session: string;
  question: Question;
  control: "planner" | "primitive";
  pose: Pose;
  egocentric_view: EgoView;
  topdown_map: TopdownMap;
  last_reward: number;
  done: boolean;
  valid_actions: boolean[];
  action_labels: string[];
  step_counters: StepCounters;
}

export interface ResultMetrics {
  record_id: string;
  answer: string | null;
  expected: string;
  total_reward: number;
  planner_steps: number;
  primitive_steps: number;
  invalid_count: number;
  coverage: number;
}

export interface ResultMsg {
  type: "result";
  session: string;
  correct: boolean;
  metrics: ResultMetrics;
  state: Omit<StateMsg, "type" | "session">;
}

export interface ErrorMsg {
  type: "error";
  code: string;
  message: string;
}

export interface ItemRow {
  item_id: string;
  qtype: string;
  text: string;
  choices: string[];
  room_id: string;
  split: string;
  rooms: "seen" | "unseen";
}

export interface ItemsMsg {
  type: "items";
  items: ItemRow[];
}

export interface ReplayRow {
  log_id: string;
  agent: string;
  control: string;
  qtype: string;
  room_id: string;
  correct: boolean;
  planner_steps: number;
  primitive_steps: number;
  total_reward: number;
}

export interface ReplaysMsg {
  type: "replays";
  replays: ReplayRow[];
}

export type Phase = "init" | "planner" | "controller";

export interface ReplayFrame {
  index: number;
  command: number; // -1 for the initial frame
  phase: Phase;
  action: number | null;
  pose: Pose;
  coverage: number;
}

export interface ReplayCommand {
  action: number;
  label: string;
  reward: number;
  was_valid: boolean;
  pose: Pose;
  coverage: number;
  primitive_steps: number;
  answer: string | null;
  first_frame: number;
  last_frame: number;
}

export interface ReplayHeader {
  question: string;
  agent: string;
  control: string;
  room_id: string;
  answer: string | null;
  expected: string;
  correct: boolean;
  planner_steps: number;
  primitive_steps: number;
  invalid_count: number;
  total_reward: number;
  width: number;
  height: number;
}

export interface ReplayMsg {
  type: "replay";
  log_id: string;
  total_frames: number;
  start: number;
  frames: ReplayFrame[];
  commands: ReplayCommand[];
  consistent: boolean;
  header: ReplayHeader;
}

export type ServerMsg =
  | StateMsg
  | ResultMsg
  | ErrorMsg
  | ItemsMsg
  | ReplaysMsg
  | ReplayMsg;

export function isError(msg: ServerMsg): msg is ErrorMsg {
  return msg.type === "error";
}

// Primitive action indices, matching the server's low-level order.
export const PRIMITIVE = {
  MOVE_AHEAD: 0,
  ROTATE_LEFT: 1,
  ROTATE_RIGHT: 2,
  LOOK_UP: 3,
  LOOK_DOWN: 4,
  OPEN: 5,
  CLOSE: 6,
  ANSWER: 7,
} as const;

// In planner control the answer command sits at the end of the 32 actions.
export const PLANNER_ANSWER = 31;

export class ApiClient {
  private url: string;

  constructor(url: string = "/api") {
    this.url = url;
  }

  async request(msg: Record<string, unknown>): Promise<ServerMsg> {
    const resp = await fetch(this.url, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(msg),
    });
    return (await resp.json()) as ServerMsg;
  }

  listItems(): Promise<ServerMsg> {
    return this.request({ type: "list_items" });
  }

  listReplays(): Promise<ServerMsg> {
    return this.request({ type: "list_replays" });
  }

  reset(
    itemId: string,
    control: "planner" | "primitive",
    agent: string,
    seed?: number,
  ): Promise<ServerMsg> {
    const msg: Record<string, unknown> = {
      type: "reset",
      item_id: itemId,
      control,
      agent,
    };
    if (seed !== undefined) msg.seed = seed;
    return this.request(msg);
  }

  step(session: string, action: number, answer?: string): Promise<ServerMsg> {
    const msg: Record<string, unknown> = { type: "step", session, action };
    if (answer !== undefined) msg.answer = answer;
    return this.request(msg);
  }

  getReplay(logId: string, start: number, count: number): Promise<ServerMsg> {
    return this.request({ type: "get_replay", log_id: logId, start, count });
  }
}
