// Play-session view model. Holds the most recent server message and derives
// the handful of flags the view needs (invalid flash, done banner). Nothing
// in here advances game state: validity, rewards, and answers all come from
// the server, so every transition below is "store what the server said".

import {
  ErrorMsg,
  PLANNER_ANSWER,
  PRIMITIVE,
  ResultMsg,
  ServerMsg,
  StateMsg,
} from "./protocol.js";

export type SessionPhase = "idle" | "playing" | "done";

export class SessionModel {
  phase: SessionPhase = "idle";
  state: StateMsg | null = null;
  result: ResultMsg | null = null;
  lastError: ErrorMsg | null = null;
  // set when the newest state reports more invalid actions than the previous
  // one; the view turns it into a shake/flash and clears it
  invalidFlash = false;
  connectionLost = false;

  get session(): string | null {
    return this.state ? this.state.session : null;
  }

  get control(): "planner" | "primitive" {
    return this.state ? this.state.control : "primitive";
  }

  // action index that carries the answer in the current control mode
  answerAction(): number {
    return this.control === "planner" ? PLANNER_ANSWER : PRIMITIVE.ANSWER;
  }

  apply(msg: ServerMsg): void {
    this.connectionLost = false;
    switch (msg.type) {
      case "state": {
        const prev = this.state;
        if (
          prev !== null &&
          this.phase === "playing" &&
          msg.step_counters.invalid_count > prev.step_counters.invalid_count
        ) {
          this.invalidFlash = true;
        }
        this.state = msg;
        this.phase = "playing";
        this.result = null;
        this.lastError = null;
        break;
      }
      case "result": {
        this.result = msg;
        // the result carries the final state body for one last render
        this.state = { type: "state", session: msg.session, ...msg.state };
        this.phase = "done";
        this.lastError = null;
        break;
      }
      case "error":
        this.lastError = msg;
        break;
      default:
        // items/replays/replay messages belong to other views
        break;
    }
  }

  // fetch failed; keep the current view intact and raise the banner
  markDisconnected(): void {
    this.connectionLost = true;
  }

  consumeInvalidFlash(): boolean {
    const v = this.invalidFlash;
    this.invalidFlash = false;
    return v;
  }

  clear(): void {
    this.phase = "idle";
    this.state = null;
    this.result = null;
    this.lastError = null;
    this.invalidFlash = false;
  }
}
