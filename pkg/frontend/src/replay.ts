// Replay view model: assembles paged frames from get_replay responses and
// answers the scrubber's questions (current pose, trail so far, visited
// cells, which command a frame belongs to). All data is server-logged; the
// only arithmetic here is summing the per-command rewards for the strip.

import { Pose, ReplayCommand, ReplayFrame, ReplayHeader, ReplayMsg } from "./protocol.js";

export const PAGE_SIZE = 400;

export class ReplayModel {
  logId: string;
  header: ReplayHeader;
  commands: ReplayCommand[];
  consistent: boolean;
  totalFrames: number;
  frames: (ReplayFrame | undefined)[];
  index = 0;

  constructor(first: ReplayMsg) {
    this.logId = first.log_id;
    this.header = first.header;
    this.commands = first.commands;
    this.consistent = first.consistent;
    this.totalFrames = first.total_frames;
    this.frames = new Array(first.total_frames);
    this.addPage(first);
  }

  addPage(msg: ReplayMsg): void {
    for (let i = 0; i < msg.frames.length; i++) {
      this.frames[msg.start + i] = msg.frames[i];
    }
  }

  get complete(): boolean {
    for (let i = 0; i < this.totalFrames; i++) {
      if (this.frames[i] === undefined) return false;
    }
    return true;
  }

  // first missing page start, or null when every frame is present
  nextMissingPage(): number | null {
    for (let i = 0; i < this.totalFrames; i++) {
      if (this.frames[i] === undefined) return i;
    }
    return null;
  }

  setIndex(i: number): void {
    this.index = Math.max(0, Math.min(this.totalFrames - 1, Math.floor(i)));
  }

  current(): ReplayFrame | undefined {
    return this.frames[this.index];
  }

  // poses of frames 0..upTo inclusive, tagged with the phase of the step
  // that produced them (the segment ending at each pose)
  trail(upTo: number): { pose: Pose; phase: string }[] {
    const out: { pose: Pose; phase: string }[] = [];
    for (let i = 0; i <= upTo && i < this.totalFrames; i++) {
      const f = this.frames[i];
      if (f === undefined) break;
      out.push({ pose: f.pose, phase: f.phase });
    }
    return out;
  }

  // unique cells the agent has stood in up to the given frame
  visitedCells(upTo: number): Set<string> {
    const seen = new Set<string>();
    for (let i = 0; i <= upTo && i < this.totalFrames; i++) {
      const f = this.frames[i];
      if (f === undefined) break;
      seen.add(`${f.pose[0][0]},${f.pose[0][1]}`);
    }
    return seen;
  }

  // command the current frame belongs to (null on the initial frame)
  commandAt(frameIndex: number): ReplayCommand | null {
    const f = this.frames[frameIndex];
    if (f === undefined || f.command < 0) return null;
    return this.commands[f.command] ?? null;
  }

  // reward accumulated through the given command index
  cumulativeReward(commandIndex: number): number {
    let total = 0;
    for (let k = 0; k <= commandIndex && k < this.commands.length; k++) {
      total += this.commands[k].reward;
    }
    return total;
  }

  // cross-check: do the logged steps add up to the stored record's totals?
  finalCountersMatch(): boolean {
    const last = this.commands[this.commands.length - 1];
    if (last === undefined) return this.commands.length === this.header.planner_steps;
    const totalReward = this.cumulativeReward(this.commands.length - 1);
    const invalid = this.commands.filter((c) => !c.was_valid).length;
    return (
      this.commands.length === this.header.planner_steps &&
      last.primitive_steps === this.header.primitive_steps &&
      invalid === this.header.invalid_count &&
      Math.abs(totalReward - this.header.total_reward) < 1e-9
    );
  }
}
