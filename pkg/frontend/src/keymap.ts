// Keyboard bindings for primitive control. Rotation and movement live on
// the arrows/WASD, pitch on R/F, manipulation on O/C. Enter opens the
// answer dialog rather than firing an action directly.

import { PRIMITIVE } from "./protocol.js";

const BINDINGS: Record<string, number> = {
  ArrowUp: PRIMITIVE.MOVE_AHEAD,
  w: PRIMITIVE.MOVE_AHEAD,
  ArrowLeft: PRIMITIVE.ROTATE_LEFT,
  a: PRIMITIVE.ROTATE_LEFT,
  ArrowRight: PRIMITIVE.ROTATE_RIGHT,
  d: PRIMITIVE.ROTATE_RIGHT,
  r: PRIMITIVE.LOOK_UP,
  f: PRIMITIVE.LOOK_DOWN,
  o: PRIMITIVE.OPEN,
  c: PRIMITIVE.CLOSE,
};

export function keyToPrimitive(key: string): number | null {
  const hit = BINDINGS[key.length === 1 ? key.toLowerCase() : key];
  return hit === undefined ? null : hit;
}

export function isAnswerKey(key: string): boolean {
  return key === "Enter";
}

export const KEY_HELP =
  "arrows/WASD move and turn, R/F look up/down, O/C open/close, Enter answer";
