// DOM wiring for live play and replay browsing. One session per tab; one
// request in flight at a time so server responses apply in arrival order.

import { ApiClient, ItemRow, ReplayMsg, ServerMsg, StateMsg } from "./protocol.js";
import { SessionModel } from "./session.js";
import { PAGE_SIZE, ReplayModel } from "./replay.js";
import { isAnswerKey, KEY_HELP, keyToPrimitive } from "./keymap.js";
import {
  drawEgo,
  drawReplayMap,
  drawRewardStrip,
  drawTopdown,
  stripHit,
} from "./render.js";

const $ = <T extends HTMLElement>(id: string): T => {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing element #${id}`);
  return el as T;
};

const banner = $("banner");
const itemSelect = $<HTMLSelectElement>("item-select");
const controlSelect = $<HTMLSelectElement>("control-select");
const playPanel = $("play");
const questionText = $("question-text");
const verdict = $("verdict");
const egoCanvas = $<HTMLCanvasElement>("ego");
const mapCanvas = $<HTMLCanvasElement>("map");
const countersDiv = $("counters");
const actionsDiv = $("actions");
const answerDialog = $("answer-dialog");
const answerChoices = $("answer-choices");
const replayTable = $<HTMLTableElement>("replay-list");
const replayPanel = $("replay-view");
const replayError = $("replay-error");
const replayBody = $("replay-body");
const replayHeaderP = $("replay-header");
const replayCanvas = $<HTMLCanvasElement>("replay-map");
const scrubber = $<HTMLInputElement>("scrubber");
const frameLabel = $("frame-label");
const stripCanvas = $<HTMLCanvasElement>("strip");
const commandLabel = $("command-label");
const replayTotals = $("replay-totals");
const playBtn = $<HTMLButtonElement>("replay-play");

$("key-help").textContent = KEY_HELP;

const client = new ApiClient("/api");
const session = new SessionModel();
let items: ItemRow[] = [];
let replay: ReplayModel | null = null;
let replayTimer: number | null = null;
let busy = false;

// every server round-trip goes through here so the reconnect banner and the
// one-at-a-time rule live in a single place
async function call(msg: Record<string, unknown>): Promise<ServerMsg | null> {
  if (busy) return null;
  busy = true;
  try {
    const reply = await client.request(msg);
    banner.classList.add("hidden");
    return reply;
  } catch {
    session.markDisconnected();
    banner.classList.remove("hidden");
    return null;
  } finally {
    busy = false;
  }
}

// ---- setup panel ----

async function loadItems(): Promise<void> {
  const reply = await call({ type: "list_items" });
  if (!reply || reply.type !== "items") return;
  items = reply.items;
  itemSelect.innerHTML = "";
  for (const it of items) {
    const opt = document.createElement("option");
    opt.value = it.item_id;
    opt.textContent = `[${it.qtype}] ${it.text} (${it.room_id}, ${it.split})`;
    itemSelect.appendChild(opt);
  }
}

async function startSession(): Promise<void> {
  if (!itemSelect.value) return;
  const control = controlSelect.value === "planner" ? "planner" : "primitive";
  const reply = await call({
    type: "reset",
    item_id: itemSelect.value,
    control,
    agent: "human",
  });
  if (!reply) return;
  session.clear();
  session.apply(reply);
  renderSession();
}

$("start-btn").onclick = () => void startSession();
$("retry-btn").onclick = () => void loadItems();
$("replays-refresh").onclick = () => void loadReplays();

// ---- live session ----

async function act(action: number, answer?: string): Promise<void> {
  if (session.session === null || session.phase !== "playing") return;
  const msg: Record<string, unknown> = {
    type: "step",
    session: session.session,
    action,
  };
  if (answer !== undefined) msg.answer = answer;
  const reply = await call(msg);
  if (!reply) return;
  session.apply(reply);
  renderSession();
}

function renderSession(): void {
  const st = session.state;
  if (!st) return;
  playPanel.classList.remove("hidden");
  questionText.textContent = st.question.text;

  if (session.consumeInvalidFlash()) {
    playPanel.classList.remove("shake");
    // restart the animation even when two invalid steps come back to back
    void playPanel.offsetWidth;
    playPanel.classList.add("shake");
  }

  const ego = egoCanvas.getContext("2d");
  if (ego) drawEgo(ego, st.egocentric_view, egoCanvas.width, egoCanvas.height);
  const mapCtx = mapCanvas.getContext("2d");
  if (mapCtx) {
    const px = Math.floor(
      Math.min(mapCanvas.width / st.topdown_map.width,
               mapCanvas.height / st.topdown_map.height));
    mapCtx.fillStyle = "#101218";
    mapCtx.fillRect(0, 0, mapCanvas.width, mapCanvas.height);
    drawTopdown(mapCtx, st.topdown_map, st.pose, Math.max(4, px));
  }

  const c = st.step_counters;
  countersDiv.innerHTML =
    `<span>planner <b>${c.planner_steps}</b></span>` +
    `<span>primitive <b>${c.primitive_steps}</b></span>` +
    `<span>invalid <b>${c.invalid_count}</b></span>` +
    `<span>reward <b>${c.total_reward.toFixed(2)}</b></span>` +
    `<span>coverage <b>${(c.coverage * 100).toFixed(1)}%</b></span>` +
    `<span>last <b>${st.last_reward.toFixed(2)}</b></span>`;

  renderActions(st);

  if (session.phase === "done" && session.result) {
    const r = session.result;
    verdict.textContent = r.correct
      ? `correct! answered "${r.metrics.answer}"`
      : `incorrect: answered "${r.metrics.answer}", expected "${r.metrics.expected}"`;
    verdict.className = `verdict ${r.correct ? "good" : "bad"}`;
    verdict.classList.remove("hidden");
    void loadReplays();
  } else {
    verdict.classList.add("hidden");
  }
}

function renderActions(st: StateMsg): void {
  actionsDiv.innerHTML = "";
  const answerIdx = session.answerAction();
  st.action_labels.forEach((label, i) => {
    const btn = document.createElement("button");
    btn.textContent = label;
    if (!st.valid_actions[i]) btn.classList.add("invalid");
    if (i === answerIdx) btn.classList.add("answer");
    btn.onclick = () => {
      if (i === answerIdx) openAnswerDialog();
      else void act(i);
    };
    actionsDiv.appendChild(btn);
  });
}

function openAnswerDialog(): void {
  const st = session.state;
  if (!st || session.phase !== "playing") return;
  answerChoices.innerHTML = "";
  st.question.choices.forEach((choice, i) => {
    const btn = document.createElement("button");
    btn.textContent = `${i + 1}. ${choice}`;
    btn.onclick = () => {
      answerDialog.classList.add("hidden");
      void act(session.answerAction(), choice);
    };
    answerChoices.appendChild(btn);
  });
  answerDialog.classList.remove("hidden");
}

$("answer-cancel").onclick = () => answerDialog.classList.add("hidden");

document.addEventListener("keydown", (ev) => {
  if (!answerDialog.classList.contains("hidden")) {
    if (ev.key === "Escape") answerDialog.classList.add("hidden");
    const n = parseInt(ev.key, 10);
    const st = session.state;
    if (st && n >= 1 && n <= st.question.choices.length) {
      answerDialog.classList.add("hidden");
      void act(session.answerAction(), st.question.choices[n - 1]);
    }
    return;
  }
  if (session.phase !== "playing" || session.control !== "primitive") return;
  if (ev.target instanceof HTMLSelectElement) return;
  if (isAnswerKey(ev.key)) {
    ev.preventDefault();
    openAnswerDialog();
    return;
  }
  const action = keyToPrimitive(ev.key);
  if (action !== null) {
    ev.preventDefault();
    void act(action);
  }
});

// ---- replay browser ----

async function loadReplays(): Promise<void> {
  const reply = await call({ type: "list_replays" });
  if (!reply || reply.type !== "replays") return;
  const tbody = replayTable.tBodies[0];
  tbody.innerHTML = "";
  for (const row of reply.replays) {
    const tr = document.createElement("tr");
    tr.innerHTML =
      `<td>${row.log_id}</td><td>${row.agent}</td><td>${row.qtype}</td>` +
      `<td>${row.correct ? "yes" : "no"}</td>` +
      `<td>${row.planner_steps}/${row.primitive_steps}</td>` +
      `<td>${row.total_reward.toFixed(2)}</td>`;
    tr.onclick = () => void openReplay(row.log_id);
    tbody.appendChild(tr);
  }
}

async function openReplay(logId: string): Promise<void> {
  stopPlayback();
  replayPanel.classList.remove("hidden");
  replayError.classList.add("hidden");
  replayBody.classList.add("hidden");
  const first = await call({
    type: "get_replay", log_id: logId, start: 0, count: PAGE_SIZE,
  });
  if (!first) return;
  if (first.type === "error") {
    replayError.textContent = `${first.code}: ${first.message}`;
    replayError.classList.remove("hidden");
    return;
  }
  if (first.type !== "replay") return;
  replay = new ReplayModel(first);
  // page in the rest before enabling the scrubber
  let start = replay.nextMissingPage();
  while (start !== null) {
    const more = await call({
      type: "get_replay", log_id: logId, start, count: PAGE_SIZE,
    });
    if (!more || more.type !== "replay") return;
    replay.addPage(more);
    start = replay.nextMissingPage();
  }
  const h = replay.header;
  replayHeaderP.textContent =
    `${logId} — ${h.agent}/${h.control} in ${h.room_id} — "${h.question}" ` +
    `answered "${h.answer}" (expected "${h.expected}", ` +
    `${h.correct ? "correct" : "incorrect"})` +
    (replay.consistent ? "" : " — WARNING: log diverged on replay");
  replayTotals.textContent =
    `record totals: ${h.planner_steps} commands, ${h.primitive_steps} primitives, ` +
    `${h.invalid_count} invalid, reward ${h.total_reward.toFixed(2)}` +
    (replay.finalCountersMatch() ? "" : " — MISMATCH vs logged steps");
  scrubber.max = String(replay.totalFrames - 1);
  replay.setIndex(0);
  scrubber.value = "0";
  replayBody.classList.remove("hidden");
  renderReplay();
}

function renderReplay(): void {
  if (!replay) return;
  const ctx = replayCanvas.getContext("2d");
  if (ctx) {
    const px = Math.floor(
      Math.min(replayCanvas.width / replay.header.width,
               replayCanvas.height / replay.header.height));
    ctx.fillStyle = "#101218";
    ctx.fillRect(0, 0, replayCanvas.width, replayCanvas.height);
    drawReplayMap(ctx, replay, Math.max(4, px));
  }
  const frame = replay.current();
  const cmd = replay.commandAt(replay.index);
  const cmdIndex = frame ? frame.command : -1;
  frameLabel.textContent = frame
    ? `frame ${frame.index}/${replay.totalFrames - 1} — ${frame.phase}` +
      ` — coverage ${(frame.coverage * 100).toFixed(1)}%`
    : "";
  commandLabel.textContent = cmd
    ? `command ${cmdIndex}: ${cmd.label} ` +
      `(reward ${cmd.reward.toFixed(2)}${cmd.was_valid ? "" : ", invalid"})` +
      ` — cumulative ${replay.cumulativeReward(cmdIndex).toFixed(2)}`
    : "before the first command";
  const strip = stripCanvas.getContext("2d");
  if (strip) {
    drawRewardStrip(strip, replay.commands, cmdIndex,
                    stripCanvas.width, stripCanvas.height);
  }
}

scrubber.oninput = () => {
  if (!replay) return;
  replay.setIndex(Number(scrubber.value));
  renderReplay();
};

stripCanvas.onclick = (ev) => {
  if (!replay || replay.commands.length === 0) return;
  const rect = stripCanvas.getBoundingClientRect();
  const k = stripHit(ev.clientX - rect.left, rect.width, replay.commands.length);
  replay.setIndex(replay.commands[k].first_frame);
  scrubber.value = String(replay.index);
  renderReplay();
};

function stopPlayback(): void {
  if (replayTimer !== null) {
    window.clearInterval(replayTimer);
    replayTimer = null;
  }
  playBtn.textContent = "play";
}

playBtn.onclick = () => {
  if (!replay) return;
  if (replayTimer !== null) {
    stopPlayback();
    return;
  }
  if (replay.index >= replay.totalFrames - 1) replay.setIndex(0);
  playBtn.textContent = "pause";
  replayTimer = window.setInterval(() => {
    if (!replay) return stopPlayback();
    if (replay.index >= replay.totalFrames - 1) return stopPlayback();
    replay.setIndex(replay.index + 1);
    scrubber.value = String(replay.index);
    renderReplay();
  }, 90);
};

$("replay-close").onclick = () => {
  stopPlayback();
  replayPanel.classList.add("hidden");
  replay = null;
};

// ---- boot ----

void loadItems();
void loadReplays();
