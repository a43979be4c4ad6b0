"""Wire service exposing episodes to external clients and the browser UI.

Two transports share one session table: length-prefixed JSON frames over a
persistent TCP connection, and an equivalent HTTP one-shot mode (POST /api,
same message bodies, session id carried in a "session" field). The HTTP side
also serves the static UI assets.

Every request gets exactly one response; malformed input comes back as an
error message, never a dropped connection. Completed episodes are stored as
EpisodeRecords tagged with the client's agent name ("human" for the UI).
"""

from __future__ import annotations

import glob
import json
import mimetypes
import os
import socket
import socketserver
import struct
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from .config import RunConfig
from .episode import (
    ANSWER_ACTION,
    Episode,
    EpisodeFinished,
    N_PLANNER_ACTIONS,
    PLANNER_ACTION_LABELS,
)
from .geometry import world_to_ego
from .harness import (
    _episode_seed,
    build_record,
    build_world,
    load_episode_log,
    replay_frames,
    save_episode_log,
)
from .memory import COVERAGE, FREE, MemoryConfig
from .questions import question_to_json
from .world import Action, ALL_CLASSES, OPENABLE_CLASSES, valid_low_level

MAX_FRAME = 8 * 1024 * 1024
PRIMITIVE_ANSWER = 7  # low-level surface: actions 0..6 plus the answer slot
PRIMITIVE_ACTION_LABELS = tuple(a.name.lower() for a in Action) + ("answer",)


def _error(code: str, message: str) -> dict:
    return {"type": "error", "code": code, "message": message}


class _Session:
    def __init__(self, sid: str):
        self.sid = sid
        self.lock = threading.Lock()
        self.episode: Episode | None = None
        self.item = None
        self.control = "primitive"
        self.agent = "external"
        self.seed = 0
        self.last_reward = 0.0


class EpisodeService:
    """Transport-agnostic protocol core: one logical state machine per
    session, immutable shared dataset and config."""

    def __init__(self, cfg: RunConfig, log_dir: str | None = None):
        self.cfg = cfg
        self.layouts, self.room_split, self.dataset = build_world(cfg)
        self.items = list(self.dataset.items)
        self.item_index = {it.qid: i for i, it in enumerate(self.items)}
        self.log_dir = log_dir
        self.records = []
        self.records_by_id = {}
        self._frames_cache: dict[str, dict] = {}
        self._sessions: dict[str, _Session] = {}
        self._lock = threading.Lock()
        self._counter = 0
        if log_dir and os.path.isdir(log_dir):
            for path in sorted(glob.glob(os.path.join(log_dir, "*.jsonl.gz"))):
                self.add_record(load_episode_log(path), save=False)

    # -- session table --

    def new_session(self, prefix: str) -> str:
        with self._lock:
            self._counter += 1
            sid = f"{prefix}-{self._counter}"
            self._sessions[sid] = _Session(sid)
        return sid

    def get_session(self, sid: str) -> _Session | None:
        with self._lock:
            return self._sessions.get(sid)

    def drop_session(self, sid: str) -> None:
        with self._lock:
            self._sessions.pop(sid, None)

    def add_record(self, record, save: bool = True) -> None:
        with self._lock:
            if record.record_id in self.records_by_id:
                record.record_id = f"{record.record_id}.r{len(self.records)}"
            self.records.append(record)
            self.records_by_id[record.record_id] = record
        if save and self.log_dir:
            save_episode_log(record, self.log_dir)

    # -- dispatch --

    def handle(self, sid: str, msg) -> dict:
        if not isinstance(msg, dict):
            return _error("bad_request", "request must be a JSON object")
        kind = msg.get("type")
        try:
            # read-only queries are global: no session needed, so the UI can
            # fill its pickers before anything has been reset
            if kind == "get_replay":
                return self._get_replay(msg)
            if kind == "list_items":
                return self._list_items()
            if kind == "list_replays":
                return self._list_replays()
            if kind not in ("reset", "step"):
                return _error("bad_request", f"unknown request type {kind!r}")
            session = self.get_session(sid)
            if session is None:
                return _error("no_session", f"unknown session {sid!r}")
            if kind == "reset":
                return self._reset(session, msg)
            return self._step(session, msg)
        except Exception as e:  # noqa: BLE001 - protocol surface, never drop
            return _error("internal", f"{type(e).__name__}: {e}")

    # -- requests --

    def _reset(self, session: _Session, msg: dict) -> dict:
        item_id = msg.get("item_id")
        if item_id not in self.item_index:
            return _error("bad_item", f"unknown item_id {item_id!r}")
        control = msg.get("control", "primitive")
        if control not in ("planner", "primitive"):
            return _error("bad_request", f"bad control {control!r}")
        agent = msg.get("agent", "external")
        idx = self.item_index[item_id]
        item = self.items[idx]
        seed = msg.get("seed")
        if seed is None:
            seed = _episode_seed(self.cfg.eval.seed, idx)
        if not isinstance(seed, int):
            return _error("bad_request", "seed must be an integer")
        mem_cfg = self.cfg.world.memory()
        alpha = msg.get("memory_alpha")
        if alpha is not None:
            if not isinstance(alpha, (int, float)) or not 0.0 < alpha <= 1.0:
                return _error("bad_request", "memory_alpha must be in (0, 1]")
            mem_cfg = MemoryConfig(alpha=float(alpha), tau=mem_cfg.tau,
                                   window=mem_cfg.window)
        with session.lock:
            session.item = item
            session.control = control
            session.agent = str(agent)
            session.seed = seed
            session.last_reward = 0.0
            session.episode = Episode(
                self.layouts[item.room_id], item.config, item.question,
                reward=self.cfg.reward, detector=self.cfg.detector,
                mem_config=mem_cfg, seed=seed,
                scan_every=self.cfg.world.scan_every, control=control,
                oracle_navigation=self.cfg.eval.oracle_navigation,
                answer_mode=self.cfg.eval.answer_mode)
            return self._state_message(session)

    def _step(self, session: _Session, msg: dict) -> dict:
        with session.lock:
            ep = session.episode
            if ep is None:
                return _error("no_session", "reset before stepping")
            if ep.done:
                return _error("episode_done", "episode is over; reset to play again")
            action = msg.get("action")
            n = N_PLANNER_ACTIONS if session.control == "planner" else PRIMITIVE_ANSWER + 1
            if not isinstance(action, int) or isinstance(action, bool) \
                    or not 0 <= action < n:
                return _error("bad_action", f"action must be an int in [0, {n})")
            try:
                if session.control == "planner":
                    answer = msg.get("answer")
                    if action == ANSWER_ACTION and answer is not None \
                            and answer not in ep.question.choices:
                        return _error("bad_answer", f"{answer!r} not in choices")
                    reward, done, info = ep.step(action, answer_choice=answer)
                elif action == PRIMITIVE_ANSWER:
                    answer = msg.get("answer")
                    if answer not in ep.question.choices:
                        return _error("bad_answer", f"{answer!r} not in choices")
                    reward, done, info = ep.submit_answer(answer)
                else:
                    reward, done, info = ep.step_primitive(action)
            except EpisodeFinished:
                return _error("episode_done", "episode is over")
            session.last_reward = reward
            if not done:
                return self._state_message(session)
            record = build_record(
                session.item,
                "seen" if self.room_split[session.item.room_id] == "train" else "unseen",
                session.agent, ep, session.seed)
            self.add_record(record)
            return {
                "type": "result",
                "correct": bool(ep.correct),
                "metrics": {
                    "record_id": record.record_id,
                    "answer": ep.answer_given,
                    "expected": ep.expected_answer,
                    "total_reward": ep.total_reward,
                    "planner_steps": ep.planner_steps,
                    "primitive_steps": ep.world.primitive_steps,
                    "invalid_count": ep.invalid_count,
                    "coverage": ep.coverage(),
                },
                "state": self._state_body(session),
                "session": session.sid,
            }

    def _list_items(self) -> dict:
        rows = [{
            "item_id": it.qid,
            "qtype": it.question.qtype,
            "text": it.question.text,
            "choices": list(it.question.choices),
            "room_id": it.room_id,
            "split": it.split,
            "rooms": "seen" if self.room_split[it.room_id] == "train" else "unseen",
        } for it in self.items]
        return {"type": "items", "items": rows}

    def _list_replays(self) -> dict:
        with self._lock:
            records = list(self.records)
        rows = [{
            "log_id": r.record_id,
            "agent": r.agent,
            "control": r.control,
            "qtype": r.qtype,
            "room_id": r.room_id,
            "correct": r.correct,
            "planner_steps": r.planner_steps,
            "primitive_steps": r.primitive_steps,
            "total_reward": r.total_reward,
        } for r in records]
        return {"type": "replays", "replays": rows}

    def _get_replay(self, msg: dict) -> dict:
        log_id = msg.get("log_id")
        with self._lock:
            record = self.records_by_id.get(log_id)
        if record is None:
            return _error("no_log", f"no log {log_id!r}")
        with self._lock:
            played = self._frames_cache.get(log_id)
        if played is None:
            played = replay_frames(record, self.layouts)
            with self._lock:
                self._frames_cache[log_id] = played
        start = msg.get("start", 0)
        count = msg.get("count", 400)
        if not isinstance(start, int) or not isinstance(count, int) \
                or start < 0 or count < 1:
            return _error("bad_request", "start/count must be non-negative ints")
        frames = played["frames"][start:start + count]
        return {
            "type": "replay",
            "log_id": log_id,
            "total_frames": len(played["frames"]),
            "start": start,
            "frames": frames,
            "commands": played["commands"],
            "consistent": played["consistent"],
            "header": {
                "question": record.question,
                "agent": record.agent,
                "control": record.control,
                "room_id": record.room_id,
                "answer": record.answer,
                "expected": record.expected,
                "correct": record.correct,
                "planner_steps": record.planner_steps,
                "primitive_steps": record.primitive_steps,
                "invalid_count": record.invalid_count,
                "total_reward": record.total_reward,
                "width": self.layouts[record.room_id].width,
                "height": self.layouts[record.room_id].height,
            },
        }

    # -- state rendering --

    def _state_body(self, session: _Session) -> dict:
        ep = session.episode
        det = ep.last_detections
        pose = det.pose
        cells = []
        for cell, is_free in det.free_space:
            f, l = world_to_ego(pose.cell, pose.heading, cell)
            cells.append({"cell": list(cell), "ego": [f, l], "free": bool(is_free)})
        recepts = []
        for class_id, cell, is_open in det.receptacles:
            f, l = world_to_ego(pose.cell, pose.heading, cell)
            recepts.append({"class_id": class_id, "cell": list(cell),
                            "ego": [f, l], "open": bool(is_open),
                            "openable": class_id in OPENABLE_CLASSES})
        objects = []
        for class_id, cell in det.objects:
            f, l = world_to_ego(pose.cell, pose.heading, cell)
            objects.append({"class_id": class_id, "cell": list(cell), "ego": [f, l]})
        grid = ep.mem.grid
        covered = grid[:, :, COVERAGE] > 0.5
        belief = grid[:, :, FREE].copy()
        belief[~covered] = 0.5  # fog of war: only coverage-marked cells revealed
        markers = []
        tau = ep.mem.config.tau
        for ci, class_id in enumerate(ALL_CLASSES):
            for y, x in zip(*((grid[:, :, ci] > tau) & covered).nonzero()):
                markers.append({"cell": [int(x), int(y)], "class_id": class_id,
                                "p": round(float(grid[y, x, ci]), 4)})
        if session.control == "planner":
            valid = [bool(v) for v in ep.valid_actions()]
            labels = list(PLANNER_ACTION_LABELS)
        else:
            valid = [bool(v) for v in valid_low_level(ep.scene, ep.agent)] + [True]
            labels = list(PRIMITIVE_ACTION_LABELS)
        return {
            "question": question_to_json(ep.question),
            "control": session.control,
            "pose": [list(ep.agent.cell), ep.agent.heading, ep.agent.pitch],
            "egocentric_view": {
                "pose": [list(pose.cell), pose.heading, pose.pitch],
                "cells": cells,
                "receptacles": recepts,
                "objects": objects,
            },
            "topdown_map": {
                "width": ep.layout.width,
                "height": ep.layout.height,
                "covered": covered.astype(int).tolist(),
                "free_belief": [[round(v, 4) for v in row] for row in belief.tolist()],
                "markers": markers,
            },
            "last_reward": session.last_reward,
            "done": ep.done,
            "valid_actions": valid,
            "action_labels": labels,
            "step_counters": {
                "planner_steps": ep.planner_steps,
                "primitive_steps": ep.world.primitive_steps,
                "invalid_count": ep.invalid_count,
                "total_reward": ep.total_reward,
                "coverage": ep.coverage(),
            },
        }

    def _state_message(self, session: _Session) -> dict:
        return {"type": "state", "session": session.sid,
                **self._state_body(session)}


# ---- TCP transport: length-prefixed JSON over a persistent connection ----

def read_frame(rfile) -> bytes | None:
    head = rfile.read(4)
    if len(head) < 4:
        return None
    (length,) = struct.unpack(">I", head)
    if length > MAX_FRAME:
        raise ValueError(f"frame of {length} bytes exceeds cap")
    data = b""
    while len(data) < length:
        chunk = rfile.read(length - len(data))
        if not chunk:
            return None
        data += chunk
    return data


def write_frame(wfile, payload: dict) -> None:
    data = json.dumps(payload).encode("utf-8")
    wfile.write(struct.pack(">I", len(data)) + data)
    wfile.flush()


class _TcpHandler(socketserver.StreamRequestHandler):
    def handle(self):
        service: EpisodeService = self.server.service
        sid = service.new_session("tcp")
        try:
            while True:
                try:
                    data = read_frame(self.rfile)
                except ValueError as e:
                    write_frame(self.wfile, _error("bad_frame", str(e)))
                    break  # framing is unrecoverable past an oversized length
                if data is None:
                    break
                try:
                    msg = json.loads(data.decode("utf-8"))
                except (UnicodeDecodeError, json.JSONDecodeError) as e:
                    write_frame(self.wfile, _error("bad_json", str(e)))
                    continue
                write_frame(self.wfile, service.handle(sid, msg))
        except (ConnectionError, BrokenPipeError):
            pass
        finally:
            service.drop_session(sid)


class _TcpServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True


# ---- HTTP transport: one request per call, plus static UI assets ----

class _HttpHandler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"

    def log_message(self, *args):
        pass

    def _send_json(self, payload: dict, status: int = 200,
                   close: bool = False) -> None:
        data = json.dumps(payload).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        if close:
            self.send_header("Connection", "close")
        self.end_headers()
        self.wfile.write(data)

    def do_POST(self):
        service: EpisodeService = self.server.service
        try:
            length = int(self.headers.get("Content-Length", "0"))
        except ValueError:
            length = 0
        if self.path.rstrip("/") not in ("", "/api".rstrip("/"), "/api"):
            # drain the body so keep-alive stays in sync for the next request
            if 0 < length <= MAX_FRAME:
                self.rfile.read(length)
                close = False
            else:
                close = True
            self._send_json(_error("bad_request", f"no POST route {self.path}"),
                            404, close=close)
            return
        if length <= 0 or length > MAX_FRAME:
            # no usable length means the stream cannot be resynced
            self._send_json(_error("bad_frame", "missing or oversized body"),
                            close=True)
            return
        body = self.rfile.read(length)
        try:
            msg = json.loads(body.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            self._send_json(_error("bad_json", str(e)))
            return
        sid = msg.get("session") if isinstance(msg, dict) else None
        kind = msg.get("type") if isinstance(msg, dict) else None
        # only the session-bound requests need one; reset mints it
        if kind in ("reset", "step"):
            if sid is None and kind == "reset":
                sid = service.new_session("http")
            if sid is None or service.get_session(sid) is None:
                self._send_json(_error("no_session",
                                       "send a reset to start a session"))
                return
        resp = service.handle(sid if sid is not None else "", msg)
        if sid is not None:
            resp.setdefault("session", sid)
        self._send_json(resp)

    def do_GET(self):
        static_dir = self.server.static_dir
        path = self.path.split("?", 1)[0]
        if path == "/":
            path = "/index.html"
        if static_dir is None:
            body = b"episode server is running; no UI assets configured\n"
            self.send_response(200)
            self.send_header("Content-Type", "text/plain")
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)
            return
        full = os.path.normpath(os.path.join(static_dir, path.lstrip("/")))
        if not full.startswith(os.path.abspath(static_dir) + os.sep) \
                and full != os.path.abspath(static_dir):
            self._send_json(_error("bad_request", "bad path"), 404)
            return
        if not os.path.isfile(full):
            self._send_json(_error("bad_request", f"no such asset {path}"), 404)
            return
        ctype = mimetypes.guess_type(full)[0] or "application/octet-stream"
        with open(full, "rb") as f:
            data = f.read()
        self.send_response(200)
        self.send_header("Content-Type", ctype)
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)


class _HttpServer(ThreadingHTTPServer):
    daemon_threads = True


# ---- lifecycle ----

class ServerHandle:
    def __init__(self, service: EpisodeService, tcp: _TcpServer, http: _HttpServer):
        self.service = service
        self._tcp = tcp
        self._http = http
        self.tcp_port = tcp.server_address[1]
        self.http_port = http.server_address[1]
        self._threads = [
            threading.Thread(target=tcp.serve_forever, daemon=True),
            threading.Thread(target=http.serve_forever, daemon=True),
        ]

    def start(self) -> "ServerHandle":
        for t in self._threads:
            t.start()
        return self

    def wait(self) -> None:
        for t in self._threads:
            t.join()

    def stop(self) -> None:
        self._tcp.shutdown()
        self._http.shutdown()
        self._tcp.server_close()
        self._http.server_close()


def serve(cfg: RunConfig, port: int = 0, http_port: int = 0,
          static_dir: str | None = None, log_dir: str | None = None) -> ServerHandle:
    """Bind both transports and start serving; port 0 picks free ports.
    Returns a handle with the bound ports, `wait()`, and `stop()`."""
    service = EpisodeService(cfg, log_dir=log_dir)
    tcp = _TcpServer(("127.0.0.1", port), _TcpHandler)
    tcp.service = service
    http = _HttpServer(("127.0.0.1", http_port), _HttpHandler)
    http.service = service
    http.static_dir = os.path.abspath(static_dir) if static_dir else None
    return ServerHandle(service, tcp, http).start()


class WireClient:
    """Minimal persistent-connection client (tests and the headless scripted
    driver use this; the browser uses the HTTP mode)."""

    def __init__(self, host: str, port: int, timeout: float = 30.0):
        self.sock = socket.create_connection((host, port), timeout=timeout)
        self.rfile = self.sock.makefile("rb")
        self.wfile = self.sock.makefile("wb")

    def request(self, msg: dict) -> dict:
        write_frame(self.wfile, msg)
        data = read_frame(self.rfile)
        if data is None:
            raise ConnectionError("server closed the connection")
        return json.loads(data.decode("utf-8"))

    def close(self) -> None:
        for f in (self.rfile, self.wfile):
            try:
                f.close()
            except OSError:
                pass
        self.sock.close()


def drive_commands(client: WireClient, item_id: str, commands: list[dict],
                   control: str = "planner", agent: str = "external",
                   seed: int | None = None, memory_alpha: float | None = None) -> dict:
    """Replay a recorded command list over the wire; returns the final result
    message. Each command is {"action": int, "answer": optional str}."""
    msg = {"type": "reset", "item_id": item_id, "control": control, "agent": agent}
    if seed is not None:
        msg["seed"] = seed
    if memory_alpha is not None:
        msg["memory_alpha"] = memory_alpha
    resp = client.request(msg)
    if resp["type"] != "state":
        raise RuntimeError(f"reset failed: {resp}")
    for cmd in commands:
        req = {"type": "step", "action": cmd["action"]}
        if cmd.get("answer") is not None:
            req["answer"] = cmd["answer"]
        resp = client.request(req)
        if resp["type"] == "error":
            raise RuntimeError(f"step failed: {resp}")
        if resp["type"] == "result":
            return resp
    raise RuntimeError("command list ended before the episode did")
