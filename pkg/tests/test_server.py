"""Wire protocol tests: framing, error codes, session isolation on both
transports, replay paging, and in-process vs over-the-wire equivalence."""

import http.client
import json
import socket
import struct

import pytest

from gridhouse.config import RunConfig
from gridhouse.episode import ANSWER_ACTION, PLANNER_ACTION_LABELS
from gridhouse.harness import compute_metrics, run_episodes
from gridhouse.server import (
    MAX_FRAME,
    PRIMITIVE_ACTION_LABELS,
    PRIMITIVE_ANSWER,
    EpisodeService,
    WireClient,
    drive_commands,
    read_frame,
    serve,
    write_frame,
)


@pytest.fixture(scope="module")
def log_dir(tmp_path_factory):
    return tmp_path_factory.mktemp("episode-logs")


@pytest.fixture(scope="module")
def handle(log_dir):
    h = serve(RunConfig(), port=0, http_port=0, log_dir=str(log_dir))
    yield h
    h.stop()


@pytest.fixture()
def client(handle):
    c = WireClient("127.0.0.1", handle.tcp_port)
    yield c
    c.close()


def http_api(port, body):
    conn = http.client.HTTPConnection("127.0.0.1", port, timeout=30)
    try:
        conn.request("POST", "/api", body=json.dumps(body).encode("utf-8"),
                     headers={"Content-Type": "application/json"})
        resp = conn.getresponse()
        return json.loads(resp.read().decode("utf-8"))
    finally:
        conn.close()


def first_item(handle, qtype="existence"):
    return next(it for it in handle.service.items if it.question.qtype == qtype)


def finish_primitive(client, item, agent="human", seed=5, actions=(1, 1, 0)):
    """Play a short primitive-control episode to completion; returns the
    result message."""
    resp = client.request({"type": "reset", "item_id": item.qid,
                           "control": "primitive", "agent": agent, "seed": seed})
    assert resp["type"] == "state"
    for a in actions:
        resp = client.request({"type": "step", "action": a})
        assert resp["type"] == "state"
    resp = client.request({"type": "step", "action": PRIMITIVE_ANSWER,
                           "answer": item.question.choices[0]})
    assert resp["type"] == "result"
    return resp


def test_list_items_over_wire(handle, client):
    resp = client.request({"type": "list_items"})
    assert resp["type"] == "items"
    assert len(resp["items"]) == len(handle.service.items)
    row = resp["items"][0]
    assert set(row) == {"item_id", "qtype", "text", "choices", "room_id",
                        "split", "rooms"}
    assert row["rooms"] in ("seen", "unseen")
    by_id = {r["item_id"]: r for r in resp["items"]}
    it = first_item(handle)
    assert by_id[it.qid]["text"] == it.question.text
    assert by_id[it.qid]["choices"] == list(it.question.choices)


def test_manual_framing(handle):
    # hand-rolled frames: 4-byte big-endian length prefix, JSON body
    sock = socket.create_connection(("127.0.0.1", handle.tcp_port), timeout=30)
    try:
        body = json.dumps({"type": "list_items"}).encode("utf-8")
        sock.sendall(struct.pack(">I", len(body)) + body)
        head = b""
        while len(head) < 4:
            head += sock.recv(4 - len(head))
        (length,) = struct.unpack(">I", head)
        data = b""
        while len(data) < length:
            data += sock.recv(length - len(data))
        assert len(data) == length
        assert json.loads(data.decode("utf-8"))["type"] == "items"
    finally:
        sock.close()


def test_oversized_frame_rejected_then_closed(handle):
    sock = socket.create_connection(("127.0.0.1", handle.tcp_port), timeout=30)
    rfile = sock.makefile("rb")
    try:
        sock.sendall(struct.pack(">I", MAX_FRAME + 1))
        resp = json.loads(read_frame(rfile).decode("utf-8"))
        assert resp["type"] == "error"
        assert resp["code"] == "bad_frame"
        # framing is unrecoverable: the server hangs up after the error
        assert read_frame(rfile) is None
    finally:
        rfile.close()
        sock.close()


def test_bad_json_keeps_connection(handle):
    sock = socket.create_connection(("127.0.0.1", handle.tcp_port), timeout=30)
    rfile = sock.makefile("rb")
    wfile = sock.makefile("wb")
    try:
        garbage = b"{not json"
        wfile.write(struct.pack(">I", len(garbage)) + garbage)
        wfile.flush()
        resp = json.loads(read_frame(rfile).decode("utf-8"))
        assert resp["code"] == "bad_json"
        write_frame(wfile, {"type": "list_items"})
        resp = json.loads(read_frame(rfile).decode("utf-8"))
        assert resp["type"] == "items"
    finally:
        rfile.close()
        wfile.close()
        sock.close()


def test_non_object_and_unknown_type(client):
    assert client.request([1, 2, 3])["code"] == "bad_request"
    assert client.request({"type": "frobnicate"})["code"] == "bad_request"
    assert client.request({})["code"] == "bad_request"


def test_reset_state_body(handle, client):
    it = first_item(handle)
    resp = client.request({"type": "reset", "item_id": it.qid,
                           "control": "planner", "seed": 7})
    assert resp["type"] == "state"
    assert resp["session"].startswith("tcp-")
    assert resp["control"] == "planner"
    assert resp["done"] is False
    assert resp["last_reward"] == 0.0

    q = resp["question"]
    assert q["qtype"] == it.question.qtype
    assert q["text"] == it.question.text
    assert q["choices"] == list(it.question.choices)

    cell, heading, pitch = resp["pose"]
    assert len(cell) == 2 and heading in range(4) and pitch in range(3)

    view = resp["egocentric_view"]
    assert set(view) == {"pose", "cells", "receptacles", "objects"}
    for c in view["cells"]:
        assert set(c) == {"cell", "ego", "free"}
    for r in view["receptacles"]:
        assert set(r) == {"class_id", "cell", "ego", "open", "openable"}

    layout = handle.service.layouts[it.room_id]
    top = resp["topdown_map"]
    assert top["width"] == layout.width and top["height"] == layout.height
    assert len(top["covered"]) == layout.height
    assert len(top["covered"][0]) == layout.width
    # fog of war: belief outside covered cells stays at the 0.5 prior
    for y in range(layout.height):
        for x in range(layout.width):
            assert top["covered"][y][x] in (0, 1)
            if not top["covered"][y][x]:
                assert top["free_belief"][y][x] == 0.5
    for m in top["markers"]:
        assert set(m) == {"cell", "class_id", "p"}

    assert len(resp["valid_actions"]) == len(PLANNER_ACTION_LABELS)
    assert resp["action_labels"] == list(PLANNER_ACTION_LABELS)
    assert resp["valid_actions"][ANSWER_ACTION] is True

    counters = resp["step_counters"]
    assert counters["planner_steps"] == 0
    assert counters["primitive_steps"] == 0
    assert counters["invalid_count"] == 0
    assert counters["total_reward"] == 0.0


def test_reset_validation(handle, client):
    it = first_item(handle)
    assert client.request({"type": "reset", "item_id": "nope"})["code"] == "bad_item"
    assert client.request({"type": "reset", "item_id": it.qid,
                           "control": "psychic"})["code"] == "bad_request"
    assert client.request({"type": "reset", "item_id": it.qid,
                           "seed": "seven"})["code"] == "bad_request"
    for alpha in (0.0, 1.5, "half"):
        resp = client.request({"type": "reset", "item_id": it.qid,
                               "memory_alpha": alpha})
        assert resp["code"] == "bad_request"


def test_step_before_reset(client):
    assert client.request({"type": "step", "action": 0})["code"] == "no_session"


def test_bad_action_keeps_session(handle, client):
    it = first_item(handle)
    client.request({"type": "reset", "item_id": it.qid, "control": "planner"})
    for bad in (99, -1, True, "3", None):
        resp = client.request({"type": "step", "action": bad})
        assert resp["code"] == "bad_action"
    resp = client.request({"type": "step", "action": 27})  # scan(left)
    assert resp["type"] == "state"
    assert resp["step_counters"]["planner_steps"] == 1


def test_planner_answer_flow(handle, client):
    it = first_item(handle)
    client.request({"type": "reset", "item_id": it.qid, "control": "planner",
                    "agent": "probe", "seed": 3})
    resp = client.request({"type": "step", "action": ANSWER_ACTION,
                           "answer": "banana"})
    assert resp["code"] == "bad_answer"
    resp = client.request({"type": "step", "action": ANSWER_ACTION,
                           "answer": it.question.choices[0]})
    assert resp["type"] == "result"
    assert isinstance(resp["correct"], bool)
    m = resp["metrics"]
    assert m["record_id"] == f"{it.qid}.probe.3"
    assert m["answer"] == it.question.choices[0]
    assert m["expected"] == it.answer
    assert m["planner_steps"] == 1
    assert resp["state"]["done"] is True
    # the episode is spent until the next reset
    assert client.request({"type": "step", "action": 0})["code"] == "episode_done"
    resp = client.request({"type": "reset", "item_id": it.qid})
    assert resp["type"] == "state"


def test_primitive_control_flow(handle, client):
    it = first_item(handle)
    resp = client.request({"type": "reset", "item_id": it.qid,
                           "control": "primitive", "agent": "human", "seed": 11})
    assert resp["control"] == "primitive"
    assert resp["action_labels"] == list(PRIMITIVE_ACTION_LABELS)
    assert len(resp["valid_actions"]) == PRIMITIVE_ANSWER + 1
    assert resp["valid_actions"][PRIMITIVE_ANSWER] is True

    resp = client.request({"type": "step", "action": 1})  # rotate_left
    assert resp["type"] == "state"
    assert resp["step_counters"]["planner_steps"] == 1
    assert resp["step_counters"]["primitive_steps"] == 1

    # the answer slot needs a choice from the question
    assert client.request({"type": "step",
                           "action": PRIMITIVE_ANSWER})["code"] == "bad_answer"
    assert client.request({"type": "step", "action": PRIMITIVE_ANSWER,
                           "answer": "banana"})["code"] == "bad_answer"
    resp = client.request({"type": "step", "action": PRIMITIVE_ANSWER,
                           "answer": it.question.choices[1]})
    assert resp["type"] == "result"
    m = resp["metrics"]
    assert m["record_id"] == f"{it.qid}.human.11"
    assert m["planner_steps"] == 2
    assert m["primitive_steps"] == 1

    record = handle.service.records_by_id[m["record_id"]]
    assert record.agent == "human"
    assert record.control == "primitive"
    report = compute_metrics([record])
    assert report.get("all", "all", "episodes") == 1


def test_tcp_session_isolation(handle):
    a = WireClient("127.0.0.1", handle.tcp_port)
    b = WireClient("127.0.0.1", handle.tcp_port)
    try:
        it_a = first_item(handle, "existence")
        it_b = first_item(handle, "counting")
        ra = a.request({"type": "reset", "item_id": it_a.qid, "seed": 1})
        rb = b.request({"type": "reset", "item_id": it_b.qid, "seed": 2})
        assert ra["session"] != rb["session"]
        for _ in range(3):
            a.request({"type": "step", "action": 1})
        resp = b.request({"type": "step", "action": 1})
        assert resp["question"]["text"] == it_b.question.text
        assert resp["step_counters"]["planner_steps"] == 1
    finally:
        a.close()
        b.close()


def test_http_one_shot_sessions(handle):
    port = handle.http_port
    it = first_item(handle)
    resp = http_api(port, {"type": "reset", "item_id": it.qid,
                           "control": "planner", "seed": 4})
    assert resp["type"] == "state"
    sid = resp["session"]
    assert sid.startswith("http-")

    other = http_api(port, {"type": "reset", "item_id": it.qid, "seed": 9})
    assert other["session"] != sid
    assert other["control"] == "primitive"  # the default for the UI

    resp = http_api(port, {"type": "step", "action": 27, "session": sid})
    assert resp["type"] == "state"
    assert resp["session"] == sid
    assert resp["step_counters"]["planner_steps"] == 1

    # the second session kept its own counters
    resp = http_api(port, {"type": "step", "action": 1,
                           "session": other["session"]})
    assert resp["step_counters"]["planner_steps"] == 1

    assert http_api(port, {"type": "step", "action": 0})["code"] == "no_session"
    assert http_api(port, {"type": "step", "action": 0,
                           "session": "http-999999"})["code"] == "no_session"


def test_http_queries_need_no_session(handle):
    # the UI fills its pickers before anything has been reset
    port = handle.http_port
    items = http_api(port, {"type": "list_items"})
    assert items["type"] == "items"
    assert len(items["items"]) > 0
    replays = http_api(port, {"type": "list_replays"})
    assert replays["type"] == "replays"
    missing = http_api(port, {"type": "get_replay", "log_id": "nope"})
    assert missing["code"] == "no_log"


def test_http_error_paths(handle):
    port = handle.http_port
    conn = http.client.HTTPConnection("127.0.0.1", port, timeout=30)
    try:
        conn.request("POST", "/api", body=b"garbage{",
                     headers={"Content-Type": "application/json"})
        resp = conn.getresponse()
        assert json.loads(resp.read())["code"] == "bad_json"

        conn.request("POST", "/nowhere", body=b"{}")
        resp = conn.getresponse()
        assert resp.status == 404
        assert json.loads(resp.read())["code"] == "bad_request"

        # an unusable body length closes the connection after answering;
        # http.client transparently reconnects for the next request
        conn.request("POST", "/api", body=b"")
        resp = conn.getresponse()
        assert json.loads(resp.read())["code"] == "bad_frame"
        assert resp.getheader("Connection") == "close"

        # no static dir configured: GET answers with a plain banner
        conn.request("GET", "/")
        resp = conn.getresponse()
        assert resp.status == 200
        assert b"no UI assets" in resp.read()
    finally:
        conn.close()


def test_static_assets(tmp_path):
    static = tmp_path / "ui"
    (static / "assets").mkdir(parents=True)
    (static / "index.html").write_text("<html><body>grid</body></html>")
    (static / "assets" / "app.js").write_text("console.log('hi');")
    (tmp_path / "secret.txt").write_text("do not serve")

    h = serve(RunConfig(), port=0, http_port=0, static_dir=str(static))
    try:
        conn = http.client.HTTPConnection("127.0.0.1", h.http_port, timeout=30)
        conn.request("GET", "/")
        resp = conn.getresponse()
        assert resp.status == 200
        assert resp.getheader("Content-Type").startswith("text/html")
        assert b"grid" in resp.read()

        conn.request("GET", "/assets/app.js?v=1")
        resp = conn.getresponse()
        assert resp.status == 200
        assert "javascript" in resp.getheader("Content-Type")
        assert b"console.log" in resp.read()

        conn.request("GET", "/../secret.txt")
        resp = conn.getresponse()
        assert resp.status == 404
        resp.read()

        conn.request("GET", "/missing.css")
        resp = conn.getresponse()
        assert resp.status == 404
        resp.read()
        conn.close()
    finally:
        h.stop()


def test_get_replay_paging(handle, client):
    it = first_item(handle)
    result = finish_primitive(client, it, seed=21, actions=(1, 1))
    log_id = result["metrics"]["record_id"]

    resp = client.request({"type": "get_replay", "log_id": log_id})
    assert resp["type"] == "replay"
    assert resp["consistent"] is True
    # 2 rotations plus the synthetic answer frame, after the init frame
    assert resp["total_frames"] == 4
    frames = resp["frames"]
    assert [f["index"] for f in frames] == list(range(4))
    first = frames[0]
    assert first["command"] == -1
    assert first["phase"] == "init"
    assert first["action"] is None
    assert first["coverage"] == 0.0
    assert frames[-1]["action"] is None  # answers move nothing

    header = resp["header"]
    assert header["agent"] == "human"
    assert header["control"] == "primitive"
    assert header["width"] > 0 and header["height"] > 0
    assert header["question"]["text"] == it.question.text
    assert len(resp["commands"]) == 3

    page = client.request({"type": "get_replay", "log_id": log_id,
                           "start": 1, "count": 2})
    assert [f["index"] for f in page["frames"]] == [1, 2]
    assert page["total_frames"] == 4

    tail = client.request({"type": "get_replay", "log_id": log_id,
                           "start": 3, "count": 10})
    assert [f["index"] for f in tail["frames"]] == [3]

    assert client.request({"type": "get_replay",
                           "log_id": "nope"})["code"] == "no_log"
    assert client.request({"type": "get_replay", "log_id": log_id,
                           "start": -1})["code"] == "bad_request"
    assert client.request({"type": "get_replay", "log_id": log_id,
                           "count": 0})["code"] == "bad_request"


def test_list_replays_rows(handle, client):
    it = first_item(handle)
    result = finish_primitive(client, it, seed=22, actions=(2,))
    resp = client.request({"type": "list_replays"})
    assert resp["type"] == "replays"
    rows = {r["log_id"]: r for r in resp["replays"]}
    row = rows[result["metrics"]["record_id"]]
    assert set(row) == {"log_id", "agent", "control", "qtype", "room_id",
                        "correct", "planner_steps", "primitive_steps",
                        "total_reward"}
    assert row["agent"] == "human"
    assert row["qtype"] == it.question.qtype


def test_transport_equivalence_scripted(handle):
    """A scripted run replayed command-for-command over the wire must land in
    the exact same EpisodeRecord the in-process harness produces."""
    service = handle.service
    cfg = service.cfg
    test_items = service.dataset.split_items("test")
    picked = []
    for qtype in ("existence", "counting", "containment"):
        picked += [it for it in test_items if it.question.qtype == qtype][:2]
    assert len(picked) == 6

    local = run_episodes("scripted", picked, service.layouts,
                         service.room_split, cfg)
    client = WireClient("127.0.0.1", handle.tcp_port)
    try:
        for rec in local:
            commands = [{"action": s["action"], "answer": s["answer"]}
                        for s in rec.steps]
            result = drive_commands(client, rec.qid, commands,
                                    control="planner", agent="scripted",
                                    seed=rec.seed,
                                    memory_alpha=cfg.eval.oracle_alpha)
            assert result["correct"] is True
            served = service.records_by_id[result["metrics"]["record_id"]]
            assert served == rec
    finally:
        client.close()


def test_drive_commands_short_list(handle):
    it = first_item(handle)
    client = WireClient("127.0.0.1", handle.tcp_port)
    try:
        with pytest.raises(RuntimeError, match="ended before"):
            drive_commands(client, it.qid, [{"action": 27}], agent="probe")
    finally:
        client.close()


def test_log_preload_and_collision(handle, client, log_dir):
    it = first_item(handle)
    result = finish_primitive(client, it, seed=33, actions=(1,))
    log_id = result["metrics"]["record_id"]

    # a fresh service over the same log dir picks the records back up
    reloaded = EpisodeService(RunConfig(), log_dir=str(log_dir))
    assert log_id in reloaded.records_by_id
    assert reloaded.records_by_id[log_id] == handle.service.records_by_id[log_id]

    # registering a duplicate id keeps both records addressable
    n = len(reloaded.records)
    dup = reloaded.records_by_id[log_id]
    copy = type(dup).from_json(dup.to_json())
    reloaded.add_record(copy, save=False)
    assert copy.record_id == f"{log_id}.r{n}"
    assert reloaded.records_by_id[copy.record_id] is copy
    assert reloaded.records_by_id[log_id] is dup
