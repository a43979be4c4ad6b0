"""Release gate: every headline guarantee of the stack, checked end to end.

Each test covers one criterion and prints a single PASS/FAIL line with the
measured numbers (visible with -s, or in the failure output). The trained
arms share one session-scoped fixture so all comparisons run on identical
budgets and seeds. Expect this module to take several minutes: it trains
four policy arms, generates the full-scale dataset, and replays every
episode it logged.
"""

import dataclasses
import http.client
import json
import time

import numpy as np
import pytest

from gridhouse.config import RunConfig, WorldConfig
from gridhouse.controllers import Detections, answer_question, astar, ground_truth_memory
from gridhouse.episode import Episode
from gridhouse.harness import (
    TRAINED_ARMS,
    build_record,
    build_world,
    compute_metrics,
    modal_answers,
    replay_frames,
    run_episodes,
    train_arm,
    verify_replay,
)
from gridhouse.memory import MemoryConfig, SpatialMemory
from gridhouse.planner import Sample, TrainConfig, init_params, loss_and_grads
from gridhouse.questions import (
    QUESTION_TYPES,
    answer_of,
    generate_configuration,
    room_questions,
)
from gridhouse.server import WireClient, drive_commands, serve
from gridhouse.world import AgentState, Layout, load_scene

CHANCE = {"existence": 0.5, "counting": 0.25, "containment": 0.5}


def check(name: str, ok: bool, detail: str) -> None:
    print(f"\n[{'PASS' if ok else 'FAIL'}] {name} :: {detail}")
    assert ok, f"{name}: {detail}"


# ---- shared experiment state ----

@pytest.fixture(scope="session")
def desk():
    cfg = RunConfig()
    layouts, split, dataset = build_world(cfg)
    return cfg, layouts, split, dataset


@pytest.fixture(scope="session")
def trained(desk):
    cfg, layouts, _split, dataset = desk
    items = dataset.split_items("train")
    arms = {}
    for arm in TRAINED_ARMS:
        t0 = time.monotonic()
        params, curves, tcfg = train_arm(cfg, layouts, items, arm)
        arms[arm] = {"params": params, "curves": curves, "tcfg": tcfg,
                     "wall": time.monotonic() - t0}
    return arms


@pytest.fixture(scope="session")
def evaluated(desk, trained):
    cfg, layouts, split, dataset = desk
    test_items = dataset.split_items("test")
    modal = modal_answers(dataset.split_items("train"))
    runs = {}

    def run(key, agent, arm=None):
        t0 = time.monotonic()
        params = trained[arm]["params"] if arm else None
        tcfg = trained[arm]["tcfg"] if arm else None
        records = run_episodes(agent, test_items, layouts, split, cfg,
                               params=params, train_cfg=tcfg, modal=modal)
        runs[key] = {"records": records, "report": compute_metrics(records),
                     "wall": time.monotonic() - t0}

    run("scripted", "scripted")
    run("mla", "mla")
    run("full", "actor-critic", "full")
    run("question-blind", "actor-critic", "question-blind")
    run("no-validity-loss", "actor-critic", "no-validity-loss")
    run("memoryless", "memoryless", "memoryless")
    return runs


@pytest.fixture(scope="session")
def wire(desk):
    cfg, *_ = desk
    handle = serve(cfg, port=0, http_port=0)
    yield handle
    handle.stop()


# ---- dataset ----

def test_mla_sits_exactly_at_chance(evaluated):
    rep = evaluated["mla"]["report"]
    accs = {qt: rep.get("all", qt, "accuracy") for qt in QUESTION_TYPES}
    ok = (accs == CHANCE) and evaluated["mla"]["wall"] < 60
    check("modal-answer baseline exactly at chance", ok,
          f"accuracies {accs} (want {CHANCE}), {evaluated['mla']['wall']:.1f}s")


def test_full_scale_dataset_counts():
    t0 = time.monotonic()
    cfg = RunConfig(world=WorldConfig(family="house", scale=1.0, test_scale=1.0))
    layouts, split, dataset = build_world(cfg)
    wall = time.monotonic() - t0

    n_train = {qt: 0 for qt in QUESTION_TYPES}
    for it in dataset.split_items("train"):
        n_train[it.question.qtype] += 1
    n_unseen = {qt: 0 for qt in QUESTION_TYPES}
    for it in dataset.split_items("test", rooms="unseen"):
        n_unseen[it.question.qtype] += 1

    def ckey(it):
        pl = tuple((c, i, (s[0], tuple(s[1]) if isinstance(s[1], (list, tuple))
                           else s[1]))
                   for c, i, s in it.config.placements)
        return (it.room_id, it.config.seed, pl)

    configs = {ckey(it) for it in dataset.split_items("train")}
    rooms = (sum(1 for r in split.values() if r == "train"),
             sum(1 for r in split.values() if r == "test"))
    ok = (all(n == 25600 for n in n_train.values())
          and all(n == 640 for n in n_unseen.values())
          and len(configs) == 76800 and rooms == (25, 5) and wall < 600)
    check("full-scale dataset counts", ok,
          f"train/qtype {n_train}, held-out-room test/qtype {n_unseen}, "
          f"{len(configs)} distinct train configs, rooms {rooms}, {wall:.1f}s")


# ---- navigation and memory primitives ----

def _dijkstra(occ: np.ndarray, start: tuple, goal: tuple):
    import heapq

    h, w = occ.shape
    dist = {start: 0}
    heap = [(0, 0, start)]
    tie = 1
    while heap:
        d, _t, cell = heapq.heappop(heap)
        if cell == goal:
            return d
        if d > dist.get(cell, float("inf")):
            continue
        for dx, dy in ((0, -1), (1, 0), (0, 1), (-1, 0)):
            n = (cell[0] + dx, cell[1] + dy)
            if not (0 <= n[0] < w and 0 <= n[1] < h):
                continue
            if occ[n[1], n[0]] < 1.0:
                continue  # fully-known grids: anything below 1.0 is a wall
            nd = d + 1
            if nd < dist.get(n, float("inf")):
                dist[n] = nd
                heapq.heappush(heap, (nd, tie, n))
                tie += 1
    return None


def test_astar_cost_matches_dijkstra():
    rng = np.random.default_rng(404)
    t0 = time.monotonic()
    reachable = 0
    for _ in range(300):
        occ = (rng.random((20, 20)) < 0.65).astype(float)
        free = np.argwhere(occ == 1.0)
        if len(free) < 2:
            continue
        pick = rng.choice(len(free), size=2, replace=False)
        start = (int(free[pick[0]][1]), int(free[pick[0]][0]))
        goal = (int(free[pick[1]][1]), int(free[pick[1]][0]))
        want = _dijkstra(occ, start, goal)
        path = astar(occ, start, goal)
        if want is None:
            assert path is None, f"astar found a path where none exists {start}->{goal}"
            continue
        reachable += 1
        assert path is not None, f"astar missed a path {start}->{goal}"
        assert path[0] == start and path[-1] == goal
        for cell in path[1:]:
            assert occ[cell[1], cell[0]] == 1.0
        assert len(path) - 1 == want, f"cost {len(path) - 1} != dijkstra {want}"
    wall = time.monotonic() - t0
    ok = reachable >= 100 and wall < 10
    check("shortest paths match an independent cost search", ok,
          f"300 grids, {reachable} reachable pairs, 0 mismatches, {wall:.1f}s")


_FWD = {0: (0, -1), 1: (1, 0), 2: (0, 1), 3: (-1, 0)}


def _footprint(cell, heading):
    f = _FWD[heading]
    r = _FWD[(heading + 1) % 4]
    return {(cell[0] + a * f[0] + (li - 2) * r[0],
             cell[1] + a * f[1] + (li - 2) * r[1])
            for a in range(5) for li in range(5)}


def test_memory_writes_stay_inside_window():
    rng = np.random.default_rng(505)
    classes = ("apple", "book", "cup", "bread")
    recepts = ("cabinet", "table", "fridge")
    t0 = time.monotonic()
    for _ in range(1000):
        w, h = int(rng.integers(7, 15)), int(rng.integers(7, 15))
        mem = SpatialMemory(w, h)
        mem.grid[:] = rng.random(mem.grid.shape)
        pose = AgentState((int(rng.integers(0, w)), int(rng.integers(0, h))),
                          int(rng.integers(0, 4)), int(rng.integers(0, 3)))
        foot = sorted(_footprint(pose.cell, pose.heading))
        cells = [foot[i] for i in rng.choice(len(foot), size=12, replace=False)]
        free = tuple((c, bool(rng.integers(0, 2))) for c in cells[:6])
        objects = tuple((classes[int(rng.integers(0, len(classes)))], c)
                        for c in cells[6:9])
        receptacles = tuple((recepts[int(rng.integers(0, len(recepts)))], c,
                             bool(rng.integers(0, 2))) for c in cells[9:])
        inspected = tuple(c for c, is_free in free if is_free)
        before = mem.grid.copy()
        mem.integrate(Detections(pose=pose, free_space=free, objects=objects,
                                 receptacles=receptacles, inspected=inspected))
        changed = {(int(x), int(y))
                   for y, x, _c in np.argwhere(mem.grid != before)}
        outside = changed - _footprint(pose.cell, pose.heading)
        assert not outside, f"cells outside the view window changed: {outside}"
    wall = time.monotonic() - t0
    check("memory writes never leave the egocentric window", wall < 5,
          f"1000 random writes, 0 out-of-window changes, {wall:.1f}s")


def test_answerer_agrees_with_generator(desk):
    _cfg, layouts, _split, _dataset = desk
    rng = np.random.default_rng(606)
    rooms = list(layouts.values())
    pairs = 0
    t0 = time.monotonic()
    for trial in range(60):
        layout = rooms[trial % len(rooms)]
        config = generate_configuration(layout, [], rng)
        scene = load_scene(layout, config)
        mem = ground_truth_memory(scene)
        for qtype in QUESTION_TYPES:
            for q in room_questions(layout, qtype):
                got = answer_question(mem, q).top1()
                want = answer_of(layout, config, q)
                assert got == want, f"{q.text}: answered {got}, truth {want}"
                pairs += 1
    wall = time.monotonic() - t0
    ok = pairs >= 1000 and wall < 60
    check("memory readout agrees with symbolic ground truth", ok,
          f"{pairs} (config, question) pairs, 0 mismatches, {wall:.1f}s")


# ---- the full pipeline ----

def test_oracle_pipeline_is_exact(evaluated):
    rep = evaluated["scripted"]["report"]
    accs = {qt: rep.get("all", qt, "accuracy") for qt in QUESTION_TYPES}
    wall = evaluated["scripted"]["wall"]
    ok = all(a == 1.0 for a in accs.values()) and wall < 900
    check("scripted explorer answers every test question", ok,
          f"accuracies {accs}, {wall:.1f}s for {len(evaluated['scripted']['records'])} episodes")


def test_memory_policy_beats_memoryless(trained, evaluated):
    full = evaluated["full"]["report"]
    memless = evaluated["memoryless"]["report"]
    margin = (full.get("all", "existence", "accuracy")
              - memless.get("all", "existence", "accuracy"))
    count_err = abs(memless.get("all", "counting", "accuracy") - CHANCE["counting"])
    budget = sum(a["wall"] for a in trained.values())
    same_budget = len({(a["tcfg"].updates, a["tcfg"].workers, a["tcfg"].n_steps,
                        a["tcfg"].lr, a["tcfg"].hidden, a["tcfg"].seed)
                       for a in trained.values()}) == 1
    ok = margin >= 0.10 and count_err <= 0.07 and same_budget and budget < 7200
    check("memory policy beats the memoryless baseline", ok,
          f"existence margin {margin:+.3f} (need >= +0.10), memoryless counting "
          f"off chance by {count_err:.3f} (cap 0.07), training {budget:.0f}s")


def test_validity_loss_cuts_invalid_rate(evaluated):
    with_loss = evaluated["full"]["report"].get("all", "all", "invalid_pct")
    without = evaluated["no-validity-loss"]["report"].get("all", "all", "invalid_pct")
    ok = without >= 3.0 * with_loss and with_loss >= 0.0
    check("dropping the validity head triples invalid commands", ok,
          f"invalid% with loss {with_loss:.2f}, without {without:.2f} "
          f"(need without >= 3x with)")


def test_question_blind_drops_to_chance(evaluated):
    rep = evaluated["question-blind"]["report"]
    accs = {qt: rep.get("all", qt, "accuracy") for qt in QUESTION_TYPES}
    worst = max(abs(accs[qt] - CHANCE[qt]) for qt in QUESTION_TYPES)
    ok = worst <= 0.05
    check("question-blind policy falls to chance", ok,
          f"accuracies {accs} vs chance {CHANCE}, worst gap {worst:.3f} (cap 0.05)")


def test_room_holdout_gap_is_small(evaluated):
    gaps = {}
    for key, cap in (("scripted", 0.02), ("full", 0.10)):
        rep = evaluated[key]["report"]
        gaps[key] = abs(rep.get("seen", "all", "accuracy")
                        - rep.get("unseen", "all", "accuracy"))
    ok = gaps["scripted"] <= 0.02 and gaps["full"] <= 0.10
    check("held-out rooms cost little accuracy", ok,
          f"scripted gap {gaps['scripted']:.3f} (cap 0.02), "
          f"learned gap {gaps['full']:.3f} (cap 0.10)")


def test_analytic_gradients_match_finite_differences():
    rng = np.random.default_rng(29)
    dim, hidden = 20, 12
    cfg = TrainConfig(hidden=hidden)
    params = init_params(rng, dim, hidden)
    for k in params:
        params[k] = params[k] + rng.normal(0.0, 0.3, params[k].shape)
    batch = [Sample(x=rng.normal(size=dim), action=int(rng.integers(32)),
                    advantage=float(rng.normal()),
                    value_target=float(rng.normal()),
                    validity_target=(rng.random(32) < 0.5).astype(float))
             for _ in range(4)]
    _loss, grads = loss_and_grads(params, batch, cfg)
    keys = sorted(params)
    worst = 0.0
    step = 1e-5
    for probe in range(64):
        k = keys[probe % len(keys)]
        idx = int(rng.integers(params[k].size))
        base = params[k].flat[idx]
        params[k].flat[idx] = base + step
        up, _ = loss_and_grads(params, batch, cfg)
        params[k].flat[idx] = base - step
        down, _ = loss_and_grads(params, batch, cfg)
        params[k].flat[idx] = base
        fd = (up - down) / (2 * step)
        an = grads[k].flat[idx]
        worst = max(worst, abs(fd - an) / max(1.0, abs(fd), abs(an)))
    check("analytic gradients match finite differences", worst < 1e-4,
          f"64 probes, worst relative error {worst:.2e} (cap 1e-4)")


def test_every_record_replays_exactly(desk, evaluated):
    cfg, layouts, split, dataset = desk
    records = [r for run in evaluated.values() for r in run["records"]]

    # add a primitive-control episode so both control modes are covered
    item = dataset.split_items("test")[0]
    ep = Episode(layouts[item.room_id], item.config, item.question,
                 reward=cfg.reward, detector=cfg.detector,
                 mem_config=cfg.world.memory(), seed=9,
                 scan_every=cfg.world.scan_every, control="primitive")
    ep.step_primitive(1)
    ep.step_primitive(0)
    ep.submit_answer(item.question.choices[0])
    role = "seen" if split[item.room_id] == "train" else "unseen"
    records.append(build_record(item, role, "human", ep, 9))

    t0 = time.monotonic()
    bad = []
    for rec in records:
        ok, problems = verify_replay(rec, layouts)
        if not ok:
            bad.append((rec.record_id, problems))
    # spot-check frame expansion for exact reward totals on a slice
    for rec in records[:: max(1, len(records) // 40)]:
        played = replay_frames(rec, layouts)
        if not played["consistent"]:
            bad.append((rec.record_id, played["mismatches"]))
    wall = time.monotonic() - t0
    check("every logged episode replays to the same state", not bad,
          f"{len(records)} records replayed, {len(bad)} diverged, {wall:.0f}s"
          + (f"; first: {bad[0]}" if bad else ""))


# ---- wire protocol ----

def test_wire_replay_matches_in_process(evaluated, wire):
    cfg = wire.service.cfg
    by_qtype = {}
    for rec in evaluated["scripted"]["records"]:
        by_qtype.setdefault(rec.qtype, []).append(rec)
    picked = [r for qt in QUESTION_TYPES for r in by_qtype[qt][:2]]
    client = WireClient("127.0.0.1", wire.tcp_port)
    try:
        mismatched = []
        for rec in picked:
            commands = [{"action": s["action"], "answer": s["answer"]}
                        for s in rec.steps]
            result = drive_commands(client, rec.qid, commands,
                                    control="planner", agent="scripted",
                                    seed=rec.seed,
                                    memory_alpha=cfg.eval.oracle_alpha)
            served = wire.service.records_by_id[result["metrics"]["record_id"]]
            if served != rec:
                mismatched.append(rec.record_id)
    finally:
        client.close()
    check("wire-driven episodes equal in-process records", not mismatched,
          f"{len(picked)} scripted episodes replayed over TCP, "
          f"{len(mismatched)} mismatched")


def test_human_session_end_to_end(desk, wire):
    _cfg, layouts, *_ = desk
    item = next(it for it in wire.service.items if it.question.qtype == "existence")

    def post(body):
        conn = http.client.HTTPConnection("127.0.0.1", wire.http_port, timeout=30)
        try:
            conn.request("POST", "/api", body=json.dumps(body).encode("utf-8"))
            return json.loads(conn.getresponse().read())
        finally:
            conn.close()

    state = post({"type": "reset", "item_id": item.qid, "control": "primitive",
                  "agent": "human", "seed": 77})
    sid = state["session"]
    for action in (1, 1, 0):
        state = post({"type": "step", "action": action, "session": sid})
        assert state["type"] == "state"
    result = post({"type": "step", "action": 7,
                   "answer": item.question.choices[0], "session": sid})
    assert result["type"] == "result"

    rec = wire.service.records_by_id[result["metrics"]["record_id"]]
    report = compute_metrics([rec])
    replay = post({"type": "get_replay", "log_id": rec.record_id,
                   "session": sid, "start": 0, "count": 500})
    header = replay["header"]
    final = replay["frames"][-1]
    ok = (rec.agent == "human"
          and report.get("all", "all", "episodes") == 1
          and verify_replay(rec, layouts)[0]
          and header["planner_steps"] == rec.planner_steps
          and header["primitive_steps"] == rec.primitive_steps
          and header["invalid_count"] == rec.invalid_count
          and header["total_reward"] == rec.total_reward
          and final["pose"] == [list(rec.final_pose[0]), rec.final_pose[1],
                                rec.final_pose[2]]
          and replay["consistent"] is True)
    check("human session plays, scores, and replays", ok,
          f"record {rec.record_id}: correct={rec.correct}, "
          f"{rec.planner_steps} commands, replay frames {replay['total_frames']}")
