"""Episode runner, metrics, replay verification, trajectory logs, and the
ablation driver.

Records are self-contained: each carries the scene configuration, the full
primitive trace, and the per-command log, so any episode can be replayed and
re-scored from its record alone (plus the room layouts).
"""

from __future__ import annotations

import dataclasses
import gzip
import json
import os
from dataclasses import dataclass, field

import numpy as np

from .config import RunConfig
from .controllers import DetectorModel
from .episode import ANSWER_ACTION, Episode, RewardConfig
from .memory import MemoryConfig
from .planner import TrainConfig, run_policy_episode, scripted_explorer
from .questions import (
    Dataset,
    DatasetItem,
    QUESTION_TYPES,
    SceneConfig,
    question_from_json,
    question_to_json,
)
from .world import Action, ALL_CLASSES, Layout, apply_action, initial_agent, load_scene


class ConfigMismatch(ValueError):
    """Dataset refers to classes or rooms this run is not configured for."""


AGENT_KINDS = ("scripted", "mla", "actor-critic", "memoryless")


@dataclass
class EpisodeRecord:
    record_id: str
    qid: str
    qtype: str
    room_id: str
    split: str  # seen | unseen (room membership)
    agent: str
    control: str  # planner | primitive
    question: dict  # qtype, object_class, container_class, text, choices
    config: dict  # scene configuration: room_id, seed, placements
    settings: dict  # detector, memory, reward, scan_every, navigation, answer_mode
    answer: str | None
    expected: str
    correct: bool
    planner_steps: int
    primitive_steps: int
    invalid_count: int
    total_reward: float
    seed: int
    final_pose: tuple  # (cell, heading, pitch)
    final_open: dict  # rid -> is_open
    primitive_trace: list
    steps: list  # per-command log dicts

    def to_json(self) -> dict:
        d = dataclasses.asdict(self)
        d["final_pose"] = [list(self.final_pose[0]), self.final_pose[1], self.final_pose[2]]
        return d

    @classmethod
    def from_json(cls, d: dict) -> "EpisodeRecord":
        d = dict(d)
        pose = d["final_pose"]
        d["final_pose"] = (tuple(pose[0]), pose[1], pose[2])
        return cls(**d)


def _config_dict(config) -> dict:
    return {
        "room_id": config.room_id,
        "seed": config.seed,
        "placements": [[c, i, [s[0], list(s[1]) if isinstance(s[1], tuple) else s[1]]]
                       for c, i, s in config.placements],
    }


def _settings_dict(episode: Episode) -> dict:
    return {
        "detector": dataclasses.asdict(episode.world.detector),
        "memory": dataclasses.asdict(episode.mem.config),
        "reward": dataclasses.asdict(episode.reward),
        "scan_every": episode.scan_every,
        "oracle_navigation": episode.oracle_navigation,
        "answer_mode": episode.answer_mode,
    }


def build_record(item: DatasetItem, room_role: str, agent: str,
                 episode: Episode, seed: int) -> EpisodeRecord:
    steps = []
    for s in episode.log:
        steps.append({
            "action": s.action, "label": s.label, "reward": s.reward,
            "was_valid": s.was_valid,
            "pose": [list(s.pose[0]), s.pose[1], s.pose[2]],
            "coverage": s.coverage, "primitive_steps": s.primitive_steps,
            "answer": s.answer,
        })
    pose = (episode.agent.cell, episode.agent.heading, episode.agent.pitch)
    return EpisodeRecord(
        record_id=f"{item.qid}.{agent}.{seed}",
        qid=item.qid,
        qtype=item.question.qtype,
        room_id=item.room_id,
        split=room_role,
        agent=agent,
        control=episode.control,
        question=question_to_json(item.question),
        config=_config_dict(item.config),
        settings=_settings_dict(episode),
        answer=episode.answer_given,
        expected=episode.expected_answer,
        correct=bool(episode.correct),
        planner_steps=episode.planner_steps,
        primitive_steps=episode.world.primitive_steps,
        invalid_count=episode.invalid_count,
        total_reward=episode.total_reward,
        seed=seed,
        final_pose=pose,
        final_open=episode.scene.open_flags(),
        primitive_trace=list(episode.primitive_trace),
        steps=steps,
    )


def _episode_seed(base: int, index: int) -> int:
    return int(np.random.default_rng([base, index]).integers(2 ** 31))


def modal_answers(items: list[DatasetItem]) -> dict:
    """Most frequent answer per question text; ties resolve in choice order."""
    counts: dict[str, dict] = {}
    for it in items:
        counts.setdefault(it.question.text, {c: 0 for c in it.question.choices})
        counts[it.question.text][it.answer] += 1
    out = {}
    for text, hist in counts.items():
        best = max(hist.values())
        out[text] = next(c for c in hist if hist[c] == best)
    return out


def run_episodes(agent: str, items: list[DatasetItem], layouts: dict[str, Layout],
                 room_split: dict[str, str], cfg: RunConfig,
                 params: dict | None = None,
                 train_cfg: TrainConfig | None = None,
                 modal: dict | None = None) -> list[EpisodeRecord]:
    """Run one episode per item, in order, deterministically for fixed seeds."""
    if agent not in AGENT_KINDS:
        raise ValueError(f"unknown agent kind {agent!r}")
    if agent in ("actor-critic", "memoryless") and params is None:
        raise ValueError(f"{agent} agent needs trained params")
    for it in items:
        if it.question.object_class not in ALL_CLASSES:
            raise ConfigMismatch(f"unknown class {it.question.object_class!r}")
        if it.room_id not in layouts:
            raise ConfigMismatch(f"no layout for room {it.room_id!r}")
    tcfg = train_cfg or TrainConfig()
    if agent == "memoryless":
        tcfg = dataclasses.replace(tcfg, memoryless=True)
    records = []
    for idx, item in enumerate(items):
        seed = _episode_seed(cfg.eval.seed, idx)
        layout = layouts[item.room_id]
        mem_cfg = cfg.world.memory()
        answer_mode = "memory"
        oracle_nav = cfg.eval.oracle_navigation
        if agent == "scripted":
            mem_cfg = MemoryConfig(alpha=cfg.eval.oracle_alpha,
                                   tau=mem_cfg.tau, window=mem_cfg.window)
        if agent == "memoryless":
            answer_mode = "observation"
        ep = Episode(layout, item.config, item.question,
                     reward=cfg.reward, detector=cfg.detector,
                     mem_config=mem_cfg, seed=seed,
                     scan_every=cfg.world.scan_every,
                     oracle_navigation=oracle_nav,
                     answer_mode=answer_mode)
        if agent == "scripted":
            scripted_explorer(ep)
        elif agent == "mla":
            pick = (modal or {}).get(item.question.text, item.question.choices[0])
            ep.step(ANSWER_ACTION, answer_choice=pick)
        else:
            rng = np.random.default_rng([cfg.eval.seed, idx, 1])
            run_policy_episode(params, ep, rng, tcfg,
                               mask_invalid=cfg.eval.mask_invalid)
        role = "seen" if room_split[item.room_id] == "train" else "unseen"
        records.append(build_record(item, role, agent, ep, seed))
    return records


def build_world(cfg: RunConfig) -> tuple[dict[str, Layout], dict[str, str], Dataset]:
    """Rooms, their train/test split, and the question dataset for a run."""
    from .questions import generate_dataset
    from .rooms import desk_family, house_family

    families = {"desk": desk_family, "house": house_family}
    if cfg.world.family not in families:
        raise ConfigMismatch(f"unknown room family {cfg.world.family!r}")
    specs, split = families[cfg.world.family](cfg.world.family_seed)
    layouts = {s["room_id"]: Layout(s) for s in specs}
    dataset = generate_dataset(specs, split, cfg.world.dataset_seed,
                               cfg.world.scale, cfg.world.test_scale)
    return layouts, split, dataset


def make_episode_factory(cfg: RunConfig, layouts: dict[str, Layout],
                         items: list[DatasetItem]):
    """Episode builder for the training loop: fresh scene per (item, repeat)
    with a seed derived from the training seed."""
    def factory(item_index: int, repeat: int) -> Episode:
        item = items[item_index]
        seed = int(np.random.default_rng(
            [cfg.training.seed, item_index, repeat]).integers(2 ** 31))
        return Episode(layouts[item.room_id], item.config, item.question,
                       reward=cfg.reward, detector=cfg.detector,
                       mem_config=cfg.world.memory(), seed=seed,
                       scan_every=cfg.world.scan_every)
    return factory


TRAINED_ARMS = ("full", "question-blind", "no-validity-loss", "memoryless")


def arm_train_config(base: TrainConfig, arm: str) -> TrainConfig:
    """The per-arm TrainConfig: same budget and seeds, one switch flipped."""
    if arm == "full":
        return base
    if arm == "question-blind":
        return dataclasses.replace(base, question_blind=True)
    if arm == "no-validity-loss":
        return dataclasses.replace(base, validity_eta=0.0)
    if arm == "memoryless":
        return dataclasses.replace(base, memoryless=True)
    raise ValueError(f"unknown arm {arm!r}")


def train_arm(cfg: RunConfig, layouts: dict[str, Layout],
              items: list[DatasetItem], arm: str = "full"):
    """Train one arm; returns (params, curves, arm TrainConfig)."""
    from .planner import train_actor_critic

    tcfg = arm_train_config(cfg.training, arm)
    factory = make_episode_factory(cfg, layouts, items)
    params, curves = train_actor_critic(factory, len(items), tcfg)
    return params, curves, tcfg


# ---- metrics ----

@dataclass
class MetricsReport:
    # (split, qtype) -> {"accuracy", "mean_primitive_steps", "invalid_pct", "episodes"}
    rows: dict = field(default_factory=dict)

    def get(self, split: str, qtype: str, key: str):
        return self.rows.get((split, qtype), {}).get(key)

    def table(self) -> str:
        header = f"{'split':8} {'qtype':12} {'n':>5} {'accuracy':>9} {'length':>8} {'invalid%':>9}"
        lines = [header, "-" * len(header)]
        for (split, qtype), row in sorted(self.rows.items()):
            lines.append(
                f"{split:8} {qtype:12} {row['episodes']:>5} "
                f"{row['accuracy']:>9.4f} {row['mean_primitive_steps']:>8.1f} "
                f"{row['invalid_pct']:>9.2f}")
        return "\n".join(lines)

    def csv_rows(self) -> list[dict]:
        out = []
        for (split, qtype), row in sorted(self.rows.items()):
            out.append({"split": split, "qtype": qtype, **row})
        return out


def compute_metrics(records: list[EpisodeRecord]) -> MetricsReport:
    """Top-1 accuracy, mean primitive length, and invalid-command percentage
    (100 * invalid / planner commands), per question type and room split."""
    report = MetricsReport()
    splits = sorted({r.split for r in records}) + ["all"]
    qtypes = [q for q in QUESTION_TYPES if any(r.qtype == q for r in records)] + ["all"]
    for split in splits:
        for qtype in qtypes:
            group = [r for r in records
                     if (split == "all" or r.split == split)
                     and (qtype == "all" or r.qtype == qtype)]
            if not group:
                continue
            planner = sum(r.planner_steps for r in group)
            report.rows[(split, qtype)] = {
                "episodes": len(group),
                "accuracy": sum(1 for r in group if r.correct) / len(group),
                "mean_primitive_steps": sum(r.primitive_steps for r in group) / len(group),
                "invalid_pct": (100.0 * sum(r.invalid_count for r in group) / planner)
                if planner else 0.0,
            }
    return report


# ---- replay ----

def replay_record(record: EpisodeRecord, layouts: dict[str, Layout]) -> dict:
    """Re-execute the primitive trace through the world alone; returns the
    final state it produces."""
    layout = layouts[record.room_id]
    scene = load_scene(layout, record.config)
    agent = initial_agent(scene)
    for a in record.primitive_trace:
        agent, _outcome = apply_action(scene, agent, Action(a))
    return {
        "final_pose": (agent.cell, agent.heading, agent.pitch),
        "final_open": scene.open_flags(),
    }


def verify_replay(record: EpisodeRecord, layouts: dict[str, Layout]) -> tuple[bool, list[str]]:
    """Replay determinism check: world-core replay lands on the recorded
    final state and the logged per-step numbers re-add to the totals."""
    problems = []
    got = replay_record(record, layouts)
    if got["final_pose"] != record.final_pose:
        problems.append(f"pose {got['final_pose']} != {record.final_pose}")
    if got["final_open"] != record.final_open:
        problems.append(f"open flags {got['final_open']} != {record.final_open}")
    reward_sum = sum(s["reward"] for s in record.steps)
    if abs(reward_sum - record.total_reward) > 1e-9:
        problems.append(f"reward sum {reward_sum} != {record.total_reward}")
    if len(record.steps) != record.planner_steps:
        problems.append(f"{len(record.steps)} logged steps != {record.planner_steps}")
    invalid = sum(1 for s in record.steps if not s["was_valid"])
    if invalid != record.invalid_count:
        problems.append(f"invalid recount {invalid} != {record.invalid_count}")
    if len(record.primitive_trace) != record.primitive_steps:
        problems.append(f"{len(record.primitive_trace)} primitives != {record.primitive_steps}")
    if record.steps:
        last = record.steps[-1]
        pose = (tuple(last["pose"][0]), last["pose"][1], last["pose"][2])
        if pose != record.final_pose:
            problems.append(f"last logged pose {pose} != {record.final_pose}")
    return (not problems), problems


def config_from_record(record: EpisodeRecord) -> SceneConfig:
    placements = tuple(
        (c, i, (s[0], tuple(s[1]) if isinstance(s[1], list) else s[1]))
        for c, i, s in record.config["placements"])
    return SceneConfig(record.config["room_id"], record.config["seed"], placements)


def episode_from_record(record: EpisodeRecord, layouts: dict[str, Layout]) -> Episode:
    """A fresh episode in the recorded setup, ready to re-feed commands."""
    s = record.settings
    return Episode(layouts[record.room_id], config_from_record(record),
                   question_from_json(record.question),
                   reward=RewardConfig(**s["reward"]),
                   detector=DetectorModel(**s["detector"]),
                   mem_config=MemoryConfig(**s["memory"]),
                   seed=record.seed,
                   scan_every=s["scan_every"],
                   control=record.control,
                   oracle_navigation=s["oracle_navigation"],
                   answer_mode=s["answer_mode"])


def replay_frames(record: EpisodeRecord, layouts: dict[str, Layout]) -> dict:
    """Primitive-granularity playback frames, reconstructed by re-driving a
    fresh episode with the logged commands.

    Frame 0 is the initial pose with empty coverage. Each later frame is one
    low-level action, tagged with the planner command it belongs to and a
    phase: "planner" for the first primitive a command produced (the decision
    point), "controller" for the rest. Commands that move nothing (answer,
    failed navigation) contribute one synthetic frame with action null.
    """
    ep = episode_from_record(record, layouts)
    frames = [{"index": 0, "command": -1, "phase": "init", "action": None,
               "pose": _pose_json(ep.agent), "coverage": 0.0}]
    pending: list[dict] = []
    chained = ep.world.on_primitive

    def grab(step):
        chained(step)
        pending.append({"action": int(step.action),
                        "pose": _pose_json(ep.agent),
                        "coverage": ep.coverage()})

    ep.world.on_primitive = grab
    commands = []
    mismatches = []
    for k, logged in enumerate(record.steps):
        pending.clear()
        if record.control == "primitive":
            if logged["label"] == "answer":
                ep.submit_answer(logged["answer"])
            else:
                ep.step_primitive(logged["action"])
        else:
            ep.step(logged["action"], answer_choice=logged["answer"])
        if not pending:
            pending.append({"action": None, "pose": _pose_json(ep.agent),
                            "coverage": ep.coverage()})
        first = len(frames)
        for j, fr in enumerate(pending):
            fr.update(index=len(frames), command=k,
                      phase="planner" if j == 0 else "controller")
            frames.append(fr)
        replayed = ep.log[-1]
        for field_name, want in (("reward", logged["reward"]),
                                 ("coverage", logged["coverage"]),
                                 ("primitive_steps", logged["primitive_steps"])):
            got = getattr(replayed, field_name)
            if abs(got - want) > 1e-9:
                mismatches.append(f"step {k} {field_name}: {got} != {want}")
        commands.append({**logged, "first_frame": first,
                         "last_frame": len(frames) - 1})
    if ep.primitive_trace != list(record.primitive_trace):
        mismatches.append("primitive trace diverged")
    if ep.total_reward != record.total_reward:
        mismatches.append(f"total reward {ep.total_reward} != {record.total_reward}")
    return {"record_id": record.record_id, "frames": frames, "commands": commands,
            "consistent": not mismatches, "mismatches": mismatches}


def _pose_json(agent) -> list:
    return [list(agent.cell), agent.heading, agent.pitch]


# ---- logs ----

def save_episode_log(record: EpisodeRecord, directory: str) -> str:
    """One gzip JSON-lines file per episode: a header line, then step lines."""
    os.makedirs(directory, exist_ok=True)
    path = os.path.join(directory, f"{record.record_id}.jsonl.gz")
    doc = record.to_json()
    steps = doc.pop("steps")
    with gzip.open(path, "wt", encoding="utf-8") as f:
        f.write(json.dumps({"kind": "episode", **doc}, sort_keys=True) + "\n")
        for s in steps:
            f.write(json.dumps({"kind": "step", **s}, sort_keys=True) + "\n")
    return path


def load_episode_log(path: str) -> EpisodeRecord:
    with gzip.open(path, "rt", encoding="utf-8") as f:
        lines = [json.loads(line) for line in f if line.strip()]
    if not lines or lines[0].get("kind") != "episode":
        raise ValueError(f"{path}: missing episode header line")
    header = {k: v for k, v in lines[0].items() if k != "kind"}
    header["steps"] = [{k: v for k, v in line.items() if k != "kind"}
                       for line in lines[1:]]
    return EpisodeRecord.from_json(header)


def save_metrics_csv(report: MetricsReport, path: str) -> None:
    import csv

    rows = report.csv_rows()
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)


def save_curves_csv(curves: list[dict], path: str) -> None:
    import csv

    keys = sorted({k for row in curves for k in row})
    front = [k for k in ("update", "episodes", "accuracy") if k in keys]
    keys = front + [k for k in keys if k not in front]
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=keys)
        writer.writeheader()
        writer.writerows(curves)


# ---- ablations ----

ABLATION_ROWS = (
    "full",
    "full+gt-detector",
    "full+gt-detector+oracle-nav",
    "question-blind",
    "no-validity-loss",
    "memoryless",
    "scripted",
    "mla",
)


def run_ablation_suite(dataset: Dataset, layouts: dict[str, Layout], cfg: RunConfig,
                       arms: dict, train_items: list[DatasetItem] | None = None) -> list[dict]:
    """Evaluate every ablation row on the dataset's test items.

    `arms` maps arm name -> (params, TrainConfig) for the four trained arms:
    "full", "question-blind", "no-validity-loss", "memoryless". Detector swaps
    for the GT rows are eval-time substitutions on the same "full" params.
    """
    from .controllers import DetectorModel

    items = dataset.split_items("test")
    oracle = dataclasses.replace(cfg, detector=DetectorModel())
    oracle_nav = dataclasses.replace(
        oracle, eval=dataclasses.replace(cfg.eval, oracle_navigation=True))
    modal = modal_answers(train_items if train_items is not None
                          else dataset.split_items("train"))
    plans = {
        "full": ("actor-critic", cfg, "full"),
        "full+gt-detector": ("actor-critic", oracle, "full"),
        "full+gt-detector+oracle-nav": ("actor-critic", oracle_nav, "full"),
        "question-blind": ("actor-critic", oracle, "question-blind"),
        "no-validity-loss": ("actor-critic", oracle, "no-validity-loss"),
        "memoryless": ("memoryless", oracle, "memoryless"),
        "scripted": ("scripted", oracle, None),
        "mla": ("mla", oracle, None),
    }
    rows = []
    for name in ABLATION_ROWS:
        agent, row_cfg, arm = plans[name]
        params, tcfg = arms[arm] if arm else (None, None)
        records = run_episodes(agent, items, layouts, dataset.room_split, row_cfg,
                               params=params, train_cfg=tcfg, modal=modal)
        report = compute_metrics(records)
        row = {"arm": name}
        for qt in QUESTION_TYPES:
            row[f"accuracy_{qt}"] = report.get("all", qt, "accuracy")
        row["accuracy"] = report.get("all", "all", "accuracy")
        row["invalid_pct"] = report.get("all", "all", "invalid_pct")
        row["mean_length"] = report.get("all", "all", "mean_primitive_steps")
        rows.append(row)
    return rows
