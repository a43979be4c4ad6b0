"""Questions and balanced dataset generation.

Three question types: Existence (yes/no), Counting (0..3), containment
(yes/no). Balance is constructive: every question text gets whole blocks of
configurations, one per answer choice, so the answer histogram of any text is
exactly uniform at every scale. Each block owns an rng stream derived from
(seed, room, qtype, text, split, block index), so generation order does not
matter and parallel generation would be byte-identical to serial.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .world import (
    Layout,
    MAX_COUNT,
    OPENABLE_CLASSES,
    SMALL_CLASSES,
    load_scene,
)

EXISTENCE = "existence"
COUNTING = "counting"
CONTAINMENT = "containment"
QUESTION_TYPES = (EXISTENCE, COUNTING, CONTAINMENT)

CHOICES = {
    EXISTENCE: ("yes", "no"),
    COUNTING: ("0", "1", "2", "3"),
    CONTAINMENT: ("yes", "no"),
}

# items per (room, qtype) at scale 1.0
TRAIN_ITEMS_FULL = 1024
TEST_ITEMS_FULL = 128


@dataclass(frozen=True)
class Question:
    qtype: str
    object_class: str
    container_class: str | None
    text: str
    choices: tuple[str, ...]


@dataclass(frozen=True)
class SceneConfig:
    room_id: str
    seed: int
    # placements: ((class_id, instance_id, (site_kind, site_where)), ...)
    placements: tuple = ()


@dataclass(frozen=True)
class DatasetItem:
    qid: str
    question: Question
    config: SceneConfig
    answer: str
    split: str  # train | test
    room_id: str


@dataclass
class Dataset:
    items: list[DatasetItem]
    room_split: dict[str, str]  # room_id -> train | test
    seed: int
    scale: float
    test_scale: float

    def split_items(self, split: str, rooms: str | None = None) -> list[DatasetItem]:
        """rooms: None for all, 'seen' for train rooms, 'unseen' for test rooms."""
        out = []
        for it in self.items:
            if it.split != split:
                continue
            role = self.room_split[it.room_id]
            if rooms == "seen" and role != "train":
                continue
            if rooms == "unseen" and role != "test":
                continue
            out.append(it)
        return out


@dataclass(frozen=True)
class PlacementConstraint:
    """Required placements of one object class for a target answer."""

    class_id: str
    count: int
    location: str = "any"  # any | hidden_only | in:<class> | on:<class> | not_at:<class>


class Infeasible(ValueError):
    """The room cannot realize the constraint."""


def question_for(qtype: str, object_class: str, container_class: str | None = None) -> Question:
    if qtype == EXISTENCE:
        text = f"is there a {object_class} in the room?"
    elif qtype == COUNTING:
        text = f"how many {object_class}s are in the room?"
    elif qtype == CONTAINMENT:
        prep = "in" if container_class in OPENABLE_CLASSES else "on"
        text = f"is there a {object_class} {prep} the {container_class}?"
    else:
        raise ValueError(qtype)
    return Question(qtype, object_class, container_class, text, CHOICES[qtype])


def room_questions(layout: Layout, qtype: str) -> list[Question]:
    """All question texts askable in a room, in canonical order."""
    if qtype in (EXISTENCE, COUNTING):
        return [question_for(qtype, c) for c in SMALL_CLASSES]
    present = sorted({r["class_id"] for r in layout.receptacle_specs})
    return [question_for(CONTAINMENT, obj, cont) for cont in present for obj in SMALL_CLASSES]


def _sites_for(layout: Layout, class_id: str, location: str) -> list[tuple]:
    """Eligible sites for one instance: ('floor', cell) / ('in'|'on', rid)."""
    sites: list[tuple] = []
    recept_ok = []
    for r in layout.receptacle_specs:
        kind = "in" if r["openable"] else "on"
        recept_ok.append((kind, r["rid"], r["class_id"]))
    if location == "any":
        sites += [("floor", c) for c in sorted(layout.free_cells)]
        sites += [(k, rid) for k, rid, _ in recept_ok]
    elif location == "hidden_only":
        sites += [(k, rid) for k, rid, _ in recept_ok if k == "in"]
    elif location.startswith("in:") or location.startswith("on:"):
        want_kind, cls = location.split(":", 1)
        sites += [(k, rid) for k, rid, rc in recept_ok if rc == cls and k == want_kind]
    elif location.startswith("not_at:"):
        cls = location.split(":", 1)[1]
        sites += [("floor", c) for c in sorted(layout.free_cells)]
        sites += [(k, rid) for k, rid, rc in recept_ok if rc != cls]
    else:
        raise ValueError(f"bad location {location!r}")
    return sites


def generate_configuration(layout: Layout, constraints: list[PlacementConstraint],
                           rng: np.random.Generator, distractors: bool = True) -> SceneConfig:
    """Sample a scene configuration satisfying the constraints.

    Sites are drawn uniformly without replacement among eligible sites.
    Unconstrained classes get 0-2 distractor instances at unrestricted sites.
    Raises Infeasible when a constraint cannot be met in this room.
    """
    placements = []
    taken: set[tuple] = set()  # (site, class)
    constrained = {c.class_id for c in constraints}
    serial = 0

    def place(class_id: str, count: int, location: str) -> None:
        nonlocal serial
        sites = [s for s in _sites_for(layout, class_id, location) if (s, class_id) not in taken]
        if len(sites) < count:
            raise Infeasible(f"{count} x {class_id} at {location} in {layout.room_id}")
        idx = rng.choice(len(sites), size=count, replace=False)
        for i in sorted(int(j) for j in idx):
            site = sites[i]
            taken.add((site, class_id))
            placements.append((class_id, f"{class_id}_{serial}", site))
            serial += 1

    for c in constraints:
        place(c.class_id, c.count, c.location)
    if distractors:
        for class_id in SMALL_CLASSES:
            if class_id in constrained:
                continue
            n = int(rng.choice([0, 1, 2], p=[0.55, 0.3, 0.15]))
            if n:
                place(class_id, n, "any")
    placements.sort(key=lambda p: p[1])
    return SceneConfig(room_id=layout.room_id, seed=int(rng.integers(0, 2**31)),
                       placements=tuple(placements))


def answer_of(layout: Layout, config: SceneConfig, question: Question) -> str:
    """Ground-truth answer from placements alone (no simulation needed)."""
    if question.qtype == EXISTENCE:
        n = sum(1 for p in config.placements if p[0] == question.object_class)
        return "yes" if n > 0 else "no"
    if question.qtype == COUNTING:
        n = sum(1 for p in config.placements if p[0] == question.object_class)
        return str(min(n, MAX_COUNT))
    if question.qtype == CONTAINMENT:
        cls_of = {r["rid"]: r["class_id"] for r in layout.receptacle_specs}
        for class_id, _, site in config.placements:
            if class_id != question.object_class:
                continue
            if site[0] in ("in", "on") and cls_of[site[1]] == question.container_class:
                return "yes"
        return "no"
    raise ValueError(question.qtype)


def _constraints_for(question: Question, answer: str,
                     rng: np.random.Generator) -> list[PlacementConstraint]:
    obj = question.object_class
    if question.qtype == EXISTENCE:
        if answer == "yes":
            return [PlacementConstraint(obj, int(rng.integers(1, MAX_COUNT + 1)))]
        return [PlacementConstraint(obj, 0)]
    if question.qtype == COUNTING:
        return [PlacementConstraint(obj, int(answer))]
    if question.qtype == CONTAINMENT:
        cont = question.container_class
        kind = "in" if cont in OPENABLE_CLASSES else "on"
        if answer == "yes":
            return [PlacementConstraint(obj, 1, f"{kind}:{cont}")]
        # absent near the container; the object may still exist elsewhere
        n = int(rng.choice([0, 1, 2], p=[0.4, 0.4, 0.2]))
        return [PlacementConstraint(obj, n, f"not_at:{cont}")]
    raise ValueError(question.qtype)


def _block_rng(seed: int, room_id: str, qtype: str, text: str, split: str, block: int) -> np.random.Generator:
    key = f"{seed}|{room_id}|{qtype}|{text}|{split}|{block}".encode()
    digest = hashlib.sha256(key).digest()
    return np.random.default_rng(int.from_bytes(digest[:8], "big"))


def _budget(full: int, scale: float, n_choices: int) -> int:
    """Scaled item budget, quantized to at least one whole block."""
    blocks = max(1, round(full * scale / n_choices))
    return blocks * n_choices


def generate_dataset(room_specs: list[dict], room_split: dict[str, str], seed: int,
                     scale: float = 1.0, test_scale: float | None = None) -> Dataset:
    """Balanced dataset over a room family.

    Train rooms get train items plus a test slice (novel placements in seen
    rooms); held-out rooms get test items only. Per (room, qtype) the budget
    is 1024*scale / 128*test_scale, distributed over the room's question texts
    in whole blocks of one config per answer choice.
    """
    if test_scale is None:
        test_scale = scale
    items: list[DatasetItem] = []
    for spec in room_specs:
        layout = Layout(spec)
        role = room_split[layout.room_id]
        for qtype in QUESTION_TYPES:
            questions = room_questions(layout, qtype)
            choices = CHOICES[qtype]
            plan = []
            if role == "train":
                plan.append(("train", _budget(TRAIN_ITEMS_FULL, scale, len(choices))))
            plan.append(("test", _budget(TEST_ITEMS_FULL, test_scale, len(choices))))
            for split, budget in plan:
                n_blocks = budget // len(choices)
                per_q = [n_blocks // len(questions)] * len(questions)
                for i in range(n_blocks % len(questions)):
                    per_q[i] += 1
                for q, blocks in zip(questions, per_q):
                    for b in range(blocks):
                        rng = _block_rng(seed, layout.room_id, qtype, q.text, split, b)
                        for ci, answer in enumerate(choices):
                            cons = _constraints_for(q, answer, rng)
                            config = generate_configuration(layout, cons, rng)
                            got = answer_of(layout, config, q)
                            if got != answer:
                                raise AssertionError(
                                    f"constructed config answers {got!r}, wanted {answer!r}")
                            qid = f"{layout.room_id}:{qtype}:{_text_key(q.text)}:{split}:{b}:{ci}"
                            items.append(DatasetItem(qid, q, config, answer, split, layout.room_id))
    return Dataset(items=items, room_split=dict(room_split), seed=seed,
                   scale=scale, test_scale=test_scale)


def _text_key(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()[:8]


@dataclass
class BalanceReport:
    ok: bool
    groups: int
    violations: list[str]
    per_qtype: dict[str, dict[str, int]]  # qtype -> split -> count


def verify_balance(dataset: Dataset) -> BalanceReport:
    """Check the per-(room, text, split) answer histogram is exactly uniform."""
    hist: dict[tuple, dict[str, int]] = {}
    per_qtype: dict[str, dict[str, int]] = {q: {"train": 0, "test": 0} for q in QUESTION_TYPES}
    for it in dataset.items:
        key = (it.room_id, it.question.text, it.split)
        hist.setdefault(key, {c: 0 for c in it.question.choices})
        hist[key][it.answer] += 1
        per_qtype[it.question.qtype][it.split] += 1
    violations = []
    for key, counts in sorted(hist.items()):
        values = set(counts.values())
        if len(values) != 1:
            violations.append(f"{key}: {counts}")
    return BalanceReport(ok=not violations, groups=len(hist),
                         violations=violations, per_qtype=per_qtype)


def validate_dataset(dataset: Dataset, layouts: dict[str, Layout]) -> None:
    """Every config loads and every referenced receptacle is usable."""
    for it in dataset.items:
        load_scene(layouts[it.room_id], it.config)


# ---- serialization ----

def question_to_json(q: Question) -> dict:
    return dict(qtype=q.qtype, object_class=q.object_class,
                container_class=q.container_class, text=q.text, choices=list(q.choices))


def question_from_json(d: dict) -> Question:
    return Question(d["qtype"], d["object_class"], d["container_class"],
                    d["text"], tuple(d["choices"]))


def item_to_json(it: DatasetItem) -> dict:
    return dict(
        qid=it.qid,
        question=question_to_json(it.question),
        config=dict(room_id=it.config.room_id, seed=it.config.seed,
                    placements=[[c, i, [s[0], list(s[1]) if isinstance(s[1], tuple) else s[1]]]
                                for c, i, s in it.config.placements]),
        answer=it.answer,
        split=it.split,
        room_id=it.room_id,
    )


def item_from_json(d: dict) -> DatasetItem:
    placements = tuple(
        (c, i, (s[0], tuple(s[1]) if isinstance(s[1], list) else s[1]))
        for c, i, s in d["config"]["placements"]
    )
    config = SceneConfig(d["config"]["room_id"], d["config"]["seed"], placements)
    return DatasetItem(d["qid"], question_from_json(d["question"]), config,
                       d["answer"], d["split"], d["room_id"])


def save_dataset(dataset: Dataset, out_dir: str | Path) -> None:
    """items.jsonl (one item per line, sorted keys) + manifest.json."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with (out / "items.jsonl").open("w") as f:
        for it in dataset.items:
            f.write(json.dumps(item_to_json(it), sort_keys=True) + "\n")
    report = verify_balance(dataset)
    manifest = dict(
        schema_version=1,
        seed=dataset.seed,
        scale=dataset.scale,
        test_scale=dataset.test_scale,
        room_split=dataset.room_split,
        items=len(dataset.items),
        balanced=report.ok,
        per_qtype=report.per_qtype,
    )
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))


def load_dataset(out_dir: str | Path) -> Dataset:
    out = Path(out_dir)
    manifest = json.loads((out / "manifest.json").read_text())
    items = []
    with (out / "items.jsonl").open() as f:
        for line in f:
            items.append(item_from_json(json.loads(line)))
    return Dataset(items=items, room_split=manifest["room_split"], seed=manifest["seed"],
                   scale=manifest["scale"], test_scale=manifest["test_scale"])
