"""High-level planner: feature extraction, the 32-action policy with value
and action-validity heads, synchronous advantage actor-critic training with
analytic gradients, and the reference agents (scripted explorer, memoryless
baseline runner).

The policy is a single tanh hidden layer feeding three linear heads. Keeping
the function class this small makes every gradient checkable against finite
differences, while the shared hidden layer is what lets the auxiliary
validity loss actually shape behavior.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .controllers import astar
from .episode import (
    ANSWER_ACTION,
    CLOSE_ACTION,
    Episode,
    N_PLANNER_ACTIONS,
    NAVIGATE_GOALS,
    OPEN_ACTION,
    SCAN_DOWN,
    SCAN_LEFT,
    SCAN_RIGHT,
    SCAN_UP,
)
from .geometry import HEADING_VECS, world_to_ego
from .questions import QUESTION_TYPES
from .world import (
    CLASS_INDEX,
    NUM_CLASSES,
    PITCH_FOR_BAND,
    RECEPTACLE_CLASSES,
    SMALL_CLASSES,
    band_stand_poses,
    floor_view_poses,
)


class DimensionMismatch(ValueError):
    """Feature vector length does not match the parameter shapes."""


class DivergenceDetected(RuntimeError):
    """Training produced a non-finite loss or gradient; carries a state dump."""

    def __init__(self, message: str, state: dict | None = None):
        super().__init__(message)
        self.state = state or {}


# ---- feature extraction ----

# block layout is data: tests assert provenance by block names
MEMORY_BLOCKS = ("window", "pooled", "question_cross", "coverage")


def _question_encoding(question) -> np.ndarray:
    enc = np.zeros(3 + len(SMALL_CLASSES) + len(RECEPTACLE_CLASSES))
    enc[QUESTION_TYPES.index(question.qtype)] = 1.0
    enc[3 + SMALL_CLASSES.index(question.object_class)] = 1.0
    if question.container_class is not None:
        enc[3 + len(SMALL_CLASSES) + RECEPTACLE_CLASSES.index(question.container_class)] = 1.0
    return enc


def _last_action_block(episode, n: int) -> np.ndarray:
    block = np.zeros(n + 1)
    if episode.last_action is not None:
        block[episode.last_action] = 1.0
    block[n] = 1.0 if episode.last_success else 0.0
    return block


def features_full(episode: Episode, question_blind: bool = False):
    """Feature vector for the memory-equipped planner.

    Returns (x, blocks) where blocks maps block name -> index slice; the
    question and question_cross blocks are zeroed for the question-blind arm
    (dimensionality unchanged).
    """
    mem = episode.mem
    q = episode.question
    win = mem.read_window(episode.agent)
    window = win.reshape(-1)
    pooled = np.concatenate([win.mean(axis=(0, 1)), win.max(axis=(0, 1))])
    question = _question_encoding(q)
    tau = mem.config.tau
    obj = mem.grid[:, :, CLASS_INDEX[q.object_class]]
    cross = np.zeros(5)
    cross[0] = win[:, :, CLASS_INDEX[q.object_class]].max()
    cross[1] = obj.max()
    cross[2] = min(int((obj > tau).sum()), 3) / 3.0
    if q.container_class is not None:
        cont = mem.grid[:, :, CLASS_INDEX[q.container_class]]
        cross[3] = cont.max()
        cross[4] = np.minimum(obj, cont).max()
    if question_blind:
        question = np.zeros_like(question)
        cross = np.zeros_like(cross)
    last = _last_action_block(episode, N_PLANNER_ACTIONS)
    pitch = np.zeros(3)
    pitch[episode.agent.pitch] = 1.0
    parts = [
        ("window", window),
        ("pooled", pooled),
        ("question", question),
        ("question_cross", cross),
        ("last_action", last),
        ("coverage", np.array([episode.coverage()])),
        ("pitch", pitch),
    ]
    return _assemble(parts)


def features_memoryless(episode: Episode, question_blind: bool = False):
    """Feature vector for the memoryless baseline: current detections only,
    no spatial-memory reads anywhere."""
    det = episode.last_detections
    q = episode.question
    counts = np.zeros(NUM_CLASSES)
    if det is not None:
        for class_id, _cell in det.objects:
            counts[CLASS_INDEX[class_id]] += 1.0
        for class_id, _cell, _open in det.receptacles:
            counts[CLASS_INDEX[class_id]] += 1.0
        free_seen = sum(1 for _c, is_free in det.free_space if is_free)
    else:
        free_seen = 0
    counts = np.minimum(counts, 3.0) / 3.0
    question = _question_encoding(q)
    if question_blind:
        question = np.zeros_like(question)
    parts = [
        ("obs_counts", counts),
        ("free_seen", np.array([free_seen / 50.0])),
        ("question", question),
        ("last_action", _last_action_block(episode, N_PLANNER_ACTIONS)),
    ]
    return _assemble(parts)


def _assemble(parts):
    blocks = {}
    at = 0
    for name, arr in parts:
        blocks[name] = slice(at, at + arr.shape[0])
        at += arr.shape[0]
    x = np.concatenate([arr for _name, arr in parts])
    return x, blocks


# ---- policy ----

@dataclass(frozen=True)
class PolicyOutput:
    pi: np.ndarray
    v: float
    validity_logits: np.ndarray


def init_params(rng: np.random.Generator, dim: int, hidden: int = 64) -> dict:
    """Hidden layer random, heads zero: the initial policy is exactly uniform
    and the value/validity outputs are 0 / 0.5."""
    return {
        "W1": rng.normal(0.0, 1.0 / np.sqrt(dim), (hidden, dim)),
        "b1": np.zeros(hidden),
        "Wp": np.zeros((N_PLANNER_ACTIONS, hidden)),
        "bp": np.zeros(N_PLANNER_ACTIONS),
        "Wv": np.zeros(hidden),
        "bv": np.zeros(1),
        "Wu": np.zeros((N_PLANNER_ACTIONS, hidden)),
        "bu": np.zeros(N_PLANNER_ACTIONS),
    }


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max()
    return z - np.log(np.exp(z).sum())


def _forward(params: dict, x: np.ndarray):
    if x.shape != (params["W1"].shape[1],):
        raise DimensionMismatch(
            f"feature dim {x.shape} != {(params['W1'].shape[1],)}")
    h = np.tanh(params["W1"] @ x + params["b1"])
    logits = params["Wp"] @ h + params["bp"]
    log_pi = _log_softmax(logits)
    v = float(params["Wv"] @ h + params["bv"][0])
    u = params["Wu"] @ h + params["bu"]
    return h, log_pi, v, u


def policy_forward(params: dict, x: np.ndarray) -> PolicyOutput:
    _h, log_pi, v, u = _forward(params, x)
    return PolicyOutput(pi=np.exp(log_pi), v=v, validity_logits=u)


@dataclass
class TrainConfig:
    hidden: int = 64
    lr: float = 3e-3
    gamma: float = 0.99
    n_steps: int = 5
    workers: int = 8
    entropy_beta: float = 0.01
    value_coef: float = 0.5
    validity_eta: float = 0.5
    grad_clip: float = 5.0
    updates: int = 1500
    log_every: int = 50
    seed: int = 0
    question_blind: bool = False
    memoryless: bool = False

    def feature_fn(self):
        return features_memoryless if self.memoryless else features_full


@dataclass(frozen=True)
class Sample:
    """One transition with everything the loss needs; advantage and return
    are constants (no gradient flows through them)."""

    x: np.ndarray
    action: int
    advantage: float
    value_target: float
    validity_target: np.ndarray  # float 0/1 per action


def loss_and_grads(params: dict, batch: list[Sample], cfg: TrainConfig):
    """Mean loss over the batch and its analytic gradients.

    loss = -A ln pi_a + value_coef (v - G)^2 - beta H(pi)
           + eta * mean_k BCE(validity_logit_k, mask_k)
    """
    grads = {k: np.zeros_like(v) for k, v in params.items()}
    total = 0.0
    n = len(batch)
    for s in batch:
        h, log_pi, v, u = _forward(params, s.x)
        pi = np.exp(log_pi)
        ent = -float(pi @ log_pi)
        # bce via softplus for stability: log(1+e^u) - y*u, mean over actions
        bce = float(np.mean(np.logaddexp(0.0, u) - s.validity_target * u))
        loss = (-s.advantage * log_pi[s.action]
                + cfg.value_coef * (v - s.value_target) ** 2
                - cfg.entropy_beta * ent
                + cfg.validity_eta * bce)
        total += loss

        g_logits = s.advantage * pi.copy()
        g_logits[s.action] -= s.advantage
        g_logits += cfg.entropy_beta * pi * (log_pi + ent)
        g_v = 2.0 * cfg.value_coef * (v - s.value_target)
        sig = 1.0 / (1.0 + np.exp(-u))
        g_u = cfg.validity_eta * (sig - s.validity_target) / u.shape[0]

        grads["Wp"] += np.outer(g_logits, h)
        grads["bp"] += g_logits
        grads["Wv"] += g_v * h
        grads["bv"][0] += g_v
        grads["Wu"] += np.outer(g_u, h)
        grads["bu"] += g_u
        g_h = params["Wp"].T @ g_logits + params["Wv"] * g_v + params["Wu"].T @ g_u
        g_z = g_h * (1.0 - h * h)
        grads["W1"] += np.outer(g_z, s.x)
        grads["b1"] += g_z
    for k in grads:
        grads[k] /= n
    return total / n, grads


def clip_gradients(grads: dict, max_norm: float) -> float:
    norm = float(np.sqrt(sum(float((g * g).sum()) for g in grads.values())))
    if norm > max_norm > 0:
        scale = max_norm / norm
        for k in grads:
            grads[k] *= scale
    return norm


class Adam:
    def __init__(self, params: dict, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: dict, grads: dict) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for k, g in grads.items():
            self.m[k] = self.beta1 * self.m[k] + (1 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1 - self.beta2) * g * g
            params[k] -= self.lr * (self.m[k] / b1c) / (np.sqrt(self.v[k] / b2c) + self.eps)


# ---- training ----

@dataclass
class _Worker:
    episode: Episode
    item: object
    samples: list = field(default_factory=list)


def train_actor_critic(episode_factory, n_items: int, cfg: TrainConfig):
    """Synchronous advantage actor-critic over `cfg.workers` in-process
    episode workers stepped round-robin, one Adam update per round.

    `episode_factory(item_index, repeat)` builds a fresh Episode for the
    item; items are visited in a seeded shuffled order, cycled. Returns
    (params, curves) where curves is a list of periodic metric rows.
    Raises DivergenceDetected on a non-finite loss or gradient.
    """
    rng = np.random.default_rng(cfg.seed)
    feature_fn = cfg.feature_fn()

    order = rng.permutation(n_items)
    cursor = 0
    repeat = 0

    def next_episode():
        nonlocal cursor, repeat
        idx = int(order[cursor])
        cursor += 1
        if cursor == n_items:
            cursor = 0
            repeat += 1
        return episode_factory(idx, repeat), idx

    workers = []
    for _ in range(cfg.workers):
        ep, idx = next_episode()
        workers.append(_Worker(episode=ep, item=idx))

    x0, _ = feature_fn(workers[0].episode, cfg.question_blind)
    params = init_params(rng, x0.shape[0], cfg.hidden)
    adam = Adam(params, cfg.lr)

    curves = []
    window_stats = []
    for update in range(1, cfg.updates + 1):
        batch = []
        for w in workers:
            w.samples = []
            bootstrap = 0.0
            for _ in range(cfg.n_steps):
                ep = w.episode
                x, _blocks = feature_fn(ep, cfg.question_blind)
                out = policy_forward(params, x)
                mask = ep.valid_actions().astype(float)
                a = int(rng.choice(N_PLANNER_ACTIONS, p=out.pi))
                r, done, _info = ep.step(a)
                w.samples.append([x, a, r, out.v, mask])
                if done:
                    window_stats.append((ep.question.qtype, bool(ep.correct),
                                         ep.world.primitive_steps,
                                         ep.invalid_count, ep.planner_steps,
                                         ep.total_reward))
                    w.episode, w.item = next_episode()
                    bootstrap = 0.0
                    break
            else:
                x, _blocks = feature_fn(w.episode, cfg.question_blind)
                bootstrap = policy_forward(params, x).v
            g = bootstrap
            for x, a, r, v, mask in reversed(w.samples):
                g = r + cfg.gamma * g
                batch.append(Sample(x=x, action=a, advantage=g - v,
                                    value_target=g, validity_target=mask))
        loss, grads = loss_and_grads(params, batch, cfg)
        if not np.isfinite(loss) or any(not np.isfinite(g).all() for g in grads.values()):
            raise DivergenceDetected(
                f"non-finite loss/gradient at update {update}",
                state={"update": update, "loss": loss, "params": params})
        clip_gradients(grads, cfg.grad_clip)
        adam.step(params, grads)

        if update % cfg.log_every == 0 or update == cfg.updates:
            curves.append(_curve_row(update, window_stats))
            window_stats = []
    return params, curves


def _curve_row(update: int, stats: list) -> dict:
    row = {"update": update, "episodes": len(stats)}
    if stats:
        row["accuracy"] = sum(1 for s in stats if s[1]) / len(stats)
        row["mean_length"] = sum(s[2] for s in stats) / len(stats)
        planner = sum(s[4] for s in stats)
        row["invalid_pct"] = 100.0 * sum(s[3] for s in stats) / planner if planner else 0.0
        row["mean_return"] = sum(s[5] for s in stats) / len(stats)
        for qt in QUESTION_TYPES:
            sub = [s for s in stats if s[0] == qt]
            row[f"accuracy_{qt}"] = (sum(1 for s in sub if s[1]) / len(sub)) if sub else None
    else:
        row.update(accuracy=None, mean_length=None, invalid_pct=None, mean_return=None)
        for qt in QUESTION_TYPES:
            row[f"accuracy_{qt}"] = None
    return row


def run_policy_episode(params: dict, episode: Episode, rng: np.random.Generator,
                       cfg: TrainConfig, mask_invalid: bool = False) -> Episode:
    """Roll a trained policy to episode end (sampling; a fixed eval seed makes
    it deterministic). Optional masking zeroes invalid actions at sampling."""
    feature_fn = cfg.feature_fn()
    while not episode.done:
        x, _ = feature_fn(episode, cfg.question_blind)
        pi = policy_forward(params, x).pi
        if mask_invalid:
            m = episode.valid_actions().astype(float)
            masked = pi * m
            pi = masked / masked.sum() if masked.sum() > 0 else m / m.sum()
        a = int(rng.choice(N_PLANNER_ACTIONS, p=pi))
        episode.step(a)
    return episode


# ---- scripted explorer ----

class _EpisodeOver(Exception):
    pass


def _do(episode: Episode, index: int, answer: str | None = None):
    if episode.done:
        raise _EpisodeOver
    episode.step(index, answer_choice=answer)
    if episode.done and index != ANSWER_ACTION:
        raise _EpisodeOver


def _rotate_to(episode: Episode, heading: int) -> None:
    delta = (heading - episode.agent.heading) % 4
    if delta == 1:
        _do(episode, SCAN_RIGHT)
    elif delta == 2:
        _do(episode, SCAN_LEFT)
        _do(episode, SCAN_LEFT)
    elif delta == 3:
        _do(episode, SCAN_LEFT)


def _set_pitch(episode: Episode, pitch: int) -> None:
    while episode.agent.pitch < pitch:
        _do(episode, SCAN_UP)
    while episode.agent.pitch > pitch:
        _do(episode, SCAN_DOWN)


def _goto(episode: Episode, target: tuple[int, int]) -> None:
    """Chained Navigate planner actions along the true shortest path; rotates
    with scans when the path starts outside the forward goal fan."""
    while episode.agent.cell != target:
        path = astar(episode.truth_occupancy(), episode.agent.cell, target)
        if path is None:
            raise AssertionError(f"no true path to {target}")
        best = None
        for i in range(len(path) - 1, 0, -1):
            f, l = world_to_ego(episode.agent.cell, episode.agent.heading, path[i])
            if (f, l) in NAVIGATE_GOALS:
                best = (f, l)
                break
        if best is None:
            # path starts outside the forward goal fan; turn toward it
            nxt = path[1]
            dx, dy = nxt[0] - episode.agent.cell[0], nxt[1] - episode.agent.cell[1]
            _rotate_to(episode, HEADING_VECS.index((dx, dy)))
            continue
        _do(episode, (best[0] - 1) * 5 + (best[1] + 2))


def _bfs_dists(episode: Episode, start: tuple[int, int]) -> dict:
    from collections import deque

    free = episode.layout.free_cells
    dist = {start: 0}
    q = deque([start])
    while q:
        x, y = q.popleft()
        for dx, dy in ((0, -1), (1, 0), (0, 1), (-1, 0)):
            n = (x + dx, y + dy)
            if n in free and n not in dist:
                dist[n] = dist[(x, y)] + 1
                q.append(n)
    return dist


def _best_stand(episode: Episode, poses, dists) -> tuple | None:
    best = None
    for cell, heading in poses:
        d = dists.get(cell)
        if d is None:
            continue
        key = (d, episode.layout.cell_index(cell), heading)
        if best is None or key < best[0]:
            best = (key, cell, heading)
    return None if best is None else (best[1], best[2])


def _visit_receptacle(episode: Episode, r) -> None:
    layout = episode.layout
    poses = band_stand_poses(layout, r.cell, r.height_band, r.openable)
    dists = _bfs_dists(episode, episode.agent.cell)
    stand = _best_stand(episode, poses, dists)
    if stand is None:
        raise AssertionError(f"receptacle {r.rid} has no reachable stand pose")
    cell, heading = stand
    _goto(episode, cell)
    _set_pitch(episode, PITCH_FOR_BAND[r.height_band])
    _rotate_to(episode, heading)
    if r.openable:
        while episode.valid_actions()[OPEN_ACTION]:
            _do(episode, OPEN_ACTION)
        while episode.valid_actions()[CLOSE_ACTION]:
            _do(episode, CLOSE_ACTION)
    elif r.cell not in episode.inspected_cells:
        # force one detector pass at exactly this pose
        _do(episode, SCAN_LEFT)
        _do(episode, SCAN_RIGHT)
    _set_pitch(episode, 1)


def _visit_floor(episode: Episode, cell: tuple[int, int]) -> None:
    layout = episode.layout
    poses = floor_view_poses(layout, cell)
    dists = _bfs_dists(episode, episode.agent.cell)
    stand = _best_stand(episode, poses, dists)
    if stand is None:
        raise AssertionError(f"floor cell {cell} has no reachable view pose")
    at, heading = stand
    _goto(episode, at)
    _set_pitch(episode, 1)
    _rotate_to(episode, heading)
    if cell not in episode.inspected_cells:
        _do(episode, SCAN_LEFT)
        _do(episode, SCAN_RIGHT)


def scripted_explorer(episode: Episode) -> Episode:
    """Deterministic reference agent: visit every receptacle at a band-correct
    stand pose (opening and re-closing all openables), then put a level view
    on every remaining floor cell, then answer. Acts only through planner
    actions; uses ground truth only to pick its own targets.

    With the oracle detector this inspects every cell that could hold an
    object, so the memory readout is exact.
    """
    try:
        done_rids = set()
        while True:
            pending = [r for r in episode.scene.receptacles if r.rid not in done_rids]
            if not pending:
                break
            dists = _bfs_dists(episode, episode.agent.cell)
            best = None
            for r in pending:
                if r.cell in episode.inspected_cells:
                    done_rids.add(r.rid)
                    continue
                stand = _best_stand(
                    episode, band_stand_poses(episode.layout, r.cell,
                                              r.height_band, r.openable), dists)
                if stand is None:
                    raise AssertionError(f"receptacle {r.rid} unreachable")
                key = (dists[stand[0]], r.rid)
                if best is None or key < best[0]:
                    best = (key, r)
            if best is None:
                continue
            _visit_receptacle(episode, best[1])
            done_rids.add(best[1].rid)
        while True:
            todo = [c for c in sorted(episode.layout.free_cells)
                    if c not in episode.inspected_cells]
            if not todo:
                break
            dists = _bfs_dists(episode, episode.agent.cell)
            cell = min(todo, key=lambda c: (dists.get(c, 1 << 30),
                                            episode.layout.cell_index(c)))
            _visit_floor(episode, cell)
        _do(episode, ANSWER_ACTION)
    except _EpisodeOver:
        pass
    return episode
