"""Command-line entry points: dataset generation, training, evaluation,
ablations, the episode server, and replay verification."""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

from .config import RunConfig, load_config
from .harness import (
    AGENT_KINDS,
    TRAINED_ARMS,
    build_world,
    compute_metrics,
    load_episode_log,
    modal_answers,
    replay_frames,
    run_ablation_suite,
    run_episodes,
    save_curves_csv,
    save_episode_log,
    save_metrics_csv,
    train_arm,
    verify_replay,
)
from .paramio import load_params, save_params
from .planner import TrainConfig
from .questions import save_dataset, verify_balance
from .rooms import save_rooms


def _load_cfg(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg = dataclasses.replace(
            cfg,
            training=dataclasses.replace(cfg.training, seed=args.seed),
            eval=dataclasses.replace(cfg.eval, seed=args.seed))
    return cfg


def _outdir(args, default: str) -> str:
    out = args.out or default
    os.makedirs(out, exist_ok=True)
    return out


def cmd_gen_dataset(args) -> int:
    cfg = _load_cfg(args)
    out = _outdir(args, "runs/dataset")
    layouts, split, dataset = build_world(cfg)
    from .rooms import desk_family, house_family
    specs, _ = (desk_family if cfg.world.family == "desk" else house_family)(
        cfg.world.family_seed)
    save_rooms(os.path.join(out, "rooms.json"), specs, split)
    save_dataset(dataset, out)
    report = verify_balance(dataset)
    print(f"{len(dataset.items)} items -> {out}")
    for qtype, counts in sorted(report.per_qtype.items()):
        print(f"  {qtype}: {counts}")
    if not report.ok:
        print(f"BALANCE VIOLATIONS: {report.violations}")
        return 1
    return 0


def cmd_train(args) -> int:
    cfg = _load_cfg(args)
    if args.updates:
        cfg = dataclasses.replace(
            cfg, training=dataclasses.replace(cfg.training, updates=args.updates))
    out = _outdir(args, f"runs/train-{args.arm}")
    layouts, split, dataset = build_world(cfg)
    items = dataset.split_items("train")
    params, curves, tcfg = train_arm(cfg, layouts, items, args.arm)
    meta = {"arm": args.arm, "train_config": dataclasses.asdict(tcfg)}
    path = os.path.join(out, f"{args.arm}.params")
    save_params(path, params, meta)
    save_curves_csv(curves, os.path.join(out, "curves.csv"))
    if curves:
        last = curves[-1]
        print(f"update {last['update']}: accuracy {last['accuracy']:.3f}, "
              f"invalid% {last['invalid_pct']:.1f}, return {last['mean_return']:.2f}")
    print(f"params -> {path}")
    return 0


def _train_cfg_from_meta(meta: dict) -> TrainConfig:
    return TrainConfig(**meta["train_config"]) if "train_config" in meta else TrainConfig()


def cmd_eval(args) -> int:
    cfg = _load_cfg(args)
    out = _outdir(args, f"runs/eval-{args.agent}")
    layouts, split, dataset = build_world(cfg)
    items = dataset.split_items(args.split, rooms=args.rooms)
    params = tcfg = modal = None
    if args.agent in ("actor-critic", "memoryless"):
        if not args.params:
            print("--params required for learned agents", file=sys.stderr)
            return 2
        params, meta = load_params(args.params)
        tcfg = _train_cfg_from_meta(meta)
    if args.agent == "mla":
        modal = modal_answers(dataset.split_items("train"))
    records = run_episodes(args.agent, items, layouts, dataset.room_split, cfg,
                           params=params, train_cfg=tcfg, modal=modal)
    report = compute_metrics(records)
    print(report.table())
    save_metrics_csv(report, os.path.join(out, "metrics.csv"))
    if args.save_logs:
        for r in records:
            save_episode_log(r, os.path.join(out, "logs"))
    print(f"metrics -> {out}/metrics.csv")
    return 0


def cmd_ablate(args) -> int:
    cfg = _load_cfg(args)
    out = _outdir(args, "runs/ablate")
    layouts, split, dataset = build_world(cfg)
    arms = {}
    for arm in TRAINED_ARMS:
        path = os.path.join(args.arms, f"{arm}.params")
        if not os.path.isfile(path):
            print(f"missing {path}; train all arms first", file=sys.stderr)
            return 2
        params, meta = load_params(path)
        arms[arm] = (params, _train_cfg_from_meta(meta))
    rows = run_ablation_suite(dataset, layouts, cfg, arms)
    cols = list(rows[0].keys())
    widths = {c: max(len(c), 12) for c in cols}
    print("  ".join(c.ljust(widths[c]) for c in cols))
    for row in rows:
        print("  ".join(
            (f"{row[c]:.4f}" if isinstance(row[c], float) else str(row[c])).ljust(widths[c])
            for c in cols))
    with open(os.path.join(out, "ablations.json"), "w") as f:
        json.dump(rows, f, indent=2, sort_keys=True)
    print(f"rows -> {out}/ablations.json")
    return 0


def cmd_serve(args) -> int:
    from .server import serve

    cfg = _load_cfg(args)
    handle = serve(cfg, port=args.port, http_port=args.http_port,
                   static_dir=args.static, log_dir=args.logs)
    print(f"tcp on {handle.tcp_port}, http on {handle.http_port}"
          + (f", ui assets from {args.static}" if args.static else ""))
    try:
        handle.wait()
    except KeyboardInterrupt:
        handle.stop()
    return 0


def cmd_replay(args) -> int:
    cfg = _load_cfg(args)
    layouts, _split, _dataset = build_world(cfg)
    record = load_episode_log(args.log)
    ok, problems = verify_replay(record, layouts)
    print(f"{record.record_id}: agent={record.agent} correct={record.correct} "
          f"planner={record.planner_steps} primitive={record.primitive_steps}")
    if not ok:
        for p in problems:
            print(f"  MISMATCH {p}")
        return 1
    print("  world-core replay matches the recorded final state")
    if args.frames:
        played = replay_frames(record, layouts)
        print(f"  {len(played['frames'])} frames, consistent={played['consistent']}")
        with open(args.frames, "w") as f:
            json.dump(played, f, indent=2, sort_keys=True)
        print(f"  frames -> {args.frames}")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="gridhouse",
        description="grid-house question-answering: data, training, serving")
    parser.add_argument("--config", help="JSON run config (defaults built in)")
    parser.add_argument("--seed", type=int, help="override training and eval seeds")
    parser.add_argument("--out", help="output directory")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("gen-dataset", help="write rooms + question dataset")

    p = sub.add_parser("train", help="train one policy arm")
    p.add_argument("--arm", choices=TRAINED_ARMS, default="full")
    p.add_argument("--updates", type=int, help="override update budget")

    p = sub.add_parser("eval", help="run an agent over a dataset split")
    p.add_argument("--agent", choices=AGENT_KINDS, default="scripted")
    p.add_argument("--params", help="trained params file")
    p.add_argument("--split", choices=("train", "test"), default="test")
    p.add_argument("--rooms", choices=("seen", "unseen"), default=None)
    p.add_argument("--save-logs", action="store_true")

    p = sub.add_parser("ablate", help="evaluate the full ablation table")
    p.add_argument("--arms", required=True, help="directory of <arm>.params files")

    p = sub.add_parser("serve", help="run the episode server")
    p.add_argument("--port", type=int, default=7410)
    p.add_argument("--http-port", type=int, default=7411)
    p.add_argument("--static", help="directory of UI assets to serve")
    p.add_argument("--logs", help="directory for episode logs")

    p = sub.add_parser("replay", help="verify and inspect a logged episode")
    p.add_argument("--log", required=True, help=".jsonl.gz episode log")
    p.add_argument("--frames", help="write playback frames JSON here")

    args = parser.parse_args(argv)
    handlers = {
        "gen-dataset": cmd_gen_dataset,
        "train": cmd_train,
        "eval": cmd_eval,
        "ablate": cmd_ablate,
        "serve": cmd_serve,
        "replay": cmd_replay,
    }
    return handlers[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
