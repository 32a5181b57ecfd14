"""Command-line entry points for the full pipeline.

Subcommands: demo, augment, train, eval, serve. Every stochastic command
takes an explicit seed (directly or through its config file), so reruns
are byte-identical. Relative output paths resolve under
$SARTBENCH_DATA_DIR when it is set.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from .annotation import load_annotations
from .augment import AugmentationConfig, build_dataset, miles_build_dataset
from .harness import run_experiment
from .policy import TrainConfig, load_policy, save_loss_curve, save_policy, train
from .server import AnnotationSession, serve_annotation
from .sim import TaskSpec, replay, reset, scripted_expert
from .trajectory import Dataset, load_dataset, save_dataset

log = logging.getLogger(__name__)


def _out_path(path: str) -> str:
    base = os.environ.get("SARTBENCH_DATA_DIR")
    if base and not os.path.isabs(path):
        os.makedirs(base, exist_ok=True)
        return os.path.join(base, path)
    return path


def _load_task(args) -> TaskSpec:
    if getattr(args, "task_config", None):
        return TaskSpec.from_file(args.task_config)
    return TaskSpec.named(args.task)


def demo_id_for(metadata: dict) -> str:
    return metadata.get("demo_id", f"{metadata['task']}-s{metadata['seed']}")


def cmd_demo(args) -> int:
    task = _load_task(args)
    scene, _, _ = reset(task, args.seed)
    traj = scripted_expert(task, scene, args.seed)
    verified = replay(traj, task, scene)
    metadata = {
        "task": task.kind,
        "seed": str(args.seed),
        "config": "expert-demo",
        "demo_id": f"{task.kind}-s{args.seed}",
        "replay_verified": str(verified.success).lower(),
    }
    out = _out_path(args.out)
    save_dataset(Dataset((traj,), metadata), out)
    print(f"wrote demo ({len(traj)} waypoints, replay_verified="
          f"{verified.success}) to {out}")
    return 0


def _single_demo(path):
    data = load_dataset(path)
    if len(data) != 1:
        raise ValueError(f"{path} holds {len(data)} trajectories; expected a "
                         f"single demonstration")
    return data.trajectories[0], data.metadata


def cmd_augment(args) -> int:
    demo, meta = _single_demo(args.demo)
    if args.config:
        cfg = AugmentationConfig.from_file(args.config)
    else:
        cfg = AugmentationConfig(master_seed=args.seed if args.seed is not None
                                 else int(meta["seed"]))
    if args.samples is not None:
        from dataclasses import replace as _replace
        cfg = _replace(cfg, K=args.samples)
    if args.mode == "miles":
        data = miles_build_dataset(demo, cfg, meta["task"])
    else:
        ann = load_annotations(args.annotations, demo,
                               expected_demo_id=demo_id_for(meta))
        data = build_dataset(demo, ann, cfg, meta["task"])
    out = _out_path(args.out)
    save_dataset(data, out)
    print(f"wrote {len(data)} trajectories to {out}")
    return 0


def cmd_train(args) -> int:
    data = load_dataset(args.dataset)
    if args.config:
        cfg = TrainConfig.from_file(args.config)
    else:
        cfg = TrainConfig(seed=args.seed if args.seed is not None else 0)
    policy = train(data, cfg)
    out = _out_path(args.out)
    save_policy(policy, out)
    save_loss_curve(policy, out + ".loss.csv")
    print(f"wrote policy (final loss {policy.loss_curve[-1]:.3e}) to {out}")
    return 0


def cmd_eval(args) -> int:
    with open(args.experiment, encoding="utf-8") as fh:
        cfg = json.load(fh)
    out_dir = _out_path(args.out_dir)
    table, tests = run_experiment(cfg, out_dir)
    print(f"wrote report for {len(table.cells)} cells to {out_dir}")
    return 0


def cmd_serve(args) -> int:
    demo, meta = _single_demo(args.demo)
    task = TaskSpec.from_file(args.task_config) if args.task_config \
        else TaskSpec.named(meta["task"])
    scene, _, _ = reset(task, int(meta["seed"]))
    session = AnnotationSession(demo_id_for(meta), demo, scene, task,
                                _out_path(args.out),
                                ee_halfwidth=args.ee_halfwidth)
    serve_annotation(session, args.host, args.port, ui_dir=args.ui_dir)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sartbench",
        description="single-demo trajectory augmentation workbench")
    parser.add_argument("-v", "--verbose", action="store_true",
                        help="log at INFO level")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("demo", help="record a scripted expert demonstration")
    p.add_argument("--task", default="peg_in_hole",
                   choices=["peg_in_hole", "handle_lift"])
    p.add_argument("--task-config", help="task spec JSON overriding --task")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_demo)

    p = sub.add_parser("augment", help="expand a demo through its boundaries")
    p.add_argument("--demo", required=True)
    p.add_argument("--annotations", help="annotation file (sart mode)")
    p.add_argument("--config", help="augmentation config JSON")
    p.add_argument("--mode", default="sart", choices=["sart", "miles"])
    p.add_argument("--seed", type=int, help="master seed when no config given")
    p.add_argument("--samples", type=int, help="override samples per sphere")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("train", help="fit the behavioral-cloning policy")
    p.add_argument("--dataset", required=True)
    p.add_argument("--config", help="training config JSON")
    p.add_argument("--seed", type=int, help="seed when no config given")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="run a method-comparison experiment")
    p.add_argument("--experiment", required=True,
                   help="experiment config JSON")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("serve", help="serve the annotation API/UI")
    p.add_argument("--demo", required=True)
    p.add_argument("--task-config")
    p.add_argument("--out", required=True, help="annotation file written on commit")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8702)
    p.add_argument("--ee-halfwidth", type=float, default=0.01)
    p.add_argument("--ui-dir", help="static frontend directory to serve at /")
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except RuntimeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
