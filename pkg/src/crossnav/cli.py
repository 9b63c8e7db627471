"""Command-line entry points for the full pipeline:

    crossnav scene-gen      write the scene and validated episode suites
    crossnav demo-gen       run the scripted expert and record the dataset
    crossnav train          fit a reward network on a demonstration dataset
    crossnav eval           run the controller comparison grid
    crossnav replay-export  render a stored episode log to image frames
    crossnav serve          start the teleoperation / replay bridge server
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

log = logging.getLogger("crossnav")


def _scene_dir_args(p):
    p.add_argument("--scene-dir", required=True,
                   help="directory holding scene.json and the suites")


def _load_scene_dir(scene_dir):
    from .scene import load_scene, load_suite
    d = Path(scene_dir)
    scene = load_scene(d / "scene.json")
    train = load_suite(d / "train_suite.json")
    test = load_suite(d / "test_suite.json")
    return scene, train, test


def cmd_scene_gen(args) -> int:
    from .scene import build_scene, save_scene, save_suite
    from .suites import generate_suites
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    scene = build_scene(door_width=args.door_width,
                        wall_thickness=args.wall_thickness,
                        seed=args.master_seed)
    log.info("generating suites (runs the rule-based controllers to validate)")
    train, test = generate_suites(scene, master_seed=args.master_seed)
    save_scene(scene, out / "scene.json")
    save_suite(train, out / "train_suite.json", name="train")
    save_suite(test, out / "test_suite.json", name="test")
    contention = sum(ep.contention for ep in test)
    print(f"wrote {out}/scene.json, train_suite.json (7 configs), "
          f"test_suite.json (13 configs, {contention} contention)")
    return 0


def cmd_demo_gen(args) -> int:
    from .controllers import ScriptedExpert
    from .demos import augment_counter_stops, count_counter_stops, record_demos, save_dataset
    from .sim import run_episode, save_log
    from .suites import training_run_plan
    scene, train, _ = _load_scene_dir(args.scene_dir)
    out = Path(args.out_dir)
    (out / "logs").mkdir(parents=True, exist_ok=True)
    plan = training_run_plan(train, master_seed=args.master_seed)
    logs = []
    for ep in plan:
        elog = run_episode(scene, ep, ScriptedExpert())
        if elog.outcome != "success":
            print(f"expert failed on {ep.episode_id}: {elog.outcome}", file=sys.stderr)
            return 1
        save_log(elog, out / "logs" / f"{ep.episode_id}.jsonl")
        stops = count_counter_stops(elog, scene.spec)
        log.info("%s: robot %.1fs human %.1fs stops %d",
                 ep.episode_id, elog.robot_time, elog.human_time, stops)
        logs.append(elog)
    dataset = record_demos(logs, plan, scene)
    for elog, ep in zip(logs, plan):
        dataset.demonstrations.extend(augment_counter_stops(elog, ep, scene))
    save_dataset(dataset, out / "dataset.npz")
    counts = dataset.counts_by_source()
    print(f"wrote {out}/dataset.npz: {len(dataset)} demonstrations {counts} "
          f"from {len(logs)} expert episodes")
    return 0


def _parse_widths(text: str) -> tuple[int, ...]:
    return tuple(int(w) for w in text.split(","))


def cmd_train(args) -> int:
    from .demos import extrapolate_dataset, load_dataset
    from .rewardnet import NetConfig, save_params
    from .scene import load_scene
    from .smedirl import DemoDataset, TrainConfig, save_train_config, train
    dataset = load_dataset(args.dataset)
    scene = load_scene(Path(args.scene_dir) / "scene.json")

    demos = dataset.demonstrations
    if not args.counter_stops:
        demos = [d for d in demos if d.source != "counter_stop_augmented"]
    if args.stride > 1:
        demos = [d for d in demos if int(round(d.t / 0.1)) % args.stride == 0]
    dataset = DemoDataset(demonstrations=demos, spec=dataset.spec,
                          scene_id=dataset.scene_id, provenance=dataset.provenance)
    if args.extrapolate_k > 0:
        dataset = extrapolate_dataset(dataset, scene, k=args.extrapolate_k,
                                      radius_cells=args.extrapolate_radius,
                                      seed=args.seed)
    print(f"training on {len(dataset)} demonstrations {dataset.counts_by_source()}")

    cfg = TrainConfig(lr=args.lr, epochs=args.epochs, batch_size=args.batch_size,
                      lambda_smooth=args.lambda_smooth, sigma_s=args.sigma_s,
                      sigma_c=args.sigma_c, lambda_reg=args.lambda_reg,
                      svf_mode=args.svf_mode, optimizer=args.optimizer,
                      seed=args.seed)
    net_cfg = NetConfig(in_channels=8, encoder_widths=_parse_widths(args.net_widths),
                        kernel=3, seed=args.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    params, stats = train(dataset, net_cfg, cfg,
                          checkpoint_dir=out.parent / f"{out.stem}_ckpts"
                          if args.checkpoint_every else None,
                          checkpoint_every=args.checkpoint_every)
    save_params(params, out)
    stats.save(out.with_suffix(".stats.jsonl"))
    save_train_config(cfg, out.with_suffix(".train.cfg"))
    status = "aborted (divergence), last good parameters saved" \
        if stats.aborted else "converged"
    print(f"wrote {out} ({status}, {len(stats.records)} epochs)")
    return 0


def _parse_controllers(text: str):
    from .evaluate import ControllerSpec
    specs = []
    for item in text.split(","):
        item = item.strip()
        if "=" in item:
            name, _, ckpt = item.partition("=")
            specs.append(ControllerSpec(kind="reward", name=name, checkpoint=ckpt))
        elif item in ("orca", "backoff", "expert"):
            specs.append(ControllerSpec(kind=item, name=item))
        else:
            raise ValueError(f"unknown controller {item!r} "
                             "(use orca | backoff | expert | name=checkpoint)")
    return specs


def cmd_eval(args) -> int:
    from .evaluate import eval_suite
    scene, train, test = _load_scene_dir(args.scene_dir)
    episodes = train if args.suite == "train" else test
    specs = _parse_controllers(args.controllers)
    report = eval_suite(scene, episodes, specs, runs=args.runs,
                        master_seed=args.master_seed, workers=args.workers,
                        human_mode=args.human_mode,
                        log_dir=args.logs_dir)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    report.save(out)
    print(report.summary_table())
    print(f"wrote {out}")
    return 0


def cmd_replay_export(args) -> int:
    from .replay import export_frames
    from .scene import load_suite
    from .sim import load_log
    scene, train, test = _load_scene_dir(args.scene_dir)
    elog = load_log(args.log)
    episodes = {ep.episode_id: ep for ep in train + test}
    base_id = elog.episode_id.split("r")[0] if elog.episode_id not in episodes \
        else elog.episode_id
    if elog.episode_id in episodes:
        episode = episodes[elog.episode_id]
    elif base_id in episodes:
        episode = dataclasses.replace(episodes[base_id], episode_id=elog.episode_id)
    else:
        print(f"episode {elog.episode_id} not found in suites", file=sys.stderr)
        return 1
    frames = export_frames(scene, elog, episode, args.out_dir,
                           checkpoint=args.checkpoint, every=args.every)
    print(f"wrote {len(frames)} frames to {args.out_dir}")
    return 0


def cmd_serve(args) -> int:
    from .server import serve
    scene, train, test = _load_scene_dir(args.scene_dir)
    serve(scene, train + test, host=args.host, port=args.port,
          checkpoint=args.checkpoint, demo_dir=args.demo_dir)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="crossnav", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("scene-gen", help="write scene and validated suites")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--master-seed", type=int, default=0)
    p.add_argument("--door-width", type=float, default=0.9)
    p.add_argument("--wall-thickness", type=float, default=0.2)
    p.set_defaults(fn=cmd_scene_gen)

    p = sub.add_parser("demo-gen", help="run the scripted expert, write demos")
    _scene_dir_args(p)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--master-seed", type=int, default=0)
    p.set_defaults(fn=cmd_demo_gen)

    p = sub.add_parser("train", help="train a reward network")
    _scene_dir_args(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True, help="checkpoint path to write")
    p.add_argument("--lambda-smooth", type=float, default=0.1)
    p.add_argument("--sigma-s", type=float, default=1.5)
    p.add_argument("--sigma-c", type=float, default=1.0)
    p.add_argument("--lambda-reg", type=float, default=1e-6)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--extrapolate-k", type=int, default=0,
                   help="extra demos per expert demo (6 for the full method)")
    p.add_argument("--extrapolate-radius", type=int, default=5)
    p.add_argument("--counter-stops", action=argparse.BooleanOptionalAction,
                   default=True, help="include counter-stop augmented demos")
    p.add_argument("--stride", type=int, default=1,
                   help="keep every n-th 0.1s demonstration")
    p.add_argument("--net-widths", default="16,32,64")
    p.add_argument("--svf-mode", choices=("expectation", "sampled"),
                   default="expectation")
    p.add_argument("--optimizer", choices=("adam", "sgd_momentum"), default="adam")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--checkpoint-every", type=int, default=0)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="run the controller comparison")
    _scene_dir_args(p)
    p.add_argument("--suite", choices=("train", "test"), default="test")
    p.add_argument("--controllers", default="orca,backoff",
                   help="comma list: orca | backoff | expert | name=ckpt")
    p.add_argument("--runs", type=int, default=5)
    p.add_argument("--master-seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--human-mode", choices=("priority", "orca"), default="priority")
    p.add_argument("--out", required=True)
    p.add_argument("--logs-dir", default=None)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("replay-export", help="render a log to PNG frames")
    _scene_dir_args(p)
    p.add_argument("--log", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--checkpoint", default=None,
                   help="reward checkpoint for the overlay")
    p.add_argument("--every", type=float, default=0.5)
    p.set_defaults(fn=cmd_replay_export)

    p = sub.add_parser("serve", help="teleop / replay bridge server")
    _scene_dir_args(p)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8008)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--demo-dir", default="teleop_demos")
    p.set_defaults(fn=cmd_serve)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except (ValueError, FileNotFoundError, RuntimeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
