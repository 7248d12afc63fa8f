"""``vpoc`` command line: collect, train-detector, eval-detector, train, eval, plot.

Exit codes: 0 success, 2 configuration or usage error, 3 I/O error,
4 missing artifact, 5 incompatible checkpoint.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import config as config_mod
from . import detector as det
from . import plotting
from .agent import Agent, load_actor, run_training
from .dataset import collect, load_dataset, save_dataset, split
from .env import ViewpointEnv
from .errors import ConfigError, FormatError, MissingArtifactError, ShapeError, StorageError, VpocError
from .evaluation import evaluate, fixation_counts, read_summary_csv, write_records_jsonl, write_summary_csv
from .policies import POLICY_NAMES, make_policy
from .scene import generate_plant

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_MISSING, EXIT_CHECKPOINT = 0, 2, 3, 4, 5


class CheckpointMismatch(VpocError):
    pass


# ---------------------------------------------------------------------------
# helpers


def _mkdir(path):
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as exc:
        raise StorageError(f"cannot create {path}: {exc}") from exc
    return path


def _write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _save_config(cfg, directory):
    config_mod.save(cfg, os.path.join(directory, "config.toml"))


def _dataset_dir(args, cfg):
    return args.dataset or os.path.join(cfg.output_dir(), "dataset")


def _require_dataset(path):
    if not os.path.exists(os.path.join(path, "annotations.jsonl")):
        raise MissingArtifactError(f"no dataset at {path} (run `vpoc collect` first)")
    return load_dataset(path)


def _grid_params(path):
    if not path or not os.path.exists(path):
        raise MissingArtifactError(f"grid detector parameters not found at {path!r} (run `vpoc train-detector`)")
    with open(path, encoding="utf-8") as fh:
        return det.GridDetectorParams.from_dict(json.load(fh))


def _default_params_path(cfg):
    return os.path.join(cfg.output_dir(), "detector", "grid_params.json")


def _make_detector(cfg, params_path=None):
    intr = cfg.env.intrinsics
    if det.DetectorKind(cfg.detector.kind) is det.DetectorKind.ORACLE:
        return det.OracleDetector(cfg.detector, intr)
    return det.GridDetector(_grid_params(params_path or _default_params_path(cfg)), cfg.detector, cfg.dataset.heuristic)


def _make_env(cfg, params_path=None):
    return ViewpointEnv(cfg.env, _make_detector(cfg, params_path), cfg.scene)


def _load_actor_for(env, path):
    if not path:
        raise ConfigError("this policy needs --checkpoint")
    if not os.path.exists(path):
        raise MissingArtifactError(f"checkpoint {path} does not exist")
    try:
        actor = load_actor(path)
    except FormatError as exc:
        raise CheckpointMismatch(str(exc)) from exc
    spec = env.obs_spec
    arch = actor.params.arch
    img = tuple(arch.image_shape) if arch.image_shape else None
    if arch.vector_dim != spec.vector_dim or img != (tuple(spec.image_shape) if spec.image_shape else None):
        raise CheckpointMismatch(
            f"checkpoint expects observations (image={img}, vector={arch.vector_dim}) but the environment "
            f"produces (image={spec.image_shape}, vector={spec.vector_dim})"
        )
    return actor


# ---------------------------------------------------------------------------
# subcommands


def cmd_collect(args, cfg):
    out = _mkdir(_dataset_dir(args, cfg))
    n_plants = args.num_plants or cfg.dataset.num_plants
    n_views = args.num_views or cfg.dataset.num_views
    cfg.dataset.num_plants, cfg.dataset.num_views = n_plants, n_views
    env = cfg.env
    ds = collect(
        n_plants, n_views, cfg.dataset, scene_config=cfg.scene, intrinsics=env.intrinsics,
        workspace=env.workspace, radius=env.radius, seed=cfg.seed, workers=cfg.workers,
    )
    save_dataset(ds, out)
    _save_config(cfg, out)
    manifest = {
        "frames": len(ds),
        "annotations": sum(len(af.annotations) for af in ds),
        "ripe_annotations": sum(1 for af in ds for a in af.annotations if a.cls.value == "ripe"),
        "num_plants": n_plants,
        "num_views": n_views,
        "config_hash": config_mod.config_hash(cfg),
    }
    _write_json(os.path.join(out, "manifest.json"), manifest)
    print(f"collected {manifest['frames']} frames with {manifest['annotations']} boxes into {out}")
    return EXIT_OK


def cmd_train_detector(args, cfg):
    ds = _require_dataset(_dataset_dir(args, cfg))
    train, test = split(ds, cfg.dataset.train_fraction, cfg.seed)
    params = det.train_grid(train, cfg.grid, cfg.detector.grid_size, cfg.dataset.heuristic)
    out = _mkdir(os.path.join(cfg.output_dir(), "detector"))
    path = args.params or os.path.join(out, "grid_params.json")
    _write_json(path, params.to_dict())
    x, y = det.dataset_cells(test, params.grid_size, cfg.dataset.heuristic)
    prob = 1.0 / (1.0 + np.exp(-(x @ params.weights + params.bias)))
    acc = float(np.mean((prob >= 0.5) == (y >= 0.5)))
    prior = float(np.mean(np.maximum(y.mean(axis=0), 1.0 - y.mean(axis=0))))
    _write_json(
        os.path.join(out, "train_summary.json"),
        {"initial_loss": params.initial_loss, "final_loss": params.final_loss, "test_cell_accuracy": acc, "majority_baseline": prior},
    )
    _save_config(cfg, out)
    print(f"grid detector: loss {params.initial_loss:.4f} -> {params.final_loss:.4f}; held-out cell accuracy {acc:.4f} (majority {prior:.4f})")
    return EXIT_OK


def cmd_eval_detector(args, cfg):
    ds = _require_dataset(_dataset_dir(args, cfg))
    if args.split == "all":
        frames = ds
    else:
        train, test = split(ds, cfg.dataset.train_fraction, cfg.seed)
        frames = test if args.split == "test" else train
    detector = _make_detector(cfg, args.params)
    rows = det.pr_curve(frames, detector, scene_config=cfg.scene)
    out = _mkdir(os.path.join(cfg.output_dir(), "detector_eval"))
    det.write_pr_csv(rows, os.path.join(out, "pr.csv"))
    plotting.pr_svg(rows, os.path.join(out, "pr.svg"))
    op = det.lookup(rows, 0.5, 0.6)
    _write_json(os.path.join(out, "summary.json"), {"detector": cfg.detector.kind, "frames": len(frames), "precision@0.6,0.5": op.precision, "recall@0.6,0.5": op.recall})
    _save_config(cfg, out)
    print(f"{cfg.detector.kind} detector on {len(frames)} frames: precision {op.precision:.3f}, recall {op.recall:.3f} at conf 0.6 / IOU 0.5")
    return EXIT_OK


def _truncate_log(path, start):
    """Drop log lines at or past ``start`` so a resumed run continues without gaps or repeats."""
    if not os.path.exists(path):
        return
    with open(path, encoding="utf-8") as fh:
        keep = [line for line in fh if line.strip() and json.loads(line)["episode"] < start]
    with open(path, "w", encoding="utf-8") as fh:
        fh.writelines(keep)


def cmd_train(args, cfg):
    if args.episodes is not None:
        cfg.train.episodes = args.episodes
    if args.mode:
        cfg.train.mode = args.mode
    cfg.validate()
    out = _mkdir(os.path.join(cfg.output_dir(), "train"))
    ckpt_dir = _mkdir(os.path.join(out, "checkpoints"))
    env = _make_env(cfg, args.params)
    agent = Agent(env.obs_spec, cfg.agent, a_max=env.a_max)
    start = 0
    log_path = os.path.join(out, "train_log.jsonl")
    if args.resume:
        latest = os.path.join(ckpt_dir, "latest.vpoc")
        if not os.path.exists(latest):
            raise MissingArtifactError(f"--resume given but {latest} does not exist")
        try:
            meta = agent.load(latest)
        except (FormatError, ShapeError) as exc:
            raise CheckpointMismatch(str(exc)) from exc
        start = int(meta.get("episode", 0))
        _truncate_log(log_path, start)
        for name in ("timing.jsonl",):
            _truncate_log(os.path.join(out, name), start)
    remaining = max(cfg.train.episodes - start, 0)
    _save_config(cfg, out)
    result = run_training(
        env, agent, remaining, mode=cfg.train.mode, seed_base=cfg.train.seed_base, start_episode=start,
        log_path=log_path, timing_path=os.path.join(out, "timing.jsonl"), checkpoint_dir=ckpt_dir,
        checkpoint_every=cfg.train.checkpoint_every, duration=cfg.train.duration or None,
    )
    returns = [r["discounted_return"] for r in result.records]
    summary = {
        "episodes_run": result.episodes,
        "first_episode": start,
        "env_steps": result.env_steps,
        "updates": agent.updates,
        "stored_transitions": result.stored,
        "mean_return_last_50": float(np.mean(returns[-50:])) if returns else None,
        "mode": cfg.train.mode,
    }
    _write_json(os.path.join(out, "summary.json"), summary)
    print(f"trained episodes {start}..{start + result.episodes - 1} ({result.env_steps} steps, {agent.updates} updates); checkpoints in {ckpt_dir}")
    return EXIT_OK


def _policies_from_args(args):
    names = []
    for item in args.policy or ["random"]:
        names += list(POLICY_NAMES) if item == "all" else [item]
    return names


def cmd_eval(args, cfg):
    if args.episodes is not None:
        cfg.eval.episodes = args.episodes
    cfg.validate()
    names = _policies_from_args(args)
    env = _make_env(cfg, args.params)
    actor = None
    if any(n in ("ddpg", "hybrid") for n in names):
        actor = _load_actor_for(env, args.checkpoint)
    out = _mkdir(os.path.join(cfg.output_dir(), "eval"))
    summaries, fixations = [], {}
    for name in names:
        policy = make_policy(name, cfg.policies, actor)
        records, summary = evaluate(env, policy, cfg.eval.episodes, cfg.eval.seed_base, cfg.seed, name)
        write_records_jsonl(records, os.path.join(out, f"records_{name}.jsonl"))
        plotting.trajectories_svg(records[: min(5, len(records))], os.path.join(out, f"trajectories_{name}.svg"), env.workspace)
        for rec in records[: min(3, len(records))]:
            scene = generate_plant(rec.plant_seed, cfg.scene)
            plotting.plot_trajectory(rec, scene, os.path.join(out, f"trajectory_{name}_{rec.plant_seed}.svg"), env.workspace, cfg.scene.plant_radius, cfg.env.radius)
        fixations[name] = fixation_counts(records, cfg.eval.fixation)
        summaries.append(summary)
        first = "n/a" if summary.mean_first_reward is None else f"{summary.mean_first_reward:.1f}"
        print(f"{name:>12}: mean return {summary.mean_return:8.3f} (std {summary.std_return:.3f}), first reward {first}, invalid {summary.invalid_count}")
    write_summary_csv(summaries, os.path.join(out, "summary.csv"))
    _write_json(os.path.join(out, "fixation.json"), fixations)
    plotting.summary_bars_svg(summaries, os.path.join(out, "mean_return.svg"), "mean_return", "mean discounted return")
    plotting.summary_bars_svg(summaries, os.path.join(out, "first_reward.svg"), "mean_first_reward", "mean steps to first reward")
    _save_config(cfg, out)
    return EXIT_OK


def cmd_plot(args, cfg):
    src = args.input or os.path.join(cfg.output_dir(), "eval")
    made = []
    summary = os.path.join(src, "summary.csv")
    if os.path.exists(summary):
        rows = read_summary_csv(summary)
        made.append(os.path.join(src, "mean_return.svg"))
        plotting.summary_bars_svg(rows, made[-1], "mean_return", "mean discounted return")
        made.append(os.path.join(src, "first_reward.svg"))
        plotting.summary_bars_svg(rows, made[-1], "mean_first_reward", "mean steps to first reward")
    pr = os.path.join(src, "pr.csv")
    if os.path.exists(pr):
        import csv

        with open(pr, newline="", encoding="utf-8") as fh:
            rows = [det.PRPoint(float(r["iou_thresh"]), float(r["conf_thresh"]), float(r["precision"]), float(r["recall"])) for r in csv.DictReader(fh)]
        made.append(os.path.join(src, "pr.svg"))
        plotting.pr_svg(rows, made[-1])
    if not made:
        raise MissingArtifactError(f"nothing to plot in {src} (expected summary.csv or pr.csv)")
    for m in made:
        print(f"wrote {m}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing


def build_parser():
    p = argparse.ArgumentParser(prog="vpoc", description="Viewpoint optimization for simulated strawberry harvesting.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML run configuration")
    common.add_argument("--out", help="output root (default: $VPOC_OUT or ./vpoc_runs)")
    common.add_argument("--seed", type=int, help="global seed")
    common.add_argument("--workers", type=int, help="threads for collection")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override any config key, e.g. env.horizon=50")
    common.add_argument("--detector", choices=[k.value for k in det.DetectorKind], help="detector kind")
    common.add_argument("--observation", choices=["features", "pixels"], help="observation mode")
    common.add_argument("--params", help="grid detector parameter file")
    common.add_argument("--dataset", help="dataset directory (default <out>/dataset)")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("collect", parents=[common], help="render and annotate a detector dataset")
    c.add_argument("--num-plants", type=int)
    c.add_argument("--num-views", type=int)
    c.set_defaults(func=cmd_collect)

    c = sub.add_parser("train-detector", parents=[common], help="fit the grid detector on the train split")
    c.set_defaults(func=cmd_train_detector)

    c = sub.add_parser("eval-detector", parents=[common], help="precision-recall table over IOU and confidence thresholds")
    c.add_argument("--split", choices=["test", "train", "all"], default="test")
    c.set_defaults(func=cmd_eval_detector)

    c = sub.add_parser("train", parents=[common], help="train the DDPG agent")
    c.add_argument("--episodes", type=int)
    c.add_argument("--mode", choices=["sequential", "parallel"])
    c.add_argument("--resume", action="store_true", help="continue from checkpoints/latest.vpoc")
    c.set_defaults(func=cmd_train)

    c = sub.add_parser("eval", parents=[common], help="evaluate policies on held-out plants")
    c.add_argument("--policy", action="append", choices=list(POLICY_NAMES) + ["all"], help="repeatable; 'all' runs every policy")
    c.add_argument("--checkpoint", help="training checkpoint for ddpg/hybrid")
    c.add_argument("--episodes", type=int)
    c.set_defaults(func=cmd_eval)

    c = sub.add_parser("plot", parents=[common], help="redraw SVG figures from CSV outputs")
    c.add_argument("--input", help="directory holding summary.csv or pr.csv")
    c.set_defaults(func=cmd_plot)
    return p


def resolve_config(args):
    cfg = config_mod.load(args.config) if args.config else config_mod.RunConfig()
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        config_mod.apply_override(cfg, key.strip(), value.strip())
    if args.out:
        cfg.out_dir = args.out
    if args.seed is not None:
        cfg.seed = args.seed
    if args.workers is not None:
        cfg.workers = args.workers
    if args.detector:
        cfg.detector.kind = args.detector
    if args.observation:
        cfg.env.observation = args.observation
    return cfg.validate()


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args)
        if args.command == "eval":
            if any(n in ("ddpg", "hybrid") for n in _policies_from_args(args)) and not args.checkpoint:
                parser.error("--policy ddpg/hybrid requires --checkpoint")
        return args.func(args, cfg)
    except ConfigError as exc:
        print(f"vpoc: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CheckpointMismatch as exc:
        print(f"vpoc: incompatible checkpoint: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except MissingArtifactError as exc:
        print(f"vpoc: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except (StorageError, OSError) as exc:
        print(f"vpoc: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
