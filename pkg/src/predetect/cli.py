"""Command line interface.

Subcommands: generate (episodes to disk), train, eval, ablate, visualize,
plot.  Every command takes an optional JSON config file plus dotted
key=value overrides; exit code 0 on success, nonzero with a diagnostic on
any error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .ablation import eval_dataset, run_ablation_suite, train_dataset
from .config import ExperimentConfig, apply_overrides, load_config, save_config
from .evaluation import run_evaluation
from .scenes import load_dataset, save_dataset
from .training import load_checkpoint, save_checkpoint, train
from .validation import ConfigurationError


def _load(args) -> ExperimentConfig:
    config = load_config(args.config) if args.config else ExperimentConfig()
    config = apply_overrides(config, args.override or [])
    config.validate()
    return config


def _add_common(parser):
    parser.add_argument("--config", type=Path, default=None, help="JSON experiment config")
    parser.add_argument(
        "--override",
        "-o",
        action="append",
        metavar="KEY=VALUE",
        help="override a config key, e.g. -o training.epochs=10 -o mode=p2d",
    )


def cmd_generate(args) -> int:
    config = _load(args)
    episodes = train_dataset(config.scene, args.episodes, args.seed)
    save_dataset(episodes, args.out, config.scene)
    print(f"wrote {len(episodes)} episodes to {args.out}")
    return 0


def cmd_train(args) -> int:
    config = _load(args)
    if args.data:
        episodes = load_dataset(args.data)
    else:
        episodes = train_dataset(config.scene, config.training.n_train_episodes,
                                 config.training.seed)
    model, log = train(config, episodes, progress=not args.quiet)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out, model, config)
    log_path = out.with_suffix(".log.jsonl")
    with open(log_path, "w") as fh:
        for row in log:
            fh.write(json.dumps(row) + "\n")
    save_config(config, out.with_suffix(".config.json"))
    print(f"checkpoint: {out}\ntraining log: {log_path}")
    return 0


def cmd_eval(args) -> int:
    model, config = load_checkpoint(args.checkpoint)
    if args.override:
        config = apply_overrides(config, args.override)
        config.validate()
    if args.data:
        episodes = load_dataset(args.data)
    else:
        episodes = eval_dataset(config.scene, config.eval.n_eval_episodes)
    reports = run_evaluation(model, episodes, config)
    payload = {name: report.to_dict() for name, report in reports.items()}
    if args.out:
        Path(args.out).write_text(json.dumps(payload, indent=2))
        print(f"wrote {args.out}")
    for name, report in reports.items():
        print(
            f"{name:20s} mAP {report.map:.4f}  mATE {report.mate:.4f}  "
            f"mAVE {report.mave:.4f}  mAOE {report.maoe:.4f}"
        )
    return 0


def cmd_ablate(args) -> int:
    config = _load(args)
    seeds = tuple(args.seeds)
    results = run_ablation_suite(
        config, tables=tuple(args.tables), seeds=seeds, out_dir=args.out,
        progress=not args.quiet,
    )
    for name, res in results.items():
        print(f"== {name} ==")
        for row in res["summary"]:
            desc = ", ".join(f"{k}={row[k]}" for k in row if "." not in k)
            mean = row.get("detection.mAP.mean")
            std = row.get("detection.mAP.std", 0.0)
            print(f"  {desc}: mAP {mean:.4f} +/- {std:.4f}")
    print(f"rows + summary in {args.out}")
    return 0


def cmd_visualize(args) -> int:
    from .viz import render_episode_panels

    model, config = load_checkpoint(args.checkpoint)
    if args.data:
        episodes = load_dataset(args.data)
    else:
        episodes = eval_dataset(config.scene, max(args.episodes))
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for idx in args.episodes:
        if idx >= len(episodes):
            raise IndexError(f"episode index {idx} out of range ({len(episodes)} available)")
        path = out_dir / f"episode_{idx:04d}.png"
        render_episode_panels(model, episodes[idx], config, path)
        print(f"wrote {path}")
    return 0


def cmd_plot(args) -> int:
    from .viz import plot_metric_table, plot_training_curves

    if args.summary:
        plot_metric_table(args.summary, args.out, metric=args.metric)
    elif args.log:
        log = [json.loads(line) for line in Path(args.log).read_text().splitlines() if line]
        plot_training_curves(log, args.out)
    else:
        raise ConfigurationError("plot needs --summary or --log")
    print(f"wrote {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="predetect",
        description="Prediction-guided temporal BEV detection on synthetic scenes",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="generate episodes to disk")
    _add_common(p)
    p.add_argument("--episodes", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train a detector")
    _add_common(p)
    p.add_argument("--data", type=Path, default=None, help="episode directory (default: generate)")
    p.add_argument("--out", type=Path, required=True, help="checkpoint path")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--data", type=Path, default=None)
    p.add_argument("--out", type=Path, default=None, help="metrics JSON output")
    p.add_argument("--override", "-o", action="append", metavar="KEY=VALUE")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="run ablation sweeps")
    _add_common(p)
    p.add_argument(
        "--tables", nargs="+", default=["modules"],
        choices=["modules", "frames", "supervision", "loss_weight"],
    )
    p.add_argument("--seeds", nargs="+", type=int, default=[0, 1, 2])
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("visualize", help="render heatmap/query/detection panels")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--data", type=Path, default=None)
    p.add_argument("--episodes", nargs="+", type=int, default=[0])
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.set_defaults(func=cmd_visualize)

    p = sub.add_parser("plot", help="plot metric tables or training curves")
    p.add_argument("--summary", type=Path, default=None, help="ablation_summary.json")
    p.add_argument("--log", type=Path, default=None, help="training log JSONL")
    p.add_argument("--metric", default="detection.mAP")
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigurationError, FileNotFoundError, ValueError, IndexError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
