"""Command-line interface.

Subcommands: gen-synthetic, train, eval, sweep, inspect-store, gradcheck.
Run options come from defaults, then an optional JSON config file, then
flags (highest precedence). CAPFEW_LOG controls verbosity.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict

from .errors import CapfewError, ConfigError
from .harness import (
    SWEEP_AXES,
    RunConfig,
    evaluate,
    gradient_suite,
    sweep,
    train,
)
from .metrics import METRIC_KINDS
from .model import FUSION_MODES, ModelConfig
from .episodes import save_split
from .store import SyntheticSpec, gen_synthetic, read_store, write_store

log = logging.getLogger("capfew")

_RUN_FIELDS = (
    "store", "train_split", "test_split", "metric", "way", "shot",
    "queries_per_class", "train_episodes", "eval_episodes", "fixed_episodes",
    "lr", "beta1", "beta2", "adam_eps", "seed", "checkpoint",
    "otam_lambda", "eval_otam_lambda", "bimhm_lambda", "out_dir",
)
_MODEL_FIELDS = ("T", "S", "C", "L", "heads", "ffn_mult", "fusion_mode", "seed")


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file; flags override its values")
    p.add_argument("--store", help="feature store path")
    p.add_argument("--train-split", help="train class id file")
    p.add_argument("--test-split", help="test class id file")
    p.add_argument("--metric", choices=METRIC_KINDS)
    p.add_argument("--way", type=int, help="classes per episode (N)")
    p.add_argument("--shot", type=int, help="support videos per class (K)")
    p.add_argument("--queries-per-class", type=int)
    p.add_argument("--train-episodes", type=int)
    p.add_argument("--eval-episodes", type=int)
    p.add_argument("--fixed-episodes", type=int,
                   help="train by cycling over this many frozen episodes")
    p.add_argument("--lr", type=float)
    p.add_argument("--beta1", type=float)
    p.add_argument("--beta2", type=float)
    p.add_argument("--adam-eps", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--checkpoint")
    p.add_argument("--otam-lambda", type=float)
    p.add_argument("--eval-otam-lambda", type=float)
    p.add_argument("--bimhm-lambda", type=float)
    p.add_argument("--trx-omegas", help="comma-separated tuple sizes, e.g. 2,3")
    p.add_argument("--out-dir", help="where reports, tables and figures go")
    # model architecture
    p.add_argument("--frames", type=int, dest="T", help="frames per video (T)")
    p.add_argument("--spatial", type=int, dest="S", help="spatial tokens (S)")
    p.add_argument("--channels", type=int, dest="C", help="channel width (C)")
    p.add_argument("--layers", type=int, dest="L", help="blocks per stage (L)")
    p.add_argument("--heads", type=int)
    p.add_argument("--ffn-mult", type=int)
    p.add_argument("--fusion-mode", choices=FUSION_MODES)
    p.add_argument("--text-temporal", choices=("on", "off"),
                   help="toggle the caption-sequence encoder stage")
    p.add_argument("--model-seed", type=int, dest="model_seed")


def build_run_config(args: argparse.Namespace) -> RunConfig:
    file_cfg: dict = {}
    if args.config:
        try:
            file_cfg = json.loads(open(args.config).read())
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot load config file '{args.config}': {e}") from e

    model_cfg = dict(file_cfg.pop("model", {}))
    for field in _MODEL_FIELDS:
        flag = getattr(args, "model_seed" if field == "seed" else field, None)
        if flag is not None:
            model_cfg[field] = flag
    if args.text_temporal is not None:
        model_cfg["text_temporal"] = args.text_temporal == "on"

    run_cfg = dict(file_cfg)
    for field in _RUN_FIELDS:
        flag = getattr(args, field, None)
        if flag is not None:
            run_cfg[field] = flag
    if args.trx_omegas is not None:
        run_cfg["trx_omegas"] = tuple(int(x) for x in args.trx_omegas.split(","))
    elif "trx_omegas" in run_cfg:
        run_cfg["trx_omegas"] = tuple(run_cfg["trx_omegas"])
    if "store" not in run_cfg:
        raise ConfigError("a feature store is required (--store or config file)")
    try:
        return RunConfig(model=ModelConfig(**model_cfg), **run_cfg)
    except TypeError as e:
        raise ConfigError(f"bad config field: {e}") from e


def cmd_gen_synthetic(args) -> int:
    spec = SyntheticSpec(
        num_classes=args.classes,
        videos_per_class=args.videos_per_class,
        T=args.frames, S=args.spatial, C=args.channels,
        visual_snr=args.visual_snr, text_snr=args.text_snr, seed=args.seed,
    )
    records = gen_synthetic(spec)
    n = write_store(records, args.out, synthetic=True)
    print(f"wrote {len(records)} records ({n} bytes) to {args.out}")
    if args.train_split or args.test_split:
        cut = max(1, int(args.classes * args.train_fraction))
        if args.train_split:
            save_split(range(cut), args.train_split)
            print(f"train split: classes 0..{cut - 1} -> {args.train_split}")
        if args.test_split:
            save_split(range(cut, args.classes), args.test_split)
            print(f"test split: classes {cut}..{args.classes - 1} -> {args.test_split}")
    return 0


def cmd_inspect_store(args) -> int:
    records, header = read_store(args.store)
    print(f"store:     {args.store}")
    print(f"format:    CAPF v{header.format_version}"
          f"{' (synthetic)' if header.synthetic else ''}")
    print(f"shape:     T={header.T} S={header.S} C={header.C}")
    print(f"records:   {header.record_count}")
    print(f"classes:   {header.class_count}")
    hist: dict[int, int] = {}
    for r in records:
        hist[r.class_id] = hist.get(r.class_id, 0) + 1
    for cls in sorted(hist):
        print(f"  class {cls}: {hist[cls]} videos")
    empty = sum(1 for r in records for cap in r.captions if not cap)
    total = header.record_count * header.T
    print(f"captions:  {total - empty}/{total} non-empty")
    if records and records[0].captions:
        print(f"sample:    {records[0].captions[0]!r}")
    return 0


def cmd_train(args) -> int:
    config = build_run_config(args)
    result = train(config)
    final = result.history[-1] if result.history else {}
    print(f"trained {config.train_episodes} episodes; "
          f"final loss {final.get('loss', float('nan')):.4f}, "
          f"running accuracy {final.get('running_acc', float('nan')):.3f}")
    print(f"checkpoint: {result.checkpoint}")
    return 0


def cmd_eval(args) -> int:
    config = build_run_config(args)
    report = evaluate(config, args.eval_checkpoint)
    print(f"{report.way}-way {report.shot}-shot over {report.episodes} episodes "
          f"({report.metric}, {report.fusion_mode})")
    print(f"accuracy: {report.mean_accuracy:.4f} +- {report.ci95:.4f} (95% ci)")
    print(f"wall time: {report.wall_time:.2f}s")
    if config.out_dir:
        print(f"report written to {config.out_dir}")
    return 0


def _parse_axis_values(axis: str, raw: str) -> list:
    values = [v.strip() for v in raw.split(",") if v.strip()]
    if axis in ("L", "T", "N"):
        return [int(v) for v in values]
    if axis == "text_temporal":
        return [v in ("1", "true", "on", "yes") for v in values]
    return values


def cmd_sweep(args) -> int:
    config = build_run_config(args)
    values = _parse_axis_values(args.axis, args.values)
    result = sweep(config, args.axis, values)
    width = max(len(str(r["value"])) for r in result.rows)
    print(f"{args.axis:<{width}}  accuracy  ci95")
    for r in result.rows:
        print(f"{str(r['value']):<{width}}  {r['mean_accuracy']:.4f}    {r['ci95']:.4f}")
    if config.out_dir:
        print(f"sweep table and figure written to {config.out_dir}")
    return 0


def cmd_gradcheck(args) -> int:
    results = gradient_suite(
        draws=args.draws, seed=args.seed, coords_per_tensor=args.coords
    )
    worst = 0.0
    for r in results:
        print(f"draw {r['draw']:3d}  {r['fusion_mode']:<16} {r['metric']:<6} "
              f"max_rel_error {r['max_rel_error']:.3e}")
        worst = max(worst, r["max_rel_error"])
    ok = worst <= args.threshold
    print(f"worst: {worst:.3e} ({'pass' if ok else 'FAIL'} at {args.threshold:g})")
    return 0 if ok else 10


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="capfew",
        description="few-shot video action classification over caption-augmented features",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synthetic", help="write a labeled synthetic feature store")
    p.add_argument("--out", required=True)
    p.add_argument("--classes", type=int, default=10)
    p.add_argument("--videos-per-class", type=int, default=12)
    p.add_argument("--frames", type=int, default=8)
    p.add_argument("--spatial", type=int, default=4)
    p.add_argument("--channels", type=int, default=64)
    p.add_argument("--visual-snr", type=float, default=1.0)
    p.add_argument("--text-snr", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--train-split")
    p.add_argument("--test-split")
    p.add_argument("--train-fraction", type=float, default=0.5)
    p.set_defaults(func=cmd_gen_synthetic)

    p = sub.add_parser("inspect-store", help="print a store's header and class histogram")
    p.add_argument("store")
    p.set_defaults(func=cmd_inspect_store)

    p = sub.add_parser("train", help="train the aggregation model episodically")
    _add_run_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint over the episodic protocol")
    _add_run_flags(p)
    p.add_argument("--eval-checkpoint", help="checkpoint to load (defaults to --checkpoint)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="train/evaluate along one axis and tabulate")
    _add_run_flags(p)
    p.add_argument("--axis", required=True, choices=SWEEP_AXES)
    p.add_argument("--values", required=True, help="comma-separated axis values")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("gradcheck", help="finite-difference check of the trainable pipeline")
    p.add_argument("--draws", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--coords", type=int, default=4)
    p.add_argument("--threshold", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv: list[str] | None = None) -> int:
    level = os.environ.get("CAPFEW_LOG", "warning").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    parser = make_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CapfewError as e:
        print(f"error ({type(e).__name__}): {e}", file=sys.stderr)
        return e.exit_code
    except OSError as e:
        print(f"error (io): {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
