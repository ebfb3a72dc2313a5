"""Extractor CLI: `extract` runs the pipeline, `validate` audits a store."""
from __future__ import annotations

import argparse
import logging
import os
import sys

from .backends import BackendError
from .capf import validate_capf
from .extract import ExtractionJob, JobError, extract


def cmd_extract(args) -> int:
    job = ExtractionJob(
        input_dir=args.input,
        manifest=args.manifest,
        out_path=args.out,
        model_id=args.model,
        frames=args.frames,
        strategy=args.strategy,
        captions_per_frame=args.captions_per_frame,
        spatial_tokens=args.spatial,
        channels=args.channels,
        seed=args.seed,
        sidecar=args.sidecar,
    )
    result = extract(job)
    print(f"wrote {len(result.written)} records to {result.store_path}")
    print(f"caption sidecar: {result.sidecar_path}")
    for video_id, reason in result.skipped.items():
        print(f"skipped {video_id}: {reason}", file=sys.stderr)
    return 0


def cmd_validate(args) -> int:
    report = validate_capf(args.store)
    for line in report.lines():
        print(line)
    return 0 if report.ok else 3


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="capfew-extract",
        description="caption videos with a frozen model and write CAPF feature stores",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="run the extraction pipeline")
    p.add_argument("--input", required=True,
                   help="directory of video files or per-video frame-image directories")
    p.add_argument("--manifest", required=True, help="JSON video_id -> class_id")
    p.add_argument("--out", required=True, help="output store path")
    p.add_argument("--model", default="toy",
                   help="'toy' or a pretrained captioning model id")
    p.add_argument("--frames", type=int, default=8)
    p.add_argument("--strategy", choices=("beam", "nucleus"), default="beam")
    p.add_argument("--captions-per-frame", type=int, default=1)
    p.add_argument("--spatial", type=int, default=4, help="spatial token bands (S)")
    p.add_argument("--channels", type=int, default=64, help="feature width (C)")
    p.add_argument("--seed", type=int, default=0, help="nucleus sampling seed")
    p.add_argument("--sidecar", help="caption log path (default: <out>.captions.jsonl)")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("validate", help="audit a store against the format contract")
    p.add_argument("store")
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv: list[str] | None = None) -> int:
    level = os.environ.get("CAPFEW_LOG", "warning").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    args = make_parser().parse_args(argv)
    try:
        return args.func(args)
    except (JobError, BackendError) as e:
        print(f"error ({type(e).__name__}): {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"error (io): {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
