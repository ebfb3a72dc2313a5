"""The extraction pipeline: videos -> frozen captioning backend -> CAPF
store plus a line-delimited caption sidecar."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .backends import BackendError, make_backend
from .capf import ExtractedRecord, write_capf
from .frames import UnreadableVideoError, discover_inputs, load_frames

log = logging.getLogger("capfew-extractor")

DECODE_STRATEGIES = ("beam", "nucleus")


class JobError(Exception):
    pass


@dataclass
class ExtractionJob:
    """One extraction run over a directory of videos or frame dirs."""

    input_dir: str
    manifest: str  # JSON file: video_id -> class_id
    out_path: str
    model_id: str = "toy"
    frames: int = 8
    strategy: str = "beam"
    captions_per_frame: int = 1
    spatial_tokens: int = 4
    channels: int = 64
    seed: int = 0
    sidecar: str | None = None  # defaults to out_path + ".captions.jsonl"

    def __post_init__(self):
        if self.frames < 1:
            raise JobError(f"frames must be >= 1, got {self.frames}")
        if self.captions_per_frame < 1:
            raise JobError(
                f"captions_per_frame must be >= 1, got {self.captions_per_frame}"
            )
        if self.strategy not in DECODE_STRATEGIES:
            raise JobError(f"strategy '{self.strategy}' not one of {DECODE_STRATEGIES}")
        if self.captions_per_frame > 1 and self.strategy != "nucleus":
            raise JobError("multiple captions per frame require nucleus sampling")

    @property
    def sidecar_path(self) -> str:
        return self.sidecar or f"{self.out_path}.captions.jsonl"


def load_manifest(path) -> dict[str, int]:
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise JobError(f"cannot load manifest '{path}': {e}") from e
    if not isinstance(raw, dict) or not raw:
        raise JobError("manifest must be a non-empty JSON object of video_id -> class_id")
    return {str(k): int(v) for k, v in raw.items()}


@dataclass
class ExtractionResult:
    store_path: str
    sidecar_path: str
    written: list[str]
    skipped: dict[str, str] = field(default_factory=dict)


def extract(job: ExtractionJob) -> ExtractionResult:
    """Run the frozen backend over every input video and write the store.

    Unreadable videos are skipped with a logged reason; the job fails if
    nothing could be extracted or if the manifest misses any input.
    """
    manifest = load_manifest(job.manifest)
    sources = discover_inputs(Path(job.input_dir))
    if not sources:
        raise JobError(f"no videos or frame directories under {job.input_dir}")
    missing = sorted(set(sources) - set(manifest))
    if missing:
        raise JobError(f"manifest is missing class labels for: {', '.join(missing)}")

    backend = make_backend(job.model_id, job.spatial_tokens, job.channels)
    records, skipped = [], {}
    sidecar_lines = []
    for video_id, source in sources.items():
        try:
            frames = load_frames(source, job.frames)
        except UnreadableVideoError as e:
            log.warning("skipping %s: %s", video_id, e)
            skipped[video_id] = str(e)
            continue
        visual = np.empty((job.frames, backend.S, backend.C))
        text = np.empty((job.frames, backend.C))
        kept_captions = []
        for t, frame in enumerate(frames):
            visual[t] = backend.encode_image(frame)
            caps = backend.caption(
                frame, job.strategy, job.captions_per_frame,
                seed=hash((job.seed, video_id, t)) & 0x7FFFFFFF,
            )
            text[t] = np.mean([backend.embed_text(c) for c in caps], axis=0)
            kept_captions.append(caps[0])
            sidecar_lines.append(
                json.dumps(
                    {
                        "video_id": video_id,
                        "frame": t,
                        "strategy": job.strategy,
                        "captions": caps,
                    },
                    sort_keys=True,
                )
            )
        records.append(
            ExtractedRecord(video_id, manifest[video_id], visual, text, kept_captions)
        )

    if not records:
        raise JobError(
            "every input failed to decode: "
            + "; ".join(f"{k}: {v}" for k, v in skipped.items())
        )
    write_capf(records, job.out_path)
    Path(job.sidecar_path).write_text("\n".join(sidecar_lines) + "\n")
    log.info(
        "wrote %d records to %s (%d skipped)", len(records), job.out_path, len(skipped)
    )
    return ExtractionResult(
        store_path=job.out_path,
        sidecar_path=job.sidecar_path,
        written=[r.video_id for r in records],
        skipped=skipped,
    )
