"""On-disk feature stores: the "CAPF" v1 binary format plus a synthetic
generator for desk-scale experiments.

Layout (all integers little-endian uint32, all floats little-endian
float32):

    header:  magic "CAPF" | version | T | S | C | record_count
             | class_count | flags (bit 0 = synthetic)
    record:  id_len | id utf-8 | class_id
             | T x (caption_len | caption utf-8)
             | T*S*C visual floats | T*C text floats

Values are stored at float32 precision and promoted to float64 on read.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import rng
from .errors import ConfigError, CorruptionError, FormatError

MAGIC = b"CAPF"
FORMAT_VERSION = 1
FLAG_SYNTHETIC = 1

_DRIFT_SCALE = 0.3  # per-video temporal drift, scaled by 1/snr like the noise


@dataclass
class FeatureRecord:
    """One video: per-frame visual token maps, caption embeddings, captions."""

    video_id: str
    class_id: int
    visual: np.ndarray  # T x S x C
    text: np.ndarray  # T x C
    captions: list[str]

    def validate(self) -> None:
        if self.visual.ndim != 3 or self.text.ndim != 2:
            raise FormatError(
                f"record '{self.video_id}': visual must be TxSxC and text TxC, "
                f"got {self.visual.shape} and {self.text.shape}"
            )
        if self.visual.shape[0] != self.text.shape[0]:
            raise FormatError(
                f"record '{self.video_id}': visual and text disagree on T "
                f"({self.visual.shape[0]} vs {self.text.shape[0]})"
            )
        if self.visual.shape[2] != self.text.shape[1]:
            raise FormatError(
                f"record '{self.video_id}': visual and text disagree on C "
                f"({self.visual.shape[2]} vs {self.text.shape[1]})"
            )
        if len(self.captions) != self.visual.shape[0]:
            raise FormatError(
                f"record '{self.video_id}': {len(self.captions)} captions for "
                f"{self.visual.shape[0]} frames"
            )
        if self.class_id < 0:
            raise FormatError(f"record '{self.video_id}': negative class_id")

    @property
    def shape(self) -> tuple[int, int, int]:
        t, s, c = self.visual.shape
        return t, s, c


@dataclass
class StoreHeader:
    T: int
    S: int
    C: int
    record_count: int
    class_count: int
    synthetic: bool
    format_version: int = FORMAT_VERSION


@dataclass
class SyntheticSpec:
    """Recipe for a labeled synthetic store.

    Each class owns a visual prototype table (SxC) and a text prototype
    (C); frame t of a video is prototype + drift*t + noise/snr. snr=0
    means the modality is pure noise and carries no class signal.
    """

    num_classes: int
    videos_per_class: int
    T: int = 8
    S: int = 4
    C: int = 64
    visual_snr: float = 1.0
    text_snr: float = 1.0
    seed: int = 0

    def validate(self) -> None:
        if self.num_classes < 2:
            raise ConfigError(f"need at least 2 classes, got {self.num_classes}")
        if self.videos_per_class < 2:
            raise ConfigError(
                f"need at least 2 videos per class (one support + one query), "
                f"got {self.videos_per_class}"
            )
        if min(self.T, self.S) < 1 or self.C < 1:
            raise ConfigError(f"invalid dimensions T={self.T} S={self.S} C={self.C}")
        if self.visual_snr < 0 or self.text_snr < 0:
            raise ConfigError("snr values must be >= 0")


def write_store(records: list[FeatureRecord], path, synthetic: bool = False) -> int:
    """Serialize records to `path`; returns the byte count written."""
    if not records:
        raise FormatError("cannot write an empty store")
    shape = records[0].shape
    for r in records:
        r.validate()
        if r.shape != shape:
            raise FormatError(
                f"heterogeneous shapes: record '{r.video_id}' has {r.shape}, "
                f"expected {shape}"
            )
    t, s, c = shape
    classes = sorted({r.class_id for r in records})
    flags = FLAG_SYNTHETIC if synthetic else 0

    out = bytearray()
    out += MAGIC
    out += struct.pack("<7I", FORMAT_VERSION, t, s, c, len(records), len(classes), flags)
    for r in records:
        vid = r.video_id.encode("utf-8")
        out += struct.pack("<I", len(vid)) + vid
        out += struct.pack("<I", r.class_id)
        for cap in r.captions:
            raw = cap.encode("utf-8")
            out += struct.pack("<I", len(raw)) + raw
        out += np.ascontiguousarray(r.visual, dtype="<f4").tobytes()
        out += np.ascontiguousarray(r.text, dtype="<f4").tobytes()

    Path(path).write_bytes(out)
    return len(out)


class _Reader:
    """Offset-tracking parser; never trusts embedded lengths past EOF."""

    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if n < 0 or self.pos + n > len(self.buf):
            raise CorruptionError(f"file truncated while reading {what}", self.pos)
        chunk = self.buf[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]

    def string(self, what: str) -> str:
        n = self.u32(f"{what} length")
        return self.take(n, what).decode("utf-8")

    def floats(self, n: int, what: str) -> np.ndarray:
        raw = self.take(4 * n, what)
        return np.frombuffer(raw, dtype="<f4").astype(np.float64)


def read_store(path) -> tuple[list[FeatureRecord], StoreHeader]:
    """Parse and fully validate a store; all-or-nothing."""
    rd = _Reader(Path(path).read_bytes())
    magic = rd.take(4, "magic")
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    version, t, s, c, n_records, n_classes, flags = struct.unpack(
        "<7I", rd.take(28, "header")
    )
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported format version {version}")
    if min(t, s, c) < 1:
        raise FormatError(f"non-positive dimensions in header: T={t} S={s} C={c}")
    header = StoreHeader(
        T=t, S=s, C=c, record_count=n_records, class_count=n_classes,
        synthetic=bool(flags & FLAG_SYNTHETIC),
    )

    records = []
    for _ in range(n_records):
        video_id = rd.string("video id")
        class_id = rd.u32("class id")
        captions = [rd.string("caption") for _ in range(t)]
        visual = rd.floats(t * s * c, "visual features").reshape(t, s, c)
        text = rd.floats(t * c, "text features").reshape(t, c)
        records.append(FeatureRecord(video_id, class_id, visual, text, captions))
    if rd.pos != len(rd.buf):
        raise CorruptionError("trailing bytes after final record", rd.pos)

    seen_classes = {r.class_id for r in records}
    if len(seen_classes) != n_classes:
        raise FormatError(
            f"header declares {n_classes} classes but records carry {len(seen_classes)}"
        )
    return records, header


def gen_synthetic(spec: SyntheticSpec) -> list[FeatureRecord]:
    """Deterministic labeled records; every draw is keyed by (seed, class,
    video) so growing videos_per_class appends without disturbing
    existing records."""
    spec.validate()

    protos = {}
    for c in range(spec.num_classes):
        g = rng.stream(spec.seed, rng.CLASS_PROTO, c)
        protos[c] = (
            g.standard_normal((spec.S, spec.C)),
            g.standard_normal(spec.C),
        )

    records = []
    for v in range(spec.videos_per_class):
        for c in range(spec.num_classes):
            g = rng.stream(spec.seed, rng.VIDEO, c, v)
            vis_proto, txt_proto = protos[c]
            # drift is a nuisance term like the noise, so it shares the
            # 1/snr scaling: snr is the single fidelity knob per modality
            vis_drift = g.standard_normal(spec.C) * _DRIFT_SCALE
            txt_drift = g.standard_normal(spec.C) * _DRIFT_SCALE
            visual = np.empty((spec.T, spec.S, spec.C))
            text = np.empty((spec.T, spec.C))
            for t in range(spec.T):
                vis_noise = g.standard_normal((spec.S, spec.C))
                txt_noise = g.standard_normal(spec.C)
                if spec.visual_snr == 0:
                    visual[t] = vis_noise
                else:
                    visual[t] = (
                        vis_proto + (vis_drift * t + vis_noise) / spec.visual_snr
                    )
                if spec.text_snr == 0:
                    text[t] = txt_noise
                else:
                    text[t] = txt_proto + (txt_drift * t + txt_noise) / spec.text_snr
            captions = [f"synthetic class {c} frame {t}" for t in range(spec.T)]
            records.append(
                FeatureRecord(f"synthetic-c{c}-v{v}", c, visual, text, captions)
            )
    return records
