"""Self-contained CAPF v1 writer and validator.

Deliberately independent of the engine package: this module re-states
the byte contract so the two sides check each other.

    header:  "CAPF" | version=1 | T | S | C | record_count
             | class_count | flags (bit 0 = synthetic)
    record:  id_len | id utf-8 | class_id
             | T x (caption_len | caption utf-8)
             | T*S*C visual float32 | T*C text float32

All integers little-endian uint32, floats little-endian float32.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"CAPF"
VERSION = 1


class StoreFormatError(Exception):
    pass


@dataclass
class ExtractedRecord:
    video_id: str
    class_id: int
    visual: np.ndarray  # T x S x C
    text: np.ndarray  # T x C
    captions: list[str]


def write_capf(records: list[ExtractedRecord], path) -> int:
    if not records:
        raise StoreFormatError("no records to write")
    t, s, c = records[0].visual.shape
    for r in records:
        if r.visual.shape != (t, s, c) or r.text.shape != (t, c):
            raise StoreFormatError(
                f"record '{r.video_id}' shape {r.visual.shape}/{r.text.shape} "
                f"does not match ({t},{s},{c})"
            )
        if len(r.captions) != t:
            raise StoreFormatError(
                f"record '{r.video_id}' has {len(r.captions)} captions for {t} frames"
            )
    classes = {r.class_id for r in records}
    out = bytearray()
    out += MAGIC
    out += struct.pack("<7I", VERSION, t, s, c, len(records), len(classes), 0)
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


@dataclass
class ValidationReport:
    path: str
    ok: bool
    violations: list[str] = field(default_factory=list)
    T: int = 0
    S: int = 0
    C: int = 0
    record_count: int = 0
    synthetic: bool = False
    class_histogram: dict = field(default_factory=dict)
    empty_caption_rate: float = 0.0

    def lines(self) -> list[str]:
        out = [
            f"store:   {self.path}",
            f"status:  {'valid' if self.ok else 'INVALID'}",
        ]
        if self.T:
            out.append(
                f"shape:   T={self.T} S={self.S} C={self.C}"
                f"{' (synthetic)' if self.synthetic else ''}"
            )
            out.append(f"records: {self.record_count}")
            for cls in sorted(self.class_histogram):
                out.append(f"  class {cls}: {self.class_histogram[cls]} videos")
            out.append(f"empty captions: {self.empty_caption_rate:.1%}")
        out.extend(f"violation: {v}" for v in self.violations)
        return out


def validate_capf(path) -> ValidationReport:
    """Re-implemented header and shape checks; collects every violation
    it can identify instead of stopping at the first."""
    report = ValidationReport(path=str(path), ok=False)
    try:
        buf = Path(path).read_bytes()
    except OSError as e:
        report.violations.append(f"unreadable file: {e}")
        return report

    pos = 0

    def take(n, what):
        nonlocal pos
        if pos + n > len(buf):
            raise StoreFormatError(f"truncated while reading {what} at offset {pos}")
        chunk = buf[pos : pos + n]
        pos += n
        return chunk

    try:
        if take(4, "magic") != MAGIC:
            report.violations.append("bad magic bytes")
            return report
        version, t, s, c, n_records, n_classes, flags = struct.unpack(
            "<7I", take(28, "header")
        )
        if version != VERSION:
            report.violations.append(f"unsupported version {version}")
            return report
        if min(t, s, c) < 1:
            report.violations.append(f"non-positive dimensions T={t} S={s} C={c}")
            return report
        report.T, report.S, report.C = t, s, c
        report.record_count = n_records
        report.synthetic = bool(flags & 1)

        empty = 0
        for i in range(n_records):
            (id_len,) = struct.unpack("<I", take(4, f"record {i} id length"))
            video_id = take(id_len, f"record {i} id").decode("utf-8")
            (class_id,) = struct.unpack("<I", take(4, f"record {i} class"))
            for f_idx in range(t):
                (cap_len,) = struct.unpack(
                    "<I", take(4, f"'{video_id}' caption {f_idx} length")
                )
                cap = take(cap_len, f"'{video_id}' caption {f_idx}")
                if not cap:
                    empty += 1
            floats = np.frombuffer(
                take(4 * (t * s * c + t * c), f"'{video_id}' features"), dtype="<f4"
            )
            if not np.all(np.isfinite(floats)):
                report.violations.append(f"record '{video_id}' has non-finite features")
            report.class_histogram[class_id] = report.class_histogram.get(class_id, 0) + 1
        if pos != len(buf):
            report.violations.append(f"{len(buf) - pos} trailing bytes after records")
        if len(report.class_histogram) != n_classes:
            report.violations.append(
                f"header claims {n_classes} classes, records carry "
                f"{len(report.class_histogram)}"
            )
        report.empty_caption_rate = empty / max(n_records * t, 1)
    except StoreFormatError as e:
        report.violations.append(str(e))
        return report

    report.ok = not report.violations
    return report
