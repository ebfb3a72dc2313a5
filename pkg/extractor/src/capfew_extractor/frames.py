"""Frame acquisition: video files or per-video frame-image directories,
uniform temporal sampling, and 224x224 preparation."""
from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

VIDEO_SUFFIXES = {".mp4", ".avi", ".mov", ".mkv", ".webm"}
IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp"}

CROP_SIZE = 224


class UnreadableVideoError(Exception):
    pass


def uniform_indices(available: int, wanted: int) -> np.ndarray:
    """floor(k*(F-1)/(T-1)) for k in 0..T-1; the middle frame for T=1."""
    if available < 1:
        raise UnreadableVideoError("no frames available")
    if wanted == 1:
        return np.array([available // 2])
    k = np.arange(wanted)
    return (k * (available - 1)) // (wanted - 1)


def prepare(image: Image.Image) -> np.ndarray:
    """Resize the short side to 224 and center-crop to 224x224 RGB,
    values in [0, 1]."""
    image = image.convert("RGB")
    w, h = image.size
    scale = CROP_SIZE / min(w, h)
    image = image.resize((max(CROP_SIZE, round(w * scale)), max(CROP_SIZE, round(h * scale))))
    w, h = image.size
    left, top = (w - CROP_SIZE) // 2, (h - CROP_SIZE) // 2
    image = image.crop((left, top, left + CROP_SIZE, top + CROP_SIZE))
    return np.asarray(image, dtype=np.float64) / 255.0


def _frames_from_dir(path: Path, wanted: int) -> list[np.ndarray]:
    files = sorted(p for p in path.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    if not files:
        raise UnreadableVideoError(f"no image frames in {path}")
    picks = uniform_indices(len(files), min(wanted, len(files)))
    try:
        frames = [prepare(Image.open(files[i])) for i in picks]
    except OSError as e:
        raise UnreadableVideoError(f"cannot decode {path}: {e}") from e
    # directories shorter than wanted repeat their last frame
    while len(frames) < wanted:
        frames.append(frames[-1])
    return frames


def _frames_from_video(path: Path, wanted: int) -> list[np.ndarray]:
    try:
        import cv2
    except ImportError as e:
        raise UnreadableVideoError(
            f"cannot decode {path}: video support needs opencv (pip install "
            f"capfew-extractor[video])"
        ) from e
    cap = cv2.VideoCapture(str(path))
    raw = []
    while True:
        ok, frame = cap.read()
        if not ok:
            break
        raw.append(frame)
    cap.release()
    if not raw:
        raise UnreadableVideoError(f"cannot decode {path}: no frames read")
    picks = uniform_indices(len(raw), min(wanted, len(raw)))
    frames = [
        prepare(Image.fromarray(raw[i][:, :, ::-1]))  # BGR -> RGB
        for i in picks
    ]
    while len(frames) < wanted:
        frames.append(frames[-1])
    return frames


def load_frames(source: Path, wanted: int) -> list[np.ndarray]:
    """T prepared frames from a video file or a frame-image directory."""
    if source.is_dir():
        return _frames_from_dir(source, wanted)
    if source.suffix.lower() in VIDEO_SUFFIXES:
        return _frames_from_video(source, wanted)
    raise UnreadableVideoError(f"{source} is neither a video nor a frame directory")


def discover_inputs(input_dir: Path) -> dict[str, Path]:
    """Map video_id (stem) to its source under input_dir."""
    sources = {}
    for entry in sorted(Path(input_dir).iterdir()):
        if entry.is_dir() or entry.suffix.lower() in VIDEO_SUFFIXES:
            sources[entry.stem] = entry
    return sources
