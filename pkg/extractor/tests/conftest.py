import json

import numpy as np
import pytest
from PIL import Image, ImageDraw


def paint_frame(size, background, square_color, square_pos):
    img = Image.new("RGB", size, background)
    draw = ImageDraw.Draw(img)
    x, y = square_pos
    draw.rectangle([x, y, x + 14, y + 14], fill=square_color)
    return img


@pytest.fixture(scope="session")
def smoke_corpus(tmp_path_factory):
    """Three frame-dir videos with distinct palettes and motion, plus a
    class manifest."""
    root = tmp_path_factory.mktemp("corpus")
    palettes = [
        ((200, 40, 40), (250, 250, 100)),
        ((40, 160, 60), (30, 30, 200)),
        ((20, 20, 40), (230, 230, 230)),
    ]
    manifest = {}
    for v, (bg, fg) in enumerate(palettes):
        vid_dir = root / f"clip{v}"
        vid_dir.mkdir()
        for t in range(10):
            frame = paint_frame((64, 48), bg, fg, (4 + 4 * t, 8 + 2 * t))
            frame.save(vid_dir / f"frame{t:03d}.png")
        manifest[f"clip{v}"] = v % 2
    manifest_path = root / "manifest.json"
    manifest_path.write_text(json.dumps(manifest))
    return root, manifest_path


@pytest.fixture()
def rng():
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(0)))
