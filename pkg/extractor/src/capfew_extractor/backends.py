"""Captioning backends: frozen models that turn frames into visual
tokens, captions, and caption embeddings.

`toy` is a deterministic, dependency-free stand-in built from image
statistics; `blip` adapts a pretrained captioning model when its
weights are resolvable. Both are frozen: nothing here trains.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class BackendError(Exception):
    pass


@dataclass
class FrameFeatures:
    visual: np.ndarray  # S x C spatial tokens
    captions: list[str]  # n decoded captions
    text: np.ndarray  # C, mean embedding of the captions


_BRIGHTNESS = ("dark", "dim", "bright")
_SATURATION = ("gray", "muted", "vivid")
_HUES = ("red", "orange", "yellow", "green", "cyan", "blue", "purple", "magenta")
_REGIONS = ("top", "center", "bottom")
# nucleus sampling draws synonyms instead of the argmax wording
_SCENE_WORDS = ("scene", "frame", "shot", "view", "picture")
_TONE_WORDS = ("tones", "colors", "shades", "hues")


def _stats(image: np.ndarray) -> dict:
    luma = image.mean(axis=2)
    r, g, b = image[..., 0], image[..., 1], image[..., 2]
    hue = math.degrees(math.atan2(math.sqrt(3) * (g - b).mean(), (2 * r - g - b).mean())) % 360
    rows = luma.mean(axis=1)
    return {
        "brightness": float(luma.mean()),
        "saturation": float(image.max(axis=2).mean() - image.min(axis=2).mean()),
        "hue": hue,
        "row_centroid": float((rows * np.arange(len(rows))).sum() / max(rows.sum(), 1e-9)
                              / max(len(rows) - 1, 1)),
    }


class ToyCaptioner:
    """Deterministic captioner driven entirely by frame statistics.

    Visual tokens are fixed random projections of per-band image
    statistics; captions are templated descriptions; embeddings are
    hashed bag-of-words vectors with a learned-looking but frozen
    projection. Identical inputs always produce identical outputs.
    """

    name = "toy"

    def __init__(self, spatial_tokens: int = 4, channels: int = 64):
        if spatial_tokens < 1 or channels < 1:
            raise BackendError(
                f"invalid token grid: S={spatial_tokens} C={channels}"
            )
        self.S = spatial_tokens
        self.C = channels
        gen = np.random.Generator(
            np.random.Philox(np.random.SeedSequence((0x70F0, spatial_tokens, channels)))
        )
        self._visual_proj = gen.normal(size=(8, channels)) / math.sqrt(8)
        self._text_proj = gen.normal(size=(channels, channels)) / math.sqrt(channels)

    def encode_image(self, image: np.ndarray) -> np.ndarray:
        """S x C tokens: one per horizontal band of the frame."""
        bands = np.array_split(image, self.S, axis=0)
        feats = []
        for band in bands:
            luma = band.mean(axis=2)
            dx = np.abs(np.diff(luma, axis=1)).mean()
            dy = np.abs(np.diff(luma, axis=0)).mean() if luma.shape[0] > 1 else 0.0
            feats.append(
                [
                    band[..., 0].mean(), band[..., 1].mean(), band[..., 2].mean(),
                    luma.std(), dx, dy,
                    band.max(axis=2).mean() - band.min(axis=2).mean(),
                    luma.mean(),
                ]
            )
        return np.asarray(feats) @ self._visual_proj

    def _describe(self, image: np.ndarray, scene_word: str, tone_word: str) -> str:
        s = _stats(image)
        brightness = _BRIGHTNESS[min(int(s["brightness"] * 3), 2)]
        saturation = _SATURATION[min(int(s["saturation"] * 3), 2)]
        hue = _HUES[int(s["hue"] / 45) % 8]
        region = _REGIONS[min(int(s["row_centroid"] * 3), 2)]
        return (
            f"a {brightness} {scene_word} with {saturation} {hue} {tone_word} "
            f"near the {region}"
        )

    def caption(self, image: np.ndarray, strategy: str, n: int, seed: int) -> list[str]:
        if strategy == "beam":
            # deterministic argmax wording
            return [self._describe(image, _SCENE_WORDS[0], _TONE_WORDS[0])]
        gen = np.random.Generator(np.random.Philox(np.random.SeedSequence((0x5A5A, seed))))
        return [
            self._describe(
                image,
                _SCENE_WORDS[gen.integers(len(_SCENE_WORDS))],
                _TONE_WORDS[gen.integers(len(_TONE_WORDS))],
            )
            for _ in range(n)
        ]

    def embed_text(self, caption: str) -> np.ndarray:
        """Leading-summary-style embedding: hashed token vectors averaged,
        then passed through the frozen projection."""
        tokens = caption.lower().split()
        if not tokens:
            return np.zeros(self.C)
        vecs = []
        for tok in tokens:
            g = np.random.Generator(
                np.random.Philox(np.random.SeedSequence((0x7E57, *tok.encode())))
            )
            vecs.append(g.normal(size=self.C))
        return np.tanh(np.mean(vecs, axis=0) @ self._text_proj)


class BlipCaptioner:
    """Adapter over a pretrained image-captioning model (transformers).

    Visual tokens come from the vision tower's patch grid mean-pooled to
    the requested S bands; captions from beam or nucleus decoding; text
    embeddings from the text encoder's leading summary token.
    """

    name = "blip"

    def __init__(self, model_id: str = "Salesforce/blip-image-captioning-base",
                 spatial_tokens: int = 4, channels: int | None = None):
        try:
            import torch
            from transformers import BlipForConditionalGeneration, BlipProcessor
        except ImportError as e:
            raise BackendError(
                "the blip backend needs transformers and torch "
                "(pip install capfew-extractor[blip])"
            ) from e
        try:
            self._processor = BlipProcessor.from_pretrained(model_id)
            self._model = BlipForConditionalGeneration.from_pretrained(model_id)
        except Exception as e:  # weights not resolvable (offline, bad id, ...)
            raise BackendError(f"cannot resolve weights for '{model_id}': {e}") from e
        self._model.eval()
        self._torch = torch
        self.S = spatial_tokens
        native = self._model.config.vision_config.hidden_size
        if channels not in (None, native):
            raise BackendError(
                f"model width is {native}; the store must use C={native}"
            )
        self.C = native

    def _pixel_values(self, image: np.ndarray):
        from PIL import Image

        pil = Image.fromarray((image * 255).astype(np.uint8))
        return self._processor(images=pil, return_tensors="pt").pixel_values

    def encode_image(self, image: np.ndarray) -> np.ndarray:
        with self._torch.no_grad():
            out = self._model.vision_model(self._pixel_values(image))
        patches = out.last_hidden_state[0, 1:].numpy()  # drop the summary token
        bands = np.array_split(patches, self.S, axis=0)
        return np.stack([b.mean(axis=0) for b in bands])

    def caption(self, image: np.ndarray, strategy: str, n: int, seed: int) -> list[str]:
        pixel_values = self._pixel_values(image)
        with self._torch.no_grad():
            if strategy == "beam":
                ids = self._model.generate(pixel_values, num_beams=3, max_new_tokens=30)
                return [self._processor.decode(ids[0], skip_special_tokens=True)]
            self._torch.manual_seed(seed)
            ids = self._model.generate(
                pixel_values, do_sample=True, top_p=0.9, max_new_tokens=30,
                num_return_sequences=n,
            )
            return [self._processor.decode(seq, skip_special_tokens=True) for seq in ids]

    def embed_text(self, caption: str) -> np.ndarray:
        inputs = self._processor(text=caption, return_tensors="pt")
        with self._torch.no_grad():
            out = self._model.text_decoder.bert(
                input_ids=inputs.input_ids, attention_mask=inputs.attention_mask
            )
        return out.last_hidden_state[0, 0].numpy()  # leading summary token


def make_backend(model_id: str, spatial_tokens: int, channels: int):
    """'toy' or anything else, which is treated as a pretrained model id."""
    if model_id == "toy":
        return ToyCaptioner(spatial_tokens, channels)
    return BlipCaptioner(model_id, spatial_tokens, channels)
