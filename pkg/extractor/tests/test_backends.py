"""Captioning backends."""
import numpy as np
import pytest

from capfew_extractor.backends import BackendError, ToyCaptioner, make_backend


@pytest.fixture(scope="module")
def toy():
    return ToyCaptioner(spatial_tokens=4, channels=16)


def gradient_image(seed=0):
    g = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    base = np.linspace(0, 1, 224)[:, None, None]
    return np.clip(base + g.uniform(0, 0.2, size=(224, 224, 3)), 0, 1)


class TestToyVisual:
    def test_token_grid_shape(self, toy):
        assert toy.encode_image(gradient_image()).shape == (4, 16)

    def test_deterministic(self, toy):
        img = gradient_image(3)
        np.testing.assert_array_equal(toy.encode_image(img), toy.encode_image(img))

    def test_content_sensitivity(self, toy):
        a = toy.encode_image(gradient_image(1))
        b = toy.encode_image(np.zeros((224, 224, 3)))
        assert not np.allclose(a, b)

    def test_bad_grid(self):
        with pytest.raises(BackendError):
            ToyCaptioner(spatial_tokens=0, channels=16)


class TestToyCaptions:
    def test_beam_is_single_and_deterministic(self, toy):
        img = gradient_image(2)
        caps1 = toy.caption(img, "beam", 1, seed=0)
        caps2 = toy.caption(img, "beam", 1, seed=99)  # beam ignores the seed
        assert caps1 == caps2 and len(caps1) == 1
        assert caps1[0]

    def test_nucleus_returns_n_seeded(self, toy):
        img = gradient_image(2)
        caps_a = toy.caption(img, "nucleus", 5, seed=7)
        caps_b = toy.caption(img, "nucleus", 5, seed=7)
        caps_c = toy.caption(img, "nucleus", 5, seed=8)
        assert len(caps_a) == 5
        assert caps_a == caps_b
        assert caps_a != caps_c

    def test_captions_reflect_content(self, toy):
        dark = toy.caption(np.zeros((224, 224, 3)), "beam", 1, seed=0)[0]
        bright = toy.caption(np.ones((224, 224, 3)) * 0.95, "beam", 1, seed=0)[0]
        assert "dark" in dark
        assert "bright" in bright


class TestToyEmbeddings:
    def test_deterministic_and_width(self, toy):
        e1 = toy.embed_text("a bright scene with vivid red tones near the top")
        e2 = toy.embed_text("a bright scene with vivid red tones near the top")
        np.testing.assert_array_equal(e1, e2)
        assert e1.shape == (16,)

    def test_distinct_captions_distinct_embeddings(self, toy):
        a = toy.embed_text("a dark frame with gray blue shades near the bottom")
        b = toy.embed_text("a bright view with vivid red hues near the top")
        assert not np.allclose(a, b)

    def test_empty_caption_is_zero(self, toy):
        np.testing.assert_array_equal(toy.embed_text(""), np.zeros(16))


class TestBackendFactory:
    def test_toy_by_name(self):
        backend = make_backend("toy", 2, 8)
        assert backend.S == 2 and backend.C == 8

    def test_unresolvable_model_raises_backend_error(self, monkeypatch):
        pytest.importorskip("transformers")
        monkeypatch.setenv("HF_HUB_OFFLINE", "1")
        monkeypatch.setenv("TRANSFORMERS_OFFLINE", "1")
        with pytest.raises(BackendError, match="cannot resolve weights"):
            make_backend("nonexistent/model-id", 4, None)
