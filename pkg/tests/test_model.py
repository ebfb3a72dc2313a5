"""Aggregation model: shape contracts, fusion semantics, gradients, checkpoints."""
import numpy as np
import pytest

from capfew.errors import CheckpointMismatchError, ConfigError, DimensionError
from capfew.model import (
    FUSION_MODES,
    ModelConfig,
    cross_modal_fuse,
    forward,
    init_params,
    load_checkpoint,
    param_shapes,
    save_checkpoint,
    spatial_gap,
    text_temporal_encode,
    with_mode,
)
from capfew.tensor import Tensor, grad_check, layer_norm, matmul, no_grad


def small_config(**kw):
    base = dict(T=3, S=2, C=8, L=1, heads=2, ffn_mult=2, seed=0)
    base.update(kw)
    return ModelConfig(**base)


def rand_inputs(config, seed=0):
    g = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    return (
        g.normal(size=(config.T, config.S, config.C)),
        g.normal(size=(config.T, config.C)),
    )


class TestConfig:
    def test_paper_defaults(self):
        cfg = ModelConfig()
        assert cfg.L == 1 and cfg.T == 8
        assert cfg.fusion_mode == "cross_attention"

    def test_validation(self):
        with pytest.raises(ConfigError):
            small_config(L=0)
        with pytest.raises(ConfigError):
            small_config(C=9, heads=2)
        with pytest.raises(ConfigError):
            small_config(fusion_mode="magic")


class TestStages:
    def test_text_encode_preserves_shape(self):
        cfg = small_config()
        params = init_params(cfg)
        _, text = rand_inputs(cfg)
        out = text_temporal_encode(text, params, cfg)
        assert out.shape == (cfg.T, cfg.C)

    def test_frame_permutation_changes_text_encoding(self):
        cfg = small_config()
        params = init_params(cfg)
        _, text = rand_inputs(cfg)
        a = text_temporal_encode(text, params, cfg).data
        b = text_temporal_encode(text[::-1].copy(), params, cfg).data
        assert not np.allclose(a, b[::-1])

    def test_text_encode_shape_mismatch(self):
        cfg = small_config()
        with pytest.raises(DimensionError):
            text_temporal_encode(np.zeros((cfg.T + 1, cfg.C)), init_params(cfg), cfg)

    def test_single_text_key_broadcasts_one_value(self):
        cfg = small_config(T=1)
        params = init_params(cfg)
        visual, text = rand_inputs(cfg)
        enc = text_temporal_encode(text, params, cfg)
        fused = cross_modal_fuse(visual, enc, params, cfg)
        # with one key the attended vector is the same for every query token
        row = matmul(matmul(enc, params["fuse.wv"]), params["fuse.wo"]).data
        flat = visual.reshape(cfg.S, cfg.C)
        expect = layer_norm(
            Tensor(flat + row), params["fuse.ln.gamma"], params["fuse.ln.beta"]
        ).data
        np.testing.assert_allclose(fused.data.reshape(cfg.S, cfg.C), expect, atol=1e-12)

    def test_fuse_output_shape(self):
        cfg = small_config()
        params = init_params(cfg)
        visual, text = rand_inputs(cfg)
        enc = text_temporal_encode(text, params, cfg)
        assert cross_modal_fuse(visual, enc, params, cfg).shape == (cfg.T, cfg.S, cfg.C)

    def test_zero_value_projection_erases_text(self):
        cfg = small_config()
        params = init_params(cfg)
        params["fuse.wv"] = Tensor(np.zeros((cfg.C, cfg.C)), requires_grad=True)
        visual, text = rand_inputs(cfg)
        _, other_text = rand_inputs(cfg, seed=1)
        enc_a = text_temporal_encode(text, params, cfg)
        enc_b = text_temporal_encode(other_text, params, cfg)
        fused_a = cross_modal_fuse(visual, enc_a, params, cfg).data
        fused_b = cross_modal_fuse(visual, enc_b, params, cfg).data
        flat = visual.reshape(cfg.T * cfg.S, cfg.C)
        expect = layer_norm(
            Tensor(flat), params["fuse.ln.gamma"], params["fuse.ln.beta"]
        ).data.reshape(cfg.T, cfg.S, cfg.C)
        np.testing.assert_allclose(fused_a, expect, atol=1e-12)
        np.testing.assert_array_equal(fused_a, fused_b)

    def test_spatial_gap(self):
        assert spatial_gap(np.zeros((2, 1, 3))).shape == (2, 3)
        np.testing.assert_array_equal(
            spatial_gap(np.full((2, 4, 3), 1.7)).data, np.full((2, 3), 1.7)
        )
        tokens = np.array([[[0.0, 2.0], [2.0, 0.0]]])
        np.testing.assert_array_equal(spatial_gap(tokens).data, [[1.0, 1.0]])
        # S=1 is the identity
        x = np.arange(6.0).reshape(2, 1, 3)
        np.testing.assert_array_equal(spatial_gap(x).data, x[:, 0, :])


class TestForward:
    @pytest.mark.parametrize("mode", FUSION_MODES)
    def test_output_shape(self, mode):
        cfg = small_config(fusion_mode=mode)
        params = init_params(cfg)
        visual, text = rand_inputs(cfg)
        assert forward(visual, text, params, cfg).shape == (cfg.T, cfg.C)

    def test_default_width_eight_frame_output(self):
        cfg = ModelConfig()  # T=8 default
        params = init_params(cfg)
        visual, text = rand_inputs(cfg)
        assert forward(visual, text, params, cfg).shape == (8, 64)

    def test_visual_only_ignores_text_bit_identically(self):
        cfg = small_config(fusion_mode="visual_only")
        params = init_params(cfg)
        visual, text = rand_inputs(cfg)
        _, other_text = rand_inputs(cfg, seed=9)
        a = forward(visual, text, params, cfg).data
        b = forward(visual, other_text, params, cfg).data
        np.testing.assert_array_equal(a, b)

    @pytest.mark.parametrize("mode", ["cross_attention", "concat", "sum"])
    def test_text_changes_output_in_fusing_modes(self, mode):
        cfg = small_config(fusion_mode=mode)
        params = init_params(cfg)
        visual, text = rand_inputs(cfg)
        _, other_text = rand_inputs(cfg, seed=9)
        a = forward(visual, text, params, cfg).data
        b = forward(visual, other_text, params, cfg).data
        assert not np.allclose(a, b)

    def test_text_temporal_toggle_changes_output(self):
        visual, text = rand_inputs(small_config())
        outs = []
        for flag in (True, False):
            cfg = small_config(text_temporal=flag)
            outs.append(forward(visual, text, init_params(cfg), cfg).data)
        assert not np.allclose(outs[0], outs[1])

    def test_init_is_pure_function_of_seed(self):
        a = init_params(small_config(seed=3))
        b = init_params(small_config(seed=3))
        c = init_params(small_config(seed=4))
        for name in a:
            np.testing.assert_array_equal(a[name].data, b[name].data)
        assert any(not np.array_equal(a[n].data, c[n].data) for n in a)

    def test_shape_mismatch(self):
        cfg = small_config()
        params = init_params(cfg)
        with pytest.raises(DimensionError):
            forward(np.zeros((cfg.T, cfg.S + 1, cfg.C)), np.zeros((cfg.T, cfg.C)), params, cfg)


@pytest.mark.parametrize("mode", FUSION_MODES)
def test_forward_gradients_match_finite_differences(mode):
    cfg = small_config(fusion_mode=mode)
    params = init_params(cfg)
    visual, text = rand_inputs(cfg, seed=5)

    for name, p in params.items():
        def objective(t, name=name):
            probe = dict(params)
            probe[name] = t
            return (forward(visual, text, probe, cfg) ** 2).sum() * 0.1

        assert grad_check(objective, p, h=1e-5) <= 1e-4, name


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        cfg = small_config(fusion_mode="concat", seed=21)
        params = init_params(cfg)
        path = tmp_path / "m.capc"
        save_checkpoint(path, cfg, params)
        ckpt = load_checkpoint(path)
        assert ckpt.config == cfg
        assert set(ckpt.params) == set(params)
        for name in params:
            np.testing.assert_array_equal(
                ckpt.params[name].data,
                params[name].data.astype(np.float32).astype(np.float64),
            )

    def test_identical_saves_are_byte_identical(self, tmp_path):
        cfg = small_config()
        p1, p2 = tmp_path / "a.capc", tmp_path / "b.capc"
        save_checkpoint(p1, cfg, init_params(cfg))
        save_checkpoint(p2, cfg, init_params(cfg))
        assert p1.read_bytes() == p2.read_bytes()

    def test_metric_params_round_trip(self, tmp_path):
        cfg = small_config()
        extra = {"trx.2.tuple": Tensor(np.ones((16, 8)), requires_grad=True)}
        path = tmp_path / "m.capc"
        save_checkpoint(path, cfg, init_params(cfg), metric_kind="trx", metric_params=extra)
        ckpt = load_checkpoint(path)
        assert ckpt.metric_kind == "trx"
        np.testing.assert_array_equal(ckpt.metric_params["trx.2.tuple"].data, np.ones((16, 8)))

    def test_mismatch_detected(self, tmp_path):
        cfg = small_config()
        params = init_params(cfg)
        dropped = {k: v for k, v in params.items() if k != "fuse.wq"}
        path = tmp_path / "m.capc"
        save_checkpoint(path, with_mode(cfg), dropped)
        with pytest.raises(CheckpointMismatchError, match="fuse.wq"):
            load_checkpoint(path)

    def test_param_shapes_cover_all_modes(self):
        for mode in FUSION_MODES:
            cfg = small_config(fusion_mode=mode)
            shapes = param_shapes(cfg)
            assert set(init_params(cfg)) == set(shapes)
            has_text = any(k.startswith("text.") for k in shapes)
            assert has_text == (mode != "visual_only")
