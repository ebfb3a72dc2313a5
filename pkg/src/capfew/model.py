"""Visual-text aggregation: per-frame caption embeddings modulate visual
token maps, collapsing to one multimodal feature sequence per video.

Pipeline (default mode): encode the caption sequence with pre-norm
self-attention blocks, let every visual token cross-attend over the
encoded captions, average over spatial positions, then run temporal
self-attention blocks. Variants: concat, sum, and a visual-only path
that ignores text entirely.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import rng
from .errors import (
    CheckpointMismatchError,
    ConfigError,
    CorruptionError,
    DimensionError,
    FormatError,
)
from .tensor import Tensor, as_tensor, concat, gelu, layer_norm, matmul, scaled_dot_attention

FUSION_MODES = ("cross_attention", "concat", "sum", "visual_only")

CHECKPOINT_MAGIC = b"CAPC"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    """Widths and depths of the aggregation stages.

    All three stages (text, fusion, temporal) share the layer count L;
    text_temporal=False bypasses the text-stage blocks (captions feed the
    fusion step raw).
    """

    T: int = 8
    S: int = 4
    C: int = 64
    L: int = 1
    heads: int = 4
    ffn_mult: int = 2
    fusion_mode: str = "cross_attention"
    text_temporal: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.L < 1:
            raise ConfigError(f"L must be >= 1, got {self.L}")
        if self.T < 1 or self.S < 1 or self.C < 1:
            raise ConfigError(f"invalid dimensions T={self.T} S={self.S} C={self.C}")
        if self.heads < 1 or self.C % self.heads != 0:
            raise ConfigError(f"C={self.C} not divisible by heads={self.heads}")
        if self.ffn_mult < 1:
            raise ConfigError(f"ffn_mult must be >= 1, got {self.ffn_mult}")
        if self.fusion_mode not in FUSION_MODES:
            raise ConfigError(
                f"fusion_mode '{self.fusion_mode}' not one of {FUSION_MODES}"
            )


def sinusoidal_positions(t: int, c: int) -> np.ndarray:
    """Non-trainable t x c sin/cos position table."""
    pos = np.arange(t, dtype=np.float64)[:, None]
    i = np.arange(c, dtype=np.float64)[None, :]
    angles = pos / np.power(10000.0, 2.0 * np.floor(i / 2.0) / c)
    return np.where(np.arange(c) % 2 == 0, np.sin(angles), np.cos(angles))


def _block_shapes(prefix: str, c: int, f: int) -> dict[str, tuple]:
    return {
        f"{prefix}.ln1.gamma": (c,),
        f"{prefix}.ln1.beta": (c,),
        f"{prefix}.attn.wq": (c, c),
        f"{prefix}.attn.wk": (c, c),
        f"{prefix}.attn.wv": (c, c),
        f"{prefix}.attn.wo": (c, c),
        f"{prefix}.ln2.gamma": (c,),
        f"{prefix}.ln2.beta": (c,),
        f"{prefix}.ffn.w1": (c, f),
        f"{prefix}.ffn.w2": (f, c),
    }


def param_shapes(config: ModelConfig) -> dict[str, tuple]:
    """Every trainable tensor's shape, fixed entirely by the config."""
    c, f = config.C, config.ffn_mult * config.C
    shapes: dict[str, tuple] = {}
    uses_text = config.fusion_mode != "visual_only"
    if uses_text and config.text_temporal:
        for layer in range(config.L):
            shapes.update(_block_shapes(f"text.{layer}", c, f))
    if config.fusion_mode == "cross_attention":
        shapes.update(
            {
                "fuse.wq": (c, c),
                "fuse.wk": (c, c),
                "fuse.wv": (c, c),
                "fuse.wo": (c, c),
                "fuse.ln.gamma": (c,),
                "fuse.ln.beta": (c,),
            }
        )
    elif config.fusion_mode == "concat":
        shapes["fuse.proj"] = (2 * c, c)
    for layer in range(config.L):
        shapes.update(_block_shapes(f"temporal.{layer}", c, f))
    return shapes


def init_params(config: ModelConfig) -> dict[str, Tensor]:
    """Seeded init: weights uniform in +-1/sqrt(fan_in), norms identity.

    Each tensor draws from its own (seed, name)-keyed stream, so the
    values do not depend on dict iteration order.
    """
    params = {}
    for name, shape in param_shapes(config).items():
        if name.endswith(".gamma"):
            data = np.ones(shape)
        elif name.endswith(".beta"):
            data = np.zeros(shape)
        else:
            bound = 1.0 / np.sqrt(shape[0])
            gen = rng.stream(config.seed, rng.MODEL_INIT, *rng.name_key(name))
            data = gen.uniform(-bound, bound, size=shape)
        params[name] = Tensor(data, requires_grad=True)
    return params


def _mha(x_q: Tensor, x_kv: Tensor, params, prefix: str, heads: int) -> Tensor:
    """Multi-head scaled dot attention; queries from x_q, keys/values
    from x_kv."""
    q = matmul(x_q, params[f"{prefix}.wq"])
    k = matmul(x_kv, params[f"{prefix}.wk"])
    v = matmul(x_kv, params[f"{prefix}.wv"])
    dh = q.shape[1] // heads
    outs = [
        scaled_dot_attention(
            q.narrow(1, h * dh, dh), k.narrow(1, h * dh, dh), v.narrow(1, h * dh, dh)
        )
        for h in range(heads)
    ]
    merged = outs[0] if heads == 1 else concat(outs, axis=1)
    return matmul(merged, params[f"{prefix}.wo"])


def _encoder_block(x: Tensor, params, prefix: str, heads: int) -> Tensor:
    """Pre-norm self-attention + feed-forward, both residual."""
    h = layer_norm(x, params[f"{prefix}.ln1.gamma"], params[f"{prefix}.ln1.beta"])
    x = x + _mha(h, h, params, f"{prefix}.attn", heads)
    h = layer_norm(x, params[f"{prefix}.ln2.gamma"], params[f"{prefix}.ln2.beta"])
    return x + matmul(gelu(matmul(h, params[f"{prefix}.ffn.w1"])), params[f"{prefix}.ffn.w2"])


def _stage(x: Tensor, params, config: ModelConfig, prefix: str) -> Tensor:
    x = x + Tensor(sinusoidal_positions(x.shape[0], x.shape[1]))
    for layer in range(config.L):
        x = _encoder_block(x, params, f"{prefix}.{layer}", config.heads)
    return x


def text_temporal_encode(text, params, config: ModelConfig) -> Tensor:
    """Position-encode the caption sequence and run the text-stage blocks."""
    text = as_tensor(text)
    if text.shape != (config.T, config.C):
        raise DimensionError(
            f"text shape {text.shape} != (T={config.T}, C={config.C})"
        )
    return _stage(text, params, config, "text")


def cross_modal_fuse(visual, text_encoded, params, config: ModelConfig) -> Tensor:
    """All T*S visual tokens attend over the encoded caption sequence;
    the attended text is added residually, then layer-normed."""
    visual = as_tensor(visual)
    if visual.shape != (config.T, config.S, config.C):
        raise DimensionError(
            f"visual shape {visual.shape} != (T={config.T}, S={config.S}, C={config.C})"
        )
    flat = visual.reshape(config.T * config.S, config.C)
    attended = _mha(flat, as_tensor(text_encoded), params, "fuse", config.heads)
    fused = layer_norm(flat + attended, params["fuse.ln.gamma"], params["fuse.ln.beta"])
    return fused.reshape(config.T, config.S, config.C)


def spatial_gap(x) -> Tensor:
    """Mean over the spatial token axis: TxSxC -> TxC."""
    x = as_tensor(x)
    if x.data.ndim != 3:
        raise DimensionError(f"spatial_gap expects TxSxC, got {x.shape}")
    return x.mean(axis=1)


def forward(visual, text, params, config: ModelConfig) -> Tensor:
    """Aggregate one video's (visual, text) features into a TxC sequence."""
    visual = as_tensor(visual)
    if visual.shape != (config.T, config.S, config.C):
        raise DimensionError(
            f"visual shape {visual.shape} != (T={config.T}, S={config.S}, C={config.C})"
        )
    mode = config.fusion_mode
    if mode == "visual_only":
        x = spatial_gap(visual)
    else:
        text = as_tensor(text)
        if text.shape != (config.T, config.C):
            raise DimensionError(f"text shape {text.shape} != (T={config.T}, C={config.C})")
        encoded = text_temporal_encode(text, params, config) if config.text_temporal else text
        if mode == "cross_attention":
            x = spatial_gap(cross_modal_fuse(visual, encoded, params, config))
        elif mode == "concat":
            x = matmul(concat([spatial_gap(visual), encoded], axis=1), params["fuse.proj"])
        else:  # sum
            x = spatial_gap(visual) + encoded
    return _stage(x, params, config, "temporal")


# -- checkpoints -----------------------------------------------------------


@dataclass
class Checkpoint:
    config: ModelConfig
    params: dict[str, Tensor]
    metric_kind: str = ""
    metric_params: dict[str, Tensor] | None = None


def _pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


def save_checkpoint(path, config: ModelConfig, params: dict[str, Tensor],
                    metric_kind: str = "", metric_params: dict[str, Tensor] | None = None) -> int:
    """Config echo plus named tensors, float32 little-endian like the store."""
    out = bytearray()
    out += CHECKPOINT_MAGIC
    out += struct.pack(
        "<7I", CHECKPOINT_VERSION, config.T, config.S, config.C,
        config.L, config.heads, config.ffn_mult,
    )
    out += _pack_str(config.fusion_mode)
    out += struct.pack("<I", int(config.text_temporal))
    out += struct.pack("<q", config.seed)
    out += _pack_str(metric_kind)
    tensors = dict(params)
    for name, t in (metric_params or {}).items():
        tensors[name] = t
    out += struct.pack("<I", len(tensors))
    for name in sorted(tensors):
        t = tensors[name]
        out += _pack_str(name)
        out += struct.pack("<I", t.data.ndim)
        out += struct.pack(f"<{t.data.ndim}I", *t.data.shape)
        out += np.ascontiguousarray(t.data, dtype="<f4").tobytes()
    Path(path).write_bytes(out)
    return len(out)


def load_checkpoint(path) -> Checkpoint:
    """Parse, then validate every model tensor's shape against the config."""
    buf = Path(path).read_bytes()
    pos = 0

    def take(n, what):
        nonlocal pos
        if pos + n > len(buf):
            raise CorruptionError(f"checkpoint truncated while reading {what}", pos)
        chunk = buf[pos : pos + n]
        pos += n
        return chunk

    def read_str(what):
        (n,) = struct.unpack("<I", take(4, f"{what} length"))
        return take(n, what).decode("utf-8")

    if take(4, "magic") != CHECKPOINT_MAGIC:
        raise FormatError("not a checkpoint file (bad magic)")
    version, t, s, c, layers, heads, ffn_mult = struct.unpack("<7I", take(28, "config"))
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    fusion_mode = read_str("fusion mode")
    (text_temporal,) = struct.unpack("<I", take(4, "text_temporal"))
    (seed,) = struct.unpack("<q", take(8, "seed"))
    metric_kind = read_str("metric kind")
    config = ModelConfig(
        T=t, S=s, C=c, L=layers, heads=heads, ffn_mult=ffn_mult,
        fusion_mode=fusion_mode, text_temporal=bool(text_temporal), seed=seed,
    )

    (count,) = struct.unpack("<I", take(4, "tensor count"))
    tensors: dict[str, Tensor] = {}
    for _ in range(count):
        name = read_str("tensor name")
        (ndim,) = struct.unpack("<I", take(4, "tensor rank"))
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim, "tensor shape"))
        n = int(np.prod(shape)) if shape else 1
        data = np.frombuffer(take(4 * n, f"tensor '{name}'"), dtype="<f4")
        tensors[name] = Tensor(data.astype(np.float64).reshape(shape), requires_grad=True)
    if pos != len(buf):
        raise CorruptionError("trailing bytes after checkpoint tensors", pos)

    expected = param_shapes(config)
    params = {k: v for k, v in tensors.items() if not k.startswith("trx.")}
    metric_params = {k: v for k, v in tensors.items() if k.startswith("trx.")}
    if set(params) != set(expected):
        missing = sorted(set(expected) - set(params))
        extra = sorted(set(params) - set(expected))
        raise CheckpointMismatchError(
            f"parameter names disagree with config (missing {missing}, unexpected {extra})"
        )
    for name, shape in expected.items():
        if params[name].data.shape != shape:
            raise CheckpointMismatchError(
                f"tensor '{name}' has shape {params[name].data.shape}, config implies {shape}"
            )
    return Checkpoint(config, params, metric_kind, metric_params or None)


def with_mode(config: ModelConfig, **changes) -> ModelConfig:
    """Derive a config with the given fields replaced."""
    return replace(config, **changes)
