"""Temporal matching metrics between aggregated feature sequences.

Backends: ordered alignment via boundary-relaxed soft DTW (otam),
bidirectional mean-minimum frame-set distance (bimhm), exhaustive frame
tuples reconstructed by attention over pooled support tuples (trx), and
a frame-aligned prototype baseline (proto). A path-enumeration oracle
pins the DTW semantics exactly at lambda=0.
"""
from __future__ import annotations

import itertools
from typing import Sequence

import numpy as np

from . import rng
from .errors import (
    ConfigError,
    DegenerateInputError,
    DimensionError,
    OracleScopeError,
)
from .tensor import Tensor, as_tensor, concat, matmul, scaled_dot_attention, smoothmin, softmax

METRIC_KINDS = ("otam", "trx", "bimhm", "proto")

_BRUTE_FORCE_BOUND = 8


def frame_distance_matrix(q, s) -> Tensor:
    """Pairwise cosine distances 1 - cos(q_i, s_j), in [0, 2]."""
    q, s = as_tensor(q), as_tensor(s)
    if q.data.ndim != 2 or s.data.ndim != 2 or q.data.shape[1] != s.data.shape[1]:
        raise DimensionError(
            f"frame sequences must share channel width, got {q.shape} and {s.shape}"
        )
    for name, t in (("query", q), ("support", s)):
        norms = np.linalg.norm(t.data, axis=1)
        if np.any(norms < 1e-12):
            raise DegenerateInputError(
                f"{name} contains a zero-norm frame vector (row {int(np.argmin(norms))})"
            )
    qn = q / (q * q).sum(axis=1, keepdims=True).sqrt()
    sn = s / (s * s).sum(axis=1, keepdims=True).sqrt()
    return 1.0 - matmul(qn, sn.T)


def dtw_bruteforce(d) -> float:
    """Exact minimum over all monotone alignment paths (any start/end
    support column, steps diagonal or down) by explicit enumeration."""
    d = d.data if isinstance(d, Tensor) else np.asarray(d, dtype=np.float64)
    tq, ts = d.shape
    if tq > _BRUTE_FORCE_BOUND or ts > _BRUTE_FORCE_BOUND:
        raise OracleScopeError(
            f"brute-force oracle is bounded at {_BRUTE_FORCE_BOUND}, got {d.shape}"
        )
    best = np.inf

    def walk(i, j, cost):
        nonlocal best
        cost += d[i, j]
        if i == tq - 1:
            best = min(best, cost)
            return
        walk(i + 1, j, cost)
        if j + 1 < ts:
            walk(i + 1, j + 1, cost)

    for j0 in range(ts):
        walk(0, j0, 0.0)
    return float(best)


def otam_distance(d, lam: float) -> Tensor:
    """Boundary-relaxed DTW via the soft-min dynamic program.

    gamma(i,j) = d(i,j) + smoothmin{gamma(i-1,j-1), gamma(i-1,j)} with a
    zero-cost virtual row before i=0 (any start column) and a soft-min
    over the last row (any end column). Exact min at lam=0 (forward
    only); differentiable in d for lam > 0.
    """
    if lam < 0:
        raise ConfigError(f"lambda must be >= 0, got {lam}")
    d = as_tensor(d)
    if d.data.ndim != 2 or d.data.size == 0:
        raise DimensionError(f"cost matrix must be 2-d and non-empty, got {d.shape}")
    tq, ts = d.data.shape

    if lam == 0.0:
        prev = d.data[0].copy()
        for i in range(1, tq):
            shifted = np.concatenate(([np.inf], prev[:-1]))
            prev = d.data[i] + np.minimum(shifted, prev)
        return Tensor(prev.min())

    prev = Tensor(np.zeros(ts))  # virtual zero-cost pre-row
    for i in range(tq):
        pad = Tensor([0.0]) if i == 0 else Tensor([np.inf])
        diag = pad if ts == 1 else concat([pad, prev.narrow(0, 0, ts - 1)], axis=0)
        stacked = concat([diag.reshape(1, ts), prev.reshape(1, ts)], axis=0)
        prev = d.narrow(0, i, 1).reshape(ts) + smoothmin(stacked, lam, axis=0)
    return smoothmin(prev, lam, axis=0)


def _bimhm_from_matrix(d: Tensor, smooth_lambda: float | None = None) -> Tensor:
    if smooth_lambda:
        return (
            smoothmin(d, smooth_lambda, axis=1).mean()
            + smoothmin(d, smooth_lambda, axis=0).mean()
        )
    return Tensor(d.data.min(axis=1).mean() + d.data.min(axis=0).mean())


def bimhm_distance(q, s, smooth_lambda: float | None = None) -> Tensor:
    """Mean row-minimum plus mean column-minimum of the frame distance
    matrix: order-free set matching. Hard min unless smooth_lambda is
    set (training mode)."""
    return _bimhm_from_matrix(frame_distance_matrix(q, s), smooth_lambda)


# -- trx -------------------------------------------------------------------


def tuple_indices(t: int, omega: int) -> list[tuple[int, ...]]:
    return list(itertools.combinations(range(t), omega))


def init_trx_params(c: int, omegas: Sequence[int] = (2, 3), seed: int = 0) -> dict[str, Tensor]:
    """Per-cardinality tuple projection plus attention Q/K/V projections."""
    if not omegas or any(w not in (2, 3) for w in omegas):
        raise ConfigError(f"tuple cardinalities must be a subset of {{2, 3}}, got {omegas}")
    params = {}
    for w in sorted(set(omegas)):
        shapes = {
            f"trx.{w}.tuple": (w * c, c),
            f"trx.{w}.wq": (c, c),
            f"trx.{w}.wk": (c, c),
            f"trx.{w}.wv": (c, c),
        }
        for name, shape in shapes.items():
            bound = 1.0 / np.sqrt(shape[0])
            gen = rng.stream(seed, rng.MODEL_INIT, *rng.name_key(name))
            params[name] = Tensor(gen.uniform(-bound, bound, size=shape), requires_grad=True)
    return params


def _tuple_reprs(x: Tensor, omega: int, proj: Tensor) -> Tensor:
    t, c = x.shape
    idx = np.array(tuple_indices(t, omega), dtype=np.intp)
    flat = x.take_rows(idx.reshape(-1)).reshape(len(idx), omega * c)
    return matmul(flat, proj)


def trx_distance(q, supports: Sequence, trx_params: dict, omegas: Sequence[int] = (2, 3)) -> Tensor:
    """Mean over cardinalities of the mean squared gap between each query
    tuple's value projection and its attention reconstruction from the
    pooled support tuples."""
    q = as_tensor(q)
    t = q.shape[0]
    if t < max(omegas):
        raise DimensionError(
            f"sequences of length {t} cannot form {max(omegas)}-tuples"
        )
    total = None
    for w in sorted(set(omegas)):
        proj = trx_params[f"trx.{w}.tuple"]
        q_tuples = _tuple_reprs(q, w, proj)
        s_tuples = concat([_tuple_reprs(as_tensor(s), w, proj) for s in supports], axis=0)
        recon = scaled_dot_attention(
            matmul(q_tuples, trx_params[f"trx.{w}.wq"]),
            matmul(s_tuples, trx_params[f"trx.{w}.wk"]),
            matmul(s_tuples, trx_params[f"trx.{w}.wv"]),
        )
        gap = matmul(q_tuples, trx_params[f"trx.{w}.wv"]) - recon
        dist = (gap * gap).sum(axis=1).mean()
        total = dist if total is None else total + dist
    return total / len(set(omegas))


# -- support fusion and classification --------------------------------------


def fuse_support(class_supports: Sequence, kind: str):
    """Combine K support videos into one class representation: frame-wise
    mean (otam/proto), frame union (bimhm), or the video list itself
    (trx pools tuples from all of them)."""
    if kind not in METRIC_KINDS:
        raise ConfigError(f"metric kind '{kind}' not one of {METRIC_KINDS}")
    if not class_supports:
        raise DimensionError("support set is empty")
    tensors = [as_tensor(s) for s in class_supports]
    shape = tensors[0].shape
    if any(t.shape != shape for t in tensors):
        raise DimensionError(
            f"support features disagree on shape: {[t.shape for t in tensors]}"
        )
    if kind in ("otam", "proto"):
        acc = tensors[0]
        for t in tensors[1:]:
            acc = acc + t
        return acc / len(tensors)
    if kind == "bimhm":
        return tensors[0] if len(tensors) == 1 else concat(tensors, axis=0)
    return tensors  # trx


def classify_query(distances) -> tuple[Tensor, int]:
    """softmax over negative distances; argmin with lowest-slot ties."""
    d = as_tensor(distances)
    if not np.all(np.isfinite(d.data)):
        raise DegenerateInputError("distances contain non-finite values")
    return softmax(-d, axis=-1), int(np.argmin(d.data))


def episode_distances(
    query,
    support_sets: Sequence[Sequence],
    kind: str,
    otam_lambda: float = 0.1,
    bimhm_lambda: float | None = None,
    trx_params: dict | None = None,
    trx_omegas: Sequence[int] = (2, 3),
) -> Tensor:
    """Distance from one query to each class slot, as a length-N tensor."""
    q = as_tensor(query)
    dists = []
    for class_supports in support_sets:
        rep = fuse_support(class_supports, kind)
        if kind == "otam":
            d = otam_distance(frame_distance_matrix(q, rep), otam_lambda)
        elif kind == "proto":
            dm = frame_distance_matrix(q, rep)
            t = dm.shape[0]
            d = (dm * Tensor(np.eye(t))).sum() / t
        elif kind == "bimhm":
            d = _bimhm_from_matrix(frame_distance_matrix(q, rep), bimhm_lambda)
        else:  # trx
            if trx_params is None:
                raise ConfigError("trx metric requires trx_params")
            d = trx_distance(q, rep, trx_params, trx_omegas)
        dists.append(d.reshape(1))
    return concat(dists, axis=0)
