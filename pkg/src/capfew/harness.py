"""Episodic training, frozen-checkpoint evaluation, and ablation sweeps."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import rng
from .episodes import Episode, group_by_class, load_split, run_protocol, sample_episode
from .errors import CheckpointMismatchError, ConfigError, NumericError
from .metrics import METRIC_KINDS, episode_distances, init_trx_params
from .model import (
    ModelConfig,
    forward,
    init_params,
    load_checkpoint,
    save_checkpoint,
    with_mode,
)
from .store import read_store
from .tensor import (
    AdamState,
    Tensor,
    adam_step,
    bulk_grad_check,
    concat,
    log_softmax,
    no_grad,
)

log = logging.getLogger("capfew")

SWEEP_AXES = ("fusion_mode", "L", "T", "N", "metric", "text_temporal")


@dataclass
class RunConfig:
    """Everything one training or evaluation run needs."""

    store: str
    train_split: str | None = None
    test_split: str | None = None
    model: ModelConfig = field(default_factory=ModelConfig)
    metric: str = "otam"
    way: int = 5
    shot: int = 1
    queries_per_class: int = 1
    train_episodes: int = 2000
    eval_episodes: int = 10000
    fixed_episodes: int | None = None  # cycle over a frozen episode pool
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    checkpoint: str = "model.capc"
    otam_lambda: float = 0.1  # soft alignment during training
    eval_otam_lambda: float = 0.0  # hard alignment when evaluating
    bimhm_lambda: float = 0.1  # smooth-min when gradients are needed
    trx_omegas: tuple = (2, 3)
    out_dir: str | None = None

    def __post_init__(self):
        if self.metric not in METRIC_KINDS:
            raise ConfigError(f"metric '{self.metric}' not one of {METRIC_KINDS}")
        if self.way < 2:
            raise ConfigError(f"way must be >= 2, got {self.way}")
        if min(self.shot, self.queries_per_class) < 1:
            raise ConfigError("shot and queries_per_class must be >= 1")
        if self.fixed_episodes is not None and self.fixed_episodes < 1:
            raise ConfigError("fixed_episodes must be >= 1 when set")


def uniform_frame_indices(available: int, wanted: int) -> np.ndarray:
    """Deterministic uniform subsampling: floor(k*(F-1)/(T-1)); the middle
    frame when one is wanted."""
    if wanted > available:
        raise ConfigError(f"cannot draw {wanted} frames from {available}")
    if wanted == 1:
        return np.array([available // 2])
    k = np.arange(wanted)
    return (k * (available - 1)) // (wanted - 1)


def featurize(record, params, config: ModelConfig) -> Tensor:
    """Run one record through the aggregation model, subsampling stored
    frames when the model wants fewer than the store holds."""
    visual, text = record.visual, record.text
    if visual.shape[0] != config.T:
        idx = uniform_frame_indices(visual.shape[0], config.T)
        visual, text = visual[idx], text[idx]
    if visual.shape[1] != config.S or visual.shape[2] != config.C:
        raise ConfigError(
            f"store features are SxC={visual.shape[1]}x{visual.shape[2]} but the "
            f"model wants {config.S}x{config.C}"
        )
    return forward(visual, text, params, config)


def _metric_kwargs(config: RunConfig, trx_params, training: bool) -> dict:
    kw: dict = {"trx_params": trx_params, "trx_omegas": tuple(config.trx_omegas)}
    if config.metric == "otam":
        kw["otam_lambda"] = config.otam_lambda if training else config.eval_otam_lambda
    if config.metric == "bimhm":
        kw["bimhm_lambda"] = config.bimhm_lambda if training else None
    return kw


def episode_loss(
    episode: Episode,
    params: dict[str, Tensor],
    config: RunConfig,
    trx_params: dict[str, Tensor] | None = None,
) -> tuple[Tensor, list[int]]:
    """Mean cross-entropy of -distances against the true slots, plus the
    argmin predictions for accuracy tracking."""
    support_feats = [
        [featurize(r, params, config.model) for r in slot] for slot in episode.support
    ]
    kw = _metric_kwargs(config, trx_params, training=True)
    losses, preds = [], []
    for record, true_slot in episode.query:
        d = episode_distances(
            featurize(record, params, config.model), support_feats, config.metric, **kw
        )
        losses.append(-log_softmax(-d, axis=-1).narrow(0, true_slot, 1))
        preds.append(int(np.argmin(d.data)))
    return concat(losses, axis=0).mean(), preds


@dataclass
class TrainResult:
    checkpoint: str
    history: list[dict]


def _train_classes(config: RunConfig, records) -> set[int]:
    if config.train_split:
        return load_split(config.train_split)
    return {r.class_id for r in records}


def _test_classes(config: RunConfig, records) -> set[int]:
    if config.test_split:
        return load_split(config.test_split)
    return {r.class_id for r in records}


def train(config: RunConfig) -> TrainResult:
    """Adam over episode losses; fully deterministic in config.seed."""
    records, _ = read_store(config.store)
    by_class = group_by_class(records)
    classes = _train_classes(config, records)

    params = init_params(config.model)
    trx_params = (
        init_trx_params(config.model.C, config.trx_omegas, config.model.seed)
        if config.metric == "trx"
        else None
    )
    trainable = dict(params)
    if trx_params:
        trainable.update(trx_params)
    state = AdamState()

    pool: list[Episode] = []
    if config.fixed_episodes:
        pool = [
            sample_episode(
                by_class, classes, config.way, config.shot, config.queries_per_class,
                rng.stream(config.seed, rng.TRAIN_EPISODE, i),
            )
            for i in range(config.fixed_episodes)
        ]

    history = []
    window: list[float] = []
    for step in range(config.train_episodes):
        if pool:
            episode = pool[step % len(pool)]
        else:
            episode = sample_episode(
                by_class, classes, config.way, config.shot, config.queries_per_class,
                rng.stream(config.seed, rng.TRAIN_EPISODE, step),
            )
        for p in trainable.values():
            p.zero_grad()
        loss, preds = episode_loss(episode, params, config, trx_params)
        loss_val = float(loss)
        if not np.isfinite(loss_val):
            raise NumericError(
                f"non-finite loss {loss_val} at step {step} "
                f"(episode stream key = ({config.seed}, {rng.TRAIN_EPISODE}, {step}))"
            )
        loss.backward()
        if config.lr > 0:  # lr=0 means "carry the init through unchanged"
            grads = {n: p.grad for n, p in trainable.items() if p.grad is not None}
            adam_step(
                trainable, grads, state,
                lr=config.lr, beta1=config.beta1, beta2=config.beta2, eps=config.adam_eps,
            )
        acc = float(np.mean([p == t for p, (_, t) in zip(preds, episode.query)]))
        window.append(acc)
        if len(window) > 50:
            window.pop(0)
        entry = {
            "step": step,
            "loss": loss_val,
            "episode_acc": acc,
            "running_acc": float(np.mean(window)),
        }
        history.append(entry)
        if step % 100 == 0:
            log.info(
                "step %d loss %.4f running_acc %.3f", step, loss_val, entry["running_acc"]
            )

    save_checkpoint(
        config.checkpoint, config.model, params,
        metric_kind=config.metric, metric_params=trx_params,
    )
    if config.out_dir:
        from .reporting import write_train_history

        write_train_history(history, config.out_dir)
    return TrainResult(checkpoint=config.checkpoint, history=history)


@dataclass
class EvalReport:
    way: int
    shot: int
    episodes: int
    metric: str
    fusion_mode: str
    mean_accuracy: float
    ci95: float
    confusion: np.ndarray
    seed: int
    wall_time: float

    def results_dict(self) -> dict:
        """Deterministic payload (timing deliberately excluded)."""
        return {
            "way": self.way,
            "shot": self.shot,
            "episodes": self.episodes,
            "metric": self.metric,
            "fusion_mode": self.fusion_mode,
            "mean_accuracy": self.mean_accuracy,
            "ci95": self.ci95,
            "confusion": self.confusion.tolist(),
            "seed": self.seed,
        }

    def report_bytes(self) -> bytes:
        import json

        return json.dumps(self.results_dict(), sort_keys=True).encode()


def evaluate(config: RunConfig, checkpoint_path: str | None = None) -> EvalReport:
    """Classify queries over eval_episodes tasks with frozen parameters."""
    start = time.perf_counter()
    ckpt = load_checkpoint(checkpoint_path or config.checkpoint)
    if with_mode(ckpt.config, seed=0) != with_mode(config.model, seed=0):
        raise CheckpointMismatchError(
            f"checkpoint config {ckpt.config} does not match run config {config.model}"
        )
    if ckpt.metric_kind and ckpt.metric_kind != config.metric:
        raise CheckpointMismatchError(
            f"checkpoint was trained for metric '{ckpt.metric_kind}', run wants "
            f"'{config.metric}'"
        )
    records, _ = read_store(config.store)
    classes = _test_classes(config, records)

    kw = _metric_kwargs(config, ckpt.metric_params, training=False)
    with no_grad():
        feats = {
            r.video_id: featurize(r, ckpt.params, ckpt.config).data
            for r in records
            if r.class_id in classes
        }

    def classify(episode: Episode) -> list[int]:
        support = [[feats[r.video_id] for r in slot] for slot in episode.support]
        preds = []
        with no_grad():
            for record, _ in episode.query:
                d = episode_distances(
                    feats[record.video_id], support, config.metric, **kw
                )
                preds.append(int(np.argmin(d.data)))
        return preds

    result = run_protocol(
        records, classes, classify, config.way, config.shot,
        queries_per_class=config.queries_per_class,
        episodes=config.eval_episodes, seed=config.seed,
    )
    report = EvalReport(
        way=config.way,
        shot=config.shot,
        episodes=config.eval_episodes,
        metric=config.metric,
        fusion_mode=ckpt.config.fusion_mode,
        mean_accuracy=result.mean_accuracy,
        ci95=result.ci95,
        confusion=result.confusion,
        seed=config.seed,
        wall_time=time.perf_counter() - start,
    )
    if config.out_dir:
        from .reporting import write_eval_report

        write_eval_report(report, config.out_dir)
    return report


def _apply_axis(config: RunConfig, axis: str, value) -> RunConfig:
    if axis == "fusion_mode":
        return replace(config, model=with_mode(config.model, fusion_mode=value))
    if axis == "L":
        return replace(config, model=with_mode(config.model, L=int(value)))
    if axis == "T":
        return replace(config, model=with_mode(config.model, T=int(value)))
    if axis == "N":
        return replace(config, way=int(value))
    if axis == "metric":
        return replace(config, metric=value)
    if axis == "text_temporal":
        return replace(config, model=with_mode(config.model, text_temporal=bool(value)))
    raise ConfigError(f"sweep axis '{axis}' not one of {SWEEP_AXES}")


def gradient_suite(
    draws: int = 50,
    seed: int = 0,
    coords_per_tensor: int = 4,
    h: float = 1e-5,
) -> list[dict]:
    """Finite-difference verification of the whole trainable pipeline.

    Each draw builds a small random config and a 2-way episode loss
    (forward -> support fusion -> metric -> cross-entropy), cycling
    through every fusion mode and metric, and compares analytic
    gradients of every trainable tensor against central differences at
    sampled coordinates.
    """
    from .model import FUSION_MODES

    metrics_cycle = ("otam", "bimhm", "trx", "proto")
    results = []
    for i in range(draws):
        gen = rng.stream(seed, rng.GRADCHECK, i)
        mode = FUSION_MODES[i % len(FUSION_MODES)]
        kind = metrics_cycle[(i // len(FUSION_MODES)) % len(metrics_cycle)]
        t = int(gen.integers(3, 5))
        heads = int(gen.choice([1, 2]))
        mconf = ModelConfig(
            T=t, S=2, C=8, L=1, heads=heads, ffn_mult=2,
            fusion_mode=mode, seed=int(gen.integers(0, 2**31)),
        )
        params = init_params(mconf)
        trx_params = (
            init_trx_params(mconf.C, (2, 3), seed=int(gen.integers(0, 2**31)))
            if kind == "trx"
            else None
        )
        trainable = dict(params)
        if trx_params:
            trainable.update(trx_params)

        way = 2
        support = [gen.normal(size=(t, 2, 8)) for _ in range(way)]
        support_text = [gen.normal(size=(t, 8)) for _ in range(way)]
        query = gen.normal(size=(t, 2, 8))
        query_text = gen.normal(size=(t, 8))
        kw: dict = {"otam_lambda": 0.1, "bimhm_lambda": 0.1,
                    "trx_params": trx_params, "trx_omegas": (2, 3)}

        def objective():
            feats = [
                [forward(v, tx, params, mconf)]
                for v, tx in zip(support, support_text)
            ]
            d = episode_distances(
                forward(query, query_text, params, mconf), feats, kind, **kw
            )
            return -log_softmax(-d, axis=-1).narrow(0, 0, 1).sum()

        err = bulk_grad_check(
            objective, trainable, h=h, coords_per_tensor=coords_per_tensor, gen=gen
        )
        results.append(
            {"draw": i, "fusion_mode": mode, "metric": kind, "max_rel_error": err}
        )
        log.debug("gradient draw %d: %s/%s -> %.3g", i, mode, kind, err)
    return results


@dataclass
class SweepResult:
    axis: str
    rows: list[dict]


def sweep(config: RunConfig, axis: str, values: Sequence) -> SweepResult:
    """Train and evaluate once per axis value with a shared base seed."""
    if axis not in SWEEP_AXES:
        raise ConfigError(f"sweep axis '{axis}' not one of {SWEEP_AXES}")
    if not values:
        raise ConfigError("sweep needs at least one value")
    rows = []
    for value in values:
        cell = _apply_axis(config, axis, value)
        cell = replace(
            cell,
            checkpoint=str(Path(config.checkpoint).with_suffix(f".{axis}-{value}.capc")),
            out_dir=None,
        )
        log.info("sweep %s=%s: training", axis, value)
        train(cell)
        report = evaluate(cell)
        rows.append(
            {
                "axis": axis,
                "value": value,
                "mean_accuracy": report.mean_accuracy,
                "ci95": report.ci95,
                "metric": cell.metric,
                "fusion_mode": cell.model.fusion_mode,
                "way": cell.way,
            }
        )
    result = SweepResult(axis=axis, rows=rows)
    if config.out_dir:
        from .reporting import write_sweep_report

        write_sweep_report(result, config.out_dir)
    return result
