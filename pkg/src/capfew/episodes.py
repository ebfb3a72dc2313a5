"""N-way K-shot episode sampling and the 10k-episode evaluation protocol."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from . import rng
from .errors import ConfigError, SamplingError
from .store import FeatureRecord


@dataclass
class Episode:
    """One task: slot-indexed support videos plus labeled queries."""

    way: int
    shot: int
    support: list[list[FeatureRecord]]  # [slot][k]
    query: list[tuple[FeatureRecord, int]]  # (record, true slot)

    def validate(self) -> None:
        if len(self.support) != self.way or any(len(s) != self.shot for s in self.support):
            raise SamplingError("support set is not way x shot")
        support_ids = {r.video_id for slot in self.support for r in slot}
        for record, slot in self.query:
            if not 0 <= slot < self.way:
                raise SamplingError(f"query slot {slot} outside [0, {self.way})")
            if record.video_id in support_ids:
                raise SamplingError(
                    f"video '{record.video_id}' appears in both support and query"
                )


@dataclass
class SplitSpec:
    """Disjoint train/test class id sets."""

    train_classes: set[int]
    test_classes: set[int]

    def __post_init__(self):
        overlap = self.train_classes & self.test_classes
        if overlap:
            raise ConfigError(f"train/test class sets overlap: {sorted(overlap)}")


def load_split(path) -> set[int]:
    """One class id per line."""
    ids = set()
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if line:
            ids.add(int(line))
    return ids


def save_split(class_ids: Iterable[int], path) -> None:
    Path(path).write_text("".join(f"{c}\n" for c in sorted(class_ids)))


def group_by_class(records: Sequence[FeatureRecord]) -> dict[int, list[FeatureRecord]]:
    by_class: dict[int, list[FeatureRecord]] = {}
    for r in records:
        by_class.setdefault(r.class_id, []).append(r)
    return by_class


def sample_episode(
    by_class: Mapping[int, Sequence[FeatureRecord]],
    classes: Iterable[int],
    way: int,
    shot: int,
    queries_per_class: int,
    gen: np.random.Generator,
) -> Episode:
    """Draw way classes then shot+queries_per_class videos per class,
    all without replacement; slots follow draw order."""
    pool = sorted(set(classes) & set(by_class))
    if len(pool) < way:
        raise SamplingError(
            f"need {way} classes but only {len(pool)} available in the split"
        )
    chosen = [pool[i] for i in gen.choice(len(pool), size=way, replace=False)]
    need = shot + queries_per_class
    support, query = [], []
    for slot, cls in enumerate(chosen):
        videos = by_class[cls]
        if len(videos) < need:
            raise SamplingError(
                f"class {cls} has {len(videos)} videos but the episode needs {need} "
                f"({shot} support + {queries_per_class} query)"
            )
        picks = gen.choice(len(videos), size=need, replace=False)
        support.append([videos[i] for i in picks[:shot]])
        query.extend((videos[i], slot) for i in picks[shot:])
    episode = Episode(way=way, shot=shot, support=support, query=query)
    episode.validate()
    return episode


@dataclass
class ProtocolResult:
    mean_accuracy: float
    ci95: float
    per_episode: np.ndarray = field(repr=False)
    confusion: np.ndarray = field(repr=False)  # [true slot, predicted slot]


def run_protocol(
    records: Sequence[FeatureRecord],
    classes: Iterable[int],
    classify_episode: Callable[[Episode], Sequence[int]],
    way: int,
    shot: int,
    queries_per_class: int = 1,
    episodes: int = 10000,
    seed: int = 0,
) -> ProtocolResult:
    """Sample `episodes` tasks and report mean accuracy with its 95%
    confidence half-width 1.96*sigma/sqrt(episodes).

    Episode i draws from an independent stream keyed (seed, i), so the
    result is identical regardless of evaluation order.
    """
    by_class = group_by_class(records)
    per_episode = np.empty(episodes)
    confusion = np.zeros((way, way), dtype=np.int64)
    for i in range(episodes):
        gen = rng.stream(seed, rng.EVAL_EPISODE, i)
        episode = sample_episode(by_class, classes, way, shot, queries_per_class, gen)
        preds = classify_episode(episode)
        truth = [slot for _, slot in episode.query]
        if len(preds) != len(truth):
            raise ConfigError(
                f"classifier returned {len(preds)} predictions for {len(truth)} queries"
            )
        hits = 0
        for p, t in zip(preds, truth):
            confusion[t, p] += 1
            hits += int(p == t)
        per_episode[i] = hits / len(truth)
    mean = float(per_episode.mean())
    sigma = float(per_episode.std(ddof=1)) if episodes > 1 else 0.0
    ci95 = 1.96 * sigma / np.sqrt(episodes)
    return ProtocolResult(mean, float(ci95), per_episode, confusion)
