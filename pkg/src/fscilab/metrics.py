"""Run-level accuracy metrics and embedding-geometry probes.

A run is summarized by its per-session top-1 accuracies plus the derived
first/last/average accuracy and the first-to-last performance drop. The
geometry probe measures mean intra-class and inter-class pairwise embedding
distances and combines them with a clustering accuracy into the expected
offset of a pseudo-labeled sample from its true class region.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class RunMetrics:
    """Per-session accuracies and the quantities derived from them."""

    accuracies: tuple[float, ...]
    first: float
    last: float
    average: float
    drop: float  # first - last

    def __post_init__(self):
        if not self.accuracies:
            raise ValueError("RunMetrics needs at least one session accuracy")


def session_accuracy(predictions: Sequence[int], truth: Sequence[int]) -> float:
    """Fraction of exact top-1 matches."""
    preds = list(predictions)
    true = list(truth)
    if len(preds) != len(true):
        raise ValueError(f"prediction/truth lengths differ: {len(preds)} vs {len(true)}")
    if not preds:
        raise ValueError("cannot score an empty prediction list")
    return sum(1 for p, t in zip(preds, true) if p == t) / len(preds)


def summarize(accuracies: Sequence[float]) -> RunMetrics:
    """Derive first/last/average accuracy and the performance drop."""
    accs = tuple(float(a) for a in accuracies)
    if not accs:
        raise ValueError("cannot summarize an empty accuracy list")
    return RunMetrics(
        accuracies=accs,
        first=accs[0],
        last=accs[-1],
        average=math.fsum(accs) / len(accs),
        drop=accs[0] - accs[-1],
    )


def dump_metrics(metrics: RunMetrics) -> str:
    """Delimited summary: one session row per line plus derived quantities."""
    lines = ["session,accuracy"]
    for s, a in enumerate(metrics.accuracies):
        lines.append(f"{s},{repr(float(a))}")
    lines.append(f"first,{repr(metrics.first)}")
    lines.append(f"last,{repr(metrics.last)}")
    lines.append(f"average,{repr(metrics.average)}")
    lines.append(f"drop,{repr(metrics.drop)}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Embedding-geometry probes.

def _pair_distance(a: np.ndarray, b: np.ndarray) -> float:
    # exactly rounded sum of squares, so independent re-enumerations of the
    # same pairs produce bit-identical distances
    diff = a - b
    return math.sqrt(math.fsum(diff * diff))


def class_distance_probe(
    embeddings: np.ndarray, labels: Sequence[int]
) -> tuple[float, float]:
    """Mean pairwise Euclidean distance within and across classes.

    Returns (intra, inter): intra pools every same-class pair over all
    classes; inter pools every cross-class pair. This is the O(n^2)
    definition evaluated directly.
    """
    x = np.asarray(embeddings, dtype=np.float64)
    y = list(labels)
    if x.ndim != 2 or x.shape[0] != len(y):
        raise ValueError("one label per embedding row required")
    if len(set(y)) < 2:
        raise ValueError("distance probe needs >= 2 classes (inter-class undefined)")
    intra: list[float] = []
    inter: list[float] = []
    n = len(y)
    for i in range(n):
        for j in range(i + 1, n):
            d = _pair_distance(x[i], x[j])
            (intra if y[i] == y[j] else inter).append(d)
    if not intra:
        raise ValueError("distance probe needs a class with >= 2 members")
    return math.fsum(intra) / len(intra), math.fsum(inter) / len(inter)


def offset_distance(accuracy: float, intra: float, inter: float) -> float:
    """Expected distance of a pseudo-labeled sample from its assigned class
    region: correct assignments pay the intra-class distance, mistakes pay
    the inter-class one."""
    if not 0.0 <= accuracy <= 1.0:
        raise ValueError(f"accuracy must lie in [0, 1], got {accuracy}")
    return accuracy * intra + (1.0 - accuracy) * inter


@dataclass(frozen=True)
class TheoryProbe:
    """Geometry summary of a pseudo-labeled pool."""

    intra_class_distance: float
    inter_class_distance: float
    clustering_accuracy: float
    offset: float
    inverted_geometry: bool  # set when intra > inter (probe expects intra <= inter)


def theory_probe(
    embeddings: np.ndarray, labels: Sequence[int], clustering_accuracy: float
) -> TheoryProbe:
    intra, inter = class_distance_probe(embeddings, labels)
    return TheoryProbe(
        intra_class_distance=intra,
        inter_class_distance=inter,
        clustering_accuracy=clustering_accuracy,
        offset=offset_distance(clustering_accuracy, intra, inter),
        inverted_geometry=intra > inter,
    )
