"""Data protocol: synthetic generation, feature tables, and session splits.

A stream consists of a labeled base set, n few-shot increments of N classes
with K shots each, an unlabeled pool drawn from the incremental classes, and
cumulative per-session test sets. Streams are immutable after construction
and safe to share across runs.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

NORM_GUARD = 1e-12


class ProtocolInfeasibleError(ValueError):
    """Raised when the available data cannot satisfy the protocol quotas."""


class FeatureTableError(ValueError):
    """Raised on malformed delimited feature tables."""


@dataclass(frozen=True)
class Example:
    """One instance: feature vector, optional class id, unique index."""

    features: np.ndarray
    label: int | None
    uid: int

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float64)
        feats.setflags(write=False)
        object.__setattr__(self, "features", feats)


@dataclass(frozen=True)
class Protocol:
    """Session protocol: base_classes base classes with base_samples shots,
    then sessions increments of ways classes x shots examples, plus
    unlabeled_per_class unlabeled draws per incremental class."""

    base_classes: int
    base_samples: int
    ways: int
    shots: int
    sessions: int
    unlabeled_per_class: int = 0

    def __post_init__(self):
        if self.base_classes < 1:
            raise ValueError("protocol.base_classes must be >= 1")
        if not self.base_samples >= self.shots >= 1:
            raise ValueError("protocol requires base_samples >= shots >= 1")
        if self.ways < 1:
            raise ValueError("protocol.ways must be >= 1")
        if self.sessions < 0:
            raise ValueError("protocol.sessions must be >= 0")
        if self.unlabeled_per_class < 0:
            raise ValueError("protocol.unlabeled_per_class must be >= 0")

    @property
    def incremental_classes(self) -> int:
        return self.sessions * self.ways

    @property
    def total_classes(self) -> int:
        return self.base_classes + self.incremental_classes

    def session_label_range(self, session: int) -> range:
        """Contiguous label ids introduced by a session (session 0 = base)."""
        if session == 0:
            return range(0, self.base_classes)
        lo = self.base_classes + (session - 1) * self.ways
        return range(lo, lo + self.ways)

    def seen_classes(self, session: int) -> int:
        return self.base_classes + session * self.ways


@dataclass(frozen=True)
class SyntheticSpec:
    """Isotropic-Gaussian class mixture: seeded centers scaled by spread,
    points drawn around them with the given within-class stddev."""

    class_count: int
    feature_dim: int
    spread: float
    stddev: float
    samples_per_class: int
    seed: int

    def __post_init__(self):
        if self.class_count < 1 or self.feature_dim < 1:
            raise ValueError("class_count and feature_dim must be >= 1")
        if self.spread <= 0:
            raise ValueError("synthetic spread must be > 0")
        if self.stddev <= 0:
            raise ValueError("synthetic stddev must be > 0")
        if self.samples_per_class < 1:
            raise ValueError("samples_per_class must be >= 1")


@dataclass(frozen=True)
class SessionStream:
    """Immutable carved stream. The ground truth of the unlabeled pool is
    sealed: training code must never read it; scoring code obtains it via
    sealed_unlabeled_truth()."""

    protocol: Protocol
    split_seed: int
    base: tuple[Example, ...]
    increments: tuple[tuple[Example, ...], ...]
    unlabeled: tuple[Example, ...]
    tests: tuple[tuple[Example, ...], ...]
    _unlabeled_truth: Mapping[int, int] = field(repr=False)

    def __post_init__(self):
        self._check_invariants()

    def _check_invariants(self):
        p = self.protocol
        if len(self.increments) != p.sessions:
            raise ValueError("increment count does not match protocol")
        if len(self.tests) != p.sessions + 1:
            raise ValueError("need one test set per session including base")
        # Test sets are cumulative (each is a superset of the previous one),
        # so uid uniqueness is checked over train/pool plus the final test set.
        seen: set[int] = set()
        for ex in self._distinct_examples():
            if ex.uid in seen:
                raise ValueError(f"duplicate uid {ex.uid} in stream")
            seen.add(ex.uid)
        for s in range(len(self.tests) - 1):
            prev = {ex.uid for ex in self.tests[s]}
            cur = {ex.uid for ex in self.tests[s + 1]}
            if not prev <= cur:
                raise ValueError(f"test set {s + 1} dropped examples from test set {s}")
        for ex in self.base:
            if not 0 <= ex.label < p.base_classes:
                raise ValueError(f"base label {ex.label} outside [0, {p.base_classes})")
        for s, inc in enumerate(self.increments, start=1):
            rng = p.session_label_range(s)
            for ex in inc:
                if ex.label not in rng:
                    raise ValueError(f"session {s} label {ex.label} outside {rng}")
        for s, test in enumerate(self.tests):
            limit = p.seen_classes(s)
            for ex in test:
                if not 0 <= ex.label < limit:
                    raise ValueError(f"test {s} contains unseen class {ex.label}")
        unl_uids = {ex.uid for ex in self.unlabeled}
        for s, inc in enumerate(self.increments, start=1):
            overlap = unl_uids & {ex.uid for ex in inc}
            if overlap:
                raise ValueError(f"unlabeled pool overlaps session {s}: {sorted(overlap)}")
        if set(self._unlabeled_truth) != unl_uids:
            raise ValueError("sealed truth map does not cover the unlabeled pool")

    def _distinct_examples(self) -> Iterable[Example]:
        yield from self.base
        for inc in self.increments:
            yield from inc
        yield from self.unlabeled
        yield from self.tests[-1]

    @property
    def feature_dim(self) -> int:
        return int(self.base[0].features.shape[0])

    def sealed_unlabeled_truth(self) -> dict[int, int]:
        """Ground-truth labels of the unlabeled pool, keyed by uid.

        For scoring only (clustering accuracy, ARI, probes). Training code
        must not call this.
        """
        return dict(self._unlabeled_truth)


def generate_synthetic(spec: SyntheticSpec, protocol: Protocol) -> SessionStream:
    """Draw a Gaussian-mixture dataset and carve it into a stream.

    Identical (spec, protocol) pairs produce identical streams; the spec seed
    drives both the point draws and the split.
    """
    if spec.class_count < protocol.total_classes:
        raise ProtocolInfeasibleError(
            f"protocol needs {protocol.total_classes} classes, "
            f"synthetic spec provides {spec.class_count}"
        )
    _check_per_class_quota(spec.samples_per_class, protocol)
    rng = np.random.default_rng(spec.seed)
    centers = spec.spread * rng.standard_normal((spec.class_count, spec.feature_dim))
    examples = []
    uid = 0
    for cls in range(spec.class_count):
        points = centers[cls] + spec.stddev * rng.standard_normal(
            (spec.samples_per_class, spec.feature_dim)
        )
        for row in points:
            examples.append(Example(features=row, label=cls, uid=uid))
            uid += 1
    return split_protocol(examples, protocol, seed=spec.seed)


def _check_per_class_quota(samples_per_class: int, protocol: Protocol):
    base_need = protocol.base_samples + 1
    if samples_per_class < base_need:
        raise ProtocolInfeasibleError(
            f"base classes need >= {base_need} samples each "
            f"({protocol.base_samples} train + 1 test), got {samples_per_class}"
        )
    inc_need = protocol.shots + protocol.unlabeled_per_class + 1
    if protocol.sessions > 0 and samples_per_class < inc_need:
        raise ProtocolInfeasibleError(
            f"incremental classes need >= {inc_need} samples each "
            f"({protocol.shots} train + {protocol.unlabeled_per_class} unlabeled "
            f"+ 1 test), got {samples_per_class}"
        )


def split_protocol(
    examples: Sequence[Example], protocol: Protocol, seed: int
) -> SessionStream:
    """Carve labeled examples into the session structure.

    Classes are shuffled by the seed and remapped to contiguous stream ids:
    the first base_classes become the base, subsequent blocks of `ways`
    become sessions 1..n. Per incremental class the (seeded) order gives
    `shots` training examples, `unlabeled_per_class` pool draws, and the
    remainder to test; base classes give `base_samples` to training and the
    remainder to test.
    """
    by_class: dict[int, list[Example]] = {}
    for ex in examples:
        if ex.label is None:
            raise ValueError("split_protocol requires labeled examples")
        by_class.setdefault(ex.label, []).append(ex)
    if len(by_class) < protocol.total_classes:
        raise ProtocolInfeasibleError(
            f"protocol needs {protocol.total_classes} classes, data has {len(by_class)}"
        )

    rng = np.random.default_rng(seed)
    source_classes = sorted(by_class)
    order = [source_classes[i] for i in rng.permutation(len(source_classes))]
    order = order[: protocol.total_classes]

    def relabeled(ex: Example, stream_label: int | None) -> Example:
        return Example(features=ex.features, label=stream_label, uid=ex.uid)

    base: list[Example] = []
    increments: list[list[Example]] = [[] for _ in range(protocol.sessions)]
    unlabeled: list[Example] = []
    truth: dict[int, int] = {}
    test_pool: list[list[Example]] = [[] for _ in range(protocol.sessions + 1)]

    for stream_label, source in enumerate(order):
        members = sorted(by_class[source], key=lambda ex: ex.uid)
        members = [members[i] for i in rng.permutation(len(members))]
        if stream_label < protocol.base_classes:
            need = protocol.base_samples + 1
            if len(members) < need:
                raise ProtocolInfeasibleError(
                    f"class {source} has {len(members)} examples, base quota "
                    f"needs >= {need} ({protocol.base_samples} train + 1 test)"
                )
            base.extend(relabeled(ex, stream_label) for ex in members[: protocol.base_samples])
            test_pool[0].extend(
                relabeled(ex, stream_label) for ex in members[protocol.base_samples :]
            )
        else:
            session = 1 + (stream_label - protocol.base_classes) // protocol.ways
            k, u = protocol.shots, protocol.unlabeled_per_class
            need = k + u + 1
            if len(members) < need:
                raise ProtocolInfeasibleError(
                    f"class {source} has {len(members)} examples, incremental quota "
                    f"needs >= {need} ({k} train + {u} unlabeled + 1 test)"
                )
            increments[session - 1].extend(relabeled(ex, stream_label) for ex in members[:k])
            for ex in members[k : k + u]:
                unlabeled.append(relabeled(ex, None))
                truth[ex.uid] = stream_label
            test_pool[session].extend(relabeled(ex, stream_label) for ex in members[k + u :])

    # Test sets are cumulative: session s covers every class seen so far.
    tests: list[tuple[Example, ...]] = []
    acc: list[Example] = []
    for part in test_pool:
        acc = acc + part
        tests.append(tuple(acc))

    return SessionStream(
        protocol=protocol,
        split_seed=seed,
        base=tuple(base),
        increments=tuple(tuple(inc) for inc in increments),
        unlabeled=tuple(unlabeled),
        tests=tuple(tests),
        _unlabeled_truth=truth,
    )


def draw_unlabeled(stream: SessionStream) -> list[Example]:
    """The n*ways*unlabeled_per_class pool examples, labels stripped."""
    return list(stream.unlabeled)


def subsample_unlabeled(stream: SessionStream, per_class: int) -> list[Example]:
    """First per_class pool examples of each incremental class.

    Relies on the carve order guaranteed by split_protocol — the pool is laid
    out in contiguous blocks of unlabeled_per_class draws per class — so no
    ground-truth labels are consulted. Used by sweeps over the amount of
    unlabeled data, keeping every arm inside one shared stream.
    """
    u = stream.protocol.unlabeled_per_class
    if not 0 <= per_class <= u:
        raise ValueError(f"per_class must lie in [0, {u}], got {per_class}")
    out: list[Example] = []
    for block_start in range(0, len(stream.unlabeled), u):
        out.extend(stream.unlabeled[block_start : block_start + per_class])
    return out


# ---------------------------------------------------------------------------
# Delimited feature tables and the stream manifest.

def load_feature_table(path: str | os.PathLike) -> list[Example]:
    """Parse a comma-separated table: feature columns plus a final integer
    label column. Row order is preserved; uid is the 1-based row index."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    rows = [(i + 1, ln) for i, ln in enumerate(lines) if ln.strip()]
    if not rows:
        raise FeatureTableError(f"{path}: empty feature table")
    examples: list[Example] = []
    width = None
    for rownum, line in rows:
        cells = line.split(",")
        if width is None:
            width = len(cells)
            if width < 2:
                raise FeatureTableError(
                    f"{path}: row {rownum} has {width} column(s); "
                    "need at least one feature and a label"
                )
        elif len(cells) != width:
            raise FeatureTableError(
                f"{path}: row {rownum} has {len(cells)} columns, expected {width}"
            )
        try:
            feats = np.array([float(c) for c in cells[:-1]], dtype=np.float64)
        except ValueError as exc:
            raise FeatureTableError(f"{path}: row {rownum}: non-numeric cell ({exc})") from exc
        try:
            label = int(cells[-1])
        except ValueError as exc:
            raise FeatureTableError(
                f"{path}: row {rownum}: label column is not an integer ({exc})"
            ) from exc
        examples.append(Example(features=feats, label=label, uid=rownum))
    return examples


def format_feature_row(ex: Example, unlabeled_sentinel: int = -1) -> str:
    label = unlabeled_sentinel if ex.label is None else ex.label
    return ",".join([repr(float(v)) for v in ex.features] + [str(label)])


def dump_feature_table(examples: Iterable[Example]) -> str:
    """Inverse of load_feature_table (floats use shortest round-trip repr,
    so a write/read cycle is bit-exact). Unlabeled examples get label -1."""
    return "".join(format_feature_row(ex) + "\n" for ex in examples)


def dump_manifest(stream: SessionStream) -> str:
    """Plain-text sidecar listing the uids of every partition."""
    p = stream.protocol
    lines = [
        "# stream manifest v1",
        f"protocol,base_classes={p.base_classes},base_samples={p.base_samples},"
        f"ways={p.ways},shots={p.shots},sessions={p.sessions},"
        f"unlabeled_per_class={p.unlabeled_per_class}",
        f"split_seed,{stream.split_seed}",
    ]

    def part(name: str, exs: Sequence[Example]):
        lines.append("partition," + name + "," + ",".join(str(e.uid) for e in exs))

    part("base", stream.base)
    for s, inc in enumerate(stream.increments, start=1):
        part(f"session_{s}", inc)
    part("unlabeled", stream.unlabeled)
    for s, test in enumerate(stream.tests):
        part(f"test_{s}", test)
    return "\n".join(lines) + "\n"


def features_matrix(examples: Sequence[Example]) -> np.ndarray:
    """Stack features into a (n, dim) float64 matrix in the given order."""
    return np.stack([ex.features for ex in examples]).astype(np.float64)


def labels_vector(examples: Sequence[Example]) -> np.ndarray:
    return np.array([ex.label for ex in examples], dtype=np.int64)
