"""Incremental learner: joint pretraining, prototypes, cosine inference.

The classifier is a bias-free linear head over encoder embeddings. Joint
pretraining blends the labeled base set with the cluster-derived
pseudo-labeled set, down-weighting pseudo samples by a reconciliation
weight. Incremental sessions never retrain the head: each new class's row
is overwritten by the mean embedding of its few shots, and inference is a
cosine softmax restricted to the classes seen so far.

Class-axis reductions (softmax denominators, and the embedding gradient
through the head) use exactly-rounded summation, so relabeling classes
permutes head rows without perturbing a single bit of the shared state —
the learner is exactly equivariant to pseudo-label permutations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .clustering import PseudoLabeledSet
from .datastream import Example, SessionStream, features_matrix, labels_vector
from .encoder import (
    EncoderParams,
    backward,
    forward_with_cache,
    init_optimizer,
    init_params,
    normalize_rows,
    sgd_step,
)

ROW_UNINSTALLED = "uninstalled"
ROW_TRAINED = "trained"
ROW_PROTOTYPE = "prototype"


# ---------------------------------------------------------------------------
# Exactly-rounded reductions over the class axis. math.fsum returns the
# correctly rounded sum of its inputs, which is invariant to summand order —
# the property that makes label permutations bitwise-neutral.

def exact_row_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    expl = np.exp(shifted)
    denom = np.array([math.fsum(row) for row in expl])
    return expl / denom[:, None]


def exact_row_log_denominators(shifted_exp: np.ndarray) -> np.ndarray:
    return np.array([math.fsum(row) for row in shifted_exp])


def exact_matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """a @ b with each output cell summed by fsum (order-independent)."""
    out = np.empty((a.shape[0], b.shape[1]))
    bt = np.ascontiguousarray(b.T)
    for i in range(a.shape[0]):
        row = a[i]
        for j in range(bt.shape[0]):
            out[i, j] = math.fsum(row * bt[j])
    return out


# ---------------------------------------------------------------------------
# Classifier head.

@dataclass(frozen=True)
class ClassifierHead:
    """One row per class id; rows are unit-normalized lazily at scoring time.

    Row sources: 'trained' (touched by pretraining), 'prototype' (overwritten
    with a class-mean embedding), 'uninstalled' (never valid to score).
    """

    weights: np.ndarray  # (total_classes, embedding_dim)
    sources: tuple[str, ...]

    def __post_init__(self):
        if self.weights.ndim != 2 or len(self.sources) != self.weights.shape[0]:
            raise ValueError("one source tag per head row required")
        bad = set(self.sources) - {ROW_UNINSTALLED, ROW_TRAINED, ROW_PROTOTYPE}
        if bad:
            raise ValueError(f"unknown row sources {sorted(bad)}")

    @property
    def class_count(self) -> int:
        return self.weights.shape[0]

    def installed(self, class_id: int) -> bool:
        return self.sources[class_id] != ROW_UNINSTALLED

    def with_sources(self, sources: Sequence[str]) -> "ClassifierHead":
        return ClassifierHead(weights=self.weights, sources=tuple(sources))


def init_head(total_classes: int, embedding_dim: int) -> ClassifierHead:
    """All-zero rows, all uninstalled: the blank slate joint_pretrain expects."""
    return ClassifierHead(
        weights=np.zeros((total_classes, embedding_dim)),
        sources=(ROW_UNINSTALLED,) * total_classes,
    )


@dataclass(frozen=True)
class Prototype:
    class_id: int
    vector: np.ndarray
    shot_count: int


# ---------------------------------------------------------------------------
# Weighted cross-entropy.

def weighted_cross_entropy(
    logits: np.ndarray, targets: Sequence[int], sample_weights: Sequence[float]
) -> tuple[float, np.ndarray]:
    """Per-sample-weighted softmax cross-entropy, averaged over the batch.

    loss = sum_s w_s * (-log softmax(logits_s)[target_s]) / batch_size.
    Returns (loss, gradient with respect to the logits). The log-softmax is
    max-shifted for stability and its denominator is exactly rounded.
    """
    z = np.asarray(logits, dtype=np.float64)
    t = np.asarray(targets, dtype=np.int64)
    w = np.asarray(sample_weights, dtype=np.float64)
    if z.ndim != 2 or t.shape != (z.shape[0],) or w.shape != (z.shape[0],):
        raise ValueError("need one target and one weight per logit row")
    if t.size and (t.min() < 0 or t.max() >= z.shape[1]):
        raise ValueError(f"target id outside installed range [0, {z.shape[1]})")
    batch = z.shape[0]
    shifted = z - z.max(axis=1, keepdims=True)
    expl = np.exp(shifted)
    denom = exact_row_log_denominators(expl)
    rows = np.arange(batch)
    per_sample = np.log(denom) - shifted[rows, t]
    loss = float(np.dot(w, per_sample) / batch)
    grad = expl / denom[:, None]
    grad[rows, t] -= 1.0
    grad *= (w / batch)[:, None]
    return loss, grad


# ---------------------------------------------------------------------------
# Joint pretraining.

@dataclass(frozen=True)
class PretrainConfig:
    """Knobs for the base + pseudo-label pretraining stage."""

    total_classes: int
    encoder_dims: tuple[int, ...]
    pseudo_weight: float = 0.5  # loss multiplier on pseudo-labeled samples
    epochs: int = 30
    batch_size: int = 32
    learning_rate: float = 0.1
    momentum: float = 0.9
    activation: str = "relu"
    seed: int = 0

    def __post_init__(self):
        if self.pseudo_weight < 0:
            raise ValueError("pseudo_weight must be >= 0")
        if self.total_classes < 1:
            raise ValueError("total_classes must be >= 1")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")


def joint_pretrain(
    base: Sequence[Example],
    pseudo: PseudoLabeledSet | None,
    config: PretrainConfig,
    initial_encoder: EncoderParams | None = None,
    batch_plan: Sequence[Sequence[int]] | None = None,
) -> tuple[EncoderParams, ClassifierHead]:
    """Train encoder and zero-initialized head on base plus pseudo data.

    Base samples carry weight 1, pseudo-labeled samples carry the
    reconciliation weight. Batches are seeded shuffles over the blended set
    unless an explicit batch_plan (a list of index batches into
    base-then-pseudo order) overrides the schedule — useful for matched-
    batching experiments. Deterministic per (inputs, config).
    """
    base = list(base)
    pseudo_examples = list(pseudo.examples) if pseudo is not None else []
    base_labels = {ex.label for ex in base}
    pseudo_labels = {ex.label for ex in pseudo_examples}
    collision = base_labels & pseudo_labels
    if collision:
        raise ValueError(f"base and pseudo label ranges collide: {sorted(collision)}")
    all_examples = base + pseudo_examples
    if not all_examples:
        raise ValueError("joint_pretrain needs at least one example")
    max_label = max(ex.label for ex in all_examples)
    if max_label >= config.total_classes:
        raise ValueError(f"label {max_label} outside head range [0, {config.total_classes})")

    inputs = features_matrix(all_examples)
    targets = labels_vector(all_examples)
    weights = np.array(
        [1.0] * len(base) + [config.pseudo_weight] * len(pseudo_examples)
    )
    params = initial_encoder or init_params(
        config.encoder_dims, seed=config.seed, activation=config.activation
    )
    if params.input_dim != inputs.shape[1]:
        raise ValueError("encoder input dim does not match examples")
    head_w = np.zeros((config.total_classes, params.embedding_dim))
    opt_enc = init_optimizer(params, config.learning_rate, config.momentum)
    head_buf = np.zeros_like(head_w)

    n = len(all_examples)
    rng = np.random.default_rng(config.seed)
    if batch_plan is not None:
        schedule = [np.asarray(batch, dtype=np.int64) for batch in batch_plan]
    else:
        schedule = []
        for _ in range(config.epochs):
            order = rng.permutation(n)
            schedule.extend(
                order[s : s + config.batch_size] for s in range(0, n, config.batch_size)
            )

    for batch_idx in schedule:
        if batch_idx.size == 0:
            continue
        cache = forward_with_cache(params, inputs[batch_idx])
        logits = cache.output @ head_w.T  # bias-free linear head
        _, grad_logits = weighted_cross_entropy(
            logits, targets[batch_idx], weights[batch_idx]
        )
        grad_head = grad_logits.T @ cache.output
        grad_emb = exact_matmul(grad_logits, head_w)
        grads, _ = backward(params, cache, grad_emb)
        params, opt_enc = sgd_step(params, grads, opt_enc)
        head_buf = config.momentum * head_buf + grad_head
        head_w = head_w - config.learning_rate * head_buf

    sources = tuple(
        ROW_TRAINED if c in base_labels or c in pseudo_labels else ROW_UNINSTALLED
        for c in range(config.total_classes)
    )
    return params, ClassifierHead(weights=head_w, sources=sources)


# ---------------------------------------------------------------------------
# Prototypes and inference.

def compute_prototype(encoder: EncoderParams, examples: Sequence[Example]) -> Prototype:
    """Mean of the raw (non-normalized) embeddings of one class's examples."""
    if not examples:
        raise ValueError("cannot build a prototype from zero examples")
    ids = {ex.label for ex in examples}
    if len(ids) != 1 or None in ids:
        raise ValueError(f"prototype needs a single labeled class, got ids {sorted(map(str, ids))}")
    emb = forward_with_cache(encoder, features_matrix(examples)).output
    return Prototype(
        class_id=examples[0].label, vector=emb.mean(axis=0), shot_count=len(examples)
    )


def replace_head_rows(head: ClassifierHead, prototypes: Sequence[Prototype]) -> ClassifierHead:
    """Overwrite rows with class-mean embeddings; last write wins."""
    weights = head.weights.copy()
    sources = list(head.sources)
    for proto in prototypes:
        if not 0 <= proto.class_id < head.class_count:
            raise ValueError(f"prototype class {proto.class_id} outside head range")
        weights[proto.class_id] = proto.vector
        sources[proto.class_id] = ROW_PROTOTYPE
    return ClassifierHead(weights=weights, sources=tuple(sources))


def infer_batch(
    encoder: EncoderParams,
    head: ClassifierHead,
    inputs: np.ndarray,
    seen_class_count: int,
) -> np.ndarray:
    """Cosine-softmax probabilities over the first seen_class_count classes.

    Query embeddings and head rows are unit-normalized (zero vectors fall
    back to the all-zeros direction); scoring an uninstalled row is a
    contract violation.
    """
    if not 1 <= seen_class_count <= head.class_count:
        raise ValueError(f"seen_class_count must lie in [1, {head.class_count}]")
    missing = [c for c in range(seen_class_count) if not head.installed(c)]
    if missing:
        raise ValueError(f"uninstalled head rows in scored range: {missing}")
    emb = forward_with_cache(encoder, np.asarray(inputs, dtype=np.float64)).output
    z = normalize_rows(emb)
    rows = normalize_rows(head.weights[:seen_class_count])
    sims = z @ rows.T
    return exact_row_softmax(sims)


def infer(
    encoder: EncoderParams, head: ClassifierHead, x: np.ndarray, seen_class_count: int
) -> np.ndarray:
    """Probability vector for one input; argmax ties go to the lowest id."""
    return infer_batch(encoder, head, np.asarray(x)[None, :], seen_class_count)[0]


def predict_batch(
    encoder: EncoderParams,
    head: ClassifierHead,
    inputs: np.ndarray,
    seen_class_count: int,
) -> tuple[np.ndarray, np.ndarray]:
    probs = infer_batch(encoder, head, inputs, seen_class_count)
    return probs.argmax(axis=1), probs.max(axis=1)


# ---------------------------------------------------------------------------
# The session loop.

@dataclass(frozen=True)
class IncrementalConfig:
    """Session-loop switches; defaults follow the prototype-replacement path."""

    replace_base_rows: bool = True  # swap trained base rows for M-shot prototypes
    freeze_encoder: bool = True
    finetune_learning_rate: float = 5e-3
    finetune_momentum: float = 0.9
    finetune_epochs: int = 1


@dataclass(frozen=True)
class IncrementalOutcome:
    accuracies: tuple[float, ...]
    encoder: EncoderParams
    head: ClassifierHead
    prediction_dumps: tuple[str, ...]  # per session: uid,true,predicted,max_prob


def _evaluate(
    encoder: EncoderParams,
    head: ClassifierHead,
    test: Sequence[Example],
    seen: int,
) -> tuple[float, str]:
    ordered = sorted(test, key=lambda ex: (ex.label, ex.uid))
    preds, confidence = predict_batch(encoder, head, features_matrix(ordered), seen)
    truth = labels_vector(ordered)
    lines = ["uid,true_label,predicted_label,max_probability"]
    for ex, p, c in zip(ordered, preds, confidence):
        lines.append(f"{ex.uid},{ex.label},{int(p)},{repr(float(c))}")
    accuracy = float((preds == truth).mean())
    return accuracy, "\n".join(lines) + "\n"


def _finetune_encoder(
    encoder: EncoderParams,
    head: ClassifierHead,
    session_data: Sequence[Example],
    seen: int,
    config: IncrementalConfig,
) -> EncoderParams:
    # Optional switch: brief supervised adaptation on the session's shots at
    # the low incremental learning rate, head frozen.
    inputs = features_matrix(session_data)
    targets = labels_vector(session_data)
    opt = init_optimizer(encoder, config.finetune_learning_rate, config.finetune_momentum)
    weights = np.ones(len(session_data))
    for _ in range(config.finetune_epochs):
        cache = forward_with_cache(encoder, inputs)
        logits = cache.output @ head.weights[:seen].T
        _, grad_logits = weighted_cross_entropy(logits, targets, weights)
        grad_emb = exact_matmul(grad_logits, head.weights[:seen])
        grads, _ = backward(encoder, cache, grad_emb)
        encoder, opt = sgd_step(encoder, grads, opt)
    return encoder


def run_incremental(
    stream: SessionStream,
    encoder: EncoderParams,
    head: ClassifierHead,
    config: IncrementalConfig = IncrementalConfig(),
) -> IncrementalOutcome:
    """Play the session loop and score every session's cumulative test set.

    Pretrained rows for not-yet-seen classes are uninstalled up front (their
    pseudo-class semantics are never scored); each session installs its own
    prototype rows. The encoder is frozen unless the fine-tune switch is on.
    """
    p = stream.protocol
    if head.class_count != p.total_classes:
        raise ValueError(
            f"head has {head.class_count} rows, stream needs {p.total_classes}"
        )
    if encoder.input_dim != stream.feature_dim:
        raise ValueError("encoder input dim does not match stream features")

    # Future-class rows keep their values but lose scoring rights.
    sources = [
        src if c < p.base_classes else ROW_UNINSTALLED
        for c, src in enumerate(head.sources)
    ]
    head = head.with_sources(sources)

    accuracies: list[float] = []
    dumps: list[str] = []

    if config.replace_base_rows:
        by_class: dict[int, list[Example]] = {}
        for ex in stream.base:
            by_class.setdefault(ex.label, []).append(ex)
        protos = [compute_prototype(encoder, by_class[c]) for c in sorted(by_class)]
        head = replace_head_rows(head, protos)
    acc, dump = _evaluate(encoder, head, stream.tests[0], p.seen_classes(0))
    accuracies.append(acc)
    dumps.append(dump)

    for s in range(1, p.sessions + 1):
        session_data = stream.increments[s - 1]
        by_class = {}
        for ex in session_data:
            by_class.setdefault(ex.label, []).append(ex)
        protos = [compute_prototype(encoder, by_class[c]) for c in sorted(by_class)]
        head = replace_head_rows(head, protos)
        if not config.freeze_encoder:
            encoder = _finetune_encoder(
                encoder, head, session_data, p.seen_classes(s), config
            )
            protos = [compute_prototype(encoder, by_class[c]) for c in sorted(by_class)]
            head = replace_head_rows(head, protos)
        acc, dump = _evaluate(encoder, head, stream.tests[s], p.seen_classes(s))
        accuracies.append(acc)
        dumps.append(dump)

    return IncrementalOutcome(
        accuracies=tuple(accuracies),
        encoder=encoder,
        head=head,
        prediction_dumps=tuple(dumps),
    )
