"""End-to-end orchestration: stream → representation → clusters → pretrain →
incremental sessions → metrics, with deterministic per-stage seeding and
atomic artifact emission.

Stage functions are pure and reusable (the ablation runner composes them to
share per-seed intermediates); run_pipeline adds artifact files: stream
manifest, loss trace, cluster assignment, encoder checkpoints, per-session
predictions, metrics table, and a JSON summary. A failed stage leaves a
FAILED marker naming the stage instead of a half-written result set.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass
from typing import Callable

from .clustering import (
    ClusterResult,
    PseudoLabeledSet,
    RepresentationResult,
    assign_pseudo_labels,
    clustering_accuracy,
    dump_assignment,
    dump_loss_trace,
    kmeans,
    train_representation,
)
from .config import ExperimentConfig, dump_config, stage_seed
from .datastream import (
    SessionStream,
    dump_manifest,
    features_matrix,
    generate_synthetic,
)
from .encoder import EncoderParams, dump_params, forward_with_cache, normalize_rows
from .incremental import (
    ClassifierHead,
    IncrementalOutcome,
    PretrainConfig,
    joint_pretrain,
    run_incremental,
)
from .metrics import RunMetrics, TheoryProbe, dump_metrics, summarize, theory_probe


class StageError(RuntimeError):
    """A pipeline stage failed; .stage names it."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


# ---------------------------------------------------------------------------
# Stage functions.

def build_stream(config: ExperimentConfig, seed: int) -> SessionStream:
    return generate_synthetic(config.synthetic.spec(stage_seed(seed, "stream")), config.protocol)


def learn_representation(
    config: ExperimentConfig, stream: SessionStream, seed: int, pool=None
) -> RepresentationResult | None:
    """Unsupervised embedding training on the pool; None when the pool is empty."""
    pool = list(stream.unlabeled) if pool is None else list(pool)
    if config.representation_include_base:
        pool = pool + list(stream.base)
    if not pool:
        return None
    dims = config.encoder.dims(stream.feature_dim)
    return train_representation(
        pool,
        dims,
        config.representation,
        seed=stage_seed(seed, "representation"),
        activation=config.encoder.activation,
    )


def cluster_pool(
    config: ExperimentConfig,
    representation: RepresentationResult,
    stream: SessionStream,
    seed: int,
    pool=None,
) -> tuple[ClusterResult, PseudoLabeledSet]:
    """k-means over unit-normalized pool embeddings; k = incremental classes."""
    pool = list(stream.unlabeled) if pool is None else list(pool)
    emb = normalize_rows(
        forward_with_cache(representation.params, features_matrix(pool)).output
    )
    clusters = kmeans(
        emb, k=config.protocol.incremental_classes, seed=stage_seed(seed, "clustering")
    )
    pseudo = assign_pseudo_labels(
        clusters,
        label_base=config.protocol.base_classes,
        pool=pool,
        expected_clusters=config.protocol.incremental_classes,
    )
    return clusters, pseudo


def pretrain_model(
    config: ExperimentConfig,
    stream: SessionStream,
    pseudo: PseudoLabeledSet | None,
    seed: int,
    initial_encoder: EncoderParams | None = None,
    pseudo_weight: float | None = None,
) -> tuple[EncoderParams, ClassifierHead]:
    settings = config.pretrain
    pre_cfg = PretrainConfig(
        total_classes=config.protocol.total_classes,
        encoder_dims=config.encoder.dims(stream.feature_dim),
        pseudo_weight=settings.pseudo_weight if pseudo_weight is None else pseudo_weight,
        epochs=settings.epochs,
        batch_size=settings.batch_size,
        learning_rate=settings.learning_rate,
        momentum=settings.momentum,
        activation=config.encoder.activation,
        seed=stage_seed(seed, "pretrain"),
    )
    return joint_pretrain(
        list(stream.base), pseudo, pre_cfg, initial_encoder=initial_encoder
    )


def run_sessions(
    config: ExperimentConfig,
    stream: SessionStream,
    encoder: EncoderParams,
    head: ClassifierHead,
) -> IncrementalOutcome:
    return run_incremental(stream, encoder, head, config.incremental)


@dataclass(frozen=True)
class SingleRunResult:
    seed: int
    stream: SessionStream
    representation: RepresentationResult | None
    clusters: ClusterResult | None
    pseudo: PseudoLabeledSet | None
    encoder: EncoderParams
    head: ClassifierHead
    outcome: IncrementalOutcome
    metrics: RunMetrics
    probe: TheoryProbe | None
    pool_agreement: float | None  # clustering accuracy vs sealed truth


def _execute(
    config: ExperimentConfig, seed: int, emit: Callable[[str, str], None]
) -> SingleRunResult:
    stage = "stream"
    try:
        stream = build_stream(config, seed)
        emit("stream_manifest.txt", dump_manifest(stream))

        stage = "representation"
        representation = learn_representation(config, stream, seed)
        if representation is not None:
            emit("representation_loss.csv", dump_loss_trace(representation.trace))
            emit("encoder_representation.txt", dump_params(representation.params))

        stage = "clustering"
        clusters = pseudo = probe = agreement = None
        if representation is not None and stream.unlabeled:
            clusters, pseudo = cluster_pool(config, representation, stream, seed)
            truth = stream.sealed_unlabeled_truth()
            true_labels = [truth[ex.uid] for ex in stream.unlabeled]
            agreement = clustering_accuracy(clusters.assignment.tolist(), true_labels)
            pool_emb = forward_with_cache(
                representation.params, features_matrix(stream.unlabeled)
            ).output
            probe = theory_probe(pool_emb, true_labels, agreement)
            emit("cluster_assignment.csv", dump_assignment(list(stream.unlabeled), pseudo))

        stage = "pretrain"
        initial = representation.params if (
            representation is not None and config.pretrain.reuse_representation_encoder
        ) else None
        encoder, head = pretrain_model(config, stream, pseudo, seed, initial_encoder=initial)
        emit("encoder_pretrained.txt", dump_params(encoder))

        stage = "incremental"
        outcome = run_sessions(config, stream, encoder, head)
        metrics = summarize(outcome.accuracies)
        for s, dump in enumerate(outcome.prediction_dumps):
            emit(f"predictions_session_{s}.csv", dump)
        emit("metrics.csv", dump_metrics(metrics))
        result = SingleRunResult(
            seed=seed,
            stream=stream,
            representation=representation,
            clusters=clusters,
            pseudo=pseudo,
            encoder=encoder,
            head=head,
            outcome=outcome,
            metrics=metrics,
            probe=probe,
            pool_agreement=agreement,
        )
        emit(
            "summary.json",
            json.dumps(_summary_payload(result), indent=2, sort_keys=True) + "\n",
        )
        return result
    except Exception as exc:
        raise StageError(stage, exc) from exc


def run_single(config: ExperimentConfig, seed: int | None = None) -> SingleRunResult:
    """The full deterministic pipeline, no artifact I/O."""
    effective = config.run.seed if seed is None else seed
    return _execute(config, effective, emit=lambda name, content: None)


# ---------------------------------------------------------------------------
# Artifact emission.

def write_atomic(path: str, content: str) -> None:
    """Write-then-rename so readers never observe a truncated file."""
    directory = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp_", suffix=".part")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(content)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _summary_payload(result: SingleRunResult) -> dict:
    protocol = result.stream.protocol
    payload: dict = {
        "seed": result.seed,
        "protocol": {
            "base_classes": protocol.base_classes,
            "ways": protocol.ways,
            "shots": protocol.shots,
            "sessions": protocol.sessions,
            "unlabeled_per_class": protocol.unlabeled_per_class,
        },
        "stages": {
            "representation": "skipped" if result.representation is None else "ok",
            "clustering": "skipped" if result.clusters is None else "ok",
            "pretrain": "ok",
            "incremental": "ok",
        },
        "accuracies": [float(a) for a in result.metrics.accuracies],
        "first": result.metrics.first,
        "last": result.metrics.last,
        "average": result.metrics.average,
        "drop": result.metrics.drop,
    }
    if result.pool_agreement is not None:
        payload["pool_agreement"] = result.pool_agreement
    if result.probe is not None:
        payload["probe"] = {
            "intra_class_distance": result.probe.intra_class_distance,
            "inter_class_distance": result.probe.inter_class_distance,
            "clustering_accuracy": result.probe.clustering_accuracy,
            "offset": result.probe.offset,
            "inverted_geometry": result.probe.inverted_geometry,
        }
    return payload


def run_pipeline(config: ExperimentConfig, out_dir: str | None = None) -> SingleRunResult:
    """Run and persist every artifact; stage errors leave a FAILED marker."""
    out = out_dir if out_dir is not None else config.run.resolved_output_dir()
    os.makedirs(out, exist_ok=True)
    write_atomic(os.path.join(out, "config.echo.txt"), dump_config(config))

    def emit(name: str, content: str) -> None:
        write_atomic(os.path.join(out, name), content)

    try:
        return _execute(config, config.run.seed, emit)
    except StageError as err:
        write_atomic(os.path.join(out, "FAILED"), f"stage: {err.stage}\nerror: {err.cause}\n")
        raise
