"""Paired-seed ablation scenarios over the full pipeline.

Each scenario runs two or more arms per seed on one shared stream, varying a
single factor: presence of pseudo-labeled prior data, permutation of the
pseudo-label ids, the amount of unlabeled data per class, or the
reconciliation weight. Differences are scored pairwise per seed and tested
with an exact one-sided sign test.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .clustering import ClusterResult, assign_pseudo_labels
from .config import ExperimentConfig, stage_seed
from .datastream import subsample_unlabeled
from .metrics import RunMetrics, summarize
from .pipeline import (
    build_stream,
    cluster_pool,
    learn_representation,
    pretrain_model,
    run_sessions,
)

SCENARIOS = ("pk_on_off", "label_mismatch", "upc_sweep", "omega_on_off")

_METRIC_FIELDS = ("first", "last", "average", "drop")


@dataclass(frozen=True)
class SignTest:
    """One-sided exact binomial sign test (variant > control), ties dropped."""

    wins: int
    losses: int
    ties: int
    p_value: float

    @property
    def significant(self) -> bool:
        return self.p_value < 0.05


def paired_sign_test(differences: Sequence[float]) -> SignTest:
    wins = sum(1 for d in differences if d > 0)
    losses = sum(1 for d in differences if d < 0)
    ties = len(differences) - wins - losses
    m = wins + losses
    if m == 0:
        return SignTest(wins=wins, losses=losses, ties=ties, p_value=1.0)
    tail = sum(math.comb(m, k) for k in range(wins, m + 1))
    return SignTest(wins=wins, losses=losses, ties=ties, p_value=tail / 2**m)


@dataclass(frozen=True)
class PairedDifference:
    metric: str
    mean: float
    spread: float  # sample standard deviation of the paired differences
    sign_test: SignTest


@dataclass(frozen=True)
class ArmResult:
    name: str
    per_seed: tuple[RunMetrics, ...]

    def metric_values(self, metric: str) -> tuple[float, ...]:
        return tuple(getattr(m, metric) for m in self.per_seed)


@dataclass(frozen=True)
class ArmComparison:
    arm: str
    differences: tuple[PairedDifference, ...]  # one per metric field

    def difference(self, metric: str) -> PairedDifference:
        for d in self.differences:
            if d.metric == metric:
                return d
        raise KeyError(metric)


@dataclass(frozen=True)
class AblationReport:
    scenario: str
    seeds: tuple[int, ...]
    control: ArmResult
    variants: tuple[ArmResult, ...]
    comparisons: tuple[ArmComparison, ...]  # variant minus control, paired


def _compare(control: ArmResult, variant: ArmResult) -> ArmComparison:
    diffs = []
    for metric in _METRIC_FIELDS:
        deltas = [
            v - c
            for v, c in zip(variant.metric_values(metric), control.metric_values(metric))
        ]
        mean = float(np.mean(deltas))
        spread = float(np.std(deltas, ddof=1)) if len(deltas) > 1 else 0.0
        diffs.append(
            PairedDifference(
                metric=metric, mean=mean, spread=spread,
                sign_test=paired_sign_test(deltas),
            )
        )
    return ArmComparison(arm=variant.name, differences=tuple(diffs))


# ---------------------------------------------------------------------------
# Per-seed arm computation. Every arm reuses the seed's stream (and, where
# the scenario allows, the representation/cluster stages) so the only moving
# part is the scenario variable.

def _permuted_clusters(clusters: ClusterResult, permutation: Sequence[int]) -> ClusterResult:
    perm = np.asarray(permutation, dtype=np.int64)
    return ClusterResult(
        centroids=clusters.centroids,
        assignment=perm[clusters.assignment],
        inertia=clusters.inertia,
        inertia_trace=clusters.inertia_trace,
    )


def _seed_arms(
    scenario: str, config: ExperimentConfig, seed: int, upc_values: tuple[int, ...]
) -> dict[str, RunMetrics]:
    stream = build_stream(config, seed)
    out: dict[str, RunMetrics] = {}

    def finish(name: str, pseudo, pseudo_weight=None, pool=None) -> None:
        encoder, head = pretrain_model(
            config, stream, pseudo, seed, pseudo_weight=pseudo_weight
        )
        out[name] = summarize(run_sessions(config, stream, encoder, head).accuracies)

    def shared_representation():
        representation = learn_representation(config, stream, seed)
        if representation is None:
            raise ValueError(
                f"scenario {scenario!r} needs unlabeled data; "
                "protocol.unlabeled_per_class is 0"
            )
        return representation

    if scenario == "pk_on_off":
        finish("no_prior", None)
        _, pseudo = cluster_pool(config, shared_representation(), stream, seed)
        finish("with_prior", pseudo)
    elif scenario == "omega_on_off":
        _, pseudo = cluster_pool(config, shared_representation(), stream, seed)
        finish("weight_zero", pseudo, pseudo_weight=0.0)
        finish("weight_on", pseudo)
    elif scenario == "label_mismatch":
        clusters, _ = cluster_pool(config, shared_representation(), stream, seed)
        pool = list(stream.unlabeled)
        k = config.protocol.incremental_classes
        base_id = config.protocol.base_classes
        finish("aligned", assign_pseudo_labels(clusters, base_id, pool))
        rng = np.random.default_rng(stage_seed(seed, "mismatch"))
        permuted = _permuted_clusters(clusters, rng.permutation(k))
        finish("permuted", assign_pseudo_labels(permuted, base_id, pool))
    elif scenario == "upc_sweep":
        for u in upc_values:
            name = f"unlabeled_{u}"
            if u == 0:
                finish(name, None)
                continue
            pool = subsample_unlabeled(stream, u)
            representation = learn_representation(config, stream, seed, pool=pool)
            _, pseudo = cluster_pool(config, representation, stream, seed, pool=pool)
            finish(name, pseudo)
    else:
        raise ValueError(f"unknown scenario {scenario!r}; choose from {SCENARIOS}")
    return out


def _seed_job(args: tuple[str, ExperimentConfig, int, tuple[int, ...]]):
    return _seed_arms(*args)


def run_ablation(
    scenario: str,
    config: ExperimentConfig,
    seeds: Sequence[int],
    workers: int = 1,
    upc_values: tuple[int, ...] | None = None,
) -> AblationReport:
    """Run a scenario over paired seeds; the first arm is the control."""
    if scenario not in SCENARIOS:
        raise ValueError(f"unknown scenario {scenario!r}; choose from {SCENARIOS}")
    seeds = tuple(int(s) for s in seeds)
    if not seeds:
        raise ValueError("need at least one seed")
    if upc_values is None:
        u = config.protocol.unlabeled_per_class
        upc_values = tuple(sorted({0, max(1, u // 2), u})) if u else (0,)
    if scenario == "upc_sweep":
        bad = [u for u in upc_values if u > config.protocol.unlabeled_per_class]
        if bad:
            raise ValueError(
                f"upc values {bad} exceed protocol.unlabeled_per_class="
                f"{config.protocol.unlabeled_per_class}"
            )

    jobs = [(scenario, config, seed, upc_values) for seed in seeds]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            per_seed = list(pool.map(_seed_job, jobs))
    else:
        per_seed = [_seed_job(job) for job in jobs]

    arm_names = list(per_seed[0])
    arms = tuple(
        ArmResult(name=name, per_seed=tuple(result[name] for result in per_seed))
        for name in arm_names
    )
    control, variants = arms[0], arms[1:]
    comparisons = tuple(_compare(control, v) for v in variants)
    return AblationReport(
        scenario=scenario,
        seeds=seeds,
        control=control,
        variants=variants,
        comparisons=comparisons,
    )


# ---------------------------------------------------------------------------
# Delimited emission.

def dump_ablation_rows(report: AblationReport) -> str:
    """Long-form table: scenario, arm, seed, session, accuracy."""
    lines = ["scenario,arm,seed,session,accuracy"]
    for arm in (report.control, *report.variants):
        for seed, metrics in zip(report.seeds, arm.per_seed):
            for session, acc in enumerate(metrics.accuracies):
                lines.append(
                    f"{report.scenario},{arm.name},{seed},{session},{repr(float(acc))}"
                )
    return "\n".join(lines) + "\n"


def dump_ablation_summary(report: AblationReport) -> str:
    """Per-arm means: arm, first, last, average, drop (over seeds)."""
    lines = ["arm,first,last,average,drop"]
    for arm in (report.control, *report.variants):
        cells = [arm.name]
        for metric in _METRIC_FIELDS:
            cells.append(repr(float(np.mean(arm.metric_values(metric)))))
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def dump_ablation_differences(report: AblationReport) -> str:
    """Variant-minus-control rows: arm, metric, mean, spread, wins, losses,
    ties, p_value."""
    lines = ["arm,metric,mean_difference,spread,wins,losses,ties,p_value"]
    for comparison in report.comparisons:
        for d in comparison.differences:
            st = d.sign_test
            lines.append(
                f"{comparison.arm},{d.metric},{repr(d.mean)},{repr(d.spread)},"
                f"{st.wins},{st.losses},{st.ties},{repr(st.p_value)}"
            )
    return "\n".join(lines) + "\n"
