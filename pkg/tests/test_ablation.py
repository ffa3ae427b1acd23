"""Ablation arms, paired statistics, and the exact sign test."""

from __future__ import annotations

import dataclasses as dc

import pytest
from scipy.stats import binomtest

from fscilab.ablation import (
    AblationReport,
    dump_ablation_differences,
    dump_ablation_rows,
    dump_ablation_summary,
    paired_sign_test,
    run_ablation,
)
from fscilab.clustering import RepresentationConfig
from fscilab.config import (
    EncoderSettings,
    ExperimentConfig,
    PretrainSettings,
    SyntheticShape,
)
from fscilab.datastream import Protocol


def small_config(unlabeled: int = 4) -> ExperimentConfig:
    cfg = ExperimentConfig(
        protocol=Protocol(
            base_classes=4, base_samples=6, ways=2, shots=2, sessions=2,
            unlabeled_per_class=unlabeled,
        ),
        synthetic=SyntheticShape(
            class_count=8, feature_dim=5, spread=2.0, stddev=0.5, samples_per_class=14
        ),
        encoder=EncoderSettings(hidden_dims=(8,), embedding_dim=4),
        representation=RepresentationConfig(epochs=3, batch_size=8),
        pretrain=PretrainSettings(epochs=4, batch_size=8),
    )
    return cfg.validate()


# ---------------------------------------------------------------------------
# Sign test.

def test_sign_test_matches_scipy_binomial_tail():
    for wins, losses in [(15, 5), (12, 8), (20, 0), (7, 3), (3, 7)]:
        diffs = [1.0] * wins + [-1.0] * losses
        result = paired_sign_test(diffs)
        expected = binomtest(wins, wins + losses, alternative="greater").pvalue
        assert result.p_value == pytest.approx(expected, rel=1e-12)


def test_sign_test_drops_ties():
    result = paired_sign_test([2.0, -1.0, 0.0, 0.0])
    assert (result.wins, result.losses, result.ties) == (1, 1, 2)
    assert result.p_value == pytest.approx(0.75)


def test_sign_test_all_ties_is_inconclusive():
    result = paired_sign_test([0.0, 0.0])
    assert result.p_value == 1.0
    assert not result.significant


def test_sign_test_unanimous_wins_is_significant_at_six_pairs():
    assert paired_sign_test([1.0] * 6).p_value == pytest.approx(1 / 64)
    assert paired_sign_test([1.0] * 6).significant
    assert not paired_sign_test([1.0] * 4).significant  # 1/16 > 0.05


def test_sign_test_fifteen_of_twenty_is_the_95_percent_edge():
    assert paired_sign_test([1.0] * 15 + [-1.0] * 5).significant
    assert not paired_sign_test([1.0] * 14 + [-1.0] * 6).significant


# ---------------------------------------------------------------------------
# Scenario mechanics.

def test_pk_scenario_arms_and_shapes():
    report = run_ablation("pk_on_off", small_config(), seeds=[0, 1, 2])
    assert report.scenario == "pk_on_off"
    assert report.control.name == "no_prior"
    assert [v.name for v in report.variants] == ["with_prior"]
    assert report.seeds == (0, 1, 2)
    assert len(report.control.per_seed) == 3
    comparison = report.comparisons[0]
    assert [d.metric for d in comparison.differences] == [
        "first", "last", "average", "drop",
    ]


def test_ablation_is_deterministic():
    cfg = small_config()
    a = run_ablation("pk_on_off", cfg, seeds=[0, 1])
    b = run_ablation("pk_on_off", cfg, seeds=[0, 1])
    assert dump_ablation_rows(a) == dump_ablation_rows(b)
    assert dump_ablation_differences(a) == dump_ablation_differences(b)


def test_parallel_workers_match_serial_results():
    cfg = small_config()
    serial = run_ablation("omega_on_off", cfg, seeds=[0, 1, 2])
    parallel = run_ablation("omega_on_off", cfg, seeds=[0, 1, 2], workers=2)
    assert dump_ablation_rows(serial) == dump_ablation_rows(parallel)
    assert dump_ablation_summary(serial) == dump_ablation_summary(parallel)


def test_upc_sweep_default_arm_grid():
    report = run_ablation("upc_sweep", small_config(unlabeled=4), seeds=[0])
    names = [report.control.name] + [v.name for v in report.variants]
    assert names == ["unlabeled_0", "unlabeled_2", "unlabeled_4"]


def test_upc_sweep_rejects_values_beyond_protocol():
    with pytest.raises(ValueError) as err:
        run_ablation("upc_sweep", small_config(unlabeled=4), seeds=[0], upc_values=(0, 9))
    assert "unlabeled_per_class" in str(err.value)


def test_upc_zero_arm_equals_pk_control():
    cfg = small_config()
    pk = run_ablation("pk_on_off", cfg, seeds=[0, 1])
    upc = run_ablation("upc_sweep", cfg, seeds=[0, 1], upc_values=(0, cfg.protocol.unlabeled_per_class))
    assert upc.control.per_seed == pk.control.per_seed


def test_upc_full_pool_arm_equals_pk_variant():
    cfg = small_config()
    pk = run_ablation("pk_on_off", cfg, seeds=[0, 1])
    upc = run_ablation("upc_sweep", cfg, seeds=[0, 1], upc_values=(0, cfg.protocol.unlabeled_per_class))
    assert upc.variants[-1].per_seed == pk.variants[0].per_seed


def test_label_mismatch_arms():
    report = run_ablation("label_mismatch", small_config(), seeds=[0, 1])
    assert report.control.name == "aligned"
    assert [v.name for v in report.variants] == ["permuted"]


def test_label_mismatch_differences_are_exactly_zero():
    # the zero-init head makes training invariant to how cluster ids map
    # onto the incremental label range, so both arms tie on every seed
    report = run_ablation("label_mismatch", small_config(), seeds=[0, 1, 2])
    assert report.control.per_seed == report.variants[0].per_seed
    for diff in report.comparisons[0].differences:
        assert diff.mean == 0.0
        assert diff.sign_test.ties == 3
        assert diff.sign_test.p_value == 1.0


def test_omega_scenario_arms():
    report = run_ablation("omega_on_off", small_config(), seeds=[0])
    assert report.control.name == "weight_zero"
    assert [v.name for v in report.variants] == ["weight_on"]


def test_unknown_scenario_rejected():
    with pytest.raises(ValueError):
        run_ablation("mystery", small_config(), seeds=[0])


def test_empty_seed_list_rejected():
    with pytest.raises(ValueError):
        run_ablation("pk_on_off", small_config(), seeds=[])


def test_scenario_requiring_pool_rejects_zero_unlabeled():
    with pytest.raises(ValueError) as err:
        run_ablation("pk_on_off", small_config(unlabeled=0), seeds=[0])
    assert "unlabeled" in str(err.value)


# ---------------------------------------------------------------------------
# Emission.

def test_dump_rows_shape():
    cfg = small_config()
    report = run_ablation("pk_on_off", cfg, seeds=[0, 1])
    lines = dump_ablation_rows(report).strip().splitlines()
    assert lines[0] == "scenario,arm,seed,session,accuracy"
    sessions = cfg.protocol.sessions + 1
    assert len(lines) == 1 + 2 * 2 * sessions  # arms x seeds x sessions
    assert lines[1].startswith("pk_on_off,no_prior,0,0,")


def test_dump_summary_and_differences_headers():
    report = run_ablation("pk_on_off", small_config(), seeds=[0, 1])
    summary = dump_ablation_summary(report).splitlines()
    assert summary[0] == "arm,first,last,average,drop"
    assert len(summary) == 3
    diffs = dump_ablation_differences(report).splitlines()
    assert diffs[0] == "arm,metric,mean_difference,spread,wins,losses,ties,p_value"
    assert len(diffs) == 5  # one variant x four metrics
