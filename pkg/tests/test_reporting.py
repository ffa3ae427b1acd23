"""Table readers and figure rendering."""

from __future__ import annotations

import pytest

from fscilab.metrics import RunMetrics, dump_metrics
from fscilab.reporting import (
    ReportError,
    load_ablation_rows,
    load_loss_table,
    load_metrics_table,
    plot_ablation,
    plot_loss_trace,
    plot_session_accuracies,
    render_report,
)


def test_load_metrics_table_inverts_dump():
    metrics = RunMetrics(
        accuracies=(0.9, 0.8, 0.7), first=0.9, last=0.7,
        average=0.7999999999999999, drop=0.20000000000000007,
    )
    accuracies, derived = load_metrics_table(dump_metrics(metrics))
    assert accuracies == [0.9, 0.8, 0.7]
    assert derived["first"] == 0.9
    assert derived["drop"] == 0.20000000000000007


def test_load_metrics_table_rejects_foreign_text():
    with pytest.raises(ReportError):
        load_metrics_table("uid,label\n1,2\n")


def test_load_loss_table_columns():
    text = (
        "epoch,instance_loss,decorrelation_loss,total_loss\n"
        "0,3.0,1.5,4.5\n"
        "1,2.0,1.0,3.0\n"
    )
    cols = load_loss_table(text)
    assert cols["epoch"] == [0.0, 1.0]
    assert cols["total_loss"] == [4.5, 3.0]


def test_load_ablation_rows_groups_by_arm_and_seed():
    text = (
        "scenario,arm,seed,session,accuracy\n"
        "pk_on_off,no_prior,0,1,0.5\n"
        "pk_on_off,no_prior,0,0,0.9\n"
        "pk_on_off,with_prior,0,0,0.9\n"
        "pk_on_off,with_prior,0,1,0.8\n"
    )
    arms = load_ablation_rows(text)
    assert set(arms) == {"no_prior", "with_prior"}
    assert arms["no_prior"][0] == [0.9, 0.5]  # re-ordered by session
    assert arms["with_prior"][0] == [0.9, 0.8]


def test_figures_are_written(tmp_path):
    acc_path = tmp_path / "acc.png"
    plot_session_accuracies([1.0, 0.8, 0.75], str(acc_path))
    loss_path = tmp_path / "loss.png"
    plot_loss_trace(
        {"epoch": [0, 1], "instance_loss": [2.0, 1.0], "total_loss": [3.0, 1.5]},
        str(loss_path),
    )
    ab_path = tmp_path / "ab.png"
    plot_ablation(
        {"a": {0: [0.9, 0.7], 1: [0.8, 0.6]}, "b": {0: [0.9, 0.8], 1: [0.85, 0.8]}},
        str(ab_path),
    )
    for path in (acc_path, loss_path, ab_path):
        data = path.read_bytes()
        assert data[:8] == b"\x89PNG\r\n\x1a\n"
        assert len(data) > 1000


def test_render_report_empty_directory_raises(tmp_path):
    with pytest.raises(ReportError):
        render_report(str(tmp_path))


def test_render_report_picks_up_available_tables(tmp_path):
    metrics = RunMetrics(
        accuracies=(1.0, 0.5), first=1.0, last=0.5, average=0.75, drop=0.5
    )
    (tmp_path / "metrics.csv").write_text(dump_metrics(metrics), encoding="utf-8")
    written = render_report(str(tmp_path))
    assert [p.rsplit("/", 1)[-1] for p in written] == ["session_accuracy.png"]
