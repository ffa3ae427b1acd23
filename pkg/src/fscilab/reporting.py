"""Figure rendering for run and ablation artifacts.

The report path re-reads the delimited tables a run directory already
contains and renders matplotlib figures next to them, so a report can be
regenerated later without re-running the experiment.
"""

from __future__ import annotations

import os
from collections import defaultdict

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be pinned first)


class ReportError(RuntimeError):
    """A run directory holds nothing a report could be built from."""


# ---------------------------------------------------------------------------
# Table readers (inverse of the dump_* emitters).

def load_metrics_table(text: str) -> tuple[list[float], dict[str, float]]:
    """Split metrics rows into per-session accuracies and derived values."""
    lines = text.strip().splitlines()
    if not lines or lines[0] != "session,accuracy":
        raise ReportError("metrics table missing 'session,accuracy' header")
    accuracies: list[float] = []
    derived: dict[str, float] = {}
    for line in lines[1:]:
        key, _, value = line.partition(",")
        if key.isdigit():
            accuracies.append(float(value))
        else:
            derived[key] = float(value)
    if not accuracies:
        raise ReportError("metrics table holds no session rows")
    return accuracies, derived


def load_loss_table(text: str) -> dict[str, list[float]]:
    lines = text.strip().splitlines()
    header = lines[0].split(",") if lines else []
    if header[:1] != ["epoch"]:
        raise ReportError("loss table missing 'epoch,...' header")
    columns: dict[str, list[float]] = {name: [] for name in header}
    for line in lines[1:]:
        for name, cell in zip(header, line.split(",")):
            columns[name].append(float(cell))
    return columns


def load_ablation_rows(text: str) -> dict[str, dict[int, list[float]]]:
    """arm -> seed -> accuracy per session, in session order."""
    lines = text.strip().splitlines()
    if not lines or lines[0] != "scenario,arm,seed,session,accuracy":
        raise ReportError("ablation table missing its header row")
    arms: dict[str, dict[int, list[tuple[int, float]]]] = defaultdict(dict)
    for line in lines[1:]:
        _, arm, seed, session, accuracy = line.split(",")
        arms[arm].setdefault(int(seed), []).append((int(session), float(accuracy)))
    return {
        arm: {
            seed: [a for _, a in sorted(points)]
            for seed, points in by_seed.items()
        }
        for arm, by_seed in arms.items()
    }


# ---------------------------------------------------------------------------
# Figures.

def plot_session_accuracies(accuracies, path: str, label: str = "accuracy") -> None:
    sessions = range(len(accuracies))
    fig, ax = plt.subplots(figsize=(5, 3.4))
    ax.plot(sessions, accuracies, marker="o", label=label)
    ax.set_xlabel("session")
    ax.set_ylabel("test accuracy")
    ax.set_xticks(list(sessions))
    ax.set_ylim(0.0, 1.02)
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_loss_trace(columns: dict[str, list[float]], path: str) -> None:
    epochs = columns["epoch"]
    fig, ax = plt.subplots(figsize=(5, 3.4))
    for name, values in columns.items():
        if name == "epoch":
            continue
        ax.plot(epochs, values, label=name.replace("_", " "))
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_ablation(arms: dict[str, dict[int, list[float]]], path: str) -> None:
    fig, ax = plt.subplots(figsize=(5.5, 3.6))
    for arm, by_seed in arms.items():
        curves = list(by_seed.values())
        sessions = range(len(curves[0]))
        for curve in curves:
            ax.plot(sessions, curve, alpha=0.15, linewidth=0.8)
        means = [sum(c[s] for c in curves) / len(curves) for s in sessions]
        ax.plot(sessions, means, marker="o", linewidth=2.0, label=arm)
    ax.set_xlabel("session")
    ax.set_ylabel("test accuracy")
    ax.set_ylim(0.0, 1.02)
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


# ---------------------------------------------------------------------------
# Directory-level report.

def render_report(run_dir: str) -> list[str]:
    """Render every figure the directory's tables support; returns the paths."""
    written: list[str] = []

    def source(name: str) -> str | None:
        path = os.path.join(run_dir, name)
        if not os.path.exists(path):
            return None
        with open(path, "r", encoding="utf-8") as fh:
            return fh.read()

    metrics_text = source("metrics.csv")
    if metrics_text is not None:
        accuracies, _ = load_metrics_table(metrics_text)
        target = os.path.join(run_dir, "session_accuracy.png")
        plot_session_accuracies(accuracies, target)
        written.append(target)

    loss_text = source("representation_loss.csv")
    if loss_text is not None:
        target = os.path.join(run_dir, "representation_loss.png")
        plot_loss_trace(load_loss_table(loss_text), target)
        written.append(target)

    ablation_text = source("ablation_rows.csv")
    if ablation_text is not None:
        target = os.path.join(run_dir, "ablation_comparison.png")
        plot_ablation(load_ablation_rows(ablation_text), target)
        written.append(target)

    if not written:
        raise ReportError(
            f"{run_dir}: no metrics.csv, representation_loss.csv, or "
            "ablation_rows.csv to report on"
        )
    return written
