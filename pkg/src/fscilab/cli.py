"""Command-line surface: synth | cluster | pretrain | run | ablate | report.

Each subcommand runs the pipeline up to its stage boundary and persists that
stage's artifacts, so later stages can be re-run or inspected in isolation.
Every command echoes the effective configuration (file values overridden by
flags) into the output directory.
"""

from __future__ import annotations

import argparse
import dataclasses as dc
import os
import sys
from typing import Sequence

from .ablation import (
    SCENARIOS,
    dump_ablation_differences,
    dump_ablation_rows,
    dump_ablation_summary,
    run_ablation,
)
from .clustering import dump_assignment, dump_loss_trace
from .config import ConfigError, ExperimentConfig, dump_config, parse_config
from .datastream import dump_feature_table, dump_manifest
from .encoder import PoisonedStepError, dump_params
from .pipeline import (
    StageError,
    build_stream,
    cluster_pool,
    learn_representation,
    pretrain_model,
    run_pipeline,
    write_atomic,
)
from .reporting import ReportError, render_report


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fscilab",
        description=(
            "Few-shot class-incremental experiments on synthetic streams: "
            "data generation, unsupervised clustering of future-class pools, "
            "joint pretraining, incremental evaluation, ablations, reports."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name: str, help_text: str) -> argparse.ArgumentParser:
        cmd = sub.add_parser(name, help=help_text)
        cmd.add_argument("--config", help="path to a 'section.key = value' config file")
        cmd.add_argument("--seed", type=int, help="root seed (overrides the config)")
        cmd.add_argument("--out", help="output directory (overrides config and environment)")
        return cmd

    add("synth", "generate a synthetic stream: feature table + partition manifest")
    add("cluster", "train the unsupervised representation and cluster the pool")
    add("pretrain", "joint pretraining on base data plus pseudo-labeled pool")
    add("run", "full pipeline: stream, clustering, pretraining, all sessions")
    ablate = add("ablate", "paired-seed comparisons across pipeline variants")
    ablate.add_argument("--scenario", required=True, choices=SCENARIOS)
    ablate.add_argument("--runs", type=int, default=20, help="number of paired seeds")
    ablate.add_argument("--workers", type=int, help="parallel seed workers")
    add("report", "render figures from the tables in an output directory")
    return parser


def _effective_config(args: argparse.Namespace) -> ExperimentConfig:
    config = parse_config(args.config) if args.config else ExperimentConfig()
    run = config.run
    if args.seed is not None:
        run = dc.replace(run, seed=args.seed)
    if args.out is not None:
        run = dc.replace(run, output_dir=args.out)
    if getattr(args, "workers", None) is not None:
        run = dc.replace(run, workers=args.workers)
    return dc.replace(config, run=run).validate()


def _prepare_out(config: ExperimentConfig) -> str:
    out = config.run.resolved_output_dir()
    os.makedirs(out, exist_ok=True)
    write_atomic(os.path.join(out, "config.echo.txt"), dump_config(config))
    return out


def _emit(out: str, name: str, content: str) -> None:
    write_atomic(os.path.join(out, name), content)


def _cmd_synth(config: ExperimentConfig) -> int:
    out = _prepare_out(config)
    stream = build_stream(config, config.run.seed)
    everything = sorted(
        [*stream.base, *(ex for inc in stream.increments for ex in inc),
         *stream.unlabeled, *stream.tests[-1]],
        key=lambda ex: ex.uid,
    )
    _emit(out, "features.csv", dump_feature_table(everything))
    _emit(out, "stream_manifest.txt", dump_manifest(stream))
    print(f"wrote stream of {len(everything)} examples to {out}")
    return 0


def _cmd_cluster(config: ExperimentConfig) -> int:
    out = _prepare_out(config)
    seed = config.run.seed
    stream = build_stream(config, seed)
    _emit(out, "stream_manifest.txt", dump_manifest(stream))
    representation = learn_representation(config, stream, seed)
    if representation is None:
        raise ConfigError(
            "protocol.unlabeled_per_class: no pool to cluster (0 unlabeled draws)"
        )
    _emit(out, "representation_loss.csv", dump_loss_trace(representation.trace))
    _emit(out, "encoder_representation.txt", dump_params(representation.params))
    if stream.unlabeled:
        _, pseudo = cluster_pool(config, representation, stream, seed)
        _emit(out, "cluster_assignment.csv", dump_assignment(list(stream.unlabeled), pseudo))
        print(f"clustered {len(stream.unlabeled)} pool examples into {out}")
    else:
        print(f"trained representation (no pool to cluster) into {out}")
    return 0


def _cmd_pretrain(config: ExperimentConfig) -> int:
    out = _prepare_out(config)
    seed = config.run.seed
    stream = build_stream(config, seed)
    _emit(out, "stream_manifest.txt", dump_manifest(stream))
    representation = learn_representation(config, stream, seed)
    pseudo = None
    if representation is not None and stream.unlabeled:
        _emit(out, "representation_loss.csv", dump_loss_trace(representation.trace))
        _emit(out, "encoder_representation.txt", dump_params(representation.params))
        _, pseudo = cluster_pool(config, representation, stream, seed)
        _emit(out, "cluster_assignment.csv", dump_assignment(list(stream.unlabeled), pseudo))
    initial = representation.params if (
        representation is not None and config.pretrain.reuse_representation_encoder
    ) else None
    encoder, _head = pretrain_model(config, stream, pseudo, seed, initial_encoder=initial)
    _emit(out, "encoder_pretrained.txt", dump_params(encoder))
    print(f"pretrained encoder written to {out}")
    return 0


def _cmd_run(config: ExperimentConfig) -> int:
    out = config.run.resolved_output_dir()
    result = run_pipeline(config, out_dir=out)
    accs = ", ".join(f"{a:.4f}" for a in result.metrics.accuracies)
    print(f"session accuracies: [{accs}]")
    print(f"artifacts in {out}")
    return 0


def _cmd_ablate(config: ExperimentConfig, scenario: str, runs: int) -> int:
    if runs < 1:
        raise ConfigError("--runs: must be >= 1")
    out = _prepare_out(config)
    seeds = [config.run.seed + i for i in range(runs)]
    report = run_ablation(scenario, config, seeds, workers=config.run.workers)
    _emit(out, "ablation_rows.csv", dump_ablation_rows(report))
    _emit(out, "ablation_summary.csv", dump_ablation_summary(report))
    _emit(out, "ablation_differences.csv", dump_ablation_differences(report))
    for comparison in report.comparisons:
        last = comparison.difference("last")
        tag = "significant" if last.sign_test.significant else "not significant"
        print(
            f"{comparison.arm} vs {report.control.name}: "
            f"final-session difference {last.mean:+.4f} "
            f"({last.sign_test.wins}W/{last.sign_test.losses}L/"
            f"{last.sign_test.ties}T, p={last.sign_test.p_value:.4g}, {tag})"
        )
    print(f"ablation tables in {out}")
    return 0


def _cmd_report(config: ExperimentConfig) -> int:
    out = config.run.resolved_output_dir()
    for path in render_report(out):
        print(f"wrote {path}")
    return 0


def main(argv: Sequence[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        config = _effective_config(args)
        if args.command == "synth":
            return _cmd_synth(config)
        if args.command == "cluster":
            return _cmd_cluster(config)
        if args.command == "pretrain":
            return _cmd_pretrain(config)
        if args.command == "run":
            return _cmd_run(config)
        if args.command == "ablate":
            return _cmd_ablate(config, args.scenario, args.runs)
        if args.command == "report":
            return _cmd_report(config)
        raise AssertionError(f"unhandled command {args.command}")
    except (
        ConfigError, StageError, ReportError, PoisonedStepError, OSError, ValueError
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
