"""Experiment configuration: flat dotted-key text files plus validation.

The file format is one `section.key = value` assignment per line with `#`
comment lines. Every field is validated before any work starts, and errors
name the offending key path. parse_config(dump_config(c)) == c, so the
effective-config echo written next to run artifacts replays the run exactly.
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass, fields, replace as dc_replace
from typing import Callable

from .clustering import RepresentationConfig
from .datastream import Protocol, SyntheticSpec
from .incremental import IncrementalConfig

DEFAULT_OUTPUT_ENV = "FSCILAB_OUT"


class ConfigError(ValueError):
    """Malformed or invalid configuration; message names the key path."""


@dataclass(frozen=True)
class SyntheticShape:
    """Synthetic dataset geometry (the draw seed is supplied per run)."""

    class_count: int = 12
    feature_dim: int = 8
    spread: float = 2.0
    stddev: float = 0.5
    samples_per_class: int = 40

    def spec(self, seed: int) -> SyntheticSpec:
        return SyntheticSpec(
            class_count=self.class_count,
            feature_dim=self.feature_dim,
            spread=self.spread,
            stddev=self.stddev,
            samples_per_class=self.samples_per_class,
            seed=seed,
        )


@dataclass(frozen=True)
class EncoderSettings:
    hidden_dims: tuple[int, ...] = (16,)
    embedding_dim: int = 8
    activation: str = "relu"

    def dims(self, input_dim: int) -> tuple[int, ...]:
        return (input_dim, *self.hidden_dims, self.embedding_dim)


@dataclass(frozen=True)
class PretrainSettings:
    pseudo_weight: float = 0.5
    epochs: int = 30
    batch_size: int = 32
    learning_rate: float = 0.1
    momentum: float = 0.9
    reuse_representation_encoder: bool = False


@dataclass(frozen=True)
class RunSettings:
    seed: int = 0
    output_dir: str = ""
    workers: int = 1

    def resolved_output_dir(self) -> str:
        if self.output_dir:
            return self.output_dir
        return os.environ.get(DEFAULT_OUTPUT_ENV, "fscilab_out")


@dataclass(frozen=True)
class ExperimentConfig:
    protocol: Protocol = Protocol(
        base_classes=6, base_samples=20, ways=2, shots=3, sessions=3,
        unlabeled_per_class=5,
    )
    synthetic: SyntheticShape = SyntheticShape()
    encoder: EncoderSettings = EncoderSettings()
    representation: RepresentationConfig = RepresentationConfig()
    representation_include_base: bool = False
    pretrain: PretrainSettings = PretrainSettings()
    incremental: IncrementalConfig = IncrementalConfig()
    run: RunSettings = RunSettings()

    def validate(self) -> "ExperimentConfig":
        p, s = self.protocol, self.synthetic
        if s.class_count < p.total_classes:
            raise ConfigError(
                f"synthetic.class_count: protocol needs {p.total_classes} classes, "
                f"got {s.class_count}"
            )
        base_need = p.base_samples + 1
        inc_need = p.shots + p.unlabeled_per_class + 1
        if s.samples_per_class < base_need or (
            p.sessions > 0 and s.samples_per_class < inc_need
        ):
            raise ConfigError(
                "synthetic.samples_per_class: "
                f"needs >= {max(base_need, inc_need)} to satisfy the protocol quotas"
            )
        if self.run.workers < 1:
            raise ConfigError("run.workers: must be >= 1")
        if self.pretrain.epochs < 0 or self.pretrain.batch_size < 1:
            raise ConfigError("pretrain.epochs/pretrain.batch_size: must be positive")
        return self


def stage_seed(root_seed: int, stage: str) -> int:
    """Deterministic per-stage seed split: stable across runs and platforms."""
    digest = hashlib.sha256(f"{root_seed}/{stage}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


# ---------------------------------------------------------------------------
# Parsing. Each known dotted key maps to (section attribute, field, parser).

def _parse_bool(raw: str) -> bool:
    low = raw.lower()
    if low in ("true", "yes", "1"):
        return True
    if low in ("false", "no", "0"):
        return False
    raise ValueError(f"expected a boolean, got {raw!r}")


def _parse_int_list(raw: str) -> tuple[int, ...]:
    raw = raw.strip()
    if not raw:
        return ()
    return tuple(int(part) for part in raw.split(","))


_SECTION_TYPES = {
    "protocol": Protocol,
    "synthetic": SyntheticShape,
    "encoder": EncoderSettings,
    "representation": RepresentationConfig,
    "pretrain": PretrainSettings,
    "incremental": IncrementalConfig,
    "run": RunSettings,
}

_FIELD_PARSERS: dict[str, Callable[[str], object]] = {
    "encoder.hidden_dims": _parse_int_list,
    "encoder.activation": str,
    "run.output_dir": str,
}

_TOP_LEVEL_BOOLS = {"representation_include_base"}


def _field_parser(key: str, field_type: str) -> Callable[[str], object]:
    if key in _FIELD_PARSERS:
        return _FIELD_PARSERS[key]
    if field_type in ("int",):
        return int
    if field_type in ("float",):
        return float
    if field_type in ("bool",):
        return _parse_bool
    if field_type in ("str",):
        return str
    raise ConfigError(f"{key}: unsupported field type {field_type}")


def known_keys() -> dict[str, Callable[[str], object]]:
    keys: dict[str, Callable[[str], object]] = {}
    for section, cls in _SECTION_TYPES.items():
        for f in fields(cls):
            key = f"{section}.{f.name}"
            keys[key] = _field_parser(key, f.type.split("|")[0].strip())
    for name in _TOP_LEVEL_BOOLS:
        keys[name.replace("_", ".", 1)] = _parse_bool
    return keys


def parse_config_text(text: str, source: str = "<config>") -> ExperimentConfig:
    parsers = known_keys()
    section_values: dict[str, dict[str, object]] = {s: {} for s in _SECTION_TYPES}
    top_level: dict[str, object] = {}
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'section.key = value'")
        key, _, raw_value = line.partition("=")
        key = key.strip()
        raw_value = raw_value.strip()
        if key not in parsers:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        try:
            value = parsers[key](raw_value)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"{key}: cannot parse {raw_value!r} ({exc})") from exc
        section, _, field_name = key.partition(".")
        if f"{section}_{field_name}" in _TOP_LEVEL_BOOLS:
            top_level[f"{section}_{field_name}"] = value
        else:
            section_values[section][field_name] = value

    defaults = ExperimentConfig()
    built: dict[str, object] = {}
    for section in _SECTION_TYPES:
        try:
            built[section] = dc_replace(getattr(defaults, section), **section_values[section])
        except (ValueError, TypeError) as exc:
            offending = ", ".join(
                f"{section}.{name}" for name in section_values[section]
            ) or section
            raise ConfigError(f"{offending}: {exc}") from exc
    config = ExperimentConfig(
        protocol=built["protocol"],
        synthetic=built["synthetic"],
        encoder=built["encoder"],
        representation=built["representation"],
        pretrain=built["pretrain"],
        incremental=built["incremental"],
        run=built["run"],
        **top_level,
    )
    return config.validate()


def parse_config(path: str | os.PathLike) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config_text(fh.read(), source=str(path))


def _format_value(value: object) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return str(value)


def dump_config(config: ExperimentConfig) -> str:
    """Effective-config echo; parse_config_text inverts it exactly."""
    lines = ["# fscilab experiment configuration"]
    for section, cls in _SECTION_TYPES.items():
        obj = getattr(config, section)
        for f in fields(cls):
            lines.append(f"{section}.{f.name} = {_format_value(getattr(obj, f.name))}")
    for name in sorted(_TOP_LEVEL_BOOLS):
        key = name.replace("_", ".", 1)
        lines.append(f"{key} = {_format_value(getattr(config, name))}")
    return "\n".join(lines) + "\n"
