"""fscilab: a desk-scale few-shot class-incremental learning lab.

Pipeline: synthesize or load a feature dataset, carve it into a base session
plus few-shot increments with an unlabeled pool, learn a representation on
the pool with instance discrimination + feature decorrelation, pseudo-label
the pool by clustering, pretrain an encoder jointly on base + pseudo data,
then run prototype-based incremental sessions and report accuracy metrics.
"""

__version__ = "0.1.0"

from .ablation import AblationReport, paired_sign_test, run_ablation
from .config import ConfigError, ExperimentConfig, dump_config, parse_config
from .datastream import (
    Example,
    FeatureTableError,
    Protocol,
    ProtocolInfeasibleError,
    SessionStream,
    SyntheticSpec,
    generate_synthetic,
    split_protocol,
)
from .metrics import RunMetrics, summarize
from .pipeline import SingleRunResult, StageError, run_pipeline, run_single

__all__ = [
    "AblationReport",
    "ConfigError",
    "Example",
    "ExperimentConfig",
    "FeatureTableError",
    "Protocol",
    "ProtocolInfeasibleError",
    "RunMetrics",
    "SessionStream",
    "SingleRunResult",
    "StageError",
    "SyntheticSpec",
    "dump_config",
    "generate_synthetic",
    "paired_sign_test",
    "parse_config",
    "run_ablation",
    "run_pipeline",
    "run_single",
    "split_protocol",
    "summarize",
    "__version__",
]
