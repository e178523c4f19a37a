"""Uncertainty-guided exemplar selection for LLM information extraction.

Probe a model k times per unlabeled sample, score the disagreement between
generations, hand the most uncertain samples to an annotator, and fold the
fresh labels back into the few-shot prompt for final inference.
"""

from .model import (
    CanonicalizationPolicy,
    ExtractionSet,
    ExtractionTuple,
    RunConfig,
    Sample,
    SchemaSpec,
    UncertaintyScores,
    load_samples,
    load_schema,
    validate_config,
)
from .parsing import ParseOutcome, parse_output
from .uncertainty import ProbeSet, score_pool, score_probe

__version__ = "0.1.0"

__all__ = [
    "CanonicalizationPolicy",
    "ExtractionSet",
    "ExtractionTuple",
    "ParseOutcome",
    "ProbeSet",
    "RunConfig",
    "Sample",
    "SchemaSpec",
    "UncertaintyScores",
    "__version__",
    "load_samples",
    "load_schema",
    "parse_output",
    "score_pool",
    "score_probe",
    "validate_config",
]
