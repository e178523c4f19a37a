"""Strict-match micro-F1 scoring over canonicalized tuple sets.

A prediction counts only when its type and every surface string equal the
gold tuple exactly; unparsable predictions score as the empty set, missing
all gold but asserting nothing false.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import MissingGold, MissingPrediction
from .model import ENTITY, RELATION, ExtractionSet, Sample, SchemaSpec
from .parsing import ParseOutcome

TASK_KINDS = {"ner": ENTITY, "re": RELATION}


@dataclass(frozen=True)
class SampleCounts:
    sample_id: str
    tp: int
    fp: int
    fn: int
    parse_failed: bool

    def to_obj(self) -> dict:
        return {"id": self.sample_id, "tp": self.tp, "fp": self.fp,
                "fn": self.fn, "parse_failed": self.parse_failed}


@dataclass(frozen=True)
class EvalReport:
    task: str
    tp: int
    fp: int
    fn: int
    precision: float
    recall: float
    f1: float
    per_sample: tuple[SampleCounts, ...]

    def to_obj(self) -> dict:
        return {
            "task": self.task,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "tp": self.tp,
            "fp": self.fp,
            "fn": self.fn,
            "per_sample": [s.to_obj() for s in self.per_sample],
        }


def score_sample(pred: ParseOutcome, gold: ExtractionSet, task: str) -> tuple[int, int, int]:
    """(tp, fp, fn) over the task's tuple kind; a failed parse predicts ∅."""
    kind = TASK_KINDS[task]
    gold_set = set(gold.filter_kind(kind))
    if not pred.ok:
        return 0, 0, len(gold_set)
    pred_set = set(pred.extractions.filter_kind(kind))
    tp = len(pred_set & gold_set)
    return tp, len(pred_set - gold_set), len(gold_set - pred_set)


def micro_f1(task: str, per_sample: list[SampleCounts]) -> EvalReport:
    tp = sum(s.tp for s in per_sample)
    fp = sum(s.fp for s in per_sample)
    fn = sum(s.fn for s in per_sample)
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return EvalReport(task=task, tp=tp, fp=fp, fn=fn,
                      precision=precision, recall=recall, f1=f1,
                      per_sample=tuple(per_sample))


def evaluate_run(
    predictions: dict[str, ParseOutcome],
    test: list[Sample],
    schema: SchemaSpec,
) -> dict[str, EvalReport]:
    """NER report always; an RE report as well when the schema declares
    relation types. Counts for the two tasks never overlap."""
    for sample in test:
        if sample.gold is None:
            raise MissingGold(sample.id)
        if sample.id not in predictions:
            raise MissingPrediction(sample.id)

    tasks = ["ner"] + (["re"] if schema.relation_types else [])
    reports: dict[str, EvalReport] = {}
    for task in tasks:
        rows = []
        for sample in test:
            pred = predictions[sample.id]
            tp, fp, fn = score_sample(pred, sample.gold, task)
            rows.append(SampleCounts(sample_id=sample.id, tp=tp, fp=fp, fn=fn,
                                     parse_failed=not pred.ok))
        reports[task] = micro_f1(task, rows)
    return reports
