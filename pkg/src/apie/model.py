"""Core domain types: samples, extraction tuples/sets, schemas, run configuration.

All types are immutable value objects; they can be shared freely across
worker threads.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import TYPE_CHECKING, Iterable, Iterator

from .errors import ConfigError, DataError, EmptySurface

if TYPE_CHECKING:
    from .gateway import BackendDescriptor

ENTITY = "entity"
RELATION = "relation"

_WS_RUN = re.compile(r"\s+")


@dataclass(frozen=True)
class CanonicalizationPolicy:
    """How surface strings are normalized before matching.

    Matching is exact and case-sensitive by default; `case_fold` folds case
    on entity/relation surfaces (never on type labels).
    """

    case_fold: bool = False


DEFAULT_POLICY = CanonicalizationPolicy()


def canonicalize_surface(value: str, policy: CanonicalizationPolicy = DEFAULT_POLICY) -> str:
    out = _WS_RUN.sub(" ", value).strip()
    if not out:
        raise EmptySurface(f"surface string {value!r} is empty after trimming")
    if policy.case_fold:
        out = out.casefold()
    return out


@dataclass(frozen=True)
class ExtractionTuple:
    """A single extracted element: (type, text) for entities, (type, head, tail) for relations."""

    kind: str
    type: str
    text: str | None = None
    head: str | None = None
    tail: str | None = None

    def __post_init__(self):
        if self.kind == ENTITY:
            if self.text is None or self.head is not None or self.tail is not None:
                raise ValueError("entity tuples carry (type, text) only")
        elif self.kind == RELATION:
            if self.head is None or self.tail is None or self.text is not None:
                raise ValueError("relation tuples carry (type, head, tail) only")
        else:
            raise ValueError(f"unknown tuple kind {self.kind!r}")

    @classmethod
    def entity(cls, type: str, text: str) -> "ExtractionTuple":
        return cls(kind=ENTITY, type=type, text=text)

    @classmethod
    def relation(cls, type: str, head: str, tail: str) -> "ExtractionTuple":
        return cls(kind=RELATION, type=type, head=head, tail=tail)

    def sort_key(self) -> tuple:
        # entities before relations, then lexicographic on the surface fields
        if self.kind == ENTITY:
            return (0, self.type, self.text, "", "")
        return (1, self.type, self.head, self.tail, "")

    def to_obj(self) -> dict:
        if self.kind == ENTITY:
            return {"type": self.type, "text": self.text}
        return {"type": self.type, "head": self.head, "tail": self.tail}


def canonicalize_tuple(
    raw: ExtractionTuple, policy: CanonicalizationPolicy = DEFAULT_POLICY
) -> ExtractionTuple:
    """Trim and collapse whitespace on all surface strings; type labels stay exact."""
    if raw.kind == ENTITY:
        return ExtractionTuple.entity(raw.type, canonicalize_surface(raw.text, policy))
    return ExtractionTuple.relation(
        raw.type,
        canonicalize_surface(raw.head, policy),
        canonicalize_surface(raw.tail, policy),
    )


@dataclass(frozen=True)
class ExtractionSet:
    """Deduplicated, order-free set of extraction tuples."""

    tuples: frozenset[ExtractionTuple] = frozenset()

    @classmethod
    def of(cls, items: Iterable[ExtractionTuple]) -> "ExtractionSet":
        return cls(frozenset(items))

    @classmethod
    def canonical(
        cls, items: Iterable[ExtractionTuple], policy: CanonicalizationPolicy = DEFAULT_POLICY
    ) -> "ExtractionSet":
        return cls(frozenset(canonicalize_tuple(t, policy) for t in items))

    def __len__(self) -> int:
        return len(self.tuples)

    def __iter__(self) -> Iterator[ExtractionTuple]:
        return iter(self.sorted())

    def __contains__(self, item: ExtractionTuple) -> bool:
        return item in self.tuples

    def sorted(self) -> list[ExtractionTuple]:
        return sorted(self.tuples, key=ExtractionTuple.sort_key)

    def entities(self) -> "ExtractionSet":
        return ExtractionSet.of(t for t in self.tuples if t.kind == ENTITY)

    def relations(self) -> "ExtractionSet":
        return ExtractionSet.of(t for t in self.tuples if t.kind == RELATION)

    def filter_kind(self, kind: str) -> "ExtractionSet":
        return ExtractionSet.of(t for t in self.tuples if t.kind == kind)

    def to_obj(self) -> dict:
        return {
            "entities": [t.to_obj() for t in self.entities().sorted()],
            "relations": [t.to_obj() for t in self.relations().sorted()],
        }

    @classmethod
    def from_obj(cls, obj: dict, policy: CanonicalizationPolicy = DEFAULT_POLICY) -> "ExtractionSet":
        """Read the grouped {"entities": [...], "relations": [...]} form used by
        dataset files and annotation payloads. Tuples are canonicalized."""
        tuples: list[ExtractionTuple] = []
        for ent in obj.get("entities", []) or []:
            tuples.append(ExtractionTuple.entity(ent["type"], ent["text"]))
        for rel in obj.get("relations", []) or []:
            tuples.append(ExtractionTuple.relation(rel["type"], rel["head"], rel["tail"]))
        return cls.canonical(tuples, policy)


EMPTY_SET = ExtractionSet()


@dataclass(frozen=True)
class SchemaSpec:
    """The label vocabulary and task shape the strict parser enforces."""

    entity_types: tuple[str, ...]
    relation_types: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.entity_types:
            raise DataError("schema must declare at least one entity type")

    @property
    def task(self) -> str:
        return "joint_ner_re" if self.relation_types else "ner"

    def allows(self, t: ExtractionTuple) -> bool:
        if t.kind == ENTITY:
            return t.type in self.entity_types
        return t.type in self.relation_types

    def to_obj(self) -> dict:
        return {
            "entity_types": list(self.entity_types),
            "relation_types": list(self.relation_types),
        }

    @classmethod
    def from_obj(cls, obj: dict) -> "SchemaSpec":
        return cls(
            entity_types=tuple(obj.get("entity_types", [])),
            relation_types=tuple(obj.get("relation_types", [])),
        )


def load_schema(path: str | Path) -> SchemaSpec:
    try:
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read schema file {path}: {exc}") from exc
    return SchemaSpec.from_obj(obj)


@dataclass(frozen=True)
class Sample:
    """One pool or test unit: an id, the raw text, and an optional gold set."""

    id: str
    text: str
    gold: ExtractionSet | None = None
    split: str = "pool"

    def __post_init__(self):
        if self.split not in ("pool", "test"):
            raise ValueError(f"split must be 'pool' or 'test', got {self.split!r}")


def load_samples(
    path: str | Path,
    split: str = "pool",
    policy: CanonicalizationPolicy = DEFAULT_POLICY,
) -> list[Sample]:
    """Read a line-delimited JSON dataset file; ids must be unique, texts non-empty."""
    samples: list[Sample] = []
    seen: set[str] = set()
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise DataError(f"cannot read dataset file {path}: {exc}") from exc
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
        sid = obj.get("id")
        text = obj.get("text")
        if not isinstance(sid, str) or not sid:
            raise DataError(f"{path}:{lineno}: missing or invalid 'id'")
        if sid in seen:
            raise DataError(f"{path}:{lineno}: duplicate sample id {sid!r}")
        seen.add(sid)
        if not isinstance(text, str) or not text.strip():
            raise DataError(f"{path}:{lineno}: 'text' must be a non-empty string")
        gold = None
        if obj.get("gold") is not None:
            try:
                gold = ExtractionSet.from_obj(obj["gold"], policy)
            except (KeyError, TypeError, EmptySurface) as exc:
                raise DataError(f"{path}:{lineno}: malformed gold set: {exc}") from exc
        samples.append(Sample(id=sid, text=text, gold=gold, split=split))
    return samples


def sample_to_obj(sample: Sample) -> dict:
    obj: dict = {"id": sample.id, "text": sample.text}
    if sample.gold is not None:
        obj["gold"] = sample.gold.to_obj()
    return obj


@dataclass(frozen=True)
class RunConfig:
    """Every knob of a pipeline run; defaults follow the reference operating point."""

    k: int = 3
    temperature: float = 0.8
    alpha: float = 0.8
    beta: float = 0.1
    gamma: float = 0.1
    probe_exemplars: int = 2
    final_exemplars: int = 3
    lambda_fail: float = 0.5
    lambda_struct: float = 0.5
    normalize_levenshtein_per_pair: bool = False
    case_fold: bool = False
    strict_payload: bool = False
    strict_transport: bool = False
    final_samples: int = 1
    tie_break: str = "ascending_id"
    seed: int = 0
    strategy: str = "apie"
    backend: "BackendDescriptor | None" = None
    cache_dir: str | None = None

    @property
    def policy(self) -> CanonicalizationPolicy:
        return CanonicalizationPolicy(case_fold=self.case_fold)

    @property
    def weights(self) -> tuple[float, float, float]:
        return (self.alpha, self.beta, self.gamma)

    def to_obj(self) -> dict:
        obj: dict = {}
        for f in fields(self):
            if f.name == "backend":
                obj["backend"] = self.backend.to_obj() if self.backend else None
            else:
                obj[f.name] = getattr(self, f.name)
        return obj


_WEIGHT_EPS = 1e-12


def validate_config(cfg: RunConfig) -> RunConfig:
    """Check invariants and renormalize (alpha, beta, gamma) to sum 1.

    Idempotent: a config that already passed comes back unchanged.
    """
    if cfg.k < 2:
        raise ConfigError("k_too_small", f"k must be >= 2 (pairwise metrics undefined), got {cfg.k}")
    for name, w in (("alpha", cfg.alpha), ("beta", cfg.beta), ("gamma", cfg.gamma)):
        if w < 0:
            raise ConfigError("negative_weight", f"{name} must be >= 0, got {w}")
    total = cfg.alpha + cfg.beta + cfg.gamma
    if total == 0:
        raise ConfigError("all_weights_zero", "alpha, beta and gamma cannot all be zero")
    if cfg.lambda_fail < 0 or cfg.lambda_struct < 0 or abs(cfg.lambda_fail + cfg.lambda_struct - 1.0) > 1e-9:
        raise ConfigError(
            "invalid_lambda",
            f"lambda_fail and lambda_struct must be >= 0 and sum to 1, got "
            f"({cfg.lambda_fail}, {cfg.lambda_struct})",
        )
    if cfg.temperature < 0:
        raise ConfigError("negative_temperature", f"temperature must be >= 0, got {cfg.temperature}")
    if cfg.probe_exemplars < 0:
        raise ConfigError("bad_exemplar_count", "probe_exemplars must be >= 0")
    if cfg.final_exemplars < 1:
        raise ConfigError("bad_exemplar_count", "final_exemplars must be >= 1")
    if cfg.final_samples < 1:
        raise ConfigError("bad_exemplar_count", "final_samples must be >= 1")
    if cfg.tie_break != "ascending_id":
        raise ConfigError("unknown_tie_break", f"unsupported tie_break {cfg.tie_break!r}")
    if abs(total - 1.0) > _WEIGHT_EPS:
        cfg = replace(cfg, alpha=cfg.alpha / total, beta=cfg.beta / total, gamma=cfg.gamma / total)
    return cfg


@dataclass(frozen=True)
class UncertaintyScores:
    """Raw and pool-normalized uncertainty signals for one sample."""

    sample_id: str
    u_d_raw: float
    r_fail: float
    s_dis: float
    u_f_raw: float
    u_c_raw: float
    k_valid: int
    u_d_norm: float = 0.0
    u_f_norm: float = 0.0
    u_c_norm: float = 0.0
    u_total: float = 0.0

    def to_obj(self) -> dict:
        # key order is the scores-file wire format; keep it stable
        return {
            "id": self.sample_id,
            "u_d_raw": self.u_d_raw,
            "r_fail": self.r_fail,
            "s_dis": self.s_dis,
            "u_f_raw": self.u_f_raw,
            "u_c_raw": self.u_c_raw,
            "k_valid": self.k_valid,
            "u_d": self.u_d_norm,
            "u_f": self.u_f_norm,
            "u_c": self.u_c_norm,
            "u_total": self.u_total,
        }

    @classmethod
    def from_obj(cls, obj: dict) -> "UncertaintyScores":
        return cls(
            sample_id=obj["id"],
            u_d_raw=obj["u_d_raw"],
            r_fail=obj["r_fail"],
            s_dis=obj["s_dis"],
            u_f_raw=obj["u_f_raw"],
            u_c_raw=obj["u_c_raw"],
            k_valid=obj["k_valid"],
            u_d_norm=obj["u_d"],
            u_f_norm=obj["u_f"],
            u_c_norm=obj["u_c"],
            u_total=obj["u_total"],
        )
