"""Strict parsing and validation of model generations against the output schema.

Failures are data, not exceptions: every malformed generation maps to exactly
one failure kind, which downstream feeds into the parsing-failure rate.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from .errors import ContractViolation, SchemaMismatch
from .model import (
    DEFAULT_POLICY,
    ENTITY,
    RELATION,
    CanonicalizationPolicy,
    ExtractionSet,
    ExtractionTuple,
    SchemaSpec,
    canonicalize_tuple,
)

FAILURE_KINDS = (
    "not_json",
    "not_a_list",
    "element_not_object",
    "missing_required_key",
    "extra_unknown_key",
    "wrong_value_type",
    "unknown_label",
)

ENTITY_KEYS = frozenset({"type", "text"})
RELATION_KEYS = frozenset({"type", "head", "tail"})


@dataclass(frozen=True)
class StructSignature:
    """Shape of a parsed generation: list length plus the multiset of per-object key-sets."""

    length: int
    keyset_profile: tuple[tuple[str, ...], ...]


@dataclass(frozen=True)
class ParseOutcome:
    status: str  # "valid" | "fail"
    failure_kind: str | None = None
    extractions: ExtractionSet | None = None
    signature: StructSignature | None = None

    @property
    def ok(self) -> bool:
        return self.status == "valid"

    def to_obj(self) -> dict:
        if not self.ok:
            return {"status": "fail", "failure_kind": self.failure_kind}
        return {
            "status": "valid",
            "extractions": self.extractions.to_obj(),
            "signature": {
                "length": self.signature.length,
                "keyset_profile": [list(ks) for ks in self.signature.keyset_profile],
            },
        }

    @classmethod
    def from_obj(cls, obj: dict) -> "ParseOutcome":
        if obj["status"] == "fail":
            return cls(status="fail", failure_kind=obj["failure_kind"])
        sig = obj["signature"]
        return cls(
            status="valid",
            extractions=ExtractionSet.from_obj(obj["extractions"]),
            signature=StructSignature(
                length=sig["length"],
                keyset_profile=tuple(tuple(ks) for ks in sig["keyset_profile"]),
            ),
        )


def _fail(kind: str) -> ParseOutcome:
    return ParseOutcome(status="fail", failure_kind=kind)


def extract_json_payload(raw: str) -> str | None:
    """Return the first bracket-balanced substring starting at a `[`, through its
    matching close bracket; string-aware so brackets inside JSON strings don't count.
    """
    starts = [i for i, ch in enumerate(raw) if ch == "["]
    for start in starts:
        depth = 0
        in_string = False
        i = start
        while i < len(raw):
            ch = raw[i]
            if in_string:
                if ch == "\\":
                    i += 2
                    continue
                if ch == '"':
                    in_string = False
            elif ch == '"':
                in_string = True
            elif ch == "[":
                depth += 1
            elif ch == "]":
                depth -= 1
                if depth == 0:
                    return raw[start : i + 1]
            i += 1
    return None


def _element_tuple(
    obj: dict, schema: SchemaSpec, policy: CanonicalizationPolicy
) -> tuple[ExtractionTuple | None, str | None]:
    """Validate one list element; return (tuple, None) or (None, failure_kind)."""
    keys = set(obj)
    if keys == ENTITY_KEYS:
        kind = ENTITY
    elif keys == RELATION_KEYS:
        kind = RELATION
    elif keys >= ENTITY_KEYS or keys >= RELATION_KEYS:
        return None, "extra_unknown_key"
    else:
        return None, "missing_required_key"
    for value in obj.values():
        if not isinstance(value, str):
            return None, "wrong_value_type"
    surfaces = [obj["text"]] if kind == ENTITY else [obj["head"], obj["tail"]]
    if any(not s.strip() for s in surfaces):
        # empty-after-trim surfaces are rejected as bad values, not silently dropped
        return None, "wrong_value_type"
    label = obj["type"]
    if kind == ENTITY:
        if label not in schema.entity_types:
            return None, "unknown_label"
        raw_tuple = ExtractionTuple.entity(label, obj["text"])
    else:
        if label not in schema.relation_types:
            return None, "unknown_label"
        raw_tuple = ExtractionTuple.relation(label, obj["head"], obj["tail"])
    return canonicalize_tuple(raw_tuple, policy), None


def parse_output(
    raw: str,
    schema: SchemaSpec,
    policy: CanonicalizationPolicy = DEFAULT_POLICY,
    strict_payload: bool = False,
) -> ParseOutcome:
    """Parse one generation into a canonical ExtractionSet, or a single failure kind.

    With strict_payload the raw text must itself be the JSON document; by default
    a JSON list is salvaged out of surrounding prose or code fences first.
    """
    payload = raw if strict_payload else extract_json_payload(raw)
    if payload is None:
        return _fail("not_json")
    try:
        data = json.loads(payload)
    except ValueError:
        return _fail("not_json")
    if not isinstance(data, list):
        return _fail("not_a_list")
    keysets: list[tuple[str, ...]] = []
    tuples: list[ExtractionTuple] = []
    for element in data:
        if not isinstance(element, dict):
            return _fail("element_not_object")
        keysets.append(tuple(sorted(element)))
        extraction, failure = _element_tuple(element, schema, policy)
        if failure is not None:
            return _fail(failure)
        tuples.append(extraction)
    signature = StructSignature(length=len(data), keyset_profile=tuple(sorted(keysets)))
    return ParseOutcome(status="valid", extractions=ExtractionSet.of(tuples), signature=signature)


def structural_signature(outcome: ParseOutcome) -> StructSignature:
    if not outcome.ok:
        raise ContractViolation("structural_signature requires a valid ParseOutcome")
    return outcome.signature


def serialize_extractions(extractions: ExtractionSet) -> str:
    """Canonical text form: entities before relations, lexicographic within each,
    fixed key order, no insignificant whitespace. Round-trips through parse_output.
    """
    return json.dumps(
        [t.to_obj() for t in extractions.sorted()],
        separators=(",", ":"),
        ensure_ascii=False,
    )


def validate_extraction_set(extractions: ExtractionSet, schema: SchemaSpec) -> None:
    """Raise SchemaMismatch if any tuple's label is outside the schema."""
    for t in extractions.sorted():
        if not schema.allows(t):
            raise SchemaMismatch("unknown_label", f"label {t.type!r} is not in the schema")


def validate_label_obj(
    obj, schema: SchemaSpec, policy: CanonicalizationPolicy = DEFAULT_POLICY
) -> ExtractionSet:
    """Validate a grouped label payload {"entities": [...], "relations": [...]}
    with the same per-element rules the generation parser applies.

    Returns the canonical ExtractionSet or raises SchemaMismatch carrying the
    first failure kind encountered.
    """
    if not isinstance(obj, dict):
        raise SchemaMismatch("not_json", "label must be a JSON object")
    unknown = set(obj) - {"entities", "relations"}
    if unknown:
        raise SchemaMismatch("extra_unknown_key", f"unexpected label keys: {sorted(unknown)}")
    tuples: list[ExtractionTuple] = []
    for group, required in (("entities", ENTITY_KEYS), ("relations", RELATION_KEYS)):
        items = obj.get(group) or []
        if not isinstance(items, list):
            raise SchemaMismatch("not_a_list", f"label {group!r} must be a list")
        for element in items:
            if not isinstance(element, dict):
                raise SchemaMismatch("element_not_object", f"{group} elements must be objects")
            keys = set(element)
            if keys != required:
                # the group fixes which shape is required, unlike the flat list form
                kind = "extra_unknown_key" if keys > required else "missing_required_key"
                raise SchemaMismatch(kind, f"{group} element has keys {sorted(keys)}")
            extraction, failure = _element_tuple(element, schema, policy)
            if failure is not None:
                raise SchemaMismatch(failure)
            tuples.append(extraction)
    return ExtractionSet.of(tuples)
