import json
import random

import pytest

from apie.model import ExtractionSet, ExtractionTuple, SchemaSpec
from apie.parsing import ParseOutcome, parse_output

JOINT_SCHEMA = SchemaSpec(
    entity_types=("PER", "ORG", "LOC"),
    relation_types=("Works_For", "Based_In"),
)
NER_SCHEMA = SchemaSpec(entity_types=("PER", "LOC"))

SURFACE_WORDS = [
    "Alice", "Bob", "Acme", "Globex", "Paris", "Oslo", "Marta Diaz",
    "Initech", "Lagos", "Chen Wei", "Umbrella Corp", "Quito",
]


@pytest.fixture
def joint_schema():
    return JOINT_SCHEMA


@pytest.fixture
def ner_schema():
    return NER_SCHEMA


def random_extraction_set(rng: random.Random, schema: SchemaSpec = JOINT_SCHEMA,
                          max_tuples: int = 5) -> ExtractionSet:
    tuples = []
    for _ in range(rng.randint(0, max_tuples)):
        if schema.relation_types and rng.random() < 0.4:
            tuples.append(ExtractionTuple.relation(
                rng.choice(schema.relation_types),
                rng.choice(SURFACE_WORDS),
                rng.choice(SURFACE_WORDS),
            ))
        else:
            tuples.append(ExtractionTuple.entity(
                rng.choice(schema.entity_types),
                rng.choice(SURFACE_WORDS),
            ))
    return ExtractionSet.of(tuples)


def generation_for(extractions: ExtractionSet) -> str:
    """A raw generation string that parses to the given set."""
    return json.dumps([t.to_obj() for t in extractions.sorted()], ensure_ascii=False)


GARBAGE = [
    "I could not find any entities.",
    '{"type": "PER", "text": "Bob"}',
    '[{"type": "PER"}]',
    '[{"type": "DRAGON", "text": "Bob"}]',
    '[[1, 2]]',
    '[{"type": "PER", "text": "Bob", "note": "x"}]',
]


def random_generation(rng: random.Random, schema: SchemaSpec = JOINT_SCHEMA) -> str:
    if rng.random() < 0.3:
        return rng.choice(GARBAGE)
    text = generation_for(random_extraction_set(rng, schema))
    if rng.random() < 0.3:
        text = "Sure, here is the JSON:\n" + text
    return text


def make_probe(sample_id: str, generations: list[str], schema: SchemaSpec = JOINT_SCHEMA):
    from apie.uncertainty import ProbeSet

    outcomes = tuple(parse_output(g, schema) for g in generations)
    return ProbeSet(sample_id=sample_id, generations=tuple(generations), outcomes=outcomes)


def outcome_facets(outcomes: tuple[ParseOutcome, ...]):
    """Pull the pieces the straight-line oracles consume from parse outcomes."""
    statuses = [o.status for o in outcomes]
    signatures = [
        (o.signature.length, o.signature.keyset_profile)
        for o in outcomes if o.ok
    ]
    valid_sets = [set(o.extractions) for o in outcomes if o.ok]
    return statuses, signatures, valid_sets
