"""Prompt assembly: task definition, schema instructions, exemplar block,
target input, rendered in that fixed order for both the probing stage and
final inference.

Templates are plain text files with four `### NAME` sections so users can
swap in their own instantiation; the bundled default lives in templates/.
"""

from __future__ import annotations

import json
import random
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .errors import DataError, TemplateError
from .model import (
    DEFAULT_POLICY,
    CanonicalizationPolicy,
    ExtractionSet,
    Sample,
    SchemaSpec,
)
from .parsing import serialize_extractions, validate_extraction_set

SECTION_ORDER = ("TASK", "SCHEMA", "EXEMPLARS", "TARGET")

# placeholder -> the section it must appear in, exactly once
PLACEHOLDERS = {
    "schema_instructions": "SCHEMA",
    "input": "EXEMPLARS",
    "output": "EXEMPLARS",
    "target_text": "TARGET",
}

_PLACEHOLDER_RE = re.compile(r"\{(schema_instructions|input|output|target_text)\}")


@dataclass(frozen=True)
class Exemplar:
    """One labeled demonstration embedded in a few-shot prompt."""

    input: str
    output: ExtractionSet

    def to_obj(self) -> dict:
        return {"input": self.input, "output": self.output.to_obj()}

    @classmethod
    def from_obj(cls, obj: dict, policy: CanonicalizationPolicy = DEFAULT_POLICY) -> "Exemplar":
        return cls(input=obj["input"], output=ExtractionSet.from_obj(obj["output"], policy))


@dataclass(frozen=True)
class PromptTemplate:
    task_definition: str
    schema_block: str
    exemplar_block: str
    target_block: str

    def __post_init__(self):
        sections = {
            "SCHEMA": self.schema_block,
            "EXEMPLARS": self.exemplar_block,
            "TARGET": self.target_block,
        }
        for name, section in PLACEHOLDERS.items():
            count = sections[section].count("{%s}" % name)
            if count != 1:
                raise TemplateError(
                    f"section {section} must contain {{{name}}} exactly once, found {count}")

    @classmethod
    def from_text(cls, text: str) -> "PromptTemplate":
        sections: dict[str, list[str]] = {}
        current: str | None = None
        for line in text.splitlines():
            header = re.fullmatch(r"###\s+(\w+)\s*", line)
            if header:
                name = header.group(1)
                if name not in SECTION_ORDER:
                    raise TemplateError(f"unknown template section {name!r}")
                if name in sections:
                    raise TemplateError(f"duplicate template section {name!r}")
                sections[name] = []
                current = name
                continue
            if current is None:
                if line.strip():
                    raise TemplateError("template text before the first ### section header")
                continue
            sections[current].append(line)
        missing = [name for name in SECTION_ORDER if name not in sections]
        if missing:
            raise TemplateError(f"template missing sections: {', '.join(missing)}")
        if tuple(sections) != SECTION_ORDER:
            raise TemplateError(
                f"template sections must appear in order {' '.join(SECTION_ORDER)}")
        task, schema, exemplars, target = (
            "\n".join(sections[name]).strip() for name in SECTION_ORDER)
        return cls(task_definition=task, schema_block=schema,
                   exemplar_block=exemplars, target_block=target)

    @classmethod
    def from_file(cls, path: str | Path) -> "PromptTemplate":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise TemplateError(f"cannot read template file {path}: {exc}") from exc
        return cls.from_text(text)

    @classmethod
    def default(cls) -> "PromptTemplate":
        text = resources.files("apie").joinpath("templates/default.txt").read_text("utf-8")
        return cls.from_text(text)


def _render(block: str, values: dict[str, str]) -> str:
    # single pass so placeholder-looking text inside substituted values is inert
    return _PLACEHOLDER_RE.sub(lambda m: values[m.group(1)], block)


def schema_instruction_text(schema: SchemaSpec) -> str:
    lines = [
        "Entity types: " + ", ".join(schema.entity_types) + ".",
        'Represent each entity as a JSON object with exactly the keys "type" and "text".',
    ]
    if schema.relation_types:
        lines.append("Relation types: " + ", ".join(schema.relation_types) + ".")
        lines.append('Represent each relation as a JSON object with exactly the keys '
                     '"type", "head", and "tail".')
    lines.append("If the text contains nothing to extract, output the empty list [].")
    lines.append("Output only the JSON list, with no explanation or surrounding text.")
    return "\n".join(lines)


def build_prompt(
    target: Sample,
    exemplars: list[Exemplar],
    template: PromptTemplate,
    schema: SchemaSpec,
) -> str:
    """Render the full prompt. Exemplar order is preserved exactly as given;
    an empty exemplar list omits that section entirely (the zero-shot form)."""
    for ex in exemplars:
        validate_extraction_set(ex.output, schema)
    parts = [
        template.task_definition,
        _render(template.schema_block, {"schema_instructions": schema_instruction_text(schema)}),
    ]
    for ex in exemplars:
        parts.append(_render(template.exemplar_block,
                             {"input": ex.input, "output": serialize_extractions(ex.output)}))
    parts.append(_render(template.target_block, {"target_text": target.text}))
    return "\n\n".join(part for part in parts if part)


def load_exemplars(
    path: str | Path,
    policy: CanonicalizationPolicy = DEFAULT_POLICY,
) -> list[Exemplar]:
    """Read a dataset-format JSONL file where every line must carry gold."""
    exemplars: list[Exemplar] = []
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise DataError(f"cannot read exemplar file {path}: {exc}") from exc
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
        if "gold" not in obj:
            raise DataError(f"{path}:{lineno}: exemplar line has no 'gold' labels")
        exemplars.append(Exemplar(
            input=obj["text"],
            output=ExtractionSet.from_obj(obj["gold"], policy),
        ))
    return exemplars


def seed_exemplars(
    count: int,
    seed: int,
    exemplar_file: str | Path | None = None,
    pool: list[Sample] | None = None,
) -> list[Exemplar]:
    """Demonstrations for the probing stage, before any selection exists.

    Preference order: an explicit exemplar file (first `count` lines), else a
    seeded draw from the gold-bearing pool samples.
    """
    if count == 0:
        return []
    if exemplar_file is not None:
        pool_exemplars = load_exemplars(exemplar_file)
        if len(pool_exemplars) < count:
            raise DataError(
                f"exemplar file holds {len(pool_exemplars)} items, need {count}")
        return pool_exemplars[:count]
    if pool is None:
        raise DataError("seed exemplars need an exemplar file or a pool to draw from")
    labeled = [s for s in pool if s.gold is not None]
    if len(labeled) < count:
        raise DataError(
            f"pool has {len(labeled)} gold-labeled samples, need {count} seed exemplars")
    chosen = random.Random(seed).sample(labeled, count)
    return [Exemplar(input=s.text, output=s.gold) for s in chosen]
