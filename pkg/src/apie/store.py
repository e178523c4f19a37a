"""Annotation persistence: an append-only JSONL log replayed on start.

Each accepted write appends one line; current state is the last entry per
sample id. Versions give optimistic concurrency: a submit must name the
version it saw, and a mismatch is rejected so concurrent annotators never
silently overwrite each other.
"""

from __future__ import annotations

import json
import logging
import os
import threading
from pathlib import Path

from .errors import DataError, VersionConflict
from .model import DEFAULT_POLICY, CanonicalizationPolicy, ExtractionSet, SchemaSpec
from .parsing import validate_label_obj

log = logging.getLogger(__name__)


class AnnotationStore:
    def __init__(
        self,
        log_path: str | Path,
        schema: SchemaSpec,
        policy: CanonicalizationPolicy = DEFAULT_POLICY,
    ):
        self.log_path = Path(log_path)
        self.schema = schema
        self.policy = policy
        self._lock = threading.Lock()
        self._labels: dict[str, ExtractionSet] = {}
        self._versions: dict[str, int] = {}
        self._replay()

    def _replay(self) -> None:
        if not self.log_path.exists():
            return
        lines = self.log_path.read_text(encoding="utf-8").splitlines()
        for index, line in enumerate(lines):
            if not line.strip():
                continue
            try:
                entry = json.loads(line)
                label = validate_label_obj(entry["label"], self.schema, self.policy)
                sample_id = entry["sample_id"]
                version = int(entry["version"])
            except Exception as exc:
                if index == len(lines) - 1:
                    # torn final write from a crash; everything before it is intact
                    log.warning("skipping partial trailing log line: %s", exc)
                    continue
                raise DataError(
                    f"{self.log_path}:{index + 1}: corrupt annotation log entry: {exc}"
                ) from exc
            self._labels[sample_id] = label
            self._versions[sample_id] = version

    def version_of(self, sample_id: str) -> int:
        with self._lock:
            return self._versions.get(sample_id, 0)

    def label_for(self, sample_id: str) -> ExtractionSet | None:
        with self._lock:
            return self._labels.get(sample_id)

    def labeled_ids(self) -> set[str]:
        with self._lock:
            return set(self._labels)

    def submit(self, sample_id: str, label_obj: dict, expected_version: int) -> int:
        """Validate, CAS on version, append to the log, then expose in memory.
        Raises SchemaMismatch or VersionConflict; returns the new version."""
        label = validate_label_obj(label_obj, self.schema, self.policy)
        with self._lock:
            current = self._versions.get(sample_id, 0)
            if expected_version != current:
                raise VersionConflict(current)
            new_version = current + 1
            entry = {
                "sample_id": sample_id,
                "version": new_version,
                "label": label.to_obj(),
            }
            self.log_path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.log_path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(entry, ensure_ascii=False) + "\n")
                fh.flush()
                os.fsync(fh.fileno())
            self._labels[sample_id] = label
            self._versions[sample_id] = new_version
            return new_version
