"""HTTP service for the expert-annotation step.

Serves the selected high-uncertainty samples with their score breakdowns and
probe previews (so the annotator can see why each sample was picked), accepts
labels with optimistic concurrency, and exports the finished exemplars in
selection order. The static annotation UI is mounted at / when a bundle
directory is provided.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from fastapi import FastAPI
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from .errors import SchemaMismatch, VersionConflict
from .model import Sample, SchemaSpec, UncertaintyScores
from .selection import SelectionResult
from .store import AnnotationStore

DEFAULT_PORT = 8787


@dataclass
class ProbePreview:
    generation: str
    status: str
    failure_kind: str | None = None

    def to_obj(self) -> dict:
        obj = {"generation": self.generation, "status": self.status}
        if self.failure_kind is not None:
            obj["failure_kind"] = self.failure_kind
        return obj


@dataclass
class ServiceState:
    schema: SchemaSpec
    store: AnnotationStore
    samples: dict[str, Sample] = field(default_factory=dict)
    selection: SelectionResult | None = None
    scores: dict[str, UncertaintyScores] = field(default_factory=dict)
    previews: dict[str, list[ProbePreview]] = field(default_factory=dict)

    def status_of(self, sample_id: str) -> str:
        return "labeled" if self.store.label_for(sample_id) is not None else "pending"


class LabelSubmission(BaseModel):
    label: dict
    expected_version: int = 0


def create_app(state: ServiceState, ui_dir: str | Path | None = None) -> FastAPI:
    app = FastAPI(title="annotation service", docs_url=None, redoc_url=None)

    def no_selection() -> JSONResponse:
        return JSONResponse(status_code=409, content={"error": "NoSelectionLoaded"})

    def unknown_sample(sample_id: str) -> JSONResponse:
        return JSONResponse(status_code=404,
                            content={"error": "UnknownSample", "sample_id": sample_id})

    @app.get("/api/health")
    def health():
        return {"status": "ok", "selection_loaded": state.selection is not None}

    @app.get("/api/selection")
    def list_selection():
        if state.selection is None:
            return no_selection()
        rows = []
        for sample_id in state.selection.selected_ids:
            scores = state.scores.get(sample_id)
            rows.append({
                "id": sample_id,
                "status": state.status_of(sample_id),
                "version": state.store.version_of(sample_id),
                "u_total": scores.u_total if scores else None,
            })
        return {
            "strategy": state.selection.strategy,
            "n": state.selection.n,
            "schema": state.schema.to_obj(),
            "selected": rows,
        }

    @app.get("/api/samples/{sample_id}")
    def get_sample(sample_id: str):
        if state.selection is None:
            return no_selection()
        if sample_id not in state.selection.selected_ids:
            return unknown_sample(sample_id)
        sample = state.samples[sample_id]
        scores = state.scores.get(sample_id)
        label = state.store.label_for(sample_id)
        return {
            "id": sample_id,
            "text": sample.text,
            "status": state.status_of(sample_id),
            "version": state.store.version_of(sample_id),
            "label": label.to_obj() if label is not None else None,
            "scores": scores.to_obj() if scores else None,
            "probe_preview": [p.to_obj() for p in state.previews.get(sample_id, [])],
        }

    @app.post("/api/samples/{sample_id}/label")
    def submit_label(sample_id: str, submission: LabelSubmission):
        if state.selection is None:
            return no_selection()
        if sample_id not in state.selection.selected_ids:
            return unknown_sample(sample_id)
        try:
            version = state.store.submit(sample_id, submission.label,
                                         submission.expected_version)
        except SchemaMismatch as exc:
            return JSONResponse(status_code=422, content={
                "error": "SchemaMismatch",
                "failure_kind": exc.failure_kind,
                "message": str(exc),
            })
        except VersionConflict as exc:
            return JSONResponse(status_code=409, content={
                "error": "VersionConflict",
                "current_version": exc.current_version,
            })
        return {"version": version, "status": "labeled"}

    @app.get("/api/export")
    def export_exemplars():
        if state.selection is None:
            return no_selection()
        pending = [sample_id for sample_id in state.selection.selected_ids
                   if state.store.label_for(sample_id) is None]
        if pending:
            return JSONResponse(status_code=409, content={
                "error": "IncompleteSelection",
                "pending": pending,
            })
        exemplars = []
        for sample_id in state.selection.selected_ids:
            label = state.store.label_for(sample_id)
            exemplars.append({
                "input": state.samples[sample_id].text,
                "output": label.to_obj(),
            })
        return {"exemplars": exemplars}

    if ui_dir is not None and Path(ui_dir).is_dir():
        app.mount("/", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app
