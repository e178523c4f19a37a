/**
 * Thin fetch client for the annotation service. Expected flows such as
 * version conflicts and schema rejections come back as values; transport
 * problems and unexpected statuses throw.
 */

import type {
  Exemplar,
  HealthResponse,
  LabelPayload,
  SampleDetail,
  SelectionResponse,
} from "./types.js";

export type SubmitResult =
  | { kind: "accepted"; version: number }
  | { kind: "conflict"; currentVersion: number }
  | { kind: "rejected"; failureKind: string; message: string };

export type ExportResult =
  | { kind: "ready"; exemplars: Exemplar[] }
  | { kind: "incomplete"; pending: string[] };

export interface AnnotationApi {
  health(): Promise<HealthResponse>;
  selection(): Promise<SelectionResponse>;
  sample(id: string): Promise<SampleDetail>;
  submitLabel(id: string, label: LabelPayload, expectedVersion: number): Promise<SubmitResult>;
  exportExemplars(): Promise<ExportResult>;
}

export function createApi(baseUrl = ""): AnnotationApi {
  async function getJson(path: string): Promise<any> {
    const res = await fetch(`${baseUrl}${path}`);
    if (!res.ok) {
      const text = await res.text();
      throw new Error(`GET ${path} failed: ${res.status} ${text}`);
    }
    return res.json();
  }

  return {
    // GET /api/health - liveness, plus whether a selection is loaded
    health() {
      return getJson("/api/health");
    },

    // GET /api/selection - selected samples in rank order, with the label schema
    selection() {
      return getJson("/api/selection");
    },

    // GET /api/samples/{id} - text, score breakdown, probe generations, current label
    sample(id: string) {
      return getJson(`/api/samples/${encodeURIComponent(id)}`);
    },

    // POST /api/samples/{id}/label - compare-and-swap on expected_version
    async submitLabel(id, label, expectedVersion) {
      const res = await fetch(`${baseUrl}/api/samples/${encodeURIComponent(id)}/label`, {
        method: "POST",
        headers: { "content-type": "application/json" },
        body: JSON.stringify({ label, expected_version: expectedVersion }),
      });
      if (res.ok) {
        const body = await res.json();
        return { kind: "accepted", version: body.version };
      }
      const text = await res.text();
      let body: any = null;
      try {
        body = JSON.parse(text);
      } catch {
        // fall through to the generic error below
      }
      if (body && body.error === "VersionConflict") {
        return { kind: "conflict", currentVersion: body.current_version };
      }
      if (body && body.error === "SchemaMismatch") {
        return { kind: "rejected", failureKind: body.failure_kind, message: body.message };
      }
      throw new Error(`POST label for ${id} failed: ${res.status} ${text}`);
    },

    // GET /api/export - exemplars in selection order once every sample is labeled
    async exportExemplars() {
      const res = await fetch(`${baseUrl}/api/export`);
      if (res.ok) {
        const body = await res.json();
        return { kind: "ready", exemplars: body.exemplars };
      }
      const text = await res.text();
      let body: any = null;
      try {
        body = JSON.parse(text);
      } catch {
        // fall through
      }
      if (body && body.error === "IncompleteSelection") {
        return { kind: "incomplete", pending: body.pending };
      }
      throw new Error(`GET /api/export failed: ${res.status} ${text}`);
    },
  };
}
