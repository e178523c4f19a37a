/**
 * State machine behind the annotation page. No DOM in here: plain data plus
 * async actions against the service API, so the submit, advance and conflict
 * flows are testable without a browser.
 *
 * The page is write-only toward labels. Scores and the selection itself are
 * fetched and displayed but never sent back.
 */

import type { AnnotationApi, SubmitResult } from "./api.js";
import type {
  Draft,
  Exemplar,
  LabelPayload,
  SampleDetail,
  SchemaInfo,
  SelectionRow,
  UiSampleView,
} from "./types.js";
import { canonicalSurface, checkLabelPayload, validateDraft } from "./validation.js";

export interface ConflictInfo {
  sampleId: string;
  currentVersion: number;
  serverLabel: LabelPayload | null;
}

export interface Banner {
  message: string;
  /** What the banner's retry button should re-run. */
  action: "load" | "submit";
}

export type Phase = "loading" | "ready" | "unreachable";

export interface AppState {
  phase: Phase;
  banner: Banner | null;
  strategy: string | null;
  schema: SchemaInfo | null;
  samples: UiSampleView[];
  currentId: string | null;
  conflict: ConflictInfo | null;
  /** Set once every sample is labeled and the export endpoint has answered. */
  exemplars: Exemplar[] | null;
}

export interface Controller {
  readonly state: AppState;
  load(): Promise<void>;
  retry(): Promise<void>;
  open(id: string): void;
  updateDraft(id: string, draft: Draft): void;
  submitCurrent(): Promise<void>;
  reloadAndMerge(): Promise<void>;
  dismissConflict(): void;
  refresh(): void;
}

function describeError(err: unknown): string {
  const detail = err instanceof Error ? err.message : String(err);
  return `cannot reach the annotation service (${detail})`;
}

function draftFrom(label: LabelPayload | null): Draft {
  if (!label) return { entities: [], relations: [] };
  return {
    entities: label.entities.map((t) => ({ ...t })),
    relations: label.relations.map((t) => ({ ...t })),
  };
}

/** Union of the server's label and the local draft, server rows first.
 * Tuple identity is canonical, so retyped whitespace does not duplicate. */
function mergeIntoDraft(server: LabelPayload, draft: Draft): Draft {
  const merged = draftFrom(server);
  const seen = new Set(
    merged.entities.map((t) => JSON.stringify(["e", t.type, canonicalSurface(t.text)])),
  );
  for (const row of draft.entities) {
    const key = JSON.stringify(["e", row.type, canonicalSurface(row.text)]);
    if (seen.has(key)) continue;
    seen.add(key);
    merged.entities.push({ ...row });
  }
  const seenRel = new Set(
    merged.relations.map((t) =>
      JSON.stringify(["r", t.type, canonicalSurface(t.head), canonicalSurface(t.tail)]),
    ),
  );
  for (const row of draft.relations) {
    const key = JSON.stringify(["r", row.type, canonicalSurface(row.head), canonicalSurface(row.tail)]);
    if (seenRel.has(key)) continue;
    seenRel.add(key);
    merged.relations.push({ ...row });
  }
  return merged;
}

export function createController(api: AnnotationApi, onChange: () => void = () => {}): Controller {
  const state: AppState = {
    phase: "loading",
    banner: null,
    strategy: null,
    schema: null,
    samples: [],
    currentId: null,
    conflict: null,
    exemplars: null,
  };

  function view(id: string): UiSampleView | undefined {
    return state.samples.find((s) => s.id === id);
  }

  function firstPending(): UiSampleView | undefined {
    return state.samples.find((s) => s.status === "pending");
  }

  function toView(row: SelectionRow, detail: SampleDetail): UiSampleView {
    const draft = draftFrom(detail.label);
    return {
      id: row.id,
      status: detail.status,
      version: detail.version,
      uTotal: detail.scores ? detail.scores.u_total : row.u_total,
      text: detail.text,
      scores: detail.scores,
      probePreview: detail.probe_preview,
      label: detail.label,
      draft,
      messages: state.schema ? validateDraft(draft, state.schema).messages : [],
    };
  }

  async function fetchExport(): Promise<void> {
    try {
      const result = await api.exportExemplars();
      if (result.kind === "ready") {
        state.exemplars = result.exemplars;
      } else {
        state.banner = {
          message: `export not ready, still pending: ${result.pending.join(", ")}`,
          action: "load",
        };
      }
    } catch (err) {
      state.banner = { message: describeError(err), action: "load" };
    }
  }

  async function load(): Promise<void> {
    state.phase = "loading";
    state.banner = null;
    onChange();
    try {
      const selection = await api.selection();
      const details = await Promise.all(selection.selected.map((row) => api.sample(row.id)));
      state.schema = selection.schema;
      state.strategy = selection.strategy;
      state.samples = selection.selected.map((row, i) => toView(row, details[i]!));
      state.phase = "ready";
      const next = firstPending();
      state.currentId = next ? next.id : null;
      if (!next && state.samples.length > 0) {
        await fetchExport();
      }
    } catch (err) {
      state.phase = "unreachable";
      state.banner = { message: describeError(err), action: "load" };
    }
    onChange();
  }

  async function applySubmitResult(
    v: UiSampleView,
    payload: LabelPayload,
    result: SubmitResult,
  ): Promise<void> {
    if (result.kind === "accepted") {
      v.status = "labeled";
      v.version = result.version;
      v.label = payload;
      state.conflict = null;
      const next = firstPending();
      state.currentId = next ? next.id : null;
      if (!next) await fetchExport();
      return;
    }
    if (result.kind === "conflict") {
      // someone else wrote first; show their label, keep the local draft intact
      let serverLabel: LabelPayload | null = null;
      let currentVersion = result.currentVersion;
      try {
        const detail = await api.sample(v.id);
        serverLabel = detail.label;
        currentVersion = detail.version;
      } catch {
        // the dialog still opens; merge will just have nothing to pull in
      }
      state.conflict = { sampleId: v.id, currentVersion, serverLabel };
      return;
    }
    v.messages = [`rejected by the service (${result.failureKind}): ${result.message}`];
  }

  async function submitCurrent(): Promise<void> {
    const v = state.currentId ? view(state.currentId) : undefined;
    if (!v || !state.schema) return;
    const report = validateDraft(v.draft, state.schema);
    v.messages = report.messages;
    if (!report.payload) {
      onChange();
      return;
    }
    // belt and braces: the exact server rules must agree before we send
    const mirrored = checkLabelPayload(report.payload, state.schema);
    if (mirrored.failure) {
      v.messages = [mirrored.failure.message];
      onChange();
      return;
    }
    state.banner = null;
    let result: SubmitResult;
    try {
      result = await api.submitLabel(v.id, report.payload, v.version);
    } catch (err) {
      // draft and version are untouched, so pressing retry resubmits safely:
      // if the lost response had in fact committed, the CAS answers conflict
      state.banner = { message: describeError(err), action: "submit" };
      onChange();
      return;
    }
    await applySubmitResult(v, report.payload, result);
    onChange();
  }

  async function reloadAndMerge(): Promise<void> {
    const conflict = state.conflict;
    if (!conflict) return;
    const v = view(conflict.sampleId);
    if (!v) return;
    const server = conflict.serverLabel ?? { entities: [], relations: [] };
    v.draft = mergeIntoDraft(server, v.draft);
    v.version = conflict.currentVersion;
    v.status = "labeled";
    v.label = conflict.serverLabel;
    if (state.schema) {
      v.messages = validateDraft(v.draft, state.schema).messages;
    }
    state.conflict = null;
    onChange();
  }

  return {
    state,
    load,

    async retry(): Promise<void> {
      const action = state.banner ? state.banner.action : "load";
      if (action === "submit") {
        await submitCurrent();
      } else {
        await load();
      }
    },

    open(id: string): void {
      if (!view(id)) return;
      state.currentId = id;
      onChange();
    },

    updateDraft(id: string, draft: Draft): void {
      const v = view(id);
      if (!v || !state.schema) return;
      v.draft = draft;
      v.messages = validateDraft(draft, state.schema).messages;
      // no onChange: the editor patches its message area in place so the
      // focused input survives; structural edits call refresh() instead
    },

    submitCurrent,
    reloadAndMerge,

    dismissConflict(): void {
      state.conflict = null;
      onChange();
    },

    refresh(): void {
      onChange();
    },
  };
}
