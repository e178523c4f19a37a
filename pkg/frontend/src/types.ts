/**
 * Wire types for the annotation service REST API, plus the view model the
 * page keeps on top of them. Field names on the wire types match the JSON
 * bodies exactly; do not rename them.
 */

export interface SchemaInfo {
  entity_types: string[];
  relation_types: string[];
}

export interface EntityTuple {
  type: string;
  text: string;
}

export interface RelationTuple {
  type: string;
  head: string;
  tail: string;
}

/** Grouped label payload, the only shape POST /api/samples/{id}/label accepts. */
export interface LabelPayload {
  entities: EntityTuple[];
  relations: RelationTuple[];
}

export type SampleStatus = "pending" | "labeled";

export interface SelectionRow {
  id: string;
  status: SampleStatus;
  version: number;
  u_total: number | null;
}

export interface SelectionResponse {
  strategy: string;
  n: number;
  schema: SchemaInfo;
  selected: SelectionRow[];
}

/** Per-sample score breakdown. u_d, u_f and u_c are pool-normalized to [0, 1]. */
export interface ScoreBreakdown {
  id: string;
  u_d_raw: number;
  r_fail: number;
  s_dis: number;
  u_f_raw: number;
  u_c_raw: number;
  k_valid: number;
  u_d: number;
  u_f: number;
  u_c: number;
  u_total: number;
}

export interface ProbePreview {
  generation: string;
  status: "valid" | "fail";
  failure_kind?: string;
}

export interface SampleDetail {
  id: string;
  text: string;
  status: SampleStatus;
  version: number;
  label: LabelPayload | null;
  scores: ScoreBreakdown | null;
  probe_preview: ProbePreview[];
}

export interface Exemplar {
  input: string;
  output: LabelPayload;
}

export interface HealthResponse {
  status: string;
  selection_loaded: boolean;
}

/**
 * Editable label rows backing the form inputs. Values are raw keystrokes;
 * validation canonicalizes whitespace before anything goes on the wire.
 */
export interface Draft {
  entities: EntityTuple[];
  relations: RelationTuple[];
}

/**
 * One queue entry: the served record plus local draft and validation state.
 * `messages` nonempty means the draft fails the schema mirror and submit
 * stays disabled.
 */
export interface UiSampleView {
  id: string;
  status: SampleStatus;
  version: number;
  uTotal: number | null;
  text: string | null;
  scores: ScoreBreakdown | null;
  probePreview: ProbePreview[];
  label: LabelPayload | null;
  draft: Draft;
  messages: string[];
}
