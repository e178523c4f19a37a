/**
 * Client-side mirror of the service's label validation.
 *
 * Two entry points with different jobs. `checkLabelPayload` replays the
 * server's checks element by element in the same order, reporting the first
 * failure kind exactly as the 422 body would. `validateDraft` walks the
 * editor rows instead, collecting one inline message per problem so every
 * broken field can be flagged at once. A draft that passes validateDraft
 * always yields a payload that passes checkLabelPayload, and therefore the
 * server.
 */

import type { Draft, EntityTuple, LabelPayload, RelationTuple, SchemaInfo } from "./types.js";

export const FAILURE_KINDS = [
  "not_json",
  "not_a_list",
  "element_not_object",
  "missing_required_key",
  "extra_unknown_key",
  "wrong_value_type",
  "unknown_label",
] as const;

export type FailureKind = (typeof FAILURE_KINDS)[number];

export interface PayloadFailure {
  kind: FailureKind;
  message: string;
}

export interface PayloadCheck {
  payload: LabelPayload | null;
  failure: PayloadFailure | null;
}

export interface DraftReport {
  messages: string[];
  payload: LabelPayload | null;
}

const ENTITY_KEYS = ["type", "text"];
const RELATION_KEYS = ["type", "head", "tail"];

/** Collapse whitespace runs to single spaces and trim; the server's canonical surface form. */
export function canonicalSurface(value: string): string {
  return value.replace(/\s+/g, " ").trim();
}

function isPlainObject(value: unknown): value is Record<string, unknown> {
  return typeof value === "object" && value !== null && !Array.isArray(value);
}

// The server reads each group with a truthiness check, so JSON's empty and
// false-y values (null, false, 0, "", [], {}) all mean "no tuples here".
// Anything else that is not an array is a not_a_list failure.
function groupItems(value: unknown): unknown[] | null {
  if (Array.isArray(value)) return value;
  if (value == null || value === false || value === 0 || value === "") return [];
  if (isPlainObject(value) && Object.keys(value).length === 0) return [];
  return null;
}

function checkElement(
  element: unknown,
  group: "entities" | "relations",
  schema: SchemaInfo,
): PayloadFailure | null {
  if (!isPlainObject(element)) {
    return { kind: "element_not_object", message: `${group} elements must be objects` };
  }
  const required = group === "entities" ? ENTITY_KEYS : RELATION_KEYS;
  const keys = Object.keys(element);
  const missing = required.filter((k) => !keys.includes(k));
  const extra = keys.filter((k) => !required.includes(k));
  if (missing.length > 0 || extra.length > 0) {
    // the group fixes which shape is required
    const kind = missing.length > 0 ? "missing_required_key" : "extra_unknown_key";
    return { kind, message: `${group} element has keys [${[...keys].sort().join(", ")}]` };
  }
  for (const key of required) {
    if (typeof element[key] !== "string") {
      return { kind: "wrong_value_type", message: `${group} element ${key} must be a string` };
    }
  }
  // empty-after-trim surfaces are bad values, not silent drops
  const surfaces = group === "entities" ? ["text"] : ["head", "tail"];
  for (const key of surfaces) {
    if (!(element[key] as string).trim()) {
      return { kind: "wrong_value_type", message: `${group} element ${key} is empty` };
    }
  }
  const label = element["type"] as string;
  const known = group === "entities" ? schema.entity_types : schema.relation_types;
  if (!known.includes(label)) {
    const noun = group === "entities" ? "entity" : "relation";
    return { kind: "unknown_label", message: `unknown ${noun} type "${label}"` };
  }
  return null;
}

function entityKey(t: EntityTuple): string {
  return JSON.stringify(["e", t.type, canonicalSurface(t.text)]);
}

function relationKey(t: RelationTuple): string {
  return JSON.stringify(["r", t.type, canonicalSurface(t.head), canonicalSurface(t.tail)]);
}

/** Drop repeated tuples, keeping first occurrences. Comparison is on canonical surfaces. */
export function dedupeLabel(payload: LabelPayload): LabelPayload {
  const seen = new Set<string>();
  const keep = <T,>(items: T[], key: (t: T) => string): T[] =>
    items.filter((t) => {
      const k = key(t);
      if (seen.has(k)) return false;
      seen.add(k);
      return true;
    });
  return {
    entities: keep(payload.entities, entityKey),
    relations: keep(payload.relations, relationKey),
  };
}

/**
 * Apply the server's validation rules to an arbitrary payload object. On
 * success the returned payload is canonical: surfaces trimmed and collapsed,
 * duplicates dropped.
 */
export function checkLabelPayload(obj: unknown, schema: SchemaInfo): PayloadCheck {
  const fail = (kind: FailureKind, message: string): PayloadCheck => ({
    payload: null,
    failure: { kind, message },
  });
  if (!isPlainObject(obj)) {
    return fail("not_json", "label must be a JSON object");
  }
  const unknown = Object.keys(obj).filter((k) => k !== "entities" && k !== "relations");
  if (unknown.length > 0) {
    return fail("extra_unknown_key", `unexpected label keys: [${unknown.sort().join(", ")}]`);
  }
  const entities: EntityTuple[] = [];
  const relations: RelationTuple[] = [];
  for (const group of ["entities", "relations"] as const) {
    const items = groupItems(obj[group]);
    if (items === null) {
      return fail("not_a_list", `label ${group} must be a list`);
    }
    for (const element of items) {
      const failure = checkElement(element, group, schema);
      if (failure) return { payload: null, failure };
      const fields = element as Record<string, string>;
      if (group === "entities") {
        entities.push({ type: fields["type"]!, text: canonicalSurface(fields["text"]!) });
      } else {
        relations.push({
          type: fields["type"]!,
          head: canonicalSurface(fields["head"]!),
          tail: canonicalSurface(fields["tail"]!),
        });
      }
    }
  }
  return { payload: dedupeLabel({ entities, relations }), failure: null };
}

/**
 * Validate editor rows and build the canonical payload. Messages carry row
 * positions so they can sit inline next to the offending inputs.
 */
export function validateDraft(draft: Draft, schema: SchemaInfo): DraftReport {
  const messages: string[] = [];
  draft.entities.forEach((row, i) => {
    const where = `entity ${i + 1}`;
    if (!schema.entity_types.includes(row.type)) {
      messages.push(`${where}: unknown entity type "${row.type}"`);
    }
    if (!row.text.trim()) {
      messages.push(`${where}: text is empty`);
    }
  });
  draft.relations.forEach((row, i) => {
    const where = `relation ${i + 1}`;
    if (!schema.relation_types.includes(row.type)) {
      messages.push(`${where}: unknown relation type "${row.type}"`);
    }
    if (!row.head.trim()) {
      messages.push(`${where}: head is empty`);
    }
    if (!row.tail.trim()) {
      messages.push(`${where}: tail is empty`);
    }
  });
  if (messages.length > 0) {
    return { messages, payload: null };
  }
  const payload = dedupeLabel({
    entities: draft.entities.map((r) => ({ type: r.type, text: canonicalSurface(r.text) })),
    relations: draft.relations.map((r) => ({
      type: r.type,
      head: canonicalSurface(r.head),
      tail: canonicalSurface(r.tail),
    })),
  });
  return { messages: [], payload };
}
