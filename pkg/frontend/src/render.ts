/** DOM rendering for the annotation page. Pure functions from state to
 * elements; all behavior goes through the Handlers callbacks. */

import type { AppState, Banner, ConflictInfo } from "./controller.js";
import type { Draft, LabelPayload, SchemaInfo, UiSampleView } from "./types.js";

export interface Handlers {
  retry(): void;
  open(id: string): void;
  /** Text-level draft change. The editor patches its own message area. */
  draftEdited(id: string, draft: Draft): void;
  /** Row added or removed; triggers a full rerender. */
  structureChanged(): void;
  submit(): void;
  reloadAndMerge(): void;
  dismissConflict(): void;
}

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className = "",
  ...children: (Node | string)[]
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  node.append(...children);
  return node;
}

function button(label: string, className: string, onClick: () => void): HTMLButtonElement {
  const b = el("button", className, label);
  b.type = "button";
  b.addEventListener("click", onClick);
  return b;
}

function fmt(value: number | null | undefined): string {
  return value == null ? "?" : value.toFixed(3);
}

export function renderApp(root: HTMLElement, state: AppState, handlers: Handlers): void {
  root.textContent = "";
  root.append(renderHeader(state));
  if (state.banner) {
    root.append(renderBanner(state.banner, handlers));
  }
  if (state.phase === "loading") {
    root.append(el("p", "hint", "loading selection..."));
    return;
  }
  if (state.phase === "unreachable") {
    return; // the banner carries the story
  }
  const layout = el("div", "layout");
  layout.append(renderQueue(state, handlers));
  const current = state.samples.find((s) => s.id === state.currentId);
  if (current && state.schema) {
    layout.append(renderEditor(current, state.schema, handlers));
  } else if (state.exemplars) {
    layout.append(renderExportPanel(state.exemplars));
  }
  root.append(layout);
  if (state.conflict) {
    root.append(renderConflictDialog(state.conflict, handlers));
  }
}

function renderHeader(state: AppState): HTMLElement {
  const labeled = state.samples.filter((s) => s.status === "labeled").length;
  const header = el("header", "topbar", el("h1", "", "Annotation queue"));
  if (state.phase === "ready") {
    const meta = `${state.strategy ?? "?"} selection, ${labeled} of ${state.samples.length} labeled`;
    header.append(el("span", "progress", meta));
  }
  return header;
}

function renderBanner(banner: Banner, handlers: Handlers): HTMLElement {
  return el(
    "div",
    "banner",
    el("span", "", banner.message),
    button("Retry", "retry", () => handlers.retry()),
  );
}

// One card per selected sample, in rank order as served.
function renderQueue(state: AppState, handlers: Handlers): HTMLElement {
  const list = el("ul", "queue-list");
  for (const sample of state.samples) {
    list.append(renderCard(sample, sample.id === state.currentId, handlers));
  }
  return el("section", "queue", list);
}

function renderCard(sample: UiSampleView, active: boolean, handlers: Handlers): HTMLElement {
  const card = el("li", `card ${sample.status}${active ? " active" : ""}`);
  card.dataset["id"] = sample.id;
  card.append(
    el(
      "div",
      "card-head",
      el("span", "sample-id", sample.id),
      el("span", `badge ${sample.status}`, sample.status),
    ),
    el("div", "u-total", `u_total ${fmt(sample.uTotal)}`),
  );
  if (sample.scores) {
    const bars = el("div", "bars");
    const parts: [string, number][] = [
      ["u_d", sample.scores.u_d],
      ["u_f", sample.scores.u_f],
      ["u_c", sample.scores.u_c],
    ];
    for (const [name, value] of parts) {
      const fill = el("div", "fill");
      fill.style.width = `${(Math.max(0, Math.min(1, value)) * 100).toFixed(1)}%`;
      bars.append(
        el(
          "div",
          "bar-row",
          el("span", "bar-name", name),
          el("div", "bar", fill),
          el("span", "bar-value", value.toFixed(2)),
        ),
      );
    }
    card.append(bars);
  }
  card.addEventListener("click", () => handlers.open(sample.id));
  return card;
}

function labelSummary(label: LabelPayload | null): HTMLElement {
  const list = el("ul", "tuples");
  if (!label || (label.entities.length === 0 && label.relations.length === 0)) {
    list.append(el("li", "empty", "(no tuples)"));
    return list;
  }
  for (const t of label.entities) {
    list.append(el("li", "tuple entity", `${t.type}: ${t.text}`));
  }
  for (const t of label.relations) {
    list.append(el("li", "tuple relation", `${t.type}: ${t.head} -> ${t.tail}`));
  }
  return list;
}

function renderEditor(view: UiSampleView, schema: SchemaInfo, handlers: Handlers): HTMLElement {
  const editor = el("section", "editor");
  editor.append(
    el(
      "div",
      "editor-head",
      el("h2", "", `Sample ${view.id}`),
      el("span", "version", `version ${view.version}`),
    ),
    el("p", "sample-text", view.text ?? ""),
  );

  // the probe generations are the reason this sample was picked; show them verbatim
  if (view.probePreview.length > 0) {
    const probes = el("div", "probes", el("h3", "", "probe generations"));
    for (const p of view.probePreview) {
      const tag =
        p.status === "valid" ? el("span", "badge valid", "valid")
        : el("span", "badge fail", p.failure_kind ?? "fail");
      probes.append(el("div", "probe", tag, el("pre", "generation", p.generation)));
    }
    editor.append(probes);
  }

  const messagesEl = el("ul", "messages");
  const submitBtn = button("Submit label", "submit", () => handlers.submit());

  const refresh = () => {
    messagesEl.replaceChildren(...view.messages.map((m) => el("li", "", m)));
    submitBtn.disabled = view.messages.length > 0;
  };

  const edited = () => {
    handlers.draftEdited(view.id, view.draft);
    refresh();
  };

  editor.append(
    renderTupleRows(view, schema, "entities", edited, handlers),
  );
  if (schema.relation_types.length > 0) {
    editor.append(renderTupleRows(view, schema, "relations", edited, handlers));
  }

  refresh();
  editor.append(messagesEl, el("div", "submit-row", submitBtn));
  return editor;
}

function renderTupleRows(
  view: UiSampleView,
  schema: SchemaInfo,
  group: "entities" | "relations",
  edited: () => void,
  handlers: Handlers,
): HTMLElement {
  const types = group === "entities" ? schema.entity_types : schema.relation_types;
  const rows = group === "entities" ? view.draft.entities : view.draft.relations;
  const section = el("div", `rows ${group}`, el("h3", "", group));

  rows.forEach((row, index) => {
    const line = el("div", "row");
    line.append(typePicker(row as unknown as Record<string, string>, types, edited));
    const fields = group === "entities" ? ["text"] : ["head", "tail"];
    for (const field of fields) {
      line.append(textField(row as unknown as Record<string, string>, field, edited));
    }
    line.append(
      button("remove", "remove", () => {
        rows.splice(index, 1);
        edited();
        handlers.structureChanged();
      }),
    );
    section.append(line);
  });

  const addLabel = group === "entities" ? "add entity" : "add relation";
  section.append(
    button(addLabel, "add", () => {
      if (group === "entities") {
        view.draft.entities.push({ type: types[0] ?? "", text: "" });
      } else {
        view.draft.relations.push({ type: types[0] ?? "", head: "", tail: "" });
      }
      edited();
      handlers.structureChanged();
    }),
  );
  return section;
}

function typePicker(
  row: Record<string, string>,
  types: string[],
  edited: () => void,
): HTMLSelectElement {
  const select = document.createElement("select");
  for (const t of types) {
    const option = document.createElement("option");
    option.value = t;
    option.textContent = t;
    select.append(option);
  }
  select.value = row["type"] ?? "";
  select.addEventListener("change", () => {
    row["type"] = select.value;
    edited();
  });
  return select;
}

function textField(
  row: Record<string, string>,
  field: string,
  edited: () => void,
): HTMLInputElement {
  const input = document.createElement("input");
  input.type = "text";
  input.placeholder = field;
  input.value = row[field] ?? "";
  input.addEventListener("input", () => {
    row[field] = input.value;
    edited();
  });
  return input;
}

function renderConflictDialog(conflict: ConflictInfo, handlers: Handlers): HTMLElement {
  const dialog = el(
    "div",
    "dialog",
    el("h2", "", "Version conflict"),
    el(
      "p",
      "",
      `Someone saved version ${conflict.currentVersion} of ${conflict.sampleId} while you were editing. Their label:`,
    ),
    labelSummary(conflict.serverLabel),
    el("p", "hint", "Your draft is kept either way."),
    el(
      "div",
      "dialog-actions",
      button("Reload and merge", "merge", () => handlers.reloadAndMerge()),
      button("Keep editing mine", "dismiss", () => handlers.dismissConflict()),
    ),
  );
  return el("div", "overlay", dialog);
}

function renderExportPanel(exemplars: { input: string; output: LabelPayload }[]): HTMLElement {
  const panel = el(
    "section",
    "export",
    el("h2", "", "selection complete, export ready"),
    el("p", "hint", `${exemplars.length} exemplars in selection order`),
  );
  const list = el("ol", "exemplars");
  for (const ex of exemplars) {
    list.append(el("li", "exemplar", el("blockquote", "", ex.input), labelSummary(ex.output)));
  }
  panel.append(list);
  return panel;
}
