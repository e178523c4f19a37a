/** Page bootstrap: real API client, controller, rerender on every change. */

import { createApi } from "./api.js";
import { createController } from "./controller.js";
import { renderApp, type Handlers } from "./render.js";

const root = document.getElementById("app");
if (!root) {
  throw new Error("missing #app container");
}

const controller = createController(createApi(""), () => {
  renderApp(root, controller.state, handlers);
});

const handlers: Handlers = {
  retry: () => void controller.retry(),
  open: (id) => controller.open(id),
  draftEdited: (id, draft) => controller.updateDraft(id, draft),
  structureChanged: () => controller.refresh(),
  submit: () => void controller.submitCurrent(),
  reloadAndMerge: () => void controller.reloadAndMerge(),
  dismissConflict: () => controller.dismissConflict(),
};

void controller.load();
