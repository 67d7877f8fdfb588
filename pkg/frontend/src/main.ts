// Entry point: wires the view model to the screens and polls the feed.
// Configuration is one base URL plus a bearer token, via query string
// (?base=...&token=...&role=...) or localStorage.

import { ConsoleApi } from "./api.js";
import { ConsoleModel, KindPreview } from "./model.js";
import {
  renderAlertQueue,
  renderComposer,
  renderEventLog,
  renderIncidentBoard,
  renderStatusBoard,
} from "./render.js";

function setting(name: string, fallback: string): string {
  const params = new URLSearchParams(window.location.search);
  return (
    params.get(name) ?? window.localStorage.getItem(`console.${name}`) ?? fallback
  );
}

export async function startConsole(root: HTMLElement): Promise<ConsoleModel> {
  const base = setting("base", "http://127.0.0.1:8100");
  const role = setting("role", "analyst");
  const token = setting("token", `token-${role}`);
  const model = new ConsoleModel(new ConsoleApi(base, token), role);

  let selectedIncident: string | null = null;
  let previews: KindPreview[] = [];

  async function redraw(): Promise<void> {
    root.replaceChildren();
    const header = document.createElement("header");
    header.textContent = `modelgate console - role: ${model.role}`;
    root.appendChild(header);
    if (model.lastError) {
      const banner = document.createElement("div");
      banner.className = "error-banner";
      banner.textContent = model.lastError;
      root.appendChild(banner);
    }
    root.appendChild(
      renderStatusBoard(
        model.status?.deployments ?? [],
        model.lastUpdated,
        model.connectionLost,
      ),
    );
    root.appendChild(
      renderAlertQueue(model.alertQueue, (alertId, outcome) => {
        void model.triage(alertId, outcome).then(redraw);
      }),
    );
    root.appendChild(
      renderIncidentBoard(model.incidentsByState(), (incidentId) => {
        selectedIncident = incidentId;
        void model.previewKinds(incidentId).then((p) => {
          previews = p;
          void redraw();
        });
      }),
    );
    const incident = selectedIncident
      ? model.incidentById(selectedIncident) ?? null
      : null;
    root.appendChild(
      renderComposer(
        incident,
        previews,
        incident ? model.composerEnabled(incident) : false,
        (kind) => {
          if (!selectedIncident) return;
          void model
            .submitCorrection(selectedIncident, { kind })
            .then(redraw)
            .catch((err: Error) => {
              model.lastError = err.message;
              void redraw();
            });
        },
      ),
    );
    root.appendChild(renderEventLog(model));
  }

  try {
    await model.refreshAll();
  } catch {
    // first load against a cold server; the stale banner covers it
  }
  await redraw();

  window.setInterval(() => {
    void model
      .refreshAll()
      .then(redraw)
      .catch(() => redraw());
  }, 2000);
  return model;
}

if (typeof document !== "undefined" && document.getElementById("app")) {
  void startConsole(document.getElementById("app") as HTMLElement);
}
