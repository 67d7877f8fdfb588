// DOM rendering. Pure functions from view-model data to elements; every
// value shown comes from a control-plane response carried by the model.

import { AlertView, DeploymentStatus, IncidentView } from "./api.js";
import { ConsoleModel, KindPreview } from "./model.js";

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

// --- alert queue ------------------------------------------------------------

export function renderAlertQueue(
  alerts: AlertView[],
  onTriage: (alertId: string, outcome: string) => void,
): HTMLElement {
  const section = el("section", "alert-queue");
  section.appendChild(el("h2", undefined, "Alert queue"));
  if (alerts.length === 0) {
    section.appendChild(el("p", "empty-state", "No pending alerts."));
    return section;
  }
  const list = el("ul");
  // rendered in server priority order; the client never re-sorts
  for (const alert of alerts) {
    const item = el("li", "alert-row");
    item.dataset.alertId = alert.id;
    item.appendChild(el("span", `severity severity-${alert.severity}`, alert.severity));
    item.appendChild(el("span", "trigger", alert.trigger_id));
    item.appendChild(
      el("span", "observed", `observed=${alert.observed_value}`),
    );
    for (const outcome of ["TruePositive", "FalsePositive", "BenignPositive"]) {
      const button = el("button", "triage-button", outcome);
      button.dataset.outcome = outcome;
      button.addEventListener("click", () => onTriage(alert.id, outcome));
      item.appendChild(button);
    }
    list.appendChild(item);
  }
  section.appendChild(list);
  return section;
}

// --- incident board ---------------------------------------------------------

const BOARD_COLUMNS = [
  "Open",
  "Analyzing",
  "Executing",
  "Remediating",
  "Recovering",
  "UnderReview",
  "Closed",
];

export function renderIncidentBoard(
  board: Map<string, IncidentView[]>,
  onSelect: (incidentId: string) => void,
): HTMLElement {
  const section = el("section", "incident-board");
  section.appendChild(el("h2", undefined, "Incidents"));
  const columns = el("div", "board-columns");
  for (const state of BOARD_COLUMNS) {
    const column = el("div", "board-column");
    column.dataset.state = state;
    column.appendChild(el("h3", undefined, state));
    for (const incident of board.get(state) ?? []) {
      const card = el("div", "incident-card");
      card.dataset.incidentId = incident.id;
      card.appendChild(el("strong", undefined, incident.id));
      card.appendChild(el("span", "severity", incident.severity));
      card.appendChild(
        el("span", "corrections",
          `${incident.corrections_applied.length} corrections`),
      );
      card.addEventListener("click", () => onSelect(incident.id));
      column.appendChild(card);
    }
    columns.appendChild(column);
  }
  section.appendChild(columns);
  return section;
}

// --- correction composer ----------------------------------------------------

export function renderComposer(
  incident: IncidentView | null,
  previews: KindPreview[],
  enabled: boolean,
  onSubmit: (kind: string) => void,
): HTMLElement {
  const section = el("section", "composer");
  section.appendChild(el("h2", undefined, "Correction composer"));
  if (!incident) {
    section.appendChild(el("p", "empty-state", "Select an incident."));
    return section;
  }
  section.appendChild(el("p", "target", `Incident ${incident.id} (${incident.state})`));
  if (!enabled) {
    const notice = el("p", "composer-disabled",
      "Incident is closed; corrections are disabled.");
    section.appendChild(notice);
    return section;
  }
  const list = el("ul", "kind-list");
  for (const preview of previews) {
    const item = el("li", "kind-row");
    item.dataset.kind = preview.kind;
    const button = el("button", "kind-button", preview.kind);
    button.disabled = !preview.allowed;
    if (preview.allowed) {
      button.addEventListener("click", () => onSubmit(preview.kind));
      if (preview.devolvedFrom) {
        item.appendChild(
          el("span", "devolved", `devolved from ${preview.devolvedFrom}`),
        );
      }
    }
    item.prepend(button);
    if (!preview.allowed && preview.requires) {
      item.appendChild(el("span", "requires", `requires: ${preview.requires}`));
    }
    list.appendChild(item);
  }
  section.appendChild(list);
  return section;
}

// --- status board -----------------------------------------------------------

export function renderStatusBoard(
  deployments: DeploymentStatus[],
  lastUpdated: number | null,
  connectionLost: boolean,
): HTMLElement {
  const section = el("section", "status-board");
  section.appendChild(el("h2", undefined, "Service status"));
  if (connectionLost) {
    const when =
      lastUpdated !== null ? new Date(lastUpdated).toISOString() : "never";
    section.appendChild(
      el("div", "stale-banner", `Connection lost; showing data from ${when}.`),
    );
  }
  const table = el("table");
  const head = el("tr");
  for (const label of ["Model", "State", "Moratorium", "Active corrections"]) {
    head.appendChild(el("th", undefined, label));
  }
  table.appendChild(head);
  for (const d of deployments) {
    const row = el("tr", "deployment-row");
    row.dataset.modelId = d.model_id;
    row.appendChild(el("td", undefined, d.model_id));
    row.appendChild(el("td", `state state-${d.state}`, d.state));
    row.appendChild(el("td", undefined, d.moratorium ? "yes" : "no"));
    row.appendChild(el("td", undefined, String(d.active_corrections.length)));
    table.appendChild(row);
  }
  section.appendChild(table);
  return section;
}

// --- event log --------------------------------------------------------------

export function renderEventLog(model: ConsoleModel): HTMLElement {
  const section = el("section", "event-log");
  section.appendChild(el("h2", undefined, "Event feed"));
  const list = el("ul");
  for (const event of model.eventLog.slice(-50)) {
    const item = el("li", "event-row", `#${event.id} ${event.type}`);
    item.dataset.eventId = String(event.id);
    list.appendChild(item);
  }
  section.appendChild(list);
  return section;
}
