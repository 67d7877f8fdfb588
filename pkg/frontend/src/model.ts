// Console view model. Holds exactly what the screens render and changes
// only after a successful server response: no optimistic updates, no
// client-side authority or priority computation.

import {
  AlertView,
  ApiError,
  ConsoleApi,
  CorrectionDraft,
  DryRunResult,
  FeedEvent,
  IncidentView,
  StatusSnapshot,
} from "./api.js";

export interface KindPreview {
  kind: string;
  allowed: boolean;
  requires: string | null;
  devolvedFrom: string | null;
}

// The composer offers every kind the control plane understands; which of
// them are enabled comes exclusively from dry-run responses.
export const CORRECTION_KINDS = [
  "BlocklistPrincipal",
  "ThrottleCalls",
  "ThrottlePrompts",
  "ThrottleEndUsers",
  "ThrottleApplications",
  "SessionReset",
  "ReduceContextWindow",
  "OutputFilter",
  "ToolUseLimit",
  "CapabilityRemoval",
  "GlobalPlanningLimit",
  "AutonomyLimit",
  "ProhibitUseCase",
  "NarrowModel",
  "FineTuneLockout",
  "AllowlistMode",
  "MarketRemoval",
  "PowerOff",
  "Moratorium",
  "Decommission",
];

const TERMINAL_INCIDENT_STATES = new Set(["Closed"]);

// "... requires one of: CISO, CEO" style details name the granting roles.
export function rolesFromDetail(detail: string | undefined): string | null {
  if (!detail) return null;
  const match = detail.match(/(?:requires|one of)[^:]*:\s*(.+)$/i);
  if (match) return match[1].trim();
  const roles = ["System", "Analyst", "SOCLead", "CISO", "CEO"].filter((r) =>
    detail.includes(r),
  );
  return roles.length ? roles.join(", ") : null;
}

export class ConsoleModel {
  readonly api: ConsoleApi;
  readonly role: string;

  alertQueue: AlertView[] = [];
  incidents: IncidentView[] = [];
  status: StatusSnapshot | null = null;
  eventLog: FeedEvent[] = [];
  cursor = 0;
  lastUpdated: number | null = null;
  connectionLost = false;
  lastError: string | null = null;

  private seenEventIds = new Set<number>();

  constructor(api: ConsoleApi, role: string) {
    this.api = api;
    this.role = role;
  }

  // --- read paths -----------------------------------------------------------

  async refreshAlerts(): Promise<void> {
    this.alertQueue = await this.track(this.api.alerts(true));
  }

  async refreshIncidents(): Promise<void> {
    this.incidents = await this.track(this.api.incidents());
  }

  async refreshStatus(): Promise<void> {
    this.status = await this.track(this.api.status());
  }

  async pollEvents(): Promise<FeedEvent[]> {
    const { events, cursor } = await this.track(this.api.events(this.cursor));
    this.cursor = cursor;
    const fresh = events.filter((e) => !this.seenEventIds.has(e.id));
    for (const e of fresh) this.seenEventIds.add(e.id);
    this.eventLog.push(...fresh);
    return fresh;
  }

  async refreshAll(): Promise<void> {
    await this.refreshStatus();
    await this.refreshAlerts();
    await this.refreshIncidents();
    await this.pollEvents();
  }

  incidentsByState(): Map<string, IncidentView[]> {
    const board = new Map<string, IncidentView[]>();
    for (const incident of this.incidents) {
      const column = board.get(incident.state) ?? [];
      column.push(incident);
      board.set(incident.state, column);
    }
    return board;
  }

  incidentById(id: string): IncidentView | undefined {
    return this.incidents.find((i) => i.id === id);
  }

  composerEnabled(incident: IncidentView): boolean {
    return !TERMINAL_INCIDENT_STATES.has(incident.state);
  }

  // --- write paths ----------------------------------------------------------

  async triage(alertId: string, outcome: string): Promise<void> {
    try {
      await this.api.triage(alertId, outcome);
    } catch (err) {
      // conflict: someone else triaged it first; refresh, never mutate locally
      if (err instanceof ApiError && err.status === 409) {
        this.lastError = err.message;
        await this.refreshAlerts();
        return;
      }
      throw err;
    }
    await this.refreshAlerts();
    await this.refreshIncidents();
  }

  async previewKinds(
    incidentId: string,
    modelId?: string,
  ): Promise<KindPreview[]> {
    const previews: KindPreview[] = [];
    for (const kind of CORRECTION_KINDS) {
      const result: DryRunResult = await this.api.dryRunCorrection(incidentId, {
        kind,
        model_id: modelId,
      });
      previews.push({
        kind,
        allowed: result.allowed,
        requires: result.allowed ? null : rolesFromDetail(result.detail),
        devolvedFrom: result.devolved_from ?? null,
      });
    }
    return previews;
  }

  async previewOne(
    incidentId: string,
    draft: CorrectionDraft,
  ): Promise<KindPreview> {
    const result = await this.api.dryRunCorrection(incidentId, draft);
    return {
      kind: draft.kind ?? draft.template ?? "",
      allowed: result.allowed,
      requires: result.allowed ? null : rolesFromDetail(result.detail),
      devolvedFrom: result.devolved_from ?? null,
    };
  }

  async submitCorrection(
    incidentId: string,
    draft: CorrectionDraft,
  ): Promise<string[]> {
    const { applied_policies } = await this.api.executeCorrection(
      incidentId,
      draft,
    );
    await this.refreshIncidents();
    await this.refreshStatus();
    return applied_policies;
  }

  // --- plumbing -------------------------------------------------------------

  private async track<T>(promise: Promise<T>): Promise<T> {
    try {
      const value = await promise;
      this.connectionLost = false;
      this.lastUpdated = Date.now();
      return value;
    } catch (err) {
      if (!(err instanceof ApiError)) {
        this.connectionLost = true;
      }
      throw err;
    }
  }
}
