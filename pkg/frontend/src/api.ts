// Typed client for the control plane. Every screen reads and writes through
// this module only; nothing is computed client-side that the server answers.

export interface DeploymentStatus {
  model_id: string;
  state: string;
  moratorium: boolean;
  active_corrections: string[];
}

export interface StatusSnapshot {
  deployments: DeploymentStatus[];
  policy_version: number;
}

export interface PolicySummary {
  id: string;
  kind: string;
  status: string;
  scope?: { type: string; value?: string };
  params?: Record<string, unknown>;
}

export interface AlertView {
  id: string;
  trigger_id: string;
  observed_value: number;
  fired_at: number;
  severity: string;
  grade: string;
  triage: string | null;
  incident_id: string | null;
  binding_error: string | null;
  flagged_principals: string[];
}

export interface IncidentView {
  id: string;
  state: string;
  severity: string;
  opened_at: number;
  opened_by: string;
  source: string;
  linked_alerts: string[];
  corrections_applied: string[];
  containment_records: unknown[];
  remediation_records: unknown[];
  stakeholder_notices: string[];
  review: Record<string, unknown> | null;
  timeline: unknown[];
  devolutions: Record<string, string>[];
}

export interface FeedEvent {
  id: number;
  type: string;
  data: Record<string, unknown>;
}

export interface DryRunResult {
  allowed: boolean;
  detail?: string;
  devolved_from?: string | null;
}

export interface CorrectionDraft {
  template?: string;
  kind?: string;
  scope?: { type: string; value?: string };
  params?: Record<string, unknown>;
  model_id?: string;
  stage?: string;
}

export class ApiError extends Error {
  readonly status: number;
  readonly code: string;

  constructor(status: number, code: string, message: string) {
    super(message);
    this.status = status;
    this.code = code;
  }
}

async function parseError(response: Response): Promise<ApiError> {
  let code = `HTTP${response.status}`;
  let message = response.statusText;
  try {
    const body = await response.json();
    if (typeof body.error === "string") code = body.error;
    if (typeof body.detail === "string") message = body.detail;
    else if (body.detail) message = JSON.stringify(body.detail);
  } catch {
    // non-JSON error body; keep the status text
  }
  return new ApiError(response.status, code, message);
}

export class ConsoleApi {
  readonly baseUrl: string;
  private readonly token: string;

  constructor(baseUrl: string, token: string) {
    this.baseUrl = baseUrl.replace(/\/+$/, "");
    this.token = token;
  }

  private async request<T>(
    method: string,
    path: string,
    body?: unknown,
  ): Promise<T> {
    const headers: Record<string, string> = {
      Authorization: `Bearer ${this.token}`,
    };
    const init: RequestInit = { method, headers };
    if (body !== undefined) {
      headers["Content-Type"] = "application/json";
      init.body = JSON.stringify(body);
    }
    const response = await fetch(this.baseUrl + path, init);
    if (!response.ok) throw await parseError(response);
    return (await response.json()) as T;
  }

  status(): Promise<StatusSnapshot> {
    return this.request("GET", "/status");
  }

  events(cursor: number): Promise<{ events: FeedEvent[]; cursor: number }> {
    return this.request("GET", `/events?cursor=${cursor}`);
  }

  async alerts(pendingOnly = true): Promise<AlertView[]> {
    const out = await this.request<{ alerts: AlertView[] }>(
      "GET",
      `/alerts?pending=${pendingOnly}`,
    );
    return out.alerts;
  }

  triage(alertId: string, outcome: string): Promise<AlertView> {
    return this.request("POST", `/alerts/${alertId}/triage`, { outcome });
  }

  async incidents(): Promise<IncidentView[]> {
    const out = await this.request<{ incidents: IncidentView[] }>(
      "GET",
      "/incidents",
    );
    return out.incidents;
  }

  incident(id: string): Promise<IncidentView> {
    return this.request("GET", `/incidents/${id}`);
  }

  dryRunCorrection(
    incidentId: string,
    draft: CorrectionDraft,
  ): Promise<DryRunResult> {
    return this.request("POST", `/incidents/${incidentId}/corrections`, {
      ...draft,
      dry_run: true,
    });
  }

  executeCorrection(
    incidentId: string,
    draft: CorrectionDraft,
  ): Promise<{ applied_policies: string[] }> {
    return this.request("POST", `/incidents/${incidentId}/corrections`, draft);
  }

  escalate(
    incidentId: string,
    fromRole: string,
    toRole: string,
    emergencyMeeting = false,
  ): Promise<IncidentView> {
    return this.request("POST", `/incidents/${incidentId}/escalate`, {
      from_role: fromRole,
      to_role: toRole,
      emergency_meeting: emergencyMeeting,
    });
  }

  advanceIncident(incidentId: string, to: string): Promise<IncidentView> {
    return this.request("POST", `/incidents/${incidentId}/advance`, { to });
  }

  setReview(
    incidentId: string,
    review: Record<string, unknown>,
  ): Promise<IncidentView> {
    return this.request("POST", `/incidents/${incidentId}/review`, { review });
  }

  approveRedeployment(
    incidentId: string,
    approvers: string[],
    review?: Record<string, unknown>,
  ): Promise<IncidentView> {
    return this.request("POST", `/incidents/${incidentId}/redeploy-approval`, {
      approvers,
      review,
    });
  }

  async policies(statusFilter?: string): Promise<PolicySummary[]> {
    const suffix = statusFilter ? `?status_filter=${statusFilter}` : "";
    const out = await this.request<{ policies: PolicySummary[] }>(
      "GET",
      `/policies${suffix}`,
    );
    return out.policies;
  }

  revokePolicy(policyId: string): Promise<PolicySummary> {
    return this.request("DELETE", `/policies/${policyId}`);
  }

  // Drill helpers: ingest a raw monitoring event and move the virtual clock.
  ingestEvent(event: Record<string, unknown>): Promise<{ accepted: boolean }> {
    return this.request("POST", "/internal/events", event);
  }

  advanceClock(
    seconds: number,
  ): Promise<{ now: number; alerts_fired: string[] }> {
    return this.request("POST", "/internal/advance", { seconds });
  }

  infer(body: Record<string, unknown>): Promise<Record<string, unknown>> {
    return this.request("POST", "/v1/infer", body);
  }
}
