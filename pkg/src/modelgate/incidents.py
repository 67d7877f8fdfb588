"""Incident lifecycle state machine, authority enforcement, and playbooks."""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

from .authority import AuthorityMatrix, EmergencyClause, Role
from .errors import (
    DanglingReference,
    GradeGateViolation,
    IllegalState,
    InsufficientApprovers,
    InvalidChainStep,
    ParseError,
    ReviewMissing,
    ReviewNotApproved,
    UnauthorizedActor,
    UnknownIncident,
    UnknownSource,
)
from .monitor import Binding, Grade, Severity, Threshold, Trigger
from .policy import (
    CorrectionKind,
    DeployState,
    Scope,
    ScopeType,
    Tier,
    validate_params,
)


class IncidentState(str, Enum):
    Open = "Open"
    Analyzing = "Analyzing"
    Executing = "Executing"
    Contained = "Contained"
    Remediating = "Remediating"
    Recovering = "Recovering"
    UnderReview = "UnderReview"
    Closed = "Closed"


# Legal transitions; Executing is reachable directly from Open so automatic
# bindings can act without an analysis step, and Contained is optional.
LEGAL_TRANSITIONS: dict[IncidentState, frozenset] = {
    IncidentState.Open: frozenset({IncidentState.Analyzing, IncidentState.Executing}),
    IncidentState.Analyzing: frozenset({IncidentState.Executing}),
    IncidentState.Executing: frozenset({IncidentState.Contained, IncidentState.Remediating}),
    IncidentState.Contained: frozenset({IncidentState.Remediating}),
    IncidentState.Remediating: frozenset({IncidentState.Recovering}),
    IncidentState.Recovering: frozenset({IncidentState.UnderReview}),
    IncidentState.UnderReview: frozenset({IncidentState.Closed}),
    IncidentState.Closed: frozenset(),
}

CORRECTION_STATES = frozenset({
    IncidentState.Open, IncidentState.Analyzing,
    IncidentState.Executing, IncidentState.Remediating,
})

# Only code-red triggers may auto-bind these heavyweight corrections.
CODE_RED_ONLY_KINDS = frozenset({
    CorrectionKind.MarketRemoval, CorrectionKind.PowerOff, CorrectionKind.AllowlistMode,
})


@dataclass
class AfterActionReview:
    root_cause: str = ""
    root_cause_category: str = "unknown"
    why_not_caught_earlier: str = ""
    lessons: list = field(default_factory=list)
    threat_model_updates: list = field(default_factory=list)
    reviewed_by: list = field(default_factory=list)
    approved: bool = False
    advisory_notes: list = field(default_factory=list)

    def __post_init__(self):
        if self.approved and (not self.root_cause or not self.why_not_caught_earlier):
            raise ParseError(
                "approved review requires root_cause and why_not_caught_earlier")

    def to_dict(self) -> dict:
        return {
            "root_cause": self.root_cause,
            "root_cause_category": self.root_cause_category,
            "why_not_caught_earlier": self.why_not_caught_earlier,
            "lessons": list(self.lessons),
            "threat_model_updates": list(self.threat_model_updates),
            "reviewed_by": list(self.reviewed_by),
            "approved": self.approved,
            "advisory_notes": list(self.advisory_notes),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AfterActionReview":
        return cls(
            root_cause=d.get("root_cause", ""),
            root_cause_category=d.get("root_cause_category", "unknown"),
            why_not_caught_earlier=d.get("why_not_caught_earlier", ""),
            lessons=list(d.get("lessons", [])),
            threat_model_updates=list(d.get("threat_model_updates", [])),
            reviewed_by=list(d.get("reviewed_by", [])),
            approved=bool(d.get("approved", False)),
            advisory_notes=list(d.get("advisory_notes", [])),
        )


@dataclass
class Incident:
    id: str
    state: IncidentState
    severity: Severity
    opened_at: float
    opened_by: str
    source: str  # alert id or "manual:<note>"
    linked_alerts: list = field(default_factory=list)
    corrections_applied: list = field(default_factory=list)
    containment_records: list = field(default_factory=list)
    remediation_records: list = field(default_factory=list)
    stakeholder_notices: list = field(default_factory=list)
    review: Optional[AfterActionReview] = None
    timeline: list = field(default_factory=list)
    pending_escalations: list = field(default_factory=list)  # (role, at), unacked
    devolutions: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "state": self.state.value,
            "severity": self.severity.name,
            "opened_at": self.opened_at,
            "opened_by": self.opened_by,
            "source": self.source,
            "linked_alerts": list(self.linked_alerts),
            "corrections_applied": list(self.corrections_applied),
            "containment_records": list(self.containment_records),
            "remediation_records": list(self.remediation_records),
            "stakeholder_notices": list(self.stakeholder_notices),
            "review": self.review.to_dict() if self.review else None,
            "timeline": list(self.timeline),
            "devolutions": list(self.devolutions),
        }


@dataclass(frozen=True)
class CorrectionTemplate:
    id: str
    kind: CorrectionKind
    scope: Scope
    params: dict
    stage: str = "containment"  # containment | remediation
    scope_mode: str = "fixed"   # fixed | flagged_principals
    auto_incident: bool = False
    severity: Severity = Severity.Critical


@dataclass(frozen=True)
class FallbackPlanDef:
    principal_id: str
    route: str  # PreviousModelVersion | NonAIStub | HumanOperatorQueue
    target_model: Optional[str] = None
    agreed_in_contract: bool = True


@dataclass
class RedeployRequirements:
    min_approvers: int = 1
    roles: list = field(default_factory=lambda: [Role.CISO, Role.CEO])
    external_signoff: bool = False


@dataclass
class Playbook:
    id: str
    triggers: list
    templates: dict[str, CorrectionTemplate]
    authority: AuthorityMatrix
    escalation: list  # ordered [(Role, contact)] bottom-up
    fallbacks: dict[str, FallbackPlanDef]
    redeploy: RedeployRequirements
    notification: dict = field(default_factory=dict)
    stakeholders: dict = field(default_factory=dict)
    sla: dict = field(default_factory=dict)

    def escalation_roles(self) -> list:
        return [role for role, _ in self.escalation]


def _parse_authority(doc: dict) -> AuthorityMatrix:
    grants_doc = doc.get("grants") or {}
    grants: dict[Role, frozenset] = {}
    for role_name, kinds in grants_doc.items():
        role = Role.parse(role_name)
        try:
            grants[role] = frozenset(CorrectionKind(k) for k in kinds)
        except ValueError as e:
            raise ParseError(f"authority grants for {role_name}: {e}")
    emergency_doc = doc.get("emergency") or {}
    emergency = EmergencyClause(
        enabled=bool(emergency_doc.get("enabled", False)),
        unavailable_timeout_s=float(emergency_doc.get("unavailable_timeout_s", 1800)),
        fallback_role=Role.parse(emergency_doc.get("fallback_role", "SOCLead")),
        kinds=frozenset(CorrectionKind(k) for k in emergency_doc.get("kinds", [])),
    )
    matrix = AuthorityMatrix(grants=grants, emergency=emergency)
    human_union = set()
    for role in (Role.Analyst, Role.SOCLead, Role.CISO, Role.CEO):
        human_union |= matrix.grants.get(role, frozenset())
    missing = set(CorrectionKind) - human_union
    if missing:
        raise ParseError(
            "every correction kind needs at least one human grant; missing: "
            + ", ".join(sorted(k.value for k in missing)))
    return matrix


def load_playbook(document: dict, principals: Optional[dict] = None) -> Playbook:
    """Parse and cross-validate a playbook document; rejects atomically."""
    if not isinstance(document, dict):
        raise ParseError("playbook document must be a mapping")
    pb_id = document.get("id")
    if not pb_id:
        raise ParseError("playbook requires an id")

    templates: dict[str, CorrectionTemplate] = {}
    for tid, tdoc in (document.get("templates") or {}).items():
        try:
            kind = CorrectionKind(tdoc["kind"])
        except (KeyError, ValueError) as e:
            raise ParseError(f"template {tid}: {e}")
        params = dict(tdoc.get("params") or {})
        scope_mode = tdoc.get("scope_mode", "fixed")
        if scope_mode == "fixed":
            validate_params(kind, params)
        templates[tid] = CorrectionTemplate(
            id=tid, kind=kind,
            scope=Scope.from_dict(tdoc.get("scope") or {"type": "Global"}),
            params=params,
            stage=tdoc.get("stage", "containment"),
            scope_mode=scope_mode,
            auto_incident=bool(tdoc.get("auto_incident", False)),
            severity=Severity.parse(tdoc.get("severity", "Critical")),
        )

    triggers: list[Trigger] = []
    for tdoc in document.get("triggers") or []:
        try:
            binding_doc = tdoc.get("binding") or {"type": "AlertOnly"}
            binding = Binding(
                type=binding_doc.get("type", "AlertOnly"),
                template=binding_doc.get("template"),
                playbook=binding_doc.get("playbook"),
            )
            trig = Trigger(
                id=tdoc["id"],
                metric=tdoc["metric"],
                window_s=float(tdoc["window_s"]),
                threshold=Threshold.from_dict(tdoc["threshold"]),
                min_samples=int(tdoc.get("min_samples", 1)),
                severity=Severity.parse(tdoc.get("severity", "Medium")),
                grade=Grade.parse(tdoc.get("grade", "Gentle")),
                binding=binding,
                deployment=tdoc.get("deployment"),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise ParseError(f"trigger document: {e}")
        if binding.type not in ("AlertOnly", "AutoCorrection", "AutoIncident"):
            raise ParseError(f"trigger {trig.id}: unknown binding {binding.type!r}")
        if binding.type == "AutoCorrection":
            if binding.template not in templates:
                raise DanglingReference(
                    f"trigger {trig.id} references unknown template {binding.template!r}")
            template = templates[binding.template]
            if template.kind in CODE_RED_ONLY_KINDS and trig.grade != Grade.CodeRed:
                raise GradeGateViolation(
                    f"trigger {trig.id}: {template.kind.value} requires grade CodeRed")
        triggers.append(trig)

    authority = _parse_authority(document.get("authority") or {})
    # automatic activation must not exceed System's grants
    for trig in triggers:
        if trig.binding.type == "AutoCorrection":
            template = templates[trig.binding.template]
            if not authority.allows(Role.System, template.kind):
                raise GradeGateViolation(
                    f"trigger {trig.id}: System lacks the {template.kind.value} grant")

    escalation = []
    for entry in document.get("escalation") or []:
        escalation.append((Role.parse(entry["role"]), entry.get("contact", "")))
    if not escalation:
        raise ParseError("escalation chain must be non-empty")

    fallbacks: dict[str, FallbackPlanDef] = {}
    for pid, fdoc in (document.get("fallbacks") or {}).items():
        route = fdoc.get("route")
        if route not in ("PreviousModelVersion", "NonAIStub", "HumanOperatorQueue"):
            raise ParseError(f"fallback for {pid}: unknown route {route!r}")
        if route == "PreviousModelVersion" and not fdoc.get("target_model"):
            raise DanglingReference(f"fallback for {pid}: target_model required")
        if principals is not None:
            principal = principals.get(pid)
            if principal is None:
                raise DanglingReference(f"fallback names unknown principal {pid!r}")
            if principal.tier != Tier.SafetyCritical:
                raise ParseError(f"fallback for {pid}: plans exist only for SafetyCritical")
        fallbacks[pid] = FallbackPlanDef(
            principal_id=pid, route=route,
            target_model=fdoc.get("target_model"),
            agreed_in_contract=bool(fdoc.get("agreed_in_contract", True)),
        )

    redeploy_doc = document.get("redeploy") or {}
    redeploy = RedeployRequirements(
        min_approvers=int(redeploy_doc.get("min_approvers", 1)),
        roles=[Role.parse(r) for r in redeploy_doc.get("roles", ["CISO", "CEO"])],
        external_signoff=bool(redeploy_doc.get("external_signoff", False)),
    )

    return Playbook(
        id=pb_id, triggers=triggers, templates=templates, authority=authority,
        escalation=escalation, fallbacks=fallbacks, redeploy=redeploy,
        notification=dict(document.get("notification") or {}),
        stakeholders=dict(document.get("stakeholders") or {}),
        sla=dict(document.get("sla") or {}),
    )


class IncidentEngine:
    """Drives the incident lifecycle; all mutations per incident serialized."""

    def __init__(self, store, playbook: Playbook, monitor, audit, clock, ids,
                 observer=None):
        self.store = store
        self.playbook = playbook
        self.monitor = monitor
        self.audit = audit
        self.clock = clock
        self.ids = ids
        self.observer = observer
        self.incidents: dict[str, Incident] = {}
        self._by_alert: dict[str, str] = {}
        self._lock = threading.Lock()
        # the store defers authority checks here so devolution is honored
        store._authority_checker = self.check_authority

    # --- authority ---------------------------------------------------------

    def _pending_escalations(self):
        out = []
        for inc in self.incidents.values():
            out.extend(inc.pending_escalations)
        return out

    def check_authority(self, actor: Role, kind: CorrectionKind,
                        incident: Optional[Incident] = None) -> Optional[Role]:
        """Raise UnauthorizedActor unless granted or emergency-devolved.

        Returns the role whose authority devolved, or None for a direct grant.
        """
        matrix = self.playbook.authority
        if matrix.allows(actor, kind):
            return None
        pending = (incident.pending_escalations if incident is not None
                   else self._pending_escalations())
        devolved_from = matrix.devolution_applies(actor, kind, pending, self.clock.now())
        if devolved_from is not None:
            return devolved_from
        granted = ", ".join(r.name for r in matrix.granting_roles(kind))
        raise UnauthorizedActor(
            f"{actor.name} may not execute {kind.value}; requires: {granted or 'nobody'}")

    # --- helpers -----------------------------------------------------------

    def _timeline(self, incident: Incident, event: str, detail: dict,
                  actor="Engine") -> None:
        entry = {"ts": self.clock.now(), "event": event, **detail}
        incident.timeline.append(entry)
        self.audit.append("IncidentEvent", actor, {
            "incident_id": incident.id, "event": event,
            "state": incident.state.value, **detail,
        })
        if self.observer is not None:
            self.observer("incident_" + event, {"incident_id": incident.id,
                                                "state": incident.state.value,
                                                **detail})

    def get(self, incident_id: str) -> Incident:
        incident = self.incidents.get(incident_id)
        if incident is None:
            raise UnknownIncident(incident_id)
        return incident

    # --- operations ----------------------------------------------------------

    def open_incident(self, source: str, severity: Severity,
                      opened_by: Role = Role.Analyst,
                      manual_note: Optional[str] = None) -> Incident:
        with self._lock:
            if manual_note is None:
                if self.monitor is None or source not in self.monitor.alerts:
                    raise UnknownSource(f"no such alert: {source}")
                existing = self._by_alert.get(source)
                if existing:
                    return self.incidents[existing]  # idempotent open
            incident = Incident(
                id=self.ids.next("inc"),
                state=IncidentState.Open,
                severity=severity,
                opened_at=self.clock.now(),
                opened_by=opened_by.name,
                source=source if manual_note is None else f"manual:{manual_note}",
            )
            self.incidents[incident.id] = incident
            if manual_note is None:
                self._by_alert[source] = incident.id
                incident.linked_alerts.append(source)
                alert = self.monitor.alerts[source]
                alert.incident_id = incident.id
                # a human opening from an alert is an implicit true positive;
                # automatic openings keep the alert queued for triage
                if opened_by != Role.System and alert.triage == "Untriaged":
                    alert.triage = "TruePositive"
            self._timeline(incident, "opened", {
                "severity": severity.name, "source": incident.source,
            }, actor=opened_by)
            return incident

    def advance(self, incident_id: str, to_state: IncidentState,
                actor: Role = Role.Analyst) -> Incident:
        incident = self.get(incident_id)
        if to_state not in LEGAL_TRANSITIONS[incident.state]:
            raise IllegalState(
                f"{incident.state.value} -> {to_state.value} is not a legal transition")
        if to_state == IncidentState.Closed:
            if incident.review is None:
                raise ReviewMissing(f"{incident_id}: Closed requires a review")
            if not incident.review.approved:
                raise ReviewNotApproved(incident_id)
        incident.state = to_state
        self._timeline(incident, "transition", {"to": to_state.value}, actor=actor)
        return incident

    def escalate(self, incident_id: str, from_role: Role, to_role: Role,
                 emergency_meeting: bool = False) -> Incident:
        incident = self.get(incident_id)
        chain = self.playbook.escalation_roles()
        if from_role not in chain or to_role not in chain:
            raise InvalidChainStep(f"{from_role.name} -> {to_role.name}: not in chain")
        if chain.index(to_role) != chain.index(from_role) + 1:
            if not self.playbook.authority.emergency.enabled:
                raise InvalidChainStep(
                    f"{from_role.name} -> {to_role.name} skips the chain")
        incident.pending_escalations.append((to_role, self.clock.now()))
        self._timeline(incident, "escalated", {
            "from": from_role.name, "to": to_role.name,
            "emergency_meeting": emergency_meeting,
            "contact": dict(self.playbook.escalation).get(to_role, ""),
        }, actor=from_role)
        return incident

    def acknowledge_escalation(self, incident_id: str, role: Role) -> None:
        incident = self.get(incident_id)
        incident.pending_escalations = [
            (r, at) for r, at in incident.pending_escalations if r != role]
        self._timeline(incident, "escalation_acknowledged", {"role": role.name},
                       actor=role)

    def execute_correction(self, incident_id: str, actor: Role,
                           template_id: Optional[str] = None,
                           kind: Optional[CorrectionKind] = None,
                           scope: Optional[Scope] = None,
                           params: Optional[dict] = None,
                           model_id: Optional[str] = None,
                           stage: str = "containment") -> list:
        """Apply a correction (from a template or ad hoc) under this incident."""
        incident = self.get(incident_id)
        if incident.state not in CORRECTION_STATES:
            raise IllegalState(
                f"cannot execute corrections while {incident.state.value}")

        specs = []
        if template_id is not None:
            template = self.playbook.templates.get(template_id)
            if template is None:
                raise DanglingReference(f"unknown template: {template_id}")
            stage = template.stage
            if template.scope_mode == "flagged_principals":
                flagged = []
                for alert_id in incident.linked_alerts:
                    alert = self.monitor.alerts.get(alert_id)
                    if alert:
                        flagged.extend(alert.flagged_principals)
                specs = [(template.kind, Scope(ScopeType.Principal, pid),
                          dict(template.params), template.params.get("model_id"))
                         for pid in sorted(set(flagged))]
            else:
                specs = [(template.kind, template.scope, dict(template.params),
                          template.params.get("model_id"))]
        else:
            if kind is None:
                raise ParseError("execute_correction needs a template or a kind")
            specs = [(kind, scope or Scope(ScopeType.Global),
                      dict(params or {}), model_id)]

        applied_ids = []
        for k, sc, pr, mid in specs:
            devolved_from = self.check_authority(actor, k, incident)
            policy = self.store.apply_correction(
                kind=k, actor=actor, scope=sc, params=pr, model_id=mid,
                provenance=incident.id, _skip_authority=True)
            incident.corrections_applied.append(policy.id)
            record = {
                "ts": self.clock.now(), "policy_id": policy.id,
                "kind": k.value, "actor": actor.name, "stage": stage,
            }
            if stage == "remediation":
                incident.remediation_records.append(record)
            else:
                incident.containment_records.append(record)
            if devolved_from is not None:
                incident.devolutions.append({
                    "actor": actor.name, "devolved_from": devolved_from.name,
                    "kind": k.value, "ts": self.clock.now(),
                })
            self._timeline(incident, "correction_applied", {
                "policy_id": policy.id, "kind": k.value, "stage": stage,
                "devolved_from": devolved_from.name if devolved_from else None,
            }, actor=actor)
            applied_ids.append(policy.id)

        if incident.state in (IncidentState.Open, IncidentState.Analyzing):
            incident.state = IncidentState.Executing
            self._timeline(incident, "transition", {"to": "Executing"}, actor=actor)
        return applied_ids

    def execute_auto_correction(self, alert, template_id: str) -> list:
        """Entry point for AutoCorrection trigger bindings (actor = System)."""
        template = self.playbook.templates.get(template_id)
        if template is None:
            raise DanglingReference(f"unknown template: {template_id}")
        incident = None
        if template.auto_incident:
            incident = self.open_incident(source=alert.id, severity=alert.severity,
                                          opened_by=Role.System)
            alert.incident_id = incident.id
        else:
            existing = self._by_alert.get(alert.id)
            if existing:
                incident = self.incidents[existing]
        if incident is None:
            incident = self.open_incident(source=alert.id, severity=alert.severity,
                                          opened_by=Role.System)
            alert.incident_id = incident.id
        return self.execute_correction(incident.id, Role.System,
                                       template_id=template_id)

    def revoke_correction(self, incident_id: str, policy_id: str,
                          actor: Role) -> None:
        incident = self.get(incident_id)
        self.store.revoke_correction(policy_id, actor)
        self._timeline(incident, "correction_revoked",
                       {"policy_id": policy_id}, actor=actor)

    def set_review(self, incident_id: str, review: AfterActionReview,
                   actor: Role = Role.SOCLead) -> Incident:
        incident = self.get(incident_id)
        incident.review = review
        self._timeline(incident, "review_recorded",
                       {"approved": review.approved}, actor=actor)
        return incident

    def approve_redeployment(self, incident_id: str,
                             review: Optional[AfterActionReview],
                             approvers: list) -> Incident:
        """The recovery gate: Moratorium/Removed -> Active only through here."""
        incident = self.get(incident_id)
        if incident.state != IncidentState.UnderReview:
            raise IllegalState(
                f"redeployment approval requires UnderReview, was {incident.state.value}")
        if review is not None:
            incident.review = review
        if incident.review is None:
            raise ReviewMissing(incident_id)
        if not incident.review.approved:
            raise ReviewNotApproved(incident_id)
        req = self.playbook.redeploy
        role_approvers = [a for a in approvers if isinstance(a, Role)]
        eligible = [a for a in role_approvers if a in req.roles]
        if len(eligible) < req.min_approvers:
            raise InsufficientApprovers(
                f"need {req.min_approvers} of {[r.name for r in req.roles]}")
        if req.external_signoff and "External" not in approvers:
            raise InsufficientApprovers("external sign-off required")

        # restore every deployment this incident's corrections locked down
        models = set()
        for pid in incident.corrections_applied:
            policy = next((p for p in self.store.all_policies() if p.id == pid), None)
            if policy is None or policy.model_id is None:
                continue
            if policy.kind in (CorrectionKind.MarketRemoval, CorrectionKind.PowerOff,
                               CorrectionKind.Moratorium, CorrectionKind.AllowlistMode):
                models.add(policy.model_id)
        for model_id in sorted(models):
            dep = self.store.deployment(model_id)
            if dep.state != DeployState.Decommissioned:
                self.store.restore_active(model_id, eligible[0], incident.id)
                self._timeline(incident, "redeployed", {"model_id": model_id},
                               actor=eligible[0])
        incident.state = IncidentState.Closed
        self._timeline(incident, "transition", {
            "to": "Closed", "approvers": [getattr(a, "name", str(a)) for a in approvers],
        }, actor=eligible[0])
        return incident
