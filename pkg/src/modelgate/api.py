"""HTTP control plane over one Stack instance.

Bearer tokens map to operator roles; role enforcement itself lives in the
engine and store, so the API only translates errors to status codes.
"""

from __future__ import annotations

from typing import Optional

from fastapi import Depends, FastAPI, Header, HTTPException, Request
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from .authority import Role
from .errors import (
    AlreadyRevoked,
    AlreadyTriaged,
    ChainBroken,
    GradeGateViolation,
    IllegalState,
    InsufficientApprovers,
    InvalidChainStep,
    InvalidParams,
    MalformedContext,
    MalformedEvent,
    ModelGateError,
    NoPlan,
    NotFound,
    ParseError,
    ReviewMissing,
    ReviewNotApproved,
    TerminalState,
    UnauthorizedActor,
    UnknownAlert,
    UnknownDeployment,
    UnknownIncident,
    UnknownSource,
)
from .gateway import InferenceRequest
from .incidents import AfterActionReview, IncidentState
from .monitor import Severity
from .policy import CorrectionKind, Scope, validate_params
from .stack import Stack

DEFAULT_TOKENS = {
    "token-system": Role.System,
    "token-analyst": Role.Analyst,
    "token-soclead": Role.SOCLead,
    "token-ciso": Role.CISO,
    "token-ceo": Role.CEO,
}

_CONFLICTS = (AlreadyTriaged, AlreadyRevoked, IllegalState, InvalidChainStep,
              ReviewMissing, ReviewNotApproved, InsufficientApprovers,
              TerminalState, ChainBroken)
_UNPROCESSABLE = (ParseError, InvalidParams, MalformedEvent, MalformedContext,
                  GradeGateViolation)
_MISSING = (NotFound, UnknownAlert, UnknownIncident, UnknownSource,
            UnknownDeployment, NoPlan)


def _status_for(exc: ModelGateError) -> int:
    if isinstance(exc, UnauthorizedActor):
        return 403
    if isinstance(exc, _MISSING):
        return 404
    if isinstance(exc, _CONFLICTS):
        return 409
    if isinstance(exc, _UNPROCESSABLE):
        return 422
    return 500


class TriageBody(BaseModel):
    outcome: str


class OpenIncidentBody(BaseModel):
    alert_id: Optional[str] = None
    note: Optional[str] = None
    severity: str = "High"


class EscalateBody(BaseModel):
    from_role: str
    to_role: str
    emergency_meeting: bool = False


class CorrectionBody(BaseModel):
    template: Optional[str] = None
    kind: Optional[str] = None
    scope: Optional[dict] = None
    params: dict = {}
    model_id: Optional[str] = None
    stage: str = "containment"
    dry_run: bool = False


class AdvanceBody(BaseModel):
    to: str


class ReviewBody(BaseModel):
    review: dict


class RedeployBody(BaseModel):
    approvers: list
    review: Optional[dict] = None


class NotifyBody(BaseModel):
    principals: object = "all"


class StakeholderBody(BaseModel):
    audiences: list


class InferBody(BaseModel):
    principal_id: str
    session_id: str = "default"
    model_id: str
    prompt: str = ""
    tool_intents: list = []
    use_case: str = "general"
    mark_unsatisfactory: bool = False
    injection_suspected: bool = False


class ClockBody(BaseModel):
    seconds: float


def create_app(stack: Stack, tokens: Optional[dict] = None) -> FastAPI:
    app = FastAPI(title="modelgate control plane", version="0.1.0")
    token_roles = dict(tokens or DEFAULT_TOKENS)

    def current_role(authorization: str = Header(default="")) -> Role:
        if not authorization.startswith("Bearer "):
            raise HTTPException(status_code=401, detail="bearer token required")
        role = token_roles.get(authorization.removeprefix("Bearer ").strip())
        if role is None:
            raise HTTPException(status_code=401, detail="unknown token")
        return role

    @app.exception_handler(ModelGateError)
    async def on_error(request: Request, exc: ModelGateError):
        return JSONResponse(status_code=_status_for(exc),
                            content={"error": exc.code, "detail": str(exc)})

    # --- observability ------------------------------------------------------

    @app.get("/status")
    def status(role: Role = Depends(current_role)):
        return stack.status()

    @app.get("/events")
    def events(cursor: int = 0, role: Role = Depends(current_role)):
        items, next_cursor = stack.feed.since(cursor)
        return {"events": items, "cursor": next_cursor}

    @app.get("/audit/verify")
    def audit_verify(role: Role = Depends(current_role)):
        from .audit import verify_chain
        records = stack.audit.records()
        verify_chain(records)
        return {"ok": True, "records": len(records)}

    @app.get("/audit/records")
    def audit_records(category: Optional[str] = None,
                      incident_id: Optional[str] = None,
                      role: Role = Depends(current_role)):
        records = stack.audit.query(category=category, incident_id=incident_id)
        return {"records": [r.to_dict() for r in records]}

    # --- alerts ---------------------------------------------------------------

    @app.get("/alerts")
    def alerts(pending: bool = False, role: Role = Depends(current_role)):
        items = (stack.monitor.prioritize() if pending
                 else stack.monitor.prioritize(list(stack.monitor.alerts.values())))
        return {"alerts": [a.to_dict() for a in items]}

    @app.post("/alerts/{alert_id}/triage")
    def triage(alert_id: str, body: TriageBody,
               role: Role = Depends(current_role)):
        alert = stack.monitor.triage(alert_id, body.outcome, role)
        return alert.to_dict()

    # --- incidents ----------------------------------------------------------

    @app.get("/incidents")
    def incidents(role: Role = Depends(current_role)):
        return {"incidents": [i.to_dict() for i in stack.engine.incidents.values()]}

    @app.get("/incidents/{incident_id}")
    def incident(incident_id: str, role: Role = Depends(current_role)):
        return stack.engine.get(incident_id).to_dict()

    @app.post("/incidents", status_code=201)
    def open_incident(body: OpenIncidentBody, role: Role = Depends(current_role)):
        inc = stack.engine.open_incident(
            source=body.alert_id or "",
            severity=Severity.parse(body.severity),
            opened_by=role,
            manual_note=body.note if body.alert_id is None else None)
        return inc.to_dict()

    @app.post("/incidents/{incident_id}/escalate")
    def escalate(incident_id: str, body: EscalateBody,
                 role: Role = Depends(current_role)):
        inc = stack.engine.escalate(incident_id, Role.parse(body.from_role),
                                    Role.parse(body.to_role),
                                    emergency_meeting=body.emergency_meeting)
        return inc.to_dict()

    @app.post("/incidents/{incident_id}/corrections")
    def corrections(incident_id: str, body: CorrectionBody,
                    role: Role = Depends(current_role)):
        incident = stack.engine.get(incident_id)
        if body.dry_run:
            if body.template is not None:
                template = stack.playbook.templates.get(body.template)
                if template is None:
                    raise NotFound(f"unknown template: {body.template}")
                kind = template.kind
            else:
                kind = CorrectionKind(body.kind)
                validate_params(kind, body.params)
            try:
                devolved = stack.engine.check_authority(role, kind, incident)
            except UnauthorizedActor as e:
                return {"allowed": False, "detail": str(e)}
            return {"allowed": True,
                    "devolved_from": devolved.name if devolved else None}
        kwargs = {}
        if body.template is not None:
            kwargs["template_id"] = body.template
        else:
            if body.kind is None:
                raise InvalidParams("correction needs a template or a kind")
            kwargs["kind"] = CorrectionKind(body.kind)
            kwargs["params"] = dict(body.params)
            kwargs["model_id"] = body.model_id
            kwargs["stage"] = body.stage
            if body.scope is not None:
                kwargs["scope"] = Scope.from_dict(body.scope)
        applied = stack.engine.execute_correction(incident_id, role, **kwargs)
        return {"applied_policies": applied}

    @app.post("/incidents/{incident_id}/advance")
    def advance_incident(incident_id: str, body: AdvanceBody,
                         role: Role = Depends(current_role)):
        inc = stack.engine.advance(incident_id, IncidentState(body.to), role)
        return inc.to_dict()

    @app.post("/incidents/{incident_id}/review")
    def set_review(incident_id: str, body: ReviewBody,
                   role: Role = Depends(current_role)):
        inc = stack.engine.set_review(
            incident_id, AfterActionReview.from_dict(body.review), role)
        return inc.to_dict()

    @app.post("/incidents/{incident_id}/redeploy-approval")
    def redeploy(incident_id: str, body: RedeployBody,
                 role: Role = Depends(current_role)):
        approvers = [a if a == "External" else Role.parse(a)
                     for a in body.approvers]
        review = AfterActionReview.from_dict(body.review) if body.review else None
        inc = stack.engine.approve_redeployment(incident_id, review, approvers)
        return inc.to_dict()

    @app.post("/incidents/{incident_id}/notify")
    def notify(incident_id: str, body: NotifyBody,
               role: Role = Depends(current_role)):
        roster = stack.store.principals()
        if body.principals == "all":
            selected = list(roster.values())
        else:
            selected = [roster[p] for p in body.principals]
        batch = stack.comms.notify(incident_id, selected)
        return batch.to_dict()

    @app.post("/incidents/{incident_id}/stakeholders")
    def stakeholders(incident_id: str, body: StakeholderBody,
                     role: Role = Depends(current_role)):
        receipts = stack.comms.alert_stakeholders(incident_id, body.audiences)
        return {"receipts": receipts}

    # --- policies -------------------------------------------------------------

    @app.get("/policies")
    def policies(status_filter: Optional[str] = None,
                 role: Role = Depends(current_role)):
        items = [p.to_dict() for p in stack.store.all_policies()
                 if status_filter is None or p.status == status_filter]
        return {"policies": items}

    @app.delete("/policies/{policy_id}")
    def revoke_policy(policy_id: str, role: Role = Depends(current_role)):
        policy = stack.store.revoke_correction(policy_id, role)
        return policy.to_dict()

    # --- fallbacks ------------------------------------------------------------

    @app.post("/fallbacks/{principal_id}/activate")
    def activate_fallback(principal_id: str, role: Role = Depends(current_role)):
        directive = stack.comms.activate_fallback(principal_id)
        return {"principal": principal_id, "route": directive.route,
                "target_model": directive.target_model}

    @app.delete("/fallbacks/{principal_id}")
    def deactivate_fallback(principal_id: str, role: Role = Depends(current_role)):
        stack.comms.deactivate_fallback(principal_id)
        return {"principal": principal_id, "route": None}

    # --- metric ingestion and drill clock ----------------------------------

    @app.post("/internal/events", status_code=202)
    def ingest(event: dict, role: Role = Depends(current_role)):
        stack.monitor.ingest_raw(event)
        return {"accepted": True}

    @app.post("/internal/advance")
    def advance_clock(body: ClockBody, role: Role = Depends(current_role)):
        if not hasattr(stack.clock, "advance"):
            raise HTTPException(status_code=409,
                                detail="stack runs on the wall clock")
        fired = stack.advance(body.seconds)
        return {"now": stack.clock.now(),
                "alerts_fired": [a.id for a in fired]}

    # --- data plane -----------------------------------------------------------

    @app.post("/v1/infer")
    def infer(body: InferBody, role: Role = Depends(current_role)):
        req = InferenceRequest(
            principal_id=body.principal_id, session_id=body.session_id,
            model_id=body.model_id, prompt=body.prompt,
            tool_intents=tuple(body.tool_intents), use_case=body.use_case,
        )
        result = stack.gateway.handle(
            req, mark_unsatisfactory=body.mark_unsatisfactory,
            injection_suspected=body.injection_suspected)
        if result.denied:
            if result.state is not None:
                return JSONResponse(status_code=503, content={
                    "error": "ServiceUnavailable", "state": result.state,
                    "reason_code": result.reason_code,
                })
            return JSONResponse(status_code=403, content={
                "error": "Forbidden", "reason_code": result.reason_code,
                "policy_ids": list(result.policy_ids),
            })
        return {
            "output": " ".join(result.output),
            "filtered": result.filtered,
            "transforms": [list(t) for t in result.transforms_applied],
            "session_id": result.session_id,
            "served_by": result.served_by,
        }

    return app
