"""Scripted scenario runner: drives a fresh stack on a virtual clock."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Any, Optional

from .authority import Role
from .errors import ModelGateError, ScenarioInvalid
from .gateway import InferenceRequest
from .incidents import AfterActionReview, IncidentState
from .monitor import Severity
from .policy import (
    CorrectionKind,
    DeploymentState,
    Principal,
    Scope,
    canonical_json,
)
from .stack import Stack

KNOWN_OPS = {"advance_clock", "send_request", "emit_external_report",
             "operator_action", "expect", "script_output"}

KNOWN_CHECKS = {"deployment_state", "moratorium", "policy", "incident",
                "alert_count", "webhook_count", "notification_order",
                "audit_chain", "replay_matches_live", "decision_count_matches",
                "devolution", "operator_queue_size"}

KNOWN_ACTIONS = {"triage", "open_incident", "escalate", "acknowledge_escalation",
                 "execute_correction", "revoke_correction", "advance_incident",
                 "set_review", "approve_redeployment", "notify",
                 "alert_stakeholders", "activate_fallback", "deactivate_fallback"}


@dataclass
class ScenarioReport:
    scenario: str
    seed: int
    assertions: list = field(default_factory=list)
    audit_log: Optional[str] = None
    requests_handled: int = 0

    @property
    def passed(self) -> bool:
        return all(a["passed"] for a in self.assertions)

    def record(self, name: str, passed: bool, detail: str = "") -> None:
        self.assertions.append({"name": name, "passed": bool(passed),
                                "detail": detail})

    def to_json(self) -> str:
        return json.dumps({
            "scenario": self.scenario,
            "seed": self.seed,
            "passed": self.passed,
            "requests_handled": self.requests_handled,
            "assertions": self.assertions,
            "audit_log": self.audit_log,
        }, indent=2, sort_keys=True)


def load_document(path: str) -> dict:
    with open(path, encoding="utf-8") as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as e:
            raise ScenarioInvalid(f"{path}: {e}")


def validate_scenario(doc: dict) -> None:
    for key in ("id", "playbook", "principals", "deployments", "timeline"):
        if key not in doc:
            raise ScenarioInvalid(f"scenario missing key: {key}")
    for i, step in enumerate(doc["timeline"]):
        op = step.get("op")
        if op not in KNOWN_OPS:
            raise ScenarioInvalid(f"step {i}: unknown op {op!r}")
        if op == "operator_action" and step.get("action") not in KNOWN_ACTIONS:
            raise ScenarioInvalid(f"step {i}: unknown action {step.get('action')!r}")
        if op == "expect":
            for a in _as_list(step.get("that")):
                if a.get("check") not in KNOWN_CHECKS:
                    raise ScenarioInvalid(f"step {i}: unknown check {a.get('check')!r}")
    for a in doc.get("assertions", []):
        if a.get("check") not in KNOWN_CHECKS:
            raise ScenarioInvalid(f"final assertion: unknown check {a.get('check')!r}")


def _as_list(value) -> list:
    if value is None:
        return []
    return value if isinstance(value, list) else [value]


def build_stack(doc: dict, base_dir: str = ".", seed: Optional[int] = None,
                audit_path: Optional[str] = None) -> Stack:
    playbook_ref = doc["playbook"]
    if isinstance(playbook_ref, str):
        playbook_doc = load_document(os.path.join(base_dir, playbook_ref))
    else:
        playbook_doc = playbook_ref
    principals = [Principal.from_dict(p) for p in doc["principals"]]
    deployments = [DeploymentState.from_dict(d) for d in doc["deployments"]]
    return Stack(
        playbook_doc=playbook_doc, principals=principals,
        deployments=deployments,
        seed=seed if seed is not None else int(doc.get("seed", 0)),
        audit_path=audit_path,
    )


class ScenarioRunner:
    def __init__(self, doc: dict, base_dir: str = ".",
                 seed: Optional[int] = None, audit_path: Optional[str] = None):
        validate_scenario(doc)
        self.doc = doc
        self.stack = build_stack(doc, base_dir, seed=seed, audit_path=audit_path)
        self.report = ScenarioReport(
            scenario=doc["id"],
            seed=seed if seed is not None else int(doc.get("seed", 0)),
            audit_log=audit_path,
        )
        self._step_no = 0

    # --- selectors -----------------------------------------------------------

    def _select_alert(self, ref) -> str:
        if isinstance(ref, str):
            return ref
        trigger = ref.get("trigger")
        matches = [a for a in self.stack.monitor.alerts.values()
                   if trigger is None or a.trigger_id == trigger]
        if not matches:
            raise ScenarioInvalid(f"no alert matches {ref!r}")
        return matches[-1].id

    def _select_incident(self, ref) -> str:
        incidents = list(self.stack.engine.incidents.values())
        if ref in (None, "latest"):
            if not incidents:
                raise ScenarioInvalid("no incident open yet")
            return incidents[-1].id
        if isinstance(ref, str):
            return ref
        raise ScenarioInvalid(f"bad incident selector: {ref!r}")

    def _select_policy(self, ref) -> str:
        if isinstance(ref, str):
            return ref
        kind = ref.get("kind")
        status = ref.get("status", "Active")
        matches = [p for p in self.stack.store.all_policies()
                   if (kind is None or p.kind.value == kind) and p.status == status]
        if not matches:
            raise ScenarioInvalid(f"no policy matches {ref!r}")
        return matches[-1].id

    # --- steps -----------------------------------------------------------------

    def run(self) -> ScenarioReport:
        for step in self.doc["timeline"]:
            self._step_no += 1
            self._run_step(step)
        for i, assertion in enumerate(self.doc.get("assertions", []), start=1):
            self._check(assertion, default_name=f"final:{i}:{assertion['check']}")
        self.report.requests_handled = self.stack.gateway.requests_handled
        return self.report

    def _run_step(self, step: dict) -> None:
        op = step["op"]
        if op == "advance_clock":
            self.stack.advance(float(step.get("by_s", 0)))
        elif op == "script_output":
            self.stack.backend.script_output(step["model"], step["output"])
        elif op == "emit_external_report":
            self.stack.report_external(step.get("deployment", ""),
                                       note=step.get("note", ""))
        elif op == "send_request":
            self._send_requests(step)
        elif op == "operator_action":
            self._operator_action(step)
        elif op == "expect":
            for i, assertion in enumerate(_as_list(step.get("that")), start=1):
                self._check(assertion,
                            default_name=f"step{self._step_no}:{assertion['check']}")

    def _send_requests(self, step: dict) -> None:
        repeat = int(step.get("repeat", 1))
        mark = step.get("mark_unsatisfactory", False)
        mark_count = repeat if mark is True else 0
        if isinstance(mark, dict):
            mark_count = int(mark.get("count", 0))
        prompt = step.get("prompt")
        if prompt is None:
            prompt = " ".join(f"tok{i}" for i in range(int(step.get("tokens", 4))))
        expect = step.get("expect")
        for i in range(repeat):
            if step.get("script_output"):
                self.stack.backend.script_output(step["model"], step["script_output"])
            req = InferenceRequest(
                principal_id=step["principal"],
                session_id=step.get("session", f"{step['principal']}-s1"),
                model_id=step["model"],
                prompt=prompt,
                tool_intents=tuple(step.get("tool_intents", [])),
                use_case=step.get("use_case", "general"),
            )
            try:
                result = self.stack.gateway.handle(
                    req,
                    mark_unsatisfactory=i < mark_count,
                    injection_suspected=bool(step.get("injection_suspected", False)),
                )
            except ModelGateError as e:
                if expect and expect.get("error") == e.code:
                    self.report.record(
                        f"step{self._step_no}:request[{i}]:error", True, e.code)
                    continue
                raise
            if expect:
                self._check_request(result, expect, i)

    def _check_request(self, result, expect: dict, i: int) -> None:
        name = f"step{self._step_no}:request[{i}]"
        checks = []
        verdict = expect.get("verdict")
        if verdict is not None:
            if verdict == "Deny":
                checks.append(("verdict=Deny", result.denied))
            else:
                checks.append((f"verdict!{verdict}", not result.denied))
        reason = expect.get("reason")
        if reason is not None:
            checks.append((f"reason={reason}",
                           result.denied and result.reason_code == reason))
        if "filtered" in expect:
            checks.append(("filtered", not result.denied
                           and result.filtered == expect["filtered"]))
        for t in expect.get("transforms_contains", []):
            checks.append((f"transform:{t}", not result.denied and any(
                tr[0] == t for tr in result.transforms_applied)))
        if "served_by" in expect:
            checks.append((f"served_by={expect['served_by']}",
                           not result.denied and result.served_by == expect["served_by"]))
        if "new_session" in expect:
            rotated = (not result.denied
                       and result.session_id != expect.get("session_was", ""))
            checks.append(("new_session", rotated == expect["new_session"]))
        for label, ok in checks:
            self.report.record(f"{name}:{label}", ok,
                               "" if ok else f"got {result!r}")

    def _operator_action(self, step: dict) -> None:
        action = step["action"]
        role = Role.parse(step.get("role", "Analyst"))
        expect_error = step.get("expect_error")
        name = f"step{self._step_no}:{action}"
        try:
            self._dispatch_action(action, role, step)
        except ModelGateError as e:
            if expect_error and e.code == expect_error:
                self.report.record(f"{name}:raises:{expect_error}", True, str(e))
                return
            self.report.record(name, False, f"{e.code}: {e}")
            return
        if expect_error:
            self.report.record(f"{name}:raises:{expect_error}", False,
                               "no error raised")

    def _dispatch_action(self, action: str, role: Role, step: dict) -> None:
        stack = self.stack
        if action == "triage":
            stack.monitor.triage(self._select_alert(step["alert"]),
                                 step["outcome"], role)
        elif action == "open_incident":
            stack.engine.open_incident(
                source=step.get("alert") and self._select_alert(step["alert"]) or "",
                severity=Severity.parse(step.get("severity", "High")),
                opened_by=role,
                manual_note=step.get("note") if not step.get("alert") else None)
        elif action == "escalate":
            stack.engine.escalate(self._select_incident(step.get("incident")),
                                  Role.parse(step["from"]), Role.parse(step["to"]),
                                  emergency_meeting=bool(step.get("emergency_meeting")))
        elif action == "acknowledge_escalation":
            stack.engine.acknowledge_escalation(
                self._select_incident(step.get("incident")), role)
        elif action == "execute_correction":
            kwargs = {}
            if "template" in step:
                kwargs["template_id"] = step["template"]
            else:
                kwargs["kind"] = CorrectionKind(step["kind"])
                kwargs["params"] = step.get("params", {})
                kwargs["model_id"] = step.get("model_id")
                if "scope" in step:
                    kwargs["scope"] = Scope.from_dict(step["scope"])
                kwargs["stage"] = step.get("stage", "containment")
            stack.engine.execute_correction(
                self._select_incident(step.get("incident")), role, **kwargs)
        elif action == "revoke_correction":
            stack.engine.revoke_correction(
                self._select_incident(step.get("incident")),
                self._select_policy(step["policy"]), role)
        elif action == "advance_incident":
            stack.engine.advance(self._select_incident(step.get("incident")),
                                 IncidentState(step["to"]), role)
        elif action == "set_review":
            stack.engine.set_review(
                self._select_incident(step.get("incident")),
                AfterActionReview.from_dict(step["review"]), role)
        elif action == "approve_redeployment":
            approvers = [Role.parse(a) if a != "External" else "External"
                         for a in step.get("approvers", [])]
            review = (AfterActionReview.from_dict(step["review"])
                      if "review" in step else None)
            stack.engine.approve_redeployment(
                self._select_incident(step.get("incident")), review, approvers)
        elif action == "notify":
            principals = step.get("principals", "all")
            roster = stack.store.principals()
            if principals == "all":
                selected = list(roster.values())
            else:
                selected = [roster[p] for p in principals]
            stack.comms.notify(self._select_incident(step.get("incident")), selected)
        elif action == "alert_stakeholders":
            stack.comms.alert_stakeholders(
                self._select_incident(step.get("incident")), step["audiences"])
        elif action == "activate_fallback":
            stack.comms.activate_fallback(step["principal"])
        elif action == "deactivate_fallback":
            stack.comms.deactivate_fallback(step["principal"])

    # --- assertions -----------------------------------------------------------

    def _check(self, assertion: dict, default_name: str) -> None:
        name = assertion.get("name", default_name)
        try:
            ok, detail = self._evaluate_check(assertion)
        except ModelGateError as e:
            ok, detail = False, f"{e.code}: {e}"
        self.report.record(name, ok, detail)

    def _evaluate_check(self, a: dict) -> tuple[bool, str]:
        stack = self.stack
        check = a["check"]
        if check == "deployment_state":
            dep = stack.store.deployment(a["model"])
            return dep.state.value == a["equals"], f"state={dep.state.value}"
        if check == "moratorium":
            dep = stack.store.deployment(a["model"])
            return dep.moratorium == a["equals"], f"moratorium={dep.moratorium}"
        if check == "policy":
            kind = a.get("kind")
            status = a.get("status", "Active")
            matches = [p for p in stack.store.all_policies()
                       if (kind is None or p.kind.value == kind)
                       and p.status == status]
            exists = a.get("exists", True)
            return (bool(matches) == exists,
                    f"{len(matches)} {status} {kind} policies")
        if check == "incident":
            incident = stack.engine.get(self._select_incident(a.get("incident")))
            return (incident.state.value == a["state"],
                    f"state={incident.state.value}")
        if check == "alert_count":
            trigger = a.get("trigger")
            matches = [al for al in stack.monitor.alerts.values()
                       if trigger is None or al.trigger_id == trigger]
            return len(matches) == a["equals"], f"count={len(matches)}"
        if check == "webhook_count":
            count = stack.webhooks.count(a["audience"])
            return count == a["equals"], f"count={count}"
        if check == "notification_order":
            if not stack.comms.batches:
                return False, "no notification batch"
            batch = stack.comms.batches[-1]
            sc = batch.sent_at_by_tier("SafetyCritical")
            others = [s["sent_at"] for s in batch.sends
                      if s["tier"] != "SafetyCritical"]
            if not sc or not others:
                return True, "one-sided batch"
            return min(sc) < min(others), f"sc={min(sc)} other={min(others)}"
        if check == "audit_chain":
            from .audit import verify_chain
            verify_chain(stack.audit.records())
            return True, f"{len(stack.audit)} records"
        if check == "replay_matches_live":
            replayed = stack.replayed_state()
            live = stack.live_state()
            return replayed == live, "" if replayed == live else "state mismatch"
        if check == "decision_count_matches":
            decisions = len(stack.audit.query(category="Decision"))
            handled = stack.gateway.requests_handled
            return decisions == handled, f"decisions={decisions} handled={handled}"
        if check == "devolution":
            incident = stack.engine.get(self._select_incident(a.get("incident")))
            match = any(d["actor"] == a["actor"] and d["devolved_from"] == a["from"]
                        for d in incident.devolutions)
            return match, f"devolutions={incident.devolutions}"
        if check == "operator_queue_size":
            size = len(stack.gateway.operator_queue)
            return size == a["equals"], f"size={size}"
        raise ScenarioInvalid(f"unknown check: {check!r}")


def run_scenario(path: str, seed: Optional[int] = None,
                 audit_path: Optional[str] = None) -> ScenarioReport:
    doc = load_document(path)
    runner = ScenarioRunner(doc, base_dir=os.path.dirname(os.path.abspath(path)),
                            seed=seed, audit_path=audit_path)
    return runner.run()
