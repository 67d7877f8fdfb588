"""Control-plane HTTP surface: auth, role mapping, error codes, data plane."""

import pytest
from fastapi.testclient import TestClient

from modelgate.api import create_app

from conftest import make_stack, playbook_doc


def client_for(stack=None):
    stack = stack or make_stack()
    return stack, TestClient(create_app(stack))


def auth(role):
    return {"Authorization": f"Bearer token-{role}"}


@pytest.fixture
def api():
    return client_for()


class TestAuth:
    def test_missing_token_is_401(self, api):
        _, client = api
        assert client.get("/status").status_code == 401

    def test_unknown_token_is_401(self, api):
        _, client = api
        r = client.get("/status", headers={"Authorization": "Bearer nope"})
        assert r.status_code == 401

    def test_valid_token_passes(self, api):
        _, client = api
        r = client.get("/status", headers=auth("analyst"))
        assert r.status_code == 200
        assert {d["model_id"] for d in r.json()["deployments"]} == {"m1", "m1-prev"}


class TestIncidentFlow:
    def test_manual_incident_lifecycle(self, api):
        stack, client = api
        r = client.post("/incidents", json={"note": "drill", "severity": "High"},
                        headers=auth("analyst"))
        assert r.status_code == 201
        iid = r.json()["id"]

        # analysts hold no power-off authority: 403 with the required roles
        r = client.post(f"/incidents/{iid}/corrections",
                        json={"kind": "PowerOff", "model_id": "m1"},
                        headers=auth("analyst"))
        assert r.status_code == 403
        assert "CISO" in r.json()["detail"]

        r = client.post(f"/incidents/{iid}/corrections",
                        json={"kind": "PowerOff", "model_id": "m1"},
                        headers=auth("ciso"))
        assert r.status_code == 200
        assert len(r.json()["applied_policies"]) == 1

        for to in ("Remediating", "Recovering", "UnderReview"):
            r = client.post(f"/incidents/{iid}/advance", json={"to": to},
                            headers=auth("soclead"))
            assert r.status_code == 200

        # closing without a review is a conflict, not a crash
        r = client.post(f"/incidents/{iid}/advance", json={"to": "Closed"},
                        headers=auth("ciso"))
        assert r.status_code == 409

        r = client.post(f"/incidents/{iid}/redeploy-approval", json={
            "approvers": ["CISO"],
            "review": {"root_cause": "drill", "why_not_caught_earlier": "drill",
                       "approved": True},
        }, headers=auth("ciso"))
        assert r.status_code == 200
        assert r.json()["state"] == "Closed"
        assert stack.store.deployment("m1").state.value == "Active"

    def test_dry_run_checks_authority_without_applying(self, api):
        stack, client = api
        r = client.post("/incidents", json={"note": "drill", "severity": "High"},
                        headers=auth("analyst"))
        iid = r.json()["id"]
        denied = client.post(f"/incidents/{iid}/corrections",
                             json={"kind": "MarketRemoval", "model_id": "m1",
                                   "dry_run": True},
                             headers=auth("analyst")).json()
        allowed = client.post(f"/incidents/{iid}/corrections",
                              json={"kind": "MarketRemoval", "model_id": "m1",
                                    "dry_run": True},
                              headers=auth("ciso")).json()
        assert denied["allowed"] is False
        assert allowed["allowed"] is True
        assert stack.store.all_policies() == []

    def test_unknown_incident_is_404(self, api):
        _, client = api
        r = client.get("/incidents/inc-9999", headers=auth("analyst"))
        assert r.status_code == 404

    def test_bad_params_are_422(self, api):
        _, client = api
        r = client.post("/incidents", json={"note": "drill", "severity": "High"},
                        headers=auth("analyst"))
        iid = r.json()["id"]
        r = client.post(f"/incidents/{iid}/corrections",
                        json={"kind": "ThrottleCalls", "params": {"cap": -4}},
                        headers=auth("analyst"))
        assert r.status_code == 422


class TestAlertsAndEvents:
    def breach_stack(self):
        doc = playbook_doc(triggers=[{
            "id": "reports", "metric": "external_report_count", "window_s": 600,
            "threshold": {"op": ">=", "value": 1}, "min_samples": 1,
            "severity": "High", "grade": "Elevated",
            "binding": {"type": "AlertOnly"}}])
        return client_for(make_stack(playbook=doc))

    def test_ingest_advance_triage(self):
        stack, client = self.breach_stack()
        r = client.post("/internal/events", json={
            "timestamp": 1.0, "kind": "report", "deployment": "m1",
            "external_report": True}, headers=auth("system"))
        assert r.status_code == 202
        r = client.post("/internal/advance", json={"seconds": 10},
                        headers=auth("system"))
        assert r.status_code == 200
        alert_ids = r.json()["alerts_fired"]
        assert len(alert_ids) == 1

        r = client.get("/alerts?pending=true", headers=auth("analyst"))
        assert [a["id"] for a in r.json()["alerts"]] == alert_ids

        r = client.post(f"/alerts/{alert_ids[0]}/triage",
                        json={"outcome": "TruePositive"}, headers=auth("analyst"))
        assert r.status_code == 200
        assert r.json()["incident_id"] is not None

        again = client.post(f"/alerts/{alert_ids[0]}/triage",
                            json={"outcome": "BenignPositive"},
                            headers=auth("analyst"))
        assert again.status_code == 409

    def test_event_feed_cursor_resumes(self):
        stack, client = self.breach_stack()
        client.post("/internal/events", json={
            "timestamp": 1.0, "kind": "report", "deployment": "m1",
            "external_report": True}, headers=auth("system"))
        client.post("/internal/advance", json={"seconds": 10},
                    headers=auth("system"))
        first = client.get("/events", headers=auth("analyst")).json()
        assert first["events"]
        cursor = first["cursor"]
        again = client.get(f"/events?cursor={cursor}", headers=auth("analyst")).json()
        assert again["events"] == []


class TestPolicies:
    def test_revoke_via_delete(self, api):
        stack, client = api
        from modelgate.authority import Role
        from modelgate.policy import CorrectionKind
        p = stack.store.apply_correction(CorrectionKind.ThrottleCalls, Role.Analyst,
                                         params={"cap": 1, "window_s": 10})
        r = client.delete(f"/policies/{p.id}", headers=auth("analyst"))
        assert r.status_code == 200 and r.json()["status"] == "Revoked"
        r = client.delete(f"/policies/{p.id}", headers=auth("analyst"))
        assert r.status_code == 409
        r = client.delete("/policies/pol-9999", headers=auth("analyst"))
        assert r.status_code == 404

    def test_policy_listing_filters_by_status(self, api):
        stack, client = api
        from modelgate.authority import Role
        from modelgate.policy import CorrectionKind
        p = stack.store.apply_correction(CorrectionKind.ThrottleCalls, Role.Analyst,
                                         params={"cap": 1, "window_s": 10})
        stack.store.revoke_correction(p.id, Role.Analyst)
        active = client.get("/policies?status_filter=Active",
                            headers=auth("analyst")).json()["policies"]
        revoked = client.get("/policies?status_filter=Revoked",
                             headers=auth("analyst")).json()["policies"]
        assert active == [] and len(revoked) == 1


class TestDataPlane:
    def test_infer_allow(self, api):
        _, client = api
        r = client.post("/v1/infer", json={"principal_id": "p-solo",
                                           "model_id": "m1", "prompt": "hi there"},
                        headers=auth("analyst"))
        assert r.status_code == 200
        assert r.json()["served_by"] == "m1"

    def test_infer_policy_denial_is_403(self, api):
        stack, client = api
        from modelgate.authority import Role
        from modelgate.policy import CorrectionKind, Scope, ScopeType
        stack.store.apply_correction(CorrectionKind.BlocklistPrincipal, Role.Analyst,
                                     scope=Scope(ScopeType.Principal, "p-solo"))
        r = client.post("/v1/infer", json={"principal_id": "p-solo",
                                           "model_id": "m1", "prompt": "hi"},
                        headers=auth("analyst"))
        assert r.status_code == 403
        assert r.json()["reason_code"] == "Blocklisted"

    def test_infer_shutdown_state_is_503(self, api):
        stack, client = api
        from modelgate.authority import Role
        from modelgate.policy import CorrectionKind
        stack.store.apply_correction(CorrectionKind.PowerOff, Role.CISO,
                                     model_id="m1")
        r = client.post("/v1/infer", json={"principal_id": "p-solo",
                                           "model_id": "m1", "prompt": "hi"},
                        headers=auth("analyst"))
        assert r.status_code == 503
        assert r.json()["state"] == "PoweredOff"

    def test_audit_verify_endpoint(self, api):
        _, client = api
        r = client.get("/audit/verify", headers=auth("analyst"))
        assert r.status_code == 200 and r.json()["ok"] is True
