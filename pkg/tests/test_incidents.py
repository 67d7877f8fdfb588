"""Incident lifecycle, recovery gate, and the authority matrix with devolution."""

import itertools
import random

import pytest

from modelgate.authority import Role
from modelgate.errors import (
    IllegalState,
    InsufficientApprovers,
    InvalidChainStep,
    ModelGateError,
    ParseError,
    ReviewMissing,
    ReviewNotApproved,
    UnauthorizedActor,
)
from modelgate.incidents import (
    AfterActionReview,
    IncidentState,
    LEGAL_TRANSITIONS,
)
from modelgate.monitor import Severity
from modelgate.policy import CorrectionKind, DeployState

from conftest import FULL_GRANTS, make_stack, playbook_doc

APPROVED_REVIEW = AfterActionReview(
    root_cause="test root cause", why_not_caught_earlier="test gap",
    approved=True)


def open_incident(stack, severity=Severity.High):
    return stack.engine.open_incident("", severity, Role.Analyst,
                                      manual_note="drill")


class TestStateMachine:
    def test_every_illegal_transition_rejected(self):
        states = list(IncidentState)
        for src, dst in itertools.product(states, states):
            stack = make_stack()
            inc = open_incident(stack)
            inc.state = src
            if src == IncidentState.UnderReview:
                inc.review = APPROVED_REVIEW
            if dst in LEGAL_TRANSITIONS[src]:
                stack.engine.advance(inc.id, dst, Role.SOCLead)
                assert inc.state == dst
            else:
                with pytest.raises(IllegalState):
                    stack.engine.advance(inc.id, dst, Role.SOCLead)

    def test_closed_requires_approved_review(self, stack):
        inc = open_incident(stack)
        inc.state = IncidentState.UnderReview
        with pytest.raises(ReviewMissing):
            stack.engine.advance(inc.id, IncidentState.Closed, Role.CISO)
        stack.engine.set_review(inc.id, AfterActionReview(
            root_cause="x", why_not_caught_earlier="y", approved=False))
        with pytest.raises(ReviewNotApproved):
            stack.engine.advance(inc.id, IncidentState.Closed, Role.CISO)
        stack.engine.set_review(inc.id, APPROVED_REVIEW)
        stack.engine.advance(inc.id, IncidentState.Closed, Role.CISO)

    def test_approved_review_requires_substance(self):
        with pytest.raises(ParseError):
            AfterActionReview(approved=True)
        with pytest.raises(ParseError):
            AfterActionReview(root_cause="x", approved=True)

    def test_corrections_auto_advance_to_executing(self, stack):
        inc = open_incident(stack)
        stack.engine.execute_correction(inc.id, Role.Analyst,
                                        kind=CorrectionKind.ThrottleCalls,
                                        params={"cap": 1, "window_s": 10})
        assert inc.state == IncidentState.Executing

    def test_no_corrections_in_late_states(self, stack):
        inc = open_incident(stack)
        inc.state = IncidentState.UnderReview
        with pytest.raises(IllegalState):
            stack.engine.execute_correction(inc.id, Role.Analyst,
                                            kind=CorrectionKind.ThrottleCalls,
                                            params={"cap": 1, "window_s": 10})

    def test_escalation_follows_the_chain(self, stack):
        inc = open_incident(stack)
        stack.engine.escalate(inc.id, Role.Analyst, Role.SOCLead)
        # skipping a level is allowed only because emergency mode is enabled
        stack.engine.escalate(inc.id, Role.Analyst, Role.CISO)
        doc = playbook_doc()
        doc["authority"]["emergency"]["enabled"] = False
        strict = make_stack(playbook=doc)
        inc2 = open_incident(strict)
        with pytest.raises(InvalidChainStep):
            strict.engine.escalate(inc2.id, Role.Analyst, Role.CISO)

    def test_idempotent_open_per_alert(self):
        stack = make_stack(playbook=playbook_doc(triggers=[{
            "id": "reports", "metric": "external_report_count", "window_s": 600,
            "threshold": {"op": ">=", "value": 1}, "min_samples": 1,
            "severity": "High", "grade": "Elevated",
            "binding": {"type": "AlertOnly"}}]))
        stack.report_external("m1")
        alert = stack.advance(10)[0]
        a = stack.engine.open_incident(alert.id, Severity.High, Role.Analyst)
        b = stack.engine.open_incident(alert.id, Severity.High, Role.Analyst)
        assert a.id == b.id


class TestRedeployGate:
    def locked_stack(self):
        stack = make_stack()
        inc = open_incident(stack, Severity.Critical)
        stack.engine.execute_correction(inc.id, Role.CISO,
                                        kind=CorrectionKind.MarketRemoval,
                                        model_id="m1")
        stack.engine.execute_correction(inc.id, Role.CISO,
                                        kind=CorrectionKind.Moratorium,
                                        model_id="m1")
        stack.engine.advance(inc.id, IncidentState.Remediating, Role.SOCLead)
        stack.engine.advance(inc.id, IncidentState.Recovering, Role.SOCLead)
        stack.engine.advance(inc.id, IncidentState.UnderReview, Role.SOCLead)
        return stack, inc

    def test_approval_restores_and_closes(self):
        stack, inc = self.locked_stack()
        stack.engine.approve_redeployment(inc.id, APPROVED_REVIEW, [Role.CISO])
        dep = stack.store.deployment("m1")
        assert dep.state == DeployState.Active and not dep.moratorium
        assert inc.state == IncidentState.Closed

    def test_requires_under_review_state(self, stack):
        inc = open_incident(stack)
        with pytest.raises(IllegalState):
            stack.engine.approve_redeployment(inc.id, APPROVED_REVIEW, [Role.CISO])

    def test_requires_eligible_approvers(self):
        stack, inc = self.locked_stack()
        with pytest.raises(InsufficientApprovers):
            stack.engine.approve_redeployment(inc.id, APPROVED_REVIEW,
                                              [Role.Analyst, Role.SOCLead])

    def test_requires_approved_review(self):
        stack, inc = self.locked_stack()
        with pytest.raises(ReviewMissing):
            stack.engine.approve_redeployment(inc.id, None, [Role.CISO])
        bad = AfterActionReview(root_cause="x", why_not_caught_earlier="y",
                                approved=False)
        with pytest.raises(ReviewNotApproved):
            stack.engine.approve_redeployment(inc.id, bad, [Role.CISO])

    def test_external_signoff_when_configured(self):
        doc = playbook_doc(redeploy={"min_approvers": 1, "roles": ["CISO"],
                                     "external_signoff": True})
        stack = make_stack(playbook=doc)
        inc = open_incident(stack)
        stack.engine.execute_correction(inc.id, Role.CISO,
                                        kind=CorrectionKind.MarketRemoval,
                                        model_id="m1")
        for to in (IncidentState.Remediating, IncidentState.Recovering,
                   IncidentState.UnderReview):
            stack.engine.advance(inc.id, to, Role.SOCLead)
        with pytest.raises(InsufficientApprovers):
            stack.engine.approve_redeployment(inc.id, APPROVED_REVIEW, [Role.CISO])
        stack.engine.approve_redeployment(inc.id, APPROVED_REVIEW,
                                          [Role.CISO, "External"])
        assert stack.store.deployment("m1").state == DeployState.Active

    def test_random_sequences_never_bypass_the_gate(self):
        """10^4 random operation sequences; a locked deployment goes Active
        only through an approved-review redeployment."""
        rng = random.Random(1234)
        lock_states = {DeployState.MarketRemoved, DeployState.PoweredOff}
        violations = 0
        for seq in range(10_000):
            stack = make_stack()
            inc = open_incident(stack, Severity.Critical)
            for _ in range(rng.randint(3, 8)):
                dep_before = stack.store.deployment("m1")
                op = rng.randrange(6)
                approved_before = (inc.review is not None and inc.review.approved)
                try:
                    if op == 0:
                        kind = rng.choice([
                            CorrectionKind.MarketRemoval, CorrectionKind.PowerOff,
                            CorrectionKind.Moratorium, CorrectionKind.AllowlistMode,
                            CorrectionKind.ThrottleCalls])
                        params = ({"cap": 1, "window_s": 10}
                                  if kind == CorrectionKind.ThrottleCalls else {})
                        stack.engine.execute_correction(
                            inc.id, rng.choice(list(Role)), kind=kind,
                            params=params, model_id="m1")
                    elif op == 1:
                        policies = stack.store.all_policies()
                        if policies:
                            stack.engine.revoke_correction(
                                inc.id, rng.choice(policies).id,
                                rng.choice(list(Role)))
                    elif op == 2:
                        stack.engine.advance(inc.id,
                                             rng.choice(list(IncidentState)),
                                             Role.SOCLead)
                    elif op == 3:
                        stack.engine.set_review(inc.id, rng.choice([
                            APPROVED_REVIEW,
                            AfterActionReview(root_cause="x",
                                              why_not_caught_earlier="y",
                                              approved=False)]))
                    elif op == 4:
                        stack.engine.approve_redeployment(
                            inc.id, None,
                            rng.sample([Role.Analyst, Role.SOCLead, Role.CISO,
                                        Role.CEO], rng.randint(0, 3)))
                    else:
                        stack.store.restore_active  # looked up, never called raw
                        stack.engine.escalate(inc.id, Role.Analyst, Role.SOCLead)
                except ModelGateError:
                    pass
                dep_after = stack.store.deployment("m1")
                unlocked = (dep_before.state in lock_states
                            and dep_after.state == DeployState.Active)
                moratorium_cleared = dep_before.moratorium and not dep_after.moratorium
                if (unlocked or moratorium_cleared) and not approved_before and not (
                        inc.review is not None and inc.review.approved):
                    violations += 1
        assert violations == 0


class TestAuthorityMatrix:
    def test_exhaustive_role_kind_grid(self):
        stack = make_stack()
        for role_name, kinds in FULL_GRANTS.items():
            role = Role[role_name]
            granted = set(kinds)
            for kind in CorrectionKind:
                if kind.value in granted:
                    assert stack.engine.check_authority(role, kind) is None
                else:
                    with pytest.raises(UnauthorizedActor):
                        stack.engine.check_authority(role, kind)

    def test_devolution_requires_timeout_to_elapse(self, stack):
        inc = open_incident(stack)
        stack.engine.escalate(inc.id, Role.SOCLead, Role.CISO)
        stack.clock.advance(1799)
        with pytest.raises(UnauthorizedActor):
            stack.engine.check_authority(Role.SOCLead, CorrectionKind.PowerOff, inc)
        stack.clock.advance(1)
        assert stack.engine.check_authority(
            Role.SOCLead, CorrectionKind.PowerOff, inc) == Role.CISO

    def test_devolution_limited_to_configured_kinds_and_role(self, stack):
        inc = open_incident(stack)
        stack.engine.escalate(inc.id, Role.SOCLead, Role.CISO)
        stack.engine.escalate(inc.id, Role.CISO, Role.CEO)
        stack.clock.advance(3600)
        # Decommission is not in the emergency clause even though CEO is absent
        with pytest.raises(UnauthorizedActor):
            stack.engine.check_authority(Role.SOCLead, CorrectionKind.Decommission, inc)
        # the analyst is not the designated fallback role
        with pytest.raises(UnauthorizedActor):
            stack.engine.check_authority(Role.Analyst, CorrectionKind.PowerOff, inc)

    def test_acknowledged_escalation_blocks_devolution(self, stack):
        inc = open_incident(stack)
        stack.engine.escalate(inc.id, Role.SOCLead, Role.CISO)
        stack.engine.acknowledge_escalation(inc.id, Role.CISO)
        stack.clock.advance(3600)
        with pytest.raises(UnauthorizedActor):
            stack.engine.check_authority(Role.SOCLead, CorrectionKind.PowerOff, inc)

    def test_devolved_correction_is_recorded(self, stack):
        inc = open_incident(stack)
        stack.engine.escalate(inc.id, Role.SOCLead, Role.CISO)
        stack.clock.advance(1800)
        stack.engine.execute_correction(inc.id, Role.SOCLead,
                                        kind=CorrectionKind.PowerOff,
                                        model_id="m1")
        assert stack.store.deployment("m1").state == DeployState.PoweredOff
        assert inc.devolutions == [{
            "actor": "SOCLead", "devolved_from": "CISO",
            "kind": "PowerOff", "ts": stack.clock.now(),
        }]
