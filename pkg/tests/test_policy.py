"""Access decisions: taxonomy, parameter validation, ordering, monotonicity."""

import random
from types import MappingProxyType

import pytest

from modelgate.errors import (
    AlreadyRevoked,
    InvalidParams,
    MalformedContext,
    NotFound,
    TerminalState,
    UnauthorizedActor,
    UnknownDeployment,
)
from modelgate.authority import Role
from modelgate.policy import (
    Activation,
    Capabilities,
    CorrectionKind,
    CorrectionPolicy,
    DeploymentState,
    DeployState,
    Principal,
    RequestContext,
    Scope,
    ScopeType,
    Snapshot,
    TAXONOMY_ROW,
    Tier,
    Verdict,
    resolve_access,
    validate_params,
)

from conftest import make_stack


def snap(policies=(), deployments=None, principals=None, version=1) -> Snapshot:
    deployments = deployments or {"m1": DeploymentState(model_id="m1")}
    principals = principals or {
        "p-safe": Principal("p-safe", Tier.SafetyCritical, allowlisted=True,
                            kyc_verified=True),
        "p-solo": Principal("p-solo", Tier.Individual),
    }
    return Snapshot(version=version, policies=tuple(policies),
                    deployments=MappingProxyType(dict(deployments)),
                    principals=MappingProxyType(dict(principals)))


def pol(pid, kind, scope=Scope(ScopeType.Global), params=None, model_id=None):
    return CorrectionPolicy(id=pid, kind=kind, scope=scope,
                            params=params or {}, model_id=model_id)


class TestTaxonomy:
    def test_twenty_kinds_and_unique_rows(self):
        assert len(CorrectionKind) == 20
        assert set(TAXONOMY_ROW) == set(CorrectionKind)
        assert len(set(TAXONOMY_ROW.values())) == 20

    def test_param_validation_rejects_bad_values(self):
        with pytest.raises(InvalidParams):
            validate_params(CorrectionKind.ThrottlePrompts, {"cap": -1, "window_s": 60})
        with pytest.raises(InvalidParams):
            validate_params(CorrectionKind.ThrottlePrompts, {"cap": 5, "window_s": 0})
        with pytest.raises(InvalidParams):
            validate_params(CorrectionKind.ReduceContextWindow, {"max_tokens": 0})
        with pytest.raises(InvalidParams):
            validate_params(CorrectionKind.OutputFilter, {})
        with pytest.raises(InvalidParams):
            validate_params(CorrectionKind.ProhibitUseCase, {})
        with pytest.raises(InvalidParams):
            validate_params(CorrectionKind.NarrowModel, {})
        validate_params(CorrectionKind.ThrottleCalls, {"cap": 0, "window_s": 1})

    def test_principal_invariants(self):
        with pytest.raises(InvalidParams):
            Principal("p", allowlisted=True, blocklisted=True)
        with pytest.raises(InvalidParams):
            Principal("p", tier=Tier.SafetyCritical, kyc_verified=False)


class TestResolveOrder:
    def test_unknown_deployment_and_principal(self):
        s = snap()
        with pytest.raises(UnknownDeployment):
            resolve_access(RequestContext("p-solo", "nope"), s)
        with pytest.raises(MalformedContext):
            resolve_access(RequestContext("ghost", "m1"), s)

    def test_shutdown_state_denies_even_allowlisted(self):
        for state, reason in ((DeployState.MarketRemoved, "MarketRemoved"),
                              (DeployState.PoweredOff, "PoweredOff"),
                              (DeployState.Decommissioned, "Decommissioned")):
            s = snap(deployments={"m1": DeploymentState("m1", state=state)})
            d = resolve_access(RequestContext("p-safe", "m1"), s)
            assert d.verdict == Verdict.Deny and d.reason == reason

    def test_moratorium_does_not_block_traffic(self):
        s = snap(deployments={"m1": DeploymentState("m1", moratorium=True)})
        d = resolve_access(RequestContext("p-solo", "m1"), s)
        assert d.verdict == Verdict.Allow

    def test_state_precedes_blocklist(self):
        s = snap(
            policies=[pol("pol-1", CorrectionKind.BlocklistPrincipal,
                          Scope(ScopeType.Principal, "p-safe"))],
            deployments={"m1": DeploymentState("m1", state=DeployState.PoweredOff)})
        d = resolve_access(RequestContext("p-safe", "m1"), s)
        assert d.reason == "PoweredOff"

    def test_blocklist_precedes_allowlist_mode(self):
        s = snap(
            policies=[
                pol("pol-1", CorrectionKind.BlocklistPrincipal,
                    Scope(ScopeType.Principal, "p-solo")),
                pol("pol-2", CorrectionKind.AllowlistMode, params={"model_id": "m1"},
                    model_id="m1"),
            ],
            deployments={"m1": DeploymentState("m1", state=DeployState.AllowlistOnly)})
        d = resolve_access(RequestContext("p-solo", "m1"), s)
        assert d.reason == "Blocklisted"

    def test_allowlist_mode_spares_allowlisted(self):
        s = snap(deployments={"m1": DeploymentState("m1", state=DeployState.AllowlistOnly)})
        assert resolve_access(RequestContext("p-safe", "m1"), s).verdict == Verdict.Allow
        d = resolve_access(RequestContext("p-solo", "m1"), s)
        assert d.verdict == Verdict.Deny and d.reason == "AllowlistOnly"

    def test_use_case_prohibition(self):
        s = snap(policies=[pol("pol-1", CorrectionKind.ProhibitUseCase,
                               params={"use_case": "medical"})])
        d = resolve_access(RequestContext("p-solo", "m1", use_case="medical"), s)
        assert d.reason == "UseCaseProhibited"
        assert resolve_access(
            RequestContext("p-solo", "m1", use_case="general"), s).verdict == Verdict.Allow

    def test_throttles_are_consulted_not_consumed(self):
        s = snap(policies=[pol("pol-1", CorrectionKind.ThrottlePrompts,
                               params={"cap": 2, "window_s": 60})])
        for _ in range(5):  # pure function: repeated calls never consume quota
            d = resolve_access(RequestContext("p-solo", "m1"), s)
            assert d.verdict == Verdict.Allow
            assert len(d.throttles) == 1
            assert d.throttles[0].cap == 2

    def test_throttle_exemption_for_allowlisted(self):
        s = snap(policies=[pol("pol-1", CorrectionKind.ThrottlePrompts,
                               params={"cap": 2, "window_s": 60,
                                       "exempt_allowlisted": True})])
        assert resolve_access(RequestContext("p-safe", "m1"), s).throttles == ()
        assert len(resolve_access(RequestContext("p-solo", "m1"), s).throttles) == 1

    def test_transforms_produce_transform_verdict(self):
        s = snap(policies=[pol("pol-1", CorrectionKind.ReduceContextWindow,
                               params={"max_tokens": 4})])
        d = resolve_access(RequestContext("p-solo", "m1", prompt_tokens=10), s)
        assert d.verdict == Verdict.Transform
        assert ("truncate_context", 4) in d.transforms
        # under the cap: no transform needed
        d2 = resolve_access(RequestContext("p-solo", "m1", prompt_tokens=3), s)
        assert d2.verdict == Verdict.Allow

    def test_tool_use_deny_wins_over_strip(self):
        s = snap(policies=[
            pol("pol-1", CorrectionKind.ToolUseLimit, params={"mode": "strip"}),
            pol("pol-2", CorrectionKind.ToolUseLimit,
                Scope(ScopeType.Principal, "p-solo"), params={"mode": "deny"}),
        ])
        d = resolve_access(RequestContext("p-solo", "m1", tool_intents=("t1",)), s)
        assert d.verdict == Verdict.Deny and d.reason == "ToolUseRestricted"

    def test_version_swap_transform(self):
        s = snap(policies=[pol("pol-1", CorrectionKind.NarrowModel,
                               params={"serve_version": "m1-prev"})])
        d = resolve_access(RequestContext("p-solo", "m1"), s)
        assert ("serve_version", "m1-prev") in d.transforms

    def test_deny_carries_exactly_one_reason(self):
        s = snap(policies=[pol("pol-1", CorrectionKind.BlocklistPrincipal,
                               Scope(ScopeType.Principal, "p-solo"))])
        d = resolve_access(RequestContext("p-solo", "m1"), s)
        assert d.verdict == Verdict.Deny
        assert isinstance(d.reason, str) and d.reason


KIND_POOL = [
    CorrectionKind.BlocklistPrincipal,
    CorrectionKind.AllowlistMode,
    CorrectionKind.ThrottlePrompts,
    CorrectionKind.ThrottleCalls,
    CorrectionKind.ProhibitUseCase,
    CorrectionKind.ReduceContextWindow,
    CorrectionKind.SessionReset,
    CorrectionKind.ToolUseLimit,
    CorrectionKind.AutonomyLimit,
    CorrectionKind.NarrowModel,
    CorrectionKind.GlobalPlanningLimit,
    CorrectionKind.FineTuneLockout,
]


def random_policy(rng, pid):
    kind = rng.choice(KIND_POOL)
    scope = rng.choice([
        Scope(ScopeType.Global),
        Scope(ScopeType.Tier, rng.choice(["Individual", "Commercial", "SafetyCritical"])),
        Scope(ScopeType.UseCase, rng.choice(["general", "medical", "legal"])),
        Scope(ScopeType.Principal, rng.choice(["p-a", "p-b", "p-c"])),
    ])
    params = {}
    if kind in (CorrectionKind.ThrottlePrompts, CorrectionKind.ThrottleCalls):
        params = {"cap": rng.randint(0, 10), "window_s": rng.choice([10, 60, 600])}
    elif kind == CorrectionKind.ProhibitUseCase:
        params = {"use_case": rng.choice(["general", "medical", "legal"])}
    elif kind == CorrectionKind.ReduceContextWindow:
        params = {"max_tokens": rng.randint(1, 40)}
    elif kind == CorrectionKind.SessionReset:
        params = {"max_prompts": rng.randint(1, 20)}
    elif kind == CorrectionKind.ToolUseLimit:
        params = {"mode": rng.choice(["deny", "strip"])}
    elif kind == CorrectionKind.AutonomyLimit:
        params = {"max_tool_intents": rng.randint(0, 4)}
    elif kind == CorrectionKind.NarrowModel:
        params = {"serve_version": rng.choice(["m1", "m2"])}
    elif kind == CorrectionKind.GlobalPlanningLimit:
        params = {"max_concurrent_sessions": rng.randint(0, 8)}
    elif kind == CorrectionKind.AllowlistMode:
        params = {"model_id": "m1"}
    if rng.random() < 0.25:
        params["exempt_allowlisted"] = True
    return pol(pid, kind, scope, params, model_id=rng.choice([None, "m1", "m2"]))


class TestMonotonicity:
    def test_adding_a_policy_never_raises_the_verdict(self):
        """10^4 random (context, policy set, extra policy) triples."""
        rng = random.Random(99)
        principals = {
            "p-a": Principal("p-a", Tier.Individual),
            "p-b": Principal("p-b", Tier.Commercial, allowlisted=True),
            "p-c": Principal("p-c", Tier.SafetyCritical, allowlisted=True,
                             kyc_verified=True),
        }
        deployments = {
            "m1": DeploymentState("m1"),
            "m2": DeploymentState("m2", context_window_max=30),
        }
        violations = 0
        for i in range(10_000):
            base = [random_policy(rng, f"pol-{j:04d}")
                    for j in range(rng.randint(0, 5))]
            extra = random_policy(rng, "pol-extra")
            ctx = RequestContext(
                principal_id=rng.choice(list(principals)),
                model_id=rng.choice(list(deployments)),
                use_case=rng.choice(["general", "medical", "legal"]),
                prompt_tokens=rng.randint(0, 60),
                tool_intents=tuple(f"t{k}" for k in range(rng.randint(0, 3))),
            )
            before = resolve_access(ctx, snap(base, deployments, principals)).verdict
            after = resolve_access(ctx, snap(base + [extra], deployments,
                                             principals)).verdict
            if after > before:
                violations += 1
        assert violations == 0


class TestPolicyStore:
    def test_apply_and_revoke_bump_version(self, stack):
        store = stack.store
        v0 = store.version
        p = store.apply_correction(CorrectionKind.ThrottlePrompts, Role.Analyst,
                                   params={"cap": 5, "window_s": 60})
        assert store.version == v0 + 1
        assert store.snapshot().policy(p.id) is not None
        store.revoke_correction(p.id, Role.Analyst)
        assert store.version == v0 + 2
        assert store.snapshot().policy(p.id) is None
        with pytest.raises(AlreadyRevoked):
            store.revoke_correction(p.id, Role.Analyst)
        with pytest.raises(NotFound):
            store.revoke_correction("pol-9999", Role.Analyst)

    def test_state_kinds_transition_deployment(self, stack):
        store = stack.store
        store.apply_correction(CorrectionKind.AllowlistMode, Role.SOCLead,
                               model_id="m1")
        assert store.deployment("m1").state == DeployState.AllowlistOnly
        store.apply_correction(CorrectionKind.Decommission, Role.CEO, model_id="m1")
        dep = store.deployment("m1")
        assert dep.state == DeployState.Decommissioned and dep.tombstoned
        with pytest.raises(TerminalState):
            store.apply_correction(CorrectionKind.PowerOff, Role.CISO, model_id="m1")
        with pytest.raises(TerminalState):
            store.restore_active("m1", Role.CISO, "inc-0001")

    def test_allowlist_revoke_restores_active(self, stack):
        store = stack.store
        p = store.apply_correction(CorrectionKind.AllowlistMode, Role.SOCLead,
                                   model_id="m1")
        assert store.deployment("m1").state == DeployState.AllowlistOnly
        store.revoke_correction(p.id, Role.SOCLead)
        assert store.deployment("m1").state == DeployState.Active

    def test_unauthorized_actor_rejected(self, stack):
        with pytest.raises(UnauthorizedActor):
            stack.store.apply_correction(CorrectionKind.PowerOff, Role.Analyst,
                                         model_id="m1")

    def test_snapshot_isolation(self, stack):
        before = stack.store.snapshot()
        stack.store.apply_correction(CorrectionKind.ThrottleCalls, Role.Analyst,
                                     params={"cap": 1, "window_s": 60})
        assert before.policies == ()
        assert len(stack.store.snapshot().policies) == 1

    def test_export_import_round_trip(self, stack):
        stack.store.apply_correction(CorrectionKind.ThrottleCalls, Role.Analyst,
                                     params={"cap": 1, "window_s": 60})
        doc = stack.store.export_snapshot()
        other = make_stack()
        other.store.import_snapshot(doc)
        assert other.store.export_snapshot() == doc
