"""Correction taxonomy, policy store, and the pure access-decision function."""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field, replace
from enum import Enum, IntEnum
from types import MappingProxyType
from typing import Any, Mapping, Optional, Sequence

from .authority import AuthorityMatrix, Role
from .errors import (
    AlreadyRevoked,
    InvalidParams,
    MalformedContext,
    NotFound,
    ParseError,
    TerminalState,
    UnauthorizedActor,
    UnknownDeployment,
)


def canonical_json(obj: Any) -> str:
    """Stable serialization used for snapshots, audit payloads, and digests."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


class CorrectionKind(str, Enum):
    BlocklistPrincipal = "BlocklistPrincipal"      # 1a
    AllowlistMode = "AllowlistMode"                # 1b
    ThrottleCalls = "ThrottleCalls"                # 2a
    ThrottlePrompts = "ThrottlePrompts"            # 2b
    ThrottleEndUsers = "ThrottleEndUsers"          # 2c
    ThrottleApplications = "ThrottleApplications"  # 2d
    ReduceContextWindow = "ReduceContextWindow"    # 3a
    SessionReset = "SessionReset"                  # 3b
    FineTuneLockout = "FineTuneLockout"            # 3c
    OutputFilter = "OutputFilter"                  # 3d
    CapabilityRemoval = "CapabilityRemoval"        # 3e (version swap)
    GlobalPlanningLimit = "GlobalPlanningLimit"    # 3f
    AutonomyLimit = "AutonomyLimit"                # 3g
    ProhibitUseCase = "ProhibitUseCase"            # 4a
    NarrowModel = "NarrowModel"                    # 4b (version swap)
    ToolUseLimit = "ToolUseLimit"                  # 4c
    MarketRemoval = "MarketRemoval"                # 5a
    PowerOff = "PowerOff"                          # 5b
    Decommission = "Decommission"                  # 5c
    Moratorium = "Moratorium"                      # 5d


# Taxonomy row codes; the mapping is closed and exhaustive.
TAXONOMY_ROW: dict[CorrectionKind, str] = {
    CorrectionKind.BlocklistPrincipal: "1a",
    CorrectionKind.AllowlistMode: "1b",
    CorrectionKind.ThrottleCalls: "2a",
    CorrectionKind.ThrottlePrompts: "2b",
    CorrectionKind.ThrottleEndUsers: "2c",
    CorrectionKind.ThrottleApplications: "2d",
    CorrectionKind.ReduceContextWindow: "3a",
    CorrectionKind.SessionReset: "3b",
    CorrectionKind.FineTuneLockout: "3c",
    CorrectionKind.OutputFilter: "3d",
    CorrectionKind.CapabilityRemoval: "3e",
    CorrectionKind.GlobalPlanningLimit: "3f",
    CorrectionKind.AutonomyLimit: "3g",
    CorrectionKind.ProhibitUseCase: "4a",
    CorrectionKind.NarrowModel: "4b",
    CorrectionKind.ToolUseLimit: "4c",
    CorrectionKind.MarketRemoval: "5a",
    CorrectionKind.PowerOff: "5b",
    CorrectionKind.Decommission: "5c",
    CorrectionKind.Moratorium: "5d",
}

THROTTLE_KINDS = frozenset({
    CorrectionKind.ThrottleCalls,
    CorrectionKind.ThrottlePrompts,
    CorrectionKind.ThrottleEndUsers,
    CorrectionKind.ThrottleApplications,
})

# Kinds whose application atomically transitions the deployment state.
STATE_KINDS = frozenset({
    CorrectionKind.AllowlistMode,
    CorrectionKind.MarketRemoval,
    CorrectionKind.PowerOff,
    CorrectionKind.Decommission,
    CorrectionKind.Moratorium,
})


class Tier(str, Enum):
    Individual = "Individual"
    Commercial = "Commercial"
    SafetyCritical = "SafetyCritical"


class DeployState(str, Enum):
    Active = "Active"
    Restricted = "Restricted"
    AllowlistOnly = "AllowlistOnly"
    MarketRemoved = "MarketRemoved"
    PoweredOff = "PoweredOff"
    Decommissioned = "Decommissioned"


# Deployment states that deny all traffic, overriding any allowlist.
HARD_DENY_STATES = {
    DeployState.MarketRemoved: "MarketRemoved",
    DeployState.PoweredOff: "PoweredOff",
    DeployState.Decommissioned: "Decommissioned",
}


class ScopeType(IntEnum):
    """Ordered by specificity: most specific wins within a kind."""

    Global = 0
    Tier = 1
    UseCase = 2
    Principal = 3


@dataclass(frozen=True)
class Scope:
    type: ScopeType
    value: Optional[str] = None

    def matches(self, principal: "Principal", use_case: str) -> bool:
        if self.type == ScopeType.Global:
            return True
        if self.type == ScopeType.Tier:
            return principal.tier.value == self.value
        if self.type == ScopeType.UseCase:
            return use_case == self.value
        return principal.id == self.value

    def to_dict(self) -> dict:
        return {"type": self.type.name, "value": self.value}

    @classmethod
    def from_dict(cls, d: Mapping) -> "Scope":
        try:
            stype = ScopeType[str(d.get("type", "Global")).replace("global", "Global")
                              .replace("tier", "Tier").replace("use_case", "UseCase")
                              .replace("principal", "Principal")]
        except KeyError:
            raise ParseError(f"unknown scope type: {d.get('type')!r}")
        value = d.get("value")
        if stype != ScopeType.Global and not value:
            raise InvalidParams(f"scope {stype.name} requires a value")
        return cls(stype, value)


GLOBAL_SCOPE = Scope(ScopeType.Global)


@dataclass(frozen=True)
class Principal:
    id: str
    tier: Tier = Tier.Individual
    allowlisted: bool = False
    blocklisted: bool = False
    kyc_verified: bool = False
    application_id: Optional[str] = None

    def __post_init__(self):
        if self.allowlisted and self.blocklisted:
            raise InvalidParams(f"principal {self.id}: allowlisted and blocklisted")
        if self.tier == Tier.SafetyCritical and not self.kyc_verified:
            raise InvalidParams(f"principal {self.id}: SafetyCritical requires kyc_verified")

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "tier": self.tier.value,
            "allowlisted": self.allowlisted,
            "blocklisted": self.blocklisted,
            "kyc_verified": self.kyc_verified,
            "application_id": self.application_id,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "Principal":
        return cls(
            id=d["id"],
            tier=Tier(d.get("tier", "Individual")),
            allowlisted=bool(d.get("allowlisted", False)),
            blocklisted=bool(d.get("blocklisted", False)),
            kyc_verified=bool(d.get("kyc_verified", False)),
            application_id=d.get("application_id"),
        )


@dataclass(frozen=True)
class Capabilities:
    fine_tune: bool = True
    tool_use: bool = True
    autonomy: bool = True
    internet_access: bool = True

    def to_dict(self) -> dict:
        return {
            "fine_tune": self.fine_tune,
            "tool_use": self.tool_use,
            "autonomy": self.autonomy,
            "internet_access": self.internet_access,
        }


@dataclass(frozen=True)
class DeploymentState:
    model_id: str
    version: str = "v1"
    state: DeployState = DeployState.Active
    moratorium: bool = False
    capabilities: Capabilities = field(default_factory=Capabilities)
    context_window_max: Optional[int] = None
    tombstoned: bool = False  # set by Decommission; destruction is recorded, not performed

    def to_dict(self) -> dict:
        return {
            "model_id": self.model_id,
            "version": self.version,
            "state": self.state.value,
            "moratorium": self.moratorium,
            "capabilities": self.capabilities.to_dict(),
            "context_window_max": self.context_window_max,
            "tombstoned": self.tombstoned,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "DeploymentState":
        caps = d.get("capabilities") or {}
        return cls(
            model_id=d["model_id"],
            version=d.get("version", "v1"),
            state=DeployState(d.get("state", "Active")),
            moratorium=bool(d.get("moratorium", False)),
            capabilities=Capabilities(**caps) if caps else Capabilities(),
            context_window_max=d.get("context_window_max"),
            tombstoned=bool(d.get("tombstoned", False)),
        )


@dataclass(frozen=True)
class Activation:
    mode: str  # "Automatic" | "Manual"
    ref: Optional[str] = None  # trigger id or actor role name

    def to_dict(self) -> dict:
        return {"mode": self.mode, "ref": self.ref}


MANUAL = lambda actor: Activation("Manual", actor.name if isinstance(actor, Role) else str(actor))


@dataclass(frozen=True)
class CorrectionPolicy:
    id: str
    kind: CorrectionKind
    scope: Scope = GLOBAL_SCOPE
    params: Mapping[str, Any] = field(default_factory=dict)
    activation: Activation = field(default_factory=lambda: Activation("Manual"))
    status: str = "Active"
    provenance: Optional[str] = None  # incident id
    created_at: float = 0.0
    revoked_at: Optional[float] = None
    model_id: Optional[str] = None  # None = applies to all deployments

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "kind": self.kind.value,
            "scope": self.scope.to_dict(),
            "params": dict(self.params),
            "activation": self.activation.to_dict(),
            "status": self.status,
            "provenance": self.provenance,
            "created_at": self.created_at,
            "revoked_at": self.revoked_at,
            "model_id": self.model_id,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "CorrectionPolicy":
        act = d.get("activation") or {"mode": "Manual"}
        return cls(
            id=d["id"],
            kind=CorrectionKind(d["kind"]),
            scope=Scope.from_dict(d.get("scope") or {"type": "Global"}),
            params=dict(d.get("params") or {}),
            activation=Activation(act.get("mode", "Manual"), act.get("ref")),
            status=d.get("status", "Active"),
            provenance=d.get("provenance"),
            created_at=float(d.get("created_at", 0.0)),
            revoked_at=d.get("revoked_at"),
            model_id=d.get("model_id"),
        )


def validate_params(kind: CorrectionKind, params: Mapping[str, Any]) -> None:
    """Reject malformed kind-specific parameters before activation."""
    if kind in THROTTLE_KINDS:
        cap = params.get("cap")
        window = params.get("window_s")
        if cap is None or not isinstance(cap, int) or cap < 0:
            raise InvalidParams(f"{kind.value}: cap must be an integer >= 0")
        if window is None or not isinstance(window, (int, float)) or window <= 0:
            raise InvalidParams(f"{kind.value}: window_s must be > 0")
    elif kind == CorrectionKind.ReduceContextWindow:
        mt = params.get("max_tokens")
        if mt is None or not isinstance(mt, int) or mt < 1:
            raise InvalidParams("ReduceContextWindow: max_tokens must be >= 1")
    elif kind == CorrectionKind.SessionReset:
        mp = params.get("max_prompts")
        if mp is not None and (not isinstance(mp, int) or mp < 1):
            raise InvalidParams("SessionReset: max_prompts must be >= 1 when set")
    elif kind == CorrectionKind.OutputFilter:
        if not params.get("pattern_set"):
            raise InvalidParams("OutputFilter: pattern_set required")
    elif kind == CorrectionKind.ProhibitUseCase:
        if not params.get("use_case"):
            raise InvalidParams("ProhibitUseCase: use_case required")
    elif kind in (CorrectionKind.CapabilityRemoval, CorrectionKind.NarrowModel):
        if not params.get("serve_version"):
            raise InvalidParams(f"{kind.value}: serve_version required (modeled as version swap)")
    elif kind == CorrectionKind.GlobalPlanningLimit:
        mc = params.get("max_concurrent_sessions")
        if mc is None or not isinstance(mc, int) or mc < 0:
            raise InvalidParams("GlobalPlanningLimit: max_concurrent_sessions must be >= 0")
    elif kind == CorrectionKind.AutonomyLimit:
        ma = params.get("max_tool_intents", 0)
        if not isinstance(ma, int) or ma < 0:
            raise InvalidParams("AutonomyLimit: max_tool_intents must be >= 0")


class Verdict(IntEnum):
    """Permissiveness lattice: Deny < Transform < Allow."""

    Deny = 0
    Transform = 1
    Allow = 2


@dataclass(frozen=True)
class ThrottleCheck:
    """A throttle the gateway must consult before serving the request."""

    policy_id: str
    cap: int
    window_s: float
    per_principal: bool

    def key(self, principal_id: str) -> tuple:
        return (self.policy_id, principal_id if self.per_principal else "*")


@dataclass(frozen=True)
class Decision:
    verdict: Verdict
    reason: Optional[str] = None  # primary reason code for Deny
    transforms: tuple = ()        # ordered (name, param) pairs
    applied_policies: tuple = ()  # every policy id that influenced the pipeline
    throttles: tuple = ()         # ThrottleChecks to consult (not consumed here)
    audit_ref: Optional[int] = None

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict.name,
            "reason": self.reason,
            "transforms": [list(t) for t in self.transforms],
            "applied_policies": list(self.applied_policies),
            "audit_ref": self.audit_ref,
        }


@dataclass(frozen=True)
class RequestContext:
    principal_id: str
    model_id: str
    session_id: str = "default"
    use_case: str = "general"
    prompt_tokens: int = 0
    tool_intents: tuple = ()


@dataclass(frozen=True)
class Snapshot:
    """Immutable view over the active policy set and rosters."""

    version: int
    policies: tuple  # active CorrectionPolicy only
    deployments: Mapping[str, DeploymentState]
    principals: Mapping[str, Principal]

    def policy(self, policy_id: str) -> Optional[CorrectionPolicy]:
        for p in self.policies:
            if p.id == policy_id:
                return p
        return None

    def export(self) -> str:
        """Canonical JSON document for backup and scenario seeding."""
        return canonical_json({
            "version": self.version,
            "policies": [p.to_dict() for p in sorted(self.policies, key=lambda p: p.id)],
            "deployments": {m: d.to_dict() for m, d in sorted(self.deployments.items())},
            "principals": {i: p.to_dict() for i, p in sorted(self.principals.items())},
        })


def _matching(policies: Sequence[CorrectionPolicy], kind: CorrectionKind,
              principal: Principal, use_case: str, model_id: str) -> list[CorrectionPolicy]:
    out = [
        p for p in policies
        if p.kind == kind and p.status == "Active"
        and (p.model_id is None or p.model_id == model_id)
        and p.scope.matches(principal, use_case)
    ]
    # most-specific scope wins within a kind; stable on id for determinism
    out.sort(key=lambda p: (-int(p.scope.type), p.id))
    return out


def _exempt(policy: CorrectionPolicy, principal: Principal) -> bool:
    # Allowlisted principals bypass a restrictive policy only when the policy
    # opts in (e.g. Case-1 style throttles sparing safety-critical users).
    return principal.allowlisted and bool(policy.params.get("exempt_allowlisted", False))


def resolve_access(ctx: RequestContext, snap: Snapshot) -> Decision:
    """Pure, deterministic verdict for one request context against a snapshot.

    Fixed evaluation order: deployment state -> moratorium -> blocklist ->
    allowlist-mode -> use-case prohibition -> throttles (consulted, not
    consumed) -> capability transforms.
    """
    dep = snap.deployments.get(ctx.model_id)
    if dep is None:
        raise UnknownDeployment(f"unknown deployment: {ctx.model_id}")
    principal = snap.principals.get(ctx.principal_id)
    if principal is None:
        raise MalformedContext(f"unknown principal: {ctx.principal_id}")
    if ctx.prompt_tokens < 0:
        raise MalformedContext("prompt token count < 0")

    applied: list[str] = []

    # 1. deployment state: shutdown forms deny everything, allowlist or not
    if dep.state in HARD_DENY_STATES:
        return Decision(Verdict.Deny, HARD_DENY_STATES[dep.state], applied_policies=tuple(applied))

    # 2. moratorium forbids re-deployment, not live traffic; state governs serving

    # 3. blocklist: roster flag or an active BlocklistPrincipal policy
    if principal.blocklisted:
        return Decision(Verdict.Deny, "Blocklisted")
    block = _matching(snap.policies, CorrectionKind.BlocklistPrincipal,
                      principal, ctx.use_case, ctx.model_id)
    if block:
        return Decision(Verdict.Deny, "Blocklisted", applied_policies=(block[0].id,))

    # 4. allowlist-mode: deployment state or an explicit policy
    if dep.state == DeployState.AllowlistOnly and not principal.allowlisted:
        mode = _matching(snap.policies, CorrectionKind.AllowlistMode,
                         principal, ctx.use_case, ctx.model_id)
        return Decision(Verdict.Deny, "AllowlistOnly",
                        applied_policies=tuple(p.id for p in mode[:1]))
    allow_mode = _matching(snap.policies, CorrectionKind.AllowlistMode,
                           principal, ctx.use_case, ctx.model_id)
    if allow_mode and not principal.allowlisted:
        return Decision(Verdict.Deny, "AllowlistOnly", applied_policies=(allow_mode[0].id,))

    # 5. use-case prohibition
    for p in _matching(snap.policies, CorrectionKind.ProhibitUseCase,
                       principal, ctx.use_case, ctx.model_id):
        if p.params.get("use_case") == ctx.use_case and not _exempt(p, principal):
            return Decision(Verdict.Deny, "UseCaseProhibited", applied_policies=(p.id,))

    # 6. throttles: record checks for the gateway; never consumed here
    throttles: list[ThrottleCheck] = []
    for kind in sorted(THROTTLE_KINDS, key=lambda k: TAXONOMY_ROW[k]):
        matches = [p for p in _matching(snap.policies, kind, principal,
                                        ctx.use_case, ctx.model_id)
                   if not _exempt(p, principal)]
        if matches:
            p = matches[0]  # most specific non-exempt scope
            throttles.append(ThrottleCheck(
                policy_id=p.id,
                cap=int(p.params["cap"]),
                window_s=float(p.params["window_s"]),
                per_principal=bool(p.params.get("per_principal", True)),
            ))
            applied.append(p.id)

    # 7. capability transforms. Verdict-affecting values combine by taking the
    # most restrictive across every matching policy: adding a policy can then
    # only hold or lower the verdict, never raise it.
    transforms: list[tuple] = []

    tool_limit = [p for p in _matching(snap.policies, CorrectionKind.ToolUseLimit,
                                       principal, ctx.use_case, ctx.model_id)
                  if not _exempt(p, principal)]
    if ctx.tool_intents and (tool_limit or not dep.capabilities.tool_use):
        deny_mode = (not dep.capabilities.tool_use
                     or any(p.params.get("mode", "deny") != "strip" for p in tool_limit))
        if deny_mode:
            return Decision(Verdict.Deny, "ToolUseRestricted",
                            applied_policies=tuple(p.id for p in tool_limit))
        transforms.append(("strip_tools", len(ctx.tool_intents)))
        applied.extend(p.id for p in tool_limit)

    ctx_limits = [dep.context_window_max] if dep.context_window_max else []
    for p in _matching(snap.policies, CorrectionKind.ReduceContextWindow,
                       principal, ctx.use_case, ctx.model_id):
        if not _exempt(p, principal):
            ctx_limits.append(int(p.params["max_tokens"]))
            applied.append(p.id)
    if ctx_limits and ctx.prompt_tokens > min(ctx_limits):
        transforms.append(("truncate_context", min(ctx_limits)))

    reset_caps = [int(p.params["max_prompts"])
                  for p in _matching(snap.policies, CorrectionKind.SessionReset,
                                     principal, ctx.use_case, ctx.model_id)
                  if not _exempt(p, principal) and p.params.get("max_prompts")]
    if reset_caps:
        transforms.append(("session_reset", min(reset_caps)))
        applied.extend(p.id for p in _matching(snap.policies, CorrectionKind.SessionReset,
                                               principal, ctx.use_case, ctx.model_id)
                       if not _exempt(p, principal) and p.params.get("max_prompts"))

    autonomy = [p for p in _matching(snap.policies, CorrectionKind.AutonomyLimit,
                                     principal, ctx.use_case, ctx.model_id)
                if not _exempt(p, principal)]
    if autonomy:
        cap = min(int(p.params.get("max_tool_intents", 0)) for p in autonomy)
        if len(ctx.tool_intents) > cap:
            transforms.append(("autonomy_limit", cap))
            applied.extend(p.id for p in autonomy)

    for kind in (CorrectionKind.NarrowModel, CorrectionKind.CapabilityRemoval):
        swaps = [p for p in _matching(snap.policies, kind, principal,
                                      ctx.use_case, ctx.model_id)
                 if not _exempt(p, principal)]
        for p in swaps[:1]:
            transforms.append(("serve_version", p.params["serve_version"]))
            applied.append(p.id)

    planning = [p for p in _matching(snap.policies, CorrectionKind.GlobalPlanningLimit,
                                     principal, ctx.use_case, ctx.model_id)
                if not _exempt(p, principal)]
    if planning:
        cap = min(int(p.params["max_concurrent_sessions"]) for p in planning)
        transforms.append(("session_cap", cap))
        applied.extend(p.id for p in planning)

    lockouts = [p for p in _matching(snap.policies, CorrectionKind.FineTuneLockout,
                                     principal, ctx.use_case, ctx.model_id)
                if not _exempt(p, principal)]
    for p in lockouts[:1]:
        transforms.append(("fine_tune_locked", True))
        applied.append(p.id)

    verdict = Verdict.Transform if transforms else Verdict.Allow
    return Decision(verdict, transforms=tuple(transforms),
                    applied_policies=tuple(dict.fromkeys(applied)),
                    throttles=tuple(throttles))


class PolicyStore:
    """Snapshot-versioned policy set plus deployment/principal rosters.

    Mutations funnel through one lock (single logical writer); readers take
    immutable snapshots and never block the writer.
    """

    def __init__(self, deployments: dict[str, DeploymentState],
                 principals: dict[str, Principal],
                 authority: AuthorityMatrix, audit, clock, ids,
                 authority_checker=None):
        self._lock = threading.Lock()
        self._deployments = dict(deployments)
        self._principals = dict(principals)
        self._policies: dict[str, CorrectionPolicy] = {}
        self._version = 0
        self.authority = authority
        self._audit = audit
        self._clock = clock
        self._ids = ids
        # Optional richer check (incident engine adds emergency devolution).
        self._authority_checker = authority_checker
        self._snapshot = self._build_snapshot()

    # --- reads ----------------------------------------------------------

    def snapshot(self) -> Snapshot:
        return self._snapshot

    @property
    def version(self) -> int:
        return self._version

    def deployment(self, model_id: str) -> DeploymentState:
        dep = self._deployments.get(model_id)
        if dep is None:
            raise UnknownDeployment(model_id)
        return dep

    def principal(self, principal_id: str) -> Optional[Principal]:
        return self._principals.get(principal_id)

    def principals(self) -> dict[str, Principal]:
        return dict(self._principals)

    def active_policies(self) -> list[CorrectionPolicy]:
        return [p for p in self._policies.values() if p.status == "Active"]

    def all_policies(self) -> list[CorrectionPolicy]:
        return list(self._policies.values())

    # --- writes ---------------------------------------------------------

    def _build_snapshot(self) -> Snapshot:
        return Snapshot(
            version=self._version,
            policies=tuple(p for p in self._policies.values() if p.status == "Active"),
            deployments=MappingProxyType(dict(self._deployments)),
            principals=MappingProxyType(dict(self._principals)),
        )

    def _bump(self, category: str, payload: dict, actor) -> int:
        self._version += 1
        payload = dict(payload, version=self._version)
        self._snapshot = self._build_snapshot()
        if self._audit is not None:
            self._audit.append(category, actor, payload)
        return self._version

    def _check_authority(self, actor: Role, kind: CorrectionKind) -> None:
        if self._authority_checker is not None:
            self._authority_checker(actor, kind)
            return
        if not self.authority.allows(actor, kind):
            granted = ", ".join(r.name for r in self.authority.granting_roles(kind))
            raise UnauthorizedActor(
                f"{actor.name} may not execute {kind.value}; requires: {granted or 'nobody'}")

    def register_principal(self, principal: Principal) -> None:
        with self._lock:
            self._principals[principal.id] = principal
            self._snapshot = self._build_snapshot()

    def apply_correction(self, kind: CorrectionKind, actor: Role,
                         scope: Scope = GLOBAL_SCOPE,
                         params: Optional[dict] = None,
                         model_id: Optional[str] = None,
                         provenance: Optional[str] = None,
                         activation: Optional[Activation] = None,
                         _skip_authority: bool = False) -> CorrectionPolicy:
        params = dict(params or {})
        if not _skip_authority:
            self._check_authority(actor, kind)
        validate_params(kind, params)
        with self._lock:
            target = model_id or params.get("model_id")
            if kind in STATE_KINDS:
                if target is None:
                    raise InvalidParams(f"{kind.value} requires a model_id")
                dep = self._deployments.get(target)
                if dep is None:
                    raise UnknownDeployment(target)
                if dep.state == DeployState.Decommissioned:
                    raise TerminalState(f"{target} is decommissioned")
            policy = CorrectionPolicy(
                id=self._ids.next("pol"),
                kind=kind,
                scope=scope,
                params=params,
                activation=activation or Activation("Manual", actor.name),
                status="Active",
                provenance=provenance,
                created_at=self._clock.now(),
                model_id=target if kind in STATE_KINDS else model_id,
            )
            if kind in STATE_KINDS:
                self._transition_for(policy, target)
            self._policies[policy.id] = policy
            self._bump("PolicyChange", {
                "action": "apply",
                "policy": policy.to_dict(),
                "deployments": {m: d.to_dict() for m, d in self._deployments.items()},
            }, actor)
            return policy

    def _transition_for(self, policy: CorrectionPolicy, model_id: str) -> None:
        dep = self._deployments[model_id]
        if policy.kind == CorrectionKind.AllowlistMode:
            dep = replace(dep, state=DeployState.AllowlistOnly)
        elif policy.kind == CorrectionKind.MarketRemoval:
            dep = replace(dep, state=DeployState.MarketRemoved)
        elif policy.kind == CorrectionKind.PowerOff:
            dep = replace(dep, state=DeployState.PoweredOff)
        elif policy.kind == CorrectionKind.Decommission:
            dep = replace(dep, state=DeployState.Decommissioned, tombstoned=True)
        elif policy.kind == CorrectionKind.Moratorium:
            dep = replace(dep, moratorium=True)
        self._deployments[model_id] = dep

    def revoke_correction(self, policy_id: str, actor: Role,
                          _skip_authority: bool = False) -> CorrectionPolicy:
        with self._lock:
            policy = self._policies.get(policy_id)
            if policy is None:
                raise NotFound(f"no such policy: {policy_id}")
            if policy.status == "Revoked":
                raise AlreadyRevoked(policy_id)
        if not _skip_authority:
            self._check_authority(actor, policy.kind)
        with self._lock:
            policy = replace(policy, status="Revoked", revoked_at=self._clock.now())
            self._policies[policy_id] = policy
            if policy.kind == CorrectionKind.AllowlistMode and policy.model_id:
                dep = self._deployments[policy.model_id]
                if dep.state == DeployState.AllowlistOnly:
                    self._deployments[policy.model_id] = replace(dep, state=DeployState.Active)
            self._bump("PolicyChange", {
                "action": "revoke",
                "policy": policy.to_dict(),
                "deployments": {m: d.to_dict() for m, d in self._deployments.items()},
            }, actor)
            return policy

    def restore_active(self, model_id: str, actor: Role, incident_id: str) -> None:
        """Clear moratorium and return a removed/locked-down deployment to Active.

        Only the incident engine's approved-redeployment gate calls this.
        """
        with self._lock:
            dep = self._deployments.get(model_id)
            if dep is None:
                raise UnknownDeployment(model_id)
            if dep.state == DeployState.Decommissioned:
                raise TerminalState(f"{model_id} is decommissioned")
            self._deployments[model_id] = replace(dep, state=DeployState.Active,
                                                  moratorium=False)
            self._bump("PolicyChange", {
                "action": "restore",
                "model_id": model_id,
                "incident_id": incident_id,
                "deployments": {m: d.to_dict() for m, d in self._deployments.items()},
            }, actor)

    # --- export / import --------------------------------------------------

    def export_snapshot(self) -> str:
        return self.snapshot().export()

    @staticmethod
    def parse_snapshot(document: str) -> dict:
        try:
            data = json.loads(document)
        except json.JSONDecodeError as e:
            raise ParseError(f"snapshot document: {e}")
        return data

    def import_snapshot(self, document: str) -> int:
        """Seed policies/rosters from a canonical snapshot document."""
        data = self.parse_snapshot(document)
        with self._lock:
            self._policies = {
                p["id"]: CorrectionPolicy.from_dict(p) for p in data.get("policies", [])
            }
            self._deployments = {
                m: DeploymentState.from_dict(d) for m, d in data.get("deployments", {}).items()
            }
            self._principals = {
                i: Principal.from_dict(p) for i, p in data.get("principals", {}).items()
            }
            self._version = int(data.get("version", 0))
            self._snapshot = self._build_snapshot()
            return self._version
