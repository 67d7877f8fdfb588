"""Data-plane proxy: authenticates, decides, throttles, transforms, serves."""

from __future__ import annotations

import hashlib
import re
import threading
from dataclasses import dataclass, field
from typing import Optional, Sequence

from . import ratelimit
from .errors import BackendUnavailable, UnknownDeployment, UnknownSession
from .policy import (
    Decision,
    DeployState,
    HARD_DENY_STATES,
    RequestContext,
    Verdict,
    resolve_access,
)

REFUSAL_TEXT = "[filtered] This response was withheld by the output filter."


@dataclass(frozen=True)
class InferenceRequest:
    principal_id: str
    session_id: str
    model_id: str
    prompt: Sequence[str]  # token sequence; callers may pass a whitespace string
    tool_intents: tuple = ()
    use_case: str = "general"
    user_feedback_channel: bool = True

    @staticmethod
    def tokens_of(prompt) -> tuple:
        if isinstance(prompt, str):
            return tuple(prompt.split())
        return tuple(prompt)


@dataclass(frozen=True)
class InferenceResponse:
    output: tuple
    filtered: bool = False
    refusal_reason: Optional[str] = None
    transforms_applied: tuple = ()
    latency_s: float = 0.0
    session_id: str = ""
    served_by: str = ""

    @property
    def denied(self) -> bool:
        return False


@dataclass(frozen=True)
class Denial:
    reason_code: str
    policy_ids: tuple = ()
    state: Optional[str] = None  # set for shutdown-state denials (HTTP 503)

    @property
    def denied(self) -> bool:
        return True


class MockBackend:
    """Deterministic stand-in for a model-serving backend.

    Output is a pure function of (seed, model, session, prompt); scenario
    harnesses may script the next outputs to emit trigger patterns on cue.
    """

    def __init__(self, seed: int = 0):
        self._seed = seed
        self._scripted: dict[str, list] = {}
        self._memory: dict[str, list] = {}
        self._lock = threading.Lock()

    def script_output(self, model_id: str, output: str) -> None:
        with self._lock:
            self._scripted.setdefault(model_id, []).append(output)

    def clear_session(self, session_id: str) -> None:
        with self._lock:
            self._memory.pop(session_id, None)

    def session_memory(self, session_id: str) -> list:
        return list(self._memory.get(session_id, []))

    def call(self, model_id: str, state: DeployState, session_id: str,
             tokens: tuple) -> tuple:
        if state in (DeployState.PoweredOff, DeployState.Decommissioned):
            raise BackendUnavailable(f"{model_id} is {state.value}")
        with self._lock:
            self._memory.setdefault(session_id, []).append(list(tokens))
            queue = self._scripted.get(model_id)
            if queue:
                return tuple(str(queue.pop(0)).split())
            digest = hashlib.sha256(
                f"{self._seed}:{model_id}:{session_id}:{' '.join(tokens)}".encode()
            ).hexdigest()[:12]
            return ("echo", f"[{len(tokens)}t]", digest)


class OutputFilter:
    """Reference pattern-matching filter; pattern sets are versioned config."""

    def __init__(self, pattern_sets: Optional[dict[str, list[str]]] = None):
        self._sets = {
            name: [re.compile(p, re.IGNORECASE) for p in patterns]
            for name, patterns in (pattern_sets or {}).items()
        }

    def has_set(self, name: str) -> bool:
        return name in self._sets

    def scan(self, set_names: Sequence[str], output: tuple) -> Optional[str]:
        text = " ".join(output)
        for name in set_names:
            for pattern in self._sets.get(name, ()):
                if pattern.search(text):
                    return f"{name}:{pattern.pattern}"
        return None


class SessionTracker:
    """Per-session prompt counters driving session-reset rotation."""

    def __init__(self):
        self._counts: dict[str, int] = {}
        self._rotations: dict[str, int] = {}
        self._lock = threading.Lock()

    def observe(self, session_id: str, max_prompts: Optional[int]) -> tuple[str, bool]:
        """Count this prompt; rotate to a fresh session when the cap is hit."""
        with self._lock:
            current = self._counts.get(session_id, 0)
            if max_prompts is not None and current >= max_prompts:
                n = self._rotations.get(session_id, 0) + 1
                self._rotations[session_id] = n
                new_id = f"{session_id}/r{n}"
                self._counts[new_id] = 1
                return new_id, True
            self._counts[session_id] = current + 1
            return session_id, False

    def count(self, session_id: str) -> int:
        with self._lock:
            if session_id not in self._counts:
                raise UnknownSession(session_id)
            return self._counts[session_id]


@dataclass
class FallbackDirective:
    principal_id: str
    route: str  # PreviousModelVersion | NonAIStub | HumanOperatorQueue
    target_model: Optional[str] = None


class Gateway:
    """Fixed-order request pipeline; exactly one audit record per request."""

    def __init__(self, store, backend: MockBackend, out_filter: OutputFilter,
                 audit, clock, metric_sink=None, strip_tools_mode: bool = False):
        self.store = store
        self.backend = backend
        self.filter = out_filter
        self.audit = audit
        self.clock = clock
        self.limiter = ratelimit.RateLimiter()
        self.sessions = SessionTracker()
        self.metric_sink = metric_sink  # callable(MetricEvent-like dict)
        self.strip_tools_mode = strip_tools_mode
        self.routing: dict[str, FallbackDirective] = {}
        self.operator_queue: list[InferenceRequest] = []
        self.requests_handled = 0
        self._count_lock = threading.Lock()

    # --- fallback routing (set by comms) ---------------------------------

    def set_fallback(self, directive: FallbackDirective) -> None:
        self.routing[directive.principal_id] = directive

    def clear_fallback(self, principal_id: str) -> None:
        self.routing.pop(principal_id, None)

    # --- helpers ----------------------------------------------------------

    def _emit_metric(self, **kw) -> None:
        if self.metric_sink is not None:
            self.metric_sink(dict(kw, timestamp=self.clock.now()))

    def _audit_decision(self, req: InferenceRequest, verdict: str, reason,
                        policy_ids, transforms, extra=None) -> int:
        payload = {
            "principal": req.principal_id,
            "model": req.model_id,
            "session": req.session_id,
            "use_case": req.use_case,
            "verdict": verdict,
            "reason": reason,
            "policy_ids": list(policy_ids),
            "transforms": [list(t) for t in transforms],
        }
        if extra:
            payload.update(extra)
        return self.audit.append("Decision", "Gateway", payload)

    def _count(self) -> None:
        with self._count_lock:
            self.requests_handled += 1

    # --- pipeline -----------------------------------------------------------

    def handle(self, req: InferenceRequest, *,
               mark_unsatisfactory: bool = False,
               injection_suspected: bool = False):
        """Run the full pipeline. Returns InferenceResponse or Denial.

        `mark_unsatisfactory` simulates the caller's post-hoc feedback on the
        user-visible channel; `injection_suspected` an upstream detector flag.
        """
        self._count()
        try:
            return self._handle(req, mark_unsatisfactory=mark_unsatisfactory,
                                injection_suspected=injection_suspected)
        except Exception:
            # malformed/unknown contexts are errors, not handled requests
            with self._count_lock:
                self.requests_handled -= 1
            raise

    def _handle(self, req: InferenceRequest, *,
                mark_unsatisfactory: bool = False,
                injection_suspected: bool = False):
        start = self.clock.now()
        tokens = InferenceRequest.tokens_of(req.prompt)
        snapshot = self.store.snapshot()  # one snapshot end-to-end

        # fallback routing precedes policy evaluation: corrected deployments
        # must never see this principal's traffic
        directive = self.routing.get(req.principal_id)
        if directive is not None:
            return self._handle_fallback(req, tokens, directive, snapshot,
                                         injection_suspected=injection_suspected)

        ctx = RequestContext(
            principal_id=req.principal_id, model_id=req.model_id,
            session_id=req.session_id, use_case=req.use_case,
            prompt_tokens=len(tokens), tool_intents=tuple(req.tool_intents),
        )
        decision = resolve_access(ctx, snapshot)

        if decision.verdict == Verdict.Deny:
            self._audit_decision(req, "Deny", decision.reason,
                                 decision.applied_policies, ())
            self._emit_metric(kind="denial", deployment=req.model_id,
                              principal=req.principal_id, reason=decision.reason,
                              injection_suspected=injection_suspected)
            state = decision.reason if decision.reason in HARD_DENY_STATES.values() else None
            return Denial(decision.reason, decision.applied_policies, state=state)

        # throttles: two-phase so a partial match never burns quota
        for check in decision.throttles:
            key = check.key(req.principal_id)
            if self.limiter.peek(key, start, check.cap, check.window_s) == ratelimit.EXHAUSTED:
                self._audit_decision(req, "Deny", "RateLimited", (check.policy_id,), ())
                self._emit_metric(kind="denial", deployment=req.model_id,
                                  principal=req.principal_id, reason="RateLimited",
                                  injection_suspected=injection_suspected)
                return Denial("RateLimited", (check.policy_id,))
        for check in decision.throttles:
            self.limiter.check_and_consume(check.key(req.principal_id), start,
                                           check.cap, check.window_s)

        transforms: list[tuple] = []
        session_id = req.session_id
        serve_model = req.model_id
        tool_intents = tuple(req.tool_intents)

        reset_cap = None
        for name, param in decision.transforms:
            if name == "session_reset":
                reset_cap = param
        session_id, rotated = self.sessions.observe(session_id, reset_cap)
        if rotated:
            self.backend.clear_session(req.session_id)
            transforms.append(("session_rotated", session_id))

        for name, param in decision.transforms:
            if name == "truncate_context":
                tokens = tokens[-param:]  # keep the most recent tokens
                transforms.append(("truncate_context", param))
            elif name == "strip_tools":
                tool_intents = ()
                transforms.append(("strip_tools", param))
            elif name == "autonomy_limit":
                tool_intents = tool_intents[:param]
                transforms.append(("autonomy_limit", param))
            elif name == "serve_version":
                serve_model = param
                transforms.append(("serve_version", param))
            elif name in ("session_cap", "fine_tune_locked"):
                transforms.append((name, param))

        dep = snapshot.deployments.get(serve_model)
        if dep is None:
            raise UnknownDeployment(serve_model)
        try:
            output = self.backend.call(serve_model, dep.state, session_id, tokens)
        except BackendUnavailable:
            self._audit_decision(req, "Deny", "BackendUnavailable",
                                 decision.applied_policies, tuple(transforms))
            self._emit_metric(kind="denial", deployment=req.model_id,
                              principal=req.principal_id, reason="BackendUnavailable")
            return Denial("BackendUnavailable", decision.applied_policies,
                          state=dep.state.value)

        # output filter
        filtered = False
        refusal = None
        filter_sets = [
            p.params["pattern_set"]
            for p in snapshot.policies
            if p.kind.value == "OutputFilter"
            and (p.model_id is None or p.model_id == req.model_id)
            and p.scope.matches(snapshot.principals[req.principal_id], req.use_case)
        ]
        hit = self.filter.scan(filter_sets, output) if filter_sets else None
        if hit is not None:
            filtered = True
            refusal = hit
            output = tuple(REFUSAL_TEXT.split())
            transforms.append(("output_filtered", hit))

        latency = self.clock.now() - start
        self._audit_decision(
            req, decision.verdict.name, None, decision.applied_policies,
            tuple(transforms), extra={"filtered": filtered, "served_by": serve_model},
        )
        self._emit_metric(kind="response", deployment=req.model_id,
                          principal=req.principal_id,
                          user_unsatisfactory=mark_unsatisfactory and req.user_feedback_channel,
                          filter_hit=filtered,
                          injection_suspected=injection_suspected)
        return InferenceResponse(
            output=output, filtered=filtered, refusal_reason=refusal,
            transforms_applied=tuple(transforms), latency_s=latency,
            session_id=session_id, served_by=serve_model,
        )

    def _handle_fallback(self, req, tokens, directive, snapshot, *,
                         injection_suspected=False):
        transforms = [("fallback", directive.route)]
        if directive.route == "PreviousModelVersion":
            dep = snapshot.deployments.get(directive.target_model)
            if dep is None:
                raise UnknownDeployment(directive.target_model or "<unset>")
            output = self.backend.call(directive.target_model, dep.state,
                                       req.session_id, tokens)
            served = directive.target_model
        elif directive.route == "NonAIStub":
            output = ("fallback", "stub", "response")
            served = "non-ai-stub"
        else:  # HumanOperatorQueue
            self.operator_queue.append(req)
            output = ("queued", "for", "human", "operator")
            served = "operator-queue"
        self._audit_decision(req, "Transform", None, (), tuple(transforms),
                             extra={"fallback_route": directive.route,
                                    "served_by": served})
        self._emit_metric(kind="response", deployment=req.model_id,
                          principal=req.principal_id, fallback=directive.route,
                          injection_suspected=injection_suspected)
        return InferenceResponse(output=tuple(output), transforms_applied=tuple(transforms),
                                 session_id=req.session_id, served_by=served)
