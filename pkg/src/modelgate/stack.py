"""Full-system wiring: one Stack = one isolated, deterministic instance."""

from __future__ import annotations

import threading
from typing import Optional

from .audit import AuditLog, replay
from .authority import Role
from .clock import IdGenerator, VirtualClock
from .comms import CommsCenter, InMemoryWebhook
from .gateway import Gateway, MockBackend, OutputFilter
from .incidents import IncidentEngine, Playbook, load_playbook
from .monitor import MetricEvent, Monitor
from .policy import (
    AuthorityMatrix,
    DeploymentState,
    PolicyStore,
    Principal,
)

DEFAULT_PATTERN_SETS = {
    "malware-like": [r"malware", r"exploit payload", r"reverse shell"],
    "bio-hazard": [r"pathogen synthesis", r"viral genome"],
}


class EventFeed:
    """At-least-once event stream for the control plane (cursor-resumable)."""

    def __init__(self):
        self._events: list[dict] = []
        self._lock = threading.Lock()

    def publish(self, event_type: str, data: dict) -> None:
        with self._lock:
            self._events.append({
                "id": len(self._events) + 1,
                "type": event_type,
                "data": data,
            })

    def since(self, cursor: int = 0) -> tuple[list[dict], int]:
        with self._lock:
            events = [e for e in self._events if e["id"] > cursor]
            return events, len(self._events)


class Stack:
    """A fully wired system instance. Consecutive instances share no state."""

    def __init__(self, playbook_doc: dict,
                 principals: list[Principal],
                 deployments: list[DeploymentState],
                 seed: int = 0,
                 clock=None,
                 audit_path: Optional[str] = None,
                 pattern_sets: Optional[dict] = None):
        self.clock = clock or VirtualClock()
        self.ids = IdGenerator()
        self.seed = seed
        self.audit = AuditLog(self.clock, path=audit_path)
        self.feed = EventFeed()

        principal_map = {p.id: p for p in principals}
        deployment_map = {d.model_id: d for d in deployments}
        self._initial_state = {
            "policies": {},
            "deployments": {m: d.to_dict() for m, d in deployment_map.items()},
            "incidents": {},
        }
        self.playbook: Playbook = load_playbook(playbook_doc, principals=principal_map)

        self.store = PolicyStore(
            deployments=deployment_map, principals=principal_map,
            authority=self.playbook.authority,
            audit=self.audit, clock=self.clock, ids=self.ids,
        )
        self.backend = MockBackend(seed=seed)
        self.filter = OutputFilter(pattern_sets or DEFAULT_PATTERN_SETS)
        self.monitor = Monitor(
            triggers=self.playbook.triggers, audit=self.audit,
            clock=self.clock, ids=self.ids, observer=self.feed.publish,
        )
        self.gateway = Gateway(
            store=self.store, backend=self.backend, out_filter=self.filter,
            audit=self.audit, clock=self.clock,
            metric_sink=self._gateway_metric,
        )
        self.engine = IncidentEngine(
            store=self.store, playbook=self.playbook, monitor=self.monitor,
            audit=self.audit, clock=self.clock, ids=self.ids,
            observer=self.feed.publish,
        )
        self.monitor.engine = self.engine
        self.webhooks = InMemoryWebhook()
        self.comms = CommsCenter(
            engine=self.engine, gateway=self.gateway, audit=self.audit,
            clock=self.clock,
            notification_config=self.playbook.notification,
            stakeholder_config=self.playbook.stakeholders,
            sla_terms=self.playbook.sla,
            fallback_plans=self.playbook.fallbacks,
            webhook_sink=self.webhooks,
        )

    # --- glue ------------------------------------------------------------

    def _gateway_metric(self, data: dict) -> None:
        self.monitor.ingest(MetricEvent(
            timestamp=data["timestamp"],
            kind=data["kind"],
            deployment=data["deployment"],
            principal=data.get("principal"),
            user_unsatisfactory=bool(data.get("user_unsatisfactory", False)),
            filter_hit=bool(data.get("filter_hit", False)),
            injection_suspected=bool(data.get("injection_suspected", False)),
        ))

    def report_external(self, deployment: str, note: str = "") -> None:
        """Analyst-logged external report (journalism, user reports, ...)."""
        self.monitor.ingest(MetricEvent(
            timestamp=self.clock.now(), kind="report",
            deployment=deployment, external_report=True,
        ))

    def advance(self, seconds: float) -> list:
        """Advance the virtual clock one tick and run trigger evaluation."""
        self.clock.advance(seconds)
        fired = self.monitor.evaluate()
        for alert in fired:
            self._publish_state()
        return fired

    def _publish_state(self) -> None:
        self.feed.publish("status", self.status())

    def status(self) -> dict:
        snap = self.store.snapshot()
        return {
            "deployments": [
                {
                    "model_id": d.model_id,
                    "state": d.state.value,
                    "moratorium": d.moratorium,
                    "active_corrections": sorted(
                        p.id for p in snap.policies
                        if p.model_id in (None, d.model_id)),
                }
                for d in sorted(snap.deployments.values(), key=lambda d: d.model_id)
            ],
            "policy_version": snap.version,
        }

    # --- replay support -----------------------------------------------------

    def live_state(self) -> dict:
        """Live counterpart of audit.replay() for equivalence checks."""
        snap = self.store.snapshot()
        return {
            "policies": {p.id: p.to_dict() for p in snap.policies},
            "deployments": {m: d.to_dict() for m, d in snap.deployments.items()},
            "incidents": {i.id: i.state.value for i in self.engine.incidents.values()},
        }

    def replayed_state(self) -> dict:
        return replay(self.audit.records(), initial=self._initial_state)
