"""Customer notification, fallback activation, remedies, stakeholder webhooks."""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Optional

from .authority import Role
from .errors import NoPlan, NoSLAConfigured, UnknownIncident, WebhookUnreachable
from .gateway import FallbackDirective
from .incidents import FallbackPlanDef
from .monitor import Severity
from .policy import Tier

DEFAULT_TIER_ORDER = ["SafetyCritical", "Commercial", "Individual"]
DEFAULT_CHANNELS = {
    "SafetyCritical": "DirectContact",
    "Commercial": "Email",
    "Individual": "PortalBanner",
}


@dataclass
class NotificationBatch:
    incident_id: str
    tier_order: list
    sends: list = field(default_factory=list)  # {principal, tier, channel, sent_at}

    def sent_at_by_tier(self, tier: str) -> list:
        return [s["sent_at"] for s in self.sends if s["tier"] == tier]

    def to_dict(self) -> dict:
        return {
            "incident_id": self.incident_id,
            "tier_order": list(self.tier_order),
            "sends": list(self.sends),
        }


@dataclass(frozen=True)
class Remedy:
    principal_id: str
    kind: str  # ServiceCredit | MonetaryNote | None
    credit: float = 0.0
    note: Optional[str] = None

    def to_dict(self) -> dict:
        return {"principal_id": self.principal_id, "kind": self.kind,
                "credit": self.credit, "note": self.note}


class InMemoryWebhook:
    """Pluggable delivery sink; can be told to fail N times per audience."""

    def __init__(self):
        self.deliveries: list = []
        self.fail_counts: dict[str, int] = {}
        self._lock = threading.Lock()

    def post(self, audience: str, url: str, body: dict) -> dict:
        with self._lock:
            remaining = self.fail_counts.get(audience, 0)
            if remaining > 0:
                self.fail_counts[audience] = remaining - 1
                raise WebhookUnreachable(f"{audience} at {url} unreachable")
            receipt = {"audience": audience, "url": url, "body": body,
                       "receipt_id": f"rcpt-{len(self.deliveries) + 1:04d}"}
            self.deliveries.append(receipt)
            return receipt

    def count(self, audience: str) -> int:
        return sum(1 for d in self.deliveries if d["audience"] == audience)


class CommsCenter:
    """Human-facing aftermath: notices, fallbacks, remedies, stakeholder posts."""

    def __init__(self, engine, gateway, audit, clock,
                 notification_config: Optional[dict] = None,
                 stakeholder_config: Optional[dict] = None,
                 sla_terms: Optional[dict] = None,
                 fallback_plans: Optional[dict[str, FallbackPlanDef]] = None,
                 webhook_sink: Optional[InMemoryWebhook] = None,
                 status_page=None):
        self.engine = engine
        self.gateway = gateway
        self.audit = audit
        self.clock = clock
        self.config = dict(notification_config or {})
        self.stakeholders = dict(stakeholder_config or {})
        self.sla = dict(sla_terms or {})
        self.plans = dict(fallback_plans or {})
        self.sink = webhook_sink or InMemoryWebhook()
        self.status_flag: Optional[str] = None
        self.batches: list[NotificationBatch] = []
        self.parked: list = []
        self._send_seq = 0
        self._lock = threading.Lock()

    def _next_send_time(self) -> float:
        # strict ordering under a virtual clock: a sub-second offset per send
        with self._lock:
            self._send_seq += 1
            return self.clock.now() + self._send_seq * 1e-3

    # --- notification ------------------------------------------------------

    def notify(self, incident_id: str, principals: list) -> NotificationBatch:
        """Queue per-tier messages; safety-critical recipients always go first."""
        if self.engine is not None and incident_id not in self.engine.incidents:
            raise UnknownIncident(incident_id)
        tier_order = list(self.config.get("tier_order", DEFAULT_TIER_ORDER))
        channels = dict(DEFAULT_CHANNELS, **self.config.get("channels", {}))
        batch = NotificationBatch(incident_id=incident_id, tier_order=tier_order)
        by_tier: dict[str, list] = {t: [] for t in tier_order}
        for p in principals:
            by_tier.setdefault(p.tier.value, []).append(p)
        for tier in tier_order:
            for p in sorted(by_tier.get(tier, []), key=lambda p: p.id):
                send = {
                    "principal": p.id,
                    "tier": tier,
                    "channel": channels.get(tier, "Email"),
                    "sent_at": self._next_send_time(),
                }
                batch.sends.append(send)
                self.audit.append("Notification", "Comms", {
                    "incident_id": incident_id, **send,
                })
        self.status_flag = f"incident:{incident_id}"
        if not principals:
            self.audit.append("Notification", "Comms", {
                "incident_id": incident_id, "status_page_only": True,
            })
        self.batches.append(batch)
        return batch

    # --- fallback ------------------------------------------------------------

    def activate_fallback(self, principal_id: str) -> FallbackDirective:
        plan = self.plans.get(principal_id)
        if plan is None:
            raise NoPlan(f"no fallback plan agreed for {principal_id}")
        directive = FallbackDirective(
            principal_id=principal_id, route=plan.route,
            target_model=plan.target_model,
        )
        self.gateway.set_fallback(directive)
        self.audit.append("FallbackRouting", "Comms", {
            "principal": principal_id, "route": plan.route,
            "target_model": plan.target_model, "action": "activate",
        })
        return directive

    def deactivate_fallback(self, principal_id: str) -> None:
        self.gateway.clear_fallback(principal_id)
        self.audit.append("FallbackRouting", "Comms", {
            "principal": principal_id, "action": "deactivate",
        })

    # --- remedy ------------------------------------------------------------

    def compute_remedy(self, principal, downtime_s: float) -> Remedy:
        terms = self.sla.get(principal.tier.value)
        if terms is None:
            raise NoSLAConfigured(f"no SLA terms for tier {principal.tier.value}")
        if downtime_s <= 0:
            return Remedy(principal.id, "None")
        hours = downtime_s / 3600.0
        if principal.tier == Tier.Individual:
            rate = float(terms.get("credits_per_hour", 0))
            return Remedy(principal.id, "ServiceCredit", credit=hours * rate)
        if principal.tier == Tier.Commercial:
            return Remedy(principal.id, "MonetaryNote",
                          note=f"offline settlement for {hours:.2f}h downtime")
        # safety-critical terms are contract-specific; record a note
        return Remedy(principal.id, "MonetaryNote",
                      note=f"contractual remedy review for {hours:.2f}h downtime")

    # --- stakeholders ----------------------------------------------------------

    def alert_stakeholders(self, incident_id: str, audiences: list,
                           max_attempts: int = 3) -> list:
        incident = self.engine.get(incident_id) if self.engine else None
        receipts = []
        for audience in audiences:
            conf = self.stakeholders.get(audience, {})
            floor = Severity.parse(conf.get("floor", "Low"))
            if incident is not None and incident.severity < floor:
                continue
            body = {
                "incident_id": incident_id,
                "severity": incident.severity.name if incident else "Unknown",
                "corrections": list(incident.corrections_applied) if incident else [],
                "summary": conf.get("summary", f"incident {incident_id}"),
                "timestamp": self.clock.now(),
            }
            url = conf.get("url", f"stub://{audience.lower()}")
            receipt = None
            last_error = None
            for _ in range(max_attempts):
                try:
                    receipt = self.sink.post(audience, url, body)
                    break
                except WebhookUnreachable as e:
                    last_error = e
            if receipt is None:
                self.parked.append({"audience": audience, "body": body,
                                    "error": str(last_error)})
                continue
            if incident is not None:
                incident.stakeholder_notices.append(receipt["receipt_id"])
            self.audit.append("Notification", "Comms", {
                "incident_id": incident_id, "audience": audience,
                "receipt_id": receipt["receipt_id"],
            })
            receipts.append(receipt)
        return receipts
