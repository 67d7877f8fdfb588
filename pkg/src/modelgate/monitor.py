"""Trigger evaluation over the metric stream, graded alerts, and triage."""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Callable, Optional

from .authority import Role
from .errors import (
    AlreadyTriaged,
    MalformedEvent,
    ParseError,
    UnauthorizedActor,
    UnknownAlert,
)


class Severity(IntEnum):
    Low = 0
    Medium = 1
    High = 2
    Critical = 3

    @classmethod
    def parse(cls, name: str) -> "Severity":
        try:
            return cls[name]
        except KeyError:
            raise ParseError(f"unknown severity: {name!r}")


class Grade(IntEnum):
    """Alert gradient: gentle alerts are easily dismissed, code red is not."""

    Gentle = 0
    Elevated = 1
    CodeRed = 2

    @classmethod
    def parse(cls, name: str) -> "Grade":
        try:
            return cls[name]
        except KeyError:
            raise ParseError(f"unknown grade: {name!r}")


TRIAGE_STATES = ("Untriaged", "TruePositive", "BenignPositive", "FalsePositive")

METRICS = ("unsatisfactory_rate", "filter_hit_rate", "prompt_injection_flags",
           "external_report_count", "denial_rate")

_OPS: dict[str, Callable[[float, float], bool]] = {
    ">": lambda v, t: v > t,
    ">=": lambda v, t: v >= t,
    "<": lambda v, t: v < t,
    "<=": lambda v, t: v <= t,
    "==": lambda v, t: v == t,
}


@dataclass(frozen=True)
class MetricEvent:
    timestamp: float
    kind: str  # response | denial | report
    deployment: str
    principal: Optional[str] = None
    value: float = 1.0
    user_unsatisfactory: bool = False
    filter_hit: bool = False
    injection_suspected: bool = False
    external_report: bool = False


@dataclass(frozen=True)
class Threshold:
    op: str
    value: float

    def satisfied(self, observed: float) -> bool:
        return _OPS[self.op](observed, self.value)

    @classmethod
    def from_dict(cls, d) -> "Threshold":
        op = d.get("op")
        if op not in _OPS:
            raise ParseError(f"unknown threshold op: {op!r}")
        return cls(op, float(d["value"]))


@dataclass(frozen=True)
class Binding:
    type: str  # AlertOnly | AutoCorrection | AutoIncident
    template: Optional[str] = None  # correction template id
    playbook: Optional[str] = None  # playbook id for AutoIncident


@dataclass(frozen=True)
class Trigger:
    id: str
    metric: str
    window_s: float
    threshold: Threshold
    min_samples: int = 1
    severity: Severity = Severity.Medium
    grade: Grade = Grade.Gentle
    binding: Binding = field(default_factory=lambda: Binding("AlertOnly"))
    deployment: Optional[str] = None  # None = every deployment

    def __post_init__(self):
        if self.min_samples < 1:
            raise ParseError(f"trigger {self.id}: min_samples must be >= 1")
        if self.window_s <= 0:
            raise ParseError(f"trigger {self.id}: window must be > 0")
        if self.metric not in METRICS:
            raise ParseError(f"trigger {self.id}: unknown metric {self.metric!r}")


@dataclass
class Alert:
    id: str
    trigger_id: str
    observed_value: float
    window: tuple
    fired_at: float
    severity: Severity
    grade: Grade
    triage: str = "Untriaged"
    incident_id: Optional[str] = None
    binding_error: Optional[str] = None
    flagged_principals: tuple = ()

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "trigger_id": self.trigger_id,
            "observed_value": self.observed_value,
            "window": list(self.window),
            "fired_at": self.fired_at,
            "severity": self.severity.name,
            "grade": self.grade.name,
            "triage": self.triage,
            "incident_id": self.incident_id,
            "binding_error": self.binding_error,
            "flagged_principals": list(self.flagged_principals),
        }


def compute_metric(metric: str, events: list[MetricEvent]) -> tuple[int, float]:
    """Return (samples, observed value) for one metric over a window slice."""
    if metric == "unsatisfactory_rate":
        responses = [e for e in events if e.kind == "response"]
        if not responses:
            return 0, 0.0
        return len(responses), sum(e.user_unsatisfactory for e in responses) / len(responses)
    if metric == "filter_hit_rate":
        responses = [e for e in events if e.kind == "response"]
        if not responses:
            return 0, 0.0
        return len(responses), sum(e.filter_hit for e in responses) / len(responses)
    if metric == "denial_rate":
        considered = [e for e in events if e.kind in ("response", "denial")]
        if not considered:
            return 0, 0.0
        denials = sum(1 for e in considered if e.kind == "denial")
        return len(considered), denials / len(considered)
    if metric == "prompt_injection_flags":
        count = sum(1 for e in events if e.injection_suspected)
        return count, float(count)
    if metric == "external_report_count":
        count = sum(1 for e in events if e.external_report)
        return count, float(count)
    raise ParseError(f"unknown metric: {metric!r}")


class Monitor:
    """Append-only event stream plus edge-triggered threshold evaluation."""

    def __init__(self, triggers: list[Trigger], audit, clock, ids,
                 engine=None, observer=None):
        self.triggers = list(triggers)
        self.audit = audit
        self.clock = clock
        self.ids = ids
        self.engine = engine  # incident engine; executes bindings
        self.observer = observer  # callable(event_type, data) for the feed
        self.events: list[MetricEvent] = []
        self.alerts: dict[str, Alert] = {}
        self.tuning_counters: dict[str, dict[str, int]] = {}
        self._breaching: set[str] = set()
        self._last_ts: dict[str, float] = {}
        self._lock = threading.Lock()

    # --- ingestion -------------------------------------------------------

    def ingest(self, event: MetricEvent) -> None:
        if not isinstance(event, MetricEvent):
            raise MalformedEvent("not a MetricEvent")
        if not event.deployment or event.timestamp is None:
            raise MalformedEvent("deployment and timestamp are required")
        source = f"{event.kind}:{event.deployment}"
        with self._lock:
            last = self._last_ts.get(source)
            if last is not None and event.timestamp < last:
                raise MalformedEvent(
                    f"timestamps must be monotone per source ({source})")
            self._last_ts[source] = event.timestamp
            self.events.append(event)

    def ingest_raw(self, data: dict) -> None:
        try:
            self.ingest(MetricEvent(
                timestamp=float(data["timestamp"]),
                kind=str(data["kind"]),
                deployment=str(data["deployment"]),
                principal=data.get("principal"),
                value=float(data.get("value", 1.0)),
                user_unsatisfactory=bool(data.get("user_unsatisfactory", False)),
                filter_hit=bool(data.get("filter_hit", False)),
                injection_suspected=bool(data.get("injection_suspected", False)),
                external_report=bool(data.get("external_report", False)),
            ))
        except (KeyError, TypeError, ValueError) as e:
            raise MalformedEvent(str(e))

    # --- evaluation --------------------------------------------------------

    def evaluate(self, t: Optional[float] = None) -> list[Alert]:
        """Edge-triggered pass over every trigger at time t."""
        t = self.clock.now() if t is None else t
        fired: list[Alert] = []
        with self._lock:
            stream = list(self.events)
        for trig in self.triggers:
            window_events = [
                e for e in stream
                if t - trig.window_s < e.timestamp <= t
                and (trig.deployment is None or e.deployment == trig.deployment)
            ]
            samples, value = compute_metric(trig.metric, window_events)
            breach = samples >= trig.min_samples and trig.threshold.satisfied(value)
            if not breach:
                self._breaching.discard(trig.id)
                continue
            if trig.id in self._breaching:
                continue  # one alert per breach episode
            self._breaching.add(trig.id)
            flagged = tuple(sorted({
                e.principal for e in window_events
                if e.injection_suspected and e.principal
            }))
            alert = Alert(
                id=self.ids.next("alr"),
                trigger_id=trig.id,
                observed_value=value,
                window=(t - trig.window_s, t),
                fired_at=t,
                severity=trig.severity,
                grade=trig.grade,
                flagged_principals=flagged,
            )
            self.alerts[alert.id] = alert
            self.audit.append("Alert", "Monitor", {
                "alert_id": alert.id, "trigger_id": trig.id,
                "observed_value": value, "samples": samples,
                "severity": trig.severity.name, "grade": trig.grade.name,
            })
            self._notify("alert_fired", alert.to_dict())
            self._execute_binding(trig, alert)
            fired.append(alert)
        return fired

    def _notify(self, event_type: str, data: dict) -> None:
        if self.observer is not None:
            self.observer(event_type, data)

    def _execute_binding(self, trig: Trigger, alert: Alert) -> None:
        if trig.binding.type == "AlertOnly" or self.engine is None:
            return
        try:
            if trig.binding.type == "AutoCorrection":
                self.engine.execute_auto_correction(alert, trig.binding.template)
            elif trig.binding.type == "AutoIncident":
                incident = self.engine.open_incident(
                    source=alert.id, severity=alert.severity,
                    opened_by=Role.System)
                alert.incident_id = incident.id
        except Exception as e:  # recorded on the alert, never swallowed
            alert.binding_error = f"{type(e).__name__}: {e}"
            self.audit.append("Alert", "Monitor", {
                "alert_id": alert.id, "binding_error": alert.binding_error,
            })

    # --- triage ------------------------------------------------------------

    def triage(self, alert_id: str, outcome: str, actor: Role) -> Alert:
        alert = self.alerts.get(alert_id)
        if alert is None:
            raise UnknownAlert(alert_id)
        if actor not in (Role.Analyst, Role.SOCLead, Role.CISO, Role.CEO):
            raise UnauthorizedActor(f"{getattr(actor, 'name', actor)} may not triage")
        if alert.triage != "Untriaged":
            raise AlreadyTriaged(f"{alert_id} already {alert.triage}")
        if outcome not in TRIAGE_STATES or outcome == "Untriaged":
            raise MalformedEvent(f"invalid triage outcome: {outcome!r}")
        alert.triage = outcome
        if outcome in ("BenignPositive", "FalsePositive"):
            counters = self.tuning_counters.setdefault(
                alert.trigger_id, {"BenignPositive": 0, "FalsePositive": 0})
            counters[outcome] += 1
        elif outcome == "TruePositive" and alert.incident_id is None and self.engine is not None:
            incident = self.engine.open_incident(
                source=alert.id, severity=alert.severity, opened_by=actor)
            alert.incident_id = incident.id
        self.audit.append("Alert", actor, {
            "alert_id": alert_id, "triage": outcome,
            "incident_id": alert.incident_id,
        })
        self._notify("alert_triaged", alert.to_dict())
        return alert

    def prioritize(self, alerts: Optional[list[Alert]] = None) -> list[Alert]:
        """Pending queue ordered by (severity desc, grade desc, fired_at asc)."""
        pending = alerts if alerts is not None else [
            a for a in self.alerts.values() if a.triage == "Untriaged"]
        return sorted(pending, key=lambda a: (-int(a.severity), -int(a.grade), a.fired_at))

    def retuning_report(self) -> dict:
        return {tid: dict(c) for tid, c in self.tuning_counters.items()}
