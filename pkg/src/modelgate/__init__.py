"""Enforcement gateway and incident-response engine for model-serving deployments."""

from .audit import AuditLog, AuditRecord, load_log, replay, verify_chain
from .authority import AuthorityMatrix, EmergencyClause, Role
from .clock import IdGenerator, SystemClock, VirtualClock
from .errors import ModelGateError
from .gateway import Gateway, InferenceRequest, InferenceResponse, MockBackend
from .incidents import (
    AfterActionReview,
    Incident,
    IncidentEngine,
    IncidentState,
    Playbook,
    load_playbook,
)
from .monitor import Alert, Grade, MetricEvent, Monitor, Severity, Trigger
from .policy import (
    CorrectionKind,
    CorrectionPolicy,
    Decision,
    DeploymentState,
    DeployState,
    PolicyStore,
    Principal,
    RequestContext,
    Scope,
    ScopeType,
    Snapshot,
    Tier,
    Verdict,
    resolve_access,
)
from .scenario import ScenarioReport, ScenarioRunner, run_scenario
from .stack import Stack

__version__ = "0.1.0"
