"""Shared fixtures: a small default playbook and stack factory."""

import copy
import os

import pytest

from modelgate.policy import DeploymentState, Principal, Tier
from modelgate.stack import Stack

FIXTURES = os.path.join(os.path.dirname(__file__), "..", "fixtures")

FULL_GRANTS = {
    "System": ["BlocklistPrincipal", "ThrottleCalls", "ThrottlePrompts",
               "ThrottleEndUsers", "ThrottleApplications", "OutputFilter",
               "SessionReset", "AllowlistMode"],
    "Analyst": ["BlocklistPrincipal", "ThrottleCalls", "ThrottlePrompts",
                "ThrottleEndUsers", "ThrottleApplications"],
    "SOCLead": ["BlocklistPrincipal", "ThrottleCalls", "ThrottlePrompts",
                "ThrottleEndUsers", "ThrottleApplications", "SessionReset",
                "ReduceContextWindow", "FineTuneLockout", "OutputFilter",
                "CapabilityRemoval", "GlobalPlanningLimit", "AutonomyLimit",
                "ProhibitUseCase", "NarrowModel", "ToolUseLimit", "AllowlistMode"],
    "CISO": ["BlocklistPrincipal", "ThrottleCalls", "ThrottlePrompts",
             "ThrottleEndUsers", "ThrottleApplications", "SessionReset",
             "ReduceContextWindow", "FineTuneLockout", "OutputFilter",
             "CapabilityRemoval", "GlobalPlanningLimit", "AutonomyLimit",
             "ProhibitUseCase", "NarrowModel", "ToolUseLimit", "AllowlistMode",
             "MarketRemoval", "PowerOff", "Moratorium"],
    "CEO": ["BlocklistPrincipal", "ThrottleCalls", "ThrottlePrompts",
            "ThrottleEndUsers", "ThrottleApplications", "SessionReset",
            "ReduceContextWindow", "FineTuneLockout", "OutputFilter",
            "CapabilityRemoval", "GlobalPlanningLimit", "AutonomyLimit",
            "ProhibitUseCase", "NarrowModel", "ToolUseLimit", "AllowlistMode",
            "MarketRemoval", "PowerOff", "Moratorium", "Decommission"],
}

BASE_PLAYBOOK = {
    "id": "pb-test",
    "templates": {},
    "triggers": [],
    "authority": {
        "grants": FULL_GRANTS,
        "emergency": {
            "enabled": True,
            "unavailable_timeout_s": 1800,
            "fallback_role": "SOCLead",
            "kinds": ["PowerOff", "MarketRemoval", "Moratorium"],
        },
    },
    "escalation": [
        {"role": "Analyst", "contact": "soc@test"},
        {"role": "SOCLead", "contact": "lead@test"},
        {"role": "CISO", "contact": "ciso@test"},
        {"role": "CEO", "contact": "ceo@test"},
    ],
    "fallbacks": {},
    "redeploy": {"min_approvers": 1, "roles": ["CISO", "CEO"]},
    "stakeholders": {
        "Regulator": {"floor": "High", "url": "stub://regulator"},
    },
    "sla": {
        "Individual": {"credits_per_hour": 2},
        "Commercial": {},
        "SafetyCritical": {},
    },
}

DEFAULT_PRINCIPALS = [
    Principal(id="p-safe", tier=Tier.SafetyCritical, allowlisted=True, kyc_verified=True),
    Principal(id="p-biz", tier=Tier.Commercial),
    Principal(id="p-solo", tier=Tier.Individual),
    Principal(id="p-extra", tier=Tier.Individual),
]

DEFAULT_DEPLOYMENTS = [
    DeploymentState(model_id="m1"),
    DeploymentState(model_id="m1-prev", version="v0"),
]


def playbook_doc(**overrides) -> dict:
    doc = copy.deepcopy(BASE_PLAYBOOK)
    doc.update(overrides)
    return doc


def make_stack(playbook=None, principals=None, deployments=None, seed=0,
               audit_path=None) -> Stack:
    return Stack(
        playbook_doc=playbook or playbook_doc(),
        principals=list(principals if principals is not None else DEFAULT_PRINCIPALS),
        deployments=list(deployments if deployments is not None else DEFAULT_DEPLOYMENTS),
        seed=seed,
        audit_path=audit_path,
    )


@pytest.fixture
def stack():
    return make_stack()
