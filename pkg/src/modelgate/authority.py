"""Roles and the correction authority matrix, including emergency devolution."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum
from typing import Iterable, Optional

from .errors import ParseError


class Role(IntEnum):
    """Ordered roles; higher value = higher in the chain of command."""

    System = 0
    Analyst = 1
    SOCLead = 2
    CISO = 3
    CEO = 4

    @classmethod
    def parse(cls, name: str) -> "Role":
        try:
            return cls[name]
        except KeyError:
            raise ParseError(f"unknown role: {name!r}")


HUMAN_ROLES = (Role.Analyst, Role.SOCLead, Role.CISO, Role.CEO)


@dataclass
class EmergencyClause:
    enabled: bool = False
    unavailable_timeout_s: float = 1800.0
    fallback_role: Role = Role.SOCLead
    kinds: frozenset = frozenset()  # correction kinds the devolution covers


@dataclass
class AuthorityMatrix:
    """Maps each role to the correction kinds it may execute.

    Grants are explicit (not implicitly inherited); playbooks ship cumulative
    sets so a CISO row contains everything an analyst may do.
    """

    grants: dict[Role, frozenset] = field(default_factory=dict)
    emergency: EmergencyClause = field(default_factory=EmergencyClause)

    def allows(self, actor: Role, kind) -> bool:
        return kind in self.grants.get(actor, frozenset())

    def granting_roles(self, kind) -> list[Role]:
        return [r for r in Role if self.allows(r, kind)]

    def devolution_applies(self, actor: Role, kind,
                           pending_escalations: Iterable[tuple[Role, float]],
                           now: float) -> Optional[Role]:
        """Return the unavailable role whose authority devolves to `actor`, if any.

        `pending_escalations` is (target role, escalated-at) pairs that were
        never acknowledged.
        """
        if not self.emergency.enabled or actor != self.emergency.fallback_role:
            return None
        if kind not in self.emergency.kinds:
            return None
        for target, at in pending_escalations:
            if not self.allows(target, kind):
                continue
            if now - at >= self.emergency.unavailable_timeout_s:
                return target
        return None
