"""Append-only, hash-chained audit log with replay.

Storage format (documented bit-exact in docs/audit_log_format.md): one record
per line, UTF-8, length-prefixed canonical JSON. The digest chain is
SHA-256 over (prev_digest_hex || canonical core bytes); the genesis record
chains from 64 zero hex digits.
"""

from __future__ import annotations

import hashlib
import json
import threading
from dataclasses import dataclass
from typing import Iterable, Optional

from .errors import ChainBroken, StorageFailure
from .policy import canonical_json

GENESIS = "0" * 64

CATEGORIES = frozenset({
    "Decision", "PolicyChange", "Alert", "IncidentEvent",
    "Notification", "FallbackRouting",
})


@dataclass(frozen=True)
class AuditRecord:
    seq: int
    timestamp: float
    category: str
    actor: str
    payload: dict
    hash_prev: str
    hash: str

    def core(self) -> dict:
        return {
            "seq": self.seq,
            "timestamp": self.timestamp,
            "category": self.category,
            "actor": self.actor,
            "payload": self.payload,
        }

    def to_dict(self) -> dict:
        d = self.core()
        d["hash_prev"] = self.hash_prev
        d["hash"] = self.hash
        return d


def _digest(prev_hash: str, core: dict) -> str:
    body = canonical_json(core).encode("utf-8")
    return hashlib.sha256(prev_hash.encode("ascii") + body).hexdigest()


def _encode_line(record: AuditRecord) -> str:
    body = canonical_json(record.to_dict())
    return f"{len(body.encode('utf-8'))} {body}\n"


def _decode_line(line: str, lineno: int) -> AuditRecord:
    try:
        prefix, body = line.rstrip("\n").split(" ", 1)
        if int(prefix) != len(body.encode("utf-8")):
            raise ValueError("length prefix mismatch")
        d = json.loads(body)
        return AuditRecord(
            seq=int(d["seq"]), timestamp=float(d["timestamp"]),
            category=d["category"], actor=d["actor"], payload=d["payload"],
            hash_prev=d["hash_prev"], hash=d["hash"],
        )
    except ChainBroken:
        raise
    except Exception as e:
        raise ChainBroken(lineno, f"unreadable record at line {lineno}: {e}")


class AuditLog:
    """Single logical appender; unlimited concurrent readers via list snapshots."""

    def __init__(self, clock, path: Optional[str] = None):
        self._clock = clock
        self._lock = threading.Lock()
        self._records: list[AuditRecord] = []
        self._last_hash = GENESIS
        self._path = path
        self._fh = open(path, "a", encoding="utf-8") if path else None

    def append(self, category: str, actor, payload: dict) -> int:
        if category not in CATEGORIES:
            raise StorageFailure(f"unknown audit category: {category}")
        if not isinstance(payload, dict):
            raise StorageFailure("payload must be a mapping")
        try:
            canonical_json(payload)
        except (TypeError, ValueError) as e:
            raise StorageFailure(f"payload not serializable: {e}")
        actor_name = getattr(actor, "name", None) or str(actor)
        with self._lock:
            core = {
                "seq": len(self._records) + 1,
                "timestamp": self._clock.now(),
                "category": category,
                "actor": actor_name,
                "payload": payload,
            }
            record = AuditRecord(
                **core, hash_prev=self._last_hash,
                hash=_digest(self._last_hash, core),
            )
            if self._fh is not None:
                self._fh.write(_encode_line(record))
                self._fh.flush()
            self._records.append(record)
            self._last_hash = record.hash
            return record.seq

    def __len__(self) -> int:
        return len(self._records)

    def records(self) -> list[AuditRecord]:
        with self._lock:
            return list(self._records)

    def query(self, category: Optional[str] = None,
              since: Optional[float] = None, until: Optional[float] = None,
              incident_id: Optional[str] = None) -> list[AuditRecord]:
        out = []
        for r in self.records():
            if category is not None and r.category != category:
                continue
            if since is not None and r.timestamp < since:
                continue
            if until is not None and r.timestamp > until:
                continue
            if incident_id is not None and r.payload.get("incident_id") != incident_id:
                continue
            out.append(r)
        return out

    def dump(self, path: str) -> None:
        with self._lock, open(path, "w", encoding="utf-8") as fh:
            for r in self._records:
                fh.write(_encode_line(r))

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None


def verify_chain(records: Iterable[AuditRecord]) -> None:
    """Raise ChainBroken at the first record whose digest or link fails."""
    prev = GENESIS
    expected_seq = 1
    for r in records:
        if r.seq != expected_seq:
            raise ChainBroken(r.seq, f"seq gap: expected {expected_seq}, got {r.seq}")
        if r.hash_prev != prev:
            raise ChainBroken(r.seq, f"hash_prev mismatch at seq={r.seq}")
        if _digest(prev, r.core()) != r.hash:
            raise ChainBroken(r.seq, f"digest mismatch at seq={r.seq}")
        prev = r.hash
        expected_seq += 1


def load_log(path: str) -> list[AuditRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            records.append(_decode_line(line, lineno))
    return records


def replay(records: Iterable[AuditRecord], initial: Optional[dict] = None) -> dict:
    """Reconstruct final state from the log; verifies the chain first.

    `initial` optionally seeds the pre-log state (deployment roster at boot).
    Returns {"policies": {id: dict (active only)}, "deployments": {model: dict},
    "incidents": {id: state}}.
    """
    records = list(records)
    verify_chain(records)
    initial = initial or {}
    policies: dict[str, dict] = dict(initial.get("policies", {}))
    deployments: dict[str, dict] = dict(initial.get("deployments", {}))
    incidents: dict[str, str] = dict(initial.get("incidents", {}))
    for r in records:
        if r.category == "PolicyChange":
            p = r.payload.get("policy")
            action = r.payload.get("action")
            if action == "apply" and p is not None:
                policies[p["id"]] = p
            elif action == "revoke" and p is not None:
                policies.pop(p["id"], None)
            for model, dep in (r.payload.get("deployments") or {}).items():
                deployments[model] = dep
        elif r.category == "IncidentEvent":
            iid = r.payload.get("incident_id")
            state = r.payload.get("state")
            if iid and state:
                incidents[iid] = state
    return {"policies": policies, "deployments": deployments, "incidents": incidents}
