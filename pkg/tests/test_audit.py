"""Audit log: chain digests, storage format, tamper detection, replay."""

import hashlib
import json
import random

import pytest

from modelgate.audit import (
    GENESIS,
    AuditLog,
    load_log,
    replay,
    verify_chain,
)
from modelgate.authority import Role
from modelgate.clock import VirtualClock
from modelgate.errors import ChainBroken, StorageFailure
from modelgate.policy import CorrectionKind

from conftest import make_stack


def oracle_digest(prev_hash: str, core: dict) -> str:
    """Independent recomputation: SHA-256 over prev hex digits + canonical JSON."""
    body = json.dumps(core, sort_keys=True, separators=(",", ":"),
                      ensure_ascii=False).encode("utf-8")
    return hashlib.sha256(prev_hash.encode("ascii") + body).hexdigest()


def make_log(n=5):
    clock = VirtualClock()
    log = AuditLog(clock)
    for i in range(n):
        clock.advance(1.0)
        log.append("Decision", "Gateway", {"verdict": "Allow", "n": i})
    return log


class TestChain:
    def test_digests_match_independent_oracle(self):
        log = make_log(10)
        prev = GENESIS
        for r in log.records():
            assert r.hash_prev == prev
            assert r.hash == oracle_digest(prev, r.core())
            prev = r.hash

    def test_verify_accepts_intact_chain(self):
        verify_chain(make_log(20).records())

    def test_single_byte_tamper_detected_at_correct_seq(self, tmp_path):
        path = tmp_path / "audit.log"
        log = make_log(12)
        log.dump(str(path))
        raw = path.read_bytes()
        rng = random.Random(5)
        lines = raw.split(b"\n")
        target_seq = 7
        line = bytearray(lines[target_seq - 1])
        # flip one byte inside the payload section, keeping JSON valid
        idx = line.index(b'"n":') + 4
        line[idx:idx + 1] = str((int(chr(line[idx])) + 1) % 10).encode()
        lines[target_seq - 1] = bytes(line)
        path.write_bytes(b"\n".join(lines))
        records = load_log(str(path))
        with pytest.raises(ChainBroken) as exc:
            verify_chain(records)
        assert exc.value.seq == target_seq

    def test_length_prefix_mismatch_rejected(self, tmp_path):
        path = tmp_path / "audit.log"
        make_log(3).dump(str(path))
        text = path.read_text().splitlines()
        prefix, body = text[1].split(" ", 1)
        text[1] = f"{int(prefix) + 1} {body}"
        path.write_text("\n".join(text) + "\n")
        with pytest.raises(ChainBroken) as exc:
            load_log(str(path))
        assert exc.value.seq == 2

    def test_seq_gap_detected(self):
        records = make_log(5).records()
        with pytest.raises(ChainBroken):
            verify_chain([records[0], records[2], records[3]])

    def test_reordering_detected(self):
        records = make_log(5).records()
        swapped = [records[0], records[2], records[1]] + records[3:]
        with pytest.raises(ChainBroken):
            verify_chain(swapped)


class TestAppend:
    def test_unknown_category_rejected(self):
        log = AuditLog(VirtualClock())
        with pytest.raises(StorageFailure):
            log.append("Gossip", "x", {})

    def test_unserializable_payload_rejected(self):
        log = AuditLog(VirtualClock())
        with pytest.raises(StorageFailure):
            log.append("Decision", "x", {"bad": object()})
        assert len(log) == 0  # nothing partially appended

    def test_file_tee_round_trips(self, tmp_path):
        path = tmp_path / "audit.log"
        clock = VirtualClock()
        log = AuditLog(clock, path=str(path))
        for i in range(4):
            clock.advance(1)
            log.append("Alert", "Monitor", {"i": i})
        log.close()
        loaded = load_log(str(path))
        assert [r.to_dict() for r in loaded] == [r.to_dict() for r in log.records()]
        verify_chain(loaded)

    def test_query_filters(self):
        clock = VirtualClock()
        log = AuditLog(clock)
        log.append("Decision", "Gateway", {"verdict": "Allow"})
        clock.advance(10)
        log.append("IncidentEvent", "Engine", {"incident_id": "inc-0001",
                                               "event": "opened", "state": "Open"})
        clock.advance(10)
        log.append("IncidentEvent", "Engine", {"incident_id": "inc-0002",
                                               "event": "opened", "state": "Open"})
        assert len(log.query(category="Decision")) == 1
        assert len(log.query(incident_id="inc-0001")) == 1
        assert len(log.query(since=5.0)) == 2
        assert len(log.query(until=5.0)) == 1


class TestReplay:
    def test_replay_matches_live_after_mutations(self):
        stack = make_stack()
        p1 = stack.store.apply_correction(
            CorrectionKind.ThrottlePrompts, Role.Analyst,
            params={"cap": 5, "window_s": 60})
        stack.store.apply_correction(CorrectionKind.AllowlistMode, Role.SOCLead,
                                     model_id="m1")
        stack.store.revoke_correction(p1.id, Role.Analyst)
        assert stack.replayed_state() == stack.live_state()

    def test_replay_tracks_incident_state(self):
        stack = make_stack()
        from modelgate.monitor import Severity
        inc = stack.engine.open_incident("", Severity.High, Role.Analyst,
                                         manual_note="drill")
        stack.engine.advance(inc.id, __import__("modelgate").IncidentState.Analyzing,
                             Role.Analyst)
        assert stack.replayed_state()["incidents"][inc.id] == "Analyzing"
        assert stack.replayed_state() == stack.live_state()

    def test_empty_log_reproduces_boot_roster(self):
        stack = make_stack()
        assert stack.replayed_state() == stack.live_state()

    def test_replay_drops_revoked_policies(self):
        stack = make_stack()
        p = stack.store.apply_correction(
            CorrectionKind.ThrottleCalls, Role.Analyst,
            params={"cap": 1, "window_s": 10})
        stack.store.revoke_correction(p.id, Role.Analyst)
        assert p.id not in stack.replayed_state()["policies"]
