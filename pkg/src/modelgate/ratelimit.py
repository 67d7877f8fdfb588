"""Sliding-window rate limiting over event timestamps.

Window semantics are a true sliding window (t - window, t], not calendar
buckets, so there are no boundary-burst artifacts.
"""

from __future__ import annotations

import threading
from collections import deque
from dataclasses import dataclass, field


ALLOWED = "Allowed"
EXHAUSTED = "Exhausted"


@dataclass
class _KeyState:
    events: deque = field(default_factory=deque)
    lock: threading.Lock = field(default_factory=threading.Lock)


class RateLimiter:
    """Per-(policy, scope-key) sliding-window counters.

    Each key is an independent serialization point; operations on distinct
    keys never contend. Timestamps per key must be monotone.
    """

    def __init__(self):
        self._states: dict[tuple, _KeyState] = {}
        self._registry_lock = threading.Lock()

    def _state(self, key: tuple) -> _KeyState:
        with self._registry_lock:
            st = self._states.get(key)
            if st is None:
                st = self._states[key] = _KeyState()
            return st

    def _evict(self, st: _KeyState, t: float, window_s: float) -> None:
        cutoff = t - window_s
        while st.events and st.events[0] <= cutoff:
            st.events.popleft()

    def peek(self, key: tuple, t: float, cap: int, window_s: float) -> str:
        """Would a consume at time t succeed? No state change."""
        st = self._state(key)
        with st.lock:
            self._evict(st, t, window_s)
            return ALLOWED if len(st.events) < cap else EXHAUSTED

    def check_and_consume(self, key: tuple, t: float, cap: int, window_s: float) -> str:
        """Consume one unit iff it keeps the in-window count <= cap.

        State is updated only on Allowed; Exhausted is a value, not an error.
        """
        st = self._state(key)
        with st.lock:
            self._evict(st, t, window_s)
            if len(st.events) >= cap:
                return EXHAUSTED
            st.events.append(t)
            return ALLOWED

    def count(self, key: tuple, t: float, window_s: float) -> int:
        st = self._state(key)
        with st.lock:
            self._evict(st, t, window_s)
            return len(st.events)
