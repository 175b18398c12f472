#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
State Vector Sync: group-wide dissemination of per-producer publication
state through multicast Sync Interests with reply suppression.
"""

import logging
import re
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, Iterator, Mapping, Optional, Tuple

from metrics_trace import Trace
from ndn_core import Interest, Name
from sim_engine import Engine, SimEvent, SimulationError, ms_to_micros, stream_id

logger = logging.getLogger(__name__)

REFRESH_JITTER = 0.10
SYNC_INTEREST_LIFETIME_MS = 1000
_ENTRY = re.compile(r"(\d+):")


class MalformedVector(SimulationError):
    """Sync Interest parameters are not a state vector"""


@dataclass(frozen=True)
class SvsConfig:
    sync_prefix: str = "/sync"
    refresh_period_ms: float = 30000
    suppression_window_ms: float = 200


class StateVector:
    """Per-producer latest sequence numbers; absent producers read as 0"""

    def __init__(self, entries: Optional[Mapping[str, int]] = None):
        self._entries: Dict[str, int] = {}
        for producer, seq in (entries or {}).items():
            if seq < 0:
                raise MalformedVector(f"negative sequence for {producer}")
            self._entries[producer] = int(seq)

    def __getitem__(self, producer: str) -> int:
        return self._entries.get(producer, 0)

    def __iter__(self) -> Iterator[Tuple[str, int]]:
        return iter(sorted(self._entries.items()))

    def __eq__(self, other) -> bool:
        if not isinstance(other, StateVector):
            return NotImplemented
        return self.as_dict(nonzero=True) == other.as_dict(nonzero=True)

    def __repr__(self) -> str:
        return "[" + ", ".join(f"{p}:{s}" for p, s in self) + "]"

    def producers(self) -> Iterable[str]:
        return sorted(self._entries)

    def as_dict(self, nonzero: bool = False) -> Dict[str, int]:
        return {p: s for p, s in self if s or not nonzero}

    def bump(self, producer: str) -> "StateVector":
        entries = dict(self._entries)
        entries[producer] = self[producer] + 1
        return StateVector(entries)

    def older_anywhere(self, other: "StateVector") -> bool:
        """True if some entry here is behind other's"""
        return any(self[p] < s for p, s in other)

    def covers(self, other: "StateVector") -> bool:
        """True if every entry here is equal to or ahead of other's"""
        return not self.older_anywhere(other)

    def encode(self) -> bytes:
        """Length-prefixed text: <len>:<producer><seq>; per entry in producer order"""
        return "".join(f"{len(p)}:{p}{s};" for p, s in self).encode("utf-8")

    @classmethod
    def decode(cls, raw: bytes) -> "StateVector":
        try:
            text = raw.decode("utf-8")
        except (AttributeError, UnicodeDecodeError) as e:
            raise MalformedVector(f"undecodable vector: {e}") from None
        entries: Dict[str, int] = {}
        pos = 0
        while pos < len(text):
            match = _ENTRY.match(text, pos)
            if not match:
                raise MalformedVector(f"bad length prefix at offset {pos}")
            start = match.end()
            end = start + int(match.group(1))
            producer = text[start:end]
            semi = text.find(";", end)
            if len(producer) != int(match.group(1)) or not producer or semi < 0:
                raise MalformedVector(f"truncated entry at offset {pos}")
            seq = text[end:semi]
            if not seq.isdigit():
                raise MalformedVector(f"bad sequence {seq!r} for {producer}")
            if producer in entries:
                raise MalformedVector(f"duplicate producer {producer}")
            entries[producer] = int(seq)
            pos = semi + 1
        return cls(entries)


def sv_merge(a: StateVector, b: StateVector) -> StateVector:
    merged = a.as_dict()
    for producer, seq in b:
        merged[producer] = max(merged.get(producer, 0), seq)
    return StateVector(merged)


class SvsMember:
    """Sync state of one group member"""

    def __init__(self, node: str, engine: Engine, trace: Trace, config: SvsConfig,
                 send: Callable[[Interest], None], initial: Optional[Mapping[str, int]] = None,
                 on_missing: Optional[Callable[[str, int], None]] = None):
        self.node = node
        self.engine = engine
        self.trace = trace
        self.config = config
        self.sync_prefix = Name.parse(config.sync_prefix)
        self._send = send
        self.on_missing = on_missing
        entries = dict(initial or {})
        entries.setdefault(node, 0)
        self.local = StateVector(entries)
        self.stream = stream_id(node, "svs")
        self.pending_reply: Optional[SimEvent] = None
        self._refresh_timer: Optional[SimEvent] = None

    @property
    def refresh_period(self) -> int:
        return ms_to_micros(self.config.refresh_period_ms)

    @property
    def suppression_window(self) -> int:
        return ms_to_micros(self.config.suppression_window_ms)

    def start(self):
        self._reset_refresh()

    def publish(self) -> int:
        """Advance our own entry and announce it; returns the new sequence"""
        self.local = self.local.bump(self.node)
        self._cancel_reply()
        self._send_sync("publish")
        return self.local[self.node]

    def _send_sync(self, reason: str):
        interest = Interest(self.sync_prefix, self.engine.nonce(self.stream),
                            ms_to_micros(SYNC_INTEREST_LIFETIME_MS), self.local.encode())
        self.trace.record(self.engine.now, self.node, "originate", "svs", "sync", str(self.sync_prefix),
                          extra={"reason": reason, "vector": self.local.as_dict()})
        self._send(interest)
        self._reset_refresh()

    def on_sync_interest(self, interest: Interest):
        try:
            remote = StateVector.decode(interest.app_params)
        except MalformedVector as e:
            logger.warning("%s: %s", self.node, e)
            self.trace.record(self.engine.now, self.node, "drop", "svs", "sync", str(interest.name),
                              extra={"reason": "malformed-vector"})
            return
        before = self.local
        for producer, seq in remote:
            if producer == self.node:
                continue
            for missing in range(before[producer] + 1, seq + 1):
                if self.on_missing is not None:
                    self.on_missing(producer, missing)
        self.local = sv_merge(before, remote)

        if remote.older_anywhere(before):
            if self.pending_reply is None:
                delay = self.engine.uniform(self.stream, 0, self.suppression_window)
                self.pending_reply = self.engine.schedule_in(
                    int(delay), self.node, "svs-reply", lambda _: self._on_reply_timer())
        else:
            self._cancel_reply()
        self._reset_refresh()

    def _cancel_reply(self):
        if self.engine.cancel(self.pending_reply):
            logger.debug("%s suppressed its corrective sync reply", self.node)
            self.trace.record(self.engine.now, self.node, "suppress", "svs", "sync", str(self.sync_prefix))
        self.pending_reply = None

    def _on_reply_timer(self):
        self.pending_reply = None
        self._send_sync("reply")

    def on_refresh_timer(self):
        self._send_sync("refresh")

    def _reset_refresh(self):
        self.engine.cancel(self._refresh_timer)
        jitter = self.engine.uniform(self.stream, 1.0 - REFRESH_JITTER, 1.0 + REFRESH_JITTER)
        self._refresh_timer = self.engine.schedule_in(
            max(1, int(round(self.refresh_period * jitter))), self.node, "svs-refresh",
            lambda _: self.on_refresh_timer())
