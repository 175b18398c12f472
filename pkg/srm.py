#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
SRM member state machine: ADU production, session messages with RTT
estimation, receiver-driven loss detection and randomized repair
request / repair reply timers with suppression and backoff.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Set, Tuple

from ip_multicast import MulticastFabric, ScopeLimit, UNSCOPED
from metrics_trace import Trace
from ndn_core import name_for_adu
from sim_engine import (Engine, SimEvent, SimulationError, micros_to_seconds, ms_to_micros,
                        seconds_to_micros, stream_id)
from topology import RouteTables

logger = logging.getLogger(__name__)

SESSION_JITTER = 0.10


class MalformedSession(SimulationError):
    """Session message without any production state"""


@dataclass(frozen=True)
class SrmConfig:
    c1: float = 2.0
    c2: float = 2.0
    d1: float = 1.0
    d2: float = 1.0
    session_period_ms: float = 1000
    ideal_mode: bool = False
    rq_scope_hops: Optional[int] = None
    default_dist_ms: float = 50
    max_backoff: int = 5


@dataclass(frozen=True, order=True)
class AduId:
    producer: str
    seq: int

    def __str__(self) -> str:
        return f"({self.producer}:{self.seq})"

    @property
    def match_name(self) -> str:
        return str(name_for_adu(self.producer, self.seq))


@dataclass(frozen=True)
class AduData:
    id: AduId
    payload_size: int = 1024

    kind = "data"

    @property
    def match_name(self) -> str:
        return self.id.match_name


@dataclass(frozen=True)
class SessionMsg:
    sender: str
    latest: Dict[str, int]
    ts: int
    echoes: Dict[str, Tuple[int, int]] = field(default_factory=dict)

    kind = "session"
    match_name = None


@dataclass(frozen=True)
class RepairRequest:
    id: AduId
    requester: str

    kind = "rq"

    @property
    def match_name(self) -> str:
        return self.id.match_name

    def trace_extra(self) -> Dict:
        return {"requester": self.requester}


@dataclass(frozen=True)
class RepairReply:
    id: AduId
    replier: str
    payload_size: int = 1024

    kind = "rr"

    @property
    def match_name(self) -> str:
        return self.id.match_name

    def trace_extra(self) -> Dict:
        return {"replier": self.replier}


@dataclass
class PendingRequest:
    handle: SimEvent
    backoff: int


class IdealOracle:
    """Global-view suppression: one requester and one replier per loss.

    The requester is the member lacking the ADU that is nearest to its
    producer; the replier is the holder nearest to the requester. Ties go
    to the smaller member id.
    """

    def __init__(self, routes: RouteTables):
        self.routes = routes
        self.members: Dict[str, "SrmMember"] = {}

    def register(self, member):
        self.members[member.node] = member

    def _nearest(self, candidates, target):
        ranked = sorted(candidates, key=lambda m: (self.routes.path_delay(m, target), m))
        return ranked[0] if ranked else None

    def requester_for(self, adu: AduId) -> Optional[str]:
        """Pick the loser nearest to the producer"""
        losers = [m for m, member in self.members.items() if not member.holds(adu)]
        return self._nearest(losers, adu.producer)

    def replier_for(self, adu: AduId, requester: str) -> Optional[str]:
        """Pick the holder nearest to the requester"""
        holders = [m for m, member in self.members.items() if member.holds(adu)]
        return self._nearest(holders, requester)


class SrmMember:
    """Per-host SRM state: received ADUs, loss detection and repair timers"""

    def __init__(self, node: str, group_id: str, fabric: MulticastFabric, engine: Engine,
                 trace: Trace, config: SrmConfig, initial_seqs: Optional[Dict[str, int]] = None,
                 oracle: Optional[IdealOracle] = None):
        self.node = node
        self.group_id = group_id
        self.fabric = fabric
        self.engine = engine
        self.trace = trace
        self.config = config
        self.oracle = oracle
        self.stream = stream_id(node, "srm")
        self.on_deliver: Optional[Callable[[AduId], None]] = None

        initial = dict(initial_seqs or {})
        initial.setdefault(node, 0)
        self.received: Dict[str, Set[int]] = {p: set(range(1, s + 1)) for p, s in initial.items()}
        self.highest_heard: Dict[str, int] = dict(initial)
        self._checked_upto: Dict[str, int] = dict(initial)
        self.dist: Dict[str, float] = {}
        self.detected: Dict[AduId, int] = {}
        self.pending_rq: Dict[AduId, PendingRequest] = {}
        self.pending_rr: Dict[AduId, SimEvent] = {}
        self._heard: Dict[str, Tuple[int, int]] = {}
        self._session_timer: Optional[SimEvent] = None

        fabric.join(node, self.on_packet)
        if oracle is not None:
            oracle.register(self)

    @property
    def rq_scope(self) -> ScopeLimit:
        if self.config.rq_scope_hops is None:
            return UNSCOPED
        return ScopeLimit(self.config.rq_scope_hops)

    @property
    def own_seq(self) -> int:
        return self.highest_heard.get(self.node, 0)

    def holds(self, adu: AduId) -> bool:
        """Check whether this member has the ADU"""
        return adu.seq in self.received.get(adu.producer, ())

    def missing(self) -> Set[AduId]:
        """Detected losses not yet repaired"""
        return {adu for adu in self.detected if not self.holds(adu)}

    def distance_to(self, peer: str) -> float:
        """Estimated one-way delay in seconds, falling back to default_dist"""
        return self.dist.get(peer, self.config.default_dist_ms / 1000.0)

    def start(self):
        """Start sending session messages"""
        self._schedule_session()

    # production

    def produce_adu(self, payload_size: int = 1024) -> AduId:
        """Publish the next ADU of this member to the whole group"""
        self.fabric.check_member(self.node, self.group_id)
        adu = AduId(self.node, self.own_seq + 1)
        self.received.setdefault(self.node, set()).add(adu.seq)
        self.highest_heard[self.node] = adu.seq
        self._checked_upto[self.node] = adu.seq
        self.trace.record(self.engine.now, self.node, "produce", "srm", "data", adu.match_name,
                          extra={"payload_size": payload_size})
        self.fabric.mcast_send(self.node, self.group_id, AduData(adu, payload_size))
        return adu

    # session messages

    def _schedule_session(self):
        period = ms_to_micros(self.config.session_period_ms)
        jitter = self.engine.uniform(self.stream, 1.0 - SESSION_JITTER, 1.0 + SESSION_JITTER)
        self._session_timer = self.engine.schedule_in(
            max(1, int(round(period * jitter))), self.node, "session", lambda _: self.on_session_timer())

    def on_session_timer(self):
        """Send a session message with our highest seqs and timestamp echoes"""
        now = self.engine.now
        echoes = {peer: (their_ts, now - heard_at) for peer, (their_ts, heard_at) in sorted(self._heard.items())}
        msg = SessionMsg(self.node, dict(sorted(self.highest_heard.items())), now, echoes)
        self.fabric.mcast_send(self.node, self.group_id, msg)
        self._schedule_session()

    def on_session_msg(self, msg: SessionMsg):
        """Handle a peer's session message: update distances and look for gaps"""
        if msg.sender == self.node:
            return
        if not msg.latest:
            raise MalformedSession(f"session message from {msg.sender} carries no state")
        now = self.engine.now
        self._heard[msg.sender] = (msg.ts, now)
        echo = msg.echoes.get(self.node)
        if echo is not None:
            my_ts, hold = echo
            rtt = now - my_ts - hold
            if rtt > 0:
                self.dist[msg.sender] = micros_to_seconds(rtt) / 2.0
        for producer, seq in msg.latest.items():
            if seq > self.highest_heard.get(producer, 0):
                self.highest_heard[producer] = seq
            self._detect_losses(producer)
        self._retry_abstained()

    # loss detection and requests

    def _detect_losses(self, producer):
        highest = self.highest_heard.get(producer, 0)
        start = self._checked_upto.get(producer, 0) + 1
        for seq in range(start, highest + 1):
            adu = AduId(producer, seq)
            if not self.holds(adu) and adu not in self.detected:
                self.detected[adu] = self.engine.now
                logger.debug("%s detected loss of %s at %dus", self.node, adu, self.engine.now)
                self.schedule_rq(adu)
        self._checked_upto[producer] = max(self._checked_upto.get(producer, 0), highest)

    def _retry_abstained(self):
        for adu in sorted(self.missing()):
            if adu not in self.pending_rq:
                self.schedule_rq(adu)

    def schedule_rq(self, adu: AduId, backoff: int = 0):
        """Arm the request timer for a missing ADU, unless one is already pending"""
        if self.holds(adu) or adu in self.pending_rq:
            return
        if self.oracle is not None and self.oracle.requester_for(adu) != self.node:
            return
        d = self.distance_to(adu.producer)
        scale = 2 ** backoff
        delay = self.engine.uniform(self.stream, scale * self.config.c1 * d,
                                    scale * (self.config.c1 + self.config.c2) * d)
        handle = self.engine.schedule_in(seconds_to_micros(delay), self.node, adu,
                                         lambda _: self._on_rq_timer(adu))
        self.pending_rq[adu] = PendingRequest(handle, backoff)

    def _on_rq_timer(self, adu):
        pending = self.pending_rq.pop(adu, None)
        if pending is None or self.holds(adu):
            return
        self.trace.record(self.engine.now, self.node, "originate", "srm", "rq", adu.match_name,
                          extra={"backoff": pending.backoff})
        self.fabric.mcast_send(self.node, self.group_id, RepairRequest(adu, self.node), self.rq_scope)
        # keep retrying until the repair arrives
        self.schedule_rq(adu, min(pending.backoff + 1, self.config.max_backoff))

    def on_rq(self, rq: RepairRequest):
        """Handle a repair request: schedule a reply if we hold it, back off if we miss it too"""
        if rq.requester == self.node:
            return
        adu = rq.id
        if self.holds(adu):
            if adu in self.pending_rr:
                return
            if self.oracle is not None and self.oracle.replier_for(adu, rq.requester) != self.node:
                return
            d = self.distance_to(rq.requester)
            delay = self.engine.uniform(self.stream, self.config.d1 * d,
                                        (self.config.d1 + self.config.d2) * d)
            self.pending_rr[adu] = self.engine.schedule_in(
                seconds_to_micros(delay), self.node, adu, lambda _: self._on_rr_timer(adu))
            return
        pending = self.pending_rq.get(adu)
        if pending is not None:
            self.engine.cancel(pending.handle)
            del self.pending_rq[adu]
            backoff = min(pending.backoff + 1, self.config.max_backoff)
            logger.debug("%s suppressed by %s's request for %s, backoff %d",
                         self.node, rq.requester, adu, backoff)
            self.trace.record(self.engine.now, self.node, "suppress", "srm", "rq", adu.match_name,
                              extra={"backoff": backoff})
            self.schedule_rq(adu, backoff)

    # replies

    def _on_rr_timer(self, adu):
        """Send the repair reply"""
        if self.pending_rr.pop(adu, None) is None:
            return
        self.trace.record(self.engine.now, self.node, "originate", "srm", "rr", adu.match_name)
        self.fabric.mcast_send(self.node, self.group_id, RepairReply(adu, self.node))

    def on_rr(self, rr: RepairReply):
        """Handle a repair reply: cancel our own reply and take the ADU"""
        if rr.replier == self.node:
            return
        adu = rr.id
        handle = self.pending_rr.pop(adu, None)
        if handle is not None:
            self.engine.cancel(handle)
            self.trace.record(self.engine.now, self.node, "suppress", "srm", "rr", adu.match_name)
        self._accept(adu, "rr")

    def on_data(self, data: AduData):
        """Handle original ADU data"""
        self._accept(data.id, "data")
        if data.id.seq > self.highest_heard.get(data.id.producer, 0):
            self.highest_heard[data.id.producer] = data.id.seq
        self._detect_losses(data.id.producer)

    def _accept(self, adu, kind):
        if self.holds(adu):
            return
        self.received.setdefault(adu.producer, set()).add(adu.seq)
        pending = self.pending_rq.pop(adu, None)
        if pending is not None:
            self.engine.cancel(pending.handle)
        extra = {"recovered": adu in self.detected}
        if adu in self.detected:
            extra["latency_us"] = self.engine.now - self.detected[adu]
        self.trace.record(self.engine.now, self.node, "deliver", "srm", kind, adu.match_name, extra=extra)
        if self.on_deliver is not None:
            self.on_deliver(adu)

    def on_packet(self, packet):
        """Dispatch a delivered group packet by type"""
        if isinstance(packet, AduData):
            self.on_data(packet)
        elif isinstance(packet, SessionMsg):
            self.on_session_msg(packet)
        elif isinstance(packet, RepairRequest):
            self.on_rq(packet)
        elif isinstance(packet, RepairReply):
            self.on_rr(packet)
        else:
            logger.warning("%s ignoring unexpected packet %r", self.node, packet)
