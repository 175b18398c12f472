#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
The multiparty application under test. Every member produces numbered
items on a schedule and must end up holding everyone's items; it runs
over either the SRM stack or the NDN + SVS stack.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, Optional, Set, Tuple

from metrics_trace import Trace
from ndn_core import (Accept, CertStore, Certificate, DataPacket, Interest, Name, TrustSchema,
                      name_for_adu, parse_adu_name, sign, validate)
from ndn_forwarder import Forwarder, NdnConfig
from sim_engine import Engine, SimEvent, SimulationError, ms_to_micros, stream_id
from svs import SvsMember

logger = logging.getLogger(__name__)


class UnknownMember(SimulationError):
    """A schedule entry names a node that is not a group member"""


class RetxLimitExceeded(SimulationError):
    """A fetch was abandoned after exhausting its retransmissions"""

    def __init__(self, consumer: str, name: str, retx: int):
        self.consumer = consumer
        self.name = name
        self.retx = retx
        super().__init__(f"{consumer} gave up on {name} after {retx} retransmissions")


@dataclass(frozen=True)
class ScheduleEntry:
    member: str
    count: int
    start_ms: float = 0
    interval_ms: float = 1000
    payload_size: int = 1024


@dataclass(frozen=True)
class AppConfig:
    schedule: Tuple[ScheduleEntry, ...] = ()
    max_retx: int = 10
    consumer_retx_ms: Optional[float] = None
    initial_seqs: Mapping[str, int] = field(default_factory=dict)


class ProductionSchedule:
    """Who produces how many items, when"""

    def __init__(self, entries: Tuple[ScheduleEntry, ...] = ()):
        for entry in entries:
            if entry.count < 0:
                raise ValueError(f"negative count for {entry.member}")
            if entry.interval_ms <= 0:
                raise ValueError(f"interval for {entry.member} must be positive")
        self.entries = tuple(entries)

    def productions(self) -> List[Tuple[int, str, int]]:
        """(time us, member, payload size) for every item, in time order"""
        items = []
        for entry in self.entries:
            start = ms_to_micros(entry.start_ms)
            interval = ms_to_micros(entry.interval_ms)
            for i in range(entry.count):
                items.append((start + i * interval, entry.member, entry.payload_size))
        return sorted(items, key=lambda item: item[0])

    def total(self) -> int:
        """Number of items across all entries"""
        return sum(entry.count for entry in self.entries)


def run_schedule(engine: Engine, schedule: ProductionSchedule,
                 producers: Mapping[str, Callable[[int], object]]) -> int:
    """Register every scheduled production with the engine; returns the item count"""
    for entry in schedule.entries:
        if entry.member not in producers:
            raise UnknownMember(f"schedule names {entry.member!r}, which is not a group member")
    count = 0
    for at, member, payload_size in schedule.productions():
        produce = producers[member]
        engine.schedule(at, member, payload_size, lambda size, produce=produce: produce(size))
        count += 1
    return count


@dataclass
class Outstanding:
    first_sent: int
    retx: int
    interval: int
    timer: Optional[SimEvent] = None


class NdnMember:
    """Application of one host on the NDN binding: producer, consumer and SVS glue"""

    def __init__(self, node: str, forwarder: Forwarder, engine: Engine, trace: Trace,
                 app_config: AppConfig, ndn_config: NdnConfig, key: Certificate,
                 schema: TrustSchema, certs: CertStore):
        self.node = node
        self.forwarder = forwarder
        self.engine = engine
        self.trace = trace
        self.app_config = app_config
        self.ndn_config = ndn_config
        self.key = key
        self.schema = schema
        self.certs = certs
        self.stream = stream_id(node, "app")
        self.store: Dict[Name, DataPacket] = {}
        self.received: Dict[str, Set[int]] = {
            p: set(range(1, s + 1)) for p, s in app_config.initial_seqs.items()}
        self.outstanding: Dict[Name, Outstanding] = {}
        self.rtt: Dict[str, int] = {}
        self.failures: List[RetxLimitExceeded] = []
        self.svs: Optional[SvsMember] = None
        forwarder.attach_app(self.on_packet)

    def bind_sync(self, svs: SvsMember):
        """Hook this member to its sync protocol instance"""
        self.svs = svs
        svs.on_missing = self.on_missing

    def holds(self, producer: str, seq: int) -> bool:
        return seq in self.received.get(producer, ())

    # production

    def produce(self, payload_size: int = 1024) -> Name:
        """Sign and store the next item, then announce it through sync"""
        seq = self.svs.local[self.node] + 1
        name = name_for_adu(self.node, seq)
        data = sign(self.key, name, bytes(payload_size))
        self.store[name] = data
        self.received.setdefault(self.node, set()).add(seq)
        self.trace.record(self.engine.now, self.node, "produce", "app", "data", str(name),
                          extra={"payload_size": payload_size})
        self.svs.publish()
        return name

    def _serve(self, interest):
        data = self.store.get(interest.name)
        if data is None:
            logger.debug("%s has nothing under %s", self.node, interest.name)
            return
        self.trace.record(self.engine.now, self.node, "originate", "ndn", "data", str(interest.name),
                          extra={"retx": interest.retx})
        self.forwarder.from_app(data)

    # consumption

    def on_missing(self, producer: str, seq: int):
        """Sync reported an item this member lacks"""
        self.fetch(name_for_adu(producer, seq))

    def _initial_interval(self, producer):
        # twice the last measured round trip, else the configured default
        if producer in self.rtt:
            return 2 * self.rtt[producer]
        configured = self.app_config.consumer_retx_ms
        if configured is None:
            configured = self.ndn_config.consumer_retx_ms
        return ms_to_micros(configured)

    def _cap(self, interval):
        cap = self.ndn_config.max_retx_interval_ms
        return interval if cap is None else min(interval, ms_to_micros(cap))

    def fetch(self, name: Name):
        """Express an Interest for an item unless it is held or already pending"""
        producer, seq = parse_adu_name(name)
        if self.holds(producer, seq) or name in self.outstanding:
            return
        pending = Outstanding(self.engine.now, 0, self._cap(self._initial_interval(producer)))
        self.outstanding[name] = pending
        self._express(name, pending)

    def _express(self, name, pending):
        interest = Interest(name, self.engine.nonce(self.stream),
                            ms_to_micros(self.ndn_config.interest_lifetime_ms), None, pending.retx)
        pending.timer = self.engine.schedule_in(pending.interval, self.node, name,
                                                lambda _: self._on_timeout(name))
        self.forwarder.from_app(interest)

    def _on_timeout(self, name):
        pending = self.outstanding.get(name)
        if pending is None:
            return
        self.trace.record(self.engine.now, self.node, "timeout", "ndn", "interest", str(name),
                          extra={"retx": pending.retx})
        if pending.retx >= self.app_config.max_retx:
            del self.outstanding[name]
            failure = RetxLimitExceeded(self.node, str(name), pending.retx)
            self.failures.append(failure)
            logger.debug("%s", failure)
            self.trace.record(self.engine.now, self.node, "abandon", "ndn", "interest", str(name),
                              extra={"retx": pending.retx})
            return
        pending.retx += 1
        pending.interval = self._cap(pending.interval * 2)
        self._express(name, pending)

    def on_app_data(self, data: DataPacket):
        """Validate arriving Data and deliver it to the application once"""
        producer, seq = parse_adu_name(data.name)
        if self.holds(producer, seq):
            return
        result = validate(data, self.schema, self.certs)
        if not isinstance(result, Accept):
            self.trace.record(self.engine.now, self.node, "validate-fail", "ndn", "data", str(data.name),
                              extra={"reason": result.reason.value})
            return
        self.received.setdefault(producer, set()).add(seq)
        pending = self.outstanding.pop(data.name, None)
        extra = {"recovered": False, "validated": True, "depth": result.depth}
        if pending is not None:
            self.engine.cancel(pending.timer)
            latency = self.engine.now - pending.first_sent
            if pending.retx == 0:
                self.rtt[producer] = latency
            extra.update(recovered=pending.retx > 0, latency_us=latency, retx=pending.retx)
        self.trace.record(self.engine.now, self.node, "deliver", "ndn", "data", str(data.name), extra=extra)

    def on_packet(self, packet):
        """Dispatch a packet handed up by the local forwarder"""
        if isinstance(packet, DataPacket):
            self.on_app_data(packet)
        elif isinstance(packet, Interest) and packet.kind == "sync":
            if self.svs is not None:
                self.svs.on_sync_interest(packet)
        elif isinstance(packet, Interest):
            self._serve(packet)
