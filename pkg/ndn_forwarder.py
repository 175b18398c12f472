#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Per-node NDN forwarding pipeline: FIB longest-prefix match, PIT
aggregation and expiry, LRU Content Store, reverse-path Data delivery
and fire-and-forget multicast of Sync Interests.
"""

import logging
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Optional, Set

from metrics_trace import Trace
from ndn_core import DataPacket, Interest, Name
from sim_engine import Engine, SimEvent, ms_to_micros
from topology import Network, RouteTables, Topology

logger = logging.getLogger(__name__)

APP_FACE = "app"


@dataclass(frozen=True)
class NdnConfig:
    interest_lifetime_ms: float = 4000
    retx_suppression_ms: float = 100
    cs_capacity: Optional[int] = None
    consumer_retx_ms: float = 500
    max_retx_interval_ms: Optional[float] = None


@dataclass
class FibEntry:
    """A name prefix and the faces Interests under it go out on"""

    prefix: Name
    next_hops: List[str]


class Fib:
    """Forwarding Information Base with component-wise longest-prefix match"""

    def __init__(self):
        self._entries: Dict[Name, FibEntry] = {}

    def add_fib_entry(self, prefix: Name, next_hops: Iterable[str]):
        """Add or replace the route for a prefix"""
        self._entries[prefix] = FibEntry(prefix, list(next_hops))

    def remove_fib_entry(self, prefix: Name):
        self._entries.pop(prefix, None)

    def find_fib_entry(self, name: Name) -> Optional[FibEntry]:
        """Longest-prefix match"""
        for length in range(len(name), 0, -1):
            entry = self._entries.get(Name(name.components[:length]))
            if entry is not None:
                return entry
        return None

    @property
    def entries(self) -> List[FibEntry]:
        return [self._entries[p] for p in sorted(self._entries)]


@dataclass
class Downstream:
    nonce: int
    arrived_at: int


@dataclass
class PitEntry:
    name: Name
    downstreams: Dict[str, Downstream]
    upstream_sent_at: int
    expiry: int
    nonces_seen: Set[int] = field(default_factory=set)
    timer: Optional[SimEvent] = None


class DeadNonceList:
    """Nonces of recently seen Interests, each remembered for one Interest lifetime"""

    def __init__(self, lifetime: int):
        self.lifetime = lifetime
        self._expiry: "OrderedDict[int, int]" = OrderedDict()

    def __len__(self):
        return len(self._expiry)

    def _purge(self, now):
        # insertion order is expiry order: the clock never goes back
        while self._expiry:
            nonce, expires_at = next(iter(self._expiry.items()))
            if expires_at > now:
                break
            del self._expiry[nonce]

    def seen(self, nonce: int, now: int) -> bool:
        """Check for a live entry, remembering the nonce if it is new"""
        self._purge(now)
        if nonce in self._expiry:
            return True
        self._expiry[nonce] = now + self.lifetime
        return False


class ContentStore:
    """LRU cache of Data packets; capacity None means unlimited"""

    def __init__(self, capacity: Optional[int] = None):
        if capacity is not None and capacity < 0:
            raise ValueError("cs capacity must be >= 0")
        self.capacity = capacity
        self._entries: "OrderedDict[Name, DataPacket]" = OrderedDict()

    def __len__(self):
        return len(self._entries)

    def __contains__(self, name: Name) -> bool:
        return name in self._entries

    def lookup(self, name: Name) -> Optional[DataPacket]:
        """Find cached Data and mark it recently used"""
        data = self._entries.get(name)
        if data is not None:
            self._entries.move_to_end(name)
        return data

    def insert(self, data: DataPacket):
        """Cache Data, evicting the least recently used entries over capacity"""
        if self.capacity == 0:
            return
        self._entries[data.name] = data
        self._entries.move_to_end(data.name)
        while self.capacity is not None and len(self._entries) > self.capacity:
            evicted, _ = self._entries.popitem(last=False)
            logger.debug("cs evicted %s", evicted)


class Forwarder:
    """NDN forwarding state and pipelines of one node"""

    def __init__(self, node: str, network: Network, engine: Engine, trace: Trace,
                 config: NdnConfig, fib: Fib, sync_prefix: Name):
        self.node = node
        self.network = network
        self.engine = engine
        self.trace = trace
        self.config = config
        self.fib = fib
        self.sync_prefix = sync_prefix
        self.pit: Dict[Name, PitEntry] = {}
        self.cs = ContentStore(config.cs_capacity)
        self._dead_nonces = DeadNonceList(self.lifetime)
        self._sync_nonces = DeadNonceList(self.lifetime)
        self.app: Optional[Callable[[object], None]] = None
        network.attach(node, self.receive)

    @property
    def lifetime(self) -> int:
        return ms_to_micros(self.config.interest_lifetime_ms)

    @property
    def retx_suppression(self) -> int:
        return ms_to_micros(self.config.retx_suppression_ms)

    def attach_app(self, handler: Callable[[object], None]):
        """Connect the local application face"""
        self.app = handler

    def receive(self, src, packet):
        """Dispatch a packet arriving on a link face"""
        if isinstance(packet, Interest):
            self.on_interest(src, packet)
        elif isinstance(packet, DataPacket):
            self.on_data(src, packet)
        else:
            logger.warning("%s dropped unknown packet %r", self.node, packet)

    def from_app(self, packet):
        """Inject a packet from the local application"""
        self.receive(APP_FACE, packet)

    def _protocol(self, packet):
        return "svs" if getattr(packet, "kind", None) == "sync" else "ndn"

    def _record(self, event, packet, **extra):
        self.trace.record(self.engine.now, self.node, event, self._protocol(packet), packet.kind,
                          packet.match_name, extra=extra)

    def _send(self, face, packet):
        if face == APP_FACE:
            if self.app is not None:
                self.app(packet)
            return
        self.network.transmit(self.node, face, packet, self._protocol(packet))

    # Interest pipeline

    def on_interest(self, face: str, interest: Interest):
        """Handle an Interest: nonce check, cache, PIT aggregation, then FIB forwarding"""
        if interest.app_params is not None and self.sync_prefix.is_prefix_of(interest.name):
            self._on_sync_interest(face, interest)
            return
        now = self.engine.now
        if self._dead_nonces.seen(interest.nonce, now):
            self._record("drop", interest, reason="duplicate-nonce")
            return

        cached = self.cs.lookup(interest.name)
        if cached is not None:
            self._record("cache-hit", interest, face=face)
            self._send(face, cached)
            return

        entry = self.pit.get(interest.name)
        if entry is not None:
            entry.downstreams[face] = Downstream(interest.nonce, now)
            entry.nonces_seen.add(interest.nonce)
            self._extend_expiry(entry, now + self.lifetime)
            if now - entry.upstream_sent_at >= self.retx_suppression:
                if self._forward(face, interest):
                    entry.upstream_sent_at = now
            else:
                self._record("aggregate", interest, face=face)
            return

        fib_entry = self.fib.find_fib_entry(interest.name)
        if fib_entry is None or not [h for h in fib_entry.next_hops if h != face]:
            self._record("drop", interest, reason="no-route")
            return
        entry = PitEntry(interest.name, {face: Downstream(interest.nonce, now)}, now,
                         now + self.lifetime, {interest.nonce})
        self.pit[interest.name] = entry
        self._extend_expiry(entry, entry.expiry)
        self._forward(face, interest)

    def _forward(self, face, interest):
        fib_entry = self.fib.find_fib_entry(interest.name)
        hops = [h for h in fib_entry.next_hops if h != face] if fib_entry else []
        if not hops:
            self._record("drop", interest, reason="no-route")
            return False
        # data prefixes route along a single shortest path
        self._send(hops[0], interest)
        return True

    def _extend_expiry(self, entry, expiry):
        entry.expiry = max(entry.expiry, expiry)
        self.engine.cancel(entry.timer)
        name = entry.name
        entry.timer = self.engine.schedule(entry.expiry, self.node, name,
                                           lambda _: self.pit_expire(name))

    def pit_expire(self, name: Name):
        """Remove a PIT entry whose lifetime ran out"""
        entry = self.pit.get(name)
        if entry is None or entry.expiry > self.engine.now:
            return
        del self.pit[name]
        self.trace.record(self.engine.now, self.node, "expire", "ndn", "interest", str(name),
                          extra={"downstreams": sorted(entry.downstreams)})

    # Data pipeline

    def on_data(self, face: str, data: DataPacket):
        """Handle Data: consume the PIT entry, cache, and send to every downstream"""
        entry = self.pit.pop(data.name, None)
        if entry is None:
            self._record("drop", data, reason="unsolicited")
            return
        self.engine.cancel(entry.timer)
        self.cs.insert(data)
        for downstream in sorted(entry.downstreams):
            if downstream != face:
                self._send(downstream, data)

    # Sync Interests

    def _on_sync_interest(self, face, interest):
        """Deliver a Sync Interest locally and flood it along the group tree"""
        if self._sync_nonces.seen(interest.nonce, self.engine.now):
            self._record("drop", interest, reason="duplicate-nonce")
            return
        if face != APP_FACE and self.app is not None:
            self.app(interest)
        fib_entry = self.fib.find_fib_entry(interest.name)
        for hop in (fib_entry.next_hops if fib_entry else []):
            if hop != face and hop != APP_FACE:
                self._send(hop, interest)


def group_tree_neighbors(routes: RouteTables, members: Iterable[str]) -> Dict[str, List[str]]:
    """Undirected spanning tree of the group, rooted at its smallest member"""
    members = sorted(set(members))
    neighbors: Dict[str, Set[str]] = {}
    if not members:
        return {}
    for parent, child in routes.multicast_tree(members, members[0]):
        neighbors.setdefault(parent, set()).add(child)
        neighbors.setdefault(child, set()).add(parent)
    return {node: sorted(adj) for node, adj in neighbors.items()}


def build_fibs(topology: Topology, routes: RouteTables, producers: Iterable[str],
               sync_prefix: Name, members: Iterable[str]) -> Dict[str, Fib]:
    """Offline FIB population: one route per producer prefix plus the sync tree"""
    producers = sorted(set(producers))
    tree = group_tree_neighbors(routes, members)
    fibs = {}
    for node in topology.node_ids:
        fib = Fib()
        for producer in producers:
            hop = APP_FACE if node == producer else routes.hop(node, producer)
            fib.add_fib_entry(Name((producer,)), [hop])
        fib.add_fib_entry(sync_prefix, tree.get(node, []))
        fibs[node] = fib
    return fibs
