#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Simulated IP multicast: static group membership and hop-by-hop packet
replication along source-rooted shortest-path trees.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, FrozenSet, Optional

from sim_engine import SimulationError
from topology import Network, RouteTables, tree_children

logger = logging.getLogger(__name__)


class NotAMember(SimulationError):
    """Sender is not a member of the group it sends to"""


@dataclass(frozen=True)
class McastGroup:
    group_id: str
    members: FrozenSet[str]

    def __contains__(self, node: str) -> bool:
        return node in self.members


@dataclass(frozen=True)
class ScopeLimit:
    """Maximum number of links a copy may traverse from the sender; None = unscoped"""

    hop_count: Optional[int] = None

    def __post_init__(self):
        if self.hop_count is not None and self.hop_count < 1:
            raise ValueError("hop_count must be a positive integer")

    def allows(self, hops: int) -> bool:
        return self.hop_count is None or hops <= self.hop_count


UNSCOPED = ScopeLimit()


@dataclass(frozen=True)
class McastEnvelope:
    """A multicast copy in flight: the wrapped packet plus routing context"""

    group_id: str
    origin: str
    packet: object = field(compare=False)
    hops: int = 1
    scope: ScopeLimit = UNSCOPED

    @property
    def kind(self) -> str:
        return self.packet.kind

    @property
    def match_name(self) -> Optional[str]:
        return self.packet.match_name

    def trace_extra(self) -> Dict:
        extra = {"origin": self.origin, "hops": self.hops}
        if hasattr(self.packet, "trace_extra"):
            extra.update(self.packet.trace_extra())
        return extra


class MulticastFabric:
    """Replicates group packets on every node of the topology"""

    def __init__(self, network: Network, routes: RouteTables, protocol: str = "srm"):
        self.network = network
        self.routes = routes
        self.protocol = protocol
        self.groups: Dict[str, McastGroup] = {}
        self._handlers: Dict[str, Callable[[object], None]] = {}
        for node in network.topology.node_ids:
            network.attach(node, self._make_receiver(node))

    def _make_receiver(self, node: str):
        return lambda src, envelope: self._on_arrival(node, envelope)

    def add_group(self, group: McastGroup):
        """Declare a group and its static membership"""
        self.groups[group.group_id] = group

    def join(self, member: str, handler: Callable[[object], None]):
        """Register the local delivery handler of a member host"""
        self._handlers[member] = handler

    def is_member(self, node: str, group_id: str) -> bool:
        group = self.groups.get(group_id)
        return group is not None and node in group

    def check_member(self, node: str, group_id: str):
        """Raise NotAMember unless node belongs to group_id"""
        if not self.is_member(node, group_id):
            raise NotAMember(f"{node} is not a member of {group_id}")

    def mcast_send(self, sender: str, group_id: str, packet,
                   scope: ScopeLimit = UNSCOPED) -> int:
        """Multicast packet to every other member; returns copies put on the wire"""
        self.check_member(sender, group_id)
        envelope = McastEnvelope(group_id, sender, packet, 1, scope)
        return self._forward(sender, envelope)

    def _children(self, node, envelope):
        group = self.groups[envelope.group_id]
        tree = self.routes.multicast_tree(group.members, envelope.origin)
        return tree_children(tree).get(node, [])

    def _forward(self, node, envelope):
        """Copy the envelope to this node's tree children while the hop scope allows"""
        sent = 0
        hops = envelope.hops if node == envelope.origin else envelope.hops + 1
        if not envelope.scope.allows(hops):
            return 0
        copy = McastEnvelope(envelope.group_id, envelope.origin, envelope.packet, hops, envelope.scope)
        for child in self._children(node, envelope):
            self.network.transmit(node, child, copy, self.protocol)
            sent += 1
        return sent

    def _on_arrival(self, node, envelope):
        """Deliver to a local member, then keep replicating down the tree"""
        group = self.groups.get(envelope.group_id)
        if group is None:
            return
        if node in group and node != envelope.origin:
            handler = self._handlers.get(node)
            if handler is not None:
                handler(envelope.packet)
        self._forward(node, envelope)
