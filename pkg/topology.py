#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Network graph, link loss models, offline route computation and the
packet transmission primitive shared by both protocol stacks.
"""

import logging
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, FrozenSet, Iterable, List, Optional, Tuple

import networkx as nx

from sim_engine import Engine, SimulationError, ms_to_micros
from metrics_trace import Trace

logger = logging.getLogger(__name__)

Edge = Tuple[str, str]


class TopologyError(SimulationError):
    """Malformed topology declaration"""


class UnknownLink(TopologyError):
    """No link joins the two nodes"""


class DisconnectedGraph(TopologyError):
    """Some ordered node pairs have no path"""

    def __init__(self, pairs: List[Edge]):
        self.pairs = sorted(pairs)
        shown = ", ".join(f"{a}->{b}" for a, b in self.pairs[:10])
        more = "" if len(self.pairs) <= 10 else f" (+{len(self.pairs) - 10} more)"
        super().__init__(f"unreachable pairs: {shown}{more}")


class NodeKind(str, Enum):
    HOST = "host"
    ROUTER = "router"


@dataclass(frozen=True)
class Node:
    id: str
    kind: NodeKind = NodeKind.HOST

    @property
    def is_host(self) -> bool:
        return self.kind == NodeKind.HOST


@dataclass
class DropRule:
    """One-shot scripted drop of the first packet matching the rule on src->dst"""

    src: str
    dst: str
    kind: Optional[str] = None
    name: Optional[str] = None
    protocol: Optional[str] = None
    fired: bool = False

    def matches(self, src: str, dst: str, packet, protocol: str) -> bool:
        if self.fired or (src, dst) != (self.src, self.dst):
            return False
        if self.kind is not None and packet.kind != self.kind:
            return False
        if self.name is not None and packet.match_name != self.name:
            return False
        if self.protocol is not None and protocol != self.protocol:
            return False
        return True


@dataclass
class LossModel:
    """Per-direction random loss plus scripted one-shot drops"""

    probs: Dict[Edge, float] = field(default_factory=dict)
    rules: List[DropRule] = field(default_factory=list)

    @property
    def variant(self) -> str:
        if self.rules:
            return "scripted"
        if any(p > 0.0 for p in self.probs.values()):
            return "random"
        return "none"

    def prob(self, src: str, dst: str) -> float:
        return self.probs.get((src, dst), 0.0)


@dataclass
class Link:
    a: str
    b: str
    delay: int
    loss: LossModel = field(default_factory=LossModel)

    @property
    def key(self) -> Edge:
        return (self.a, self.b) if self.a <= self.b else (self.b, self.a)

    def other(self, node: str) -> str:
        return self.b if node == self.a else self.a


def link_label(src: str, dst: str) -> str:
    return f"{src}->{dst}"


class Topology:
    """Immutable-after-load network graph backed by networkx"""

    def __init__(self):
        self.graph = nx.Graph()
        self._nodes: Dict[str, Node] = {}
        self._links: Dict[Edge, Link] = {}

    def add_node(self, node_id: str, kind: NodeKind = NodeKind.HOST) -> Node:
        """Declare a host or router; ids are unique"""
        if node_id in self._nodes:
            raise TopologyError(f"duplicate node id {node_id!r}")
        node = Node(node_id, NodeKind(kind))
        self._nodes[node_id] = node
        self.graph.add_node(node_id, kind=node.kind)
        return node

    def add_link(self, a: str, b: str, delay_ms: float = 10,
                 loss: Optional[LossModel] = None) -> Link:
        """Join two declared nodes with a bidirectional link of positive delay"""
        for end in (a, b):
            if end not in self._nodes:
                raise TopologyError(f"link endpoint {end!r} is not a declared node")
        if a == b:
            raise TopologyError(f"self-loop on {a!r}")
        delay = ms_to_micros(delay_ms)
        if delay <= 0:
            raise TopologyError(f"link {a}-{b} needs a positive delay")
        link = Link(a, b, delay, loss or LossModel())
        if link.key in self._links:
            raise TopologyError(f"duplicate link {a}-{b}")
        self._links[link.key] = link
        self.graph.add_edge(a, b, delay=delay)
        return link

    @property
    def nodes(self) -> List[Node]:
        return [self._nodes[n] for n in sorted(self._nodes)]

    @property
    def node_ids(self) -> List[str]:
        return sorted(self._nodes)

    @property
    def hosts(self) -> List[str]:
        return [n.id for n in self.nodes if n.is_host]

    @property
    def links(self) -> List[Link]:
        return [self._links[k] for k in sorted(self._links)]

    def node(self, node_id: str) -> Node:
        return self._nodes[node_id]

    def has_node(self, node_id: str) -> bool:
        return node_id in self._nodes

    def link(self, u: str, v: str) -> Link:
        key = (u, v) if u <= v else (v, u)
        try:
            return self._links[key]
        except KeyError:
            raise UnknownLink(f"no link between {u!r} and {v!r}") from None

    def neighbors(self, node_id: str) -> List[str]:
        return sorted(self.graph.neighbors(node_id))

    def delay(self, u: str, v: str) -> int:
        return self.link(u, v).delay


def canonical_topology(delay_ms: float = 10) -> Topology:
    """The six-host comparison topology: E behind R2, A-C behind R4, D and R6 behind R3, X behind R6"""
    topo = Topology()
    for host in ("A", "B", "C", "D", "E", "X"):
        topo.add_node(host, NodeKind.HOST)
    for router in ("R2", "R3", "R4", "R6"):
        topo.add_node(router, NodeKind.ROUTER)
    for a, b in (("E", "R2"), ("R2", "R4"), ("R4", "A"), ("R4", "B"), ("R4", "C"),
                 ("R2", "R3"), ("R3", "D"), ("R3", "R6"), ("R6", "X")):
        topo.add_link(a, b, delay_ms)
    return topo


class RouteTables:
    """Shortest-delay next hops plus cached source-rooted multicast trees"""

    def __init__(self, topology: Topology, next_hop: Dict[Edge, str],
                 distance: Dict[str, Dict[str, int]]):
        self.topology = topology
        self.next_hop = next_hop
        self.distance = distance
        self._trees: Dict[Tuple[FrozenSet[str], str], FrozenSet[Edge]] = {}

    def hop(self, node: str, destination: str) -> str:
        return self.next_hop[(node, destination)]

    def path(self, src: str, dst: str) -> List[str]:
        """Node sequence of the unicast route, both ends included"""
        nodes = [src]
        while nodes[-1] != dst:
            nodes.append(self.next_hop[(nodes[-1], dst)])
        return nodes

    def path_delay(self, src: str, dst: str) -> int:
        return self.distance[src][dst]

    def multicast_tree(self, members: Iterable[str], root: str) -> FrozenSet[Edge]:
        """Tree rooted at root reaching members, built once per (members, root)"""
        key =(frozenset(members), root)
        tree = self._trees.get(key)
        if tree is None:
            tree = _reverse_path_tree(self, key[0], root)
            self._trees[key] = tree
        return tree


def shortest_paths(topology: Topology) -> RouteTables:
    """Next hops minimizing total delay; ties go to the smallest neighbor id"""
    graph = topology.graph
    if graph.number_of_nodes() == 0:
        raise TopologyError("empty topology")
    if not nx.is_connected(graph):
        component_of = {}
        for index, component in enumerate(nx.connected_components(graph)):
            for node in component:
                component_of[node] = index
        pairs = [(u, v) for u in topology.node_ids for v in topology.node_ids
                 if u != v and component_of[u] != component_of[v]]
        raise DisconnectedGraph(pairs)

    distance = {src: dict(lengths) for src, lengths in
                nx.all_pairs_dijkstra_path_length(graph, weight="delay")}
    next_hop: Dict[Edge, str] = {}
    for u in topology.node_ids:
        neighbors = topology.neighbors(u)
        for v in topology.node_ids:
            if u == v:
                continue
            best = distance[u][v]
            for w in neighbors:
                if graph[u][w]["delay"] + distance[w][v] == best:
                    next_hop[(u, v)] = w
                    break
    return RouteTables(topology, next_hop, distance)


def _reverse_path_tree(routes, members, root):
    topology = routes.topology
    if not topology.has_node(root):
        raise TopologyError(f"unknown tree root {root!r}")
    edges = set()
    for member in sorted(members):
        if not topology.has_node(member):
            raise TopologyError(f"unknown group member {member!r}")
        node = member
        # parent pointers follow the unicast route back to the root
        while node != root:
            parent = routes.next_hop[(node, root)]
            edges.add((parent, node))
            node = parent
    return frozenset(edges)


def multicast_tree(topology: Topology, members: Iterable[str], root: str,
                   routes: Optional[RouteTables] = None) -> FrozenSet[Edge]:
    """Directed edge set of the shortest-path tree from root to every member"""
    routes = routes or shortest_paths(topology)
    return routes.multicast_tree(members, root)


def tree_children(edges: Iterable[Edge]) -> Dict[str, List[str]]:
    """Sorted child lists keyed by parent"""
    children: Dict[str, List[str]] = {}
    for parent, child in edges:
        children.setdefault(parent, []).append(child)
    for kids in children.values():
        kids.sort()
    return children


class Network:
    """Carries packets over links: loss decisions, delay, and trace records"""

    def __init__(self, engine: Engine, topology: Topology, trace: Trace):
        self.engine = engine
        self.topology = topology
        self.trace = trace
        self._receivers: Dict[str, Callable[[str, object], None]] = {}
        self._in_flight: Counter = Counter()

    def attach(self, node: str, receiver: Callable[[str, object], None]):
        """Register the callback invoked as receiver(from_node, packet) on arrival"""
        self._receivers[node] = receiver

    def transmit(self, src: str, dst: str, packet, protocol: str) -> bool:
        """Put packet on the src->dst link, recording send and either drop or a delayed arrival

        Returns True if an arrival was scheduled.
        """
        link = self.topology.link(src, dst)
        now = self.engine.now
        label = link_label(src, dst)
        extra = packet.trace_extra() if hasattr(packet, "trace_extra") else {}
        self.trace.record(now, src, "send", protocol, packet.kind, packet.match_name, label, extra)

        reason = self._loss_reason(link, src, dst, packet, protocol)
        if reason is not None:
            self.trace.record(now, src, "drop", protocol, packet.kind, packet.match_name, label,
                              dict(extra, reason=reason))
            return False

        self._in_flight[label] += 1
        self.engine.schedule(now + link.delay, dst, packet,
                             lambda pkt: self._arrive(src, dst, pkt, protocol, extra))
        return True

    def _loss_reason(self, link, src, dst, packet, protocol):
        # scripted rules first so a one-shot drop never consumes a random draw
        for rule in link.loss.rules:
            if rule.matches(src, dst, packet, protocol):
                rule.fired = True
                logger.debug("scripted drop of %s %s on %s->%s", packet.kind, packet.match_name, src, dst)
                return "scripted"
        prob = link.loss.prob(src, dst)
        if self.engine.bernoulli(f"link/{link.a}-{link.b}", prob):
            return "random"
        return None

    def _arrive(self, src, dst, packet, protocol, extra):
        label = link_label(src, dst)
        self._in_flight[label] -= 1
        self.trace.record(self.engine.now, dst, "recv", protocol, packet.kind, packet.match_name,
                          label, extra)
        receiver = self._receivers.get(dst)
        if receiver is not None:
            receiver(src, packet)

    def in_flight(self) -> Dict[str, int]:
        """Packets still on the wire per directed link"""
        return {label: count for label, count in sorted(self._in_flight.items()) if count}
