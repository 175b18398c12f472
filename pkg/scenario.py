#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Scenario documents: JSON schema, semantic checks, typed configuration,
canonical serialization and the shipped presets.
"""

import copy
import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

from jsonschema import Draft202012Validator
from jsonschema.exceptions import best_match

from group_app import AppConfig, ScheduleEntry
from ndn_core import InvalidName, Name
from ndn_forwarder import NdnConfig
from sim_engine import SimulationError
from srm import SrmConfig
from svs import SvsConfig
from topology import (DisconnectedGraph, DropRule, LossModel, NodeKind, Topology, TopologyError,
                      canonical_topology, shortest_paths)

logger = logging.getLogger(__name__)

PROTOCOLS = ("srm", "ndn")
TOPOLOGY_PRESETS = ("fig1", "fig3")
SAMPLE_STATE = {"A": 123, "B": 223, "C": 15, "D": 941, "E": 11, "X": 431}
DEFAULT_TRUST_RULES = [["/\\1/seq=*", "/\\1/KEY/*"], ["/*/KEY/*", "/mgr/KEY/*"]]
DEFAULT_ANCHORS = ["/mgr"]

_POSITIVE = {"type": "number", "exclusiveMinimum": 0}
_PROB = {"type": "number", "minimum": 0, "maximum": 1}
_NODE_ID = {"type": "string", "pattern": "^[A-Za-z0-9_.-]+$"}

SCENARIO_SCHEMA: Dict[str, Any] = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "recovery-sim scenario",
    "type": "object",
    "required": ["topology", "groups"],
    "additionalProperties": False,
    "properties": {
        "name": {"type": "string"},
        "description": {"type": "string"},
        "seed": {"type": "integer", "minimum": 0},
        "end_ms": _POSITIVE,
        "protocols": {
            "type": "array", "minItems": 1, "uniqueItems": True,
            "items": {"enum": list(PROTOCOLS)},
        },
        "topology": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "preset": {"enum": list(TOPOLOGY_PRESETS)},
                "delay_ms": _POSITIVE,
                "nodes": {
                    "type": "array", "minItems": 1,
                    "items": {
                        "type": "object", "required": ["id"], "additionalProperties": False,
                        "properties": {"id": _NODE_ID, "kind": {"enum": ["host", "router"]}},
                    },
                },
                "links": {
                    "type": "array",
                    "items": {
                        "type": "object", "required": ["a", "b"], "additionalProperties": False,
                        "properties": {
                            "a": _NODE_ID, "b": _NODE_ID, "delay_ms": _POSITIVE,
                            "loss": {
                                "type": "object", "additionalProperties": False,
                                "properties": {"forward": _PROB, "reverse": _PROB},
                            },
                        },
                    },
                },
            },
        },
        "groups": {
            "type": "array", "minItems": 1, "maxItems": 1,
            "items": {
                "type": "object", "required": ["members"], "additionalProperties": False,
                "properties": {
                    "id": {"type": "string"},
                    "members": {"type": "array", "minItems": 1, "uniqueItems": True, "items": _NODE_ID},
                },
            },
        },
        "srm": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "c1": _POSITIVE, "c2": {"type": "number", "minimum": 0},
                "d1": _POSITIVE, "d2": {"type": "number", "minimum": 0},
                "session_period_ms": _POSITIVE,
                "ideal_mode": {"type": "boolean"},
                "rq_scope_hops": {"type": ["integer", "null"], "minimum": 1},
                "default_dist_ms": _POSITIVE,
                "max_backoff": {"type": "integer", "minimum": 0},
            },
        },
        "ndn": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "interest_lifetime_ms": _POSITIVE,
                "retx_suppression_ms": {"type": "number", "minimum": 0},
                "cs_capacity": {"type": ["integer", "null"], "minimum": 0},
                "consumer_retx_ms": _POSITIVE,
                "max_retx_interval_ms": {"type": ["number", "null"], "exclusiveMinimum": 0},
            },
        },
        "svs": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "sync_prefix": {"type": "string", "pattern": "^/"},
                "refresh_period_ms": _POSITIVE,
                "suppression_window_ms": {"type": "number", "minimum": 0},
            },
        },
        "app": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "schedule": {
                    "type": "array",
                    "items": {
                        "type": "object", "required": ["member", "count"], "additionalProperties": False,
                        "properties": {
                            "member": _NODE_ID,
                            "count": {"type": "integer", "minimum": 0},
                            "start_ms": {"type": "number", "minimum": 0},
                            "interval_ms": _POSITIVE,
                            "payload_size": {"type": "integer", "minimum": 0},
                        },
                    },
                },
                "max_retx": {"type": "integer", "minimum": 0},
                "consumer_retx_ms": {"type": ["number", "null"], "exclusiveMinimum": 0},
                "initial_seqs": {
                    "type": "object",
                    "additionalProperties": {"type": "integer", "minimum": 0},
                },
            },
        },
        "losses": {
            "type": "array",
            "items": {
                "type": "object", "required": ["from", "to"], "additionalProperties": False,
                "properties": {
                    "from": _NODE_ID, "to": _NODE_ID,
                    "kind": {"enum": ["data", "session", "rq", "rr", "interest", "sync"]},
                    "name": {"type": "string", "pattern": "^/"},
                    "protocol": {"enum": ["srm", "ndn", "svs"]},
                },
            },
        },
        "trust": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "anchors": {"type": "array", "items": {"type": "string", "pattern": "^/"}},
                "rules": {
                    "type": "array",
                    "items": {
                        "type": "array", "minItems": 2, "maxItems": 2,
                        "items": {"type": "string", "pattern": "^/"},
                    },
                },
            },
        },
    },
}

_VALIDATOR = Draft202012Validator(SCENARIO_SCHEMA)


class ScenarioError(SimulationError):
    """Scenario document is invalid; key is the dotted path of the offending entry"""

    def __init__(self, key: str, message: str):
        self.key = key
        super().__init__(f"{key}: {message}" if key else message)


class UnknownParam(ScenarioError):
    """A sweep addresses a key the scenario does not have"""


def _dotted(parts) -> str:
    return ".".join(str(p) for p in parts)


def _schema_error_key(error) -> str:
    path = list(error.absolute_path)
    if error.validator == "required" and isinstance(error.instance, dict):
        missing = [k for k in error.validator_value if k not in error.instance]
        path += missing[:1]
    elif error.validator == "additionalProperties" and isinstance(error.instance, dict):
        allowed = set(error.schema.get("properties", {}))
        extra = sorted(set(error.instance) - allowed)
        path += extra[:1]
    return _dotted(path) or "<document>"


def check_schema(doc: Any):
    """Raise ScenarioError for the most relevant schema violation, if any"""
    error = best_match(_VALIDATOR.iter_errors(doc))
    if error is not None:
        raise ScenarioError(_schema_error_key(error), error.message)


@dataclass(frozen=True)
class LinkSpec:
    a: str
    b: str
    delay_ms: float = 10
    loss_forward: float = 0.0
    loss_reverse: float = 0.0


@dataclass(frozen=True)
class TopologySpec:
    preset: Optional[str] = None
    delay_ms: float = 10
    nodes: Tuple[Tuple[str, str], ...] = ()
    links: Tuple[LinkSpec, ...] = ()

    def to_dict(self) -> Dict:
        if self.preset is not None:
            return {"preset": self.preset, "delay_ms": self.delay_ms}
        return {
            "nodes": [{"id": n, "kind": k} for n, k in self.nodes],
            "links": [{"a": l.a, "b": l.b, "delay_ms": l.delay_ms,
                       "loss": {"forward": l.loss_forward, "reverse": l.loss_reverse}}
                      for l in self.links],
        }


@dataclass(frozen=True)
class LossScript:
    src: str
    dst: str
    kind: Optional[str] = None
    name: Optional[str] = None
    protocol: Optional[str] = None

    def to_dict(self) -> Dict:
        out = {"from": self.src, "to": self.dst}
        for key in ("kind", "name", "protocol"):
            if getattr(self, key) is not None:
                out[key] = getattr(self, key)
        return out


@dataclass(frozen=True)
class TrustConfig:
    anchors: Tuple[str, ...] = tuple(DEFAULT_ANCHORS)
    rules: Tuple[Tuple[str, str], ...] = tuple(tuple(r) for r in DEFAULT_TRUST_RULES)


@dataclass(frozen=True)
class Scenario:
    topology: TopologySpec
    members: Tuple[str, ...]
    name: str = "custom"
    description: str = ""
    group_id: str = "group"
    protocols: Tuple[str, ...] = ("srm",)
    srm: SrmConfig = field(default_factory=SrmConfig)
    ndn: NdnConfig = field(default_factory=NdnConfig)
    svs: SvsConfig = field(default_factory=SvsConfig)
    app: AppConfig = field(default_factory=AppConfig)
    losses: Tuple[LossScript, ...] = ()
    trust: TrustConfig = field(default_factory=TrustConfig)
    seed: int = 0
    end_ms: float = 10000

    def to_dict(self) -> Dict:
        """Fully defaulted canonical document"""
        app = asdict(self.app)
        app["schedule"] = [asdict(entry) for entry in self.app.schedule]
        app["initial_seqs"] = dict(sorted(self.app.initial_seqs.items()))
        return {
            "name": self.name,
            "description": self.description,
            "seed": self.seed,
            "end_ms": self.end_ms,
            "protocols": list(self.protocols),
            "topology": self.topology.to_dict(),
            "groups": [{"id": self.group_id, "members": list(self.members)}],
            "srm": asdict(self.srm),
            "ndn": asdict(self.ndn),
            "svs": asdict(self.svs),
            "app": app,
            "losses": [loss.to_dict() for loss in self.losses],
            "trust": {"anchors": list(self.trust.anchors), "rules": [list(r) for r in self.trust.rules]},
        }

    def with_overrides(self, seed: Optional[int] = None, end_ms: Optional[float] = None,
                       protocols: Optional[List[str]] = None) -> "Scenario":
        changes: Dict[str, Any] = {}
        if seed is not None:
            changes["seed"] = int(seed)
        if end_ms is not None:
            if end_ms <= 0:
                raise ScenarioError("end_ms", "must be positive")
            changes["end_ms"] = end_ms
        if protocols is not None:
            unknown = [p for p in protocols if p not in PROTOCOLS]
            if unknown:
                raise ScenarioError("protocols", f"unknown protocol {unknown[0]!r}")
            changes["protocols"] = tuple(protocols)
        return replace(self, **changes)

    def build_topology(self) -> Topology:
        """Fresh topology with this scenario's loss models attached"""
        spec = self.topology
        if spec.preset is not None:
            topo = canonical_topology(spec.delay_ms)
        else:
            topo = Topology()
            for node_id, kind in spec.nodes:
                topo.add_node(node_id, NodeKind(kind))
            for link in spec.links:
                probs = {(link.a, link.b): link.loss_forward, (link.b, link.a): link.loss_reverse}
                topo.add_link(link.a, link.b, link.delay_ms, LossModel(probs))
        for loss in self.losses:
            topo.link(loss.src, loss.dst).loss.rules.append(
                DropRule(loss.src, loss.dst, loss.kind, loss.name, loss.protocol))
        return topo


def _check_semantics(scenario: Scenario):
    spec = scenario.topology
    if spec.preset is None:
        if not spec.nodes:
            raise ScenarioError("topology", "needs either a preset or nodes and links")
        seen = set()
        for i, (node_id, _) in enumerate(spec.nodes):
            if node_id in seen:
                raise ScenarioError(f"topology.nodes.{i}.id", f"duplicate node id {node_id!r}")
            seen.add(node_id)
        pairs = set()
        for i, link in enumerate(spec.links):
            for end in ("a", "b"):
                if getattr(link, end) not in seen:
                    raise ScenarioError(f"topology.links.{i}.{end}",
                                        f"unknown node {getattr(link, end)!r}")
            if link.a == link.b:
                raise ScenarioError(f"topology.links.{i}", "self-loop")
            pair = frozenset((link.a, link.b))
            if pair in pairs:
                raise ScenarioError(f"topology.links.{i}", f"duplicate link {link.a}-{link.b}")
            pairs.add(pair)
    try:
        topo = scenario.build_topology()
        shortest_paths(topo)
    except DisconnectedGraph as e:
        raise ScenarioError("topology", str(e)) from None
    except TopologyError as e:
        raise ScenarioError("losses", str(e)) from None

    for i, member in enumerate(scenario.members):
        if not topo.has_node(member):
            raise ScenarioError(f"groups.0.members.{i}", f"unknown node {member!r}")
        if not topo.node(member).is_host:
            raise ScenarioError(f"groups.0.members.{i}", f"{member!r} is a router, not a host")
    members = set(scenario.members)
    for i, entry in enumerate(scenario.app.schedule):
        if entry.member not in members:
            raise ScenarioError(f"app.schedule.{i}.member", f"{entry.member!r} is not a group member")
    for producer in scenario.app.initial_seqs:
        if producer not in members:
            raise ScenarioError(f"app.initial_seqs.{producer}", f"{producer!r} is not a group member")
    try:
        Name.parse(scenario.svs.sync_prefix)
    except InvalidName as e:
        raise ScenarioError("svs.sync_prefix", str(e)) from None
    for i, anchor in enumerate(scenario.trust.anchors):
        try:
            Name.parse(anchor)
        except InvalidName as e:
            raise ScenarioError(f"trust.anchors.{i}", str(e)) from None
    if scenario.srm.c1 + scenario.srm.c2 <= 0:
        raise ScenarioError("srm.c2", "RQ timer window must be positive")


def scenario_from_dict(doc: Dict) -> Scenario:
    """Validate a scenario document and build the typed Scenario"""
    check_schema(doc)
    topo = doc["topology"]
    if "preset" in topo:
        if "nodes" in topo or "links" in topo:
            raise ScenarioError("topology.preset", "a preset cannot be combined with nodes or links")
        topology = TopologySpec(preset=topo["preset"], delay_ms=topo.get("delay_ms", 10))
    else:
        default_delay = topo.get("delay_ms", 10)
        topology = TopologySpec(
            delay_ms=default_delay,
            nodes=tuple((n["id"], n.get("kind", "host")) for n in topo.get("nodes", [])),
            links=tuple(LinkSpec(l["a"], l["b"], l.get("delay_ms", default_delay),
                                 l.get("loss", {}).get("forward", 0.0),
                                 l.get("loss", {}).get("reverse", 0.0))
                        for l in topo.get("links", [])),
        )
    group = doc["groups"][0]
    app_doc = dict(doc.get("app", {}))
    schedule = tuple(ScheduleEntry(**entry) for entry in app_doc.pop("schedule", []))
    app = AppConfig(schedule=schedule, initial_seqs=dict(app_doc.pop("initial_seqs", {})), **app_doc)
    trust_doc = doc.get("trust", {})
    scenario = Scenario(
        topology=topology,
        members=tuple(group["members"]),
        name=doc.get("name", "custom"),
        description=doc.get("description", ""),
        group_id=group.get("id", "group"),
        protocols=tuple(doc.get("protocols", ["srm"])),
        srm=SrmConfig(**doc.get("srm", {})),
        ndn=NdnConfig(**doc.get("ndn", {})),
        svs=SvsConfig(**doc.get("svs", {})),
        app=app,
        losses=tuple(LossScript(l["from"], l["to"], l.get("kind"), l.get("name"), l.get("protocol"))
                     for l in doc.get("losses", [])),
        trust=TrustConfig(tuple(trust_doc.get("anchors", DEFAULT_ANCHORS)),
                          tuple(tuple(r) for r in trust_doc.get("rules", DEFAULT_TRUST_RULES))),
        seed=doc.get("seed", 0),
        end_ms=doc.get("end_ms", 10000),
    )
    _check_semantics(scenario)
    return scenario


def load_scenario(source: Union[str, Path, Dict]) -> Scenario:
    """Load a preset by name, a JSON file by path, or an already-parsed document"""
    if isinstance(source, dict):
        return scenario_from_dict(source)
    if str(source) in PRESETS:
        return scenario_from_dict(copy.deepcopy(PRESETS[str(source)]))
    path = Path(source)
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as e:
        raise ScenarioError("<document>", f"cannot read {path}: {e}") from None
    except json.JSONDecodeError as e:
        raise ScenarioError("<document>", f"{path} is not valid JSON: {e}") from None
    return scenario_from_dict(doc)


def parse_param_value(text: str) -> Any:
    """Sweep values: numbers, booleans, or unlimited/none for null"""
    lowered = text.strip().lower()
    if lowered in ("unlimited", "none", "null"):
        return None
    if lowered in ("true", "false"):
        return lowered == "true"
    try:
        return int(lowered)
    except ValueError:
        pass
    try:
        return float(lowered)
    except ValueError:
        raise UnknownParam("--values", f"cannot interpret {text!r} as a parameter value") from None


def set_param(scenario: Scenario, path: str, value: Any) -> Scenario:
    """Copy of scenario with the dotted key(s) in path set to value"""
    doc = scenario.to_dict()
    for key in [p.strip() for p in path.split(",") if p.strip()]:
        parts = key.split(".")
        node = doc
        for part in parts[:-1]:
            if not isinstance(node, dict) or part not in node:
                raise UnknownParam(key, "no such scenario key")
            node = node[part]
        leaf = parts[-1]
        if not isinstance(node, dict) or leaf not in node or isinstance(node[leaf], (dict, list)):
            raise UnknownParam(key, "no such scalar scenario key")
        node[leaf] = value
    return scenario_from_dict(doc)


def _six_host_group() -> Dict:
    return {"id": "wb", "members": ["A", "B", "C", "D", "E", "X"]}


PRESETS: Dict[str, Dict] = {
    "fig1": {
        "name": "fig1",
        "description": "Single loss of (E:12) on R2->R3 isolating D and X; ideal SRM suppression",
        "seed": 42,
        "end_ms": 10000,
        "protocols": ["srm", "ndn"],
        "topology": {"preset": "fig1"},
        "groups": [_six_host_group()],
        "srm": {"ideal_mode": True},
        "app": {"schedule": [{"member": "E", "count": 1, "start_ms": 3000}],
                "initial_seqs": dict(SAMPLE_STATE)},
        "losses": [{"from": "R2", "to": "R3", "kind": "data", "name": "/E/seq=12"}],
    },
    "fig1.srm": {
        "name": "fig1.srm",
        "description": "Ideal SRM recovery: one RQ from D, one RR from the nearest holder",
        "seed": 42,
        "end_ms": 10000,
        "protocols": ["srm"],
        "topology": {"preset": "fig1"},
        "groups": [_six_host_group()],
        "srm": {"ideal_mode": True},
        "app": {"schedule": [{"member": "E", "count": 1, "start_ms": 3000}],
                "initial_seqs": dict(SAMPLE_STATE)},
        "losses": [{"from": "R2", "to": "R3", "kind": "data", "name": "/E/seq=12"}],
    },
    "fig3": {
        "name": "fig3",
        "description": "E publishes (E:12); the Data is lost on R2->R3; SRM and NDN recovery compared",
        "seed": 42,
        "end_ms": 10000,
        "protocols": ["srm", "ndn"],
        "topology": {"preset": "fig3"},
        "groups": [_six_host_group()],
        "app": {"schedule": [{"member": "E", "count": 1, "start_ms": 1000}],
                "initial_seqs": dict(SAMPLE_STATE)},
        "losses": [{"from": "R2", "to": "R3", "kind": "data", "name": "/E/seq=12"}],
    },
    "fig3.ndn": {
        "name": "fig3.ndn",
        "description": "Loss-free NDN fetch of /E/seq=12: Interest aggregation at R4",
        "seed": 42,
        "end_ms": 10000,
        "protocols": ["ndn"],
        "topology": {"preset": "fig3"},
        "groups": [_six_host_group()],
        "app": {"schedule": [{"member": "E", "count": 1, "start_ms": 1000}],
                "initial_seqs": dict(SAMPLE_STATE)},
    },
    "svs-quiet": {
        "name": "svs-quiet",
        "description": "Six-member SVS group without publications for ten refresh periods",
        "seed": 1,
        "end_ms": 300000,
        "protocols": ["ndn"],
        "topology": {"preset": "fig3"},
        "groups": [_six_host_group()],
        "svs": {"refresh_period_ms": 30000},
        "app": {"initial_seqs": dict(SAMPLE_STATE)},
    },
    "timer-window.srm": {
        "name": "timer-window.srm",
        "description": "Three equidistant holders answer one loser; sweep srm.d1,srm.d2",
        "seed": 1,
        "end_ms": 8000,
        "protocols": ["srm"],
        "topology": {
            "nodes": [
                {"id": "P", "kind": "host"}, {"id": "H1", "kind": "host"},
                {"id": "H2", "kind": "host"}, {"id": "Q", "kind": "host"},
                {"id": "R", "kind": "router"}, {"id": "R1", "kind": "router"},
                {"id": "R2", "kind": "router"}, {"id": "R3", "kind": "router"},
            ],
            "links": [
                {"a": "Q", "b": "R", "delay_ms": 10},
                {"a": "R", "b": "R1", "delay_ms": 10},
                {"a": "R", "b": "R2", "delay_ms": 10},
                {"a": "R", "b": "R3", "delay_ms": 10},
                {"a": "R1", "b": "P", "delay_ms": 10},
                {"a": "R2", "b": "H1", "delay_ms": 10},
                {"a": "R3", "b": "H2", "delay_ms": 10},
            ],
        },
        "groups": [{"id": "tw", "members": ["H1", "H2", "P", "Q"]}],
        "srm": {"c1": 10, "c2": 10, "d1": 1, "d2": 1},
        "app": {"schedule": [{"member": "P", "count": 1, "start_ms": 4000}]},
        "losses": [{"from": "R", "to": "Q", "kind": "data", "name": "/P/seq=1"}],
    },
    "lossy-x": {
        "name": "lossy-x",
        "description": "X sits behind a lossy access link to R6 while E streams items",
        "seed": 7,
        "end_ms": 60000,
        "protocols": ["srm", "ndn"],
        "topology": {
            "nodes": [
                {"id": "A", "kind": "host"}, {"id": "B", "kind": "host"},
                {"id": "C", "kind": "host"}, {"id": "D", "kind": "host"},
                {"id": "E", "kind": "host"}, {"id": "X", "kind": "host"},
                {"id": "R2", "kind": "router"}, {"id": "R3", "kind": "router"},
                {"id": "R4", "kind": "router"}, {"id": "R6", "kind": "router"},
            ],
            "links": [
                {"a": "E", "b": "R2", "delay_ms": 10},
                {"a": "R2", "b": "R4", "delay_ms": 10},
                {"a": "R4", "b": "A", "delay_ms": 10},
                {"a": "R4", "b": "B", "delay_ms": 10},
                {"a": "R4", "b": "C", "delay_ms": 10},
                {"a": "R2", "b": "R3", "delay_ms": 10},
                {"a": "R3", "b": "D", "delay_ms": 10},
                {"a": "R3", "b": "R6", "delay_ms": 10},
                {"a": "R6", "b": "X", "delay_ms": 10, "loss": {"forward": 0.2, "reverse": 0.2}},
            ],
        },
        "groups": [_six_host_group()],
        "svs": {"refresh_period_ms": 5000},
        "app": {"schedule": [{"member": "E", "count": 20, "start_ms": 2000, "interval_ms": 500}],
                "max_retx": 30, "initial_seqs": dict(SAMPLE_STATE)},
    },
}
