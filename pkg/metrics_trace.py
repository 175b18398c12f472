#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Canonical event trace, run summaries derived from it, and bit-stable
JSONL / JSON / CSV emission.
"""

import json
import logging
import re
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Set, Tuple

import pandas as pd

from sim_engine import SimulationError

logger = logging.getLogger(__name__)

COUNTERS = ("data_rx", "rq_rx", "rr_rx", "interest_rx", "sync_rx", "session_rx",
            "cache_hits", "aggregations", "drops", "validation_failures")

RX_COUNTER = {
    "data": "data_rx",
    "rq": "rq_rx",
    "rr": "rr_rx",
    "interest": "interest_rx",
    "sync": "sync_rx",
    "session": "session_rx",
}

EVENT_COUNTER = {
    "cache-hit": "cache_hits",
    "aggregate": "aggregations",
    "drop": "drops",
    "validate-fail": "validation_failures",
}

_ITEM_NAME = re.compile(r"^/([^/]+)/seq=(\d+)$")


class IncompleteTrace(SimulationError):
    """The trace lacks its start or end marker"""


class EmitError(SimulationError):
    """Output could not be written"""


@dataclass(frozen=True)
class TraceRecord:
    ts: int
    node: str
    event: str
    protocol: str
    kind: Optional[str] = None
    name: Optional[str] = None
    link: Optional[str] = None
    extra: Dict = field(default_factory=dict)

    def to_dict(self) -> Dict:
        return {
            "ts": self.ts,
            "node": self.node,
            "event": self.event,
            "protocol": self.protocol,
            "kind": self.kind,
            "name": self.name,
            "link": self.link,
            "extra": self.extra,
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "TraceRecord":
        return cls(data["ts"], data["node"], data["event"], data["protocol"],
                   data.get("kind"), data.get("name"), data.get("link"), data.get("extra") or {})


class Trace:
    """Append-only record list, ordered by (ts, emission order)"""

    def __init__(self):
        self.records: List[TraceRecord] = []

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def record(self, ts: int, node: str, event: str, protocol: str, kind: Optional[str] = None,
               name: Optional[str] = None, link: Optional[str] = None,
               extra: Optional[Dict] = None) -> TraceRecord:
        rec = TraceRecord(ts, node, event, protocol, kind, name, link, dict(extra or {}))
        self.records.append(rec)
        return rec

    def select(self, event: Optional[str] = None, node: Optional[str] = None,
               kind: Optional[str] = None, name: Optional[str] = None,
               link: Optional[str] = None, protocol: Optional[str] = None) -> List[TraceRecord]:
        """Records matching every given field"""
        wanted = {"event": event, "node": node, "kind": kind, "name": name,
                  "link": link, "protocol": protocol}
        wanted = {k: v for k, v in wanted.items() if v is not None}
        return [r for r in self.records if all(getattr(r, k) == v for k, v in wanted.items())]

    def count(self, **criteria) -> int:
        return len(self.select(**criteria))


def parse_item_name(name: Optional[str]) -> Optional[Tuple[str, int]]:
    if not name:
        return None
    match = _ITEM_NAME.match(name)
    if not match:
        return None
    return match.group(1), int(match.group(2))


@dataclass
class RunSummary:
    protocol: str
    seed: int
    nodes: Dict[str, Dict[str, int]]
    latencies: Dict[str, List[int]]
    extra_recovery_packets: Dict[str, int]
    completion_time: int
    rq_sent: int = 0
    rr_sent: int = 0
    duplicate_rq: int = 0
    duplicate_rr: int = 0
    mean_recovery_latency_ms: float = 0.0

    def to_dict(self) -> Dict:
        return {
            "protocol": self.protocol,
            "seed": self.seed,
            "nodes": {n: dict(c) for n, c in sorted(self.nodes.items())},
            "latencies": {m: list(v) for m, v in sorted(self.latencies.items())},
            "extra_recovery_packets": dict(sorted(self.extra_recovery_packets.items())),
            "completion_time": self.completion_time,
            "rq_sent": self.rq_sent,
            "rr_sent": self.rr_sent,
            "duplicate_rq": self.duplicate_rq,
            "duplicate_rr": self.duplicate_rr,
            "mean_recovery_latency_ms": self.mean_recovery_latency_ms,
        }

    def counter(self, node: str, name: str) -> int:
        return self.nodes.get(node, {}).get(name, 0)


class _Holdings:
    """Which items each member holds, replayed from the trace"""

    def __init__(self, members: Iterable[str], initial: Dict[str, int]):
        self.initial = {p: int(s) for p, s in initial.items()}
        self.got: Dict[str, Set[str]] = {m: set() for m in members}

    def add(self, member: str, name: str):
        self.got.setdefault(member, set()).add(name)

    def holds(self, member: str, name: Optional[str]) -> bool:
        item = parse_item_name(name)
        if item is None:
            return False
        producer, seq = item
        if seq <= self.initial.get(producer, 0):
            return True
        return name in self.got.get(member, ())


def _is_recovery_rx(binding: str, rec: TraceRecord, already_held: bool) -> bool:
    if not already_held:
        return False
    if binding == "srm":
        return rec.kind in ("rq", "rr")
    if rec.kind == "interest":
        return rec.extra.get("retx", 0) > 0
    return rec.kind == "data"


def _is_recovery_origin(binding: str, rec: TraceRecord, already_held: bool) -> bool:
    if not already_held:
        return False
    if binding == "srm":
        return rec.kind in ("rq", "rr")
    return rec.kind == "data" and rec.extra.get("retx", 0) > 0


def _counters(nodes: Dict[str, Dict[str, int]], node: str) -> Dict[str, int]:
    return nodes.setdefault(node, {c: 0 for c in COUNTERS})


def summarize(trace: Trace) -> RunSummary:
    """Derive per-node counters and recovery metrics from a finished run"""
    starts = [r for r in trace.records if r.event == "start"]
    ends = [r for r in trace.records if r.event == "end"]
    if not starts or not ends:
        raise IncompleteTrace("trace needs both a start and an end record")
    info = starts[0].extra
    binding = info.get("protocol", "srm")
    members = list(info.get("members", []))
    member_set = set(members)
    nodes = {n: {c: 0 for c in COUNTERS} for n in info.get("nodes", [])}
    holdings = _Holdings(members, info.get("initial", {}))
    latencies: Dict[str, List[int]] = {m: [] for m in members}
    extra_recovery = {m: 0 for m in members}
    originations: Dict[str, Counter] = {"rq": Counter(), "rr": Counter()}
    completion = 0

    for rec in trace.records:
        if rec.event == "recv":
            counter = RX_COUNTER.get(rec.kind)
            if counter:
                _counters(nodes, rec.node)[counter] += 1
            if rec.node in member_set and _is_recovery_rx(
                    binding, rec, holdings.holds(rec.node, rec.name)):
                extra_recovery[rec.node] += 1
        elif rec.event in EVENT_COUNTER:
            _counters(nodes, rec.node)[EVENT_COUNTER[rec.event]] += 1
        elif rec.event == "originate":
            if rec.kind in originations:
                originations[rec.kind][rec.name] += 1
            if rec.node in member_set and _is_recovery_origin(
                    binding, rec, holdings.holds(rec.node, rec.name)):
                extra_recovery[rec.node] += 1
        elif rec.event == "produce":
            holdings.add(rec.node, rec.name)
            completion = max(completion, rec.ts)
        elif rec.event == "deliver":
            holdings.add(rec.node, rec.name)
            completion = max(completion, rec.ts)
            if rec.extra.get("recovered"):
                latencies.setdefault(rec.node, []).append(int(rec.extra.get("latency_us", 0)))

    all_latencies = [v for values in latencies.values() for v in values]
    mean_ms = round(sum(all_latencies) / len(all_latencies) / 1000.0, 6) if all_latencies else 0.0
    return RunSummary(
        protocol=binding,
        seed=int(info.get("seed", 0)),
        nodes=nodes,
        latencies=latencies,
        extra_recovery_packets=extra_recovery,
        completion_time=completion,
        rq_sent=sum(originations["rq"].values()),
        rr_sent=sum(originations["rr"].values()),
        duplicate_rq=sum(max(0, n - 1) for n in originations["rq"].values()),
        duplicate_rr=sum(max(0, n - 1) for n in originations["rr"].values()),
        mean_recovery_latency_ms=mean_ms,
    )


def check_conservation(trace: Trace) -> List[str]:
    """Links where sends != recvs + drops + packets still in flight at the end"""
    sends, recvs, drops = Counter(), Counter(), Counter()
    in_flight: Dict[str, int] = {}
    for rec in trace.records:
        if rec.event == "end":
            in_flight = rec.extra.get("in_flight", {})
        if rec.link is None:
            continue
        if rec.event == "send":
            sends[rec.link] += 1
        elif rec.event == "recv":
            recvs[rec.link] += 1
        elif rec.event == "drop":
            drops[rec.link] += 1
    broken = []
    for link in sorted(set(sends) | set(recvs) | set(drops)):
        if sends[link] != recvs[link] + drops[link] + in_flight.get(link, 0):
            broken.append(link)
    return broken


def _dump_line(data: Dict) -> str:
    return json.dumps(data, sort_keys=True, separators=(",", ":"))


def _write_text(path, text: str):
    try:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    except OSError as e:
        raise EmitError(f"cannot write {path}: {e}") from e


def summary_frame(summary: RunSummary) -> pd.DataFrame:
    rows = []
    for node in sorted(summary.nodes):
        row = {"node": node}
        row.update({c: summary.nodes[node].get(c, 0) for c in COUNTERS})
        row["extra_recovery_packets"] = summary.extra_recovery_packets.get(node, 0)
        rows.append(row)
    columns = ["node", *COUNTERS, "extra_recovery_packets"]
    return pd.DataFrame(rows, columns=columns)


def frame_to_csv(frame: pd.DataFrame) -> str:
    return frame.to_csv(index=False, float_format="%.6f", lineterminator="\n")


def emit(obj, fmt: str, path):
    """Write a trace (jsonl), a summary (json|csv) or sweep rows (csv)"""
    if isinstance(obj, Trace):
        if fmt != "jsonl":
            raise EmitError(f"traces are written as jsonl, not {fmt}")
        text = "".join(_dump_line(rec.to_dict()) + "\n" for rec in obj.records)
    elif isinstance(obj, RunSummary):
        if fmt == "json":
            text = json.dumps(obj.to_dict(), sort_keys=True, indent=2) + "\n"
        elif fmt == "csv":
            text = frame_to_csv(summary_frame(obj))
        else:
            raise EmitError(f"summaries are written as json or csv, not {fmt}")
    elif isinstance(obj, pd.DataFrame):
        if fmt != "csv":
            raise EmitError(f"tables are written as csv, not {fmt}")
        text = frame_to_csv(obj)
    elif isinstance(obj, dict) and fmt == "json":
        text = json.dumps(obj, sort_keys=True, indent=2) + "\n"
    else:
        raise EmitError(f"don't know how to write {type(obj).__name__} as {fmt}")
    _write_text(path, text)
    logger.info("wrote %s", path)


def load_trace(path) -> Trace:
    trace = Trace()
    try:
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    trace.records.append(TraceRecord.from_dict(json.loads(line)))
    except OSError as e:
        raise EmitError(f"cannot read {path}: {e}") from e
    return trace


def received_sets(trace: Trace) -> Dict[str, Set[str]]:
    """Items each member holds at the end, initial production state excluded"""
    held: Dict[str, Set[str]] = defaultdict(set)
    for rec in trace.records:
        if rec.event in ("produce", "deliver") and rec.name:
            held[rec.node].add(rec.name)
    return dict(held)
