#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
recovery-sim: run SRM and NDN/SVS loss-recovery scenarios, compare the
two architectures side by side, and sweep protocol parameters.
"""

import argparse
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from typing import Dict, List, Optional, Sequence

import pandas as pd

from group_app import NdnMember, ProductionSchedule, run_schedule
from ip_multicast import McastGroup, MulticastFabric
from metrics_trace import RunSummary, Trace, emit, summarize
from ndn_core import CertStore, Name, TrustSchema, make_certificate
from ndn_forwarder import Forwarder, build_fibs
from scenario import PROTOCOLS, Scenario, ScenarioError, load_scenario, parse_param_value, set_param
from sim_engine import Engine, SimulationError, ms_to_micros
from srm import IdealOracle, SrmMember
from svs import SvsMember
from topology import Network, shortest_paths

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_SCENARIO = 2
EXIT_RUNTIME = 3

SWEEP_COLUMNS = ["value", "seed", "duplicate_rq", "duplicate_rr", "mean_recovery_latency",
                 "rq_sent", "rr_sent"]

_LOG_LEVELS = {"trace": logging.DEBUG, "info": logging.INFO}


def configure_logging():
    """SIM_LOG=trace|info selects diagnostic verbosity; results never depend on it"""
    level = _LOG_LEVELS.get(os.environ.get("SIM_LOG", "").strip().lower(), logging.WARNING)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    logging.getLogger().setLevel(level)


class SimulationRun:
    """One scenario bound to one protocol stack, ready to run"""

    def __init__(self, scenario: Scenario, protocol: str, record_dispatch: bool = False):
        if protocol not in PROTOCOLS:
            raise ScenarioError("protocols", f"unknown protocol {protocol!r}")
        self.scenario = scenario
        self.protocol = protocol
        self.engine = Engine(scenario.seed, record_dispatch)
        self.trace = Trace()
        self.topology = scenario.build_topology()
        self.routes = shortest_paths(self.topology)
        self.network = Network(self.engine, self.topology, self.trace)
        self.members: Dict[str, object] = {}
        self.producers = {}
        self.summary: Optional[RunSummary] = None
        if protocol == "srm":
            self._build_srm()
        else:
            self._build_ndn()

    def _build_srm(self):
        scenario = self.scenario
        fabric = MulticastFabric(self.network, self.routes, "srm")
        fabric.add_group(McastGroup(scenario.group_id, frozenset(scenario.members)))
        oracle = IdealOracle(self.routes) if scenario.srm.ideal_mode else None
        for member in scenario.members:
            srm = SrmMember(member, scenario.group_id, fabric, self.engine, self.trace, scenario.srm,
                            scenario.app.initial_seqs, oracle)
            self.members[member] = srm
            self.producers[member] = srm.produce_adu

    def _build_ndn(self):
        scenario = self.scenario
        sync_prefix = Name.parse(scenario.svs.sync_prefix)
        fibs = build_fibs(self.topology, self.routes, scenario.members, sync_prefix, scenario.members)
        self.forwarders = {node: Forwarder(node, self.network, self.engine, self.trace, scenario.ndn,
                                           fibs[node], sync_prefix)
                           for node in self.topology.node_ids}
        anchor_entity = scenario.trust.anchors[0] if scenario.trust.anchors else "/mgr"
        anchor = make_certificate(anchor_entity)
        keys = {m: make_certificate(f"/{m}", "1", issuer=anchor) for m in scenario.members}
        certs = CertStore(keys.values(), anchors=[anchor])
        schema = TrustSchema.from_config(scenario.trust.rules, scenario.trust.anchors)
        for member in scenario.members:
            forwarder = self.forwarders[member]
            app = NdnMember(member, forwarder, self.engine, self.trace, scenario.app, scenario.ndn,
                            keys[member], schema, certs)
            sync = SvsMember(member, self.engine, self.trace, scenario.svs, forwarder.from_app,
                             scenario.app.initial_seqs)
            app.bind_sync(sync)
            self.members[member] = app
            self.producers[member] = app.produce

    def run(self) -> RunSummary:
        scenario = self.scenario
        logger.info("running %s over %s, seed %d", scenario.name, self.protocol, scenario.seed)
        self.trace.record(0, "engine", "start", self.protocol, extra={
            "scenario": scenario.name,
            "protocol": self.protocol,
            "seed": scenario.seed,
            "members": list(scenario.members),
            "nodes": self.topology.node_ids,
            "initial": dict(sorted(scenario.app.initial_seqs.items())),
        })
        for member in scenario.members:
            binding = self.members[member]
            if self.protocol == "srm":
                binding.start()
            else:
                binding.svs.start()
        run_schedule(self.engine, ProductionSchedule(scenario.app.schedule), self.producers)
        dispatched = self.engine.run_until(ms_to_micros(scenario.end_ms))
        self.trace.record(self.engine.now, "engine", "end", self.protocol,
                          extra={"in_flight": self.network.in_flight(), "dispatched": dispatched})
        self.summary = summarize(self.trace)
        logger.info("%s over %s finished: %d events, %d trace records",
                    scenario.name, self.protocol, dispatched, len(self.trace))
        return self.summary


def run_scenario(scenario: Scenario, protocol: Optional[str] = None) -> SimulationRun:
    sim = SimulationRun(scenario, protocol or scenario.protocols[0])
    sim.run()
    return sim


def compare(scenario: Scenario, protocols: Sequence[str]) -> Dict:
    """Run the scenario once per protocol; summaries in the order given"""
    runs = []
    for protocol in protocols:
        sim = run_scenario(scenario, protocol)
        runs.append({"protocol": protocol, "summary": sim.summary.to_dict()})
    return {"scenario": scenario.name, "seed": scenario.seed, "runs": runs}


def comparison_frame(result: Dict) -> pd.DataFrame:
    """Per-node extra recovery packets and received-packet totals, one column pair per run"""
    columns = {}
    for index, run in enumerate(result["runs"]):
        summary = run["summary"]
        label = run["protocol"] if [r["protocol"] for r in result["runs"]].count(run["protocol"]) == 1 \
            else f"{run['protocol']}#{index + 1}"
        columns[f"{label}.extra_recovery"] = pd.Series(summary["extra_recovery_packets"], dtype="Int64")
        columns[f"{label}.rx_total"] = pd.Series(
            {node: sum(counters[c] for c in ("data_rx", "rq_rx", "rr_rx", "interest_rx", "sync_rx",
                                             "session_rx"))
             for node, counters in summary["nodes"].items()}, dtype="Int64")
    frame = pd.DataFrame(columns).sort_index()
    frame.index.name = "node"
    return frame


def render_comparison(result: Dict) -> str:
    lines = [f"scenario {result['scenario']} (seed {result['seed']})"]
    lines.append(comparison_frame(result).to_string(na_rep="-"))
    for run in result["runs"]:
        summary = run["summary"]
        lines.append(f"{run['protocol']}: completion {summary['completion_time'] / 1000:.3f} ms, "
                     f"rq {summary['rq_sent']}, rr {summary['rr_sent']}, "
                     f"mean recovery {summary['mean_recovery_latency_ms']:.3f} ms")
    return "\n".join(lines)


def _sweep_point(doc: Dict, protocol: str, value_label: str, seed: int) -> Dict:
    scenario = load_scenario(doc).with_overrides(seed=seed)
    summary = run_scenario(scenario, protocol).summary
    return {
        "value": value_label,
        "seed": seed,
        "duplicate_rq": summary.duplicate_rq,
        "duplicate_rr": summary.duplicate_rr,
        "mean_recovery_latency": summary.mean_recovery_latency_ms,
        "rq_sent": summary.rq_sent,
        "rr_sent": summary.rr_sent,
    }


def sweep(scenario: Scenario, param: str, values: Sequence[str], seeds: int,
          protocol: Optional[str] = None, jobs: int = 1) -> pd.DataFrame:
    """One row per (value, seed), ordered by value order then seed"""
    protocol = protocol or scenario.protocols[0]
    if seeds < 1:
        raise ScenarioError("--seeds", "need at least one seed")
    points = []
    for label in values:
        doc = set_param(scenario, param, parse_param_value(label)).to_dict()
        for seed in range(scenario.seed, scenario.seed + seeds):
            points.append((doc, protocol, label, seed))
    logger.info("sweeping %s over %s: %d runs", param, list(values), len(points))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_sweep_point, *zip(*points)))
    else:
        rows = [_sweep_point(*point) for point in points]
    return pd.DataFrame(rows, columns=SWEEP_COLUMNS)


def _split(text: Optional[str]) -> List[str]:
    return [item.strip() for item in (text or "").split(",") if item.strip()]


def _load(args) -> Scenario:
    scenario = load_scenario(args.scenario)
    return scenario.with_overrides(seed=args.seed, end_ms=getattr(args, "end_ms", None))


def cmd_run(args) -> int:
    scenario = _load(args)
    protocols = _split(args.protocols) or list(scenario.protocols)
    sim = SimulationRun(scenario.with_overrides(protocols=protocols), protocols[0])
    summary = sim.run()
    if args.out:
        emit(sim.trace, "jsonl", args.out)
    if args.summary:
        emit(summary, "csv" if args.summary.endswith(".csv") else "json", args.summary)
    print(f"{scenario.name} [{sim.protocol}] seed={scenario.seed}: "
          f"rq={summary.rq_sent} rr={summary.rr_sent} "
          f"completion={summary.completion_time}us records={len(sim.trace)}")
    return EXIT_OK


def cmd_compare(args) -> int:
    scenario = _load(args)
    protocols = _split(args.protocols) or list(scenario.protocols)
    scenario = scenario.with_overrides(protocols=protocols)
    result = compare(scenario, protocols)
    if args.out:
        emit(result, "json", args.out)
    print(render_comparison(result))
    return EXIT_OK


def cmd_sweep(args) -> int:
    scenario = _load(args)
    protocols = _split(args.protocols)
    frame = sweep(scenario, args.param, _split(args.values), args.seeds,
                  protocols[0] if protocols else None, args.jobs)
    if args.out:
        emit(frame, "csv", args.out)
    summary = frame.groupby("value", sort=False)[["duplicate_rq", "duplicate_rr",
                                                  "mean_recovery_latency"]].mean()
    print(summary.to_string(float_format=lambda v: f"{v:.6f}"))
    return EXIT_OK


def cmd_validate(args) -> int:
    scenario = load_scenario(args.scenario)
    print(f"{scenario.name}: ok ({len(scenario.members)} members, protocols {','.join(scenario.protocols)})")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="recovery-sim",
                                     description="SRM vs NDN/SVS loss-recovery simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, end=True):
        p.add_argument("scenario", help="preset name or path to a scenario JSON file")
        p.add_argument("--seed", type=int, help="override the scenario seed")
        if end:
            p.add_argument("--end-ms", dest="end_ms", type=float, help="override the end time")

    run = sub.add_parser("run", help="run one scenario under one protocol")
    common(run)
    run.add_argument("--protocols", help="protocol to run (first of the list is used)")
    run.add_argument("--out", help="trace output (JSONL)")
    run.add_argument("--summary", help="summary output (.json or .csv)")
    run.set_defaults(func=cmd_run)

    cmp_ = sub.add_parser("compare", help="run a scenario under several protocols")
    common(cmp_)
    cmp_.add_argument("--protocols", default="srm,ndn", help="comma-separated protocols")
    cmp_.add_argument("--out", help="comparison output (JSON)")
    cmp_.set_defaults(func=cmd_compare)

    swp = sub.add_parser("sweep", help="sweep a scenario parameter over several seeds")
    common(swp)
    swp.add_argument("--param", required=True, help="dotted key(s), e.g. srm.d2 or srm.d1,srm.d2")
    swp.add_argument("--values", required=True, help="comma-separated values; 'unlimited' means null")
    swp.add_argument("--seeds", type=int, default=1, help="seeds per value, starting at the scenario seed")
    swp.add_argument("--protocols", help="protocol to sweep (default: the scenario's first)")
    swp.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    swp.add_argument("--out", help="sweep table output (CSV)")
    swp.set_defaults(func=cmd_sweep)

    val = sub.add_parser("validate", help="check a scenario against the schema")
    val.add_argument("scenario")
    val.set_defaults(func=cmd_validate)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Main entry point"""
    configure_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ScenarioError as e:
        print(f"错误: 场景无效 ({e.key}): {e}", file=sys.stderr)
        return EXIT_SCENARIO
    except (SimulationError, OSError) as e:
        print(f"错误: 运行失败: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
