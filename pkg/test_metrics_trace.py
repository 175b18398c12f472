#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Test suite for trace records, summaries and emission
"""

import csv
import json
import os
import shutil
import tempfile
import unittest

from metrics_trace import (COUNTERS, EmitError, IncompleteTrace, Trace, check_conservation, emit,
                           load_trace, received_sets, summarize)
from recovery_sim import SimulationRun
from scenario import load_scenario


def srm_trace() -> Trace:
    """B publishes (B:1); C misses it, requests and gets B's reply"""
    trace = Trace()
    trace.record(0, "engine", "start", "srm", extra={
        "protocol": "srm", "seed": 9, "members": ["A", "B", "C"],
        "nodes": ["A", "B", "C", "R"], "initial": {}})
    trace.record(1000, "B", "produce", "srm", "data", "/B/seq=1")
    trace.record(2000, "A", "deliver", "srm", "data", "/B/seq=1", extra={"recovered": False})
    trace.record(3000, "C", "originate", "srm", "rq", "/B/seq=1")
    trace.record(3000, "C", "send", "srm", "rq", "/B/seq=1", "C->R")
    trace.record(3500, "R", "recv", "srm", "rq", "/B/seq=1", "C->R")
    trace.record(3500, "R", "send", "srm", "rq", "/B/seq=1", "R->A")
    trace.record(3500, "R", "send", "srm", "rq", "/B/seq=1", "R->B")
    trace.record(4000, "A", "recv", "srm", "rq", "/B/seq=1", "R->A")
    trace.record(4000, "B", "recv", "srm", "rq", "/B/seq=1", "R->B")
    trace.record(5000, "B", "originate", "srm", "rr", "/B/seq=1")
    trace.record(5000, "B", "send", "srm", "rr", "/B/seq=1", "B->R")
    trace.record(5500, "R", "recv", "srm", "rr", "/B/seq=1", "B->R")
    trace.record(5500, "R", "send", "srm", "rr", "/B/seq=1", "R->A")
    trace.record(5500, "R", "send", "srm", "rr", "/B/seq=1", "R->C")
    trace.record(6000, "A", "recv", "srm", "rr", "/B/seq=1", "R->A")
    trace.record(6000, "C", "recv", "srm", "rr", "/B/seq=1", "R->C")
    trace.record(6000, "C", "deliver", "srm", "rr", "/B/seq=1",
                 extra={"recovered": True, "latency_us": 2000})
    trace.record(7000, "engine", "end", "srm", extra={"in_flight": {}})
    return trace


class TestTrace(unittest.TestCase):
    """Test record selection"""

    def test_select_and_count(self):
        """Test field filters"""
        trace = srm_trace()
        self.assertEqual(trace.count(event="send"), 6)
        self.assertEqual(trace.count(event="recv", node="A"), 2)
        self.assertEqual([r.ts for r in trace.select(event="originate")], [3000, 5000])

    def test_received_sets(self):
        """Test end-of-run holdings per member"""
        held = received_sets(srm_trace())
        self.assertEqual(held, {"A": {"/B/seq=1"}, "B": {"/B/seq=1"}, "C": {"/B/seq=1"}})


class TestSummary(unittest.TestCase):
    """Test counters and recovery metrics derived from a trace"""

    def setUp(self):
        """Set up test fixtures"""
        self.summary = summarize(srm_trace())

    def test_extra_recovery(self):
        """Test that only recovery packets about held items count"""
        self.assertEqual(self.summary.extra_recovery_packets, {"A": 2, "B": 2, "C": 0})

    def test_recovery_totals(self):
        """Test request and reply counts and latency"""
        self.assertEqual(self.summary.rq_sent, 1)
        self.assertEqual(self.summary.rr_sent, 1)
        self.assertEqual(self.summary.duplicate_rr, 0)
        self.assertEqual(self.summary.latencies["C"], [2000])
        self.assertEqual(self.summary.mean_recovery_latency_ms, 2.0)
        self.assertEqual(self.summary.completion_time, 6000)

    def test_counters(self):
        """Test per-node receive counters"""
        self.assertEqual(self.summary.counter("A", "rq_rx"), 1)
        self.assertEqual(self.summary.counter("A", "rr_rx"), 1)
        self.assertEqual(self.summary.counter("R", "rq_rx"), 1)
        self.assertEqual(set(self.summary.nodes["C"]), set(COUNTERS))

    def test_incomplete(self):
        """Test that a trace without an end record is refused"""
        trace = srm_trace()
        trace.records.pop()
        with self.assertRaises(IncompleteTrace):
            summarize(trace)

    def test_quiet_run(self):
        """Test that an empty schedule leaves only sync traffic"""
        scenario = load_scenario("svs-quiet").with_overrides(end_ms=40000)
        summary = SimulationRun(scenario, "ndn").run()
        for node, counters in summary.nodes.items():
            self.assertEqual(counters["data_rx"], 0, node)
            self.assertEqual(counters["interest_rx"], 0, node)
        self.assertGreater(sum(c["sync_rx"] for c in summary.nodes.values()), 0)
        self.assertEqual(summary.rq_sent, 0)


class TestConservation(unittest.TestCase):
    """Test per-link packet conservation"""

    def test_balanced(self):
        """Test a trace where every send arrived"""
        self.assertEqual(check_conservation(srm_trace()), [])

    def test_in_flight_counts(self):
        """Test that packets still in flight balance the books"""
        trace = srm_trace()
        trace.records.pop()
        trace.record(6500, "R", "send", "srm", "rr", "/B/seq=1", "R->B")
        trace.record(7000, "engine", "end", "srm", extra={"in_flight": {"R->B": 1}})
        self.assertEqual(check_conservation(trace), [])

    def test_unbalanced(self):
        """Test that an unexplained send is reported"""
        trace = srm_trace()
        trace.record(6500, "R", "send", "srm", "rr", "/B/seq=1", "R->B")
        self.assertEqual(check_conservation(trace), ["R->B"])

    def test_lossy_run_conserves(self):
        """Test conservation on a run with random loss"""
        sim = SimulationRun(load_scenario("lossy-x").with_overrides(end_ms=20000), "ndn")
        sim.run()
        self.assertEqual(check_conservation(sim.trace), [])
        self.assertGreater(sim.trace.count(event="drop", link="R6->X"), 0)


class TestEmit(unittest.TestCase):
    """Test JSONL, JSON and CSV output"""

    def setUp(self):
        """Set up test fixtures"""
        self.test_dir = tempfile.mkdtemp()
        self.trace = srm_trace()
        self.summary = summarize(self.trace)

    def tearDown(self):
        """Clean up test fixtures"""
        shutil.rmtree(self.test_dir)

    def path(self, name):
        return os.path.join(self.test_dir, name)

    def test_jsonl_lines(self):
        """Test one sorted-key JSON object per record"""
        emit(self.trace, "jsonl", self.path("trace.jsonl"))
        with open(self.path("trace.jsonl"), encoding="utf-8") as fh:
            lines = fh.read().splitlines()
        self.assertEqual(len(lines), len(self.trace))
        first = json.loads(lines[0])
        self.assertEqual(list(first), sorted(first))
        self.assertEqual(first["event"], "start")

    def test_repeatable_bytes(self):
        """Test that writing twice gives identical bytes"""
        emit(self.summary, "json", self.path("a.json"))
        emit(self.summary, "json", self.path("b.json"))
        with open(self.path("a.json"), "rb") as a, open(self.path("b.json"), "rb") as b:
            self.assertEqual(a.read(), b.read())

    def test_summary_csv(self):
        """Test one CSV row per node"""
        emit(self.summary, "csv", self.path("summary.csv"))
        with open(self.path("summary.csv"), encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        self.assertEqual([r["node"] for r in rows], ["A", "B", "C", "R"])
        self.assertEqual(rows[0]["extra_recovery_packets"], "2")

    def test_reload_matches(self):
        """Test that a written trace summarizes to the same result"""
        emit(self.trace, "jsonl", self.path("trace.jsonl"))
        self.assertEqual(summarize(load_trace(self.path("trace.jsonl"))), self.summary)

    def test_bad_format(self):
        """Test unsupported combinations"""
        with self.assertRaises(EmitError):
            emit(self.trace, "csv", self.path("trace.csv"))
        with self.assertRaises(EmitError):
            emit(self.summary, "xml", self.path("summary.xml"))

    def test_unwritable(self):
        """Test that write failures surface as EmitError"""
        blocker = self.path("file")
        with open(blocker, "w") as fh:
            fh.write("x")
        with self.assertRaises(EmitError):
            emit(self.summary, "json", os.path.join(blocker, "summary.json"))


def run_metrics_trace_tests():
    """Run all trace and metrics tests"""
    print("Running trace and metrics tests...")

    suite = unittest.TestSuite()
    for case in (TestTrace, TestSummary, TestConservation, TestEmit):
        suite.addTests(unittest.TestLoader().loadTestsFromTestCase(case))

    runner = unittest.TextTestRunner(verbosity=2)
    result = runner.run(suite)

    return result.wasSuccessful()


if __name__ == '__main__':
    success = run_metrics_trace_tests()
    if success:
        print("\n✅ All trace and metrics tests passed!")
    else:
        print("\n❌ Some trace and metrics tests failed!")
        exit(1)
