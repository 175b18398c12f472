#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Test suite for scenario loading, validation and parameter overrides
"""

import copy
import json
import os
import shutil
import tempfile
import unittest
from pathlib import Path

from scenario import (PRESETS, ScenarioError, UnknownParam, load_scenario, parse_param_value,
                      scenario_from_dict, set_param)

SCENARIO_DIR = Path(__file__).resolve().parent / "scenarios"


def custom_doc():
    return {
        "name": "line",
        "topology": {
            "nodes": [{"id": "A"}, {"id": "R", "kind": "router"}, {"id": "B"}],
            "links": [{"a": "A", "b": "R", "delay_ms": 5}, {"a": "R", "b": "B", "delay_ms": 5}],
        },
        "groups": [{"id": "g", "members": ["A", "B"]}],
    }


class TestPresets(unittest.TestCase):
    """Test the shipped scenarios"""

    def test_all_presets_load(self):
        """Test that every preset passes schema and semantic checks"""
        for name in PRESETS:
            scenario = load_scenario(name)
            self.assertEqual(scenario.name, name)

    def test_files_match_presets(self):
        """Test that scenarios/*.json mirror the built-in presets"""
        files = {p.name[:-len(".json")]: p for p in SCENARIO_DIR.glob("*.json")}
        self.assertEqual(set(files), set(PRESETS))
        for name, path in files.items():
            with open(path, encoding="utf-8") as fh:
                self.assertEqual(json.load(fh), PRESETS[name], name)

    def test_canonical_round_trip(self):
        """Test that the defaulted document loads back to the same scenario"""
        for name in PRESETS:
            scenario = load_scenario(name)
            self.assertEqual(load_scenario(scenario.to_dict()), scenario, name)

    def test_presets_not_mutated(self):
        """Test that loading never alters the preset table"""
        before = copy.deepcopy(PRESETS)
        set_param(load_scenario("timer-window.srm"), "srm.d1", 4)
        self.assertEqual(PRESETS, before)


class TestValidation(unittest.TestCase):
    """Test rejection of malformed documents with their dotted keys"""

    def assertRejected(self, doc, key):
        with self.assertRaises(ScenarioError) as ctx:
            scenario_from_dict(doc)
        self.assertEqual(ctx.exception.key, key)

    def test_custom_loads(self):
        """Test a minimal hand-written scenario"""
        scenario = scenario_from_dict(custom_doc())
        self.assertEqual(scenario.members, ("A", "B"))
        self.assertEqual(scenario.build_topology().delay("A", "R"), 5000)

    def test_negative_delay(self):
        """Test a negative link delay"""
        doc = custom_doc()
        doc["topology"]["links"][0]["delay_ms"] = -5
        self.assertRejected(doc, "topology.links.0.delay_ms")

    def test_unknown_key(self):
        """Test an unexpected top-level key"""
        doc = custom_doc()
        doc["bogus"] = 1
        self.assertRejected(doc, "bogus")

    def test_missing_groups(self):
        """Test a document without groups"""
        doc = custom_doc()
        del doc["groups"]
        self.assertRejected(doc, "groups")

    def test_router_member(self):
        """Test that routers cannot join groups"""
        doc = custom_doc()
        doc["groups"][0]["members"] = ["A", "R"]
        self.assertRejected(doc, "groups.0.members.1")

    def test_unknown_endpoint(self):
        """Test a link to an undeclared node"""
        doc = custom_doc()
        doc["topology"]["links"][1]["b"] = "Z"
        self.assertRejected(doc, "topology.links.1.b")

    def test_duplicate_link(self):
        """Test two links between the same pair"""
        doc = custom_doc()
        doc["topology"]["links"].append({"a": "R", "b": "A"})
        self.assertRejected(doc, "topology.links.2")

    def test_disconnected(self):
        """Test a node with no links"""
        doc = custom_doc()
        doc["topology"]["nodes"].append({"id": "Z"})
        self.assertRejected(doc, "topology")

    def test_schedule_non_member(self):
        """Test a schedule entry for a node outside the group"""
        doc = custom_doc()
        doc["app"] = {"schedule": [{"member": "Z", "count": 1}]}
        self.assertRejected(doc, "app.schedule.0.member")

    def test_loss_on_missing_link(self):
        """Test a scripted drop on a link that does not exist"""
        doc = custom_doc()
        doc["losses"] = [{"from": "A", "to": "B"}]
        self.assertRejected(doc, "losses")

    def test_probability_range(self):
        """Test a loss probability above one"""
        doc = custom_doc()
        doc["topology"]["links"][0]["loss"] = {"forward": 1.5}
        self.assertRejected(doc, "topology.links.0.loss.forward")


class TestFiles(unittest.TestCase):
    """Test loading scenarios from disk"""

    def setUp(self):
        """Set up test fixtures"""
        self.test_dir = tempfile.mkdtemp()

    def tearDown(self):
        """Clean up test fixtures"""
        shutil.rmtree(self.test_dir)

    def test_load_path(self):
        """Test loading a JSON file by path"""
        path = os.path.join(self.test_dir, "line.json")
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(custom_doc(), fh)
        self.assertEqual(load_scenario(path).name, "line")

    def test_invalid_json(self):
        """Test that unparsable files are scenario errors"""
        path = os.path.join(self.test_dir, "broken.json")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("{not json")
        with self.assertRaises(ScenarioError):
            load_scenario(path)

    def test_missing_file(self):
        """Test an unknown preset name or path"""
        with self.assertRaises(ScenarioError):
            load_scenario(os.path.join(self.test_dir, "absent.json"))


class TestParameters(unittest.TestCase):
    """Test overrides and sweep parameters"""

    def test_parse_values(self):
        """Test value parsing for sweeps"""
        self.assertIsNone(parse_param_value("unlimited"))
        self.assertEqual(parse_param_value("2"), 2)
        self.assertEqual(parse_param_value("0.5"), 0.5)
        self.assertIs(parse_param_value("true"), True)
        with self.assertRaises(UnknownParam):
            parse_param_value("lots")

    def test_set_single(self):
        """Test setting one dotted key"""
        scenario = set_param(load_scenario("timer-window.srm"), "srm.d2", 4)
        self.assertEqual(scenario.srm.d2, 4)
        self.assertEqual(scenario.srm.d1, 1)

    def test_set_several(self):
        """Test setting two keys to the same value"""
        scenario = set_param(load_scenario("timer-window.srm"), "srm.d1,srm.d2", 2)
        self.assertEqual((scenario.srm.d1, scenario.srm.d2), (2, 2))

    def test_set_null(self):
        """Test lifting the request scope"""
        scenario = set_param(load_scenario("fig1.srm"), "srm.rq_scope_hops", 2)
        self.assertEqual(scenario.srm.rq_scope_hops, 2)
        self.assertIsNone(set_param(scenario, "srm.rq_scope_hops", None).srm.rq_scope_hops)

    def test_unknown_param(self):
        """Test a key the scenario does not have"""
        with self.assertRaises(UnknownParam):
            set_param(load_scenario("fig1.srm"), "srm.c9", 1)

    def test_invalid_value(self):
        """Test that swept values still pass validation"""
        with self.assertRaises(ScenarioError):
            set_param(load_scenario("fig1.srm"), "srm.d1", -1)

    def test_overrides(self):
        """Test seed, end time and protocol overrides"""
        scenario = load_scenario("fig1").with_overrides(seed=7, end_ms=500, protocols=["ndn"])
        self.assertEqual((scenario.seed, scenario.end_ms, scenario.protocols), (7, 500, ("ndn",)))
        with self.assertRaises(ScenarioError):
            scenario.with_overrides(protocols=["tcp"])


def run_scenario_tests():
    """Run all scenario tests"""
    print("Running scenario tests...")

    suite = unittest.TestSuite()
    for case in (TestPresets, TestValidation, TestFiles, TestParameters):
        suite.addTests(unittest.TestLoader().loadTestsFromTestCase(case))

    runner = unittest.TextTestRunner(verbosity=2)
    result = runner.run(suite)

    return result.wasSuccessful()


if __name__ == '__main__':
    success = run_scenario_tests()
    if success:
        print("\n✅ All scenario tests passed!")
    else:
        print("\n❌ Some scenario tests failed!")
        exit(1)
