#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Test suite for NDN names, packets, signing and trust-schema validation
"""

import unittest
from dataclasses import replace

from ndn_core import (Accept, CertStore, Interest, InvalidName, Name, Reject, RejectReason, TrustRule,
                      TrustSchema, key_name, make_certificate, name_for_adu, parse_adu_name, sign,
                      validate, verify_digest)
from scenario import DEFAULT_ANCHORS, DEFAULT_TRUST_RULES


class TestNames(unittest.TestCase):
    """Test hierarchical names"""

    def test_parse_and_print(self):
        """Test that parsing keeps components in order"""
        name = Name.parse("/E/seq=12")
        self.assertEqual(name.components, ("E", "seq=12"))
        self.assertEqual(str(name), "/E/seq=12")
        self.assertEqual(len(name), 2)

    def test_invalid_names(self):
        """Test names without a leading slash or with empty components"""
        for text in ("E/seq=1", "/", "/a//b"):
            with self.assertRaises(InvalidName):
                Name.parse(text)

    def test_prefix(self):
        """Test component-wise prefix matching"""
        self.assertTrue(Name.parse("/E").is_prefix_of(Name.parse("/E/seq=1")))
        self.assertFalse(Name.parse("/E").is_prefix_of(Name.parse("/EX/seq=1")))

    def test_item_names(self):
        """Test producer item naming"""
        self.assertEqual(str(name_for_adu("E", 12)), "/E/seq=12")
        self.assertEqual(parse_adu_name("/A/seq=1"), ("A", 1))
        with self.assertRaises(InvalidName):
            name_for_adu("E", 0)
        with self.assertRaises(InvalidName):
            parse_adu_name("/sync")

    def test_interest_kinds(self):
        """Test that application parameters mark a Sync Interest"""
        self.assertEqual(Interest(Name.parse("/E/seq=1"), 1, 4000).kind, "interest")
        self.assertEqual(Interest(Name.parse("/sync"), 1, 4000, b"").kind, "sync")
        self.assertEqual(Interest(Name.parse("/E/seq=1"), 1, 4000, retx=2).trace_extra(), {"retx": 2})


class TestSigning(unittest.TestCase):
    """Test signatures over name, content and key locator"""

    def setUp(self):
        """Set up test fixtures"""
        self.anchor = make_certificate("/mgr")
        self.e_key = make_certificate("/E", issuer=self.anchor)

    def test_certificate_names(self):
        """Test key naming and issuer locators"""
        self.assertEqual(self.e_key.name, key_name("/E"))
        self.assertEqual(str(self.e_key.name), "/E/KEY/1")
        self.assertEqual(self.e_key.key_locator, self.anchor.name)
        self.assertTrue(self.anchor.self_signed)

    def test_signature_verifies(self):
        """Test that a signed packet verifies against its signer"""
        data = sign(self.e_key, "/E/seq=12", b"payload")
        self.assertEqual(data.key_locator, self.e_key.name)
        self.assertTrue(verify_digest(data, self.e_key))

    def test_tampering_breaks_signature(self):
        """Test that modified content no longer verifies"""
        data = sign(self.e_key, "/E/seq=12", b"payload")
        self.assertFalse(verify_digest(replace(data, content=b"forged"), self.e_key))

    def test_encrypted_flag(self):
        """Test that the encrypted flag is carried"""
        self.assertTrue(sign(self.e_key, "/E/seq=1", b"x", encrypted=True).encrypted)


class TestValidation(unittest.TestCase):
    """Test trust-schema validation down the certificate chain"""

    def setUp(self):
        """Set up test fixtures"""
        self.anchor = make_certificate("/mgr")
        self.e_key = make_certificate("/E", issuer=self.anchor)
        self.alice_key = make_certificate("/alice", issuer=self.anchor)
        self.store = CertStore([self.e_key, self.alice_key], anchors=[self.anchor])
        self.schema = TrustSchema.from_config(DEFAULT_TRUST_RULES, DEFAULT_ANCHORS)

    def test_accept(self):
        """Test E's item signed by E's key, issued by the anchor"""
        result = validate(sign(self.e_key, "/E/seq=12", b"x"), self.schema, self.store)
        self.assertEqual(result, Accept(2))
        self.assertTrue(result.accepted)

    def test_schema_violation(self):
        """Test E's item signed by alice's key"""
        result = validate(sign(self.alice_key, "/E/seq=12", b"x"), self.schema, self.store)
        self.assertIsInstance(result, Reject)
        self.assertEqual(result.reason, RejectReason.SCHEMA_VIOLATION)
        self.assertFalse(result.accepted)

    def test_anchor_itself(self):
        """Test that a trust anchor is accepted at depth 0"""
        self.assertEqual(validate(self.anchor, self.schema, self.store), Accept(0))

    def test_unknown_key(self):
        """Test a signer missing from the store"""
        stranger = make_certificate("/X", issuer=self.anchor)
        result = validate(sign(stranger, "/X/seq=1", b"x"), self.schema, self.store)
        self.assertEqual(result.reason, RejectReason.UNKNOWN_KEY)

    def test_bad_digest(self):
        """Test a tampered packet"""
        data = replace(sign(self.e_key, "/E/seq=12", b"x"), content=b"y")
        self.assertEqual(validate(data, self.schema, self.store).reason, RejectReason.BAD_DIGEST)

    def test_self_signed_stranger(self):
        """Test a self-signed certificate outside the anchors"""
        rogue = make_certificate("/rogue")
        self.store.add(rogue)
        result = validate(sign(rogue, "/rogue/seq=1", b"x"), self.schema, self.store)
        self.assertEqual(result.reason, RejectReason.NO_ANCHOR_PATH)

    def test_forged_anchor(self):
        """Test that a self-signed certificate under the anchor's name with a different key is refused"""
        forged = sign(replace(self.anchor, content=b"attacker-key"), self.anchor.name, b"attacker-key")
        self.assertTrue(forged.self_signed)
        self.assertEqual(validate(forged, self.schema, self.store).reason, RejectReason.NO_ANCHOR_PATH)

    def test_forged_anchor_as_issuer(self):
        """Test that data chained to a forged anchor is refused"""
        forged = sign(replace(self.anchor, content=b"attacker-key"), self.anchor.name, b"attacker-key")
        store = CertStore([forged], anchors=[self.anchor])
        result = validate(make_certificate("/E", issuer=forged), self.schema, store)
        self.assertEqual(result.reason, RejectReason.NO_ANCHOR_PATH)

    def test_self_signed_data_under_anchor(self):
        """Test that self-signed Data named under the anchor prefix is refused"""
        name = Name.parse("/mgr/seq=1")
        data = sign(replace(self.anchor, name=name), name, b"x")
        self.assertTrue(data.self_signed)
        self.assertEqual(validate(data, self.schema, self.store).reason, RejectReason.NO_ANCHOR_PATH)

    def _chain(self, length):
        schema = TrustSchema.from_config([["/\\1/seq=*", "/\\1/KEY/*"], ["/*/KEY/*", "/*/KEY/*"]], ["/k0"])
        certs = [make_certificate("/k0")]
        for i in range(1, length):
            certs.append(make_certificate(f"/k{i}", issuer=certs[-1]))
        data = sign(certs[-1], f"/k{length - 1}/seq=1", b"x")
        return data, schema, CertStore(certs[1:], anchors=certs[:1])

    def test_long_chain_accepted(self):
        """Test a four-certificate chain"""
        data, schema, store = self._chain(4)
        self.assertEqual(validate(data, schema, store), Accept(4))

    def test_depth_exceeded(self):
        """Test that chains longer than the limit are rejected"""
        data, schema, store = self._chain(10)
        self.assertEqual(validate(data, schema, store).reason, RejectReason.DEPTH_EXCEEDED)

    def test_back_reference_consistency(self):
        """Test that a back-reference must bind the same component on both sides"""
        rule = TrustRule("/\\1/seq=*", "/\\1/KEY/*")
        self.assertTrue(rule.permits(Name.parse("/E/seq=1"), Name.parse("/E/KEY/1")))
        self.assertFalse(rule.permits(Name.parse("/E/seq=1"), Name.parse("/A/KEY/1")))
        twice = TrustRule("/\\1/\\1", "/\\1/KEY/*")
        self.assertTrue(twice.permits(Name.parse("/a/a"), Name.parse("/a/KEY/1")))
        self.assertFalse(twice.permits(Name.parse("/a/b"), Name.parse("/a/KEY/1")))


def run_ndn_core_tests():
    """Run all NDN core tests"""
    print("Running NDN core tests...")

    suite = unittest.TestSuite()
    suite.addTests(unittest.TestLoader().loadTestsFromTestCase(TestNames))
    suite.addTests(unittest.TestLoader().loadTestsFromTestCase(TestSigning))
    suite.addTests(unittest.TestLoader().loadTestsFromTestCase(TestValidation))

    runner = unittest.TextTestRunner(verbosity=2)
    result = runner.run(suite)

    return result.wasSuccessful()


if __name__ == '__main__':
    success = run_ndn_core_tests()
    if success:
        print("\n✅ All NDN core tests passed!")
    else:
        print("\n❌ Some NDN core tests failed!")
        exit(1)
