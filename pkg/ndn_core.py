#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
NDN data model: hierarchical names, Interest and Data packets, mock
signatures, certificates, and trust-schema validation.
"""

import hashlib
import hmac
import logging
import re
from dataclasses import dataclass, field
from enum import Enum
from fnmatch import fnmatchcase
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

from sim_engine import SimulationError

logger = logging.getLogger(__name__)

MAX_CHAIN_DEPTH = 8
_SEQ_COMPONENT = re.compile(r"^seq=(\d+)$")
_BACKREF = re.compile(r"^\\([1-9])$")


class InvalidName(SimulationError):
    """Name text or components violate the naming rules"""


@dataclass(frozen=True, order=True)
class Name:
    components: Tuple[str, ...]

    def __post_init__(self):
        if not self.components:
            raise InvalidName("a name needs at least one component")
        for comp in self.components:
            if not comp or "/" in comp:
                raise InvalidName(f"bad name component {comp!r}")

    @classmethod
    def parse(cls, uri: Union[str, "Name"]) -> "Name":
        if isinstance(uri, Name):
            return uri
        if not uri.startswith("/"):
            raise InvalidName(f"name must start with '/': {uri!r}")
        return cls(tuple(uri.strip("/").split("/")) if uri.strip("/") else ())

    def __str__(self) -> str:
        return "/" + "/".join(self.components)

    def __len__(self) -> int:
        return len(self.components)

    def append(self, *components: str) -> "Name":
        return Name(self.components + tuple(components))

    def is_prefix_of(self, other: "Name") -> bool:
        return other.components[:len(self.components)] == self.components


def name_for_adu(producer: str, seq: int) -> Name:
    """Data name of a producer's numbered item: /<producer>/seq=<seq>"""
    if seq < 1:
        raise InvalidName(f"sequence numbers start at 1, got {seq}")
    return Name((producer, f"seq={seq}"))


def parse_adu_name(name: Union[str, Name]) -> Tuple[str, int]:
    name = Name.parse(name)
    if len(name) != 2:
        raise InvalidName(f"{name} is not an item name")
    match = _SEQ_COMPONENT.match(name.components[1])
    if not match:
        raise InvalidName(f"{name} is not an item name")
    return name.components[0], int(match.group(1))


@dataclass(frozen=True)
class Interest:
    name: Name
    nonce: int
    lifetime: int
    app_params: Optional[bytes] = None
    retx: int = 0

    @property
    def kind(self) -> str:
        return "sync" if self.app_params is not None else "interest"

    @property
    def match_name(self) -> str:
        return str(self.name)

    def trace_extra(self) -> Dict:
        return {} if self.app_params is not None else {"retx": self.retx}


@dataclass(frozen=True)
class DataPacket:
    name: Name
    content: bytes
    key_locator: Name
    sig: str
    encrypted: bool = False

    kind = "data"

    @property
    def match_name(self) -> str:
        return str(self.name)

    @property
    def self_signed(self) -> bool:
        return self.key_locator == self.name


# certificates are Data packets named /<entity>/KEY/<id>
Certificate = DataPacket


def _signed_portion(name: Name, content: bytes, key_locator: Name) -> bytes:
    return str(name).encode("utf-8") + b"\x00" + content + b"\x00" + str(key_locator).encode("utf-8")


def _digest(key_token: bytes, name: Name, content: bytes, key_locator: Name) -> str:
    return hmac.new(key_token, _signed_portion(name, content, key_locator), hashlib.sha256).hexdigest()


def key_name(entity: str, key_id: str = "1") -> Name:
    return Name.parse(entity).append("KEY", str(key_id))


def make_certificate(entity: str, key_id: str = "1",
                     issuer: Optional[Certificate] = None) -> Certificate:
    """Issue the certificate of entity's key; self-signed when issuer is None"""
    name = key_name(entity, key_id)
    token = hashlib.sha256(f"mock-key:{name}".encode("utf-8")).digest()
    if issuer is None:
        return DataPacket(name, token, name, _digest(token, name, token, name))
    return sign(issuer, name, token)


def sign(producer_key: Certificate, name: Union[str, Name], content: bytes,
         encrypted: bool = False) -> DataPacket:
    """Produce a Data packet signed by the holder of producer_key"""
    name = Name.parse(name)
    locator = producer_key.name
    return DataPacket(name, content, locator,
                      _digest(producer_key.content, name, content, locator), encrypted)


def verify_digest(pkt: DataPacket, signer: Certificate) -> bool:
    expected = _digest(signer.content, pkt.name, pkt.content, pkt.key_locator)
    return hmac.compare_digest(expected, pkt.sig)


class RejectReason(str, Enum):
    BAD_DIGEST = "BadDigest"
    SCHEMA_VIOLATION = "SchemaViolation"
    UNKNOWN_KEY = "UnknownKey"
    NO_ANCHOR_PATH = "NoAnchorPath"
    DEPTH_EXCEEDED = "DepthExceeded"


@dataclass(frozen=True)
class Accept:
    depth: int

    accepted = True


@dataclass(frozen=True)
class Reject:
    reason: RejectReason
    detail: str = ""

    accepted = False


def _split_pattern(pattern: str) -> Tuple[str, ...]:
    if not pattern.startswith("/"):
        raise InvalidName(f"pattern must start with '/': {pattern!r}")
    return tuple(pattern.strip("/").split("/"))


def _match_pattern(elements: Sequence[str], name: Name, bindings: Dict[str, str]) -> bool:
    if len(elements) != len(name):
        return False
    for element, comp in zip(elements, name.components):
        ref = _BACKREF.match(element)
        if ref:
            index = ref.group(1)
            if index in bindings:
                if bindings[index] != comp:
                    return False
            else:
                bindings[index] = comp
        elif not fnmatchcase(comp, element):
            return False
    return True


@dataclass(frozen=True)
class TrustRule:
    """Data names matching data_pattern may be signed by keys matching signer_pattern"""

    data_pattern: str
    signer_pattern: str

    def permits(self, data_name: Name, signer_name: Name) -> bool:
        bindings: Dict[str, str] = {}
        if not _match_pattern(_split_pattern(self.data_pattern), data_name, bindings):
            return False
        return _match_pattern(_split_pattern(self.signer_pattern), signer_name, bindings)


@dataclass
class TrustSchema:
    rules: List[TrustRule] = field(default_factory=list)
    anchors: List[Name] = field(default_factory=list)

    @classmethod
    def from_config(cls, rules: Iterable[Sequence[str]], anchors: Iterable[str]) -> "TrustSchema":
        return cls([TrustRule(d, s) for d, s in rules], [Name.parse(a) for a in anchors])

    def permits(self, data_name: Name, signer_name: Name) -> bool:
        return any(rule.permits(data_name, signer_name) for rule in self.rules)

    def is_anchor(self, cert: Certificate, pinned: Optional[Certificate]) -> bool:
        """Check a self-signed certificate against the pinned copy of a configured anchor"""
        if pinned is None or cert != pinned:
            return False
        return any(a.is_prefix_of(cert.name) for a in self.anchors)


class CertStore:
    """Pre-distributed certificates, looked up by name; anchors are pinned separately"""

    def __init__(self, certs: Iterable[Certificate] = (), anchors: Iterable[Certificate] = ()):
        self._certs: Dict[Name, Certificate] = {}
        self._anchors: Dict[Name, Certificate] = {}
        for cert in anchors:
            self._anchors[cert.name] = cert
            self.add(cert)
        for cert in certs:
            self.add(cert)

    def add(self, cert: Certificate):
        self._certs[cert.name] = cert

    def get(self, name: Name) -> Optional[Certificate]:
        return self._certs.get(name)

    def anchor(self, name: Name) -> Optional[Certificate]:
        return self._anchors.get(name)

    def __len__(self):
        return len(self._certs)


def validate(pkt: DataPacket, schema: TrustSchema, cert_store: CertStore,
             max_depth: int = MAX_CHAIN_DEPTH):
    """Follow the key-locator chain to an anchor, enforcing the schema at every link"""
    current = pkt
    depth = 0
    while True:
        if current.self_signed:
            if not verify_digest(current, current):
                return Reject(RejectReason.BAD_DIGEST, str(current.name))
            if schema.is_anchor(current, cert_store.anchor(current.name)):
                return Accept(depth)
            return Reject(RejectReason.NO_ANCHOR_PATH, f"{current.name} is self-signed but not an anchor")
        if depth >= max_depth:
            return Reject(RejectReason.DEPTH_EXCEEDED, f"chain longer than {max_depth}")
        signer = cert_store.get(current.key_locator)
        if signer is None:
            return Reject(RejectReason.UNKNOWN_KEY, str(current.key_locator))
        if not verify_digest(current, signer):
            return Reject(RejectReason.BAD_DIGEST, str(current.name))
        if not schema.permits(current.name, current.key_locator):
            return Reject(RejectReason.SCHEMA_VIOLATION,
                          f"{current.key_locator} may not sign {current.name}")
        current = signer
        depth += 1
