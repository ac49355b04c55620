"""
Identities, canonical message encoding, signatures, conflict detection and
proofs of fraud.

Every protocol message is a SignedMessage. Its canonical encoding (fixed field
order, fixed-width big-endian integers, length-prefixed byte fields) is what
gets signed and is also the wire form written to trace dumps.
"""
from __future__ import annotations

import hashlib
import hmac
import logging
import struct
from dataclasses import dataclass, field, replace
from enum import IntEnum
from functools import cached_property
from typing import Iterable, Optional, Protocol

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import serialization
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)

from config import SECURITY_BITS

logger = logging.getLogger(__name__)

ProcessId = int


class SigningError(ValueError):
    pass


class Kind(IntEnum):
    EST = 1
    COORD = 2
    ECHO = 3
    BVECHO = 4
    BVREADY = 5
    INIT = 6
    READY = 7
    POF_LIST = 8
    DECISION = 9


class Phase(IntEnum):
    NONE = 0
    RB = 1        # reliable broadcast (INIT / ECHO / READY)
    ABV = 2       # binary value broadcast (EST / BVECHO / BVREADY)
    AUX = 3       # coordinator value and ECHO[r]
    DECIDE = 4    # AABC decision certificate
    CONFIRM = 5   # Basilic decision bundle


# kinds that can yield a proof of fraud
CONFLICT_KINDS = frozenset({
    Kind.EST, Kind.COORD, Kind.ECHO, Kind.BVECHO, Kind.BVREADY, Kind.INIT, Kind.READY,
})
# an honest process may legitimately sign one of these per value, so the value is part of the slot
PER_VALUE_KINDS = frozenset({Kind.BVECHO, Kind.BVREADY})


@dataclass(frozen=True, order=True)
class InstanceId:
    """(consensus index, sub-instance) plus the track and attempt it belongs to.

    sub is the AARB source / AABC index, or -1 for messages about the whole
    Basilic instance. track 0 is the replicated chain, 1 exclusion, 2 inclusion.
    A restarted instance gets a new attempt so old votes never collide.
    """
    index: int
    sub: int = -1
    track: int = 0
    attempt: int = 0

    def with_sub(self, sub: int) -> "InstanceId":
        return replace(self, sub=sub)

    def root(self) -> "InstanceId":
        return replace(self, sub=-1)

    def encode(self) -> bytes:
        return struct.pack(">QiBH", self.index, self.sub, self.track, self.attempt)


def _lp(data: bytes) -> bytes:
    return struct.pack(">I", len(data)) + data


@dataclass(frozen=True)
class KeyPair:
    secret: bytes = field(repr=False)
    public: bytes
    bits: int = SECURITY_BITS


@dataclass(frozen=True, eq=False)
class Certificate:
    """A list of signed messages justifying a value at a round."""
    round: int
    value: bytes
    messages: tuple["SignedMessage", ...] = ()

    @cached_property
    def encoding(self) -> bytes:
        """Members are bound by digest, so nested certificates stay constant size per level."""
        parts = [struct.pack(">iI", self.round, len(self.messages)), _lp(self.value)]
        parts.extend(m.digest for m in self.messages)
        return b"".join(parts)

    def signers(self) -> set[ProcessId]:
        return {m.signer for m in self.messages}

    def __eq__(self, other):
        return isinstance(other, Certificate) and self.encoding == other.encoding

    def __hash__(self):
        return hash(self.encoding)

    def __len__(self):
        return len(self.messages)


EMPTY_CERT_VALUE = b""


@dataclass(frozen=True, eq=False)
class SignedMessage:
    kind: Kind
    instance: InstanceId
    round: int
    phase: Phase
    payload: bytes
    signer: ProcessId
    certificate: Optional[Certificate] = None
    signature: bytes = b""

    @cached_property
    def body(self) -> bytes:
        """Canonical encoding of every field except the signature."""
        head = struct.pack(">B", int(self.kind)) + self.instance.encode()
        head += struct.pack(">iBI", self.round, int(self.phase), self.signer)
        cert = b"\x00" if self.certificate is None else b"\x01" + self.certificate.encoding
        return head + _lp(self.payload) + cert

    @cached_property
    def wire(self) -> bytes:
        return self.body + _lp(self.signature)

    @cached_property
    def digest(self) -> bytes:
        return hashlib.sha256(self.wire).digest()

    @cached_property
    def slot(self) -> tuple:
        extra = self.payload if self.kind in PER_VALUE_KINDS else b""
        return (self.signer, int(self.kind), self.instance, self.round, int(self.phase), extra)

    def units(self) -> int:
        """Signatures carried on the wire: this one plus the certificate members."""
        if self.certificate is None:
            return 1
        return 1 + len(self.certificate.messages)

    def __eq__(self, other):
        return isinstance(other, SignedMessage) and self.wire == other.wire

    def __hash__(self):
        return hash(self.digest)


def flatten(msg: SignedMessage, known: Optional[set] = None) -> list[SignedMessage]:
    """
    The message followed by every distinct message nested in its certificates.
    Digests in `known` are skipped together with their subtrees; `known` is
    not modified.
    """
    known = known if known is not None else set()
    visited: set[bytes] = set()
    out = []
    stack = [msg]
    while stack:
        m = stack.pop()
        if m.digest in known or m.digest in visited:
            continue
        visited.add(m.digest)
        out.append(m)
        if m.certificate is not None:
            stack.extend(reversed(m.certificate.messages))
    return out


# ---------------------------------------------------------------------------
# Signature schemes
# ---------------------------------------------------------------------------

class SignatureScheme(Protocol):
    name: str

    def keygen(self, seed: bytes) -> KeyPair: ...

    def sign_bytes(self, key: KeyPair, data: bytes) -> bytes: ...

    def verify_bytes(self, public: bytes, data: bytes, signature: bytes) -> bool: ...


class Ed25519Scheme:
    name = "ed25519"

    def __init__(self):
        self._private: dict[bytes, Ed25519PrivateKey] = {}
        self._public: dict[bytes, Ed25519PublicKey] = {}

    def keygen(self, seed: bytes) -> KeyPair:
        secret = hashlib.sha256(b"ed25519:" + seed).digest()
        sk = Ed25519PrivateKey.from_private_bytes(secret)
        public = sk.public_key().public_bytes(
            encoding=serialization.Encoding.Raw,
            format=serialization.PublicFormat.Raw,
        )
        self._private[secret] = sk
        return KeyPair(secret=secret, public=public, bits=256)

    def sign_bytes(self, key: KeyPair, data: bytes) -> bytes:
        sk = self._private.get(key.secret)
        if sk is None:
            try:
                sk = Ed25519PrivateKey.from_private_bytes(key.secret)
            except ValueError as e:
                raise SigningError(f"malformed secret key: {e}") from e
            self._private[key.secret] = sk
        return sk.sign(data)

    def verify_bytes(self, public: bytes, data: bytes, signature: bytes) -> bool:
        try:
            pk = self._public.get(public)
            if pk is None:
                pk = Ed25519PublicKey.from_public_bytes(public)
                self._public[public] = pk
            pk.verify(signature, data)
            return True
        except (InvalidSignature, ValueError, TypeError):
            return False


class KeyedHashScheme:
    """HMAC-SHA256 with a per-run registry of secrets.

    Only the simulator holds the registry; protocol code sees public keys only.
    """
    name = "keyed-hash"

    def __init__(self):
        self._registry: dict[bytes, bytes] = {}

    def keygen(self, seed: bytes) -> KeyPair:
        secret = hashlib.sha256(b"keyed-hash:" + seed).digest()
        public = hashlib.sha256(b"public:" + secret).digest()
        self._registry[public] = secret
        return KeyPair(secret=secret, public=public, bits=256)

    def sign_bytes(self, key: KeyPair, data: bytes) -> bytes:
        return hmac.new(key.secret, data, hashlib.sha256).digest()

    def verify_bytes(self, public: bytes, data: bytes, signature: bytes) -> bool:
        secret = self._registry.get(public)
        if secret is None or not isinstance(signature, (bytes, bytearray)):
            return False
        expected = hmac.new(secret, data, hashlib.sha256).digest()
        return hmac.compare_digest(expected, bytes(signature))


def make_scheme(name: str) -> SignatureScheme:
    if name == "ed25519":
        return Ed25519Scheme()
    if name == "keyed-hash":
        return KeyedHashScheme()
    raise SigningError(f"unknown signature scheme {name!r}")


def sign(scheme: SignatureScheme, key: KeyPair, msg: SignedMessage) -> SignedMessage:
    if msg.signature:
        raise SigningError("message already signed")
    return replace(msg, signature=scheme.sign_bytes(key, msg.body))


def verify(scheme: SignatureScheme, msg: SignedMessage, public: bytes) -> bool:
    try:
        return scheme.verify_bytes(public, msg.body, msg.signature)
    except (TypeError, ValueError, struct.error, AttributeError):
        return False


class Pki:
    """Public keys of every process of a run, with a verification cache."""

    def __init__(self, scheme: SignatureScheme, keys: dict[ProcessId, bytes]):
        self.scheme = scheme
        self.keys = dict(keys)
        self._ok: set[bytes] = set()
        self._bad: set[bytes] = set()
        self.verifications = 0

    @classmethod
    def generate(cls, scheme: SignatureScheme, ids: Iterable[ProcessId], seed: int):
        pairs = {pid: scheme.keygen(f"{seed}:{pid}".encode()) for pid in ids}
        return cls(scheme, {pid: kp.public for pid, kp in pairs.items()}), pairs

    def add(self, pid: ProcessId, public: bytes):
        self.keys[pid] = public

    def verify(self, msg: SignedMessage) -> bool:
        try:
            digest = msg.digest
        except (TypeError, ValueError, struct.error, AttributeError):
            return False
        if digest in self._ok:
            return True
        if digest in self._bad:
            return False
        public = self.keys.get(msg.signer)
        self.verifications += 1
        ok = public is not None and verify(self.scheme, msg, public)
        (self._ok if ok else self._bad).add(digest)
        return ok

    def verify_all(self, msg: SignedMessage) -> bool:
        """Outer signature and every nested certificate signature."""
        return all(self.verify(m) for m in flatten(msg))


# ---------------------------------------------------------------------------
# Conflicts and proofs of fraud
# ---------------------------------------------------------------------------

def conflicting(a: SignedMessage, b: SignedMessage) -> bool:
    return (
        a.kind in CONFLICT_KINDS
        and a.slot == b.slot
        and a.payload != b.payload
    )


@dataclass(frozen=True, eq=False)
class ProofOfFraud:
    first: SignedMessage
    second: SignedMessage

    @classmethod
    def of(cls, a: SignedMessage, b: SignedMessage) -> "ProofOfFraud":
        if b.wire < a.wire:
            a, b = b, a
        return cls(first=a, second=b)

    @property
    def accused(self) -> ProcessId:
        return self.first.signer

    @property
    def key(self) -> tuple:
        m = self.first
        return (m.signer, int(m.kind), m.instance, m.round, int(m.phase))

    def __eq__(self, other):
        return isinstance(other, ProofOfFraud) and self.key == other.key

    def __hash__(self):
        return hash(self.key)


def verify_pof(pof: ProofOfFraud, pki: Pki) -> bool:
    try:
        a, b = pof.first, pof.second
        return (
            a.signer == b.signer
            and conflicting(a, b)
            and pki.verify(a)
            and pki.verify(b)
        )
    except (AttributeError, TypeError):
        return False


def verify_pofs(pofs: Iterable[ProofOfFraud], pki: Pki) -> bool:
    return all(verify_pof(p, pki) for p in pofs)


class MessageStore:
    """Append-only store of verified messages, first message kept per slot."""

    def __init__(self):
        self._by_slot: dict[tuple, SignedMessage] = {}
        self._pof_keys: set[tuple] = set()
        self.pofs: list[ProofOfFraud] = []

    def __len__(self):
        return len(self._by_slot)

    def __contains__(self, msg: SignedMessage) -> bool:
        held = self._by_slot.get(msg.slot)
        return held is not None and held == msg

    def get(self, slot: tuple) -> Optional[SignedMessage]:
        return self._by_slot.get(slot)

    def add(self, msg: SignedMessage) -> Optional[ProofOfFraud]:
        """Store msg; return a fresh PoF if it conflicts with the stored one."""
        if msg.kind not in CONFLICT_KINDS:
            return None
        held = self._by_slot.get(msg.slot)
        if held is None:
            self._by_slot[msg.slot] = msg
            return None
        if held.payload == msg.payload:
            return None
        pof = ProofOfFraud.of(held, msg)
        if pof.key in self._pof_keys:
            return None
        self._pof_keys.add(pof.key)
        self.pofs.append(pof)
        return pof

    def accused(self) -> set[ProcessId]:
        return {p.accused for p in self.pofs}


def check_conflicts(new: Iterable[SignedMessage], store: MessageStore) -> list[ProofOfFraud]:
    """Add already-verified messages to store and return the PoFs they reveal."""
    found = []
    for msg in new:
        pof = store.add(msg)
        if pof is not None:
            logger.debug("conflict by p%d on %s r%d", pof.accused, msg.kind.name, msg.round)
            found.append(pof)
    return found
