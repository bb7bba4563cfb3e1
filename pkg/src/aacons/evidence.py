"""Signed messages, certificates, proofs-of-fraud and conflict detection.

Canonical byte layout of the signed body of a message (all integers big-endian)::

    u32 signer | u8 len, tag ascii | u8 len, instance ascii | u32 round
    | value | u8 len, attachment digest

``value`` is ``b"I" + i64`` for an integer or ``b"S" + u8 count + count * u8``
for a set of bits (sorted). The attachment digest is the SHA-256 of the
signatures carried by the attached certificates and bundle, or empty. A
message stripped of its attachments therefore still verifies, which is how
votes travel inside certificates.
"""
from __future__ import annotations

import enum
import hashlib
import struct
from dataclasses import dataclass, field, replace
from typing import Iterable, Union

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey, Ed25519PublicKey

from .model import CommitteeView, ProcessId

Value = Union[int, frozenset]


class Tag(str, enum.Enum):
    INIT = "INIT"
    ECHO_RB = "ECHO_RB"
    READY_RB = "READY_RB"
    EST = "EST"
    BVECHO = "BVECHO"
    BVREADY = "BVREADY"
    COORD = "COORD"
    ECHO_BC = "ECHO_BC"
    DECIDE = "DECIDE"
    POFS = "POFS"
    RELAY = "RELAY"


# tag -> whether the round takes part in the conflict key
CONFLICT_TABLE = {
    Tag.INIT: False,
    Tag.ECHO_RB: False,
    Tag.READY_RB: False,
    Tag.ECHO_BC: True,
    Tag.EST: True,
    Tag.COORD: True,
    Tag.DECIDE: False,
}


def encode_value(value: Value) -> bytes:
    if isinstance(value, frozenset):
        bits = sorted(value)
        return b"S" + bytes([len(bits)]) + bytes(bits)
    return b"I" + struct.pack(">q", value)


def encode_body(signer: int, tag: str, instance: str, rnd: int, value: Value, digest: bytes) -> bytes:
    tb, ib = tag.encode(), instance.encode()
    return b"".join((
        struct.pack(">I", signer), bytes([len(tb)]), tb, bytes([len(ib)]), ib,
        struct.pack(">I", rnd), encode_value(value), bytes([len(digest)]), digest,
    ))


@dataclass(frozen=True)
class SignedMessage:
    signer: ProcessId
    tag: Tag
    instance: str
    round: int
    value: Value
    digest: bytes
    signature: bytes
    cert: "Certificate | None" = field(default=None, compare=False, repr=False)
    bv_cert: "Certificate | None" = field(default=None, compare=False, repr=False)
    bundle: tuple = field(default=(), compare=False, repr=False)

    def __hash__(self) -> int:
        return hash(self.signature)

    def body(self) -> bytes:
        cached = self.__dict__.get("_body")
        if cached is None:
            cached = encode_body(self.signer, self.tag.value, self.instance, self.round, self.value, self.digest)
            object.__setattr__(self, "_body", cached)
        return cached

    def stripped(self) -> "SignedMessage":
        if self.cert is None and self.bv_cert is None and not self.bundle:
            return self
        bare = self.__dict__.get("_bare")
        if bare is None:
            bare = replace(self, cert=None, bv_cert=None, bundle=())
            object.__setattr__(self, "_bare", bare)
        return bare

    def signature_count(self) -> int:
        count = 1
        for c in (self.cert, self.bv_cert):
            if c is not None:
                count += len(c.votes)
        for item in self.bundle:
            count += item.signature_count()
        return count

    def attachments_match(self) -> bool:
        return attachment_digest(self.cert, self.bv_cert, self.bundle) == self.digest


_ACCEPTED_VOTES = {Tag.BVECHO: (Tag.EST, Tag.BVECHO)}


@dataclass(frozen=True)
class Certificate:
    """Votes justifying ``value`` for (tag, instance, round)."""

    tag: Tag
    instance: str
    round: int
    value: Value
    votes: tuple[SignedMessage, ...]

    def supports(self, vote: SignedMessage) -> bool:
        return (vote.tag in _ACCEPTED_VOTES.get(self.tag, (self.tag,)) and vote.instance == self.instance
                and vote.round == self.round and vote.value == self.value)

    def digest(self) -> bytes:
        return hashlib.sha256(b"".join(v.signature for v in self.votes)).digest()


@dataclass(frozen=True)
class ProofOfFraud:
    culprit: ProcessId
    msg_a: SignedMessage
    msg_b: SignedMessage

    @classmethod
    def of(cls, a: SignedMessage, b: SignedMessage) -> "ProofOfFraud":
        a, b = sorted((a.stripped(), b.stripped()), key=lambda m: m.signature)
        return cls(a.signer, a, b)

    def signature_count(self) -> int:
        return 2


def attachment_digest(cert, bv_cert, bundle) -> bytes:
    if cert is None and bv_cert is None and not bundle:
        return b""
    h = hashlib.sha256()
    for c in (cert, bv_cert):
        h.update(b"C" + (c.digest() if c is not None else b""))
    for item in bundle:
        if isinstance(item, ProofOfFraud):
            h.update(b"P" + item.msg_a.signature + item.msg_b.signature)
        else:
            h.update(b"M" + item.signature)
    return h.digest()


# ---------------------------------------------------------------- signatures


class BlakeTagScheme:
    """Deterministic keyed tags (BLAKE2b MAC); the key registry plays the PKI."""

    name = "blake"

    def __init__(self, lam: int = 32):
        if not 1 <= lam <= 64:
            raise ValueError("lambda must be within 1..64 bytes")
        self.lam = lam

    def keypair(self, pid: int, seed: bytes) -> tuple[bytes, bytes]:
        secret = hashlib.sha256(b"aacons-key" + seed + struct.pack(">I", pid)).digest()
        return secret, secret

    def sign(self, secret: bytes, data: bytes) -> bytes:
        return hashlib.blake2b(data, key=secret, digest_size=self.lam).digest()

    def verify(self, public: bytes, data: bytes, signature: bytes) -> bool:
        return hashlib.blake2b(data, key=public, digest_size=self.lam).digest() == signature


class Ed25519Scheme:
    name = "ed25519"
    lam = 64

    def keypair(self, pid: int, seed: bytes):
        raw = hashlib.sha256(b"aacons-ed" + seed + struct.pack(">I", pid)).digest()
        private = Ed25519PrivateKey.from_private_bytes(raw)
        return private, private.public_key()

    def sign(self, secret: Ed25519PrivateKey, data: bytes) -> bytes:
        return secret.sign(data)

    def verify(self, public: Ed25519PublicKey, data: bytes, signature: bytes) -> bool:
        try:
            public.verify(signature, data)
        except InvalidSignature:
            return False
        return True


def make_scheme(name: str, lam: int = 32):
    if name == "blake":
        return BlakeTagScheme(lam)
    if name == "ed25519":
        return Ed25519Scheme()
    raise ValueError(f"unknown signature scheme {name!r}")


class Signer:
    """Signing capability for exactly one process."""

    def __init__(self, pid: ProcessId, scheme, secret):
        self.pid = pid
        self._scheme = scheme
        self._secret = secret

    def sign(self, tag: Tag, instance: str, rnd: int, value: Value, cert=None, bv_cert=None,
             bundle: tuple = ()) -> SignedMessage:
        digest = attachment_digest(cert, bv_cert, bundle)
        body = encode_body(self.pid, tag.value, instance, rnd, value, digest)
        msg = SignedMessage(self.pid, tag, instance, rnd, value, digest, self._scheme.sign(self._secret, body),
                            cert, bv_cert, bundle)
        object.__setattr__(msg, "_body", body)
        return msg


class KeyRing:
    """Public verification material for the whole committee."""

    def __init__(self, n: int, scheme=None, seed: bytes = b""):
        self.scheme = scheme or BlakeTagScheme()
        self._secrets = {}
        self._public = {}
        for pid in range(n):
            self._secrets[pid], self._public[pid] = self.scheme.keypair(pid, seed)
        self._cache: dict[tuple[bytes, bytes], bool] = {}

    @property
    def lam(self) -> int:
        return self.scheme.lam

    def signer(self, pid: ProcessId) -> Signer:
        return Signer(pid, self.scheme, self._secrets[pid])

    def verify(self, msg: SignedMessage) -> bool:
        # the same message object reaches every process, so remember who already checked it
        if msg.__dict__.get("_checked_by") is self:
            return True
        key = (msg.signature, msg.body())
        ok = self._cache.get(key)
        if ok is None:
            public = self._public.get(msg.signer)
            ok = public is not None and self.scheme.verify(public, key[1], msg.signature)
            self._cache[key] = ok
        if ok:
            object.__setattr__(msg, "_checked_by", self)
        return ok

    def verify_full(self, msg: SignedMessage) -> bool:
        """Signature plus consistency of the attachments with the signed digest."""
        if msg.__dict__.get("_full_by") is self:
            return True
        ok = self.verify(msg) and msg.attachments_match()
        if ok:
            object.__setattr__(msg, "_full_by", self)
        return ok


def sign(signer: Signer, tag: Tag, instance: str, rnd: int, payload: Value, **attachments) -> SignedMessage:
    return signer.sign(tag, instance, rnd, payload, **attachments)


# ------------------------------------------------------------------ conflicts


def conflict_key(m: SignedMessage):
    with_round = CONFLICT_TABLE.get(m.tag)
    if with_round is None:
        return None
    return (m.signer, m.tag, m.instance, m.round if with_round else None)


def conflicts(a: SignedMessage, b: SignedMessage) -> bool:
    ka = conflict_key(a)
    return ka is not None and ka == conflict_key(b) and a.value != b.value


def verify_pofs(pofs: Iterable[ProofOfFraud], keyring: KeyRing) -> bool:
    for p in pofs:
        if not (p.msg_a.signer == p.msg_b.signer == p.culprit):
            return False
        if not (keyring.verify(p.msg_a) and keyring.verify(p.msg_b)):
            return False
        if not conflicts(p.msg_a, p.msg_b):
            return False
    return True


class MessageStore:
    """Append-only store of every signed message a process has seen."""

    def __init__(self):
        self._seen: dict[bytes, SignedMessage] = {}
        self._by_key: dict[tuple, list[SignedMessage]] = {}

    def __contains__(self, msg: SignedMessage) -> bool:
        return msg.signature in self._seen

    def __len__(self) -> int:
        return len(self._seen)

    def messages(self):
        return self._seen.values()

    def add(self, msg: SignedMessage) -> bool:
        if msg.signature in self._seen:
            return False
        self._seen[msg.signature] = msg
        key = conflict_key(msg)
        if key is not None:
            self._by_key.setdefault(key, []).append(msg)
        return True

    def check_conflicts(self, incoming: Iterable[SignedMessage]) -> list[ProofOfFraud]:
        pofs = []
        for m in incoming:
            if m.signature in self._seen:
                continue
            key = conflict_key(m)
            if key is not None:
                for s in self._by_key.get(key, ()):
                    if s.value != m.value:
                        pofs.append(ProofOfFraud.of(s, m))
                        break
            self.add(m)
        return pofs


def _supporters(cert: Certificate, keyring: KeyRing) -> frozenset | None:
    """Distinct signers of a well-formed certificate, or None if any vote is bad. Cached per keyring."""
    cached = cert.__dict__.get("_supporters")
    if cached is not None and cached[0] is keyring:
        return cached[1]
    signers = set()
    for vote in cert.votes:
        if not cert.supports(vote) or not keyring.verify(vote):
            signers = None
            break
        signers.add(vote.signer)
    result = frozenset(signers) if signers is not None else None
    object.__setattr__(cert, "_supporters", (keyring, result))
    return result


def certificate_valid(cert: Certificate | None, view: CommitteeView, keyring: KeyRing) -> bool:
    if cert is None:
        return False
    signers = _supporters(cert, keyring)
    if signers is None:
        return False
    return len(signers - view.removed) >= view.h
