"""Identities, keys and signatures.

Stands in for a membership service provider: every participant (device,
endorser, orderer, admin) is a named principal holding an Ed25519 keypair
derived deterministically from a 32-byte seed.
"""
from __future__ import annotations

import enum
import os
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterator

import nacl.exceptions
import nacl.signing

from .errors import DuplicateId, MalformedSignature, UnknownIdentity

SEED_SIZE = 32
PUBLIC_KEY_SIZE = 32
SIGNATURE_SIZE = 64


class Role(str, enum.Enum):
    DEVICE = "device"
    ENDORSER = "endorser"
    ORDERER = "orderer"
    ADMIN = "admin"


@dataclass(frozen=True)
class Identity:
    id: str
    role: Role
    public_key: bytes
    secret_key: bytes = field(repr=False)


@dataclass(frozen=True)
class Signature:
    signer_id: str
    bytes: bytes


def _keypair(seed: bytes) -> tuple[bytes, bytes]:
    if len(seed) != SEED_SIZE:
        raise ValueError(f"seed must be {SEED_SIZE} bytes, got {len(seed)}")
    sk = nacl.signing.SigningKey(seed)
    return bytes(sk.verify_key), bytes(sk)


def derive_identity(id: str, role: Role | str, seed: bytes) -> Identity:
    """Build an identity without registering it anywhere."""
    public_key, secret_key = _keypair(seed)
    return Identity(id=id, role=Role(role), public_key=public_key, secret_key=secret_key)


@lru_cache(maxsize=4096)
def _signing_key(secret_key: bytes) -> nacl.signing.SigningKey:
    return nacl.signing.SigningKey(secret_key)


def sign(identity: Identity, message: bytes) -> Signature:
    sig = _signing_key(identity.secret_key).sign(bytes(message)).signature
    return Signature(identity.id, bytes(sig))


@lru_cache(maxsize=4096)
def _verify_key(public_key: bytes) -> nacl.signing.VerifyKey:
    return nacl.signing.VerifyKey(public_key)


@lru_cache(maxsize=1 << 17)
def _verify(public_key: bytes, message: bytes, sig: bytes) -> bool:
    # Pure in its arguments, so memoising is transparent; a tampered message or
    # signature is a different key and gets checked for real.
    try:
        _verify_key(public_key).verify(message, sig)
    except (nacl.exceptions.BadSignatureError, nacl.exceptions.ValueError, ValueError):
        return False
    return True


def verify(public_key: bytes, message: bytes, sig: Signature | bytes) -> bool:
    """True iff ``sig`` was produced over ``message`` by the key behind ``public_key``.

    Raises:
        MalformedSignature: the signature is not exactly 64 bytes.
    """
    raw = sig.bytes if isinstance(sig, Signature) else sig
    if len(raw) != SIGNATURE_SIZE:
        raise MalformedSignature(f"signature must be {SIGNATURE_SIZE} bytes, got {len(raw)}")
    if len(public_key) != PUBLIC_KEY_SIZE:
        return False
    return _verify(bytes(public_key), bytes(message), bytes(raw))


class Membership:
    """Registry of identities for one network.

    Single writer during setup; read-only afterwards.
    """

    def __init__(self):
        self._by_id: dict[str, Identity] = {}

    def create_identity(self, id: str, role: Role | str, seed: bytes) -> Identity:
        if id in self._by_id:
            raise DuplicateId(id)
        ident = derive_identity(id, role, seed)
        self._by_id[id] = ident
        return ident

    def generate_identity(self, id: str, role: Role | str) -> Identity:
        return self.create_identity(id, role, os.urandom(SEED_SIZE))

    def add(self, identity: Identity) -> Identity:
        if identity.id in self._by_id:
            raise DuplicateId(identity.id)
        self._by_id[identity.id] = identity
        return identity

    def get(self, id: str) -> Identity:
        try:
            return self._by_id[id]
        except KeyError:
            raise UnknownIdentity(id) from None

    def public_key(self, id: str) -> bytes:
        return self.get(id).public_key

    def role_of(self, id: str) -> Role | None:
        ident = self._by_id.get(id)
        return ident.role if ident else None

    def verify(self, message: bytes, sig: Signature) -> bool:
        """Verify against the registered key of ``sig.signer_id``; unknown signers fail."""
        ident = self._by_id.get(sig.signer_id)
        if ident is None:
            return False
        return verify(ident.public_key, message, sig)

    def __contains__(self, id: object) -> bool:
        return id in self._by_id

    def __iter__(self) -> Iterator[Identity]:
        return iter(self._by_id.values())

    def __len__(self) -> int:
        return len(self._by_id)
