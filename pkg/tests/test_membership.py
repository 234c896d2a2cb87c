import itertools
import os
import random

import pytest

from eovledger.errors import DuplicateId, MalformedSignature, UnknownIdentity
from eovledger.membership import Membership, Role, Signature, derive_identity, sign, verify


def test_identity_is_deterministic_in_seed():
    a = derive_identity("dev-1", Role.DEVICE, bytes(32))
    b = derive_identity("dev-1", "device", bytes(32))
    assert a.public_key == b.public_key
    assert len(a.public_key) == 32
    assert a.role is Role.DEVICE


def test_duplicate_id_rejected():
    m = Membership()
    m.create_identity("dev-1", Role.DEVICE, bytes(32))
    with pytest.raises(DuplicateId):
        m.create_identity("dev-1", Role.ENDORSER, b"\x01" * 32)


def test_no_key_collisions_over_1000_seeds():
    rng = random.Random(1234)
    keys = {derive_identity(f"d{i}", Role.DEVICE, rng.randbytes(32)).public_key for i in range(1000)}
    assert len(keys) == 1000


def test_sign_verify_roundtrip_and_wrong_message():
    ident = derive_identity("dev-1", Role.DEVICE, os.urandom(32))
    sig = sign(ident, b"hello")
    assert verify(ident.public_key, b"hello", sig)
    assert not verify(ident.public_key, b"hellp", sig)
    assert sig.signer_id == "dev-1"


def test_cross_verification_fails_for_every_pair():
    fixture = [derive_identity(f"id{i}", Role.DEVICE, bytes([i]) * 32) for i in range(5)]
    msg = b"same message"
    sigs = {i.id: sign(i, msg) for i in fixture}
    for signer, checker in itertools.product(fixture, fixture):
        assert verify(checker.public_key, msg, sigs[signer.id]) == (signer.id == checker.id)


def test_malformed_signature_length():
    ident = derive_identity("x", Role.DEVICE, bytes(32))
    with pytest.raises(MalformedSignature):
        verify(ident.public_key, b"m", Signature("x", b"\x00" * 63))
    with pytest.raises(MalformedSignature):
        verify(ident.public_key, b"m", b"short")


def test_registry_lookup_and_verify_by_signer():
    m = Membership()
    e1 = m.create_identity("e1", Role.ENDORSER, b"\x05" * 32)
    assert "e1" in m and len(m) == 1
    assert m.role_of("e1") is Role.ENDORSER
    assert m.role_of("ghost") is None
    assert m.verify(b"m", sign(e1, b"m"))
    stranger = derive_identity("ghost", Role.DEVICE, bytes(32))
    assert not m.verify(b"m", sign(stranger, b"m"))
    with pytest.raises(UnknownIdentity):
        m.get("ghost")


def test_secret_key_not_in_repr():
    ident = derive_identity("dev-1", Role.DEVICE, b"\x07" * 32)
    assert ident.secret_key.hex() not in repr(ident)
