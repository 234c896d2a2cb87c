"""Execution phase: proposals, endorsements, policies and envelope assembly.

Wire format of an envelope (all integers big-endian, blobs u32-prefixed)::

    proposal   tx_id[32] channel args client_id nonce[8] metadata client_sig
    results    readset writeset response rwset_digest[32]
    endorsers  u16 count, then (endorser_id, sig[64]) each
    assembled  client signature over everything above

Every endorsement in an envelope carries the same results, so they are
written once and shared on decode.
"""
from __future__ import annotations

import itertools
import re
from dataclasses import dataclass, field
from typing import Iterable, Sequence, Union

from .chaincode import ChaincodeArgs, DeviceRecord, StateView, TxType, execute
from .codec import DIGEST_SIZE, Reader, Writer, digest
from .errors import (
    BadClientSignature,
    BadEndorserSignature,
    ChaincodeError,
    ChaincodeRejection,
    DecodeError,
    DivergentResults,
    MalformedProposal,
    NotEndorser,
    PolicySyntaxError,
    PolicyUnsatisfied,
)
from .membership import SIGNATURE_SIZE, Identity, Membership, Role, Signature, sign
from .rwset import (
    ReadSet,
    WriteSet,
    read_readset,
    read_writeset,
    write_readset,
    write_writeset,
)

NONCE_SIZE = 8

# ---------------------------------------------------------------------------
# Policies
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Principal:
    endorser_id: str

    def __str__(self) -> str:
        return self.endorser_id


@dataclass(frozen=True)
class And:
    children: tuple

    def __str__(self) -> str:
        return f"and({', '.join(map(str, self.children))})"


@dataclass(frozen=True)
class Or:
    children: tuple

    def __str__(self) -> str:
        return f"or({', '.join(map(str, self.children))})"


@dataclass(frozen=True)
class OutOf:
    n: int
    children: tuple

    def __post_init__(self):
        if not 1 <= self.n <= len(self.children):
            raise PolicySyntaxError(f"outof({self.n}, ...) needs 1 <= n <= {len(self.children)}")

    def __str__(self) -> str:
        return f"outof({self.n}, {', '.join(map(str, self.children))})"


Policy = Union[Principal, And, Or, OutOf]


def evaluate_policy(policy: Policy, signers) -> bool:
    if isinstance(policy, Principal):
        return policy.endorser_id in signers
    if isinstance(policy, And):
        return all(evaluate_policy(c, signers) for c in policy.children)
    if isinstance(policy, Or):
        return any(evaluate_policy(c, signers) for c in policy.children)
    if isinstance(policy, OutOf):
        hits = 0
        for c in policy.children:
            if evaluate_policy(c, signers):
                hits += 1
                if hits >= policy.n:
                    return True
        return False
    raise TypeError(f"not a policy: {policy!r}")


def principals(policy: Policy) -> list[str]:
    """Distinct endorser ids mentioned in ``policy``, in first-seen order."""
    if isinstance(policy, Principal):
        return [policy.endorser_id]
    out: list[str] = []
    for c in policy.children:
        for p in principals(c):
            if p not in out:
                out.append(p)
    return out


def minimal_signer_sets(policy: Policy) -> list[tuple[str, ...]]:
    """All inclusion-minimal endorser sets satisfying ``policy``, smallest first."""
    ids = principals(policy)
    found: list[frozenset] = []
    for size in range(1, len(ids) + 1):
        for combo in itertools.combinations(ids, size):
            s = frozenset(combo)
            if any(f <= s for f in found):
                continue
            if evaluate_policy(policy, s):
                found.append(s)
    return [tuple(i for i in ids if i in s) for s in found]


_TOKEN = re.compile(r"\s*(?:(?P<num>\d+)(?![\w.\-])|(?P<id>[A-Za-z_][\w.\-]*)|(?P<sym>[(),]))")


def _tokenize(text: str) -> list[str]:
    pos, out = 0, []
    text = text.rstrip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            raise PolicySyntaxError(f"unexpected input at {pos}: {text[pos:pos + 10]!r}")
        out.append(m.group("num") or m.group("id") or m.group("sym"))
        pos = m.end()
    return out


def parse_policy(text: str) -> Policy:
    """Parse ``expr := id | and(expr,...) | or(expr,...) | outof(n, expr,...)``."""
    tokens = _tokenize(text)
    pos = 0

    def peek():
        return tokens[pos] if pos < len(tokens) else None

    def take(expected=None):
        nonlocal pos
        tok = peek()
        if tok is None or (expected is not None and tok != expected):
            raise PolicySyntaxError(f"expected {expected or 'token'}, got {tok!r} in {text!r}")
        pos += 1
        return tok

    def expr():
        tok = take()
        if tok in "(),":
            raise PolicySyntaxError(f"unexpected {tok!r} in {text!r}")
        name = tok.lower()
        if peek() != "(":
            if tok.isdigit():
                raise PolicySyntaxError(f"bare number {tok!r} in {text!r}")
            return Principal(tok)
        if name not in ("and", "or", "outof"):
            raise PolicySyntaxError(f"unknown operator {tok!r}")
        take("(")
        n = None
        if name == "outof":
            num = take()
            if not num.isdigit():
                raise PolicySyntaxError(f"outof needs a count, got {num!r}")
            n = int(num)
            take(",")
        children = [expr()]
        while peek() == ",":
            take(",")
            children.append(expr())
        take(")")
        if name == "and":
            return And(tuple(children))
        if name == "or":
            return Or(tuple(children))
        return OutOf(n, tuple(children))

    result = expr()
    if pos != len(tokens):
        raise PolicySyntaxError(f"trailing input in {text!r}")
    return result


# ---------------------------------------------------------------------------
# Proposals and endorsements
# ---------------------------------------------------------------------------


def compute_tx_id(client_id: str, nonce: bytes, args: ChaincodeArgs) -> bytes:
    return digest(Writer().text(client_id).raw(nonce).raw(args.to_bytes()).getvalue())


def _write_sig(w: Writer, sig: Signature) -> None:
    w.text(sig.signer_id).raw(sig.bytes)


def _read_sig(r: Reader) -> Signature:
    return Signature(r.text(), r.raw(SIGNATURE_SIZE))


@dataclass(frozen=True)
class Proposal:
    tx_id: bytes
    channel_id: str
    args: ChaincodeArgs
    client_id: str
    nonce: bytes
    client_sig: Signature
    # Opaque transaction metadata (certificate material in a real deployment);
    # the workload uses it to pad envelopes to realistic sizes.
    metadata: bytes = b""

    def signed_bytes(self) -> bytes:
        return signed_proposal_bytes(self.channel_id, self.args, self.client_id, self.nonce, self.metadata)

    def encode(self, w: Writer) -> Writer:
        w.raw(self.tx_id).text(self.channel_id)
        self.args.encode(w)
        w.text(self.client_id).raw(self.nonce).blob(self.metadata)
        _write_sig(w, self.client_sig)
        return w

    @classmethod
    def decode(cls, r: Reader) -> "Proposal":
        tx_id = r.raw(DIGEST_SIZE)
        channel = r.text()
        args = ChaincodeArgs.decode(r)
        client_id = r.text()
        nonce = r.raw(NONCE_SIZE)
        metadata = r.blob()
        return cls(tx_id, channel, args, client_id, nonce, _read_sig(r), metadata)


def signed_proposal_bytes(channel_id, args, client_id, nonce, metadata=b"") -> bytes:
    w = Writer().text(channel_id)
    args.encode(w)
    return digest(w.text(client_id).raw(nonce).blob(metadata).getvalue())


def make_proposal(
    client: Identity,
    channel_id: str,
    args: ChaincodeArgs,
    nonce: bytes,
    metadata: bytes = b"",
) -> Proposal:
    if len(nonce) != NONCE_SIZE:
        raise ValueError(f"nonce must be {NONCE_SIZE} bytes")
    tx_id = compute_tx_id(client.id, nonce, args)
    sig = sign(client, signed_proposal_bytes(channel_id, args, client.id, nonce, metadata))
    return Proposal(tx_id, channel_id, args, client.id, nonce, sig, metadata)


def check_proposal(proposal: Proposal, membership: Membership) -> None:
    """Raise unless the proposal is well formed and its client signature verifies."""
    if proposal.tx_id != compute_tx_id(proposal.client_id, proposal.nonce, proposal.args):
        raise MalformedProposal("tx_id does not match contents")
    if proposal.client_sig.signer_id != proposal.client_id:
        raise BadClientSignature("signature is not from the client")
    if not membership.verify(proposal.signed_bytes(), proposal.client_sig):
        raise BadClientSignature(proposal.client_id)


def rwset_digest(readset: ReadSet, writeset: WriteSet, response: bytes) -> bytes:
    w = Writer()
    write_readset(w, readset)
    write_writeset(w, writeset)
    return digest(w.blob(response).getvalue())


def _endorsed_bytes(tx_id: bytes, rw_digest: bytes) -> bytes:
    return tx_id + rw_digest


@dataclass(frozen=True)
class Endorsement:
    tx_id: bytes
    rwset_digest: bytes
    readset: ReadSet
    writeset: WriteSet
    response: bytes
    endorser_id: str
    endorser_sig: Signature

    def signature_ok(self, membership: Membership) -> bool:
        if self.endorser_sig.signer_id != self.endorser_id:
            return False
        if membership.role_of(self.endorser_id) is not Role.ENDORSER:
            return False
        return membership.verify(_endorsed_bytes(self.tx_id, self.rwset_digest), self.endorser_sig)

    def contents_ok(self) -> bool:
        return self.rwset_digest == rwset_digest(self.readset, self.writeset, self.response)


def endorse(
    proposal: Proposal,
    state: StateView,
    endorser: Identity,
    membership: Membership,
) -> Endorsement:
    """Simulate ``proposal`` on ``state`` and sign the outcome.

    Raises:
        NotEndorser: ``endorser`` lacks the endorser role.
        BadClientSignature / MalformedProposal: the proposal does not check out.
        ChaincodeRejection: the contract refused; nothing is signed.
    """
    if endorser.role is not Role.ENDORSER:
        raise NotEndorser(endorser.id)
    check_proposal(proposal, membership)
    if proposal.args.tx_type is TxType.GENESIS:
        raise MalformedProposal("genesis transactions are not endorsed")
    role = membership.role_of(proposal.client_id) or Role.DEVICE
    try:
        readset, writeset, response = execute(proposal.args, proposal.client_id, state, role)
    except ChaincodeError as exc:
        raise ChaincodeRejection(exc) from exc
    d = rwset_digest(readset, writeset, response)
    sig = sign(endorser, _endorsed_bytes(proposal.tx_id, d))
    return Endorsement(proposal.tx_id, d, readset, writeset, response, endorser.id, sig)


# ---------------------------------------------------------------------------
# Envelopes
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TransactionEnvelope:
    proposal: Proposal
    endorsements: tuple[Endorsement, ...]
    assembled_sig: Signature
    # Encoding cache; not an init field so dataclasses.replace never copies stale bytes.
    _wire: bytes = field(default=b"", init=False, repr=False, compare=False)

    @property
    def tx_id(self) -> bytes:
        return self.proposal.tx_id

    @property
    def channel_id(self) -> str:
        return self.proposal.channel_id

    @property
    def readset(self) -> ReadSet:
        return self.endorsements[0].readset

    @property
    def writeset(self) -> WriteSet:
        return self.endorsements[0].writeset

    @property
    def response(self) -> bytes:
        return self.endorsements[0].response

    def to_bytes(self) -> bytes:
        if not self._wire:
            self._cache_wire(envelope_body(self.proposal, self.endorsements))
        return self._wire

    def _cache_wire(self, body: bytes) -> None:
        w = Writer().raw(body)
        _write_sig(w, self.assembled_sig)
        object.__setattr__(self, "_wire", w.getvalue())

    def signed_body(self) -> bytes:
        """The encoding the client signature covers: the wire bytes minus that signature."""
        tail = len(Writer().text(self.assembled_sig.signer_id).getvalue()) + SIGNATURE_SIZE
        return self.to_bytes()[:-tail]

    @property
    def wire_size_bytes(self) -> int:
        return len(self.to_bytes())

    @property
    def digest(self) -> bytes:
        return digest(self.to_bytes())

    @classmethod
    def from_bytes(cls, raw: bytes) -> "TransactionEnvelope":
        r = Reader(raw)
        proposal = Proposal.decode(r)
        readset = read_readset(r)
        writeset = read_writeset(r)
        response = r.blob()
        rw_digest = r.raw(DIGEST_SIZE)
        count = r.u16()
        if count == 0:
            raise DecodeError("envelope without endorsements")
        endorsements = []
        for _ in range(count):
            eid = r.text()
            sig = Signature(eid, r.raw(SIGNATURE_SIZE))
            endorsements.append(Endorsement(proposal.tx_id, rw_digest, readset, writeset, response, eid, sig))
        assembled = _read_sig(r)
        r.expect_end()
        env = cls(proposal, tuple(endorsements), assembled)
        object.__setattr__(env, "_wire", bytes(raw))
        return env


def envelope_body(proposal: Proposal, endorsements: Sequence[Endorsement]) -> bytes:
    first = endorsements[0]
    w = Writer()
    proposal.encode(w)
    write_readset(w, first.readset)
    write_writeset(w, first.writeset)
    w.blob(first.response).raw(first.rwset_digest)
    w.u16(len(endorsements))
    for e in endorsements:
        w.text(e.endorser_id).raw(e.endorser_sig.bytes)
    return w.getvalue()


def envelope_signed_bytes(env: TransactionEnvelope) -> bytes:
    return digest(env.signed_body())


def collect(
    proposal: Proposal,
    endorsements: Sequence[Endorsement],
    policy: Policy,
    client: Identity,
    membership: Membership,
) -> TransactionEnvelope:
    """Client-side assembly of an orderable transaction.

    Raises:
        BadEndorserSignature: an endorsement does not verify or is for another tx.
        DivergentResults: endorsers disagree on the execution result.
        PolicyUnsatisfied: the endorsing set does not satisfy ``policy``.
    """
    if not endorsements:
        raise PolicyUnsatisfied("no endorsements")
    for e in endorsements:
        if e.tx_id != proposal.tx_id or not e.signature_ok(membership) or not e.contents_ok():
            raise BadEndorserSignature(e.endorser_id)
    digests = {e.rwset_digest for e in endorsements}
    if len(digests) != 1:
        raise DivergentResults(f"{len(digests)} distinct results for one proposal")
    ids = [e.endorser_id for e in endorsements]
    if len(set(ids)) != len(ids):
        raise BadEndorserSignature("duplicate endorser")
    if not evaluate_policy(policy, set(ids)):
        raise PolicyUnsatisfied(f"{sorted(ids)} does not satisfy {policy}")
    return assemble(proposal, endorsements, client)


def assemble(proposal: Proposal, endorsements: Sequence[Endorsement], client: Identity) -> TransactionEnvelope:
    """Client-sign an envelope without any checks (see :func:`collect`)."""
    ordered = tuple(endorsements)
    body = envelope_body(proposal, ordered)
    env = TransactionEnvelope(proposal, ordered, sign(client, digest(body)))
    env._cache_wire(body)
    return env


def policy_id_for(args: ChaincodeArgs, client_id: str, lookup) -> str | None:
    """Policy id governing a transaction; ``lookup(key)`` returns raw state or None."""
    if args.tx_type is TxType.REGISTER:
        try:
            return DeviceRecord.from_bytes(args.payload).policy_id
        except DecodeError:
            return None
    target = client_id if args.tx_type is TxType.STORE else args.target_device
    raw = lookup("registry/" + target)
    if raw is None:
        return None
    return DeviceRecord.from_bytes(raw).policy_id
