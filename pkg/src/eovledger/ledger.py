"""Validation phase, committed world state and the append-only ledger file.

World state is multi-versioned: every write is kept with the (block, tx)
version that produced it, so a snapshot is just a block-number bound and
stays valid after later commits.

Ledger file layout::

    b"EOVL" u16 format-version
    repeated: u32 length | canonical block bytes | sha256(block bytes)
"""
from __future__ import annotations

import bisect
import enum
import os
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Iterator, Optional, Sequence, Union

from .chaincode import ChaincodeArgs, TxType
from .codec import DIGEST_SIZE, Writer, digest
from .endorsement import (
    Endorsement,
    Policy,
    TransactionEnvelope,
    assemble,
    check_proposal,
    envelope_signed_bytes,
    evaluate_policy,
    make_proposal,
    parse_policy,
    policy_id_for,
    rwset_digest,
)
from .errors import (
    BadLedgerFormat,
    BrokenChain,
    DecodeError,
    EovError,
    LedgerError,
    StorageFailure,
    TruncatedFile,
)
from .membership import Identity, Membership, Role, sign
from .ordering import GENESIS_PREV, Block, BlockHeader, data_hash, decode_block, encode_block, make_block
from .rwset import Version, WriteSet

MAGIC = b"EOVL"
FORMAT_VERSION = 1
_FILE_HEADER = MAGIC + FORMAT_VERSION.to_bytes(2, "big")


class ValidationFlag(enum.IntEnum):
    VALID = 0
    INVALID_POLICY = 1
    INVALID_MVCC_CONFLICT = 2
    INVALID_BAD_SIGNATURE = 3
    INVALID_DUPLICATE = 4


# ---------------------------------------------------------------------------
# World state
# ---------------------------------------------------------------------------


class WorldState:
    """Versioned key-value store; one committer, any number of snapshot readers."""

    def __init__(self):
        self._hist: dict[str, list[tuple[Version, Optional[bytes]]]] = {}
        self._keys: list[str] = []
        self.height = 0  # number of committed blocks
        self.tip: Optional[BlockHeader] = None
        self.tx_ids: set[bytes] = set()

    @property
    def last_block(self) -> int:
        return self.height - 1

    def current(self, key: str) -> Optional[tuple[bytes, Version]]:
        hist = self._hist.get(key)
        if not hist:
            return None
        version, value = hist[-1]
        return None if value is None else (value, version)

    def version(self, key: str) -> Optional[Version]:
        hit = self.current(key)
        return hit[1] if hit else None

    def apply(self, writeset: WriteSet, version: Version) -> None:
        for key, value in writeset:
            hist = self._hist.get(key)
            if hist is None:
                self._hist[key] = [(version, value)]
                bisect.insort(self._keys, key)
            else:
                hist.append((version, value))

    def snapshot(self) -> "Snapshot":
        return Snapshot(self, self.height - 1)

    def items(self) -> dict[str, tuple[bytes, Version]]:
        """Live entries at the current height."""
        out = {}
        for key in self._keys:
            hit = self.current(key)
            if hit is not None:
                out[key] = hit
        return out

    def keys_with_prefix(self, prefix: str) -> list[str]:
        lo = bisect.bisect_left(self._keys, prefix)
        hi = bisect.bisect_left(self._keys, prefix + "\U0010ffff")
        return self._keys[lo:hi]

    def state_digest(self) -> bytes:
        w = Writer()
        for key, (value, version) in self.items().items():
            w.text(key).blob(value).u64(version.block_no).u32(version.tx_index)
        return digest(w.getvalue())

    def __eq__(self, other):
        if not isinstance(other, WorldState):
            return NotImplemented
        return self.items() == other.items() and self.height == other.height and self.tip == other.tip


class Snapshot:
    """Immutable view of state as of block ``limit`` (inclusive)."""

    __slots__ = ("_state", "limit")

    def __init__(self, state: WorldState, limit: int):
        self._state = state
        self.limit = limit

    def get(self, key: str) -> Optional[tuple[bytes, Version]]:
        hist = self._state._hist.get(key)
        if not hist:
            return None
        for version, value in reversed(hist):
            if version.block_no <= self.limit:
                return None if value is None else (value, version)
        return None

    def range(self, prefix: str) -> list[tuple[str, bytes, Version]]:
        out = []
        for key in self._state.keys_with_prefix(prefix):
            hit = self.get(key)
            if hit is not None:
                out.append((key, hit[0], hit[1]))
        return out


def snapshot(state: WorldState) -> Snapshot:
    return state.snapshot()


# ---------------------------------------------------------------------------
# Genesis
# ---------------------------------------------------------------------------


def genesis_envelope(admin: Identity, channel_id: str, writeset: WriteSet) -> TransactionEnvelope:
    """Block 0's single transaction: the registry bootstrap signed by an admin."""
    if admin.role is not Role.ADMIN:
        raise ValueError("genesis must be signed by an admin")
    proposal = make_proposal(admin, channel_id, ChaincodeArgs(TxType.GENESIS), bytes(8))
    d = rwset_digest((), writeset, b"")
    endorsement = Endorsement(proposal.tx_id, d, (), writeset, b"", admin.id, sign(admin, proposal.tx_id + d))
    return assemble(proposal, [endorsement], admin)


def genesis_block(admin: Identity, channel_id: str, writeset: WriteSet) -> Block:
    return make_block(0, GENESIS_PREV, [genesis_envelope(admin, channel_id, writeset)])


# ---------------------------------------------------------------------------
# Validation and commit
# ---------------------------------------------------------------------------


@lru_cache(maxsize=1024)
def _cached_policy(text: str) -> Policy:
    return parse_policy(text)


def _check_extends(block: Block, state: WorldState) -> None:
    if block.header.number != state.height:
        raise BrokenChain(f"block {block.header.number} does not follow height {state.height}")
    expected_prev = GENESIS_PREV if state.tip is None else state.tip.digest
    if block.header.prev_hash != expected_prev:
        raise BrokenChain(f"block {block.header.number} prev_hash does not match tip")
    if block.header.data_hash != data_hash(block.envelopes):
        raise BrokenChain(f"block {block.header.number} data_hash does not match its envelopes")


def _signatures_ok(env: TransactionEnvelope, membership: Membership) -> bool:
    try:
        check_proposal(env.proposal, membership)
    except EovError:
        return False
    if env.assembled_sig.signer_id != env.proposal.client_id:
        return False
    if not membership.verify(envelope_signed_bytes(env), env.assembled_sig):
        return False
    first = env.endorsements[0]
    if not first.contents_ok():
        return False
    ids = set()
    for e in env.endorsements:
        if e.tx_id != env.tx_id or e.rwset_digest != first.rwset_digest or e.endorser_id in ids:
            return False
        ids.add(e.endorser_id)
        if not e.signature_ok(membership):
            return False
    return True


def _genesis_ok(env: TransactionEnvelope, membership: Membership) -> bool:
    p = env.proposal
    if p.args.tx_type is not TxType.GENESIS or membership.role_of(p.client_id) is not Role.ADMIN:
        return False
    try:
        check_proposal(p, membership)
    except EovError:
        return False
    if len(env.endorsements) != 1 or env.readset:
        return False
    e = env.endorsements[0]
    return (
        e.endorser_id == p.client_id
        and e.contents_ok()
        and membership.verify(e.tx_id + e.rwset_digest, e.endorser_sig)
        and membership.verify(envelope_signed_bytes(env), env.assembled_sig)
    )


def validate_block(block: Block, state: WorldState, membership: Membership) -> list[ValidationFlag]:
    """Flag every envelope of ``block`` against ``state``.

    Per envelope, in order: signatures and endorsement policy, then MVCC
    read-version check, then duplicate tx id. Writes of envelopes already
    found valid in this block are visible to the checks of later ones.
    ``state`` is not modified.

    Raises:
        BrokenChain: the header does not extend the committed tip.
    """
    _check_extends(block, state)
    if block.header.number == 0:
        return [
            ValidationFlag.VALID if _genesis_ok(env, membership) else ValidationFlag.INVALID_BAD_SIGNATURE
            for env in block.envelopes
        ]

    overlay: dict[str, tuple[Optional[bytes], Version]] = {}
    seen: set[bytes] = set()

    def lookup_version(key: str) -> Optional[Version]:
        if key in overlay:
            value, version = overlay[key]
            return None if value is None else version
        return state.version(key)

    def lookup_value(key: str) -> Optional[bytes]:
        if key in overlay:
            return overlay[key][0]
        hit = state.current(key)
        return hit[0] if hit else None

    flags = []
    for idx, env in enumerate(block.envelopes):
        flag = ValidationFlag.VALID
        if env.proposal.args.tx_type is TxType.GENESIS:
            flag = ValidationFlag.INVALID_POLICY
        elif not _signatures_ok(env, membership):
            flag = ValidationFlag.INVALID_BAD_SIGNATURE
        else:
            pid = policy_id_for(env.proposal.args, env.proposal.client_id, lookup_value)
            text = lookup_value("policy/" + pid) if pid is not None else None
            signers = {e.endorser_id for e in env.endorsements}
            if text is None or not evaluate_policy(_cached_policy(text.decode()), signers):
                flag = ValidationFlag.INVALID_POLICY
        if flag is ValidationFlag.VALID:
            for key, version in env.readset:
                if lookup_version(key) != version:
                    flag = ValidationFlag.INVALID_MVCC_CONFLICT
                    break
        if flag is ValidationFlag.VALID and (env.tx_id in state.tx_ids or env.tx_id in seen):
            flag = ValidationFlag.INVALID_DUPLICATE
        if flag is ValidationFlag.VALID:
            version = Version(block.header.number, idx)
            for key, value in env.writeset:
                overlay[key] = (value, version)
        seen.add(env.tx_id)
        flags.append(flag)
    return flags


def commit(
    block: Block,
    flags: Sequence[ValidationFlag],
    state: WorldState,
    file: Optional["LedgerFile"] = None,
) -> int:
    """Apply valid write sets, append the block and advance the height.

    Returns the new height.
    """
    if len(flags) != len(block.envelopes):
        raise ValueError("one flag per envelope required")
    _check_extends(block, state)
    flags = [ValidationFlag(f) for f in flags]
    if file is not None:
        file.append(block, flags)
    for idx, (env, flag) in enumerate(zip(block.envelopes, flags)):
        if flag is ValidationFlag.VALID:
            state.apply(env.writeset, Version(block.header.number, idx))
        state.tx_ids.add(env.tx_id)
    block.validity = list(flags)
    state.tip = block.header
    state.height += 1
    return state.height


# ---------------------------------------------------------------------------
# Ledger file
# ---------------------------------------------------------------------------


class LedgerFile:
    """Append-only block store on disk."""

    def __init__(self, path: Union[str, os.PathLike], *, create: bool = True):
        self.path = Path(path)
        if create:
            try:
                with open(self.path, "wb") as fh:
                    fh.write(_FILE_HEADER)
            except OSError as exc:
                raise StorageFailure(str(exc)) from exc

    def append(self, block: Block, flags: Sequence[ValidationFlag]) -> None:
        body = encode_block(block, [int(f) for f in flags])
        record = len(body).to_bytes(4, "big") + body + digest(body)
        try:
            with open(self.path, "ab") as fh:
                fh.write(record)
        except OSError as exc:
            raise StorageFailure(str(exc)) from exc

    def records(self) -> Iterator[tuple[int, bytes, bytes]]:
        yield from iter_records(self.path.read_bytes())

    def blocks(self) -> Iterator[tuple[Block, list[ValidationFlag]]]:
        for _, body, _ in self.records():
            block, codes = decode_block(body)
            flags = [ValidationFlag(c) for c in codes]
            block.validity = flags
            yield block, flags


def iter_records(raw: bytes) -> Iterator[tuple[int, bytes, bytes]]:
    """Yield (index, body, stored digest) per record; framing errors raise."""
    if len(raw) < len(_FILE_HEADER):
        raise TruncatedFile(f"{len(raw)} bytes is shorter than the file header")
    if raw[:4] != MAGIC:
        raise BadLedgerFormat("bad magic")
    version = int.from_bytes(raw[4:6], "big")
    if version != FORMAT_VERSION:
        raise BadLedgerFormat(f"unsupported format version {version}")
    pos, index = len(_FILE_HEADER), 0
    while pos < len(raw):
        if pos + 4 > len(raw):
            raise TruncatedFile(f"block {index}: length prefix cut short")
        length = int.from_bytes(raw[pos:pos + 4], "big")
        end = pos + 4 + length + DIGEST_SIZE
        if end > len(raw):
            raise TruncatedFile(f"block {index}: record runs past end of file")
        body = raw[pos + 4:pos + 4 + length]
        yield index, body, raw[pos + 4 + length:end]
        pos, index = end, index + 1


@dataclass(frozen=True)
class ChainReport:
    ok: bool
    blocks: int
    corrupt_block: Optional[int] = None
    reason: str = ""


def verify_chain(source: Union[str, os.PathLike, bytes, LedgerFile]) -> ChainReport:
    """Recompute every digest and hash link; report the first block that disagrees.

    Raises:
        TruncatedFile: the file is empty or a record runs past its end.
        BadLedgerFormat: wrong magic bytes or format version.
    """
    if isinstance(source, LedgerFile):
        raw = source.path.read_bytes()
    elif isinstance(source, (bytes, bytearray)):
        raw = bytes(source)
    else:
        raw = Path(source).read_bytes()

    prev: Optional[BlockHeader] = None
    count = 0
    for index, body, stored in iter_records(raw):
        count = index + 1
        if digest(body) != stored:
            return ChainReport(False, count, index, "block digest mismatch")
        try:
            block, codes = decode_block(body)
        except (DecodeError, EovError, ValueError) as exc:
            return ChainReport(False, count, index, f"undecodable block: {exc}")
        h = block.header
        if h.number != index:
            return ChainReport(False, count, index, f"block number {h.number} at position {index}")
        expected_prev = GENESIS_PREV if prev is None else prev.digest
        if h.prev_hash != expected_prev:
            return ChainReport(False, count, index, "prev_hash does not match predecessor")
        if h.data_hash != data_hash(block.envelopes):
            return ChainReport(False, count, index, "data_hash does not match envelopes")
        if any(c not in ValidationFlag._value2member_map_ for c in codes):
            return ChainReport(False, count, index, "unknown validation flag")
        prev = h
    if count == 0:
        raise TruncatedFile("ledger holds no blocks")
    return ChainReport(True, count)


def replay(
    source: Union[str, os.PathLike, LedgerFile],
    membership: Optional[Membership] = None,
) -> WorldState:
    """Rebuild world state from a ledger file.

    With ``membership`` every block is re-validated and the recomputed flags
    must match the stored ones; without it the stored flags are trusted.
    """
    lf = source if isinstance(source, LedgerFile) else LedgerFile(source, create=False)
    state = WorldState()
    for block, flags in lf.blocks():
        if membership is not None:
            fresh = validate_block(block, state, membership)
            if fresh != flags:
                raise LedgerError(f"block {block.header.number}: stored flags differ from re-validation")
        commit(block, flags, state)
    return state
