"""Ordering phase: total order per channel and block cutting.

A block is cut when the next pending envelope would overflow
``max_block_bytes``, when ``max_block_txs`` envelopes are pending, or when
``batch_timeout`` has elapsed since the oldest pending envelope arrived.
An envelope larger than ``max_block_bytes`` on its own is emitted alone.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Optional

from .codec import DIGEST_SIZE, ZERO_DIGEST, Reader, Writer, digest
from .endorsement import TransactionEnvelope
from .errors import DecodeError, DeliveryDenied, DuplicateTxId, WrongChannel

MB = 1 << 20


@dataclass(frozen=True)
class OrderingConfig:
    max_block_bytes: int = 2 * MB
    max_block_txs: int = 10_000
    batch_timeout: float = 0.5
    channel_id: str = "home-1"
    reader_acl: frozenset = frozenset()
    # Blocks cut but not yet through consensus; once reached, submissions that
    # would trigger another cut are refused (back-pressure).
    max_inflight_blocks: int = 1

    def __post_init__(self):
        object.__setattr__(self, "reader_acl", frozenset(self.reader_acl))
        if self.max_block_bytes < 1:
            raise ValueError("max_block_bytes must be positive")
        if self.max_block_txs < 1:
            raise ValueError("max_block_txs must be >= 1")
        if not self.batch_timeout > 0:
            raise ValueError("batch_timeout must be > 0")
        if self.max_inflight_blocks < 1:
            raise ValueError("max_inflight_blocks must be >= 1")


@dataclass(frozen=True)
class BlockHeader:
    number: int
    prev_hash: bytes
    data_hash: bytes

    def to_bytes(self) -> bytes:
        return Writer().u64(self.number).raw(self.prev_hash).raw(self.data_hash).getvalue()

    @property
    def digest(self) -> bytes:
        return digest(self.to_bytes())

    @classmethod
    def decode(cls, r: Reader) -> "BlockHeader":
        return cls(r.u64(), r.raw(DIGEST_SIZE), r.raw(DIGEST_SIZE))


@dataclass
class Block:
    header: BlockHeader
    envelopes: tuple[TransactionEnvelope, ...]
    # One flag per envelope, filled in by validation; empty until then.
    validity: list = field(default_factory=list)

    @property
    def number(self) -> int:
        return self.header.number

    @property
    def size_bytes(self) -> int:
        return sum(e.wire_size_bytes for e in self.envelopes)

    def __len__(self) -> int:
        return len(self.envelopes)


def merkle_root(leaves: Iterable[bytes]) -> bytes:
    """Binary Merkle root; an odd level duplicates its last node."""
    level = list(leaves)
    if not level:
        return ZERO_DIGEST
    while len(level) > 1:
        if len(level) % 2:
            level.append(level[-1])
        level = [digest(level[i] + level[i + 1]) for i in range(0, len(level), 2)]
    return level[0]


def data_hash(envelopes: Iterable[TransactionEnvelope]) -> bytes:
    return merkle_root(e.digest for e in envelopes)


def make_block(number: int, prev_hash: bytes, envelopes: Iterable[TransactionEnvelope]) -> Block:
    envs = tuple(envelopes)
    return Block(BlockHeader(number, prev_hash, data_hash(envs)), envs)


GENESIS_PREV = ZERO_DIGEST


@dataclass
class Pending:
    envelope: TransactionEnvelope
    arrived_at: float


def cut_block(
    pending: deque,
    config: OrderingConfig,
    prev: Optional[BlockHeader],
    now: float,
) -> Optional[Block]:
    """Pop the next block off ``pending`` if a cut condition holds, else None.

    ``pending`` holds :class:`Pending` entries in arrival order. ``prev`` is
    the header the new block chains to (None for the very first block).
    """
    if not pending:
        return None
    take, total = 0, 0
    full = False
    for item in pending:
        size = item.envelope.wire_size_bytes
        if take and total + size > config.max_block_bytes:
            full = True
            break
        take += 1
        total += size
        if take >= config.max_block_txs or total >= config.max_block_bytes:
            full = True
            break
    if not full and now - pending[0].arrived_at < config.batch_timeout:
        return None
    envs = [pending.popleft().envelope for _ in range(take)]
    number = 0 if prev is None else prev.number + 1
    prev_hash = GENESIS_PREV if prev is None else prev.digest
    return make_block(number, prev_hash, envs)


class Orderer:
    """Single-node ordering service for one channel.

    ``submit`` is the linearisation point: arrival order is the total order.
    """

    def __init__(self, config: OrderingConfig, tip: Optional[BlockHeader] = None, seen=()):
        self.config = config
        self.tip = tip
        self.pending: deque[Pending] = deque()
        self.pending_bytes = 0
        self._seen: set[bytes] = set(seen)

    def submit(self, envelope: TransactionEnvelope, now: float = 0.0) -> bool:
        if envelope.channel_id != self.config.channel_id:
            raise WrongChannel(f"{envelope.channel_id!r} != {self.config.channel_id!r}")
        if envelope.tx_id in self._seen:
            raise DuplicateTxId(envelope.tx_id.hex())
        self._seen.add(envelope.tx_id)
        self.pending.append(Pending(envelope, now))
        self.pending_bytes += envelope.wire_size_bytes
        return True

    def would_cut_on(self, envelope: TransactionEnvelope) -> bool:
        """True if accepting ``envelope`` makes a size/count cut due."""
        if not self.pending:
            return envelope.wire_size_bytes >= self.config.max_block_bytes or self.config.max_block_txs == 1
        return (
            self.pending_bytes + envelope.wire_size_bytes > self.config.max_block_bytes
            or len(self.pending) + 1 >= self.config.max_block_txs
        )

    def cut(self, now: float) -> Optional[Block]:
        block = cut_block(self.pending, self.config, self.tip, now)
        if block is not None:
            self.pending_bytes -= block.size_bytes
            self.tip = block.header
        return block

    def oldest_arrival(self) -> Optional[float]:
        return self.pending[0].arrived_at if self.pending else None


def deliver(block: Block, reader: str, config: OrderingConfig) -> Block:
    if reader not in config.reader_acl:
        raise DeliveryDenied(reader)
    return block


def encode_block(block: Block, flag_codes: Iterable[int]) -> bytes:
    w = Writer().raw(block.header.to_bytes()).u32(len(block.envelopes))
    for env in block.envelopes:
        w.blob(env.to_bytes())
    codes = list(flag_codes)
    w.u32(len(codes))
    for c in codes:
        w.u8(c)
    return w.getvalue()


def decode_block(raw: bytes) -> tuple[Block, list[int]]:
    r = Reader(raw)
    header = BlockHeader.decode(r)
    envs = tuple(TransactionEnvelope.from_bytes(r.blob()) for _ in range(r.u32()))
    codes = [r.u8() for _ in range(r.u32())]
    r.expect_end()
    if len(codes) != len(envs):
        raise DecodeError("flag count does not match envelope count")
    return Block(header, envs), codes
