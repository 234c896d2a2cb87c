"""Discrete-event simulation of the smart-home network.

Devices create proposals, endorsers simulate them against committed state,
clients assemble envelopes, the orderer batches them into blocks and a single
committer validates and commits blocks in order. Everything cryptographic or
stateful is real (signatures, read/write sets, MVCC); only time is simulated,
using the costs of a :class:`~eovledger.config.NetworkModel`.

Stages and their timing:

* endorser: ``endorser_workers`` FIFO workers per endorser; a proposal is
  executed against the state committed when its worker picks it up.
* orderer: at most ``max_inflight_blocks`` blocks in consensus at a time. An
  envelope that would force a new cut while consensus is full is refused and
  counted in ``rejected_at_ordering``.
* committer: one block at a time, in block-number order.
"""
from __future__ import annotations

import hashlib
import heapq
import itertools
import statistics
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Optional

import numpy as np

from .chaincode import ChaincodeArgs, TxType, data_key
from .config import Network, NetworkModel, WorkloadSpec
from .endorsement import (
    Policy,
    Proposal,
    TransactionEnvelope,
    collect,
    endorse,
    make_proposal,
    minimal_signer_sets,
)
from .errors import ConfigInvalid, EovError
from .ledger import LedgerFile, ValidationFlag, WorldState, commit, validate_block
from .membership import Identity, Role, derive_identity
from .ordering import Block, Orderer, OrderingConfig, make_block

# Event kinds. The numeric value breaks ties between events at the same
# instant, so stage completions are seen before new work arrives.
_COMMIT, _CONSENSUS_DONE, _BLOCK_AT_PEER, _TIMEOUT, _AT_ORDERER, _COLLECT, _ENDORSE, _CREATE = range(8)

# Outcome labels used in per-transaction records.
VALID = "VALID"
REJECTED_ENDORSEMENT = "REJECTED_ENDORSEMENT"
REJECTED_ORDERING = "REJECTED_ORDERING"
PENDING = "PENDING"

# Timeout events fire exactly ``batch_timeout`` after the oldest arrival;
# this slack absorbs float rounding in that subtraction.
_CLOCK_EPS = 1e-9


class TxRecord(NamedTuple):
    tx_id: str
    type: str
    created_at_ms: float
    committed_at_ms: Optional[float]
    flag: str
    attacker: bool


@dataclass
class Metrics:
    """Outcome of one simulation run.

    ``latency_ms`` holds the creation-to-commit latency of every committed
    (valid) honest transaction, in commit order.
    """

    duration: float
    generated: int = 0
    committed_tx: int = 0
    rejected_at_endorsement: int = 0
    rejected_at_ordering: int = 0
    invalid_at_validation: int = 0
    pending: int = 0
    attacker_generated: int = 0
    attacker_rejected: int = 0
    attacker_in_blocks: int = 0
    blocks: int = 0
    block_bytes_total: int = 0
    latency_ms: list = field(default_factory=list)
    invalid_by_flag: dict = field(default_factory=dict)
    tx_records: list = field(default_factory=list, repr=False)

    @property
    def throughput_tps(self) -> float:
        return self.committed_tx / self.duration

    @property
    def block_fill(self) -> float:
        """Mean envelope bytes per block (genesis excluded)."""
        return self.block_bytes_total / self.blocks if self.blocks else 0.0

    @property
    def rejected(self) -> int:
        return self.rejected_at_endorsement + self.rejected_at_ordering

    @property
    def mean_latency_ms(self) -> float:
        return statistics.fmean(self.latency_ms) if self.latency_ms else 0.0

    @property
    def median_latency_ms(self) -> float:
        return statistics.median(self.latency_ms) if self.latency_ms else 0.0

    @property
    def p95_latency_ms(self) -> float:
        if not self.latency_ms:
            return 0.0
        return float(np.percentile(np.asarray(self.latency_ms), 95))

    def conserved(self) -> bool:
        return self.generated == (
            self.committed_tx
            + self.rejected_at_endorsement
            + self.rejected_at_ordering
            + self.invalid_at_validation
            + self.pending
        )


@dataclass
class _Tx:
    seq: int
    kind: str
    client: Identity
    created: float
    attacker: bool
    proposal: Optional[Proposal] = None
    policy: Optional[Policy] = None
    endorsers: tuple = ()
    endorsements: list = field(default_factory=list)
    failed: bool = False
    outstanding: int = 0
    ready_at: float = 0.0
    envelope: Optional[TransactionEnvelope] = None
    committed_at: Optional[float] = None
    flag: str = PENDING


def _payload(tag: int, size: int) -> bytes:
    """Deterministic filler payload; its content is irrelevant to the model."""
    if size <= 0:
        return b""
    block = hashlib.sha256(tag.to_bytes(8, "big")).digest()
    return (block * (size // len(block) + 1))[:size]


class Simulation:
    """One run of the network model. Use :func:`run` for the common case."""

    def __init__(
        self,
        workload: WorkloadSpec,
        model: NetworkModel,
        ordering: OrderingConfig,
        network: Network,
        *,
        ledger_path=None,
        record_txs: bool = False,
    ):
        if workload.device_count > len(network.devices):
            raise ConfigInvalid(
                f"workload wants {workload.device_count} devices, registry has {len(network.devices)}"
            )
        if ordering.channel_id != network.config.channel_id:
            raise ConfigInvalid("ordering channel differs from the network channel")
        self.workload = workload
        self.model = model
        self.ordering = ordering
        self.net = network
        self.record_txs = record_txs
        self.metrics = Metrics(duration=workload.duration)
        self.state = WorldState()
        self.ledger = LedgerFile(ledger_path) if ledger_path is not None else None
        self.orderer = Orderer(ordering, tip=network.genesis.header, seen=[e.tx_id for e in network.genesis.envelopes])

        self._events: list = []
        self._counter = itertools.count()
        self._txs: list[_Tx] = []
        self._workers = {eid: [0.0] * model.endorser_workers for eid in network.endorsers}
        self._inflight = 0
        self._next_commit = 1
        self._arrived_blocks: dict[int, tuple[Block, float]] = {}
        self._committer_free = 0.0

        self._devices = network.devices[: workload.device_count]
        self._device_index = {d.device_id: i for i, d in enumerate(self._devices)}
        self._by_txid: dict[bytes, _Tx] = {}
        cum = np.cumsum([workload.tx_mix[k] for k in ("store", "access")])
        self._mix_cut = (float(cum[0]), float(cum[1]))
        self._identities = [network.membership.get(d.device_id) for d in self._devices]
        groups: dict[str, list[int]] = {}
        for i, d in enumerate(self._devices):
            groups.setdefault(d.shared_key_id, []).append(i)
        self._group_of = [groups[d.shared_key_id] for d in self._devices]
        self._signer_sets = {pid: minimal_signer_sets(p) for pid, p in network.policies.items()}
        self._stored = [0] * len(self._devices)  # committed data items per device

        honest_ss, attack_ss = np.random.SeedSequence(workload.rng_seed).spawn(2)
        self._rng = np.random.default_rng(honest_ss)
        self._attack_rng = np.random.default_rng(attack_ss)
        self._attackers = [
            derive_identity(
                f"intruder-{i:03d}",
                Role.DEVICE,
                hashlib.sha256(b"intruder/%d/%d" % (workload.rng_seed, i)).digest(),
            )
            for i in range(workload.attacker_count)
        ]
        self._attack_policy = next(iter(network.policies.values()))

    # -- event plumbing ----------------------------------------------------

    def _push(self, time: float, kind: int, payload) -> None:
        heapq.heappush(self._events, (time, kind, next(self._counter), payload))

    def _hop(self, nbytes: int) -> float:
        return self.model.hop_latency + self.model.per_byte_cost * nbytes

    def _schedule_arrivals(self) -> None:
        w = self.workload
        for times, attacker in (
            (self._arrival_times(self._rng, w.arrival_rate), False),
            (self._arrival_times(self._attack_rng, w.attack_rate if self._attackers else 0.0), True),
        ):
            for t in times:
                self._push(float(t), _CREATE, attacker)

    def _arrival_times(self, rng, rate: float) -> np.ndarray:
        if rate <= 0:
            return np.empty(0)
        horizon = self.workload.duration
        n = rng.poisson(rate * horizon)
        return np.sort(rng.uniform(0.0, horizon, size=n))

    # -- main loop ---------------------------------------------------------

    def run(self) -> Metrics:
        if self.ledger is not None:
            self.ledger.append(self.net.genesis, [ValidationFlag.VALID])
        flags = validate_block(self.net.genesis, self.state, self.net.membership)
        commit(self.net.genesis, flags, self.state)
        self._schedule_arrivals()
        end = self.workload.duration + self.workload.drain
        handlers = {
            _CREATE: self._on_create,
            _ENDORSE: self._on_endorse,
            _COLLECT: self._on_collect,
            _AT_ORDERER: self._on_orderer,
            _TIMEOUT: self._on_timeout,
            _CONSENSUS_DONE: self._on_consensus_done,
            _BLOCK_AT_PEER: self._on_block_at_peer,
            _COMMIT: self._on_commit,
        }
        while self._events and self._events[0][0] <= end:
            now, kind, _, payload = heapq.heappop(self._events)
            handlers[kind](now, payload)
        self._finish()
        return self.metrics

    def _finish(self) -> None:
        m = self.metrics
        m.pending = sum(1 for tx in self._txs if tx.flag == PENDING)
        if self.record_txs:
            m.tx_records = [
                TxRecord(
                    tx.proposal.tx_id.hex(),
                    tx.kind,
                    tx.created * 1000.0,
                    None if tx.committed_at is None else tx.committed_at * 1000.0,
                    tx.flag,
                    tx.attacker,
                )
                for tx in self._txs
            ]

    # -- clients -----------------------------------------------------------

    def _on_create(self, now: float, attacker: bool) -> None:
        tx = self._new_attack_tx(now) if attacker else self._new_honest_tx(now)
        self._txs.append(tx)
        self.metrics.generated += 1
        if attacker:
            self.metrics.attacker_generated += 1
        arrive = now + self._hop(len(tx.proposal.args.payload) + len(tx.proposal.metadata))
        tx.outstanding = len(tx.endorsers)
        for eid in tx.endorsers:
            workers = self._workers[eid]
            start = max(arrive, workers[0])
            known = self.net.membership.role_of(tx.proposal.client_id) is not None
            cost = (
                self.model.endorsement_compute + self.model.endorsement_per_byte * len(tx.proposal.args.payload)
                if known
                else self.model.reject_compute
            )
            heapq.heapreplace(workers, start + cost)
            self._push(start, _ENDORSE, (tx, eid, start + cost))

    def _pick_endorsers(self, policy_id: str, tx_id: bytes) -> tuple:
        sets = self._signer_sets[policy_id]
        return sets[int.from_bytes(tx_id[:8], "big") % len(sets)]

    def _new_honest_tx(self, now: float) -> _Tx:
        w, rng = self.workload, self._rng
        dev = int(rng.integers(len(self._devices)))
        u = float(rng.random())
        kind = "store" if u < self._mix_cut[0] else "access" if u < self._mix_cut[1] else "monitor"
        pick = float(rng.random())
        nonce = rng.bytes(8)
        client = self._identities[dev]
        target = dev
        if kind != "store":
            candidates = [i for i in self._group_of[dev] if self._stored[i] > 0]
            if candidates:
                target = candidates[int(pick * len(candidates))]
            else:
                kind = "store"
        seq = len(self._txs)
        if kind == "store":
            args = ChaincodeArgs(TxType.STORE, client.id, _payload(seq, w.payload_bytes))
            pad = w.store_pad_bytes
        elif kind == "access":
            tdev = self._devices[target].device_id
            args = ChaincodeArgs(TxType.ACCESS, tdev, key_selector=data_key(tdev, self._stored[target] - 1))
            pad = w.access_pad_bytes
        else:
            args = ChaincodeArgs(TxType.MONITOR, self._devices[target].device_id)
            pad = w.access_pad_bytes
        proposal = make_proposal(client, self.net.config.channel_id, args, nonce, bytes(pad))
        policy_id = self._devices[target].policy_id
        return _Tx(
            seq,
            kind,
            client,
            now,
            False,
            proposal=proposal,
            policy=self.net.policies[policy_id],
            endorsers=self._pick_endorsers(policy_id, proposal.tx_id),
        )

    def _new_attack_tx(self, now: float) -> _Tx:
        w, rng = self.workload, self._attack_rng
        client = self._attackers[int(rng.integers(len(self._attackers)))]
        nonce = rng.bytes(8)
        args = ChaincodeArgs(TxType.STORE, client.id, _payload(len(self._txs), w.payload_bytes))
        proposal = make_proposal(client, self.net.config.channel_id, args, nonce, bytes(w.store_pad_bytes))
        sets = minimal_signer_sets(self._attack_policy)
        endorsers = sets[int.from_bytes(proposal.tx_id[:8], "big") % len(sets)]
        return _Tx(len(self._txs), "store", client, now, True, proposal=proposal, policy=self._attack_policy, endorsers=endorsers)

    # -- endorsement -------------------------------------------------------

    def _on_endorse(self, now: float, payload) -> None:
        tx, eid, done = payload
        try:
            e = endorse(tx.proposal, self.state.snapshot(), self.net.endorsers[eid], self.net.membership)
        except EovError:
            e = None
            tx.failed = True
        else:
            tx.endorsements.append(e)
        size = len(e.response) + 200 if e is not None else 64
        tx.ready_at = max(tx.ready_at, done + self._hop(size))
        tx.outstanding -= 1
        if tx.outstanding == 0:
            self._push(tx.ready_at, _COLLECT, tx)

    def _on_collect(self, now: float, tx: _Tx) -> None:
        if not tx.failed:
            # Fixed order so the envelope bytes do not depend on event timing.
            ends = sorted(tx.endorsements, key=lambda e: e.endorser_id)
            try:
                tx.envelope = collect(tx.proposal, ends, tx.policy, tx.client, self.net.membership)
            except EovError:
                tx.failed = True
        if tx.failed:
            self._reject(tx, REJECTED_ENDORSEMENT)
            return
        self._push(now + self._hop(tx.envelope.wire_size_bytes), _AT_ORDERER, tx)

    def _reject(self, tx: _Tx, flag: str) -> None:
        tx.flag = flag
        if flag == REJECTED_ENDORSEMENT:
            self.metrics.rejected_at_endorsement += 1
        else:
            self.metrics.rejected_at_ordering += 1
        if tx.attacker:
            self.metrics.attacker_rejected += 1

    # -- ordering ----------------------------------------------------------

    def _on_orderer(self, now: float, tx: _Tx) -> None:
        o = self.orderer
        if self._inflight >= self.ordering.max_inflight_blocks and o.would_cut_on(tx.envelope):
            self._reject(tx, REJECTED_ORDERING)
            return
        was_empty = not o.pending
        o.submit(tx.envelope, now)
        self._by_txid[tx.envelope.tx_id] = tx
        if was_empty:
            self._push(now + self.ordering.batch_timeout, _TIMEOUT, None)
        self._try_cut(now)

    def _on_timeout(self, now: float, _) -> None:
        self._try_cut(now)

    def _try_cut(self, now: float) -> None:
        o = self.orderer
        while self._inflight < self.ordering.max_inflight_blocks:
            block = o.cut(now + _CLOCK_EPS)
            if block is None:
                break
            self._inflight += 1
            size = block.size_bytes
            cost = self.model.ordering_block_cost + self.model.ordering_per_byte * size
            self._push(now + cost, _CONSENSUS_DONE, block)
            if o.pending:
                self._push(max(now, o.oldest_arrival() + self.ordering.batch_timeout), _TIMEOUT, None)

    def _on_consensus_done(self, now: float, block: Block) -> None:
        self._inflight -= 1
        self._push(now + self._hop(block.size_bytes), _BLOCK_AT_PEER, block)
        self._try_cut(now)

    # -- commit ------------------------------------------------------------

    def _on_block_at_peer(self, now: float, block: Block) -> None:
        self._arrived_blocks[block.number] = (block, now)
        self._start_commits()

    def _start_commits(self) -> None:
        while self._next_commit in self._arrived_blocks:
            block, arrived = self._arrived_blocks.pop(self._next_commit)
            m = self.model
            cost = m.validation_block_cost + m.validation_compute * len(block) + m.validation_per_byte * block.size_bytes
            self._committer_free = max(arrived, self._committer_free) + cost
            self._push(self._committer_free, _COMMIT, block)
            self._next_commit += 1

    def _on_commit(self, now: float, block: Block) -> None:
        flags = validate_block(block, self.state, self.net.membership)
        commit(block, flags, self.state, self.ledger)
        m = self.metrics
        m.blocks += 1
        m.block_bytes_total += block.size_bytes
        for env, flag in zip(block.envelopes, flags):
            tx = self._by_txid.pop(env.tx_id)
            tx.committed_at = now
            tx.flag = flag.name
            if tx.attacker:
                m.attacker_in_blocks += 1
            if flag is ValidationFlag.VALID:
                m.committed_tx += 1
                m.latency_ms.append((now - tx.created) * 1000.0)
                if tx.kind == "store":
                    self._stored[self._device_index[tx.client.id]] += 1
            else:
                m.invalid_at_validation += 1
                m.invalid_by_flag[flag.name] = m.invalid_by_flag.get(flag.name, 0) + 1



def run(
    workload: WorkloadSpec,
    model: NetworkModel,
    ordering: OrderingConfig,
    network: Network,
    *,
    ledger_path=None,
    record_txs: bool = False,
) -> Metrics:
    """Simulate ``workload`` on ``network``; deterministic in ``workload.rng_seed``."""
    sim = Simulation(workload, model, ordering, network, ledger_path=ledger_path, record_txs=record_txs)
    return sim.run()


# ---------------------------------------------------------------------------
# Envelope size calibration
# ---------------------------------------------------------------------------

STORE_TARGET_BYTES = 3072
ACCESS_TARGET_BYTES = 4301


class EnvelopeSizes(NamedTuple):
    store_bytes: int
    access_bytes: int


def _sample_envelopes(network: Network, workload: WorkloadSpec, store_pad: int, access_pad: int):
    """A first store by one device and an access to it by a group peer."""
    state = WorldState()
    commit(network.genesis, validate_block(network.genesis, state, network.membership), state)
    owner = network.devices[0]
    peer = next(d for d in network.devices[1:] if d.shared_key_id == owner.shared_key_id)
    channel = network.config.channel_id

    def envelope(dev, args, pad, nonce):
        client = network.membership.get(dev.device_id)
        policy = network.policies[dev.policy_id if args.tx_type is TxType.STORE else owner.policy_id]
        proposal = make_proposal(client, channel, args, nonce, bytes(pad))
        signers = minimal_signer_sets(policy)[0]
        ends = [endorse(proposal, state.snapshot(), network.endorsers[e], network.membership) for e in signers]
        return collect(proposal, ends, policy, client, network.membership)

    store = envelope(
        owner, ChaincodeArgs(TxType.STORE, owner.device_id, _payload(0, workload.payload_bytes)), store_pad, bytes(8)
    )
    block = make_block(1, state.tip.digest, [store])
    commit(block, validate_block(block, state, network.membership), state)
    access = envelope(
        peer,
        ChaincodeArgs(TxType.ACCESS, owner.device_id, key_selector=data_key(owner.device_id, 0)),
        access_pad,
        bytes(7) + b"\x01",
    )
    return store, access


def calibrate_envelope_sizes(network: Network, workload: WorkloadSpec) -> EnvelopeSizes:
    """Serialized size of a representative store and access envelope.

    Uses the workload's payload size and padding, so with the shipped
    defaults this reports the calibrated sizes.
    """
    store, access = _sample_envelopes(network, workload, workload.store_pad_bytes, workload.access_pad_bytes)
    return EnvelopeSizes(store.wire_size_bytes, access.wire_size_bytes)


def tune_padding(
    network: Network,
    workload: WorkloadSpec,
    store_target: int = STORE_TARGET_BYTES,
    access_target: int = ACCESS_TARGET_BYTES,
) -> tuple[int, int]:
    """Metadata padding that brings the representative envelopes to the targets.

    Padding enters the envelope once, behind a fixed-width length prefix, so
    size is linear in it and one unpadded measurement suffices.
    """
    base = calibrate_envelope_sizes(network, replace(workload, store_pad_bytes=0, access_pad_bytes=0))
    return max(0, store_target - base.store_bytes), max(0, access_target - base.access_bytes)
