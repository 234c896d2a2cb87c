import random
from dataclasses import replace

import pytest

from eovledger.chaincode import ChaincodeArgs, TxType
from eovledger.endorsement import assemble, endorse
from eovledger.errors import BadLedgerFormat, BrokenChain, LedgerError, StorageFailure, TruncatedFile
from eovledger.ledger import (
    LedgerFile,
    ValidationFlag as F,
    WorldState,
    commit,
    iter_records,
    replay,
    validate_block,
    verify_chain,
)
from eovledger.membership import Signature
from eovledger.rwset import Version

from conftest import Pipeline, small_ledger


def test_two_stores_same_device_one_block(pipeline):
    view = pipeline.state.snapshot()
    a, b = pipeline.store(0, b"a", view), pipeline.store(0, b"b", view)
    assert pipeline.commit([a, b]) == [F.VALID, F.INVALID_MVCC_CONFLICT]
    items = pipeline.state.items()
    assert items["data/dev-0000/0"] == (b"a", Version(1, 0))
    assert items["seq/dev-0000"] == (b"1", Version(1, 0))


def test_independent_transactions_share_a_block(pipeline):
    # stores of different devices touch disjoint keys; reads of committed data stay valid
    assert pipeline.commit([pipeline.store(0), pipeline.store(2)]) == [F.VALID, F.VALID]
    assert pipeline.commit([pipeline.store(0), pipeline.access(1, 0, 0)]) == [F.VALID, F.VALID]


def test_stale_snapshot_read_conflicts(pipeline):
    stale = pipeline.state.snapshot()
    pipeline.commit([pipeline.store(0)])
    late = pipeline.store(0, b"late", stale)
    assert pipeline.commit([late]) == [F.INVALID_MVCC_CONFLICT]


def test_untouched_reads_are_valid(pipeline):
    view = pipeline.state.snapshot()
    env = pipeline.store(0, b"v", view)
    pipeline.commit([pipeline.store(2)])
    assert pipeline.commit([env]) == [F.VALID]


def test_policy_failure_is_flagged(pipeline, net):
    dev = pipeline.device(0)
    p = pipeline.proposal(dev, ChaincodeArgs(TxType.STORE, dev.id, b"x"))
    lone = endorse(p, pipeline.state.snapshot(), net.endorsers["e1"], net.membership)
    assert pipeline.commit([assemble(p, [lone], dev)]) == [F.INVALID_POLICY]


def test_bad_signature_is_flagged(pipeline):
    env = pipeline.store(0)
    forged = replace(env, assembled_sig=Signature(env.assembled_sig.signer_id, bytes(64)))
    assert pipeline.commit([forged]) == [F.INVALID_BAD_SIGNATURE]


def test_duplicates_are_flagged(pipeline):
    pipeline.commit([pipeline.store(0)])
    read = pipeline.access(1, 0, 0)
    assert pipeline.commit([read, read]) == [F.VALID, F.INVALID_DUPLICATE]
    assert pipeline.commit([read]) == [F.INVALID_DUPLICATE]


def test_all_invalid_block_still_advances_height(pipeline):
    stale = pipeline.state.snapshot()
    pipeline.commit([pipeline.store(0)])
    before = pipeline.state.items()
    height = pipeline.state.height
    flags = pipeline.commit([pipeline.store(0, b"x", stale), pipeline.store(0, b"y", stale)])
    assert set(flags) == {F.INVALID_MVCC_CONFLICT}
    assert pipeline.state.items() == before and pipeline.state.height == height + 1
    assert pipeline.blocks[-1].validity == flags


def test_genesis_keys_at_version_zero(pipeline, net):
    items = pipeline.state.items()
    assert items["policy/p-main"][1] == Version(0, 0)
    for d in net.devices:
        assert items[f"registry/{d.device_id}"][1] == Version(0, 0)


def test_broken_chain(pipeline):
    block = pipeline.block([pipeline.store(0)])
    with pytest.raises(BrokenChain):
        validate_block(replace(block, header=replace(block.header, number=5)), pipeline.state, pipeline.net.membership)
    with pytest.raises(BrokenChain):
        validate_block(replace(block, header=replace(block.header, prev_hash=bytes(32))), pipeline.state, pipeline.net.membership)
    other = pipeline.block([pipeline.store(2)])
    with pytest.raises(BrokenChain):
        validate_block(replace(block, envelopes=other.envelopes), pipeline.state, pipeline.net.membership)


def test_snapshot_isolation(pipeline):
    view = pipeline.state.snapshot()
    pipeline.commit([pipeline.store(0, b"new")])
    assert view.get("data/dev-0000/0") is None
    assert pipeline.state.snapshot().get("data/dev-0000/0")[0] == b"new"
    assert WorldState().snapshot().get("registry/dev-0000") is None
    assert WorldState().snapshot().range("") == []


def test_two_snapshots_agree_on_random_keys(pipeline):
    for i in range(4):
        pipeline.commit([pipeline.store(i)])
    a, b = pipeline.state.snapshot(), pipeline.state.snapshot()
    keys = list(pipeline.state.items()) + ["missing/1", "data/dev-0003/9"]
    for key in random.Random(5).choices(keys, k=50):
        assert a.get(key) == b.get(key)
    assert a.range("data/") == b.range("data/")


def test_ledger_file_verify_and_replay(tmp_path, net):
    path = tmp_path / "l.eovl"
    pipe = small_ledger(net, path)
    report = verify_chain(path)
    assert report.ok and report.blocks == 10
    assert replay(path) == pipe.state
    assert replay(path, net.membership).state_digest() == pipe.state.state_digest()
    stored = [flags for _, flags in LedgerFile(path, create=False).blocks()]
    assert stored == [b.validity for b in pipe.blocks]


def _record_offsets(raw):
    offsets, pos = [], 6
    for _, body, _ in iter_records(raw):
        offsets.append(pos)
        pos += 4 + len(body) + 32
    return offsets


def test_payload_flip_in_block_4(tmp_path, net):
    path = tmp_path / "l.eovl"
    small_ledger(net, path)
    raw = bytearray(path.read_bytes())
    start = _record_offsets(bytes(raw))[4]
    body_len = int.from_bytes(raw[start:start + 4], "big")
    pos = start + 4 + body_len - 40  # inside the last envelope
    raw[pos] ^= 0x01
    report = verify_chain(bytes(raw))
    assert not report.ok and report.corrupt_block == 4


def test_header_flip_in_block_4(tmp_path, net):
    path = tmp_path / "l.eovl"
    small_ledger(net, path)
    raw = bytearray(path.read_bytes())
    raw[_record_offsets(bytes(raw))[4] + 4 + 20] ^= 0x80  # inside prev_hash
    report = verify_chain(bytes(raw))
    assert not report.ok and report.corrupt_block in (4, 5)


def test_flags_flip_detected(tmp_path, net):
    path = tmp_path / "l.eovl"
    small_ledger(net, path)
    raw = bytearray(path.read_bytes())
    offsets = _record_offsets(bytes(raw))
    raw[offsets[5] - 33] ^= 0x02  # last flag byte of block 4
    assert verify_chain(bytes(raw)).corrupt_block == 4


def test_truncated_and_empty_files(tmp_path, net):
    path = tmp_path / "l.eovl"
    small_ledger(net, path, blocks=3)
    raw = path.read_bytes()
    with pytest.raises(TruncatedFile):
        verify_chain(raw[:-5])
    with pytest.raises(TruncatedFile):
        verify_chain(b"")
    with pytest.raises(TruncatedFile):
        verify_chain(raw[:6])
    with pytest.raises(BadLedgerFormat):
        verify_chain(b"XXXX" + raw[4:])
    with pytest.raises(BadLedgerFormat):
        verify_chain(raw[:4] + b"\x00\x09" + raw[6:])


def test_replay_rejects_forged_flags(tmp_path, net):
    path = tmp_path / "l.eovl"
    pipe = Pipeline(net, LedgerFile(path))
    block = pipe.block([pipe.store(0)])
    assert validate_block(block, pipe.state, net.membership) == [F.VALID]
    commit(block, [F.INVALID_POLICY], pipe.state, pipe.file)
    assert verify_chain(path).ok  # well-formed, just lying
    with pytest.raises(LedgerError):
        replay(path, net.membership)


def test_storage_failure(tmp_path):
    with pytest.raises(StorageFailure):
        LedgerFile(tmp_path / "missing" / "l.eovl")
