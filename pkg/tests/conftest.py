from __future__ import annotations

import hashlib

import pytest

from eovledger.chaincode import ChaincodeArgs, TxType, data_key
from eovledger.config import NetworkConfig
from eovledger.endorsement import collect, endorse, make_proposal, minimal_signer_sets
from eovledger.ledger import LedgerFile, WorldState, commit, validate_block
from eovledger.ordering import make_block

_CRITERIA: list[str] = []


def _seed(name: str) -> str:
    return hashlib.sha256(b"test/" + name.encode()).hexdigest()


def small_config(policy: str = "outof(2, e1, e2, e3)", devices: int = 4, group: int = 2) -> NetworkConfig:
    """Tiny network: admin, four endorsers, one orderer, ``devices`` devices."""
    ids = [{"id": "admin", "role": "admin", "seed": _seed("admin")}]
    ids += [{"id": f"e{i}", "role": "endorser", "seed": _seed(f"e{i}")} for i in range(1, 5)]
    ids.append({"id": "orderer", "role": "orderer", "seed": _seed("orderer")})
    return NetworkConfig.from_dict(
        {
            "format": "eov-ledger-config/1",
            "channel_id": "home-1",
            "identities": ids,
            "fleet": {
                "prefix": "dev",
                "count": devices,
                "group_size": group,
                "seed": _seed("fleet"),
                "policy_id": "p-main",
            },
            "policies": {"p-main": policy},
            "ordering": {"max_block_mb": 1.0, "batch_timeout": 0.5, "reader_acl": ["orderer", "e1"]},
            "workload": {"device_count": devices, "arrival_rate": 50.0, "duration": 1.0, "rng_seed": 3},
        }
    )


class Pipeline:
    """Drive transactions through endorse -> collect -> block -> commit by hand."""

    def __init__(self, net, file=None):
        self.net = net
        self.file = file
        self.state = WorldState()
        commit(net.genesis, validate_block(net.genesis, self.state, net.membership), self.state, file)
        self._nonce = 0
        self.blocks = [net.genesis]

    def device(self, i: int):
        return self.net.membership.get(self.net.devices[i].device_id)

    def proposal(self, client, args):
        self._nonce += 1
        return make_proposal(client, "home-1", args, self._nonce.to_bytes(8, "big"))

    def envelope(self, client, args, view=None, signers=None):
        p = self.proposal(client, args)
        policy = self.net.policies["p-main"]
        signers = signers or minimal_signer_sets(policy)[0]
        view = view if view is not None else self.state.snapshot()
        ends = [endorse(p, view, self.net.endorsers[e], self.net.membership) for e in signers]
        return collect(p, ends, policy, client, self.net.membership)

    def store(self, i: int, payload: bytes = b"x", view=None):
        dev = self.device(i)
        return self.envelope(dev, ChaincodeArgs(TxType.STORE, dev.id, payload), view)

    def access(self, i: int, target: int, seq: int, view=None):
        tdev = self.net.devices[target].device_id
        args = ChaincodeArgs(TxType.ACCESS, tdev, key_selector=data_key(tdev, seq))
        return self.envelope(self.device(i), args, view)

    def block(self, envelopes):
        return make_block(self.state.height, self.state.tip.digest, envelopes)

    def commit(self, envelopes):
        block = self.block(envelopes)
        flags = validate_block(block, self.state, self.net.membership)
        commit(block, flags, self.state, self.file)
        self.blocks.append(block)
        return flags


def small_ledger(net, path, blocks: int = 10) -> Pipeline:
    """Write a ``blocks``-block ledger (genesis included) of stores and accesses."""
    pipe = Pipeline(net, LedgerFile(path))
    for i in range(1, blocks):
        if i % 3 == 0:
            pipe.commit([pipe.access(1, 0, 0)])
        else:
            pipe.commit([pipe.store(0 if i < 3 else i % 4, bytes([i]) * 4)])
    return pipe


@pytest.fixture(scope="session")
def net():
    return small_config().build()


@pytest.fixture
def pipeline(net):
    return Pipeline(net)


@pytest.fixture
def criterion(request):
    """Record a PASS/FAIL line for an acceptance criterion; printed in the summary."""

    def report(number: int, ok: bool, detail: str) -> bool:
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {detail}"
        print(line)
        _CRITERIA.append(line)
        return ok

    return report


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in _CRITERIA:
            terminalreporter.write_line(line)
