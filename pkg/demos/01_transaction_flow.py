"""Walk one smart-home network through execute, order and validate by hand."""
import hashlib
import tempfile
from pathlib import Path

from eovledger.chaincode import ChaincodeArgs, TxType, data_key
from eovledger.config import NetworkConfig
from eovledger.endorsement import collect, endorse, make_proposal
from eovledger.errors import ChaincodeRejection
from eovledger.ledger import LedgerFile, WorldState, commit, replay, validate_block, verify_chain
from eovledger.membership import Role
from eovledger.ordering import Orderer, OrderingConfig


def seed(name):
    return hashlib.sha256(b"demo/" + name.encode()).hexdigest()


# A home with one admin, three endorsing peers, an orderer and four devices.
# Devices 0 and 1 share a key, as do devices 2 and 3.
config = NetworkConfig.from_dict({
    "format": "eov-ledger-config/1",
    "channel_id": "home-1",
    "identities": [{"id": n, "role": r, "seed": seed(n)} for n, r in
                   [("admin", "admin"), ("e1", "endorser"), ("e2", "endorser"),
                    ("e3", "endorser"), ("orderer", "orderer")]],
    "fleet": {"prefix": "dev", "count": 4, "group_size": 2, "seed": seed("fleet"), "policy_id": "p"},
    "policies": {"p": "outof(2, e1, e2, e3)"},
    "ordering": {"reader_acl": ["orderer", "e1", "e2", "e3"]},
})
net = config.build()
print("devices:", [d.device_id for d in net.devices])
print("policy :", net.policies["p"])

# Peers start from the genesis block, which carries the registry.
workdir = Path(tempfile.mkdtemp())
ledger = LedgerFile(workdir / "home.eovl")
state = WorldState()
commit(net.genesis, validate_block(net.genesis, state, net.membership), state, ledger)
orderer = Orderer(OrderingConfig(batch_timeout=0.1), tip=net.genesis.header)

nonce = iter(range(1, 1000))


def transact(client_id, args, view=None, signers=("e1", "e2")):
    """Execute on two endorsers, collect, and return the signed envelope."""
    client = net.membership.get(client_id)
    proposal = make_proposal(client, "home-1", args, next(nonce).to_bytes(8, "big"))
    view = view or state.snapshot()
    ends = [endorse(proposal, view, net.endorsers[e], net.membership) for e in signers]
    return collect(proposal, ends, net.policies["p"], client, net.membership)


def order_and_commit(envelopes, now):
    for env in envelopes:
        orderer.submit(env, now)
    block = orderer.cut(now + 1.0)
    flags = validate_block(block, state, net.membership)
    commit(block, flags, state, ledger)
    print(f"block {block.number}: {[f.name for f in flags]}")


# Execute: device 0 stores a reading. Nothing changes until the block commits.
dev0, dev1, dev2 = (d.device_id for d in net.devices[:3])
reading = transact(dev0, ChaincodeArgs(TxType.STORE, dev0, b"21.5C"))
print("store envelope bytes:", reading.wire_size_bytes)
order_and_commit([reading], now=0.0)

# Device 1 shares device 0's key and may read; device 2 does not.
peek = transact(dev1, ChaincodeArgs(TxType.ACCESS, dev0, key_selector=data_key(dev0, 0)))
print("device 1 reads:", peek.response)
try:
    transact(dev2, ChaincodeArgs(TxType.ACCESS, dev0, key_selector=data_key(dev0, 0)))
except ChaincodeRejection as exc:
    print("device 2 refused at endorsement:", exc)

# Two stores endorsed on the same snapshot both bump seq/<device>.
# The first in the block wins; the second fails its version check.
view = state.snapshot()
a = transact(dev0, ChaincodeArgs(TxType.STORE, dev0, b"22.0C"), view)
b = transact(dev0, ChaincodeArgs(TxType.STORE, dev0, b"22.4C"), view)
order_and_commit([peek, a, b], now=2.0)

# An unregistered device gets an identity but is not in the registry.
intruder = net.membership.create_identity("intruder", Role.DEVICE, bytes(32))
try:
    transact("intruder", ChaincodeArgs(TxType.STORE, "intruder", b"junk"))
except ChaincodeRejection as exc:
    print("intruder refused at endorsement:", exc)

# The file verifies, replays to the live state, and any flipped byte is caught.
print("verify:", verify_chain(ledger))
print("replay matches live state:", replay(ledger.path, net.membership) == state)
raw = bytearray(ledger.path.read_bytes())
raw[-100] ^= 1
print("after one flipped byte:", verify_chain(bytes(raw)))
