"""The built-in smart-home contract.

Holds the device registry and implements the register / store / access /
monitor transactions. Execution is a pure function of (args, caller, view):
it never mutates state, it only reports what it read and what it would write.

Key layout::

    registry/<device_id>     DeviceRecord (canonical JSON)
    policy/<policy_id>       endorsement policy expression text
    seq/<device_id>          next data sequence number (ASCII decimal)
    data/<device_id>/<seq>   stored payload

Phantom reads are not detected: a monitor scan records the (key, version) of
every item it saw, but an item inserted after the snapshot does not
invalidate it.
"""
from __future__ import annotations

import enum
import json
from dataclasses import asdict, dataclass
from typing import Iterable, Optional, Protocol, Sequence

from .codec import Reader, Writer
from .errors import (
    DanglingPolicyRef,
    DecodeError,
    DuplicateDevice,
    EmptyRegistry,
    InvalidArgs,
    NotAdmin,
    SharedKeyMismatch,
    UnknownCaller,
    UnknownKey,
)
from .membership import Role
from .rwset import ReadSet, Version, WriteSet, make_readset, make_writeset

REGISTRY = "registry/"
POLICY = "policy/"
SEQ = "seq/"
DATA = "data/"


def registry_key(device_id: str) -> str:
    return REGISTRY + device_id


def policy_key(policy_id: str) -> str:
    return POLICY + policy_id


def seq_key(device_id: str) -> str:
    return SEQ + device_id


def data_prefix(device_id: str) -> str:
    return f"{DATA}{device_id}/"


def data_key(device_id: str, seq: int) -> str:
    return f"{DATA}{device_id}/{seq}"


class TxType(enum.IntEnum):
    REGISTER = 1
    STORE = 2
    ACCESS = 3
    MONITOR = 4
    # Only ever built by the network bootstrap; the contract refuses it.
    GENESIS = 15


@dataclass(frozen=True)
class DeviceRecord:
    device_id: str
    owner_id: str
    device_type: str
    policy_id: str
    shared_key_id: str

    def to_bytes(self) -> bytes:
        return json.dumps(asdict(self), sort_keys=True, separators=(",", ":")).encode()

    @classmethod
    def from_bytes(cls, raw: bytes) -> "DeviceRecord":
        try:
            return cls(**json.loads(raw))
        except (ValueError, TypeError) as exc:
            raise DecodeError(f"bad device record: {exc}") from exc


@dataclass(frozen=True)
class ChaincodeArgs:
    tx_type: TxType
    target_device: str = ""
    payload: bytes = b""
    key_selector: str = ""

    def __post_init__(self):
        object.__setattr__(self, "tx_type", TxType(self.tx_type))
        if self.payload and self.tx_type not in (TxType.STORE, TxType.REGISTER, TxType.GENESIS):
            raise InvalidArgs(f"{self.tx_type.name.lower()} carries no payload")
        if self.key_selector and self.tx_type in (TxType.REGISTER, TxType.STORE):
            raise InvalidArgs(f"{self.tx_type.name.lower()} takes no key selector")

    def encode(self, w: Writer) -> Writer:
        return w.u8(self.tx_type).text(self.target_device).blob(self.payload).text(self.key_selector)

    def to_bytes(self) -> bytes:
        return self.encode(Writer()).getvalue()

    @classmethod
    def decode(cls, r: Reader) -> "ChaincodeArgs":
        code = r.u8()
        try:
            tx_type = TxType(code)
        except ValueError:
            raise DecodeError(f"unknown tx type {code}") from None
        return cls(tx_type, r.text(), r.blob(), r.text())


class StateView(Protocol):
    """Read-only snapshot of committed state."""

    def get(self, key: str) -> Optional[tuple[bytes, Version]]: ...

    def range(self, prefix: str) -> list[tuple[str, bytes, Version]]: ...


class _Recorder:
    """Wraps a view and records every (key, version) read."""

    def __init__(self, view: StateView):
        self._view = view
        self.reads: dict[str, Optional[Version]] = {}

    def get(self, key: str) -> Optional[bytes]:
        hit = self._view.get(key)
        self.reads[key] = hit[1] if hit else None
        return hit[0] if hit else None

    def range(self, prefix: str) -> list[tuple[str, bytes]]:
        items = self._view.range(prefix)
        for key, _, version in items:
            self.reads[key] = version
        return [(k, v) for k, v, _ in items]

    def readset(self) -> ReadSet:
        return make_readset(self.reads.items())


def encode_items(items: Sequence[tuple[str, bytes]]) -> bytes:
    w = Writer().u32(len(items))
    for key, value in items:
        w.text(key).blob(value)
    return w.getvalue()


def decode_items(raw: bytes) -> list[tuple[str, bytes]]:
    r = Reader(raw)
    items = [(r.text(), r.blob()) for _ in range(r.u32())]
    r.expect_end()
    return items


def init_genesis(devices: Sequence[DeviceRecord], policies: Iterable[tuple[str, object]]) -> WriteSet:
    """Write set bootstrapping the registry; meant for block 0.

    ``policies`` pairs a policy id with anything whose ``str()`` is the
    policy expression (an expression tree or the text itself).
    """
    if not devices:
        raise EmptyRegistry("genesis needs at least one device")
    policy_text = {pid: str(expr) for pid, expr in policies}
    writes: dict[str, bytes] = {}
    for pid, text in policy_text.items():
        writes[policy_key(pid)] = text.encode()
    for dev in devices:
        key = registry_key(dev.device_id)
        if key in writes:
            raise DuplicateDevice(dev.device_id)
        if dev.policy_id not in policy_text:
            raise DanglingPolicyRef(f"{dev.device_id} -> {dev.policy_id}")
        writes[key] = dev.to_bytes()
    return make_writeset(writes.items())


def _require_device(rec: _Recorder, device_id: str, exc_type) -> DeviceRecord:
    raw = rec.get(registry_key(device_id))
    if raw is None:
        raise exc_type(device_id, reads=rec.readset())
    return DeviceRecord.from_bytes(raw)


def _authorize_peer(rec: _Recorder, caller: str, target: str) -> DeviceRecord:
    me = _require_device(rec, caller, UnknownCaller)
    if target == caller:
        return me
    other = _require_device(rec, target, UnknownKey)
    if other.shared_key_id != me.shared_key_id:
        raise SharedKeyMismatch(f"{caller} cannot read {target}", reads=rec.readset())
    return other


def execute(
    args: ChaincodeArgs,
    caller: str,
    view: StateView,
    caller_role: Role | str = Role.DEVICE,
) -> tuple[ReadSet, WriteSet, bytes]:
    """Simulate one transaction against ``view``.

    Returns the read set, write set and response. Raises a ChaincodeError
    subclass when the contract refuses; the exception's ``reads`` attribute
    holds what was read up to that point.
    """
    rec = _Recorder(view)
    writes: list[tuple[str, Optional[bytes]]] = []
    tx = args.tx_type

    if tx is TxType.REGISTER:
        if Role(caller_role) is not Role.ADMIN:
            raise NotAdmin(caller)
        try:
            record = DeviceRecord.from_bytes(args.payload)
        except DecodeError as exc:
            raise InvalidArgs(str(exc)) from exc
        if args.target_device and args.target_device != record.device_id:
            raise InvalidArgs("target does not match record")
        if rec.get(registry_key(record.device_id)) is not None:
            raise DuplicateDevice(record.device_id, reads=rec.readset())
        if rec.get(policy_key(record.policy_id)) is None:
            raise DanglingPolicyRef(record.policy_id, reads=rec.readset())
        writes.append((registry_key(record.device_id), record.to_bytes()))
        response = record.device_id.encode()

    elif tx is TxType.STORE:
        if args.target_device and args.target_device != caller:
            raise InvalidArgs("a device stores only its own data")
        _require_device(rec, caller, UnknownCaller)
        raw = rec.get(seq_key(caller))
        seq = int(raw) if raw is not None else 0
        key = data_key(caller, seq)
        writes.append((key, args.payload))
        writes.append((seq_key(caller), str(seq + 1).encode()))
        response = key.encode()

    elif tx is TxType.ACCESS:
        target = args.target_device
        _authorize_peer(rec, caller, target)
        key = args.key_selector
        if not key.startswith(data_prefix(target)):
            key = data_prefix(target) + key
        if not key[len(data_prefix(target)):]:
            raise InvalidArgs("access needs a key selector")
        value = rec.get(key)
        if value is None:
            raise UnknownKey(key, reads=rec.readset())
        response = value

    elif tx is TxType.MONITOR:
        target = args.target_device
        _authorize_peer(rec, caller, target)
        prefix = data_prefix(target) + args.key_selector.removeprefix(data_prefix(target))
        response = encode_items(rec.range(prefix))

    else:
        raise InvalidArgs(f"{tx.name.lower()} cannot be executed")

    return rec.readset(), make_writeset(writes), response


def target_of(args: ChaincodeArgs, client_id: str) -> str:
    """Device whose endorsement policy governs a transaction."""
    if args.tx_type is TxType.STORE:
        return client_id
    if args.tx_type is TxType.REGISTER:
        return DeviceRecord.from_bytes(args.payload).device_id
    return args.target_device
