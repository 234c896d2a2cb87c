"""Network configuration file: identities, registry, policies and run defaults.

The file is JSON. Devices may be listed one by one under ``devices`` or
generated from a compact ``fleet`` block; fleet devices get seeds derived
from the fleet seed and their id, and share keys in consecutive groups.
"""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field, fields
from importlib import resources
from pathlib import Path
from typing import Any, Optional

from .chaincode import DeviceRecord, init_genesis
from .endorsement import Policy, parse_policy, principals
from .errors import ConfigInvalid, EovError
from .ledger import genesis_block
from .membership import Identity, Membership, Role
from .ordering import MB, Block, OrderingConfig

FORMAT = "eov-ledger-config/1"


@dataclass(frozen=True)
class NetworkModel:
    """Simulated-time cost model; durations in seconds, per-byte costs in s/byte."""

    hop_latency: float = 0.002
    per_byte_cost: float = 8e-9
    endorsement_compute: float = 0.002
    endorsement_per_byte: float = 0.0
    reject_compute: float = 0.0001
    endorser_workers: int = 8
    ordering_block_cost: float = 0.02
    ordering_per_byte: float = 0.0
    validation_compute: float = 5e-5
    validation_block_cost: float = 0.005
    validation_per_byte: float = 0.0

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise ConfigInvalid(f"network.{f.name} must be non-negative")
        if self.endorser_workers < 1:
            raise ConfigInvalid("network.endorser_workers must be >= 1")


TX_TYPES = ("store", "access", "monitor")


@dataclass(frozen=True)
class WorkloadSpec:
    device_count: int = 50
    tx_mix: dict = field(default_factory=lambda: {"store": 0.5, "access": 0.5, "monitor": 0.0})
    payload_bytes: int = 1024
    arrival_rate: float = 500.0
    duration: float = 5.0
    rng_seed: int = 0
    attacker_count: int = 0
    # Aggregate proposal rate of all attackers together, tx/s.
    attack_rate: float = 0.0
    # Transaction metadata padding per type (monitor uses the access value).
    store_pad_bytes: int = 0
    access_pad_bytes: int = 0
    # Simulated seconds allowed after ``duration`` for in-flight work to finish.
    drain: float = 30.0

    def __post_init__(self):
        mix = {k: float(self.tx_mix.get(k, 0.0)) for k in TX_TYPES}
        if set(self.tx_mix) - set(TX_TYPES):
            raise ConfigInvalid(f"unknown tx types in mix: {sorted(set(self.tx_mix) - set(TX_TYPES))}")
        if any(v < 0 for v in mix.values()) or abs(sum(mix.values()) - 1.0) > 1e-9:
            raise ConfigInvalid(f"tx_mix must be non-negative and sum to 1, got {mix}")
        object.__setattr__(self, "tx_mix", mix)
        if self.arrival_rate < 0 or self.attack_rate < 0:
            raise ConfigInvalid("rates must be non-negative")
        if self.duration <= 0:
            raise ConfigInvalid("duration must be positive")
        if self.device_count < 1 or self.attacker_count < 0 or self.payload_bytes < 0:
            raise ConfigInvalid("device_count >= 1, attacker_count >= 0, payload_bytes >= 0 required")
        if self.store_pad_bytes < 0 or self.access_pad_bytes < 0 or self.drain < 0:
            raise ConfigInvalid("padding and drain must be non-negative")


def _derive_seed(base: bytes, name: str) -> bytes:
    return hashlib.sha256(base + b"/" + name.encode()).digest()


@dataclass
class Network:
    """A bootstrapped network ready to simulate."""

    config: "NetworkConfig"
    membership: Membership
    admin: Identity
    endorsers: dict[str, Identity]
    devices: list[DeviceRecord]
    policies: dict[str, Policy]
    genesis: Block


@dataclass
class NetworkConfig:
    channel_id: str = "home-1"
    identities: list[dict] = field(default_factory=list)
    devices: list[dict] = field(default_factory=list)
    fleet: Optional[dict] = None
    policies: dict[str, str] = field(default_factory=dict)
    ordering: dict = field(default_factory=dict)
    network: dict = field(default_factory=dict)
    workload: dict = field(default_factory=dict)
    experiments: dict = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)

    # -- (de)serialisation -------------------------------------------------

    @classmethod
    def from_dict(cls, data: dict) -> "NetworkConfig":
        if data.get("format") != FORMAT:
            raise ConfigInvalid(f"expected format {FORMAT!r}, got {data.get('format')!r}")
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known - {"format"}
        if unknown:
            raise ConfigInvalid(f"unknown config sections: {sorted(unknown)}")
        cfg = cls(**{k: copy.deepcopy(v) for k, v in data.items() if k != "format"})
        cfg.check()
        return cfg

    def to_dict(self) -> dict:
        out: dict[str, Any] = {"format": FORMAT}
        for f in fields(self):
            value = getattr(self, f.name)
            if value is None or (f.name in ("notes", "experiments", "fleet", "devices") and not value):
                continue
            out[f.name] = copy.deepcopy(value)
        return out

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=False) + "\n"

    @classmethod
    def loads(cls, text: str) -> "NetworkConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigInvalid(f"not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigInvalid("config root must be an object")
        return cls.from_dict(data)

    @classmethod
    def load(cls, path) -> "NetworkConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigInvalid(f"cannot read {path}: {exc}") from exc
        return cls.loads(text)

    def dump(self, path) -> None:
        Path(path).write_text(self.dumps())

    # -- typed views -------------------------------------------------------

    def ordering_config(self, **overrides) -> OrderingConfig:
        raw = {**self.ordering, **overrides}
        if "max_block_mb" in raw:
            raw["max_block_bytes"] = int(round(float(raw.pop("max_block_mb")) * MB))
        raw.setdefault("channel_id", self.channel_id)
        try:
            return OrderingConfig(**raw)
        except (TypeError, ValueError) as exc:
            raise ConfigInvalid(f"ordering: {exc}") from exc

    def network_model(self, **overrides) -> NetworkModel:
        try:
            return NetworkModel(**{**self.network, **overrides})
        except TypeError as exc:
            raise ConfigInvalid(f"network: {exc}") from exc

    def workload_spec(self, **overrides) -> WorkloadSpec:
        try:
            return WorkloadSpec(**{**self.workload, **overrides})
        except TypeError as exc:
            raise ConfigInvalid(f"workload: {exc}") from exc

    def experiment(self, name: str) -> dict:
        return copy.deepcopy(self.experiments.get(name, {}))

    # -- registry ----------------------------------------------------------

    def device_records(self) -> list[DeviceRecord]:
        out = [DeviceRecord(**d) for d in self.devices]
        fl = self.fleet
        if fl:
            group = int(fl.get("group_size", 10))
            prefix = fl["prefix"]
            for i in range(int(fl["count"])):
                out.append(
                    DeviceRecord(
                        device_id=f"{prefix}-{i:04d}",
                        owner_id=fl.get("owner_id", "admin"),
                        device_type=fl.get("device_type", "sensor"),
                        policy_id=fl["policy_id"],
                        shared_key_id=f"{prefix}-key-{i // group:03d}",
                    )
                )
        return out

    def identity_entries(self) -> list[tuple[str, Role, bytes]]:
        out = [(e["id"], Role(e["role"]), bytes.fromhex(e["seed"])) for e in self.identities]
        fl = self.fleet
        if fl:
            base = bytes.fromhex(fl["seed"])
            for rec in self.device_records()[len(self.devices):]:
                out.append((rec.device_id, Role.DEVICE, _derive_seed(base, rec.device_id)))
        return out

    def check(self) -> None:
        try:
            entries = self.identity_entries()
            records = self.device_records()
            policies = {pid: parse_policy(text) for pid, text in self.policies.items()}
        except (KeyError, TypeError, ValueError, EovError) as exc:
            raise ConfigInvalid(f"malformed registry: {exc}") from exc
        roles: dict[str, Role] = {}
        for ident, role, seed in entries:
            if ident in roles:
                raise ConfigInvalid(f"duplicate identity {ident!r}")
            if len(seed) != 32:
                raise ConfigInvalid(f"seed of {ident!r} must be 32 bytes")
            roles[ident] = role
        if not any(r is Role.ADMIN for r in roles.values()):
            raise ConfigInvalid("an admin identity is required")
        for pid, pol in policies.items():
            for e in principals(pol):
                if roles.get(e) is not Role.ENDORSER:
                    raise ConfigInvalid(f"policy {pid!r} names {e!r}, which is not an endorser")
        for rec in records:
            if roles.get(rec.device_id) is not Role.DEVICE:
                raise ConfigInvalid(f"device {rec.device_id!r} has no device identity")
            if rec.policy_id not in policies:
                raise ConfigInvalid(f"device {rec.device_id!r} references unknown policy {rec.policy_id!r}")
        for reader in self.ordering.get("reader_acl", []):
            if reader not in roles:
                raise ConfigInvalid(f"reader_acl names unknown identity {reader!r}")
        self.ordering_config()
        self.network_model()
        self.workload_spec()

    def build(self) -> Network:
        """Create identities, the device registry and the genesis block."""
        self.check()
        membership = Membership()
        for ident, role, seed in self.identity_entries():
            membership.create_identity(ident, role, seed)
        admin = next(i for i in membership if i.role is Role.ADMIN)
        endorsers = {i.id: i for i in membership if i.role is Role.ENDORSER}
        devices = self.device_records()
        policies = {pid: parse_policy(text) for pid, text in self.policies.items()}
        writeset = init_genesis(devices, policies.items())
        genesis = genesis_block(admin, self.channel_id, writeset)
        return Network(self, membership, admin, endorsers, devices, policies, genesis)

    def with_updates(self, **sections) -> "NetworkConfig":
        """Copy with the given sections shallow-merged over the current ones."""
        new = copy.deepcopy(self)
        for name, values in sections.items():
            current = getattr(new, name)
            if isinstance(current, dict):
                current.update(values)
            else:
                setattr(new, name, values)
        return new


def default_config() -> NetworkConfig:
    text = resources.files("eovledger").joinpath("data/default_network.json").read_text()
    return NetworkConfig.loads(text)
