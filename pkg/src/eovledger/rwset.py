"""Versions, read sets and write sets in canonical (key-sorted) form."""
from __future__ import annotations

from typing import Iterable, NamedTuple, Optional

from .codec import Reader, Writer
from .errors import DecodeError


class Version(NamedTuple):
    block_no: int
    tx_index: int


# A read of an absent key records version None; a write of None deletes.
ReadEntry = tuple[str, Optional[Version]]
WriteEntry = tuple[str, Optional[bytes]]
ReadSet = tuple[ReadEntry, ...]
WriteSet = tuple[WriteEntry, ...]


def make_readset(entries: Iterable[ReadEntry]) -> ReadSet:
    seen: dict[str, Optional[Version]] = {}
    for key, version in entries:
        if key in seen and seen[key] != version:
            raise ValueError(f"key {key!r} read at two versions")
        seen[key] = version
    return tuple(sorted(seen.items()))


def make_writeset(entries: Iterable[WriteEntry]) -> WriteSet:
    seen: dict[str, Optional[bytes]] = {}
    for key, value in entries:
        if key in seen:
            raise ValueError(f"key {key!r} written twice")
        seen[key] = value
    return tuple(sorted(seen.items()))


def is_canonical(entries) -> bool:
    keys = [k for k, _ in entries]
    return all(a < b for a, b in zip(keys, keys[1:]))


def write_version(w: Writer, version: Optional[Version]) -> None:
    if version is None:
        w.u8(0)
    else:
        w.u8(1).u64(version.block_no).u32(version.tx_index)


def read_version(r: Reader) -> Optional[Version]:
    tag = r.u8()
    if tag == 0:
        return None
    if tag != 1:
        raise DecodeError(f"bad version tag {tag}")
    return Version(r.u64(), r.u32())


def write_readset(w: Writer, rs: ReadSet) -> None:
    w.u32(len(rs))
    for key, version in rs:
        w.text(key)
        write_version(w, version)


def read_readset(r: Reader) -> ReadSet:
    out = tuple((r.text(), read_version(r)) for _ in range(r.u32()))
    if not is_canonical(out):
        raise DecodeError("read set not in canonical order")
    return out


def write_writeset(w: Writer, ws: WriteSet) -> None:
    w.u32(len(ws))
    for key, value in ws:
        w.text(key)
        if value is None:
            w.u8(0)
        else:
            w.u8(1).blob(value)


def read_writeset(r: Reader) -> WriteSet:
    out = []
    for _ in range(r.u32()):
        key = r.text()
        tag = r.u8()
        if tag == 0:
            out.append((key, None))
        elif tag == 1:
            out.append((key, r.blob()))
        else:
            raise DecodeError(f"bad write tag {tag}")
    out = tuple(out)
    if not is_canonical(out):
        raise DecodeError("write set not in canonical order")
    return out
