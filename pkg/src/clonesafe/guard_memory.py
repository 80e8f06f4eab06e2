"""Simulated guarded memory: wipe-on-fork, wipe-on-suspend, snapshot exclusion.

Snapshot stream layout (all integers little-endian)::

    magic   4 bytes  b"CSRG"
    version 1 byte   1
    count   4 bytes  number of region records
    record  * count:
        region id   4 bytes
        length      4 bytes
        flags       1 byte   bit0 wipe_on_fork, bit1 wipe_on_suspend,
                             bit2 exclude_from_snapshot
        contents    <length> bytes (zeros for excluded regions)
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

PAGE_SIZE = 4096
STREAM_MAGIC = b"CSRG"
STREAM_VERSION = 1

_HEADER = struct.Struct("<4sBI")
_RECORD = struct.Struct("<IIB")


class GuardMemoryError(Exception):
    pass


class BadSize(GuardMemoryError):
    pass


class SuspendNotRun(GuardMemoryError):
    pass


class CorruptStream(GuardMemoryError):
    pass


@dataclass(frozen=True)
class WipePolicy:
    wipe_on_fork: bool = False
    wipe_on_suspend: bool = False
    exclude_from_snapshot: bool = False

    def to_flags(self) -> int:
        return (int(self.wipe_on_fork)
                | int(self.wipe_on_suspend) << 1
                | int(self.exclude_from_snapshot) << 2)

    @classmethod
    def from_flags(cls, flags: int) -> "WipePolicy":
        if flags & ~0b111:
            raise CorruptStream(f"unknown policy bits {flags:#x}")
        return cls(bool(flags & 1), bool(flags & 2), bool(flags & 4))

    @classmethod
    def all_combinations(cls) -> list["WipePolicy"]:
        return [cls.from_flags(i) for i in range(8)]


GUARD_POLICY = WipePolicy(wipe_on_fork=True, wipe_on_suspend=True)
ORDINARY = WipePolicy()


@dataclass
class GuardedRegion:
    id: int
    data: bytearray
    policy: WipePolicy

    def wipe(self) -> None:
        self.data[:] = bytes(len(self.data))

    def is_zero(self) -> bool:
        return not any(self.data)


@dataclass
class RegionRegistry:
    regions: dict[int, GuardedRegion] = field(default_factory=dict)
    next_id: int = 1
    suspended: bool = False

    def register(self, size: int, policy: WipePolicy = ORDINARY, fill: bytes | int = 0) -> int:
        if size <= 0 or size % PAGE_SIZE:
            raise BadSize(f"region size {size} is not a positive multiple of {PAGE_SIZE}")
        if isinstance(fill, int):
            data = bytearray([fill]) * size
        else:
            if not fill:
                raise ValueError("empty fill pattern")
            reps = -(-size // len(fill))
            data = bytearray((fill * reps)[:size])
        rid = self.next_id
        self.next_id += 1
        self.regions[rid] = GuardedRegion(rid, data, policy)
        return rid

    def __getitem__(self, rid: int) -> GuardedRegion:
        return self.regions[rid]

    def __len__(self) -> int:
        return len(self.regions)

    def write(self, rid: int, offset: int, data: bytes) -> None:
        buf = self.regions[rid].data
        if offset < 0 or offset + len(data) > len(buf):
            raise IndexError("write past end of region")
        buf[offset : offset + len(data)] = data

    def read(self, rid: int, offset: int, n: int) -> bytes:
        return bytes(self.regions[rid].data[offset : offset + n])

    def copy(self) -> "RegionRegistry":
        return RegionRegistry(
            {rid: GuardedRegion(rid, bytearray(r.data), r.policy) for rid, r in self.regions.items()},
            self.next_id,
            self.suspended,
        )

    def on_fork(self) -> "RegionRegistry":
        """Child image after fork; the parent is not touched."""
        child = self.copy()
        for r in child.regions.values():
            if r.policy.wipe_on_fork:
                r.wipe()
        return child

    def on_suspend(self) -> list[int]:
        """Zero every wipe-on-suspend region; returns the wiped ids in order."""
        wiped = []
        for rid, r in self.regions.items():
            if r.policy.wipe_on_suspend:
                r.wipe()
                wiped.append(rid)
        self.suspended = True
        return wiped

    def resume(self) -> None:
        self.suspended = False

    def serialize_snapshot(self) -> bytes:
        if not self.suspended:
            raise SuspendNotRun("on_suspend must run before serializing a snapshot")
        parts = [_HEADER.pack(STREAM_MAGIC, STREAM_VERSION, len(self.regions))]
        for rid, r in self.regions.items():
            parts.append(_RECORD.pack(rid, len(r.data), r.policy.to_flags()))
            parts.append(bytes(len(r.data)) if r.policy.exclude_from_snapshot else bytes(r.data))
        return b"".join(parts)


def deserialize_snapshot(stream: bytes) -> RegionRegistry:
    """Rebuild a registry from a snapshot stream.

    The result is in the suspended state; call ``resume()`` before use.
    """
    if len(stream) < _HEADER.size:
        raise CorruptStream("stream shorter than header")
    magic, version, count = _HEADER.unpack_from(stream, 0)
    if magic != STREAM_MAGIC:
        raise CorruptStream(f"bad magic {magic!r}")
    if version != STREAM_VERSION:
        raise CorruptStream(f"unsupported stream version {version}")
    pos = _HEADER.size
    reg = RegionRegistry(suspended=True)
    for _ in range(count):
        if pos + _RECORD.size > len(stream):
            raise CorruptStream("truncated record header")
        rid, length, flags = _RECORD.unpack_from(stream, pos)
        pos += _RECORD.size
        if length == 0 or length % PAGE_SIZE:
            raise CorruptStream(f"region {rid} has bad length {length}")
        if pos + length > len(stream):
            raise CorruptStream(f"region {rid} contents truncated")
        if rid in reg.regions:
            raise CorruptStream(f"duplicate region id {rid}")
        reg.regions[rid] = GuardedRegion(rid, bytearray(stream[pos : pos + length]),
                                         WipePolicy.from_flags(flags))
        pos += length
    if pos != len(stream):
        raise CorruptStream(f"{len(stream) - pos} trailing bytes")
    reg.next_id = max(reg.regions, default=0) + 1
    return reg
