"""Guest state and the snapshot blob format.

Blob layout: ``b"CSVM"``, version byte, little-endian u32 metadata length,
canonical JSON metadata (sorted keys, no whitespace), then for each process
in pid order a u32 length followed by its region-registry stream.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field

from ..entropy import EntropySource
from ..gen_device import GenIdDevice
from ..guard_memory import CorruptStream, RegionRegistry, deserialize_snapshot
from ..rng import DRBG_MARKER_OFFSET, NONCE_MARKER_OFFSET, GuardCell, NonceCounter, SnapSafeRng

BLOB_MAGIC = b"CSVM"
BLOB_VERSION = 1
_BLOB_HEAD = struct.Struct("<4sBI")
_U32 = struct.Struct("<I")

RUNNING = "running"
SUSPENDED = "suspended"
PAUSED = "paused"


@dataclass
class RngChecks:
    guard: bool = True
    view: bool = True

    def __str__(self) -> str:
        names = [n for n, on in (("guard", self.guard), ("view", self.view)) if on]
        return ",".join(names) or "none"

    @classmethod
    def parse(cls, text: str) -> "RngChecks":
        parts = {p for p in text.split(",") if p}
        if parts == {"none"}:
            return cls(False, False)
        if not parts or parts - {"guard", "view"}:
            raise ValueError(f"rng checks must be 'none' or a subset of guard,view: {text!r}")
        return cls("guard" in parts, "view" in parts)


@dataclass
class Process:
    pid: int
    registry: RegionRegistry
    rng: SnapSafeRng
    nonces: NonceCounter
    guard_region: int

    @classmethod
    def fresh(cls, pid: int, entropy: EntropySource, view, checks: RngChecks,
              personalization: bytes = b"") -> "Process":
        reg = RegionRegistry()
        drbg_guard = GuardCell.allocate(reg, DRBG_MARKER_OFFSET)
        nonce_guard = GuardCell(reg, drbg_guard.region_id, NONCE_MARKER_OFFSET)
        rng = SnapSafeRng(entropy, drbg_guard, view, personalization,
                          check_guard=checks.guard, check_view=checks.view)
        nonces = NonceCounter(rng, nonce_guard, view,
                              check_guard=checks.guard, check_view=checks.view)
        return cls(pid, reg, rng, nonces, drbg_guard.region_id)

    def export_state(self) -> dict:
        return {"pid": self.pid, "guard_region": self.guard_region,
                "rng": self.rng.export_state(), "nonces": self.nonces.export_state()}

    @classmethod
    def rebuild(cls, state: dict, registry: RegionRegistry, entropy: EntropySource, view,
                checks: RngChecks) -> "Process":
        gid = state["guard_region"]
        drbg_guard = GuardCell(registry, gid, DRBG_MARKER_OFFSET)
        nonce_guard = GuardCell(registry, gid, NONCE_MARKER_OFFSET)
        flags = {"check_guard": checks.guard, "check_view": checks.view}
        rng = SnapSafeRng.from_state(state["rng"], entropy, drbg_guard, view, **flags)
        nonces = NonceCounter.from_state(state["nonces"], rng, nonce_guard, view, **flags)
        return cls(state["pid"], registry, rng, nonces, gid)

    def fork(self, pid: int) -> "Process":
        child_reg = self.registry.on_fork()
        return Process.rebuild({**self.export_state(), "pid": pid}, child_reg,
                               self.rng.entropy, self.rng.view,
                               RngChecks(self.rng.check_guard, self.rng.check_view))


@dataclass
class Guest:
    id: str
    device: GenIdDevice
    processes: dict[int, Process]
    parent: str | None = None
    state: str = RUNNING
    cache: list[int] = field(default_factory=list)
    watcher_delays: dict[int, int | None] = field(default_factory=dict)
    nonce_log: list[tuple[int, object]] = field(default_factory=list)
    epoch_log: list[tuple[int, str]] = field(default_factory=list)
    snapshot: bytes | None = None
    clone_count: int = 0

    @property
    def main(self) -> Process:
        return self.processes[1]

    @property
    def registry(self) -> RegionRegistry:
        return self.main.registry

    @property
    def rng(self) -> SnapSafeRng:
        return self.main.rng

    @property
    def generation(self) -> int:
        return self.device.generation

    def registries(self) -> list[RegionRegistry]:
        return [self.processes[p].registry for p in sorted(self.processes)]


@dataclass
class SnapshotImage:
    meta: dict
    registries: dict[int, RegionRegistry]

    @property
    def generation(self) -> int:
        return self.meta["device"]["generation"]

    @property
    def backend_uuid(self) -> bytes:
        return bytes.fromhex(self.meta["device"]["uuid"])


def encode_blob(guest: Guest) -> bytes:
    """Serialize a suspended guest. Every registry must already be suspended."""
    meta = {
        "guest": guest.id,
        "device": guest.device.export_state(),
        "processes": [guest.processes[p].export_state() for p in sorted(guest.processes)],
        "cache": [format(v, "032x") for v in guest.cache],
        "watcher_delays": {str(h): d for h, d in sorted(guest.watcher_delays.items())},
    }
    body = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode()
    parts = [_BLOB_HEAD.pack(BLOB_MAGIC, BLOB_VERSION, len(body)), body]
    for pid in sorted(guest.processes):
        stream = guest.processes[pid].registry.serialize_snapshot()
        parts += [_U32.pack(len(stream)), stream]
    return b"".join(parts)


def decode_blob(blob: bytes) -> SnapshotImage:
    if len(blob) < _BLOB_HEAD.size:
        raise CorruptStream("blob shorter than header")
    magic, version, meta_len = _BLOB_HEAD.unpack_from(blob, 0)
    if magic != BLOB_MAGIC or version != BLOB_VERSION:
        raise CorruptStream("bad blob magic or version")
    pos = _BLOB_HEAD.size
    try:
        meta = json.loads(blob[pos : pos + meta_len])
        pids = [p["pid"] for p in meta["processes"]]
    except (ValueError, KeyError, TypeError) as e:
        raise CorruptStream(f"bad blob metadata: {e}") from None
    pos += meta_len
    regs = {}
    for pid in pids:
        if pos + _U32.size > len(blob):
            raise CorruptStream("blob truncated before registry")
        (n,) = _U32.unpack_from(blob, pos)
        pos += _U32.size
        if pos + n > len(blob):
            raise CorruptStream("blob registry truncated")
        regs[pid] = deserialize_snapshot(blob[pos : pos + n])
        pos += n
    if pos != len(blob):
        raise CorruptStream("trailing bytes after blob")
    return SnapshotImage(meta, regs)


def blob_digest(blob: bytes) -> str:
    return hashlib.sha256(blob).hexdigest()[:16]
