"""Model of the system generation-ID device and its VM generation-ID backend.

Userspace opens watcher handles on the device, reads (blocking or not) until
the generation moves past what the handle last acknowledged, and writes the
new value back to acknowledge it. A 4096-byte shared page carries the latest
generation at offset 0. Two control operations serve orchestrators: counting
outdated watchers and waiting until none remain.

The device is thread-safe. The simulator never blocks on it; it parks
logical actors with :meth:`GenIdDevice.park_reader` and
:meth:`GenIdDevice.when_quiescent` instead, and the device fires those
callbacks at the moment the condition becomes true.
"""

from __future__ import annotations

import itertools
import os
import struct
import threading
from dataclasses import dataclass
from typing import Callable

from .entropy import SeedTree

PAGE_SIZE = 4096
MAX_GENERATION = 2**32 - 1
UUID_LEN = 16


class DeviceError(Exception):
    pass


class WouldBlock(DeviceError):
    """Non-blocking read with nothing new to report (EWOULDBLOCK)."""


class ClosedHandle(DeviceError):
    pass


class StaleAck(DeviceError):
    """Acknowledged value is not the current generation."""


class DuplicateUuid(DeviceError):
    """Backend reported a UUID equal to the current one."""


class GenerationOverflow(DeviceError):
    pass


class WatchTimeout(DeviceError):
    pass


class UuidSource:
    """Produces backend UUIDs and refuses ever to hand out the same one twice.

    With a seed-tree node the values are reproducible (simulation mode);
    without one they come from ``os.urandom`` (live mode).
    """

    def __init__(self, node: SeedTree | None = None):
        self._node = node
        self.issued: set[bytes] = set()

    @property
    def deterministic(self) -> bool:
        return self._node is not None

    def next(self) -> bytes:
        raw = self._node.read(UUID_LEN) if self._node is not None else os.urandom(UUID_LEN)
        if raw in self.issued:
            raise DuplicateUuid(f"uuid {raw.hex()} issued twice")
        self.issued.add(raw)
        return raw


@dataclass
class WatcherHandle:
    id: int
    last_acked: int
    open: bool = True


class GenIdDevice:
    """One guest's generation-ID device.

    ``generation`` is a 32-bit counter bumped by exactly one per backend
    change. The shared page is little-endian, generation at offset 0, every
    other byte zero.
    """

    def __init__(self, backend_uuid: bytes, generation: int = 0):
        if len(backend_uuid) != UUID_LEN:
            raise ValueError("backend uuid must be 16 bytes")
        if not 0 <= generation <= MAX_GENERATION:
            raise GenerationOverflow(f"generation {generation} out of 32-bit range")
        self._cond = threading.Condition(threading.RLock())
        self._generation = generation
        self._uuid = backend_uuid
        self._handles: dict[int, WatcherHandle] = {}
        self._ids = itertools.count(1)
        self._page = bytearray(PAGE_SIZE)
        struct.pack_into("<I", self._page, 0, generation)
        self._parked: list[tuple[int, Callable[[int], None]]] = []
        self._quiesce_waiters: list[Callable[[], None]] = []

    @property
    def generation(self) -> int:
        return self._generation

    @property
    def backend_uuid(self) -> bytes:
        return self._uuid

    @property
    def watchers(self) -> list[WatcherHandle]:
        with self._cond:
            return list(self._handles.values())

    def handle(self, handle_id: int) -> WatcherHandle:
        return self._handles[handle_id]

    # -- watcher side ------------------------------------------------------

    def open_watcher(self) -> WatcherHandle:
        with self._cond:
            h = WatcherHandle(next(self._ids), self._generation)
            self._handles[h.id] = h
            return h

    def close_watcher(self, h: WatcherHandle) -> None:
        with self._cond:
            if not h.open:
                return
            h.open = False
            del self._handles[h.id]
            self._parked = [(hid, cb) for hid, cb in self._parked if hid != h.id]
            fire = self._take_quiesce_waiters()
            self._cond.notify_all()
        for cb in fire:
            cb()

    def is_outdated(self, h: WatcherHandle) -> bool:
        return h.open and h.last_acked < self._generation

    def read(self, h: WatcherHandle, blocking: bool = False,
             timeout: float | None = None) -> int:
        """Return the current generation once it is newer than ``h`` acked.

        Non-blocking reads with nothing new raise :class:`WouldBlock`.
        Blocking reads wait on the device (real threads only).
        """
        with self._cond:
            if not h.open:
                raise ClosedHandle(f"handle {h.id} is closed")
            if self._generation > h.last_acked:
                return self._generation
            if not blocking:
                raise WouldBlock(f"handle {h.id} is up to date at {h.last_acked}")
            ok = self._cond.wait_for(
                lambda: not h.open or self._generation > h.last_acked, timeout)
            if not h.open:
                raise ClosedHandle(f"handle {h.id} closed while blocked")
            if not ok:
                raise WatchTimeout(f"no new generation within {timeout}s")
            return self._generation

    def acknowledge(self, h: WatcherHandle, value: int) -> None:
        with self._cond:
            if not h.open:
                raise ClosedHandle(f"handle {h.id} is closed")
            if value != self._generation:
                raise StaleAck(f"ack {value} but generation is {self._generation}")
            h.last_acked = value
            fire = self._take_quiesce_waiters()
            self._cond.notify_all()
        for cb in fire:
            cb()

    def map_shared_view(self) -> memoryview:
        return memoryview(self._page).toreadonly()

    # -- orchestrator side -------------------------------------------------

    def count_outdated_watchers(self) -> int:
        with self._cond:
            g = self._generation
            return sum(1 for h in self._handles.values() if h.last_acked < g)

    def wait_watchers(self, timeout: float | None = None) -> None:
        with self._cond:
            ok = self._cond.wait_for(lambda: self.count_outdated_watchers() == 0, timeout)
        if not ok:
            raise WatchTimeout(f"{self.count_outdated_watchers()} watchers still outdated")

    # -- backend -----------------------------------------------------------

    def backend_bump(self, new_uuid: bytes) -> int:
        with self._cond:
            if new_uuid == self._uuid:
                raise DuplicateUuid("backend uuid did not change")
            if self._generation >= MAX_GENERATION:
                raise GenerationOverflow("generation counter would wrap past 2**32-1")
            self._uuid = new_uuid
            self._generation += 1
            struct.pack_into("<I", self._page, 0, self._generation)
            parked, self._parked = self._parked, []
            gen = self._generation
            self._cond.notify_all()
        for _, cb in parked:
            cb(gen)
        return gen

    # -- simulator hooks ---------------------------------------------------

    def park_reader(self, h: WatcherHandle, callback: Callable[[int], None]) -> None:
        """Call ``callback(generation)`` once ``h`` has something to read.

        Fires immediately when a newer generation is already pending.
        """
        with self._cond:
            if not h.open:
                raise ClosedHandle(f"handle {h.id} is closed")
            pending = self._generation > h.last_acked
            if not pending:
                self._parked.append((h.id, callback))
            gen = self._generation
        if pending:
            callback(gen)

    @property
    def parked_readers(self) -> int:
        return len(self._parked)

    def when_quiescent(self, callback: Callable[[], None]) -> None:
        """Call ``callback()`` as soon as no watcher is outdated."""
        with self._cond:
            if self.count_outdated_watchers() != 0:
                self._quiesce_waiters.append(callback)
                return
        callback()

    def cancel_quiescent(self, callback: Callable[[], None]) -> None:
        with self._cond:
            if callback in self._quiesce_waiters:
                self._quiesce_waiters.remove(callback)

    def _take_quiesce_waiters(self) -> list[Callable[[], None]]:
        if not self._quiesce_waiters or self.count_outdated_watchers() != 0:
            return []
        fire, self._quiesce_waiters = self._quiesce_waiters, []
        return fire

    # -- snapshot support --------------------------------------------------

    def export_state(self) -> dict:
        with self._cond:
            return {
                "generation": self._generation,
                "uuid": self._uuid.hex(),
                "watchers": [[h.id, h.last_acked] for h in sorted(self._handles.values(),
                                                                 key=lambda h: h.id)],
            }

    @classmethod
    def from_state(cls, state: dict) -> "GenIdDevice":
        dev = cls(bytes.fromhex(state["uuid"]), state["generation"])
        top = 0
        for hid, acked in state["watchers"]:
            dev._handles[hid] = WatcherHandle(hid, acked)
            top = max(top, hid)
        dev._ids = itertools.count(top + 1)
        return dev
