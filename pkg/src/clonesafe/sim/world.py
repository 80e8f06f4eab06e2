"""Deterministic discrete-event simulator of guest lifecycles.

Virtual time is an integer tick. Everything that happens is appended to one
event log; identical (seed, schedule) pairs give byte-identical logs.
"""

from __future__ import annotations

import fnmatch
import heapq
import itertools
from dataclasses import dataclass, field
from typing import Callable, Iterable

from ..drbg import DrbgError
from ..entropy import DeterministicEntropy, SeedTree
from ..gen_device import DeviceError, GenIdDevice, StaleAck, UuidSource, WatcherHandle, WouldBlock
from ..guard_memory import GuardMemoryError
from .events import DEFAULT_BUMP_POLICY, EventKind, Record, SimEvent, guest_sort_key
from .guest import (PAUSED, RUNNING, SUSPENDED, Guest, Process, RngChecks, blob_digest,
                    decode_blob, encode_blob)
from .program import Step

ROOT_ID = "g0"


class SimError(Exception):
    pass


class NoSuchGuest(SimError):
    pass


class NoSuchProcess(SimError):
    pass


class BadState(SimError):
    pass


@dataclass(frozen=True)
class WatcherConfig:
    pattern: str
    count: int
    delay: int | None  # None: the watcher never acknowledges


@dataclass(frozen=True)
class HandlerConfig:
    pattern: str
    steps: tuple[Step, ...]


@dataclass
class WorldConfig:
    fence_timeout: int = 1000
    checks: RngChecks = field(default_factory=RngChecks)
    policy: dict[EventKind, bool] = field(default_factory=lambda: dict(DEFAULT_BUMP_POLICY))
    watchers: list[WatcherConfig] = field(default_factory=list)
    handlers: list[HandlerConfig] = field(default_factory=list)
    log_emissions: bool = True


@dataclass
class Request:
    """Outcome of a (possibly fenced) invoke."""

    guest: str
    issued_at: int
    delivered_at: int | None = None
    timed_out: bool = False
    completed_at: int | None = None
    emitted: list = field(default_factory=list)


@dataclass
class CloneTree:
    parents: dict[str, str | None]
    nonce_logs: dict[str, list[tuple[int, object]]]

    def roots(self) -> list[str]:
        return sorted((g for g, p in self.parents.items() if p is None), key=guest_sort_key)

    def children(self, gid: str) -> list[str]:
        return sorted((g for g, p in self.parents.items() if p == gid), key=guest_sort_key)

    def leaves(self) -> list[str]:
        inner = {p for p in self.parents.values() if p is not None}
        return sorted((g for g in self.parents if g not in inner), key=guest_sort_key)

    def depth(self, gid: str) -> int:
        d = 0
        while self.parents[gid] is not None:
            gid = self.parents[gid]
            d += 1
        return d


def _segments_match(parts: list[str], want: list[str]) -> bool:
    if not want:
        return not parts
    if want[0] == "**":
        return any(_segments_match(parts[i:], want[1:]) for i in range(len(parts) + 1))
    return bool(parts) and fnmatch.fnmatchcase(parts[0], want[0]) \
        and _segments_match(parts[1:], want[1:])


def match_guests(pattern: str, ids: Iterable[str]) -> list[str]:
    """Segment-wise glob over dotted guest ids.

    ``g0.*`` matches ``g0.3`` but not ``g0.3.1``; a ``**`` segment matches
    any number of segments, so ``**`` alone matches every guest.
    """
    want = pattern.split(".")
    out = [gid for gid in ids if _segments_match(gid.split("."), want)]
    return sorted(out, key=guest_sort_key)


class World:
    def __init__(self, seed: int, config: WorldConfig | None = None):
        self.seed = seed
        self.config = config or WorldConfig()
        self.seeds = SeedTree(seed)
        self.uuids = UuidSource(self.seeds.child("vmgenid"))
        self.guests: dict[str, Guest] = {}
        self.records: list[Record] = []
        self.observers: list[Callable[[Record], None]] = []
        self.errors = 0
        self.now = 0
        self._queue: list = []
        self._seq = itertools.count()
        self._clone_counts: dict[str, int] = {}
        self._parked: dict[str, set[int]] = {}

    # -- plumbing ----------------------------------------------------------

    def entropy_for(self, gid: str) -> DeterministicEntropy:
        return DeterministicEntropy(self.seeds.child(f"entropy/{gid}"))

    def log(self, guest: Guest | str, event: str, detail: str = "", gen: int | None = None) -> None:
        if isinstance(guest, Guest):
            gid, g = guest.id, guest.generation if gen is None else gen
        else:
            gid, g = guest, -1 if gen is None else gen
        rec = Record(self.now, gid, event, g, detail)
        self.records.append(rec)
        for obs in self.observers:
            obs(rec)

    def error(self, gid: str, kind: str, exc: Exception) -> None:
        self.errors += 1
        g = self.guests.get(gid)
        self.log(g if g is not None else gid, "Error", f"{kind}: {type(exc).__name__}: {exc}")

    def schedule(self, tick: int, fn: Callable[[], None]) -> None:
        if tick < self.now:
            raise SimError(f"cannot schedule in the past ({tick} < {self.now})")
        heapq.heappush(self._queue, (tick, next(self._seq), fn))

    def run(self, until: int | None = None) -> None:
        while self._queue and (until is None or self._queue[0][0] <= until):
            tick, _, fn = heapq.heappop(self._queue)
            self.now = tick
            fn()
        if until is not None:
            self.now = max(self.now, until)

    def guest(self, gid: str) -> Guest:
        try:
            return self.guests[gid]
        except KeyError:
            raise NoSuchGuest(gid) from None

    def render_log(self) -> str:
        return "".join(r.render() + "\n" for r in self.records)

    def clone_tree(self) -> CloneTree:
        ids = sorted(self.guests, key=guest_sort_key)
        return CloneTree({g: self.guests[g].parent for g in ids},
                         {g: self.guests[g].nonce_log for g in ids})

    def _note(self, guest: Guest, kind: str) -> None:
        guest.epoch_log.append((self.now, kind))

    def _maybe_bump(self, guest: Guest, kind: EventKind) -> None:
        if self.config.policy.get(kind, False):
            guest.device.backend_bump(self.uuids.next())

    def _require(self, guest: Guest, *states: str) -> None:
        if guest.state not in states:
            raise BadState(f"{guest.id} is {guest.state}, needs {'/'.join(states)}")

    # -- watchers ----------------------------------------------------------

    def _open_watchers(self, guest: Guest) -> None:
        for wc in self.config.watchers:
            if match_guests(wc.pattern, [guest.id]):
                for _ in range(wc.count):
                    h = guest.device.open_watcher()
                    guest.watcher_delays[h.id] = wc.delay

    def _park_watchers(self, guest: Guest) -> None:
        parked = self._parked.setdefault(guest.id, set())
        for h in guest.device.watchers:
            if h.id not in parked and h.id in guest.watcher_delays:
                parked.add(h.id)
                guest.device.park_reader(h, self._waker(guest, guest.device, h))

    def _waker(self, guest: Guest, device: GenIdDevice, h: WatcherHandle):
        def woke(_gen: int) -> None:
            self._parked[guest.id].discard(h.id)
            delay = guest.watcher_delays.get(h.id)
            if delay is None:
                return
            self.schedule(self.now + delay, lambda: self._watcher_react(guest, device, h))
        return woke

    def _watcher_react(self, guest: Guest, device: GenIdDevice, h: WatcherHandle) -> None:
        if device is not guest.device or not h.open:
            return
        if guest.state != RUNNING:
            return  # re-parked on resume
        while True:
            try:
                value = device.read(h, blocking=False)
            except WouldBlock:
                break
            # The library's reaction to a new generation: reseed, new nonce base.
            guest.rng.reseed()
            guest.main.nonces.rebase()
            try:
                device.acknowledge(h, value)
            except StaleAck:
                continue
            self.log(guest, "Ack", f"handle={h.id}")
            break
        self._park_watchers(guest)

    # -- lifecycle operations -----------------------------------------------

    def boot(self, gid: str = ROOT_ID) -> Guest:
        if gid in self.guests:
            raise SimError(f"guest {gid} already exists")
        device = GenIdDevice(self.uuids.next())
        proc = Process.fresh(1, self.entropy_for(gid), device.map_shared_view(), self.config.checks,
                             personalization=gid.encode()[:32])
        guest = Guest(gid, device, {1: proc})
        self.guests[gid] = guest
        self._open_watchers(guest)
        self._park_watchers(guest)
        self._maybe_bump(guest, EventKind.BOOT)
        self._note(guest, "Boot")
        self.log(guest, "Boot", f"uuid={device.backend_uuid.hex()}")
        return guest

    def suspend(self, guest: Guest) -> list[int]:
        self._require(guest, RUNNING, PAUSED, SUSPENDED)
        wiped = []
        for reg in guest.registries():
            wiped += reg.on_suspend()
        guest.state = SUSPENDED
        self._maybe_bump(guest, EventKind.SUSPEND)
        self._note(guest, "Suspend")
        self.log(guest, "Suspend", f"wiped={len(wiped)}")
        return wiped

    def suspend_and_snapshot(self, guest: Guest) -> bytes:
        self._require(guest, RUNNING, PAUSED, SUSPENDED)
        wiped = 0
        for reg in guest.registries():
            wiped += len(reg.on_suspend())
        guest.state = SUSPENDED
        blob = encode_blob(guest)
        guest.snapshot = blob
        self._maybe_bump(guest, EventKind.SNAPSHOT)
        self._note(guest, "Snapshot")
        self.log(guest, "Snapshot", f"wiped={wiped} bytes={len(blob)} sha256={blob_digest(blob)}")
        return blob

    def _restore(self, gid: str, parent: str | None, blob: bytes, entropy=None) -> Guest:
        image = decode_blob(blob)
        device = GenIdDevice.from_state(image.meta["device"])
        view = device.map_shared_view()
        entropy = entropy if entropy is not None else self.entropy_for(gid)
        procs = {}
        for pstate in image.meta["processes"]:
            reg = image.registries[pstate["pid"]]
            reg.resume()
            procs[pstate["pid"]] = Process.rebuild(pstate, reg, entropy, view, self.config.checks)
        guest = Guest(gid, device, procs, parent=parent)
        guest.cache = [int(v, 16) for v in image.meta["cache"]]
        guest.watcher_delays = {int(h): d for h, d in image.meta["watcher_delays"].items()}
        return guest

    def clone_restore(self, blob: bytes, count: int = 1, parent: str | None = None) -> list[Guest]:
        """Restore ``count`` copies of ``blob``, each with a fresh identity.

        The generation bump is applied before the clone runs anything, which
        is the ordering the platform must guarantee.
        """
        if count < 1:
            raise SimError("clone count must be at least 1")
        parent = parent or decode_blob(blob).meta["guest"]
        clones = []
        for _ in range(count):
            n = self._clone_counts.get(parent, 0)
            self._clone_counts[parent] = n + 1
            gid = f"{parent}.{n}"
            guest = self._restore(gid, parent, blob)
            self.guests[gid] = guest
            self._parked[gid] = set()
            self._park_watchers(guest)
            self._maybe_bump(guest, EventKind.CLONE_RESTORE)
            self._note(guest, "CloneRestore")
            self.log(guest, "CloneRestore",
                     f"parent={parent} uuid={guest.device.backend_uuid.hex()}")
            clones.append(guest)
        return clones

    def plain_restore(self, guest: Guest) -> Guest:
        """Restore a guest in place from its own last snapshot (no copy made)."""
        if guest.snapshot is None:
            raise SimError(f"{guest.id} has no snapshot")
        for h in guest.device.watchers:
            guest.device.close_watcher(h)
        # Same machine, same entropy stream: it must not restart from the top.
        fresh = self._restore(guest.id, guest.parent, guest.snapshot, guest.rng.entropy)
        fresh.snapshot = guest.snapshot
        fresh.nonce_log = guest.nonce_log
        fresh.epoch_log = guest.epoch_log
        fresh.clone_count = guest.clone_count
        self.guests[guest.id] = fresh
        self._parked[guest.id] = set()
        self._park_watchers(fresh)
        self._maybe_bump(fresh, EventKind.PLAIN_RESTORE)
        self._note(fresh, "PlainRestore")
        self.log(fresh, "PlainRestore", f"uuid={fresh.device.backend_uuid.hex()}")
        return fresh

    def resume(self, guest: Guest) -> None:
        self._require(guest, SUSPENDED, PAUSED)
        for reg in guest.registries():
            reg.resume()
        guest.state = RUNNING
        self._maybe_bump(guest, EventKind.RESUME)
        self._note(guest, "Resume")
        self.log(guest, "Resume")
        self._park_watchers(guest)

    def pause(self, guest: Guest) -> None:
        self._require(guest, RUNNING)
        guest.state = PAUSED
        self._maybe_bump(guest, EventKind.PAUSE)
        self._note(guest, "Pause")
        self.log(guest, "Pause")

    def live_migrate(self, guest: Guest) -> None:
        self._require(guest, RUNNING, PAUSED)
        self._maybe_bump(guest, EventKind.LIVE_MIGRATE)
        self._note(guest, "LiveMigrate")
        self.log(guest, "LiveMigrate")

    def reboot(self, guest: Guest) -> None:
        for h in guest.device.watchers:
            guest.device.close_watcher(h)
        guest.watcher_delays.clear()
        self._parked[guest.id] = set()
        entropy = guest.rng.entropy
        guest.processes = {1: Process.fresh(1, entropy, guest.device.map_shared_view(),
                                            self.config.checks)}
        guest.cache.clear()
        guest.state = RUNNING
        self._open_watchers(guest)
        self._park_watchers(guest)
        self._maybe_bump(guest, EventKind.REBOOT)
        self._note(guest, "Reboot")
        self.log(guest, "Reboot")

    def fork_process(self, guest: Guest, pid: int = 1) -> int:
        if pid not in guest.processes:
            raise NoSuchProcess(f"{guest.id} has no pid {pid}")
        self._require(guest, RUNNING)
        child = max(guest.processes) + 1
        guest.processes[child] = guest.processes[pid].fork(child)
        self._maybe_bump(guest, EventKind.FORK)
        self._note(guest, "Fork")
        self.log(guest, "Fork", f"pid={pid} child={child}")
        return child

    # -- requests ------------------------------------------------------------

    def handler_for(self, guest: Guest) -> tuple[Step, ...] | None:
        steps = None
        for hc in self.config.handlers:
            if match_guests(hc.pattern, [guest.id]):
                steps = hc.steps
        return steps

    def invoke(self, guest: Guest, steps: tuple[Step, ...] | None = None,
               request: Request | None = None) -> Request:
        self._require(guest, RUNNING)
        req = request or Request(guest.id, self.now)
        req.delivered_at = self.now
        steps = steps if steps is not None else self.handler_for(guest)
        self._note(guest, "Invoke")
        self.log(guest, "Invoke", f"issued={req.issued_at}")
        self._run_steps(guest, steps or (), 0, req)
        return req

    def fence_then_invoke(self, guest: Guest, steps: tuple[Step, ...] | None = None) -> Request:
        """Hold the request until no watcher is outdated, then deliver it.

        Gives up after ``config.fence_timeout`` ticks and records FenceTimeout.
        """
        self._require(guest, RUNNING)
        req = Request(guest.id, self.now)
        device = guest.device
        self.log(guest, "Fence", f"outdated={device.count_outdated_watchers()}")

        def release() -> None:
            if req.timed_out:
                return
            self.schedule(self.now, lambda: self._deliver(guest, steps, req))

        def expire() -> None:
            if req.delivered_at is not None or req.timed_out:
                return
            device.cancel_quiescent(release)
            req.timed_out = True
            self.log(guest, "FenceTimeout", f"issued={req.issued_at} "
                     f"outdated={device.count_outdated_watchers()}")

        if device.count_outdated_watchers() == 0:
            release()
        else:
            device.when_quiescent(release)
            self.schedule(self.now + self.config.fence_timeout, expire)
        return req

    def _deliver(self, guest: Guest, steps, req: Request) -> None:
        if req.delivered_at is not None or req.timed_out:
            return
        if guest.state != RUNNING:
            self.log(guest, "Drop", f"issued={req.issued_at} state={guest.state}")
            req.timed_out = True
            return
        self.invoke(guest, steps, req)

    def _run_steps(self, guest: Guest, steps: tuple[Step, ...], start: int, req: Request) -> None:
        for i in range(start, len(steps)):
            if guest.state != RUNNING:
                self.log(guest, "Drop", f"step={i} state={guest.state}")
                return
            step = steps[i]
            if step.op == "sleep":
                self.schedule(self.now + step.arg,
                              lambda: self._run_steps(guest, steps, i + 1, req))
                return
            if step.op == "nonces":
                nc = guest.main.nonces
                for _ in range(step.arg):
                    self._emit(guest, req, nc.next_nonce())
            elif step.op == "bytes":
                self._emit(guest, req, guest.rng.generate(step.arg))
            elif step.op == "cache":
                nc = guest.main.nonces
                guest.cache.extend(nc.next_nonce() for _ in range(step.arg))
            elif step.op == "use":
                for v in guest.cache:
                    self._emit(guest, req, v)
                guest.cache.clear()
        req.completed_at = self.now

    def _emit(self, guest: Guest, req: Request, value) -> None:
        guest.nonce_log.append((self.now, value))
        req.emitted.append(value)
        if self.config.log_emissions:
            if isinstance(value, int):
                self.log(guest, "Emit", f"nonce={value:032x}")
            else:
                self.log(guest, "Emit", f"bytes={value.hex()}")

    # -- schedule driver -------------------------------------------------------

    def apply(self, ev: SimEvent) -> None:
        """Execute one schedule event now; errors are logged, never raised."""
        if ev.kind is EventKind.BOOT:
            try:
                self.boot(ev.target)
            except (SimError, DeviceError, GuardMemoryError, DrbgError) as e:
                self.error(ev.target, str(ev.kind), e)
            return
        targets = match_guests(ev.target, self.guests)
        if not targets:
            self.error(ev.target, str(ev.kind), NoSuchGuest(f"no guest matches {ev.target!r}"))
            return
        for gid in targets:
            try:
                self._apply_one(ev, self.guests[gid])
            except (SimError, DeviceError, GuardMemoryError, DrbgError, ValueError) as e:
                self.error(gid, str(ev.kind), e)

    def _apply_one(self, ev: SimEvent, guest: Guest) -> None:
        k = ev.kind
        if k is EventKind.SUSPEND:
            self.suspend(guest)
        elif k is EventKind.SNAPSHOT:
            self.suspend_and_snapshot(guest)
        elif k is EventKind.CLONE_RESTORE:
            if guest.snapshot is None:
                raise SimError(f"{guest.id} has no snapshot to clone")
            count = int(ev.args[0]) if ev.args else 1
            self.clone_restore(guest.snapshot, count, parent=guest.id)
        elif k is EventKind.PLAIN_RESTORE:
            self.plain_restore(guest)
        elif k is EventKind.RESUME:
            self.resume(guest)
        elif k is EventKind.FORK:
            self.fork_process(guest, int(ev.args[0]) if ev.args else 1)
        elif k is EventKind.REBOOT:
            self.reboot(guest)
        elif k is EventKind.PAUSE:
            self.pause(guest)
        elif k is EventKind.LIVE_MIGRATE:
            self.live_migrate(guest)
        elif k is EventKind.INVOKE:
            self.invoke(guest)
        elif k is EventKind.FENCE:
            self.fence_then_invoke(guest)
        else:  # pragma: no cover - enum is exhaustive
            raise SimError(f"unhandled event kind {k}")

    def run_schedule(self, events: Iterable[SimEvent]) -> tuple[list[Record], CloneTree]:
        events = list(events)
        if not any(e.kind is EventKind.BOOT and e.target == ROOT_ID for e in events) \
                and ROOT_ID not in self.guests:
            self.boot(ROOT_ID)
        for ev in events:
            self.schedule(ev.tick, lambda ev=ev: self.apply(ev))
        self.run()
        return self.records, self.clone_tree()


def boot(world: World, gid: str = ROOT_ID) -> Guest:
    return world.boot(gid)


def run_schedule(world: World, events: Iterable[SimEvent]) -> tuple[list[Record], CloneTree]:
    return world.run_schedule(events)
