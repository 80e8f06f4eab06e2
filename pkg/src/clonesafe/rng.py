"""Clone-aware CSPRNG and nonce counter built on a guard cell.

Both objects keep a live marker in a page the memory layer wipes on fork and
on suspend. Before producing output they read that marker; a zero marker (or,
when a generation-ID view is attached, a generation newer than the one seen
at the last seed) means the process has been duplicated, so they reseed
before returning anything.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

from .drbg import RESEED_INTERVAL, CtrDrbg, DrbgState, EntropyUnavailable, ReseedRequired
from .entropy import EntropySource
from .guard_memory import GUARD_POLICY, PAGE_SIZE, RegionRegistry

LIVE_MARKER = b"SEEDED01"
DRBG_MARKER_OFFSET = 0
NONCE_MARKER_OFFSET = 8
NONCE_BITS = 128
_NONCE_MASK = (1 << NONCE_BITS) - 1
_GEN = struct.Struct("<I")


class GuardCell:
    """Marker slot inside a wipe-on-fork/wipe-on-suspend page."""

    def __init__(self, registry: RegionRegistry, region_id: int, offset: int = 0,
                 marker: bytes = LIVE_MARKER):
        self.region_id = region_id
        self.offset = offset
        self.marker = marker
        self.rebind(registry)

    @classmethod
    def allocate(cls, registry: RegionRegistry, offset: int = 0) -> "GuardCell":
        rid = registry.register(PAGE_SIZE, GUARD_POLICY)
        return cls(registry, rid, offset)

    def rebind(self, registry: RegionRegistry) -> None:
        """Point at the same region id in another registry (after fork/restore)."""
        self._buf = registry[self.region_id].data

    def is_live(self) -> bool:
        return self._buf[self.offset] != 0

    def mark_live(self) -> None:
        self._buf[self.offset : self.offset + len(self.marker)] = self.marker


def read_generation(view) -> int:
    return _GEN.unpack_from(view, 0)[0]


@dataclass(frozen=True)
class RngInspection:
    reseed_counter: int
    epoch: int | None
    reseeds: int


class SnapSafeRng:
    """AES-128 CTR_DRBG (no df, no PR) that reseeds itself after fork or clone.

    ``view`` is an optional mapped generation-ID page. ``check_guard`` and
    ``check_view`` turn the two detection paths off, which the benchmarks and
    the notification-driven simulator mode need.
    """

    def __init__(self, entropy: EntropySource, guard: GuardCell, view=None,
                 personalization: bytes = b"", *, check_guard: bool = True,
                 check_view: bool = True, reseed_interval: int = RESEED_INTERVAL,
                 _state: DrbgState | None = None, _epoch: int | None = None):
        self.entropy = entropy
        self.guard = guard
        self.view = view
        self.check_guard = check_guard
        self.check_view = check_view
        self.reseeds = 0
        self._drbg = CtrDrbg(16, use_df=False, reseed_interval=reseed_interval)
        if _state is None:
            self._drbg.instantiate(self._pull(), personalization=personalization)
            self._seeded()
        else:
            self._drbg.state = _state
            self.epoch = _epoch

    def _pull(self) -> bytes:
        need = self._drbg.seedlen
        data = self.entropy.read(need)
        if len(data) < need:
            raise EntropyUnavailable(f"entropy source gave {len(data)} of {need} bytes")
        return data[:need]

    def _seeded(self) -> None:
        self.guard.mark_live()
        self.epoch = read_generation(self.view) if self.view is not None else None

    def stale(self) -> bool:
        if self.check_guard and not self.guard.is_live():
            return True
        if self.check_view and self.view is not None:
            return read_generation(self.view) > self.epoch
        return False

    def reseed(self, additional: bytes = b"") -> None:
        self._drbg.reseed(self._pull(), additional)
        self.reseeds += 1
        self._seeded()

    def generate(self, n: int, additional: bytes = b"") -> bytes:
        if self.stale():
            self.reseed()
        try:
            return self._drbg.generate(n, additional)
        except ReseedRequired:
            self.reseed()
            return self._drbg.generate(n, additional)

    def inspect(self) -> RngInspection:
        return RngInspection(self._drbg.state.reseed_counter, self.epoch, self.reseeds)

    def attach_view(self, view) -> None:
        self.view = view
        if self.epoch is None:
            self.epoch = read_generation(view)

    def export_state(self) -> dict:
        st = self._drbg.state
        return {"key": st.key.hex(), "v": st.v.hex(), "reseed_counter": st.reseed_counter,
                "epoch": self.epoch, "reseed_interval": self._drbg.reseed_interval}

    @classmethod
    def from_state(cls, state: dict, entropy: EntropySource, guard: GuardCell, view=None,
                   **flags) -> "SnapSafeRng":
        st = DrbgState(bytes.fromhex(state["key"]), bytes.fromhex(state["v"]),
                       state["reseed_counter"])
        return cls(entropy, guard, view, reseed_interval=state["reseed_interval"],
                   _state=st, _epoch=state["epoch"], **flags)


class NonceCounter:
    """Sequential 128-bit nonces with a random base that is redrawn on clone."""

    def __init__(self, rng: SnapSafeRng, guard: GuardCell, view=None, *,
                 check_guard: bool = True, check_view: bool = True,
                 _next: int | None = None, _epoch: int | None = None):
        self.rng = rng
        self.guard = guard
        self.view = view
        self.check_guard = check_guard
        self.check_view = check_view
        self.rebases = 0
        if _next is None:
            self.rebase()
        else:
            self._next = _next
            self.epoch = _epoch

    def rebase(self) -> int:
        self.base = int.from_bytes(self.rng.generate(NONCE_BITS // 8), "big")
        self._next = self.base
        self.rebases += 1
        self.guard.mark_live()
        self.epoch = read_generation(self.view) if self.view is not None else None
        return self.base

    def next_nonce(self) -> int:
        if self.check_guard and not self.guard.is_live():
            self.rebase()
        elif self.check_view and self.view is not None and read_generation(self.view) > self.epoch:
            self.rebase()
        value = self._next
        self._next = (value + 1) & _NONCE_MASK
        return value

    def export_state(self) -> dict:
        return {"next": format(self._next, "032x"), "epoch": self.epoch}

    @classmethod
    def from_state(cls, state: dict, rng: SnapSafeRng, guard: GuardCell, view=None,
                   **flags) -> "NonceCounter":
        return cls(rng, guard, view, _next=int(state["next"], 16), _epoch=state["epoch"], **flags)
