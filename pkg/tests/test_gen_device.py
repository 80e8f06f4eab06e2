import struct
import threading
import time

import pytest
from hypothesis import given, settings, strategies as st

from clonesafe.entropy import SeedTree
from clonesafe.gen_device import (MAX_GENERATION, PAGE_SIZE, ClosedHandle, DuplicateUuid,
                                  GenerationOverflow, GenIdDevice, StaleAck, UuidSource,
                                  WatchTimeout, WouldBlock)
from device_model import run_schedule_pair


def uuid(i: int) -> bytes:
    return i.to_bytes(16, "big")


def device_at(gen: int) -> GenIdDevice:
    return GenIdDevice(uuid(0), gen)


# -- examples ------------------------------------------------------------------

def test_fresh_handle_sees_current_generation():
    dev = device_at(7)
    h = dev.open_watcher()
    assert h.last_acked == 7 and not dev.is_outdated(h)
    assert GenIdDevice(uuid(0)).open_watcher().last_acked == 0


def test_bump_outdates_every_handle():
    dev = device_at(0)
    hs = [dev.open_watcher() for _ in range(3)]
    dev.backend_bump(uuid(1))
    assert all(dev.is_outdated(h) for h in hs)
    assert dev.count_outdated_watchers() == 3
    dev.acknowledge(hs[0], 1)
    dev.acknowledge(hs[1], 1)
    assert dev.count_outdated_watchers() == 1


def test_no_watchers_counts_zero():
    assert device_at(3).count_outdated_watchers() == 0


def test_nonblocking_read():
    dev = device_at(4)
    h = dev.open_watcher()
    with pytest.raises(WouldBlock):
        dev.read(h)
    dev.backend_bump(uuid(1))
    assert dev.read(h) == 5


def test_blocking_read_sees_concurrent_bump():
    dev = device_at(5)
    h = dev.open_watcher()
    got = []
    t = threading.Thread(target=lambda: got.append(dev.read(h, blocking=True, timeout=5)))
    t.start()
    time.sleep(0.05)
    dev.backend_bump(uuid(1))
    t.join(5)
    assert got == [6]


def test_blocking_read_times_out():
    dev = device_at(0)
    with pytest.raises(WatchTimeout):
        dev.read(dev.open_watcher(), blocking=True, timeout=0.01)


def test_ack_current_and_stale():
    dev = device_at(5)
    h = dev.open_watcher()
    dev.backend_bump(uuid(1))
    dev.acknowledge(h, 6)
    assert not dev.is_outdated(h)
    dev.backend_bump(uuid(2))
    with pytest.raises(StaleAck):
        dev.acknowledge(h, 6)
    assert h.last_acked == 6
    with pytest.raises(StaleAck):
        dev.acknowledge(h, 99)  # values from the future are refused too


def test_closed_handle_errors():
    dev = device_at(0)
    h = dev.open_watcher()
    dev.close_watcher(h)
    with pytest.raises(ClosedHandle):
        dev.acknowledge(h, 0)
    with pytest.raises(ClosedHandle):
        dev.read(h)
    dev.close_watcher(h)  # closing twice is harmless


def test_shared_view_layout():
    dev = device_at(0)
    v1 = dev.map_shared_view()
    for i in range(3):
        dev.backend_bump(uuid(i + 1))
    v2 = dev.map_shared_view()
    assert len(v1) == PAGE_SIZE
    assert struct.unpack_from("<I", v1)[0] == 3
    assert bytes(v1) == bytes(v2)
    assert not any(bytes(v1)[4:])
    with pytest.raises(TypeError):
        v1[0] = 1


def test_bump_rules():
    dev = device_at(4)
    assert dev.backend_bump(uuid(1)) == 5
    with pytest.raises(DuplicateUuid):
        dev.backend_bump(uuid(1))
    assert dev.generation == 5
    top = device_at(MAX_GENERATION)
    with pytest.raises(GenerationOverflow):
        top.backend_bump(uuid(1))
    assert top.generation == MAX_GENERATION
    with pytest.raises(GenerationOverflow):
        GenIdDevice(uuid(0), MAX_GENERATION + 1)


def test_double_bump_skips_intermediate():
    dev = device_at(0)
    h = dev.open_watcher()
    dev.backend_bump(uuid(1))
    dev.backend_bump(uuid(2))
    assert dev.read(h) == 2
    dev.acknowledge(h, 2)
    with pytest.raises(WouldBlock):
        dev.read(h)


def test_wait_watchers_returns_on_acks_and_close():
    dev = device_at(0)
    dev.wait_watchers(timeout=0)  # nothing outdated
    a, b = dev.open_watcher(), dev.open_watcher()
    dev.backend_bump(uuid(1))

    def settle():
        time.sleep(0.02)
        dev.acknowledge(a, 1)
        time.sleep(0.02)
        dev.close_watcher(b)  # leaves without acking: releases the wait

    t = threading.Thread(target=settle)
    t.start()
    dev.wait_watchers(timeout=5)
    t.join()
    assert dev.count_outdated_watchers() == 0


def test_wait_watchers_times_out():
    dev = device_at(0)
    dev.open_watcher()
    dev.backend_bump(uuid(1))
    with pytest.raises(WatchTimeout):
        dev.wait_watchers(timeout=0.01)


def test_uuid_source_deterministic_and_distinct():
    a = UuidSource(SeedTree(1).child("vmgenid"))
    b = UuidSource(SeedTree(1).child("vmgenid"))
    xs = [a.next() for _ in range(1000)]
    assert xs == [b.next() for _ in range(1000)]
    assert len(set(xs)) == 1000
    assert len(set(UuidSource().next() for _ in range(100))) == 100


def test_export_roundtrip():
    dev = device_at(3)
    h = dev.open_watcher()
    dev.backend_bump(uuid(9))
    copy = GenIdDevice.from_state(dev.export_state())
    assert copy.generation == 4 and copy.backend_uuid == uuid(9)
    assert copy.count_outdated_watchers() == 1
    assert copy.open_watcher().id != h.id


# -- randomized schedules against a naive model ------------------------------

SCHEDULES = 10_000


def test_randomized_schedules_match_naive_model():
    total = sum(run_schedule_pair(seed) for seed in range(SCHEDULES))
    assert total == SCHEDULES * 40


@settings(max_examples=200, deadline=None)
@given(st.integers(min_value=SCHEDULES, max_value=2**63))
def test_hypothesis_schedules_match_naive_model(seed):
    run_schedule_pair(seed, steps=60)
