import pytest
from hypothesis import given, settings, strategies as st

from clonesafe.guard_memory import PAGE_SIZE, CorruptStream, WipePolicy
from clonesafe.harness.uniqueness import check_uniqueness, logs_from_records
from clonesafe.rng import LIVE_MARKER, read_generation
from clonesafe.sim import (DEFAULT_BUMP_POLICY, EventKind, HandlerConfig, NoSuchProcess, RngChecks,
                           SimEvent, WatcherConfig, World, WorldConfig, decode_blob, encode_blob,
                           match_guests, parse_program, parse_record)
from clonesafe.sim.guest import SUSPENDED
from clonesafe.sim.world import BadState, SimError

SECRET = b"<<secret-signing-key-0123456789>>"


def ev(tick, kind, target="g0", *args):
    return SimEvent(tick, EventKind(kind), target, tuple(str(a) for a in args))


def test_default_policy_bumps_only_on_clone():
    assert [k for k, v in DEFAULT_BUMP_POLICY.items() if v] == [EventKind.CLONE_RESTORE]


def test_boot():
    w = World(1, WorldConfig(watchers=[WatcherConfig("**", 2, 1)]))
    g = w.boot()
    assert g.generation == 0 and g.device.count_outdated_watchers() == 0
    assert g.epoch_log == [(0, "Boot")]
    with pytest.raises(SimError):
        w.boot()


def test_boot_determinism_and_seed_lineages():
    a, b, c = World(9).boot(), World(9).boot(), World(10).boot()
    assert a.rng.generate(64) == b.rng.generate(64)
    assert a.device.backend_uuid == b.device.backend_uuid != c.device.backend_uuid


def test_snapshot_zeroes_guard_and_hides_secret():
    w = World(2)
    g = w.boot()
    g.registry.register(PAGE_SIZE, WipePolicy(exclude_from_snapshot=True), fill=SECRET)
    g.rng.generate(16)
    blob = w.suspend_and_snapshot(g)
    assert SECRET not in blob and LIVE_MARKER not in blob
    image = decode_blob(blob)
    assert image.registries[1][g.main.guard_region].is_zero()
    assert image.generation == 0 and image.backend_uuid == g.device.backend_uuid
    assert w.suspend_and_snapshot(g) == blob  # second snapshot without resume


def test_blob_corruption_detected():
    w = World(2)
    blob = w.suspend_and_snapshot(w.boot())
    for bad in (blob[:10], blob[:-1], b"NOPE" + blob[4:], blob + b"x"):
        with pytest.raises(CorruptStream):
            decode_blob(bad)


def test_clone_restore_two():
    w = World(3, WorldConfig(watchers=[WatcherConfig("**", 1, 4)]))
    g = w.boot()
    blob = w.suspend_and_snapshot(g)
    a, b = w.clone_restore(blob, 2)
    assert (a.id, b.id) == ("g0.0", "g0.1")
    assert a.generation == b.generation == g.generation + 1
    assert a.device.backend_uuid != b.device.backend_uuid
    # the watcher handle carried in the image is outdated in both clones
    assert a.device.count_outdated_watchers() == b.device.count_outdated_watchers() == 1
    rid = a.registry.register(PAGE_SIZE, fill=1)
    a.registry.write(a.main.guard_region, 100, b"mutated")
    assert b.registry.read(b.main.guard_region, 100, 7) == bytes(7)
    assert rid not in b.registry.regions
    with pytest.raises(SimError):
        w.clone_restore(blob, 0)


def test_plain_restore_keeps_generation():
    w = World(3)
    g = w.boot()
    w.suspend_and_snapshot(g)
    again = w.plain_restore(g)
    assert again.generation == 0 and again.id == "g0"
    assert again.device.backend_uuid == g.device.backend_uuid


def test_restored_rng_reseeds_even_without_bump():
    w = World(3)
    g = w.boot()
    w.suspend_and_snapshot(g)
    again = w.plain_restore(g)
    assert again.rng.stale()  # the guard page was wiped before the snapshot
    again.rng.generate(8)
    assert again.rng.inspect().reseeds == 1


def test_fork():
    w = World(4)
    g = w.boot()
    rid = g.registry.register(PAGE_SIZE, WipePolicy(wipe_on_fork=True), fill=0xAB)
    gen = g.generation
    child = w.fork_process(g)
    assert g.processes[child].registry[rid].is_zero()
    assert not g.registry[rid].is_zero()
    assert g.generation == gen
    grandchild = w.fork_process(g, child)
    assert grandchild == 3 and g.processes[grandchild].registry[rid].is_zero()
    with pytest.raises(NoSuchProcess):
        w.fork_process(g, 42)


def test_forked_processes_emit_distinct_nonces():
    w = World(4)
    g = w.boot()
    g.main.nonces.next_nonce()
    child = g.processes[w.fork_process(g)]
    a = [g.main.nonces.next_nonce() for _ in range(100)]
    b = [child.nonces.next_nonce() for _ in range(100)]
    assert not set(a) & set(b)


def test_fence_delivers_at_ack_time():
    w = World(5, WorldConfig(watchers=[WatcherConfig("**", 1, 2)]))
    g = w.boot()
    w.now = 3
    (clone,) = w.clone_restore(w.suspend_and_snapshot(g))
    req = w.fence_then_invoke(clone, parse_program("nonces 1"))
    assert req.delivered_at is None
    w.run()
    assert req.delivered_at == 5 and len(req.emitted) == 1
    acks = [r.tick for r in w.records if r.event == "Ack"]
    assert acks == [5]


def test_fence_waits_for_the_last_of_two_watchers():
    cfg = WorldConfig(watchers=[WatcherConfig("g0", 1, 2), WatcherConfig("g0", 1, 7)])
    w = World(5, cfg)
    (clone,) = w.clone_restore(w.suspend_and_snapshot(w.boot()))
    req = w.fence_then_invoke(clone, ())
    w.run()
    assert req.delivered_at == 7


def test_fence_without_watchers_is_immediate():
    w = World(5)
    g = w.boot()
    req = w.fence_then_invoke(g, parse_program("nonces 2"))
    w.run()
    assert req.delivered_at == 0 and len(req.emitted) == 2


def test_fence_times_out_when_watcher_never_acks():
    w = World(5, WorldConfig(fence_timeout=50, watchers=[WatcherConfig("**", 1, None)]))
    (clone,) = w.clone_restore(w.suspend_and_snapshot(w.boot()))
    req = w.fence_then_invoke(clone, parse_program("nonces 2"))
    w.run()
    assert req.timed_out and req.delivered_at is None and not req.emitted
    (rec,) = [r for r in w.records if r.event == "FenceTimeout"]
    assert rec.tick == 50


def test_invoke_needs_running_guest():
    w = World(5)
    g = w.boot()
    w.suspend(g)
    assert g.state == SUSPENDED
    with pytest.raises(BadState):
        w.invoke(g, ())


def test_sleep_and_cache_steps():
    w = World(6)
    g = w.boot()
    req = w.invoke(g, parse_program("cache 2; sleep 5; use"))
    assert not req.emitted
    w.run()
    assert len(req.emitted) == 2 and req.completed_at == 5
    assert req.emitted[1] == req.emitted[0] + 1


def test_empty_schedule_logs_boot_only():
    records, tree = World(7).run_schedule([])
    assert [r.event for r in records] == ["Boot"]
    assert tree.roots() == ["g0"] and tree.leaves() == ["g0"]


def test_schedule_errors_are_logged_and_run_continues():
    records, _ = World(7).run_schedule([ev(1, "Resume"), ev(2, "Invoke", "g9"), ev(3, "Invoke")])
    assert [r.event for r in records] == ["Boot", "Error", "Error", "Invoke"]


def tree_schedule():
    return [ev(1, "Invoke"), ev(2, "Snapshot"), ev(3, "CloneRestore", "g0", 3),
            ev(4, "Fence", "g0.*"), ev(6, "Snapshot", "g0.1"),
            ev(7, "CloneRestore", "g0.1", 2), ev(8, "Fence", "g0.1.*"), ev(9, "Fork", "g0.0"),
            ev(10, "Invoke", "g0.0")]


def tree_config():
    return WorldConfig(watchers=[WatcherConfig("**", 1, 1)],
                       handlers=[HandlerConfig("**", parse_program("nonces 5; bytes 8"))])


def test_replay_is_byte_identical():
    a, b = World(11, tree_config()), World(11, tree_config())
    a.run_schedule(tree_schedule())
    b.run_schedule(tree_schedule())
    assert a.render_log() == b.render_log()
    c = World(12, tree_config())
    c.run_schedule(tree_schedule())
    assert c.render_log() != a.render_log()


def test_log_nonces_match_guest_logs():
    w = World(11, tree_config())
    records, tree = w.run_schedule(tree_schedule())
    from_log = logs_from_records(records)
    assert from_log == {g: log for g, log in tree.nonce_logs.items() if log}
    assert check_uniqueness(from_log).duplicates == 0
    assert tree.parents["g0.1.0"] == "g0.1" and tree.depth("g0.1.1") == 2
    assert tree.children("g0") == ["g0.0", "g0.1", "g0.2"]


def test_log_lines_parse_back_and_generation_matches_view():
    w = World(11, tree_config())
    seen = []
    w.observers.append(lambda r: seen.append(
        (r.gen, read_generation(w.guests[r.guest].device.map_shared_view()))
        if r.guest in w.guests else (r.gen, r.gen)))
    w.run_schedule(tree_schedule())
    assert all(a == b for a, b in seen)
    for line in w.render_log().splitlines():
        assert parse_record(line).render() == line


def test_epoch_log_is_time_ordered():
    w = World(11, tree_config())
    w.run_schedule(tree_schedule())
    for g in w.guests.values():
        ticks = [t for t, _ in g.epoch_log]
        assert ticks == sorted(ticks)


@pytest.mark.parametrize("kind", [k for k in EventKind if k not in
                                  (EventKind.BOOT, EventKind.INVOKE, EventKind.FENCE)])
@pytest.mark.parametrize("bump", [False, True])
def test_policy_table_conformance(kind, bump):
    policy = dict(DEFAULT_BUMP_POLICY)
    policy[kind] = bump
    w = World(13, WorldConfig(policy=policy))
    w.boot()
    prep = {EventKind.RESUME: [ev(1, "Suspend")], EventKind.PLAIN_RESTORE: [ev(1, "Snapshot")],
            EventKind.CLONE_RESTORE: [ev(1, "Snapshot")]}.get(kind, [])
    w.run_schedule(prep)
    before = w.guests["g0"].generation
    w.run_schedule([ev(w.now + 1, kind.value)])
    assert w.errors == 0
    target = w.guests["g0.0" if kind is EventKind.CLONE_RESTORE else "g0"]
    assert target.generation == (before + 1 if bump else before)


def test_reboot_reseeds_fresh_library_state():
    w = World(14, WorldConfig(watchers=[WatcherConfig("**", 1, 1)]))
    g = w.boot()
    before = g.main.nonces.next_nonce()
    w.reboot(g)
    assert g.generation == 0 and len(g.device.watchers) == 1
    assert g.main.nonces.next_nonce() != before + 1


def test_pattern_matching():
    ids = ["g0", "g0.0", "g0.1", "g0.0.3", "g1"]
    assert match_guests("g0.*", ids) == ["g0.0", "g0.1"]
    assert match_guests("g0.*.*", ids) == ["g0.0.3"]
    assert match_guests("**", ids) == sorted(ids, key=lambda s: s)
    assert match_guests("g0.**", ids) == ["g0", "g0.0", "g0.0.3", "g0.1"]
    assert match_guests("g?", ids) == ["g0", "g1"]


def test_rng_checks_text():
    assert str(RngChecks()) == "guard,view"
    assert RngChecks.parse("none") == RngChecks(False, False)
    assert RngChecks.parse("view") == RngChecks(False, True)
    with pytest.raises(ValueError):
        RngChecks.parse("bogus")


def test_encode_requires_suspended_registries():
    w = World(15)
    g = w.boot()
    with pytest.raises(Exception):
        encode_blob(g)


# -- fence soundness over random clone trees ------------------------------------

@st.composite
def fenced_schedules(draw):
    rounds = draw(st.integers(1, 3))
    fan = draw(st.integers(1, 4))
    events, pattern, t = [ev(1, "Invoke")], "g0", 2
    for _ in range(rounds):
        events += [ev(t, "Snapshot", pattern), ev(t + 1, "CloneRestore", pattern, fan)]
        pattern += ".*"
        gap = draw(st.integers(0, 6))
        events.append(ev(t + 1 + gap, "Fence", pattern))
        t += 2 + gap + draw(st.integers(0, 6))
    checks = draw(st.sampled_from(["guard,view", "guard", "view", "none"]))
    delay = draw(st.integers(0, 5))
    count = draw(st.integers(1, 3))
    return events, checks, delay, count


@settings(max_examples=60, deadline=None)
@given(fenced_schedules(), st.integers(0, 2**32))
def test_fenced_clone_trees_never_repeat(sched, seed):
    events, checks, delay, count = sched
    cfg = WorldConfig(checks=RngChecks.parse(checks), fence_timeout=1000,
                      watchers=[WatcherConfig("**", count, delay)],
                      handlers=[HandlerConfig("**", parse_program("nonces 20; bytes 16"))])
    w = World(seed, cfg)
    w.run_schedule(events)
    assert w.errors == 0
    report = check_uniqueness({g: x.nonce_log for g, x in w.guests.items()})
    assert report.duplicates == 0, report.render()


def test_unfenced_unguarded_clones_repeat():
    cfg = WorldConfig(checks=RngChecks(False, False), watchers=[WatcherConfig("**", 1, 3)],
                      handlers=[HandlerConfig("**", parse_program("nonces 5"))])
    w = World(16, cfg)
    w.run_schedule([ev(1, "Snapshot"), ev(2, "CloneRestore", "g0", 2), ev(2, "Invoke", "g0.*")])
    assert check_uniqueness({g: x.nonce_log for g, x in w.guests.items()}).duplicates == 5
