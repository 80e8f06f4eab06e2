"""Scenario files: a line-oriented DSL driving the simulator.

::

    clonesafe-scenario 1
    name fenced-clone
    seed 7
    expect unique
    option fence_timeout 100
    option rng guard,view
    policy Reboot bump
    watchers ** 1 2
    handler ** nonces 100
    event 1 Snapshot g0
    event 2 CloneRestore g0 100
    event 3 Fence g0.*

Blank lines and ``#`` comments are ignored. Events must be listed in
non-decreasing tick order. ``watchers <pattern> <count> <delay|never>`` opens
watcher handles at boot; ``handler <pattern> <program>`` sets the invoke
handler (the last matching line wins).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from ..sim import (EventKind, HandlerConfig, ProgramError, RngChecks, SimEvent, WatcherConfig,
                   WorldConfig, format_program, parse_program)

HEADER = "clonesafe-scenario 1"
UNIQUE = "unique"
DUPLICATES = "duplicates"


class ParseError(ValueError):
    pass


@dataclass
class Scenario:
    name: str
    seed: int
    expect: str = UNIQUE
    events: list[SimEvent] = field(default_factory=list)
    handlers: list[HandlerConfig] = field(default_factory=list)
    watchers: list[WatcherConfig] = field(default_factory=list)
    policy: dict[EventKind, bool] = field(default_factory=dict)
    fence_timeout: int | None = None
    checks: RngChecks | None = None

    def world_config(self) -> WorldConfig:
        cfg = WorldConfig(handlers=list(self.handlers), watchers=list(self.watchers))
        cfg.policy.update(self.policy)
        if self.fence_timeout is not None:
            cfg.fence_timeout = self.fence_timeout
        if self.checks is not None:
            cfg.checks = self.checks
        return cfg


def _int(word: str, lineno: int, what: str) -> int:
    try:
        return int(word)
    except ValueError:
        raise ParseError(f"line {lineno}: {what} must be an integer, got {word!r}") from None


def parse_scenario(text: str) -> Scenario:
    lines = [(i, ln.split("#", 1)[0].strip()) for i, ln in enumerate(text.splitlines(), 1)]
    lines = [(i, ln) for i, ln in lines if ln]
    if not lines or lines[0][1] != HEADER:
        raise ParseError(f"first line must be {HEADER!r}")

    name = seed = None
    sc = Scenario(name="", seed=0)
    last_tick = -1
    for lineno, ln in lines[1:]:
        words = ln.split()
        key, rest = words[0], words[1:]
        if key == "name":
            if not rest:
                raise ParseError(f"line {lineno}: name is empty")
            name = ln[len(key):].strip()
        elif key == "seed":
            if len(rest) != 1:
                raise ParseError(f"line {lineno}: seed takes one value")
            seed = _int(rest[0], lineno, "seed")
        elif key == "expect":
            if rest not in ([UNIQUE], [DUPLICATES]):
                raise ParseError(f"line {lineno}: expect must be 'unique' or 'duplicates'")
            sc.expect = rest[0]
        elif key == "option":
            if len(rest) != 2:
                raise ParseError(f"line {lineno}: option takes a name and a value")
            if rest[0] == "fence_timeout":
                sc.fence_timeout = _int(rest[1], lineno, "fence_timeout")
                if sc.fence_timeout < 0:
                    raise ParseError(f"line {lineno}: fence_timeout must be >= 0")
            elif rest[0] == "rng":
                try:
                    sc.checks = RngChecks.parse(rest[1])
                except ValueError as e:
                    raise ParseError(f"line {lineno}: {e}") from None
            else:
                raise ParseError(f"line {lineno}: unknown option {rest[0]!r}")
        elif key == "policy":
            if len(rest) != 2 or rest[1] not in ("bump", "nobump"):
                raise ParseError(f"line {lineno}: policy <Kind> bump|nobump")
            sc.policy[_kind(rest[0], lineno)] = rest[1] == "bump"
        elif key == "watchers":
            if len(rest) != 3:
                raise ParseError(f"line {lineno}: watchers <pattern> <count> <delay|never>")
            count = _int(rest[1], lineno, "watcher count")
            delay = None if rest[2] == "never" else _int(rest[2], lineno, "watcher delay")
            if count < 1 or (delay is not None and delay < 0):
                raise ParseError(f"line {lineno}: bad watcher count or delay")
            sc.watchers.append(WatcherConfig(rest[0], count, delay))
        elif key == "handler":
            if len(rest) < 2:
                raise ParseError(f"line {lineno}: handler <pattern> <program>")
            try:
                steps = parse_program(" ".join(rest[1:]))
            except ProgramError as e:
                raise ParseError(f"line {lineno}: {e}") from None
            sc.handlers.append(HandlerConfig(rest[0], steps))
        elif key == "event":
            if len(rest) < 3:
                raise ParseError(f"line {lineno}: event <tick> <kind> <guest> [args]")
            tick = _int(rest[0], lineno, "tick")
            if tick < 0 or tick < last_tick:
                raise ParseError(f"line {lineno}: ticks must be non-negative and non-decreasing")
            last_tick = tick
            kind = _kind(rest[1], lineno)
            args = tuple(rest[3:])
            _check_args(kind, args, lineno)
            sc.events.append(SimEvent(tick, kind, rest[2], args))
        else:
            raise ParseError(f"line {lineno}: unknown directive {key!r}")

    if name is None:
        raise ParseError("scenario has no name")
    if seed is None:
        raise ParseError("scenario has no seed")
    sc.name, sc.seed = name, seed
    return sc


def _kind(word: str, lineno: int) -> EventKind:
    try:
        return EventKind(word)
    except ValueError:
        raise ParseError(f"line {lineno}: unknown event kind {word!r}") from None


def _check_args(kind: EventKind, args: tuple[str, ...], lineno: int) -> None:
    if kind in (EventKind.CLONE_RESTORE, EventKind.FORK):
        if len(args) > 1:
            raise ParseError(f"line {lineno}: {kind} takes at most one argument")
        if args and _int(args[0], lineno, f"{kind} argument") < 1:
            raise ParseError(f"line {lineno}: {kind} argument must be >= 1")
    elif args:
        raise ParseError(f"line {lineno}: {kind} takes no arguments")


def format_scenario(sc: Scenario) -> str:
    """Canonical text; ``parse_scenario(format_scenario(s)) == s``."""
    out = [HEADER, f"name {sc.name}", f"seed {sc.seed}", f"expect {sc.expect}"]
    if sc.fence_timeout is not None:
        out.append(f"option fence_timeout {sc.fence_timeout}")
    if sc.checks is not None:
        out.append(f"option rng {sc.checks}")
    for kind, bump in sc.policy.items():
        out.append(f"policy {kind} {'bump' if bump else 'nobump'}")
    for w in sc.watchers:
        out.append(f"watchers {w.pattern} {w.count} {'never' if w.delay is None else w.delay}")
    for h in sc.handlers:
        out.append(f"handler {h.pattern} {format_program(h.steps)}")
    for e in sc.events:
        out.append(" ".join(["event", str(e.tick), str(e.kind), e.target, *e.args]))
    return "\n".join(out) + "\n"


def load_scenario(path: str | Path) -> Scenario:
    return parse_scenario(Path(path).read_text())
