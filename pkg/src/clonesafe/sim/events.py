from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum


class EventKind(str, Enum):
    BOOT = "Boot"
    SUSPEND = "Suspend"
    SNAPSHOT = "Snapshot"
    CLONE_RESTORE = "CloneRestore"
    PLAIN_RESTORE = "PlainRestore"
    RESUME = "Resume"
    FORK = "Fork"
    REBOOT = "Reboot"
    PAUSE = "Pause"
    LIVE_MIGRATE = "LiveMigrate"
    INVOKE = "Invoke"
    FENCE = "Fence"

    def __str__(self) -> str:
        return self.value


# Which lifecycle events change the machine's identity (bump the generation).
# Restore-as-copy bumps; reboot, pause, resume, live migration and a restore
# that cannot have produced a copy do not.
DEFAULT_BUMP_POLICY: dict[EventKind, bool] = {k: False for k in EventKind}
DEFAULT_BUMP_POLICY[EventKind.CLONE_RESTORE] = True


@dataclass(frozen=True)
class SimEvent:
    tick: int
    kind: EventKind
    target: str
    args: tuple[str, ...] = ()


@dataclass(frozen=True, slots=True)
class Record:
    """One line of the event log."""

    tick: int
    guest: str
    event: str
    gen: int
    detail: str = ""

    def render(self) -> str:
        return f"t={self.tick} guest={self.guest} event={self.event} gen={self.gen} detail={self.detail}"


_LINE = re.compile(r"^t=(\d+) guest=(\S+) event=(\S+) gen=(-?\d+) detail=(.*)$")


def parse_record(line: str) -> Record:
    m = _LINE.match(line.rstrip("\n"))
    if not m:
        raise ValueError(f"not an event-log line: {line!r}")
    return Record(int(m[1]), m[2], m[3], int(m[4]), m[5])


def guest_sort_key(guest_id: str) -> tuple:
    return tuple((0, int(p), "") if p.isdigit() else (1, 0, p) for p in guest_id.split("."))
