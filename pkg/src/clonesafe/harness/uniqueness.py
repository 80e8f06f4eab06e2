"""Exact duplicate detection over the emissions of every guest in a run."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Any, Iterable, Mapping, Sequence

from ..sim.events import Record, guest_sort_key


@dataclass(frozen=True)
class Emission:
    guest: str
    tick: int
    value: Any

    def describe(self) -> str:
        return f"(guest={self.guest} tick={self.tick})"


@dataclass(frozen=True)
class UniquenessReport:
    total: int
    duplicates: int
    first_collision: tuple[Emission, Emission] | None

    @property
    def verdict(self) -> str:
        return "unique" if self.duplicates == 0 else "duplicates"

    def render(self) -> str:
        lines = [f"verdict: {self.verdict}",
                 f"emissions: {self.total}",
                 f"duplicates: {self.duplicates}"]
        if self.first_collision is None:
            lines.append("first_collision: none")
        else:
            a, b = self.first_collision
            lines.append(f"first_collision: value={format_value(a.value)} "
                         f"first={a.describe()} second={b.describe()}")
        return "\n".join(lines)


def format_value(value: Any) -> str:
    if isinstance(value, int):
        return f"{value:032x}"
    if isinstance(value, (bytes, bytearray)):
        return "bytes:" + bytes(value).hex()
    return repr(value)


def _emissions(logs) -> Iterable[Emission]:
    items = logs.items() if isinstance(logs, Mapping) else ((str(i), l) for i, l in enumerate(logs))
    for guest, log in items:
        for idx, entry in enumerate(log):
            if isinstance(entry, tuple) and len(entry) == 2:
                yield Emission(str(guest), entry[0], entry[1])
            else:
                yield Emission(str(guest), idx, entry)


def check_uniqueness(logs: Mapping[str, Sequence] | Sequence[Sequence]) -> UniquenessReport:
    """Count repeated values across all logs.

    ``logs`` maps guest id to a sequence of ``(tick, value)`` pairs or bare
    values (whose position then stands in for the tick). ``duplicates`` is
    the number of emissions beyond the first for each value. The reported
    collision is the earliest repeat when every emission is ordered by tick,
    then guest id, then position in its log.
    """
    emissions = list(_emissions(logs))
    counts = Counter(e.value for e in emissions)
    dupes = len(emissions) - len(counts)
    if dupes == 0:
        return UniquenessReport(len(emissions), 0, None)

    keys = {g: guest_sort_key(g) for g in {e.guest for e in emissions}}
    repeated = {v for v, c in counts.items() if c > 1}
    order = sorted(
        ((e.tick, keys[e.guest], i, e) for i, e in enumerate(emissions) if e.value in repeated),
        key=lambda t: t[:3],
    )
    seen: dict[Any, Emission] = {}
    first = None
    for *_, e in order:
        if e.value in seen:
            first = (seen[e.value], e)
            break
        seen[e.value] = e
    return UniquenessReport(len(emissions), dupes, first)


def logs_from_records(records: Iterable[Record]) -> dict[str, list[tuple[int, Any]]]:
    """Rebuild per-guest emission logs from ``Emit`` event-log records."""
    logs: dict[str, list[tuple[int, Any]]] = {}
    for r in records:
        if r.event != "Emit":
            continue
        key, _, val = r.detail.partition("=")
        if key == "nonce":
            value: Any = int(val, 16)
        elif key == "bytes":
            value = bytes.fromhex(val)
        else:
            raise ValueError(f"unrecognised emission detail {r.detail!r}")
        logs.setdefault(r.guest, []).append((r.tick, value))
    return logs
