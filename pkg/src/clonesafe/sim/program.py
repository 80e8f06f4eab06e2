"""Invoke-handler programs.

A program is a ``;``-separated list of steps:

``nonces K``  draw K nonces and use them (each is logged as an emission)
``bytes K``   draw K random bytes and use them as one emission
``sleep T``   suspend the handler for T ticks
``cache K``   draw K nonces and keep them in guest memory, unused
``use``       use, then discard, every cached value
"""

from __future__ import annotations

from dataclasses import dataclass

_ARITY = {"nonces": 1, "bytes": 1, "sleep": 1, "cache": 1, "use": 0}


class ProgramError(ValueError):
    pass


@dataclass(frozen=True)
class Step:
    op: str
    arg: int = 0

    def __str__(self) -> str:
        return self.op if _ARITY[self.op] == 0 else f"{self.op} {self.arg}"


def parse_program(text: str) -> tuple[Step, ...]:
    steps = []
    for raw in text.split(";"):
        words = raw.split()
        if not words:
            continue
        op, rest = words[0], words[1:]
        if op not in _ARITY:
            raise ProgramError(f"unknown handler step {op!r}")
        if len(rest) != _ARITY[op]:
            raise ProgramError(f"step {op!r} takes {_ARITY[op]} argument(s)")
        arg = 0
        if rest:
            try:
                arg = int(rest[0])
            except ValueError:
                raise ProgramError(f"step {op!r} needs an integer, got {rest[0]!r}") from None
            if arg < 0 or (op == "bytes" and arg == 0):
                raise ProgramError(f"bad argument for {op!r}: {arg}")
        steps.append(Step(op, arg))
    if not steps:
        raise ProgramError("empty handler program")
    return tuple(steps)


def format_program(steps: tuple[Step, ...]) -> str:
    return "; ".join(str(s) for s in steps)
