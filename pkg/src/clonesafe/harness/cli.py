"""``clonesafe`` command-line front end.

Exit codes: 0 success (and, for ``run``/``check --expect``, verdict as
expected); 2 usage or parse error; 3 simulation error or unexpected verdict.
"""

from __future__ import annotations

import argparse
import hashlib
import sys
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from ..sim import SimError, World, parse_record
from .bench import WORKLOADS, bench
from .matrix import feature_matrix
from .scenario import DUPLICATES, UNIQUE, ParseError, Scenario, parse_scenario
from .uniqueness import UniquenessReport, check_uniqueness, logs_from_records

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_FAIL = 3

BUILTIN_PREFIX = "builtin:"


class UsageError(Exception):
    pass


def builtin_names() -> list[str]:
    root = resources.files("clonesafe.scenarios")
    return sorted(p.name[:-4] for p in root.iterdir() if p.name.endswith(".scn"))


def read_scenario_text(ref: str) -> str:
    if ref.startswith(BUILTIN_PREFIX):
        name = ref[len(BUILTIN_PREFIX):]
        if name not in builtin_names():
            raise UsageError(f"no builtin scenario {name!r}; have {', '.join(builtin_names())}")
        return resources.files("clonesafe.scenarios").joinpath(name + ".scn").read_text()
    try:
        return Path(ref).read_text()
    except OSError as e:
        raise UsageError(f"cannot read {ref}: {e.strerror}") from None


@dataclass
class RunResult:
    scenario: Scenario
    seed: int
    log: str
    report: UniquenessReport
    errors: int
    guests: int

    @property
    def matches(self) -> bool:
        return self.report.verdict == self.scenario.expect

    @property
    def exit_code(self) -> int:
        return EXIT_OK if self.matches and self.errors == 0 else EXIT_FAIL

    def render(self) -> str:
        return "\n".join([
            f"scenario: {self.scenario.name}",
            f"seed: {self.seed}",
            f"guests: {self.guests}",
            f"log_lines: {self.log.count(chr(10))}",
            f"log_sha256: {hashlib.sha256(self.log.encode()).hexdigest()}",
            f"sim_errors: {self.errors}",
            self.report.render(),
            f"expected: {self.scenario.expect}",
            f"outcome: {'as expected' if self.matches else 'UNEXPECTED'}",
        ])


def run_scenario(sc: Scenario, seed: int | None = None) -> RunResult:
    """Run a parsed scenario; ``seed`` overrides the scenario's own."""
    seed = sc.seed if seed is None else seed
    world = World(seed, sc.world_config())
    world.run_schedule(sc.events)
    logs = {g: w.nonce_log for g, w in world.guests.items()}
    return RunResult(sc, seed, world.render_log(), check_uniqueness(logs), world.errors,
                     len(world.guests))


def _cmd_run(args) -> int:
    sc = parse_scenario(read_scenario_text(args.scenario))
    result = run_scenario(sc, args.seed)
    if args.log == "-":
        sys.stdout.write(result.log)
    elif args.log:
        Path(args.log).write_text(result.log)
    print(result.render())
    return result.exit_code


def _cmd_check(args) -> int:
    try:
        text = Path(args.log_file).read_text()
    except OSError as e:
        raise UsageError(f"cannot read {args.log_file}: {e.strerror}") from None
    try:
        records = [parse_record(ln) for ln in text.splitlines() if ln.strip()]
        report = check_uniqueness(logs_from_records(records))
    except ValueError as e:
        raise ParseError(f"bad log: {e}") from None
    print(report.render())
    if args.expect and report.verdict != args.expect:
        print(f"expected: {args.expect}\noutcome: UNEXPECTED")
        return EXIT_FAIL
    return EXIT_OK


def _cmd_bench(args) -> int:
    try:
        rep = bench(args.workload, with_guard=not args.no_guard, iters=args.iters,
                    entropy=args.entropy, batches=args.batches)
    except ValueError as e:
        raise UsageError(str(e)) from None
    print(rep.render())
    return EXIT_OK


def _cmd_matrix(args) -> int:
    print(feature_matrix().render())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="clonesafe",
                                description="Clone-safe randomness: simulator and test harness.")
    p.add_argument("--seed", type=int, default=None,
                   help="override the scenario seed (run only)")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a scenario file or builtin:<name>")
    r.add_argument("scenario")
    r.add_argument("--log", metavar="FILE", help="write the event log here ('-' for stdout)")
    r.set_defaults(func=_cmd_run)

    c = sub.add_parser("check", help="check an event log for repeated emissions")
    c.add_argument("log_file")
    c.add_argument("--expect", choices=(UNIQUE, DUPLICATES))
    c.set_defaults(func=_cmd_check)

    b = sub.add_parser("bench", help="time the guard-check overhead")
    b.add_argument("workload", choices=WORKLOADS)
    b.add_argument("--no-guard", action="store_true", help="time the unguarded variant only")
    b.add_argument("--iters", type=int, default=None)
    b.add_argument("--entropy", choices=("sys", "test"), default="test")
    b.add_argument("--batches", type=int, default=30)
    b.set_defaults(func=_cmd_bench)

    m = sub.add_parser("matrix", help="print the mechanism/feature comparison")
    m.set_defaults(func=_cmd_matrix)

    sub.add_parser("list", help="list builtin scenarios").set_defaults(
        func=lambda a: print("\n".join(builtin_names())) or EXIT_OK)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:  # argparse: --help exits 0, bad usage exits 2
        return EXIT_OK if e.code in (0, None) else EXIT_USAGE
    try:
        return args.func(args)
    except (UsageError, ParseError) as e:
        print(f"clonesafe: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except SimError as e:
        print(f"clonesafe: simulation error: {e}", file=sys.stderr)
        return EXIT_FAIL
    except Exception as e:  # keep the exit-code contract total
        print(f"clonesafe: internal error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
