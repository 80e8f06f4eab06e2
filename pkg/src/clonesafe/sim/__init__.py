from .events import DEFAULT_BUMP_POLICY, EventKind, Record, SimEvent, parse_record
from .guest import Guest, Process, RngChecks, decode_blob, encode_blob
from .program import ProgramError, Step, format_program, parse_program
from .world import (CloneTree, HandlerConfig, NoSuchGuest, NoSuchProcess, Request, SimError,
                    WatcherConfig, World, WorldConfig, boot, match_guests, run_schedule)

__all__ = [
    "DEFAULT_BUMP_POLICY", "EventKind", "Record", "SimEvent", "parse_record",
    "Guest", "Process", "RngChecks", "decode_blob", "encode_blob",
    "ProgramError", "Step", "format_program", "parse_program",
    "CloneTree", "HandlerConfig", "NoSuchGuest", "NoSuchProcess", "Request", "SimError",
    "WatcherConfig", "World", "WorldConfig", "boot", "match_guests", "run_schedule",
]
