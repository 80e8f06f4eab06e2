"""Entropy sources and the splittable seed tree used in simulation mode."""

from __future__ import annotations

import hashlib
import os
from typing import Protocol


class EntropySource(Protocol):
    def read(self, n: int) -> bytes: ...


class SeedTree:
    """Deterministic splittable generator.

    Each node is a 32-byte key; ``child(label)`` derives an independent
    subtree, ``read(n)`` draws a SHAKE-256 stream from the node's key and a
    per-node counter. Same root seed and same label path always give the same
    bytes.
    """

    def __init__(self, seed: int | bytes, _key: bytes | None = None):
        if _key is None:
            if isinstance(seed, int):
                seed = seed.to_bytes((seed.bit_length() + 8) // 8, "big", signed=True)
            _key = hashlib.sha256(b"clonesafe-seed\x00" + seed).digest()
        self.key = _key
        self._counter = 0

    def child(self, label: str) -> "SeedTree":
        return SeedTree(b"", hashlib.sha256(self.key + b"/" + label.encode()).digest())

    def read(self, n: int) -> bytes:
        out = hashlib.shake_256(self.key + self._counter.to_bytes(8, "big")).digest(n) if n else b""
        self._counter += 1
        return out


class DeterministicEntropy:
    """Entropy drawn from a seed-tree node. Stands in for injected VM entropy."""

    def __init__(self, node: SeedTree):
        self.node = node
        self.reads = 0

    def read(self, n: int) -> bytes:
        self.reads += 1
        return self.node.read(n)


class SystemEntropy:
    def __init__(self):
        self.reads = 0

    def read(self, n: int) -> bytes:
        self.reads += 1
        return os.urandom(n)


class FixedEntropy:
    """Replays a fixed byte string; reads past the end come back short."""

    def __init__(self, data: bytes):
        self._data = data
        self._pos = 0
        self.reads = 0

    def read(self, n: int) -> bytes:
        self.reads += 1
        chunk = self._data[self._pos : self._pos + n]
        self._pos += len(chunk)
        return chunk


class CountingEntropy:
    """Wraps another source and counts interactions."""

    def __init__(self, inner: EntropySource):
        self.inner = inner
        self.reads = 0
        self.bytes_read = 0

    def read(self, n: int) -> bytes:
        self.reads += 1
        out = self.inner.read(n)
        self.bytes_read += len(out)
        return out
