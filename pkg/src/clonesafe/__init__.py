"""Clone-safe randomness for snapshotted microVMs: a simulation toolkit."""

__version__ = "0.1.0"
