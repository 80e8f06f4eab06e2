"""Packaged scenario files (``builtin:<name>`` on the command line)."""
