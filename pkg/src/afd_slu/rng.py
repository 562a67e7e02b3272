"""Named random streams derived from one top-level seed."""

import zlib

import numpy as np

STREAMS = ("data", "init", "dropout", "shuffle", "teacher")


def stream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for ``name``; same (seed, name) gives the same stream."""
    if name not in STREAMS:
        raise KeyError(f"unknown random stream {name!r}")
    return np.random.default_rng([int(seed), zlib.crc32(name.encode())])
