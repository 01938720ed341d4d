"""Seeded random streams.

Every random draw in the package comes from :func:`rng_stream`, which maps a
global seed plus a tuple of stream identifiers onto an independent
``numpy.random.Generator``.  Identifiers may be ints or strings; strings are
hashed with a fixed digest so that stream layout does not depend on
``PYTHONHASHSEED``.
"""
from __future__ import annotations

import hashlib

import numpy as np


def _key(part) -> int:
    if isinstance(part, (bool, np.bool_)):
        raise TypeError("stream ids must be int or str")
    if isinstance(part, (int, np.integer)):
        if part < 0:
            raise ValueError("integer stream ids must be non-negative")
        return int(part)
    if isinstance(part, str):
        digest = hashlib.sha256(part.encode("utf-8")).digest()
        return int.from_bytes(digest[:8], "little")
    raise TypeError(f"unsupported stream id {part!r}")


def rng_stream(seed: int, *stream_id) -> np.random.Generator:
    """Return the generator for ``(seed, *stream_id)``.

    The same arguments always give the same sequence; distinct ids give
    statistically independent sequences (``SeedSequence`` spawn keys).
    """
    if seed < 0:
        raise ValueError("seed must be non-negative")
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(_key(p) for p in stream_id))
    return np.random.Generator(np.random.PCG64(ss))


def child_seed(seed: int, *stream_id) -> int:
    """Derive a plain integer seed for APIs that only accept an int."""
    return int(rng_stream(seed, *stream_id).integers(0, 2**63 - 1))
