"""Seeded randomness.

All shuffling and sampling uses numpy's ``Generator`` with the PCG64 bit
generator, whose output stream is stable across platforms. Sub-seeds are
derived from a root seed plus a component name through ``SeedSequence`` so two
components never share a stream.
"""

from __future__ import annotations

import zlib

import numpy as np


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def derive_seed(root: int, *names: str | int) -> int:
    """Deterministic 32-bit sub-seed for ``names`` under ``root``."""
    key = tuple(zlib.crc32(str(n).encode("utf-8")) for n in names)
    ss = np.random.SeedSequence(entropy=int(root), spawn_key=key)
    return int(ss.generate_state(1, dtype=np.uint32)[0])
