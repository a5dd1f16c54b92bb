"""Named random streams derived from a single root seed.

Every source of randomness in a run (data sampling, parameter init, subset
sampler, diffusion noise, ...) pulls its own generator via ``stream`` so
that identical root seeds reproduce identical runs bit for bit.
"""

from __future__ import annotations

import hashlib

import numpy as np


def stream(root_seed: int, name: str) -> np.random.Generator:
    """Deterministic PCG64 generator for the (root_seed, name) pair."""
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    words = [int.from_bytes(digest[i:i + 4], "little") for i in range(0, 16, 4)]
    ss = np.random.SeedSequence([int(root_seed) & 0xFFFFFFFFFFFFFFFF, *words])
    return np.random.Generator(np.random.PCG64(ss))
