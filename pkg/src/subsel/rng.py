"""Deterministic seed derivation.

Every randomized component derives its generator from one 64-bit master seed
plus a path of string/int labels, so any chain, round, or trial can be
reproduced in isolation and results do not depend on execution order.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def derive_seed_sequence(master_seed: int, *labels) -> np.random.SeedSequence:
    """SeedSequence for (master_seed, labels).

    Labels are folded in through sha256 of their repr, so the scheme is stable
    across platforms and Python processes (unlike builtin hash()).
    """
    words = []
    for label in labels:
        digest = hashlib.sha256(repr(label).encode("utf-8")).digest()
        words.append(int.from_bytes(digest[:8], "little"))
    return np.random.SeedSequence([int(master_seed) & _MASK64, *words])


def derive_rng(master_seed: int, *labels) -> np.random.Generator:
    """PCG64 generator seeded from (master_seed, labels)."""
    return np.random.Generator(np.random.PCG64(derive_seed_sequence(master_seed, *labels)))
