"""Counter-based random number streams for reproducible parallel simulation.

Every stochastic operation in the toolkit draws from a Philox generator whose
key is derived from ``(master seed, purpose tag, *indices)``.  Distinct keys
give statistically independent streams, so

  * the environment stream is keyed per generation: extending the horizon
    never perturbs an existing prefix,
  * each replicate owns a private branching stream: results are identical for
    any worker count or scheduling order, and any single replicate can be
    re-simulated in isolation from the seed ledger,
  * vectorised walkers key one stream per generation and use the replicate
    index as the position inside the drawn vector.

Tags are hashed with BLAKE2s so the derivation is stable across processes and
Python versions (the builtin ``hash`` is salted and must not be used here).
"""

from __future__ import annotations

import hashlib

import numpy as np

__all__ = ["stream", "derive_seed", "DERIVATION_RULE"]

_MASK64 = (1 << 64) - 1

DERIVATION_RULE = (
    "philox(key=seed_sequence([master & 2^64-1, blake2s(tag)[:8], *indices]))"
)


def _tag_int(tag: str) -> int:
    return int.from_bytes(hashlib.blake2s(tag.encode("utf-8")).digest()[:8], "little")


def stream(master_seed: int, tag: str, *indices: int) -> np.random.Generator:
    """Return the Philox generator keyed by ``(master_seed, tag, *indices)``.

    Calling twice with equal arguments yields generators that produce
    identical draw sequences.
    """
    entropy = [master_seed & _MASK64, _tag_int(tag), *(int(i) & _MASK64 for i in indices)]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


def derive_seed(master_seed: int, tag: str, *indices: int) -> int:
    """Derive a 63-bit child seed, e.g. a per-environment seed inside a sweep."""
    return int(stream(master_seed, tag, *indices).integers(0, 2**63))
