"""Named random-number streams derived from one master seed.

Every source of randomness in a run (initial design, each MCMC chain, the
sampled-surrogate selection, GP hyperparameter restarts) pulls from its own
generator so that components can be reordered or skipped without shifting
the draws of the others. Stream identity is the pair (master_seed, name);
the name is hashed with SHA-256 so the derivation is stable across
platforms and Python hash randomization.
"""

from __future__ import annotations

import hashlib

import numpy as np


def stream_seed_words(master_seed: int, name: str) -> list[int]:
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    words = [int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4)]
    return [int(master_seed) & 0xFFFFFFFFFFFFFFFF, *words]


def stream(master_seed: int, name: str) -> np.random.Generator:
    """Return the generator for the named stream of the given master seed."""
    seq = np.random.SeedSequence(stream_seed_words(master_seed, name))
    return np.random.default_rng(seq)


def stream_seed(master_seed: int, name: str) -> int:
    """Collapse a named stream to a single integer seed.

    Used where an API takes a plain seed (for example the GP estimator's
    random_state) rather than a generator.
    """
    seq = np.random.SeedSequence(stream_seed_words(master_seed, name))
    return int(seq.generate_state(1, np.uint64)[0])
