# pde_discovery/rng.py

"""Seeded random streams built on the Philox counter-based generator."""

import hashlib
from typing import List

import numpy as np


def make_rng(seed) -> np.random.Generator:
    """
    Return a Philox-backed Generator.

    `seed` may be an int or a SeedSequence (as produced by split_seeds).
    """
    if isinstance(seed, np.random.SeedSequence):
        return np.random.Generator(np.random.Philox(seed))
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed))))


def split_seeds(seed, n: int) -> List[np.random.SeedSequence]:
    """Independent child streams, e.g. one per MCMC chain or per dataset."""
    root = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(int(seed))
    return root.spawn(n)


def stage_seed(root_seed: int, stage: str) -> int:
    """
    Derive a stable integer seed for a named pipeline stage.

    The stage name is hashed so adding a new stage never shifts the seeds
    of existing ones.
    """
    digest = hashlib.sha256(stage.encode("utf-8")).digest()
    salt = int.from_bytes(digest[:4], "little")
    state = np.random.SeedSequence([int(root_seed), salt]).generate_state(1, dtype=np.uint32)
    return int(state[0])
