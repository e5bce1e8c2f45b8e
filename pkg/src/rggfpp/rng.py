"""Seed derivation for reproducible replica streams.

Every random draw in an experiment comes from a Philox stream keyed by
(master_seed, replica_id, purpose). Philox is counter-based, so streams with
distinct spawn keys are independent by construction and the derivation is
stable across process boundaries and parallelism degrees.
"""

from __future__ import annotations

import numpy as np

# Purpose tags. Point positions and edge weights use disjoint tags so the
# randomness of the geometry and of the passage times live in separate blocks.
POINTS = 0
WEIGHTS = 1
DIRECTIONS = 2
BOOTSTRAP = 3
SAMPLING = 4
FIXTURE = 5


def derive_rng(master_seed: int, replica_id: int, purpose: int) -> np.random.Generator:
    """Return the generator for one (replica, purpose) stream."""
    seq = np.random.SeedSequence(entropy=master_seed, spawn_key=(replica_id, purpose))
    return np.random.Generator(np.random.Philox(seq))


def lineage(master_seed: int, replica_id: int, purpose: int) -> tuple[int, int, int]:
    """The stream id triple, recorded next to anything the stream produced."""
    return (master_seed, replica_id, purpose)
