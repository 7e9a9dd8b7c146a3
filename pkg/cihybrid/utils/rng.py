#!/usr/bin/env python3
"""
Random Streams
Independent, reproducible random generators per (seed, scheme, point, trial).
"""

from typing import Tuple

import numpy as np


def trial_seed_sequence(master_seed: int, scheme_code: int, point_index: int, trial: int) -> np.random.SeedSequence:
    """Seed sequence owned by one trial; distinct keys give independent streams."""
    return np.random.SeedSequence(master_seed, spawn_key=(scheme_code, point_index, trial))


def trial_generators(master_seed: int, scheme_code: int, point_index: int,
                     trial: int) -> Tuple[np.random.Generator, np.random.Generator]:
    """
    Generators for one trial.

    Returns:
        (channel generator for placement and fading, slot generator for
        symbols and noise)
    """
    channel_seq, slot_seq = trial_seed_sequence(master_seed, scheme_code, point_index, trial).spawn(2)
    return np.random.default_rng(channel_seq), np.random.default_rng(slot_seq)


def generator(seed: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed))
