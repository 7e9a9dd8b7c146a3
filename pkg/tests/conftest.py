"""
Shared fixtures: small hand-built networks, analog sets and channels.
"""

import math
from typing import Optional, Sequence

import numpy as np
import pytest

from cihybrid.model import AnalogPrecoderSet, ChannelSet, NetworkConfig


QPSK_UNIT_MARGIN = math.sin(math.pi / 4)


def build_config(antennas: Sequence[int] = (2,), rf_chains: Sequence[int] = (2,), users: int = 2,
                 budgets: Optional[Sequence[float]] = None, positions=None, **extra) -> NetworkConfig:
    bs_list = [
        {
            'class': 'macro' if g == 0 else 'pico',
            'antennas': n,
            'rf_chains': r,
            'power_budget': budgets[g] if budgets is not None else 1e6,
            'position': (0.25 * g, 0.0),
        }
        for g, (n, r) in enumerate(zip(antennas, rf_chains))
    ]
    if positions is not None:
        user_list = [{'position': p} for p in positions]
    else:
        user_list = users
    return NetworkConfig.model_validate({'bs_list': bs_list, 'users': user_list, **extra})


def build_analog(*matrices, magnitudes=None) -> AnalogPrecoderSet:
    mats = tuple(np.atleast_2d(np.asarray(m, dtype=complex)) for m in matrices)
    return AnalogPrecoderSet(
        matrices=mats,
        users=tuple(np.zeros(m.shape[1], dtype=int) for m in mats),
        sources=tuple(np.arange(m.shape[1]) for m in mats),
        magnitudes=tuple(magnitudes) if magnitudes is not None else tuple(1.0 for _ in mats),
    )


def build_channels(*blocks) -> ChannelSet:
    return ChannelSet(per_bs=tuple(np.atleast_2d(np.asarray(b, dtype=complex)) for b in blocks))


def gaussian_channels(rng: np.random.Generator, num_users: int, antennas: Sequence[int]) -> ChannelSet:
    return ChannelSet(per_bs=tuple(
        (rng.standard_normal((num_users, n)) + 1j * rng.standard_normal((num_users, n))) / math.sqrt(2.0)
        for n in antennas
    ))


@pytest.fixture
def make_config():
    return build_config


@pytest.fixture
def make_analog():
    return build_analog


@pytest.fixture
def make_channels():
    return build_channels


@pytest.fixture
def make_gaussian_channels():
    return gaussian_channels


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def toy_config():
    """One BS, one antenna, one chain, one QPSK user with gamma = 1."""
    return build_config(antennas=(1,), rf_chains=(1,), users=1, budgets=(10.0,),
                        margins=[QPSK_UNIT_MARGIN])


@pytest.fixture
def toy_channels():
    return build_channels([[1.0]])
