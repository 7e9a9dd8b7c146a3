#!/usr/bin/env python3
"""
Channel Generation
Seedable path-loss plus Rayleigh channel realizations and user placement.
"""

import logging
import math
from typing import List, Optional, Sequence

import numpy as np

from cihybrid.errors import ConfigurationError, DomainError
from cihybrid.model import BsSpec, ChannelSet, GeometrySpec, NetworkConfig, Position


logger = logging.getLogger(__name__)

# PL(dB) = intercept + slope * log10(d / km)
PATH_LOSS_MODELS = {
    'macro': (128.1, 37.6),
    'pico': (140.7, 36.7),
}

MAX_PLACEMENT_ATTEMPTS = 10000


def path_loss_db(bs_class: str, distance_km: float, min_distance_km: Optional[float] = None) -> float:
    """
    Distance-dependent path loss for a macro or pico BS.

    Args:
        bs_class: 'macro' or 'pico'
        distance_km: BS-user distance in km
        min_distance_km: optional clamp applied before evaluating the model

    Raises:
        DomainError: non-positive distance or unknown class
    """
    if bs_class not in PATH_LOSS_MODELS:
        raise DomainError(f"unknown BS class '{bs_class}'")
    if not distance_km > 0:
        raise DomainError(f"distance must be positive, got {distance_km}")
    if min_distance_km is not None:
        distance_km = max(distance_km, min_distance_km)
    intercept, slope = PATH_LOSS_MODELS[bs_class]
    return intercept + slope * math.log10(distance_km)


def default_bs_list(geometry: GeometrySpec, antennas: Sequence[int], rf_chains: Sequence[int],
                    budgets: Sequence[float]) -> List[BsSpec]:
    """One macro at the geometry's macro position, then one pico per offset."""
    positions = [geometry.macro_position] + [
        (geometry.macro_position[0] + dx, geometry.macro_position[1] + dy)
        for dx, dy in geometry.pico_offsets
    ]
    if not len(positions) == len(antennas) == len(rf_chains) == len(budgets):
        raise ConfigurationError(
            f"geometry places {len(positions)} BSs but {len(antennas)} antenna counts were given"
        )
    return [
        BsSpec(bs_class='macro' if g == 0 else 'pico', antennas=n, rf_chains=r,
               power_budget=p, position=pos)
        for g, (n, r, p, pos) in enumerate(zip(antennas, rf_chains, budgets, positions))
    ]


def _macro_position(config: NetworkConfig) -> Position:
    for bs in config.bs_list:
        if bs.bs_class == 'macro':
            return bs.position
    return config.geometry.macro_position


def place_users(config: NetworkConfig, geometry: GeometrySpec, rng: np.random.Generator) -> np.ndarray:
    """
    Draw user positions uniformly on the disc around the macro BS.

    Positions closer than the minimum distance to any BS are redrawn. Users
    with a fixed position in the config keep it and consume no randomness.

    Returns:
        Array of shape (K, 2) in km

    Raises:
        ConfigurationError: empty feasible region or too many rejections
    """
    if geometry.min_bs_user_distance >= geometry.cell_radius:
        raise ConfigurationError(
            f"min_bs_user_distance ({geometry.min_bs_user_distance} km) leaves no room "
            f"inside cell_radius ({geometry.cell_radius} km)"
        )
    centre = np.asarray(_macro_position(config), dtype=float)
    bs_positions = np.array([bs.position for bs in config.bs_list], dtype=float)
    positions = np.zeros((config.num_users, 2))

    for k, user in enumerate(config.users):
        if user.position is not None:
            positions[k] = user.position
            continue
        for _ in range(MAX_PLACEMENT_ATTEMPTS):
            radius = geometry.cell_radius * math.sqrt(rng.random())
            angle = 2.0 * math.pi * rng.random()
            candidate = centre + radius * np.array([math.cos(angle), math.sin(angle)])
            if np.all(np.linalg.norm(bs_positions - candidate, axis=1) >= geometry.min_bs_user_distance):
                positions[k] = candidate
                break
        else:
            raise ConfigurationError(
                f"could not place user {k} after {MAX_PLACEMENT_ATTEMPTS} attempts"
            )
    return positions


def distances_km(config: NetworkConfig, positions: np.ndarray) -> np.ndarray:
    """BS-user distance matrix of shape (G, K)."""
    bs_positions = np.array([bs.position for bs in config.bs_list], dtype=float)
    return np.linalg.norm(bs_positions[:, None, :] - np.asarray(positions)[None, :, :], axis=2)


def generate_channels(config: NetworkConfig, positions: np.ndarray, rng: np.random.Generator) -> ChannelSet:
    """
    Draw h_gk = 10^(-PL_gk/20) * w with w ~ CN(0, I).

    Randomness is consumed g-major, then user, then antenna; each antenna
    takes a (real, imaginary) pair of standard normals scaled by 1/sqrt(2).
    """
    distance = distances_km(config, positions)
    clamp = config.geometry.min_bs_user_distance
    blocks = []
    for g, bs in enumerate(config.bs_list):
        block = np.zeros((config.num_users, bs.antennas), dtype=complex)
        for k in range(config.num_users):
            loss = path_loss_db(bs.bs_class, max(distance[g, k], clamp), clamp)
            draws = rng.standard_normal((bs.antennas, 2))
            fading = (draws[:, 0] + 1j * draws[:, 1]) / math.sqrt(2.0)
            block[k] = 10.0 ** (-loss / 20.0) * fading
        blocks.append(block)
    logger.debug("generated channels for %d BSs and %d users", len(blocks), config.num_users)
    return ChannelSet(per_bs=tuple(blocks))


def large_scale_gains(config: NetworkConfig, positions: np.ndarray) -> np.ndarray:
    """Expected ||h_gk||^2 = N_g 10^(-PL_gk/10), shape (G, K)."""
    distance = distances_km(config, positions)
    clamp = config.geometry.min_bs_user_distance
    gains = np.zeros_like(distance)
    for g, bs in enumerate(config.bs_list):
        for k in range(config.num_users):
            loss = path_loss_db(bs.bs_class, max(distance[g, k], clamp), clamp)
            gains[g, k] = bs.antennas * 10.0 ** (-loss / 10.0)
    return gains
