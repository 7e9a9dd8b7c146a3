#!/usr/bin/env python3
"""
Network Model
Domain types and signal-level primitives shared by every precoding stage.

Conventions used throughout the package:
- channels couple through a plain transpose, y_k = sum_g h_gk^T A_g b_g;
  no conjugate is applied anywhere in the signal path
- margins Gamma_k are received amplitudes (same units as y), noise is a
  power in watts
- complex vectors are stacked as x = [Re(b_1); Im(b_1); ...; Re(b_G); Im(b_G)]
"""

import math
from dataclasses import dataclass, field
from typing import Any, List, Literal, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from cihybrid.errors import DomainError, StructuralError


DEFAULT_TNR_DB = 10.0
TIE_TOLERANCE = 1e-12

Position = Tuple[float, float]


def dbm_to_watts(dbm: float) -> float:
    """Convert a power in dBm to watts."""
    return 10.0 ** (dbm / 10.0) / 1000.0


def watts_to_dbm(watts: float) -> float:
    """Convert a power in watts to dBm (-inf for zero power)."""
    if watts <= 0:
        return float('-inf')
    return 10.0 * math.log10(watts * 1000.0)


def is_power_of_two(value: int) -> bool:
    return value >= 1 and (value & (value - 1)) == 0


# ---------------------------------------------------------------------------
# Configuration models
# ---------------------------------------------------------------------------

class GeometrySpec(BaseModel):
    """
    Deployment geometry used to place users.

    Attributes:
        cell_radius: radius (km) of the user disc centred on the macro BS
        min_bs_user_distance: exclusion radius (km) around every BS, also the
            distance clamp used by the path-loss model
        macro_position: macro BS position (km)
        pico_offsets: pico BS positions relative to the macro (km)
    """

    model_config = ConfigDict(extra='forbid', frozen=True)

    cell_radius: float = Field(default=0.5, gt=0)
    min_bs_user_distance: float = Field(default=0.01, gt=0)
    macro_position: Position = (0.0, 0.0)
    pico_offsets: List[Position] = Field(default_factory=lambda: [(-0.25, 0.0), (0.25, 0.0)])


class BsSpec(BaseModel):
    """One base station: class, antenna/RF-chain counts, budget (W), position (km)."""

    model_config = ConfigDict(extra='forbid', frozen=True, populate_by_name=True)

    bs_class: Literal['macro', 'pico'] = Field(alias='class')
    antennas: int = Field(ge=1)
    rf_chains: int = Field(ge=1)
    power_budget: float = Field(gt=0)
    position: Position = (0.0, 0.0)

    @model_validator(mode='after')
    def _chains_fit_antennas(self) -> 'BsSpec':
        if self.rf_chains > self.antennas:
            raise ValueError(
                f"rf_chains ({self.rf_chains}) must not exceed antennas ({self.antennas})"
            )
        return self


class UserSpec(BaseModel):
    """A single-antenna user; position is drawn per trial when omitted."""

    model_config = ConfigDict(extra='forbid', frozen=True)

    position: Optional[Position] = None


class NetworkConfig(BaseModel):
    """
    Full deployment description.

    The JSON config file mirrors these field names exactly; unknown keys are
    rejected.
    """

    model_config = ConfigDict(extra='forbid', frozen=True)

    bs_list: List[BsSpec]
    users: List[UserSpec]
    noise_power: float = Field(default=1e-9, gt=0)
    modulation_order: int = 4
    margins: Optional[List[float]] = None
    ps_magnitude: Optional[float] = Field(default=None, gt=0)
    fairness_weight: float = Field(default=1.0, ge=0)
    seed: int = Field(default=0, ge=0)
    geometry: GeometrySpec = Field(default_factory=GeometrySpec)
    assignment_method: Literal['exact', 'heuristic'] = 'exact'

    @model_validator(mode='before')
    @classmethod
    def _expand_shorthand(cls, data: Any) -> Any:
        """Accept an integer user count and a scalar or missing margin."""
        if not isinstance(data, dict):
            return data
        data = dict(data)
        users = data.get('users')
        if isinstance(users, int) and not isinstance(users, bool):
            if users < 1:
                raise ValueError("users must be at least 1")
            data['users'] = [{} for _ in range(users)]
        count = len(data['users']) if isinstance(data.get('users'), list) else 0
        margins = data.get('margins')
        if isinstance(margins, (int, float)) and not isinstance(margins, bool):
            data['margins'] = [float(margins)] * count
        elif margins is None and count:
            noise = float(data.get('noise_power', 1e-9))
            default = math.sqrt(noise * 10.0 ** (DEFAULT_TNR_DB / 10.0))
            data['margins'] = [default] * count
        return data

    @field_validator('modulation_order')
    @classmethod
    def _check_modulation(cls, value: int) -> int:
        if value < 2 or not is_power_of_two(value):
            raise ValueError(f"modulation_order must be a power of two >= 2, got {value}")
        return value

    @model_validator(mode='after')
    def _check_network(self) -> 'NetworkConfig':
        if not self.bs_list:
            raise ValueError("bs_list must name at least one BS")
        if not self.users:
            raise ValueError("users must name at least one user")
        total_chains = sum(bs.rf_chains for bs in self.bs_list)
        if total_chains < len(self.users):
            raise ValueError(
                f"total RF chains ({total_chains}) must be >= number of users ({len(self.users)})"
            )
        if self.margins is None or len(self.margins) != len(self.users):
            raise ValueError(
                f"margins has {len(self.margins or [])} entries for {len(self.users)} users"
            )
        if any(m < 0 or not math.isfinite(m) for m in self.margins):
            raise ValueError("margins must be finite and nonnegative")
        return self

    @property
    def num_bs(self) -> int:
        return len(self.bs_list)

    @property
    def num_users(self) -> int:
        return len(self.users)

    @property
    def antennas(self) -> List[int]:
        return [bs.antennas for bs in self.bs_list]

    @property
    def rf_chains(self) -> List[int]:
        return [bs.rf_chains for bs in self.bs_list]

    @property
    def budgets(self) -> np.ndarray:
        return np.array([bs.power_budget for bs in self.bs_list], dtype=float)

    @property
    def margin_vector(self) -> np.ndarray:
        return np.asarray(self.margins, dtype=float)

    def ps_magnitudes(self) -> List[float]:
        """Phase-shifter magnitude a per BS (1/sqrt(N_g) unless configured)."""
        if self.ps_magnitude is not None:
            return [float(self.ps_magnitude)] * self.num_bs
        return [1.0 / math.sqrt(bs.antennas) for bs in self.bs_list]

    def replace(self, **updates: Any) -> 'NetworkConfig':
        """Return a validated copy with some fields replaced."""
        data = self.model_dump(by_alias=True)
        data.update(updates)
        return NetworkConfig.model_validate(data)


# ---------------------------------------------------------------------------
# Array containers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RfChainMap:
    """
    Global RF-chain indexing.

    Attributes:
        total: R_total
        owner: owner[r] = (g_r, local index of chain r within BS g_r)
    """

    total: int
    owner: Tuple[Tuple[int, int], ...]

    @property
    def bs_of(self) -> np.ndarray:
        return np.array([g for g, _ in self.owner], dtype=int)

    def chains_of(self, g: int) -> List[int]:
        return [r for r, (owner, _) in enumerate(self.owner) if owner == g]


def build_chain_map(rf_chains: Sequence[int]) -> RfChainMap:
    """Index the RF chains of all BSs BS-major: r runs over BS 0 first."""
    owner = tuple((g, j) for g, count in enumerate(rf_chains) for j in range(count))
    return RfChainMap(total=len(owner), owner=owner)


@dataclass(frozen=True)
class ChannelSet:
    """
    Channel vectors between every BS and user, path loss folded in.

    per_bs[g] has shape (K, N_g); row k is h_gk.
    """

    per_bs: Tuple[np.ndarray, ...]

    def __post_init__(self):
        users = {block.shape[0] for block in self.per_bs}
        if len(users) > 1:
            raise StructuralError(f"channel blocks disagree on the user count: {sorted(users)}")
        for g, block in enumerate(self.per_bs):
            if block.ndim != 2:
                raise StructuralError(f"channel block {g} must be 2-D (K x N_g)")
            if not np.all(np.isfinite(block)):
                raise StructuralError(f"channel block {g} has non-finite entries")

    @property
    def num_bs(self) -> int:
        return len(self.per_bs)

    @property
    def num_users(self) -> int:
        return self.per_bs[0].shape[0] if self.per_bs else 0

    def h(self, g: int, k: int) -> np.ndarray:
        return self.per_bs[g][k]

    def subset_users(self, users: Sequence[int]) -> 'ChannelSet':
        index = np.asarray(list(users), dtype=int)
        return ChannelSet(per_bs=tuple(block[index] for block in self.per_bs))

    def subset_bs(self, bs_indices: Sequence[int]) -> 'ChannelSet':
        return ChannelSet(per_bs=tuple(self.per_bs[g] for g in bs_indices))


@dataclass(frozen=True)
class SymbolVector:
    """Constellation indices m_k and values s_k = exp(j 2 pi m_k / M)."""

    indices: np.ndarray
    values: np.ndarray
    modulation_order: int

    @classmethod
    def from_indices(cls, indices: Sequence[int], modulation_order: int) -> 'SymbolVector':
        idx = np.asarray(indices, dtype=int)
        if np.any(idx < 0) or np.any(idx >= modulation_order):
            raise DomainError(f"symbol indices must lie in [0, {modulation_order})")
        values = np.exp(2j * np.pi * idx / modulation_order)
        return cls(indices=idx, values=values, modulation_order=modulation_order)

    @classmethod
    def random(cls, num_users: int, modulation_order: int, rng: np.random.Generator) -> 'SymbolVector':
        return cls.from_indices(rng.integers(0, modulation_order, size=num_users), modulation_order)

    def subset(self, users: Sequence[int]) -> 'SymbolVector':
        index = np.asarray(list(users), dtype=int)
        return SymbolVector(self.indices[index], self.values[index], self.modulation_order)


@dataclass(frozen=True)
class CiGeometry:
    """theta = pi/M and gamma_k = Gamma_k / sin(theta)."""

    theta: float
    gamma: np.ndarray

    @property
    def tan_theta(self) -> float:
        return math.tan(self.theta)

    @property
    def is_binary(self) -> bool:
        return abs(self.theta - math.pi / 2) < 1e-15


def ci_geometry(modulation_order: int, margins: Sequence[float]) -> CiGeometry:
    if modulation_order < 2 or not is_power_of_two(modulation_order):
        raise DomainError(f"modulation order must be a power of two >= 2, got {modulation_order}")
    theta = math.pi / modulation_order
    gamma = np.asarray(margins, dtype=float) / math.sin(theta)
    return CiGeometry(theta=theta, gamma=gamma)


@dataclass(frozen=True)
class AnalogPrecoderSet:
    """
    Constant-modulus analog precoders.

    Attributes:
        matrices: A_g per BS, shape (N_g, R_g_eff)
        users: served user per column, per BS
        sources: global RF-chain (continuous) or code (codebook) index per column
        magnitudes: phase-shifter magnitude a per BS
        mode: 'continuous' or 'codebook'
    """

    matrices: Tuple[np.ndarray, ...]
    users: Tuple[np.ndarray, ...]
    sources: Tuple[np.ndarray, ...]
    magnitudes: Tuple[float, ...]
    mode: str = 'continuous'

    @property
    def num_bs(self) -> int:
        return len(self.matrices)

    @property
    def effective_chains(self) -> List[int]:
        return [a.shape[1] for a in self.matrices]

    def max_modulus_error(self) -> float:
        """Largest relative deviation | |A[n,r]| - a | / a over all entries."""
        worst = 0.0
        for matrix, a in zip(self.matrices, self.magnitudes):
            if matrix.size:
                worst = max(worst, float(np.max(np.abs(np.abs(matrix) - a))) / a)
        return worst

    def subset_bs(self, bs_indices: Sequence[int]) -> 'AnalogPrecoderSet':
        return AnalogPrecoderSet(
            matrices=tuple(self.matrices[g] for g in bs_indices),
            users=tuple(self.users[g] for g in bs_indices),
            sources=tuple(self.sources[g] for g in bs_indices),
            magnitudes=tuple(self.magnitudes[g] for g in bs_indices),
            mode=self.mode,
        )


@dataclass(frozen=True)
class PrecodeSolution:
    """
    Digital precoding outcome.

    Attributes:
        digital: composite b_g per BS (length R_g_eff)
        per_bs_power: ||A_g b_g||^2 per BS (W)
        slacks: per-user CI slack of the noiseless received signal
        status: solver status ('optimal', 'max-iterations', 'zf', 'erased')
        zf_matrices: D_g per BS (R_g_eff x K) for ZF, None for CI
        amplitude: ZF common amplitude beta, None for CI
        erased_users: users whose symbols were not precoded (counted as errors)
        diagnostics: solver residuals and fallbacks
    """

    digital: Tuple[np.ndarray, ...]
    per_bs_power: np.ndarray
    slacks: np.ndarray
    status: str = 'optimal'
    zf_matrices: Optional[Tuple[np.ndarray, ...]] = None
    amplitude: Optional[float] = None
    erased_users: Tuple[int, ...] = ()
    diagnostics: dict = field(default_factory=dict)

    @property
    def total_power(self) -> float:
        return float(np.sum(self.per_bs_power))

    @property
    def min_slack(self) -> float:
        return float(np.min(self.slacks)) if self.slacks.size else float('inf')


# ---------------------------------------------------------------------------
# Primitives
# ---------------------------------------------------------------------------

def psk_symbol(m: int, modulation_order: int) -> complex:
    """
    Return the M-PSK constellation point exp(j 2 pi m / M).

    Raises:
        DomainError: m outside [0, M)
    """
    if not 0 <= m < modulation_order:
        raise DomainError(f"symbol index {m} outside [0, {modulation_order})")
    return complex(np.exp(2j * np.pi * m / modulation_order))


def detect_psk_array(y: np.ndarray, modulation_order: int) -> np.ndarray:
    """Vectorised minimum-angular-distance PSK detection (ties to the smaller index)."""
    samples = np.atleast_1d(np.asarray(y, dtype=complex))
    angles = np.angle(samples)[:, None]
    points = 2.0 * np.pi * np.arange(modulation_order)[None, :] / modulation_order
    distance = np.abs(np.mod(angles - points + np.pi, 2.0 * np.pi) - np.pi)
    best = distance.min(axis=1, keepdims=True)
    return np.argmax(distance <= best + TIE_TOLERANCE, axis=1)


def detect_psk(y: complex, modulation_order: int) -> int:
    """
    Detect the PSK index closest in angle to y.

    y = 0 has angle 0 and therefore detects as index 0.
    """
    if not np.isfinite(y):
        raise DomainError("cannot detect a non-finite sample")
    return int(detect_psk_array(np.array([y]), modulation_order)[0])


def _check_shapes(channels: ChannelSet, analog: AnalogPrecoderSet, digital: Sequence[np.ndarray]) -> None:
    if not (channels.num_bs == analog.num_bs == len(digital)):
        raise StructuralError(
            f"BS counts differ: channels {channels.num_bs}, analog {analog.num_bs}, digital {len(digital)}"
        )
    for g, (block, matrix, b) in enumerate(zip(channels.per_bs, analog.matrices, digital)):
        if block.shape[1] != matrix.shape[0]:
            raise StructuralError(
                f"BS {g}: channel length {block.shape[1]} != analog rows {matrix.shape[0]}"
            )
        if matrix.shape[1] != np.asarray(b).shape[0]:
            raise StructuralError(
                f"BS {g}: analog columns {matrix.shape[1]} != digital length {np.asarray(b).shape[0]}"
            )


def received_nominal(channels: ChannelSet, analog: AnalogPrecoderSet,
                     digital: Sequence[np.ndarray]) -> np.ndarray:
    """Noiseless received signal y_k = sum_g h_gk^T A_g b_g for every user."""
    _check_shapes(channels, analog, digital)
    y = np.zeros(channels.num_users, dtype=complex)
    for block, matrix, b in zip(channels.per_bs, analog.matrices, digital):
        if matrix.shape[1]:
            y += block @ (matrix @ np.asarray(b, dtype=complex))
    return y


def ci_slack(y: complex, s: complex, gamma: float, theta: float) -> float:
    """
    Signed distance-like slack of y against the CI region of symbol s.

    Nonnegative iff y lies in the region. For BPSK (theta = pi/2) the region
    is the half-plane Re(s* y) >= gamma and the slack is Re(s* y) - gamma.
    """
    return float(ci_slacks(np.array([y]), np.array([s]), np.array([gamma]), theta)[0])


def ci_slacks(y: np.ndarray, s: np.ndarray, gamma: np.ndarray, theta: float) -> np.ndarray:
    rotated = np.conj(np.asarray(s, dtype=complex)) * np.asarray(y, dtype=complex)
    if abs(theta - math.pi / 2) < 1e-15:
        return rotated.real - gamma
    return (rotated.real - gamma) * math.tan(theta) - np.abs(rotated.imag)


def transmit_power(analog: AnalogPrecoderSet, digital: Sequence[np.ndarray]) -> Tuple[float, np.ndarray]:
    """
    Radiated power per BS ||A_g b_g||^2 and its total.

    Returns:
        Tuple of (total watts, per-BS watts)
    """
    per_bs = np.zeros(analog.num_bs)
    for g, (matrix, b) in enumerate(zip(analog.matrices, digital)):
        if matrix.shape[1]:
            radiated = matrix @ np.asarray(b, dtype=complex)
            per_bs[g] = float(np.real(np.vdot(radiated, radiated)))
    return float(per_bs.sum()), per_bs
