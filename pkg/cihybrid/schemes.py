#!/usr/bin/env python3
"""
Precoding Schemes
End-to-end pipelines: the four coordinated hybrid schemes and the
uncoordinated per-BS CI baseline.

A coordinated pipeline runs assignment, analog and digital stages in
sequence. The first two (and the ZF factorization) depend only on the
channel, so they are prepared once per coherence block and reused for every
symbol slot.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import List, Optional, Sequence, Tuple

import numpy as np

from cihybrid.analog import Codebook, build_codebook_analog, build_continuous_analog, build_dft_codebook
from cihybrid.assignment import (
    AssignmentOptions,
    AssignmentResult,
    gain_matrix_codebook,
    gain_matrix_continuous,
    heuristic_assignment,
    solve_code_assignment,
    solve_rf_assignment,
)
from cihybrid.convex import QcqpOptions
from cihybrid.digital import ZfPrecoder, solve_digital_ci
from cihybrid.errors import (
    AssignmentInfeasibleError,
    CiHybridError,
    ConvergenceError,
    InfeasibleError,
    StageError,
)
from cihybrid.model import (
    AnalogPrecoderSet,
    ChannelSet,
    NetworkConfig,
    PrecodeSolution,
    RfChainMap,
    SymbolVector,
    build_chain_map,
    ci_geometry,
    ci_slacks,
    received_nominal,
    transmit_power,
)


logger = logging.getLogger(__name__)


class SchemeId(str, Enum):
    """Closed set of simulated schemes."""

    CI_CONTINUOUS = 'ci-continuous'
    CI_CODEBOOK = 'ci-codebook'
    ZF_CONTINUOUS = 'zf-continuous'
    ZF_CODEBOOK = 'zf-codebook'
    UNCOORDINATED_CI = 'uncoordinated-ci'

    @property
    def is_coordinated(self) -> bool:
        return self is not SchemeId.UNCOORDINATED_CI

    @property
    def family(self) -> str:
        """'ci' or 'zf': the digital method and backhaul accounting."""
        return 'zf' if self.value.startswith('zf') else 'ci'

    @property
    def analog_mode(self) -> str:
        return 'codebook' if self.value.endswith('codebook') else 'continuous'

    @property
    def code(self) -> int:
        """Stable integer used to derive per-scheme random streams."""
        return list(SchemeId).index(self)

    @classmethod
    def parse(cls, value: str) -> 'SchemeId':
        try:
            return cls(value.strip())
        except ValueError:
            names = ', '.join(s.value for s in cls)
            raise ValueError(f"unknown scheme '{value}' (expected one of: {names})") from None


@dataclass
class CoordinatedPlan:
    """Per-block state of a coordinated scheme: assignment, analog set, ZF factorization."""

    scheme: SchemeId
    assignment: AssignmentResult
    analog: AnalogPrecoderSet
    chain_map: RfChainMap
    codebook: Optional[Codebook] = None
    zf: Optional[ZfPrecoder] = None


@dataclass
class CoordinatedRun:
    solution: PrecodeSolution
    assignment: AssignmentResult
    analog: AnalogPrecoderSet


@dataclass
class UncoordinatedPlan:
    """Serving BS per user plus each BS's own assignment and analog precoders."""

    association: np.ndarray
    served: Tuple[Tuple[int, ...], ...]
    assignments: Tuple[Optional[AssignmentResult], ...]
    analog: AnalogPrecoderSet


def _assign(config: NetworkConfig, gains, caps: Optional[Sequence[int]],
            options: Optional[AssignmentOptions]) -> AssignmentResult:
    epsilon = config.fairness_weight
    if config.assignment_method == 'heuristic':
        return heuristic_assignment(gains, epsilon, caps)
    if caps is None:
        return solve_rf_assignment(gains, epsilon, options)
    return solve_code_assignment(gains, epsilon, caps, options)


def prepare_coordinated(scheme: SchemeId, config: NetworkConfig, channels: ChannelSet,
                        options: Optional[AssignmentOptions] = None) -> CoordinatedPlan:
    """
    Run the assignment and analog stages (and the ZF factorization) for one block.

    Raises:
        StageError: wrapping the failure of the named stage
    """
    scheme = SchemeId(scheme)
    if not scheme.is_coordinated:
        raise ValueError(f"{scheme.value} is not a coordinated scheme")
    chain_map = build_chain_map(config.rf_chains)
    magnitudes = config.ps_magnitudes()
    codebook = None

    try:
        if scheme.analog_mode == 'continuous':
            assignment = _assign(config, gain_matrix_continuous(channels, chain_map), None, options)
        else:
            codebook = build_dft_codebook(config.bs_list, magnitudes)
            assignment = _assign(config, gain_matrix_codebook(channels, codebook), config.rf_chains, options)
    except CiHybridError as exc:
        raise StageError('assignment', exc) from exc

    try:
        if codebook is None:
            analog = build_continuous_analog(channels, assignment, chain_map, magnitudes)
        else:
            analog = build_codebook_analog(codebook, assignment, config.rf_chains)
    except CiHybridError as exc:
        raise StageError('analog', exc) from exc

    zf = None
    if scheme.family == 'zf':
        try:
            zf = ZfPrecoder(analog, channels)
        except CiHybridError as exc:
            raise StageError('digital', exc) from exc
    return CoordinatedPlan(scheme=scheme, assignment=assignment, analog=analog,
                           chain_map=chain_map, codebook=codebook, zf=zf)


def precode_slot(plan: CoordinatedPlan, config: NetworkConfig, channels: ChannelSet,
                 symbols: SymbolVector, budgets: Optional[Sequence[float]] = None,
                 margins: Optional[Sequence[float]] = None,
                 qcqp_options: Optional[QcqpOptions] = None) -> PrecodeSolution:
    """
    Digital stage of a coordinated scheme for one symbol slot.

    CI schemes treat budgets=None as uncapped; ZF always needs budgets and
    falls back to the configured ones.
    """
    margins = config.margin_vector if margins is None else np.asarray(margins, dtype=float)
    try:
        if plan.zf is not None:
            caps = config.budgets if budgets is None else budgets
            return plan.zf.precode(symbols, caps, margins=margins)
        return solve_digital_ci(plan.analog, channels, symbols, margins, config.modulation_order,
                                budgets, qcqp_options)
    except CiHybridError as exc:
        raise StageError('digital', exc) from exc


def run_coordinated(scheme: SchemeId, config: NetworkConfig, channels: ChannelSet,
                    symbols: SymbolVector, budgets: Optional[Sequence[float]] = None,
                    margins: Optional[Sequence[float]] = None,
                    options: Optional[AssignmentOptions] = None) -> CoordinatedRun:
    """
    Assignment, analog and digital stages for one symbol slot.

    Budgets default to the configured per-BS budgets.
    """
    plan = prepare_coordinated(scheme, config, channels, options)
    caps = config.budgets if budgets is None else budgets
    solution = precode_slot(plan, config, channels, symbols, caps, margins)
    return CoordinatedRun(solution=solution, assignment=plan.assignment, analog=plan.analog)


# ---------------------------------------------------------------------------
# Uncoordinated baseline
# ---------------------------------------------------------------------------

def associate_users(channels: ChannelSet, config: NetworkConfig) -> np.ndarray:
    """
    Serving BS per user by descending ||h_gk||^2 with at most R_g users per BS.

    Pairs are visited strongest first (ties to the lower BS, then the lower
    user); a user skipped by a full BS is picked up by its next-best BS.

    Raises:
        AssignmentInfeasibleError: total RF chains below the user count
    """
    capacity = list(config.rf_chains)
    num_users = channels.num_users
    if sum(capacity) < num_users:
        raise AssignmentInfeasibleError(f"{sum(capacity)} RF chains cannot serve {num_users} users")
    power = np.array([np.sum(np.abs(block) ** 2, axis=1) for block in channels.per_bs])
    pairs = sorted(
        ((g, k) for g in range(channels.num_bs) for k in range(num_users)),
        key=lambda gk: (-power[gk[0], gk[1]], gk[0], gk[1]),
    )
    serving = np.full(num_users, -1, dtype=int)
    load = [0] * channels.num_bs
    for g, k in pairs:
        if serving[k] < 0 and load[g] < capacity[g]:
            serving[k] = g
            load[g] += 1
    return serving


def prepare_uncoordinated(config: NetworkConfig, channels: ChannelSet,
                          options: Optional[AssignmentOptions] = None) -> UncoordinatedPlan:
    """Associate users, then assign chains and build CPC columns at every BS on its own."""
    try:
        association = associate_users(channels, config)
    except CiHybridError as exc:
        raise StageError('assignment', exc) from exc
    magnitudes = config.ps_magnitudes()
    served, assignments, matrices, users, sources = [], [], [], [], []
    for g, bs in enumerate(config.bs_list):
        own = tuple(int(k) for k in np.flatnonzero(association == g))
        served.append(own)
        if not own:
            assignments.append(None)
            matrices.append(np.zeros((bs.antennas, 0), dtype=complex))
            users.append(np.zeros(0, dtype=int))
            sources.append(np.zeros(0, dtype=int))
            continue
        local_channels = channels.subset_bs([g]).subset_users(own)
        chain_map = build_chain_map([bs.rf_chains])
        try:
            assignment = _assign(config, gain_matrix_continuous(local_channels, chain_map), None, options)
        except CiHybridError as exc:
            raise StageError('assignment', exc) from exc
        local = build_continuous_analog(local_channels, assignment, chain_map, [magnitudes[g]])
        assignments.append(assignment)
        matrices.append(local.matrices[0])
        users.append(np.array([own[k] for k in local.users[0]], dtype=int))
        sources.append(local.sources[0])
    analog = AnalogPrecoderSet(matrices=tuple(matrices), users=tuple(users), sources=tuple(sources),
                               magnitudes=tuple(magnitudes), mode='continuous')
    return UncoordinatedPlan(association=association, served=tuple(served),
                             assignments=tuple(assignments), analog=analog)


def run_uncoordinated(config: NetworkConfig, channels: ChannelSet, symbols: SymbolVector,
                      plan: Optional[UncoordinatedPlan] = None,
                      budgets: Optional[Sequence[float]] = None,
                      margins: Optional[Sequence[float]] = None,
                      qcqp_options: Optional[QcqpOptions] = None,
                      options: Optional[AssignmentOptions] = None) -> PrecodeSolution:
    """
    Every BS precodes only its own users, ignoring the other BSs.

    Slacks are measured on the full received signal, so inter-BS
    interference shows up there; the per-BS design slacks are kept in
    diagnostics['own_slacks']. A BS whose problem is infeasible transmits
    nothing and its users are reported as erased.

    Args:
        budgets: per-BS caps; None solves without caps
    """
    plan = plan or prepare_uncoordinated(config, channels, options)
    margins = config.margin_vector if margins is None else np.asarray(margins, dtype=float)
    geometry = ci_geometry(config.modulation_order, margins)
    own_slacks = np.full(channels.num_users, np.nan)
    digital: List[np.ndarray] = []
    erased: List[int] = []
    statuses = []

    for g, own in enumerate(plan.served):
        width = plan.analog.matrices[g].shape[1]
        if not own:
            digital.append(np.zeros(width, dtype=complex))
            continue
        local_channels = channels.subset_bs([g]).subset_users(own)
        local_analog = plan.analog.subset_bs([g])
        local_analog = AnalogPrecoderSet(
            matrices=local_analog.matrices,
            users=(np.array([own.index(k) for k in local_analog.users[0]], dtype=int),),
            sources=local_analog.sources, magnitudes=local_analog.magnitudes, mode='continuous',
        )
        cap = None if budgets is None else [budgets[g]]
        try:
            local = solve_digital_ci(local_analog, local_channels, symbols.subset(own),
                                     margins[list(own)], config.modulation_order, cap, qcqp_options)
        except (InfeasibleError, ConvergenceError) as exc:
            logger.warning("BS %d cannot serve its %d users (%s); marking them erased", g, len(own), exc)
            digital.append(np.zeros(width, dtype=complex))
            erased.extend(own)
            statuses.append('infeasible' if isinstance(exc, InfeasibleError) else 'max-iterations')
            continue
        digital.append(local.digital[0])
        own_slacks[list(own)] = local.slacks
        statuses.append(local.status)

    digital_tuple = tuple(digital)
    _, per_bs = transmit_power(plan.analog, digital_tuple)
    y = received_nominal(channels, plan.analog, digital_tuple)
    slacks = ci_slacks(y, symbols.values, geometry.gamma, geometry.theta)
    status = 'erased' if erased else ('optimal' if all(s == 'optimal' for s in statuses) else 'max-iterations')
    return PrecodeSolution(
        digital=digital_tuple, per_bs_power=per_bs, slacks=slacks, status=status,
        erased_users=tuple(sorted(erased)),
        diagnostics={'own_slacks': own_slacks, 'association': plan.association.tolist(),
                     'bs_status': statuses},
    )
