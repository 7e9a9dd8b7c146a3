#!/usr/bin/env python3
"""
Digital Precoding
Constructive-interference digital precoders over fixed analog precoders,
plus the zero-forcing baseline.
"""

import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from cihybrid.convex import QcqpOptions, QcqpProblem, complex_gram_to_real, solve_qcqp
from cihybrid.errors import ConvergenceError, InfeasibleError, StructuralError
from cihybrid.model import (
    AnalogPrecoderSet,
    ChannelSet,
    PrecodeSolution,
    SymbolVector,
    ci_geometry,
    ci_slacks,
    received_nominal,
    transmit_power,
)


logger = logging.getLogger(__name__)

ZERO_CHANNEL_TOL = 1e-300


@dataclass(frozen=True)
class EffectiveChannel:
    """
    Rows f_gk^T = h_hat_gk^T A_g with h_hat_gk = conj(s_k) h_gk.

    per_bs[g] has shape (K, R_g_eff). Without symbols the rotation is skipped
    and the rows are the plain effective channel h_gk^T A_g.
    """

    per_bs: Tuple[np.ndarray, ...]

    @classmethod
    def from_inputs(cls, channels: ChannelSet, analog: AnalogPrecoderSet,
                    symbols: Optional[SymbolVector] = None) -> 'EffectiveChannel':
        if channels.num_bs != analog.num_bs:
            raise StructuralError(f"channels cover {channels.num_bs} BSs, analog {analog.num_bs}")
        blocks = []
        for g, (block, matrix) in enumerate(zip(channels.per_bs, analog.matrices)):
            if block.shape[1] != matrix.shape[0]:
                raise StructuralError(f"BS {g}: channel length {block.shape[1]} != analog rows {matrix.shape[0]}")
            rows = block @ matrix
            if symbols is not None:
                rows = np.conj(symbols.values)[:, None] * rows
            blocks.append(rows)
        return cls(per_bs=tuple(blocks))

    def stacked(self) -> np.ndarray:
        """K x sum_g R_g_eff matrix [f_1k^T ... f_Gk^T]."""
        return np.hstack(self.per_bs)


def stack_complex(blocks: Sequence[np.ndarray]) -> np.ndarray:
    """[b_1; ...; b_G] -> [Re(b_1); Im(b_1); ...; Re(b_G); Im(b_G)]."""
    return np.concatenate([np.concatenate([b.real, b.imag]) for b in blocks]) if blocks else np.zeros(0)


def unstack_complex(x: np.ndarray, sizes: Sequence[int]) -> Tuple[np.ndarray, ...]:
    """Inverse of stack_complex for complex block lengths `sizes`."""
    blocks, offset = [], 0
    for size in sizes:
        blocks.append(x[offset:offset + size] + 1j * x[offset + size:offset + 2 * size])
        offset += 2 * size
    return tuple(blocks)


def _real_rows(f: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Coefficient rows giving Re(f b) and Im(f b) on the stacked variables of one block."""
    return np.concatenate([f.real, -f.imag]), np.concatenate([f.imag, f.real])


def build_ci_problem(analog: AnalogPrecoderSet, channels: ChannelSet, symbols: SymbolVector,
                     margins: Sequence[float], modulation_order: int,
                     budgets: Optional[Sequence[float]] = None) -> QcqpProblem:
    """
    Assemble the CI power-minimization QCQP.

    For user k with z_k = sum_g f_gk^T b_g the rows read
    +/- Im(z_k) - tan(theta) Re(z_k) <= -gamma_k tan(theta); BPSK uses the
    single row -Re(z_k) <= -gamma_k.

    Raises:
        InfeasibleError: a user whose effective channel is zero on every BS
    """
    geometry = ci_geometry(modulation_order, margins)
    effective = EffectiveChannel.from_inputs(channels, analog, symbols)
    num_users = channels.num_users
    if geometry.gamma.shape[0] != num_users:
        raise StructuralError(f"{geometry.gamma.shape[0]} margins for {num_users} users")

    for k in range(num_users):
        if all(np.max(np.abs(f[k]), initial=0.0) <= ZERO_CHANNEL_TOL for f in effective.per_bs):
            raise InfeasibleError(f"user {k} has a zero effective channel", {'user': k})

    rows, rhs = [], []
    tan_theta = geometry.tan_theta
    for k in range(num_users):
        re_parts, im_parts = zip(*(_real_rows(f[k]) for f in effective.per_bs))
        re_row, im_row = np.concatenate(re_parts), np.concatenate(im_parts)
        gamma = geometry.gamma[k]
        if geometry.is_binary:
            rows.append(-re_row)
            rhs.append(-gamma)
        else:
            rows.append(im_row - tan_theta * re_row)
            rows.append(-im_row - tan_theta * re_row)
            rhs.extend([-gamma * tan_theta] * 2)

    n = 2 * sum(analog.effective_chains)
    blocks = tuple(complex_gram_to_real(matrix) for matrix in analog.matrices)
    caps = None
    if budgets is not None:
        caps = tuple(float(p) for p in budgets)
        if len(caps) != analog.num_bs:
            raise StructuralError(f"{len(caps)} budgets for {analog.num_bs} BSs")
    return QcqpProblem(
        blocks=blocks, G=np.array(rows, dtype=float).reshape(len(rows), n),
        h=np.array(rhs, dtype=float), caps=caps,
    )


def least_norm_start(effective: EffectiveChannel, gamma: np.ndarray) -> Optional[np.ndarray]:
    """
    Stacked point placing every rotated z_k on the positive real axis beyond gamma_k.

    Returns None when the effective channel lacks full row rank.
    """
    f = effective.stacked()
    num_users = f.shape[0]
    if f.shape[1] < num_users or np.linalg.matrix_rank(f) < num_users:
        return None
    base = max(float(np.max(gamma, initial=0.0)), 1e-12)
    target = gamma + base
    b = np.linalg.lstsq(f, target.astype(complex), rcond=None)[0]
    if np.max(np.abs(f @ b - target)) > 1e-6 * base:
        return None
    sizes = [blk.shape[1] for blk in effective.per_bs]
    offsets = np.cumsum([0] + sizes)
    return stack_complex([b[offsets[g]:offsets[g + 1]] for g in range(len(sizes))])


def solve_digital_ci(analog: AnalogPrecoderSet, channels: ChannelSet, symbols: SymbolVector,
                     margins: Sequence[float], modulation_order: int,
                     budgets: Optional[Sequence[float]] = None,
                     options: Optional[QcqpOptions] = None) -> PrecodeSolution:
    """
    Minimum-power composite precoders b_g placing every user in its CI region.

    Args:
        analog: fixed analog precoders
        channels: channel realization
        symbols: symbols of this slot
        margins: Gamma_k per user
        modulation_order: M
        budgets: per-BS power caps (W); None solves without caps
        options: interior-point tolerance and iteration limit

    Raises:
        InfeasibleError: no point meets the CI rows (phase-1 value in the
            diagnostics) or the caps (uncapped per-BS powers in the diagnostics)
        ConvergenceError: the cap phase stopped without a feasible point or
            an infeasibility certificate
    """
    problem = build_ci_problem(analog, channels, symbols, margins, modulation_order, budgets)
    geometry = ci_geometry(modulation_order, margins)
    start = least_norm_start(EffectiveChannel.from_inputs(channels, analog, symbols), geometry.gamma)
    solution = solve_qcqp(problem, options, x0=start)
    if solution.status == 'infeasible':
        raise InfeasibleError("CI precoding problem is infeasible", solution.diagnostics)
    if solution.x is None:
        raise ConvergenceError("CI precoding found no point meeting the caps", solution.diagnostics)
    if solution.status != 'optimal':
        logger.warning("CI precoding stopped at %s after %d iterations (residuals %s)",
                       solution.status, solution.iterations, solution.residuals)

    digital = unstack_complex(solution.x, analog.effective_chains)
    _, per_bs = transmit_power(analog, digital)
    slacks = ci_slacks(received_nominal(channels, analog, digital), symbols.values,
                       geometry.gamma, geometry.theta)
    diagnostics = dict(solution.diagnostics)
    diagnostics.update({'residuals': solution.residuals, 'iterations': solution.iterations})
    return PrecodeSolution(digital=digital, per_bs_power=per_bs, slacks=slacks,
                           status=solution.status, diagnostics=diagnostics)


class ZfPrecoder:
    """
    Zero-forcing digital precoder for one coherence block.

    D = F^H (F F^H)^-1 is factorized once from the effective channel F;
    every slot only rescales D s by a common amplitude beta.
    """

    def __init__(self, analog: AnalogPrecoderSet, channels: ChannelSet):
        effective = EffectiveChannel.from_inputs(channels, analog)
        f = effective.stacked()
        num_users, width = f.shape
        if width < num_users or np.linalg.matrix_rank(f) < num_users:
            raise StructuralError(
                f"effective channel has rank below the {num_users} users "
                f"({width} active RF chains)"
            )
        self.analog = analog
        self.channels = channels
        self.effective = f
        d = f.conj().T @ np.linalg.inv(f @ f.conj().T)
        offsets = np.cumsum([0] + analog.effective_chains)
        self.matrices = tuple(d[offsets[g]:offsets[g + 1]] for g in range(analog.num_bs))

    @property
    def stacked(self) -> np.ndarray:
        return np.vstack(self.matrices)

    def amplitude(self, symbols: SymbolVector, budgets: Sequence[float],
                  target_amplitude: Optional[float] = None) -> float:
        """Largest beta with ||A_g D_g (beta s)||^2 <= P_g at every BS."""
        beta = float('inf') if target_amplitude is None else float(target_amplitude)
        for matrix, d, budget in zip(self.analog.matrices, self.matrices, budgets):
            radiated = matrix @ (d @ symbols.values)
            power = float(np.real(np.vdot(radiated, radiated)))
            if power > 0:
                beta = min(beta, math.sqrt(float(budget) / power))
        if not math.isfinite(beta):
            raise StructuralError("no BS radiates power under zero forcing")
        return beta

    def precode(self, symbols: SymbolVector, budgets: Sequence[float],
                target_amplitude: Optional[float] = None,
                margins: Optional[Sequence[float]] = None) -> PrecodeSolution:
        beta = self.amplitude(symbols, budgets, target_amplitude)
        digital = tuple(d @ (beta * symbols.values) for d in self.matrices)
        _, per_bs = transmit_power(self.analog, digital)
        geometry = ci_geometry(symbols.modulation_order, np.zeros(len(symbols.values)))
        equivalent = beta * math.sin(geometry.theta)
        reference = np.full(len(symbols.values), equivalent) if margins is None else np.asarray(margins)
        gamma = reference / math.sin(geometry.theta)
        slacks = ci_slacks(received_nominal(self.channels, self.analog, digital), symbols.values,
                           gamma, geometry.theta)
        return PrecodeSolution(
            digital=digital, per_bs_power=per_bs, slacks=slacks, status='zf',
            zf_matrices=self.matrices, amplitude=beta,
            diagnostics={'equivalent_margin': equivalent},
        )


def solve_digital_zf(analog: AnalogPrecoderSet, channels: ChannelSet, symbols: SymbolVector,
                     budgets: Sequence[float], target_amplitude: Optional[float] = None,
                     margins: Optional[Sequence[float]] = None) -> PrecodeSolution:
    """
    Zero-forcing precoders scaled by the largest budget-respecting common amplitude.

    Args:
        target_amplitude: optional upper limit on beta
        margins: optional Gamma_k against which slacks are reported; the
            equivalent margin beta sin(theta) is used otherwise

    Raises:
        StructuralError: effective channel rank below K
    """
    return ZfPrecoder(analog, channels).precode(symbols, budgets, target_amplitude, margins)
