#!/usr/bin/env python3
"""
Monte Carlo Experiments
SER and power sweeps over noisy symbol detection, backhaul-overhead
counting and CSV output.

Every trial draws its own deployment and channel, prepares the per-block
stages once, then precodes a number of symbol slots with fresh symbols and
noise. Random streams are derived from (seed, scheme, point, trial), so any
subset of trials can run on any worker and merge back identically.
"""

import csv
import io
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

from cihybrid.channel import generate_channels, place_users
from cihybrid.errors import CiHybridError, DomainError
from cihybrid.model import NetworkConfig, SymbolVector, detect_psk_array, received_nominal, watts_to_dbm
from cihybrid.schemes import (
    SchemeId,
    precode_slot,
    prepare_coordinated,
    prepare_uncoordinated,
    run_uncoordinated,
)
from cihybrid.utils.rng import trial_generators


logger = logging.getLogger(__name__)

CSV_COLUMNS = (
    'scheme', 'sweep_var', 'sweep_value', 'tnr_db', 'mean_power_dbm', 'ser', 'ser_stderr',
    'feasibility_rate', 'trials', 'symbols_per_trial', 'seed',
)

DEFAULT_TNR_GRID = (0.0, 5.0, 10.0, 15.0, 20.0)
DEFAULT_BUDGET_GRID = (40.0, 50.0, 60.0, 70.0, 80.0, 90.0, 100.0, 110.0)
SER_FLOOR = 1e-6

# hook(detected, symbols, trial, slot) -> detected
DetectionHook = Callable[[np.ndarray, SymbolVector, int, int], np.ndarray]


class SweepSpec(BaseModel):
    """
    One sweep: schemes, grids, trial counts and master seed.

    CI schemes sweep the TNR Gamma^2/sigma^2 in dB over `grid`; ZF schemes
    sweep the total network budget in dBm over `zf_grid`, split across BSs
    in proportion to their configured budgets.
    """

    model_config = ConfigDict(extra='forbid', frozen=True)

    schemes: List[SchemeId] = Field(default_factory=lambda: list(SchemeId))
    grid: List[float] = Field(default_factory=lambda: list(DEFAULT_TNR_GRID))
    zf_grid: List[float] = Field(default_factory=lambda: list(DEFAULT_BUDGET_GRID))
    trials: int = Field(default=200, ge=1)
    symbols_per_trial: int = Field(default=50, ge=1)
    seed: int = Field(default=0, ge=0)
    ci_caps: bool = False

    @field_validator('schemes', 'grid', 'zf_grid')
    @classmethod
    def _non_empty(cls, value: list) -> list:
        if not value:
            raise ValueError("must not be empty")
        return value

    def grid_for(self, scheme: SchemeId) -> List[float]:
        return self.zf_grid if SchemeId(scheme).family == 'zf' else self.grid

    @staticmethod
    def sweep_var(scheme: SchemeId) -> str:
        return 'budget_dbm' if SchemeId(scheme).family == 'zf' else 'tnr_db'


@dataclass
class TrialRecord:
    """
    Outcome of one trial (one channel realization, many symbol slots).

    Powers are sums over the feasible slots; divide by feasible_slots for
    means.
    """

    trial: int
    power_sum: float = 0.0
    per_bs_power_sum: Optional[np.ndarray] = None
    margin_sq_sum: float = 0.0
    min_slack: float = float('inf')
    errors: int = 0
    symbols: int = 0
    feasible_slots: int = 0
    slots: int = 0
    statuses: Tuple[str, ...] = ()


@dataclass
class PointEstimate:
    """Aggregated trials of one (scheme, grid value)."""

    scheme: SchemeId
    sweep_var: str
    sweep_value: float
    tnr_db: float
    mean_power_w: float
    ser: float
    ser_stderr: float
    feasibility_rate: float
    trials: int
    symbols_per_trial: int
    seed: int
    records: List[TrialRecord] = field(default_factory=list, repr=False)

    @property
    def mean_power_dbm(self) -> float:
        return watts_to_dbm(self.mean_power_w) if math.isfinite(self.mean_power_w) else float('nan')

    def csv_row(self) -> List[str]:
        return [
            self.scheme.value, self.sweep_var, repr(float(self.sweep_value)), repr(float(self.tnr_db)),
            repr(float(self.mean_power_dbm)), repr(float(self.ser)), repr(float(self.ser_stderr)),
            repr(float(self.feasibility_rate)), str(self.trials), str(self.symbols_per_trial), str(self.seed),
        ]


@dataclass
class OverheadReport:
    """
    Backhaul coefficients per coherence block of delta symbol slots.

    total = analog_once + digital_once + delta * per_slot
    """

    family: str
    delta: int
    analog_once: int
    digital_once: int
    per_slot: int

    @property
    def total(self) -> int:
        return self.analog_once + self.digital_once + self.delta * self.per_slot


# ---------------------------------------------------------------------------
# Sweep-point semantics
# ---------------------------------------------------------------------------

def margin_for_tnr(noise_power: float, tnr_db: float) -> float:
    """Gamma with Gamma^2 / sigma^2 = 10^(TNR/10)."""
    return math.sqrt(noise_power) * 10.0 ** (tnr_db / 20.0)


def split_budget(config: NetworkConfig, total_dbm: float) -> np.ndarray:
    """Per-BS budgets (W) summing to total_dbm, proportional to the configured ones."""
    budgets = config.budgets
    total = 10.0 ** (total_dbm / 10.0) / 1000.0
    return budgets * (total / budgets.sum())


def _point_settings(config: NetworkConfig, scheme: SchemeId, value: float,
                    ci_caps: bool) -> Tuple[NetworkConfig, Optional[np.ndarray]]:
    if scheme.family == 'zf':
        return config, split_budget(config, value)
    margins = [margin_for_tnr(config.noise_power, value)] * config.num_users
    capped = ci_caps or not scheme.is_coordinated
    return config.replace(margins=margins), (config.budgets if capped else None)


# ---------------------------------------------------------------------------
# Trials
# ---------------------------------------------------------------------------

def run_trial(config: NetworkConfig, scheme: SchemeId, value: float, trial: int, seed: int,
              point_index: int, symbols_per_trial: int, ci_caps: bool = False,
              hook: Optional[DetectionHook] = None) -> TrialRecord:
    """
    One channel realization with `symbols_per_trial` symbol slots.

    Infeasible slots count every user as a symbol error; erased users of the
    uncoordinated scheme count as errors too.
    """
    scheme = SchemeId(scheme)
    point_config, budgets = _point_settings(config, scheme, value, ci_caps)
    channel_rng, slot_rng = trial_generators(seed, scheme.code, point_index, trial)
    positions = place_users(point_config, point_config.geometry, channel_rng)
    channels = generate_channels(point_config, positions, channel_rng)
    num_users = point_config.num_users
    record = TrialRecord(trial=trial, per_bs_power_sum=np.zeros(point_config.num_bs))
    statuses = []

    plan = None
    try:
        if scheme.is_coordinated:
            plan = prepare_coordinated(scheme, point_config, channels)
        else:
            plan = prepare_uncoordinated(point_config, channels)
    except CiHybridError as exc:
        logger.warning("trial %d of %s: %s", trial, scheme.value, exc)

    noise_scale = math.sqrt(point_config.noise_power / 2.0)
    for slot in range(symbols_per_trial):
        symbols = SymbolVector.random(num_users, point_config.modulation_order, slot_rng)
        draws = slot_rng.standard_normal((num_users, 2))
        noise = noise_scale * (draws[:, 0] + 1j * draws[:, 1])
        record.slots += 1
        record.symbols += num_users
        if plan is None:
            record.errors += num_users
            statuses.append('stage-failed')
            continue
        try:
            if scheme.is_coordinated:
                solution = precode_slot(plan, point_config, channels, symbols, budgets)
            else:
                solution = run_uncoordinated(point_config, channels, symbols, plan, budgets)
        except CiHybridError as exc:
            logger.warning("trial %d slot %d of %s infeasible: %s", trial, slot, scheme.value, exc)
            record.errors += num_users
            statuses.append('infeasible')
            continue

        analog = plan.analog
        y = received_nominal(channels, analog, solution.digital) + noise
        detected = detect_psk_array(y, point_config.modulation_order)
        if hook is not None:
            detected = np.asarray(hook(detected, symbols, trial, slot))
        wrong = detected != symbols.indices
        if solution.erased_users:
            wrong[list(solution.erased_users)] = True
        record.errors += int(np.sum(wrong))
        statuses.append(solution.status)
        if solution.erased_users:
            continue
        if solution.status not in ('optimal', 'zf'):
            logger.warning("trial %d slot %d of %s did not converge (%s); not counted as feasible",
                           trial, slot, scheme.value, solution.status)
            continue
        record.feasible_slots += 1
        record.power_sum += solution.total_power
        record.per_bs_power_sum += solution.per_bs_power
        record.min_slack = min(record.min_slack, solution.min_slack)
        if solution.amplitude is not None:
            margin = solution.diagnostics['equivalent_margin']
        else:
            margin = float(np.mean(point_config.margin_vector))
        record.margin_sq_sum += margin ** 2
    record.statuses = tuple(statuses)
    return record


def _run_trial_args(args: tuple) -> TrialRecord:
    return run_trial(*args)


def estimate_ser(config: NetworkConfig, scheme: SchemeId, value: float, trials: int,
                 symbols_per_trial: int, seed: int, point_index: int = 0, ci_caps: bool = False,
                 hook: Optional[DetectionHook] = None, workers: int = 1) -> PointEstimate:
    """
    Pool `trials` trials at one sweep value into an SER and power estimate.

    The SER standard error is sqrt(p (1 - p) / n) over the pooled symbol
    count n. A point where no slot was feasible reports NaN power and a
    feasibility rate of 0 instead of failing.
    """
    scheme = SchemeId(scheme)
    jobs = [
        (config, scheme, value, trial, seed, point_index, symbols_per_trial, ci_caps, hook)
        for trial in range(trials)
    ]
    if workers > 1 and hook is None:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(_run_trial_args, jobs))
    else:
        records = [_run_trial_args(job) for job in jobs]
    records.sort(key=lambda r: r.trial)
    return aggregate(records, scheme, value, config.noise_power, symbols_per_trial, seed)


def aggregate(records: Sequence[TrialRecord], scheme: SchemeId, value: float, noise_power: float,
              symbols_per_trial: int, seed: int) -> PointEstimate:
    errors = sum(r.errors for r in records)
    symbols = sum(r.symbols for r in records)
    feasible = sum(r.feasible_slots for r in records)
    slots = sum(r.slots for r in records)
    ser = errors / symbols if symbols else float('nan')
    stderr = math.sqrt(ser * (1.0 - ser) / symbols) if symbols else float('nan')
    if feasible:
        mean_power = math.fsum(r.power_sum for r in records) / feasible
        mean_margin_sq = math.fsum(r.margin_sq_sum for r in records) / feasible
        tnr_db = 10.0 * math.log10(mean_margin_sq / noise_power) if mean_margin_sq > 0 else float('-inf')
    else:
        logger.warning("no feasible slot for %s at %s", SchemeId(scheme).value, value)
        mean_power, tnr_db = float('nan'), float('nan')
    if SchemeId(scheme).family == 'ci':
        tnr_db = float(value)
    return PointEstimate(
        scheme=SchemeId(scheme), sweep_var=SweepSpec.sweep_var(scheme), sweep_value=float(value),
        tnr_db=tnr_db, mean_power_w=mean_power, ser=ser, ser_stderr=stderr,
        feasibility_rate=feasible / slots if slots else 0.0, trials=len(records),
        symbols_per_trial=symbols_per_trial, seed=seed, records=list(records),
    )


def run_sweep(spec: SweepSpec, config: NetworkConfig, out: Optional[Union[str, Path]] = None,
              workers: int = 1, hook: Optional[DetectionHook] = None) -> List[PointEstimate]:
    """
    Estimate every (scheme, grid value) point; optionally write the CSV.

    Rows come out scheme by scheme in the order given, grid values in order.
    """
    estimates = []
    for scheme in spec.schemes:
        for point_index, value in enumerate(spec.grid_for(scheme)):
            logger.info("running %s at %s = %s", scheme.value, spec.sweep_var(scheme), value)
            estimates.append(estimate_ser(
                config, scheme, value, spec.trials, spec.symbols_per_trial, spec.seed,
                point_index=point_index, ci_caps=spec.ci_caps, hook=hook, workers=workers,
            ))
    if out is not None:
        write_csv(estimates, out)
    return estimates


def power_at_ser(estimates: Sequence[PointEstimate], target: float = 1e-2, stderrs: float = 0.0) -> float:
    """
    Mean transmit power (dBm) at which one scheme's SER curve falls to `target`.

    Points are ordered by mean power and log10 SER is interpolated linearly
    in dBm across the first crossing. `stderrs` shifts every SER by that many
    standard errors: +2 reads the curve pessimistically, -2 optimistically.

    Returns:
        The crossing power, or NaN when the curve never crosses `target`
        inside the swept range.
    """
    points = sorted(
        (e.mean_power_dbm, max(e.ser + stderrs * e.ser_stderr, SER_FLOOR))
        for e in estimates if math.isfinite(e.mean_power_dbm) and math.isfinite(e.ser)
    )
    for (p0, s0), (p1, s1) in zip(points, points[1:]):
        if s0 > target >= s1:
            fraction = (math.log10(s0) - math.log10(target)) / (math.log10(s0) - math.log10(s1))
            return p0 + fraction * (p1 - p0)
    return float('nan')


def format_csv(estimates: Sequence[PointEstimate]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator='\n')
    writer.writerow(CSV_COLUMNS)
    for estimate in estimates:
        writer.writerow(estimate.csv_row())
    return buffer.getvalue()


def write_csv(estimates: Sequence[PointEstimate], path: Union[str, Path]) -> None:
    path = Path(path)
    try:
        path.write_text(format_csv(estimates), encoding='utf-8')
    except OSError as exc:
        raise OSError(f"cannot write results to {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# Backhaul overhead
# ---------------------------------------------------------------------------

def backhaul_overhead(config: NetworkConfig, delta: int, family: str) -> OverheadReport:
    """
    Coefficients the controller ships per coherence block.

    CI: analog coefficients once plus R_g digital coefficients per BS every
    slot. ZF: analog and R_g x K digital coefficients once plus K symbols
    per BS every slot.

    Raises:
        DomainError: delta < 1 or unknown family
    """
    if delta < 1:
        raise DomainError(f"coherence length must be at least 1, got {delta}")
    analog_once = sum(bs.antennas * bs.rf_chains for bs in config.bs_list)
    chains = sum(config.rf_chains)
    if family == 'ci':
        return OverheadReport('ci', int(delta), analog_once, 0, chains)
    if family == 'zf':
        return OverheadReport('zf', int(delta), analog_once, chains * config.num_users,
                              config.num_bs * config.num_users)
    raise DomainError(f"unknown scheme family '{family}'")


def overhead_table(config: NetworkConfig, deltas: Sequence[int]) -> List[Tuple[OverheadReport, OverheadReport]]:
    """(CI report, ZF report) for every delta."""
    return [(backhaul_overhead(config, d, 'ci'), backhaul_overhead(config, d, 'zf')) for d in deltas]


def format_overhead_csv(table: Sequence[Tuple[OverheadReport, OverheadReport]]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator='\n')
    writer.writerow(('delta', 'ci_total', 'zf_total'))
    for ci, zf in table:
        writer.writerow((ci.delta, ci.total, zf.total))
    return buffer.getvalue()
