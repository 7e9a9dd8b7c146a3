#!/usr/bin/env python3
"""
Console Reporting
Formatting helpers for the CLI status lines.
"""

import math
from typing import List, Sequence, Tuple

import numpy as np

from cihybrid.model import watts_to_dbm


def format_power(watts: float) -> str:
    if not math.isfinite(watts):
        return 'n/a'
    return f"{watts:.4g} W ({watts_to_dbm(watts):.2f} dBm)"


def format_alpha(alpha: np.ndarray, owner: Sequence[int]) -> List[str]:
    """One line per row: owning BS, 0/1 pattern and served user."""
    lines = []
    for r, row in enumerate(alpha):
        served = np.flatnonzero(row)
        user = f"user {served[0]}" if served.size else 'unassigned'
        lines.append(f"  row {r:3d} (BS {owner[r]}): {' '.join(str(int(v)) for v in row)}  -> {user}")
    return lines


def format_estimate(estimate) -> str:
    """📊 line for one sweep point."""
    return (
        f"📊 {estimate.scheme.value:17s} {estimate.sweep_var}={estimate.sweep_value:g}: "
        f"SER {estimate.ser:.4g} ± {estimate.ser_stderr:.2g}, "
        f"power {estimate.mean_power_dbm:.2f} dBm, feasible {estimate.feasibility_rate:.0%}"
    )


def format_overhead(rows: Sequence[Tuple[object, object]]) -> List[str]:
    lines = [f"  {'delta':>8} {'CI':>10} {'ZF':>10}"]
    for ci, zf in rows:
        lines.append(f"  {ci.delta:>8d} {ci.total:>10d} {zf.total:>10d}")
    return lines
