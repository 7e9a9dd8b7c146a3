#!/usr/bin/env python3
"""
LP Text Format
Human-readable dump of a MilpModel for debugging.

Layout:

    Maximize
     obj: 3 a_0_0 + 1 a_0_1 + 0.5 tau
    Subject To
     c0: 1 a_0_0 + 1 a_0_1 <= 1
    Bounds
     0 <= tau <= inf
    Binaries
     a_0_0 a_0_1
    End

Zero coefficients are omitted; variables without names are called x<j>.
"""

from pathlib import Path
from typing import List, Union

import numpy as np

from cihybrid.milp import MilpModel


def _names(model: MilpModel) -> List[str]:
    if model.names is not None:
        return list(model.names)
    return [f"x{j}" for j in range(model.num_vars)]


def _expression(coefficients: np.ndarray, names: List[str]) -> str:
    terms = [f"{c:.12g} {names[j]}" for j, c in enumerate(coefficients) if c != 0]
    if not terms:
        return '0'
    return ' + '.join(terms).replace('+ -', '- ')


def _bound(value: float) -> str:
    if np.isinf(value):
        return 'inf' if value > 0 else '-inf'
    return f"{value:.12g}"


def format_lp(model: MilpModel) -> str:
    names = _names(model)
    lines = ['Maximize', f" obj: {_expression(model.objective, names)}", 'Subject To']
    for i in range(model.num_rows):
        lines.append(
            f" c{i}: {_expression(model.constraints[i], names)} {model.senses[i]} {model.rhs[i]:.12g}"
        )
    lines.append('Bounds')
    for j in range(model.num_vars):
        if not model.binary[j]:
            lines.append(f" {_bound(model.lower[j])} <= {names[j]} <= {_bound(model.upper[j])}")
    binaries = [names[j] for j in np.flatnonzero(model.binary)]
    if binaries:
        lines.append('Binaries')
        lines.append(' ' + ' '.join(binaries))
    lines.append('End')
    return '\n'.join(lines) + '\n'


def write_lp(model: MilpModel, path: Union[str, Path]) -> None:
    path = Path(path)
    try:
        path.write_text(format_lp(model), encoding='utf-8')
    except OSError as exc:
        raise OSError(f"cannot write LP file {path}: {exc}") from exc
