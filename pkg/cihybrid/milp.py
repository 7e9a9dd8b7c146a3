#!/usr/bin/env python3
"""
Mixed-Binary Linear Programming
Dense two-phase simplex and best-first branch-and-bound for small models.

Models are maximizations. Continuous variables may have any bounds
(including free); binary variables live in [0, 1]. The solver is meant for
the few-hundred-variable assignment models built by the assignment stage
and the phase-1 feasibility LPs of the convex stage.
"""

import heapq
import logging
import time
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from cihybrid.errors import StructuralError


logger = logging.getLogger(__name__)

FEASIBILITY_TOL = 1e-9
INTEGRALITY_TOL = 1e-9
REDUCED_COST_TOL = 1e-10
PIVOT_TOL = 1e-11
DEGENERACY_STREAK = 25

SENSES = ('<=', '>=', '==')


@dataclass(frozen=True)
class MilpModel:
    """
    Maximize objective @ x subject to constraints @ x (sense) rhs and bounds.

    Attributes:
        objective: coefficients to maximize, shape (n,)
        constraints: dense matrix, shape (m, n)
        senses: one of '<=', '>=', '==' per row
        rhs: right-hand sides, shape (m,)
        lower: lower bounds (may be -inf)
        upper: upper bounds (may be +inf)
        binary: mask of binary variables
        names: optional variable names used by the LP-text dump
    """

    objective: np.ndarray
    constraints: np.ndarray
    senses: Tuple[str, ...]
    rhs: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    binary: np.ndarray
    names: Optional[Tuple[str, ...]] = None

    def __post_init__(self):
        n = self.objective.shape[0]
        m = self.rhs.shape[0]
        if self.constraints.shape != (m, n):
            raise StructuralError(
                f"constraint matrix has shape {self.constraints.shape}, expected {(m, n)}"
            )
        if len(self.senses) != m or any(s not in SENSES for s in self.senses):
            raise StructuralError("every constraint needs a sense among <=, >=, ==")
        for name, array in (('lower', self.lower), ('upper', self.upper), ('binary', self.binary)):
            if array.shape != (n,):
                raise StructuralError(f"{name} must have shape ({n},)")
        if not (np.all(np.isfinite(self.objective)) and np.all(np.isfinite(self.constraints))
                and np.all(np.isfinite(self.rhs))):
            raise StructuralError("model coefficients must be finite")
        if np.any(self.lower[self.binary] < 0) or np.any(self.upper[self.binary] > 1):
            raise StructuralError("binary variables must be bounded within [0, 1]")

    @classmethod
    def build(cls, objective: Sequence[float], rows: Sequence[Tuple[Sequence[float], str, float]],
              lower: Sequence[float], upper: Sequence[float], binary: Sequence[bool],
              names: Optional[Sequence[str]] = None) -> 'MilpModel':
        """
        Convenience constructor from (coefficients, sense, rhs) rows.

        Raises:
            StructuralError: a row whose length differs from the objective's
        """
        n = len(objective)
        for i, row in enumerate(rows):
            if len(row[0]) != n:
                raise StructuralError(f"row {i} has {len(row[0])} coefficients, expected {n}")
        matrix = np.array([list(r[0]) for r in rows], dtype=float).reshape(len(rows), n)
        return cls(
            objective=np.asarray(objective, dtype=float),
            constraints=matrix,
            senses=tuple(r[1] for r in rows),
            rhs=np.array([r[2] for r in rows], dtype=float),
            lower=np.asarray(lower, dtype=float),
            upper=np.asarray(upper, dtype=float),
            binary=np.asarray(binary, dtype=bool),
            names=tuple(names) if names is not None else None,
        )

    @property
    def num_vars(self) -> int:
        return self.objective.shape[0]

    @property
    def num_rows(self) -> int:
        return self.rhs.shape[0]

    def objective_value(self, x: np.ndarray) -> float:
        return float(self.objective @ x)

    def max_violation(self, x: np.ndarray) -> float:
        """Largest absolute violation of rows and bounds at x."""
        worst = 0.0
        if self.num_rows:
            activity = self.constraints @ x
            for sense, value, bound in zip(self.senses, activity, self.rhs):
                if sense == '<=':
                    worst = max(worst, value - bound)
                elif sense == '>=':
                    worst = max(worst, bound - value)
                else:
                    worst = max(worst, abs(value - bound))
        worst = max(worst, float(np.max(self.lower - x, initial=0.0)))
        worst = max(worst, float(np.max(x - self.upper, initial=0.0)))
        return worst

    def integrality_violation(self, x: np.ndarray) -> float:
        values = x[self.binary]
        if values.size == 0:
            return 0.0
        return float(np.max(np.abs(values - np.round(values))))


@dataclass
class LpResult:
    """Outcome of one LP relaxation: status, primal point, objective, pivots."""

    status: str
    x: Optional[np.ndarray] = None
    objective: float = float('-inf')
    iterations: int = 0


@dataclass
class MilpOptions:
    """Branch-and-bound limits and tolerances."""

    time_limit: float = 60.0
    node_limit: int = 20000
    integrality_tol: float = INTEGRALITY_TOL
    feasibility_tol: float = FEASIBILITY_TOL


@dataclass
class MilpSolution:
    """
    Branch-and-bound result.

    Attributes:
        status: 'optimal', 'infeasible' or 'gap-limited'
        x: best integral point found (None if none)
        objective: its objective value
        bound: best remaining LP relaxation value (equals objective when optimal)
        gap: bound - objective (0 when optimal)
        root_bound: LP relaxation value at the root
        nodes: number of processed nodes
        trace: (node bound, incumbent objective) per processed node
    """

    status: str
    x: Optional[np.ndarray]
    objective: float
    bound: float
    gap: float
    root_bound: float = float('nan')
    nodes: int = 0
    trace: List[Tuple[float, float]] = field(default_factory=list)


# ---------------------------------------------------------------------------
# Simplex
# ---------------------------------------------------------------------------

class _Tableau:
    """Dense simplex tableau with reduced-cost row for maximization."""

    def __init__(self, table: np.ndarray, basis: List[int]):
        self.table = table
        self.basis = basis
        self.costs = np.zeros(0)
        self.reduced = np.zeros(0)

    def set_costs(self, costs: np.ndarray) -> None:
        self.costs = costs
        reduced = np.concatenate([costs, [0.0]])
        for row, var in enumerate(self.basis):
            if costs[var] != 0.0:
                reduced = reduced - costs[var] * self.table[row]
        self.reduced = reduced

    @property
    def value(self) -> float:
        return -float(self.reduced[-1])

    def pivot(self, row: int, col: int) -> None:
        pivot_row = self.table[row] / self.table[row, col]
        self.table -= np.outer(self.table[:, col], pivot_row)
        self.table[row] = pivot_row
        self.reduced = self.reduced - self.reduced[col] * pivot_row
        self.basis[row] = col

    def run(self, max_iterations: int, allowed: Optional[np.ndarray] = None) -> Tuple[str, int]:
        """
        Iterate to optimality.

        Dantzig pricing switches to Bland's rule after a streak of degenerate
        pivots; ratio-test ties go to the smallest basic variable index.
        """
        streak = 0
        bland = False
        for iteration in range(max_iterations):
            candidates = np.flatnonzero(self.reduced[:-1] > REDUCED_COST_TOL)
            if allowed is not None and candidates.size:
                candidates = candidates[allowed[candidates]]
            if candidates.size == 0:
                return 'optimal', iteration
            if bland:
                col = int(candidates[0])
            else:
                col = int(candidates[np.argmax(self.reduced[candidates])])
            column = self.table[:, col]
            positive = np.flatnonzero(column > PIVOT_TOL)
            if positive.size == 0:
                return 'unbounded', iteration
            rhs = np.maximum(self.table[positive, -1], 0.0)
            ratios = rhs / column[positive]
            best = ratios.min()
            ties = positive[ratios <= best + 1e-12 * max(1.0, best)]
            row = int(ties[np.argmin([self.basis[t] for t in ties])])
            if best <= 1e-12:
                streak += 1
                if streak >= DEGENERACY_STREAK and not bland:
                    logger.debug("switching to Bland's rule after %d degenerate pivots", streak)
                    bland = True
            else:
                streak = 0
            self.pivot(row, col)
        return 'iteration-limit', max_iterations


def _standard_form(model: MilpModel, lower: np.ndarray, upper: np.ndarray):
    """
    Shift, flip and split variables so that every LP column is nonnegative.

    Returns:
        (matrix, senses, rhs, costs, constant, mapping) where mapping lists
        (column, sign, offset) triples per original variable; fixed variables
        map to (-1, 0, value).
    """
    n = model.num_vars
    a = model.constraints
    rhs = model.rhs.astype(float).copy()
    constant = 0.0
    columns: List[np.ndarray] = []
    costs: List[float] = []
    mapping: List[List[Tuple[int, float, float]]] = []
    positive_shift = np.zeros(n, dtype=bool)

    for j in range(n):
        lo, up = lower[j], upper[j]
        if np.isfinite(lo) and np.isfinite(up) and up - lo <= 1e-12:
            rhs -= a[:, j] * lo
            constant += model.objective[j] * lo
            mapping.append([(-1, 0.0, lo)])
            continue
        if np.isfinite(lo):
            rhs -= a[:, j] * lo
            constant += model.objective[j] * lo
            mapping.append([(len(columns), 1.0, lo)])
            columns.append(a[:, j])
            costs.append(model.objective[j])
            positive_shift[j] = True
        elif np.isfinite(up):
            rhs -= a[:, j] * up
            constant += model.objective[j] * up
            mapping.append([(len(columns), -1.0, up)])
            columns.append(-a[:, j])
            costs.append(-model.objective[j])
        else:
            mapping.append([(len(columns), 1.0, 0.0), (len(columns) + 1, -1.0, 0.0)])
            columns.extend([a[:, j], -a[:, j]])
            costs.extend([model.objective[j], -model.objective[j]])

    m = model.num_rows
    matrix = np.column_stack(columns) if columns else np.zeros((m, 0))
    senses = list(model.senses)
    rhs_list = list(rhs)
    rows = [matrix[i] for i in range(m)]

    # rows whose variables all sit on shifted nonnegative columns with
    # nonnegative coefficients imply upper bounds on those columns
    free_rows = []
    for i in range(m):
        if senses[i] != '<=':
            continue
        involved = np.flatnonzero(a[i] != 0)
        if all(positive_shift[j] or mapping[j][0][0] == -1 for j in involved) and np.all(a[i, involved] >= 0):
            free_rows.append(i)

    for j in range(n):
        if not positive_shift[j] or not np.isfinite(upper[j]):
            continue
        col, _, lo = mapping[j][0]
        width = upper[j] - lo
        implied = any(
            a[i, j] > 0 and rhs[i] / a[i, j] <= width + 1e-12 for i in free_rows
        )
        if implied:
            continue
        row = np.zeros(len(columns))
        row[col] = 1.0
        rows.append(row)
        senses.append('<=')
        rhs_list.append(width)

    matrix = np.array(rows).reshape(len(rows), len(columns))
    return matrix, senses, np.array(rhs_list, dtype=float), np.array(costs, dtype=float), constant, mapping


def solve_lp(model: MilpModel, lower: Optional[np.ndarray] = None, upper: Optional[np.ndarray] = None,
             max_iterations: Optional[int] = None) -> LpResult:
    """
    Solve the LP relaxation of a model (integrality ignored).

    Args:
        model: model to relax
        lower: optional lower-bound override (branching fixes)
        upper: optional upper-bound override
        max_iterations: pivot limit per phase

    Returns:
        LpResult with status 'optimal', 'infeasible', 'unbounded' or
        'iteration-limit'
    """
    lower = model.lower if lower is None else lower
    upper = model.upper if upper is None else upper
    if np.any(lower > upper + FEASIBILITY_TOL):
        return LpResult(status='infeasible')

    matrix, senses, rhs, costs, constant, mapping = _standard_form(model, lower, upper)
    m, ny = matrix.shape

    flip = rhs < 0
    matrix[flip] *= -1.0
    rhs = np.abs(rhs)
    senses = [
        ('>=' if s == '<=' else '<=' if s == '>=' else '==') if f else s
        for s, f in zip(senses, flip)
    ]

    n_slack = sum(1 for s in senses if s != '==')
    n_art = sum(1 for s in senses if s != '<=')
    width = ny + n_slack + n_art
    table = np.zeros((m, width + 1))
    table[:, :ny] = matrix
    table[:, -1] = rhs
    basis: List[int] = []
    slack_col, art_col = ny, ny + n_slack
    for i, sense in enumerate(senses):
        if sense == '<=':
            table[i, slack_col] = 1.0
            basis.append(slack_col)
            slack_col += 1
        elif sense == '>=':
            table[i, slack_col] = -1.0
            table[i, art_col] = 1.0
            basis.append(art_col)
            slack_col += 1
            art_col += 1
        else:
            table[i, art_col] = 1.0
            basis.append(art_col)
            art_col += 1

    limit = max_iterations or 50 * (m + width) + 1000
    tableau = _Tableau(table, basis)
    iterations = 0
    artificial = np.arange(ny + n_slack, width)

    if n_art:
        phase_one = np.zeros(width)
        phase_one[artificial] = -1.0
        tableau.set_costs(phase_one)
        status, used = tableau.run(limit)
        iterations += used
        if status == 'iteration-limit':
            return LpResult(status=status, iterations=iterations)
        if tableau.value < -FEASIBILITY_TOL * max(1.0, float(np.max(rhs, initial=0.0))):
            return LpResult(status='infeasible', iterations=iterations)
        _drive_out_artificials(tableau, ny + n_slack)
        keep = np.concatenate([np.arange(ny + n_slack), [width]])
        tableau.table = tableau.table[:, keep]

    full_costs = np.zeros(ny + n_slack)
    full_costs[:ny] = costs
    tableau.set_costs(full_costs)
    status, used = tableau.run(limit)
    iterations += used
    if status != 'optimal':
        return LpResult(status=status, iterations=iterations)

    y = np.zeros(ny + n_slack)
    for row, var in enumerate(tableau.basis):
        y[var] = tableau.table[row, -1]
    x = np.zeros(model.num_vars)
    for j, parts in enumerate(mapping):
        value = parts[0][2]
        for col, sign, _ in parts:
            if col >= 0:
                value += sign * y[col]
        x[j] = value
    return LpResult(status='optimal', x=x, objective=model.objective_value(x), iterations=iterations)


def _drive_out_artificials(tableau: _Tableau, first_artificial: int) -> None:
    """Pivot artificial variables out of the basis; drop redundant rows."""
    row = 0
    while row < len(tableau.basis):
        if tableau.basis[row] < first_artificial:
            row += 1
            continue
        candidates = np.abs(tableau.table[row, :first_artificial])
        col = int(np.argmax(candidates)) if candidates.size else -1
        if col >= 0 and candidates[col] > 1e-9:
            tableau.pivot(row, col)
            row += 1
        else:
            tableau.table = np.delete(tableau.table, row, axis=0)
            tableau.reduced = tableau.reduced
            del tableau.basis[row]


# ---------------------------------------------------------------------------
# Branch and bound
# ---------------------------------------------------------------------------

def _branch_variable(model: MilpModel, x: np.ndarray, tol: float) -> int:
    """Most fractional binary, ties to the lowest index; -1 if integral."""
    binaries = np.flatnonzero(model.binary)
    if binaries.size == 0:
        return -1
    values = x[binaries]
    distance = np.abs(values - np.round(values))
    if distance.max() <= tol:
        return -1
    return int(binaries[np.argmax(distance)])


def _rounded(model: MilpModel, x: np.ndarray) -> np.ndarray:
    point = x.copy()
    point[model.binary] = np.round(point[model.binary])
    return point


def solve_binary_milp(model: MilpModel, options: Optional[MilpOptions] = None,
                      incumbent: Optional[np.ndarray] = None) -> MilpSolution:
    """
    Best-first branch-and-bound over LP relaxations.

    Args:
        model: maximization model with binary variables marked
        options: node/time limits and tolerances
        incumbent: optional feasible starting point used for pruning

    Returns:
        MilpSolution; 'gap-limited' when a limit stops the search with open
        nodes whose bound exceeds the incumbent.
    """
    options = options or MilpOptions()
    start = time.monotonic()
    best_x: Optional[np.ndarray] = None
    best_obj = float('-inf')

    if incumbent is not None:
        point = np.asarray(incumbent, dtype=float)
        if (model.max_violation(point) <= options.feasibility_tol
                and model.integrality_violation(point) <= options.integrality_tol):
            best_x, best_obj = point.copy(), model.objective_value(point)
        else:
            logger.debug("ignoring infeasible warm-start incumbent")

    root = solve_lp(model)
    if root.status == 'unbounded':
        raise StructuralError("LP relaxation is unbounded")
    if root.status != 'optimal':
        if best_x is not None:
            return MilpSolution('gap-limited', best_x, best_obj, float('inf'), float('inf'))
        return MilpSolution('infeasible', None, float('-inf'), float('-inf'), float('inf'))

    def prune_level() -> float:
        return best_obj + options.feasibility_tol * max(1.0, abs(best_obj)) if best_x is not None else float('-inf')

    trace: List[Tuple[float, float]] = []
    heap: List[Tuple[float, int, np.ndarray, np.ndarray, LpResult]] = []
    counter = 0

    def consider(lower: np.ndarray, upper: np.ndarray, lp: LpResult) -> None:
        nonlocal best_x, best_obj, counter
        if lp.status != 'optimal' or lp.objective <= prune_level():
            return
        if _branch_variable(model, lp.x, options.integrality_tol) < 0:
            point = _rounded(model, lp.x)
            value = model.objective_value(point)
            if best_x is None or value > best_obj:
                best_x, best_obj = point, value
            return
        heapq.heappush(heap, (-lp.objective, counter, lower, upper, lp))
        counter += 1

    consider(model.lower.copy(), model.upper.copy(), root)
    nodes = 0
    limited = False
    while heap:
        if nodes >= options.node_limit or time.monotonic() - start > options.time_limit:
            limited = True
            break
        neg_bound, _, lower, upper, lp = heapq.heappop(heap)
        if -neg_bound <= prune_level():
            heap.clear()
            break
        nodes += 1
        trace.append((-neg_bound, best_obj))
        j = _branch_variable(model, lp.x, options.integrality_tol)
        for value in (0.0, 1.0):
            child_lower, child_upper = lower.copy(), upper.copy()
            child_lower[j] = child_upper[j] = value
            consider(child_lower, child_upper, solve_lp(model, child_lower, child_upper))

    open_bound = max((-entry[0] for entry in heap if -entry[0] > prune_level()), default=float('-inf'))
    if best_x is None:
        if limited and open_bound > float('-inf'):
            logger.warning("MILP node/time limit hit before any integral point was found")
            return MilpSolution('gap-limited', None, float('-inf'), open_bound, float('inf'),
                                root.objective, nodes, trace)
        return MilpSolution('infeasible', None, float('-inf'), float('-inf'), float('inf'),
                            root.objective, nodes, trace)
    if limited and open_bound > best_obj:
        gap = open_bound - best_obj
        logger.warning("MILP stopped with gap %.3e after %d nodes", gap, nodes)
        return MilpSolution('gap-limited', best_x, best_obj, open_bound, gap, root.objective, nodes, trace)
    return MilpSolution('optimal', best_x, best_obj, best_obj, 0.0, root.objective, nodes, trace)
