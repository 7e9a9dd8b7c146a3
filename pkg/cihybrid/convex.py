#!/usr/bin/env python3
"""
Convex QCQP Engine
Primal-dual interior-point solver for block-diagonal quadratic objectives
with linear inequalities and per-block quadratic caps.

Problem form, over the real stacking x = [x_1; ...; x_G]:

    minimize    sum_g x_g^T P_g x_g
    subject to  G x <= h
                x_g^T P_g x_g <= cap_g      (for every capped block)

Infeasibility is decided in two steps: a phase-1 LP on the linear rows,
then, if the uncapped optimum breaks a cap, a phase-1 convex problem that
minimizes the largest relative cap excess. Caps are only declared
unreachable once that problem converges; a stalled run falls back to
reweighting the block powers until every cap holds.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from cihybrid.errors import StructuralError
from cihybrid.milp import MilpModel, solve_lp


logger = logging.getLogger(__name__)

DEFAULT_TOL = 1e-7
DEFAULT_MAX_ITER = 200
CENTERING = 0.1
STEP_FRACTION = 0.99
BACKTRACK = 0.5
RESIDUAL_DECREASE = 0.01
MAX_BACKTRACKS = 60
REGULARIZATION = 1e-11
PSD_TOL = 1e-10
CAP_MARGIN = 0.05
REWEIGHT_ROUNDS = 60
REWEIGHT_PATIENCE = 5


def complex_gram_to_real(matrix: np.ndarray) -> np.ndarray:
    """
    Real expansion of M = A^H A for the stacking [Re(b); Im(b)].

    With M = X + jY, b^H M b = [r; i]^T [[X, -Y], [Y, X]] [r; i].
    """
    gram = matrix.conj().T @ matrix
    x, y = gram.real, gram.imag
    real = np.block([[x, -y], [y, x]])
    return 0.5 * (real + real.T)


@dataclass(frozen=True)
class QcqpProblem:
    """
    Block-diagonal QCQP.

    Attributes:
        blocks: symmetric PSD objective block P_g per BS
        G: linear inequality rows, shape (m, n)
        h: right-hand sides, shape (m,)
        caps: per-block cap on x_g^T P_g x_g; None or inf means uncapped
    """

    blocks: Tuple[np.ndarray, ...]
    G: np.ndarray
    h: np.ndarray
    caps: Optional[Tuple[float, ...]] = None

    def __post_init__(self):
        n = sum(b.shape[0] for b in self.blocks)
        if self.G.shape != (self.h.shape[0], n):
            raise StructuralError(f"inequality rows have shape {self.G.shape}, expected ({self.h.shape[0]}, {n})")
        for g, block in enumerate(self.blocks):
            if block.shape[0] != block.shape[1]:
                raise StructuralError(f"objective block {g} is not square")
            scale = max(1.0, float(np.max(np.abs(block), initial=0.0)))
            if np.max(np.abs(block - block.T), initial=0.0) > PSD_TOL * scale:
                raise StructuralError(f"objective block {g} is not symmetric")
            if block.size and np.linalg.eigvalsh(block).min() < -PSD_TOL * scale:
                raise StructuralError(f"objective block {g} is not positive semidefinite")
        if self.caps is not None:
            if len(self.caps) != len(self.blocks):
                raise StructuralError(f"{len(self.caps)} caps for {len(self.blocks)} blocks")
            if any(not c > 0 for c in self.caps):
                raise StructuralError("caps must be positive")

    @property
    def sizes(self) -> List[int]:
        return [b.shape[0] for b in self.blocks]

    @property
    def offsets(self) -> List[int]:
        return list(np.cumsum([0] + self.sizes[:-1]))

    @property
    def num_vars(self) -> int:
        return sum(self.sizes)

    @property
    def capped(self) -> List[int]:
        """Blocks with a finite cap."""
        if self.caps is None:
            return []
        return [g for g, c in enumerate(self.caps) if np.isfinite(c)]

    def objective_matrix(self) -> np.ndarray:
        n = self.num_vars
        full = np.zeros((n, n))
        for block, offset in zip(self.blocks, self.offsets):
            size = block.shape[0]
            full[offset:offset + size, offset:offset + size] = block
        return full

    def block_values(self, x: np.ndarray) -> np.ndarray:
        """x_g^T P_g x_g per block."""
        return np.array([
            float(x[o:o + b.shape[0]] @ b @ x[o:o + b.shape[0]])
            for b, o in zip(self.blocks, self.offsets)
        ])

    def objective(self, x: np.ndarray) -> float:
        return float(self.block_values(x).sum())


@dataclass
class QcqpSolution:
    """
    Solver outcome.

    Duals are reported for the problem as given (not the row-normalized form
    the solver works on): one per linear row, one per block cap (0 for
    uncapped blocks).
    """

    status: str
    x: Optional[np.ndarray]
    objective: float
    duals: Optional[np.ndarray] = None
    cap_duals: Optional[np.ndarray] = None
    residuals: Dict[str, float] = field(default_factory=dict)
    iterations: int = 0
    diagnostics: Dict[str, Any] = field(default_factory=dict)


@dataclass
class QcqpOptions:
    tol: float = DEFAULT_TOL
    max_iter: int = DEFAULT_MAX_ITER


# ---------------------------------------------------------------------------
# Interior point core
# ---------------------------------------------------------------------------

@dataclass
class _Program:
    """min x^T P x + q^T x  s.t.  G x <= h,  x^T Q_i x + a_i^T x <= b_i."""

    P: np.ndarray
    q: np.ndarray
    G: np.ndarray
    h: np.ndarray
    quad: List[Tuple[np.ndarray, np.ndarray, float]]

    @property
    def m(self) -> int:
        return self.G.shape[0] + len(self.quad)

    def f0(self, x: np.ndarray) -> float:
        return float(x @ self.P @ x + self.q @ x)

    def grad0(self, x: np.ndarray) -> np.ndarray:
        return 2.0 * self.P @ x + self.q

    def values(self, x: np.ndarray) -> np.ndarray:
        linear = self.G @ x - self.h
        quad = [float(x @ Q @ x + a @ x - b) for Q, a, b in self.quad]
        return np.concatenate([linear, quad])

    def jacobian(self, x: np.ndarray) -> np.ndarray:
        rows = [2.0 * Q @ x + a for Q, a, _ in self.quad]
        if rows:
            return np.vstack([self.G, np.array(rows)])
        return self.G


def _scaled_residuals(program: _Program, x: np.ndarray, lam: np.ndarray) -> Dict[str, float]:
    values = program.values(x)
    grad = program.grad0(x)
    objective = program.f0(x)
    stationarity = grad + program.jacobian(x).T @ lam if program.m else grad
    return {
        'stationarity': float(np.max(np.abs(stationarity), initial=0.0))
        / (1.0 + float(np.max(np.abs(grad), initial=0.0))),
        'primal': float(max(0.0, np.max(values, initial=0.0))),
        'dual': float(max(0.0, -np.min(lam, initial=0.0))),
        'complementarity': float(np.max(np.abs(lam * values), initial=0.0)) / (1.0 + abs(objective)),
    }


def _interior_point(program: _Program, x0: np.ndarray, tol: float, max_iter: int,
                    stop: Optional[Callable[[np.ndarray], bool]] = None,
                    ) -> Tuple[str, np.ndarray, np.ndarray, Dict[str, float], int]:
    """
    Primal-dual path following from a strictly feasible x0.

    Args:
        stop: optional test on each accepted iterate; a true result ends the
            run with status 'stopped'

    Returns:
        (status, x, lambda, residuals, iterations)
    """
    x = x0.astype(float).copy()
    m, n = program.m, x.shape[0]
    slack = -program.values(x)
    if np.any(slack <= 0):
        raise StructuralError("interior-point start is not strictly feasible")
    lam = (1.0 + abs(program.f0(x))) / max(m, 1) / slack if m else np.zeros(0)
    quad_offset = program.G.shape[0]

    def residual_norm(xv: np.ndarray, lv: np.ndarray, mu: float) -> float:
        dual = program.grad0(xv) + program.jacobian(xv).T @ lv
        cent = lv * (-program.values(xv)) - mu
        return float(np.sqrt(dual @ dual + cent @ cent))

    residuals = _scaled_residuals(program, x, lam)
    for iteration in range(max_iter):
        if all(v <= tol for v in residuals.values()):
            return 'optimal', x, lam, residuals, iteration
        slack = -program.values(x)
        mu = CENTERING * float(lam @ slack) / m if m else 0.0
        jac = program.jacobian(x)

        hessian = 2.0 * program.P.copy()
        for i, (Q, _, _) in enumerate(program.quad):
            hessian += 2.0 * lam[quad_offset + i] * Q
        hessian += jac.T @ ((lam / slack)[:, None] * jac)
        hessian += REGULARIZATION * max(1.0, float(np.max(np.abs(np.diag(hessian)), initial=0.0))) * np.eye(n)
        rhs = -(program.grad0(x) + jac.T @ (mu / slack))
        try:
            dx = np.linalg.solve(hessian, rhs)
        except np.linalg.LinAlgError:
            dx = np.linalg.lstsq(hessian, rhs, rcond=None)[0]
        ds = -jac @ dx
        dlam = (mu - lam * slack - lam * ds) / slack

        shrinking = dlam < 0
        step = min(1.0, float(np.min(-lam[shrinking] / dlam[shrinking]))) if np.any(shrinking) else 1.0
        step *= STEP_FRACTION
        base = residual_norm(x, lam, mu)
        for _ in range(MAX_BACKTRACKS):
            x_new, lam_new = x + step * dx, lam + step * dlam
            if np.all(program.values(x_new) < 0) and \
                    residual_norm(x_new, lam_new, mu) <= (1.0 - RESIDUAL_DECREASE * step) * base:
                break
            step *= BACKTRACK
        else:
            logger.debug("line search stalled at iteration %d", iteration)
            return 'max-iterations', x, lam, residuals, iteration
        x, lam = x_new, lam_new
        residuals = _scaled_residuals(program, x, lam)
        if stop is not None and stop(x):
            return 'stopped', x, lam, residuals, iteration + 1

    if all(v <= tol for v in residuals.values()):
        return 'optimal', x, lam, residuals, max_iter
    return 'max-iterations', x, lam, residuals, max_iter


# ---------------------------------------------------------------------------
# Problem-level driver
# ---------------------------------------------------------------------------

@dataclass
class _Scaling:
    """
    Row normalization plus a variable scale.

    The solver works on u = x / scale with unit-norm rows and right-hand
    sides of magnitude at most one.
    """

    G: np.ndarray
    h: np.ndarray
    norms: np.ndarray
    keep: np.ndarray
    scale: float


def _scaling(problem: QcqpProblem) -> _Scaling:
    norms = np.linalg.norm(problem.G, axis=1)
    keep = norms > 0
    G = problem.G[keep] / norms[keep][:, None]
    h = problem.h[keep] / norms[keep]
    biggest = float(np.max(np.abs(h), initial=0.0))
    scale = biggest if biggest > 0 else 1.0
    return _Scaling(G=G, h=h / scale, norms=norms, keep=keep, scale=scale)


def _cap_terms(problem: QcqpProblem, blocks: Sequence[int], scale: float,
               width: Optional[int] = None) -> List[Tuple[np.ndarray, np.ndarray, float]]:
    """Caps as u^T (P_g scale^2 / cap_g) u - 1 <= 0 on a vector of length `width`."""
    n = problem.num_vars
    width = n if width is None else width
    terms = []
    for g in blocks:
        Q = np.zeros((width, width))
        o, size = problem.offsets[g], problem.sizes[g]
        Q[o:o + size, o:o + size] = problem.blocks[g] * scale ** 2 / problem.caps[g]
        terms.append((Q, np.zeros(width), 1.0))
    return terms


def _program(problem: QcqpProblem, scaling: _Scaling, capped: Sequence[int]) -> _Program:
    return _Program(P=problem.objective_matrix(), q=np.zeros(problem.num_vars), G=scaling.G,
                    h=scaling.h, quad=_cap_terms(problem, capped, scaling.scale))


def phase_one_lp(G: np.ndarray, h: np.ndarray) -> Tuple[float, Optional[np.ndarray]]:
    """
    Minimize t subject to G x - h <= t and t >= -1 (rows of unit norm).

    Returns:
        (t*, x*) with x* None when the LP fails
    """
    m, n = G.shape
    if m == 0:
        return -1.0, np.zeros(n)
    rows = [(np.concatenate([G[i], [-1.0]]), '<=', float(h[i])) for i in range(m)]
    objective = np.zeros(n + 1)
    objective[-1] = -1.0
    lower = np.concatenate([np.full(n, -np.inf), [-1.0]])
    upper = np.full(n + 1, np.inf)
    model = MilpModel.build(objective, rows, lower, upper, np.zeros(n + 1, dtype=bool))
    result = solve_lp(model)
    if result.status != 'optimal':
        return float('inf'), None
    return float(result.x[-1]), result.x[:-1]


def _strict_start(scaling: _Scaling, u0: Optional[np.ndarray],
                  tol: float) -> Tuple[Optional[np.ndarray], Dict[str, Any]]:
    G, h = scaling.G, scaling.h
    if u0 is not None and (G.shape[0] == 0 or np.all(G @ u0 - h < 0)):
        return u0, {'start': 'provided'}
    t_star, u_lp = phase_one_lp(G, h)
    info = {'start': 'phase-1', 'phase1_value': t_star}
    if u_lp is None or t_star > -tol:
        return None, info
    return u_lp, info


def _cap_excess_start(problem: QcqpProblem, scaling: _Scaling, u: np.ndarray, anchor: np.ndarray,
                      options: QcqpOptions) -> Tuple[Optional[np.ndarray], float, str]:
    """
    Minimize s subject to the linear rows and every relative cap excess <= s, s >= -1.

    The run starts halfway between the uncapped optimum u and the strictly
    feasible anchor, and ends early once every cap holds with a relative
    margin of CAP_MARGIN.

    Returns:
        (point meeting every cap strictly or None, last s, interior-point status)
    """
    n = problem.num_vars
    capped = problem.capped
    G = np.vstack([np.hstack([scaling.G, np.zeros((scaling.G.shape[0], 1))]),
                   np.concatenate([np.zeros(n), [-1.0]])[None, :]])
    h = np.concatenate([scaling.h, [1.0]])
    quad = []
    for Q, _, _ in _cap_terms(problem, capped, scaling.scale, n + 1):
        a = np.zeros(n + 1)
        a[-1] = -1.0
        quad.append((Q, a, 1.0))
    objective = np.zeros(n + 1)
    objective[-1] = 1.0
    middle = 0.5 * (u + anchor)
    excess = max(float(middle @ Q[:n, :n] @ middle) - 1.0 for Q, _, _ in quad)
    start = np.concatenate([middle, [max(excess, -1.0) + 1.0]])
    program = _Program(P=np.zeros((n + 1, n + 1)), q=objective, G=G, h=h, quad=quad)
    status, point, _, _, _ = _interior_point(program, start, options.tol, options.max_iter,
                                             stop=lambda v: v[-1] <= -CAP_MARGIN)
    s_last = float(point[-1])
    if s_last < -options.tol:
        return point[:n], s_last, status
    return None, s_last, status


def _reweighted_start(problem: QcqpProblem, scaling: _Scaling, anchor: np.ndarray,
                      options: QcqpOptions) -> Optional[np.ndarray]:
    """
    Point meeting every cap strictly, found by reweighting the block powers.

    Each round minimizes sum_g w_g x_g^T P_g x_g over the linear rows and
    raises w_g by the factor its block exceeds (1 - CAP_MARGIN) cap_g. Gives
    up once the worst ratio has not improved for REWEIGHT_PATIENCE rounds.
    """
    capped = problem.capped
    weights = np.ones(len(problem.blocks))
    point = anchor
    best, stale = float('inf'), 0
    for round_ in range(REWEIGHT_ROUNDS):
        weighted = QcqpProblem(blocks=tuple(w * P for w, P in zip(weights, problem.blocks)),
                               G=problem.G, h=problem.h)
        _, point, _, _, _ = _interior_point(_program(weighted, scaling, []), point,
                                            options.tol, options.max_iter)
        ratios = problem.block_values(scaling.scale * point)[capped] / np.asarray(problem.caps)[capped]
        if np.all(ratios < 1.0):
            logger.debug("reweighting met the caps after %d rounds", round_ + 1)
            return point
        worst = float(ratios.max())
        if worst < best * (1.0 - 1e-3):
            best, stale = worst, 0
        else:
            stale += 1
            if stale >= REWEIGHT_PATIENCE:
                logger.debug("reweighting stalled at cap ratio %.3e", worst)
                return None
        weights[capped] *= np.maximum(1.0, ratios / (1.0 - CAP_MARGIN))
        weights /= weights.max()
    return None


def _package(problem: QcqpProblem, scaling: _Scaling, status: str, u: np.ndarray, lam: np.ndarray,
             capped: Sequence[int], residuals: Dict[str, float], iterations: int,
             diagnostics: Dict[str, Any]) -> QcqpSolution:
    m = scaling.G.shape[0]
    duals = np.zeros(problem.G.shape[0])
    duals[scaling.keep] = scaling.scale * lam[:m] / scaling.norms[scaling.keep]
    cap_duals = np.zeros(len(problem.blocks))
    for i, g in enumerate(capped):
        cap_duals[g] = lam[m + i] * scaling.scale ** 2 / problem.caps[g]
    x = scaling.scale * u
    return QcqpSolution(
        status=status, x=x, objective=problem.objective(x), duals=duals, cap_duals=cap_duals,
        residuals=residuals, iterations=iterations, diagnostics=diagnostics,
    )


def solve_qcqp(problem: QcqpProblem, options: Optional[QcqpOptions] = None,
               x0: Optional[np.ndarray] = None) -> QcqpSolution:
    """
    Solve a block-diagonal QCQP to KKT residuals below options.tol.

    Args:
        problem: QCQP instance
        options: tolerance and iteration limit
        x0: optional strictly feasible start for the linear rows; the phase-1
            LP is used when absent or not strictly feasible

    Returns:
        QcqpSolution with status 'optimal', 'infeasible' or 'max-iterations'.
        Infeasible solutions carry 'phase1_value' or 'uncapped_power' in
        their diagnostics; cap infeasibility is only reported from a
        converged cap phase. A 'max-iterations' solution has x None when no
        point meeting the caps was found.
    """
    options = options or QcqpOptions()
    scaling = _scaling(problem)
    dropped = np.flatnonzero(~scaling.keep)
    if dropped.size and np.any(problem.h[dropped] <= 0):
        return QcqpSolution('infeasible', None, float('inf'),
                            diagnostics={'start': 'none', 'zero_rows': dropped.tolist()})

    u0 = None if x0 is None else np.asarray(x0, dtype=float) / scaling.scale
    start, diagnostics = _strict_start(scaling, u0, options.tol)
    if start is None:
        logger.debug("linear rows admit no strictly feasible point (phase-1 %.3e)",
                     diagnostics.get('phase1_value', float('nan')))
        return QcqpSolution('infeasible', None, float('inf'), diagnostics=diagnostics)

    status, u, lam, residuals, iters = _interior_point(
        _program(problem, scaling, []), start, options.tol, options.max_iter,
    )
    capped = problem.capped
    powers = problem.block_values(scaling.scale * u)
    diagnostics['uncapped_power'] = powers.tolist()
    violated = [g for g in capped if powers[g] > problem.caps[g] * (1.0 + 1e-12)]
    if not violated:
        if status != 'optimal':
            logger.warning("QCQP stopped after %d iterations with residuals %s", iters, residuals)
        return _package(problem, scaling, status, u, lam, [], residuals, iters, diagnostics)

    interior, s_last, phase_status = _cap_excess_start(problem, scaling, u, start, options)
    diagnostics['cap_excess'] = s_last
    diagnostics['cap_phase_status'] = phase_status
    if interior is None and phase_status == 'optimal':
        logger.debug("caps cannot be met: smallest relative excess %.3e", s_last)
        return QcqpSolution('infeasible', None, float('inf'), diagnostics=diagnostics)
    if interior is None:
        interior = _reweighted_start(problem, scaling, start, options)
        diagnostics['cap_phase_status'] = 'reweighted'
    if interior is None:
        logger.warning("cap phase stopped (%s) at relative excess %.3e without a certificate",
                       phase_status, s_last)
        return QcqpSolution('max-iterations', None, float('inf'), diagnostics=diagnostics)

    status, u, lam, residuals, more = _interior_point(
        _program(problem, scaling, capped), interior, options.tol, options.max_iter,
    )
    if status != 'optimal':
        logger.warning("capped QCQP stopped after %d iterations with residuals %s", more, residuals)
    return _package(problem, scaling, status, u, lam, capped, residuals, iters + more, diagnostics)


def kkt_residuals(problem: QcqpProblem, x: np.ndarray, duals: np.ndarray,
                  cap_duals: Optional[np.ndarray] = None) -> Dict[str, float]:
    """
    KKT residuals of (x, duals) in the solver's normalized coordinates.

    Duals are given for the problem as stated. Returns a dict with
    'stationarity', 'primal', 'dual' and 'complementarity'.
    """
    scaling = _scaling(problem)
    capped = problem.capped
    lam = [np.asarray(duals, dtype=float)[scaling.keep] * scaling.norms[scaling.keep] / scaling.scale]
    if capped:
        cap_duals = np.zeros(len(problem.blocks)) if cap_duals is None else np.asarray(cap_duals, dtype=float)
        lam.append(np.array([cap_duals[g] * problem.caps[g] / scaling.scale ** 2 for g in capped]))
    program = _program(problem, scaling, capped)
    return _scaled_residuals(program, np.asarray(x, dtype=float) / scaling.scale, np.concatenate(lam))


def verify_kkt(problem: QcqpProblem, solution: QcqpSolution) -> Dict[str, float]:
    """Recompute the four KKT residuals of a solution from the problem data alone."""
    if solution.x is None or solution.duals is None:
        raise StructuralError(f"solution with status {solution.status} has no primal-dual point")
    return kkt_residuals(problem, solution.x, solution.duals, solution.cap_duals)
