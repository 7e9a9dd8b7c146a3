#!/usr/bin/env python3
"""
RF-Chain and Code Assignment
Fairness-weighted assignment MILPs for continuous and codebook analog precoding.

Both problems share one shape: rows (RF chains or codes) are assigned to at
most one user, every user gets at least one row, and the objective is the
total assigned gain plus epsilon times the worst per-user gain tau. The
codebook problem adds a per-BS cap on selected codes. The continuous problem
gives a user at most one chain per BS, since a second phase-conjugate chain
toward the same user repeats the first column.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from cihybrid.analog import Codebook
from cihybrid.errors import AssignmentInfeasibleError, StructuralError
from cihybrid.milp import MilpModel, MilpOptions, solve_binary_milp
from cihybrid.model import ChannelSet, RfChainMap


logger = logging.getLogger(__name__)

IMPROVEMENT_TOL = 1e-12
MAX_LOCAL_SEARCH_ROUNDS = 200


@dataclass(frozen=True)
class GainMatrixContinuous:
    """q[r, k] = ||h_{g_r,k}||^2 for every RF chain r and user k."""

    q: np.ndarray
    chain_map: RfChainMap

    @property
    def owner(self) -> np.ndarray:
        return self.chain_map.bs_of

    @property
    def caps(self) -> None:
        return None


@dataclass(frozen=True)
class GainMatrixCodebook:
    """q[c, k] = |c_c^T h_{g_c,k}|^2 for every code c and user k."""

    q: np.ndarray
    owner: np.ndarray


@dataclass
class AssignmentOptions:
    """Knobs for the exact solver."""

    milp: MilpOptions = field(default_factory=lambda: MilpOptions(time_limit=10.0, node_limit=2000))
    symmetry_breaking: bool = True
    warm_start: bool = True


@dataclass
class AssignmentResult:
    """
    Assignment of rows (RF chains or codes) to users.

    Attributes:
        alpha: 0/1 matrix, rows x users
        tau: smallest per-user assigned gain (original scale)
        objective: total assigned gain + epsilon * tau (original scale)
        mode: 'continuous' or 'codebook'
        owner: owning BS of every row
        status: MILP status, or 'heuristic'
        gap: optimality gap reported by the MILP (original scale)
        method: 'exact' or 'heuristic'
        nodes: branch-and-bound nodes processed
    """

    alpha: np.ndarray
    tau: float
    objective: float
    mode: str
    owner: np.ndarray
    status: str = 'optimal'
    gap: float = 0.0
    method: str = 'exact'
    nodes: int = 0

    def user_of(self, row: int) -> Optional[int]:
        assigned = np.flatnonzero(self.alpha[row])
        return int(assigned[0]) if assigned.size else None

    def violations(self, gains: np.ndarray, caps: Optional[Sequence[int]] = None) -> List[str]:
        """Structural constraints broken by alpha (empty when all hold)."""
        problems = []
        alpha = self.alpha
        if not np.all((alpha == 0) | (alpha == 1)):
            problems.append("alpha is not binary")
        if np.any(alpha.sum(axis=1) > 1):
            problems.append("a row serves more than one user")
        if np.any(alpha.sum(axis=0) < 1):
            problems.append("a user has no row")
        per_user = (alpha * gains).sum(axis=0)
        if alpha.shape[1] and self.tau > per_user.min() + 1e-9 * max(1.0, abs(self.tau)):
            problems.append("tau exceeds the smallest per-user gain")
        if caps is not None:
            for g, cap in enumerate(caps):
                if alpha[self.owner == g].sum() > cap:
                    problems.append(f"BS {g} exceeds its cap of {cap}")
        if self.mode == 'continuous' and _repeated_users(alpha, self.owner):
            problems.append("a user holds two chains of one BS")
        return problems


# ---------------------------------------------------------------------------
# Gain matrices
# ---------------------------------------------------------------------------

def gain_matrix_continuous(channels: ChannelSet, chain_map: RfChainMap) -> GainMatrixContinuous:
    norms = [np.sum(np.abs(block) ** 2, axis=1) for block in channels.per_bs]
    q = np.array([norms[g] for g, _ in chain_map.owner], dtype=float).reshape(chain_map.total,
                                                                            channels.num_users)
    return GainMatrixContinuous(q=q, chain_map=chain_map)


def gain_matrix_codebook(channels: ChannelSet, codebook: Codebook) -> GainMatrixCodebook:
    """
    Plain-transpose code gains |c^T h|^2.

    Raises:
        StructuralError: code length differs from the owning BS antenna count
    """
    if codebook.num_bs != channels.num_bs:
        raise StructuralError(f"codebook covers {codebook.num_bs} BSs, channels {channels.num_bs}")
    rows = []
    for g, (matrix, block) in enumerate(zip(codebook.matrices, channels.per_bs)):
        if matrix.shape[0] != block.shape[1]:
            raise StructuralError(
                f"BS {g}: codes have length {matrix.shape[0]} but the BS has {block.shape[1]} antennas"
            )
        rows.append(np.abs(matrix.T @ block.T) ** 2)
    q = np.vstack(rows) if rows else np.zeros((0, channels.num_users))
    return GainMatrixCodebook(q=q, owner=codebook.owner)


# ---------------------------------------------------------------------------
# Objective helpers
# ---------------------------------------------------------------------------

def assignment_objective(alpha: np.ndarray, q: np.ndarray, epsilon: float) -> Tuple[float, float]:
    """Return (objective, tau) of alpha with tau at its best value."""
    per_user = (alpha * q).sum(axis=0)
    tau = float(per_user.min()) if per_user.size else 0.0
    return float((alpha * q).sum()) + epsilon * tau, tau


def _check_capacity(num_rows: int, num_users: int, owner: np.ndarray, caps: Optional[Sequence[int]]) -> None:
    if caps is None:
        if num_rows < num_users:
            raise AssignmentInfeasibleError(f"{num_rows} RF chains cannot serve {num_users} users")
        return
    usable = sum(min(int(cap), int(np.sum(owner == g))) for g, cap in enumerate(caps))
    if usable < num_users:
        raise AssignmentInfeasibleError(
            f"codes usable under the per-BS caps ({usable}) are fewer than the users ({num_users})"
        )


def _repeated_users(alpha: np.ndarray, owner: np.ndarray) -> bool:
    """True when some BS assigns two of its rows to one user."""
    return any(np.any(alpha[owner == g].sum(axis=0) > 1) for g in np.unique(owner))


def _symmetric_pairs(q: np.ndarray, owner: np.ndarray) -> List[Tuple[int, int]]:
    """Consecutive rows of one BS with identical gains."""
    return [
        (r, r + 1) for r in range(q.shape[0] - 1)
        if owner[r] == owner[r + 1] and np.array_equal(q[r], q[r + 1])
    ]


def build_assignment_model(q: np.ndarray, epsilon: float, owner: np.ndarray,
                           caps: Optional[Sequence[int]] = None,
                           symmetry_breaking: bool = True,
                           one_row_per_bs_user: bool = False) -> MilpModel:
    """
    Assignment MILP over variables alpha[r, k] (index r*K + k) and tau (last).

    Rows: one user per row, at least one row per user, tau below every
    per-user gain, per-BS caps when given, at most one row of a BS per user
    when one_row_per_bs_user is set, and optional symmetry breaking between
    rows with identical gains.
    """
    num_rows, num_users = q.shape
    n = num_rows * num_users + 1
    tau = n - 1
    rows = []

    for r in range(num_rows):
        coeffs = np.zeros(n)
        coeffs[r * num_users:(r + 1) * num_users] = 1.0
        rows.append((coeffs, '<=', 1.0))
    for k in range(num_users):
        coeffs = np.zeros(n)
        coeffs[k:num_rows * num_users:num_users] = 1.0
        rows.append((coeffs, '>=', 1.0))
    for k in range(num_users):
        coeffs = np.zeros(n)
        coeffs[k:num_rows * num_users:num_users] = q[:, k]
        coeffs[tau] = -1.0
        rows.append((coeffs, '>=', 0.0))
    if caps is not None:
        for g, cap in enumerate(caps):
            coeffs = np.zeros(n)
            for r in np.flatnonzero(owner == g):
                coeffs[r * num_users:(r + 1) * num_users] = 1.0
            rows.append((coeffs, '<=', float(cap)))
    if one_row_per_bs_user:
        for g in np.unique(owner):
            members = np.flatnonzero(owner == g)
            for k in range(num_users):
                coeffs = np.zeros(n)
                coeffs[members * num_users + k] = 1.0
                rows.append((coeffs, '<=', 1.0))
    if symmetry_breaking:
        weights = np.arange(1, num_users + 1, dtype=float)
        for first, second in _symmetric_pairs(q, owner):
            coeffs = np.zeros(n)
            coeffs[first * num_users:(first + 1) * num_users] = weights
            coeffs[second * num_users:(second + 1) * num_users] = -weights
            rows.append((coeffs, '>=', 0.0))

    objective = np.concatenate([q.reshape(-1), [epsilon]])
    lower = np.zeros(n)
    upper = np.concatenate([np.ones(n - 1), [np.inf]])
    binary = np.concatenate([np.ones(n - 1, dtype=bool), [False]])
    names = [f"a_{r}_{k}" for r in range(num_rows) for k in range(num_users)] + ['tau']
    return MilpModel.build(objective, rows, lower, upper, binary, names)


def _solve_exact(q: np.ndarray, epsilon: float, owner: np.ndarray, caps: Optional[Sequence[int]],
                 mode: str, options: Optional[AssignmentOptions]) -> AssignmentResult:
    options = options or AssignmentOptions()
    if epsilon < 0:
        raise StructuralError(f"fairness weight must be nonnegative, got {epsilon}")
    num_rows, num_users = q.shape
    _check_capacity(num_rows, num_users, owner, caps)

    scale = float(q.max()) if q.size and q.max() > 0 else 1.0
    normalized = q / scale
    distinct = mode == 'continuous'
    model = build_assignment_model(normalized, epsilon, owner, caps, options.symmetry_breaking, distinct)

    incumbent = None
    if options.warm_start:
        seed = _heuristic_alpha(normalized, epsilon, owner, caps, distinct)
        if options.symmetry_breaking:
            seed = _order_symmetric_rows(seed, normalized, owner)
        _, seed_tau = assignment_objective(seed, normalized, epsilon)
        incumbent = np.concatenate([seed.reshape(-1).astype(float), [seed_tau]])

    solution = solve_binary_milp(model, options.milp, incumbent=incumbent)
    if solution.x is None:
        raise AssignmentInfeasibleError(f"assignment MILP returned status {solution.status}")
    alpha = np.round(solution.x[:-1]).astype(int).reshape(num_rows, num_users)
    objective, tau = assignment_objective(alpha, q, epsilon)
    logger.debug("%s assignment: objective %.6g after %d nodes (%s)",
                 mode, objective, solution.nodes, solution.status)
    return AssignmentResult(
        alpha=alpha, tau=tau, objective=objective, mode=mode, owner=np.asarray(owner),
        status=solution.status, gap=solution.gap * scale, method='exact', nodes=solution.nodes,
    )


def solve_rf_assignment(gains: GainMatrixContinuous, epsilon: float = 1.0,
                        options: Optional[AssignmentOptions] = None) -> AssignmentResult:
    """
    Exact RF-chain assignment for continuous analog precoding.

    Gains are normalized by their largest entry before solving; epsilon
    multiplies tau on that same scale, so the reported objective
    sum(alpha * q) + epsilon * tau is on the original scale.

    Raises:
        AssignmentInfeasibleError: fewer RF chains than users
    """
    return _solve_exact(gains.q, epsilon, gains.owner, None, 'continuous', options)


def solve_code_assignment(gains: GainMatrixCodebook, epsilon: float, per_bs_caps: Sequence[int],
                          options: Optional[AssignmentOptions] = None) -> AssignmentResult:
    """
    Exact code assignment with at most R_g codes selected at BS g.

    Raises:
        AssignmentInfeasibleError: the caps leave fewer usable codes than users
    """
    return _solve_exact(gains.q, epsilon, gains.owner, list(per_bs_caps), 'codebook', options)


# ---------------------------------------------------------------------------
# Heuristic
# ---------------------------------------------------------------------------

def _cap_room(alpha: np.ndarray, owner: np.ndarray, caps: Optional[Sequence[int]], g: int) -> bool:
    if caps is None:
        return True
    return alpha[owner == g].sum() < caps[g]


def _user_room(alpha: np.ndarray, owner: np.ndarray, distinct: bool, r: int, k: int) -> bool:
    return not distinct or not alpha[owner == owner[r], k].any()


def _heuristic_alpha(q: np.ndarray, epsilon: float, owner: np.ndarray,
                     caps: Optional[Sequence[int]], distinct: bool = False) -> np.ndarray:
    num_rows, num_users = q.shape
    alpha = np.zeros((num_rows, num_users), dtype=int)

    # one row per user, strongest pairs first
    pairs = sorted(
        ((r, k) for r in range(num_rows) for k in range(num_users)),
        key=lambda rk: (-q[rk[0], rk[1]], rk[0], rk[1]),
    )
    served = np.zeros(num_users, dtype=bool)
    for r, k in pairs:
        if served.all():
            break
        if served[k] or alpha[r].any() or not _cap_room(alpha, owner, caps, owner[r]):
            continue
        if not _user_room(alpha, owner, distinct, r, k):
            continue
        alpha[r, k] = 1
        served[k] = True

    # residual rows, best row first, each to the user with the largest gain in objective
    residual = sorted(
        (r for r in range(num_rows) if not alpha[r].any()),
        key=lambda r: (-q[r].max() if num_users else 0.0, r),
    )
    for r in residual:
        if not _cap_room(alpha, owner, caps, owner[r]):
            continue
        current, _ = assignment_objective(alpha, q, epsilon)
        best_k, best_value = -1, current
        for k in range(num_users):
            if not _user_room(alpha, owner, distinct, r, k):
                continue
            alpha[r, k] = 1
            value, _ = assignment_objective(alpha, q, epsilon)
            alpha[r, k] = 0
            if value > best_value + IMPROVEMENT_TOL:
                best_k, best_value = k, value
        if best_k >= 0:
            alpha[r, best_k] = 1

    return _local_search(alpha, q, epsilon, owner, caps, distinct)


def _feasible(alpha: np.ndarray, owner: np.ndarray, caps: Optional[Sequence[int]],
              distinct: bool = False) -> bool:
    if np.any(alpha.sum(axis=0) < 1) or np.any(alpha.sum(axis=1) > 1):
        return False
    if distinct and _repeated_users(alpha, owner):
        return False
    if caps is not None:
        return all(alpha[owner == g].sum() <= cap for g, cap in enumerate(caps))
    return True


def _local_search(alpha: np.ndarray, q: np.ndarray, epsilon: float, owner: np.ndarray,
                  caps: Optional[Sequence[int]], distinct: bool = False) -> np.ndarray:
    """First-improvement search over single-row moves and two-row swaps."""
    num_rows, num_users = alpha.shape
    current, _ = assignment_objective(alpha, q, epsilon)
    for _ in range(MAX_LOCAL_SEARCH_ROUNDS):
        improved = False
        for r in range(num_rows):
            for target in range(-1, num_users):
                candidate = alpha.copy()
                candidate[r] = 0
                if target >= 0:
                    candidate[r, target] = 1
                if np.array_equal(candidate, alpha) or not _feasible(candidate, owner, caps, distinct):
                    continue
                value, _ = assignment_objective(candidate, q, epsilon)
                if value > current + IMPROVEMENT_TOL:
                    alpha, current, improved = candidate, value, True
        for r in range(num_rows):
            for s in range(r + 1, num_rows):
                if np.array_equal(alpha[r], alpha[s]):
                    continue
                candidate = alpha.copy()
                candidate[[r, s]] = candidate[[s, r]]
                if not _feasible(candidate, owner, caps, distinct):
                    continue
                value, _ = assignment_objective(candidate, q, epsilon)
                if value > current + IMPROVEMENT_TOL:
                    alpha, current, improved = candidate, value, True
        if not improved:
            break
    return alpha


def _order_symmetric_rows(alpha: np.ndarray, q: np.ndarray, owner: np.ndarray) -> np.ndarray:
    """Permute identical-gain rows so the symmetry-breaking rows hold."""
    alpha = alpha.copy()
    pairs = _symmetric_pairs(q, owner)
    if not pairs:
        return alpha
    groups: List[List[int]] = []
    for first, second in pairs:
        if groups and groups[-1][-1] == first:
            groups[-1].append(second)
        else:
            groups.append([first, second])
    weights = np.arange(1, alpha.shape[1] + 1)
    for group in groups:
        block = alpha[group]
        order = np.argsort(-(block @ weights), kind='stable')
        alpha[group] = block[order]
    return alpha


def heuristic_assignment(gains, epsilon: float = 1.0,
                         caps: Optional[Sequence[int]] = None) -> AssignmentResult:
    """
    Greedy seeding, residual filling and local search.

    Args:
        gains: GainMatrixContinuous or GainMatrixCodebook
        epsilon: fairness weight on the normalized scale
        caps: per-BS code caps (codebook mode only)

    Returns:
        AssignmentResult with method 'heuristic'
    """
    q = gains.q
    owner = np.asarray(gains.owner)
    mode = 'continuous' if isinstance(gains, GainMatrixContinuous) else 'codebook'
    if mode == 'continuous':
        caps = None
    elif caps is None:
        raise StructuralError("codebook assignment needs per-BS caps")
    if epsilon < 0:
        raise StructuralError(f"fairness weight must be nonnegative, got {epsilon}")
    _check_capacity(q.shape[0], q.shape[1], owner, caps)

    scale = float(q.max()) if q.size and q.max() > 0 else 1.0
    alpha = _heuristic_alpha(q / scale, epsilon, owner, caps, mode == 'continuous')
    objective, tau = assignment_objective(alpha, q, epsilon)
    return AssignmentResult(
        alpha=alpha, tau=tau, objective=objective, mode=mode, owner=owner,
        status='heuristic', gap=float('nan'), method='heuristic',
    )
