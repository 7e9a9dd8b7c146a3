#!/usr/bin/env python3
"""
Oracles and Self-Test
Independent reference solvers and the suites run by `cihybrid selftest`.

- brute_force_binary: enumerate every 0/1 point of a pure-binary model
- brute_force_assignment: enumerate every row-to-user choice of an assignment
- dual_active_set_qp: exact QP minimizer by enumerating active sets of the
  dual, for small strictly convex problems
"""

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from cihybrid.assignment import (
    GainMatrixCodebook,
    GainMatrixContinuous,
    assignment_objective,
    heuristic_assignment,
    solve_code_assignment,
    solve_rf_assignment,
)
from cihybrid.channel import path_loss_db
from cihybrid.convex import QcqpProblem, solve_qcqp, verify_kkt
from cihybrid.digital import build_ci_problem, solve_digital_ci
from cihybrid.errors import CiHybridError
from cihybrid.experiment import backhaul_overhead
from cihybrid.milp import MilpModel, MilpOptions, solve_binary_milp
from cihybrid.model import (
    AnalogPrecoderSet,
    ChannelSet,
    SymbolVector,
    build_chain_map,
    detect_psk_array,
    received_nominal,
)
from cihybrid.utils.config_loader import full_scale_config
from cihybrid.utils.rng import generator


logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Reference solvers
# ---------------------------------------------------------------------------

def brute_force_binary(model: MilpModel, tol: float = 1e-9) -> Tuple[float, Optional[np.ndarray]]:
    """Best objective over all 0/1 points; (-inf, None) when none is feasible."""
    if not np.all(model.binary):
        raise ValueError("brute force handles pure-binary models only")
    best, best_x = float('-inf'), None
    for bits in itertools.product((0.0, 1.0), repeat=model.num_vars):
        x = np.array(bits)
        if model.max_violation(x) <= tol:
            value = model.objective_value(x)
            if value > best:
                best, best_x = value, x
    return best, best_x


def brute_force_assignment(q: np.ndarray, epsilon: float, owner: Optional[Sequence[int]] = None,
                           caps: Optional[Sequence[int]] = None,
                           one_row_per_bs_user: bool = False) -> Tuple[float, Optional[np.ndarray]]:
    """Enumerate each row's choice among the users or none."""
    num_rows, num_users = q.shape
    owner = np.zeros(num_rows, dtype=int) if owner is None else np.asarray(owner)
    best, best_alpha = float('-inf'), None
    for choice in itertools.product(range(-1, num_users), repeat=num_rows):
        alpha = np.zeros((num_rows, num_users), dtype=int)
        for r, k in enumerate(choice):
            if k >= 0:
                alpha[r, k] = 1
        if np.any(alpha.sum(axis=0) < 1):
            continue
        if caps is not None and any(alpha[owner == g].sum() > cap for g, cap in enumerate(caps)):
            continue
        if one_row_per_bs_user and any(np.any(alpha[owner == g].sum(axis=0) > 1) for g in np.unique(owner)):
            continue
        value, _ = assignment_objective(alpha, q, epsilon)
        if value > best:
            best, best_alpha = value, alpha
    return best, best_alpha


def dual_active_set_qp(P: np.ndarray, G: np.ndarray, h: np.ndarray,
                       tol: float = 1e-9) -> Tuple[float, Optional[np.ndarray]]:
    """
    Minimize x^T P x subject to G x <= h for positive definite P.

    For every subset S of rows, the candidate x = -P^-1 G_S^T lambda / 2 with
    lambda = -2 (G_S P^-1 G_S^T)^-1 h_S is kept when lambda >= 0 and x is
    feasible; the smallest such objective is the optimum.
    """
    P_inv = np.linalg.inv(P)
    m = G.shape[0]
    scale = max(1.0, float(np.max(np.abs(h), initial=0.0)))
    best, best_x = float('inf'), None
    for size in range(m + 1):
        for subset in itertools.combinations(range(m), size):
            rows = list(subset)
            if rows:
                gs = G[rows]
                gram = gs @ P_inv @ gs.T
                if np.linalg.matrix_rank(gram) < len(rows):
                    continue
                lam = -2.0 * np.linalg.solve(gram, h[rows])
                if np.any(lam < -tol * scale):
                    continue
                x = -0.5 * P_inv @ gs.T @ lam
            else:
                x = np.zeros(P.shape[0])
            if np.all(G @ x - h <= tol * scale):
                value = float(x @ P @ x)
                if value < best:
                    best, best_x = value, x
    return best, best_x


# ---------------------------------------------------------------------------
# Random instances
# ---------------------------------------------------------------------------

def random_binary_model(rng: np.random.Generator, num_vars: int, num_rows: int) -> MilpModel:
    """Random maximization over binaries with mixed-sign knapsack rows."""
    objective = rng.integers(-3, 10, size=num_vars).astype(float)
    rows = []
    for _ in range(num_rows):
        coeffs = rng.integers(-2, 6, size=num_vars).astype(float)
        sense = '<=' if rng.random() < 0.8 else '>='
        rhs = float(np.floor(coeffs.clip(min=0).sum() * rng.uniform(0.2, 0.7))) if sense == '<=' else 1.0
        rows.append((coeffs, sense, rhs))
    return MilpModel.build(objective, rows, np.zeros(num_vars), np.ones(num_vars),
                           np.ones(num_vars, dtype=bool))


def random_ci_instance(rng: np.random.Generator, num_users: int, chains: Sequence[int],
                       antennas: Sequence[int], modulation_order: int = 4):
    """
    Small CI problem with random unit-modulus analog columns.

    Returns:
        (analog, channels, symbols, margins)
    """
    blocks, matrices = [], []
    for n_ant, r in zip(antennas, chains):
        fading = rng.standard_normal((num_users, n_ant)) + 1j * rng.standard_normal((num_users, n_ant))
        blocks.append(fading / math.sqrt(2))
        a = 1.0 / math.sqrt(n_ant)
        matrices.append(a * np.exp(2j * np.pi * rng.random((n_ant, r))))
    analog = AnalogPrecoderSet(
        matrices=tuple(matrices),
        users=tuple(np.zeros(r, dtype=int) for r in chains),
        sources=tuple(np.arange(r) for r in chains),
        magnitudes=tuple(1.0 / math.sqrt(n) for n in antennas),
    )
    channels = ChannelSet(per_bs=tuple(blocks))
    symbols = SymbolVector.random(num_users, modulation_order, rng)
    margins = rng.uniform(0.5, 1.5, size=num_users)
    return analog, channels, symbols, margins


# ---------------------------------------------------------------------------
# Suites
# ---------------------------------------------------------------------------

@dataclass
class SuiteResult:
    name: str
    checked: int = 0
    failures: List[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures


def _suite(name: str, body: Callable[[SuiteResult], None]) -> SuiteResult:
    result = SuiteResult(name)
    try:
        body(result)
    except CiHybridError as exc:
        result.failures.append(f"raised {type(exc).__name__}: {exc}")
    return result


def check_milp_oracle(rng: np.random.Generator, count: int) -> SuiteResult:
    def body(result: SuiteResult) -> None:
        for i in range(count):
            model = random_binary_model(rng, int(rng.integers(3, 13)), int(rng.integers(1, 5)))
            expected, _ = brute_force_binary(model)
            solution = solve_binary_milp(model, MilpOptions())
            got = solution.objective if solution.x is not None else float('-inf')
            result.checked += 1
            if not (expected == got or abs(expected - got) <= 1e-9):
                result.failures.append(f"model {i}: solver {got} vs enumeration {expected}")
    return _suite('milp-oracle', body)


def check_assignment_oracle(rng: np.random.Generator, count: int) -> SuiteResult:
    def body(result: SuiteResult) -> None:
        q = np.array([[3.0, 1.0], [1.0, 2.0], [2.0, 2.0]])
        gains = GainMatrixContinuous(q=q, chain_map=build_chain_map([1, 1, 1]))
        exact = solve_rf_assignment(gains, 0.5)
        result.checked += 1
        if abs(exact.objective - 8.5) > 1e-9:
            result.failures.append(f"reference instance: objective {exact.objective}, expected 8.5")
        for i in range(count):
            num_users = int(rng.integers(1, 4))
            num_rows = int(rng.integers(num_users, max(num_users, 12 // num_users) + 1))
            q = rng.uniform(0.0, 1.0, size=(num_rows, num_users))
            epsilon = float(rng.uniform(0.0, 2.0))
            if rng.random() < 0.5:
                gains = GainMatrixContinuous(q=q, chain_map=build_chain_map([1] * num_rows))
                expected, _ = brute_force_assignment(q, epsilon)
                got = solve_rf_assignment(gains, epsilon)
                caps = None
            else:
                owner = np.sort(rng.integers(0, 2, size=num_rows))
                caps = [max(1, int(np.sum(owner == g)) - 1) for g in range(2)]
                if sum(min(c, int(np.sum(owner == g))) for g, c in enumerate(caps)) < num_users:
                    continue
                gains = GainMatrixCodebook(q=q, owner=owner)
                expected, _ = brute_force_assignment(q, epsilon, owner, caps)
                got = solve_code_assignment(gains, epsilon, caps)
            result.checked += 1
            if abs(got.objective - expected) > 1e-9 * max(1.0, abs(expected)):
                result.failures.append(f"instance {i}: solver {got.objective} vs enumeration {expected}")
            heuristic = heuristic_assignment(gains, epsilon, caps)
            if heuristic.objective > got.objective + 1e-9 * max(1.0, abs(expected)):
                result.failures.append(f"instance {i}: heuristic beats the exact solver")
    return _suite('assignment-oracle', body)


def check_convex_toy() -> SuiteResult:
    def body(result: SuiteResult) -> None:
        rows = np.array([[-1.0, 1.0], [-1.0, -1.0]])
        for gamma, cap, expected in ((1.0, None, 1.0), (2.0, None, 4.0), (2.0, 1.0, None)):
            problem = QcqpProblem(blocks=(np.eye(2),), G=rows, h=np.array([-gamma, -gamma]),
                                  caps=None if cap is None else (cap,))
            solution = solve_qcqp(problem)
            result.checked += 1
            if expected is None:
                if solution.status != 'infeasible':
                    result.failures.append(f"gamma {gamma}, cap {cap}: expected infeasible")
            elif solution.status != 'optimal' or abs(solution.objective - expected) > 1e-6 * expected:
                result.failures.append(f"gamma {gamma}: objective {solution.objective}, expected {expected}")
    return _suite('convex-toy', body)


def check_convex_oracle(rng: np.random.Generator, count: int) -> SuiteResult:
    def body(result: SuiteResult) -> None:
        for i in range(count):
            num_users = int(rng.integers(1, 5))
            chains = [int(rng.integers(1, 3)) for _ in range(2)]
            while sum(chains) < num_users:
                chains[int(rng.integers(0, 2))] += 1
            antennas = [c + int(rng.integers(1, 3)) for c in chains]
            analog, channels, symbols, margins = random_ci_instance(rng, num_users, chains, antennas)
            problem = build_ci_problem(analog, channels, symbols, margins, 4)
            solution = solve_qcqp(problem)
            expected, _ = dual_active_set_qp(problem.objective_matrix(), problem.G, problem.h)
            result.checked += 1
            if solution.status != 'optimal':
                result.failures.append(f"instance {i}: status {solution.status}")
                continue
            if abs(solution.objective - expected) > 1e-4 * max(expected, 1e-12):
                result.failures.append(f"instance {i}: interior point {solution.objective} vs active set {expected}")
            worst = max(verify_kkt(problem, solution).values())
            if worst > 1e-7:
                result.failures.append(f"instance {i}: KKT residual {worst:.2e}")
    return _suite('convex-oracle', body)


def check_noiseless_ci(rng: np.random.Generator, count: int) -> SuiteResult:
    def body(result: SuiteResult) -> None:
        for i in range(count):
            analog, channels, symbols, margins = random_ci_instance(rng, 3, [2, 2], [4, 3])
            solution = solve_digital_ci(analog, channels, symbols, margins, 4)
            detected = detect_psk_array(received_nominal(channels, analog, solution.digital), 4)
            result.checked += 1
            if np.any(detected != symbols.indices):
                result.failures.append(f"instance {i}: noiseless detection error")
    return _suite('noiseless-ci', body)


def check_closed_forms() -> SuiteResult:
    def body(result: SuiteResult) -> None:
        for cls, distance, expected in (('macro', 1.0, 128.1), ('macro', 0.1, 90.5), ('pico', 0.1, 104.0)):
            result.checked += 1
            if abs(path_loss_db(cls, distance) - expected) > 1e-9:
                result.failures.append(f"path loss {cls} at {distance} km")
        config = full_scale_config()
        for delta, ci_total, zf_total in ((1, 3136, 7360), (100, 9472, 26368)):
            result.checked += 1
            ci = backhaul_overhead(config, delta, 'ci').total
            zf = backhaul_overhead(config, delta, 'zf').total
            if (ci, zf) != (ci_total, zf_total):
                result.failures.append(f"overhead at delta {delta}: ({ci}, {zf})")
    return _suite('closed-forms', body)


def run_selftest(seed: int = 0, quick: bool = False) -> List[SuiteResult]:
    """Run every oracle suite; quick mode trims instance counts."""
    rng = generator(seed)
    milp_count, assignment_count, convex_count = (20, 20, 5) if quick else (200, 200, 50)
    return [
        check_closed_forms(),
        check_milp_oracle(rng, milp_count),
        check_assignment_oracle(rng, assignment_count),
        check_convex_toy(),
        check_convex_oracle(rng, convex_count),
        check_noiseless_ci(rng, 5 if quick else 20),
    ]
