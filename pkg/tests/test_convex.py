"""
QCQP engine tests: analytic toy problems, caps, KKT verification and the
active-set cross-check.
"""

import numpy as np
import pytest

from cihybrid import convex
from cihybrid.convex import (
    QcqpOptions,
    QcqpProblem,
    complex_gram_to_real,
    phase_one_lp,
    solve_qcqp,
    verify_kkt,
)
from cihybrid.digital import build_ci_problem
from cihybrid.errors import StructuralError
from cihybrid.oracles import dual_active_set_qp, random_ci_instance


# |Im b| <= (Re b - gamma) tan(pi/4) over x = [Re b, Im b]
TOY_ROWS = np.array([[-1.0, 1.0], [-1.0, -1.0]])


def toy(gamma: float, cap=None) -> QcqpProblem:
    return QcqpProblem(blocks=(np.eye(2),), G=TOY_ROWS, h=np.array([-gamma, -gamma]),
                       caps=None if cap is None else (cap,))


# ── Analytic toy ─────────────────────────────────────────────────────────────

@pytest.mark.parametrize('gamma, expected', [(1.0, 1.0), (2.0, 4.0), (1e-5, 1e-10)])
def test_toy_optimum_sits_at_region_vertex(gamma, expected):
    solution = solve_qcqp(toy(gamma))
    assert solution.status == 'optimal'
    assert solution.objective == pytest.approx(expected, rel=1e-6)
    assert solution.x == pytest.approx([gamma, 0.0], rel=1e-5, abs=1e-5 * gamma)


def test_toy_cap_below_minimum_power_is_infeasible():
    solution = solve_qcqp(toy(2.0, cap=1.0))
    assert solution.status == 'infeasible'
    assert solution.x is None
    assert solution.diagnostics['uncapped_power'] == pytest.approx([4.0], rel=1e-6)
    assert solution.diagnostics['cap_excess'] > 0


def test_toy_loose_cap_does_not_change_the_optimum():
    solution = solve_qcqp(toy(2.0, cap=10.0))
    assert solution.status == 'optimal'
    assert solution.objective == pytest.approx(4.0, rel=1e-6)
    assert solution.cap_duals.tolist() == [0.0]


def test_binding_cap_between_two_blocks():
    # two scalar-real blocks sharing one row: x1 + x2 >= 1, x1^2 <= 0.01
    problem = QcqpProblem(blocks=(np.eye(1), np.eye(1)), G=np.array([[-1.0, -1.0]]), h=np.array([-1.0]),
                          caps=(0.01, 5.0))
    solution = solve_qcqp(problem)
    assert solution.status == 'optimal'
    assert solution.x == pytest.approx([0.1, 0.9], rel=1e-5)
    assert solution.cap_duals[0] > 0
    assert max(verify_kkt(problem, solution).values()) <= 1e-6


def test_thin_cap_region_is_still_found():
    # only a sliver of x1 + x2 >= 1 meets x1^2 <= 0.01 and x2^2 <= 0.82
    problem = QcqpProblem(blocks=(np.eye(1), np.eye(1)), G=np.array([[-1.0, -1.0]]), h=np.array([-1.0]),
                          caps=(0.01, 0.82))
    solution = solve_qcqp(problem)
    assert solution.status == 'optimal'
    assert solution.x == pytest.approx([0.1, 0.9], rel=1e-5)
    assert solution.diagnostics['cap_excess'] < 0


def test_stalled_cap_phase_falls_back_to_reweighting(monkeypatch):
    monkeypatch.setattr(convex, '_cap_excess_start', lambda *args: (None, 4.59, 'max-iterations'))
    problem = QcqpProblem(blocks=(np.eye(1), np.eye(1)), G=np.array([[-1.0, -1.0]]), h=np.array([-1.0]),
                          caps=(0.01, 5.0))
    solution = solve_qcqp(problem)
    assert solution.status == 'optimal'
    assert solution.diagnostics['cap_phase_status'] == 'reweighted'
    assert solution.x == pytest.approx([0.1, 0.9], rel=1e-5)


def test_stalled_cap_phase_is_not_reported_infeasible(monkeypatch):
    monkeypatch.setattr(convex, '_cap_excess_start', lambda *args: (None, 0.5, 'max-iterations'))
    problem = QcqpProblem(blocks=(np.eye(1), np.eye(1)), G=np.array([[-1.0, -1.0]]), h=np.array([-1.0]),
                          caps=(0.01, 0.01))
    solution = solve_qcqp(problem)
    assert solution.status == 'max-iterations'
    assert solution.x is None


def test_converged_cap_phase_certifies_infeasibility():
    problem = QcqpProblem(blocks=(np.eye(1), np.eye(1)), G=np.array([[-1.0, -1.0]]), h=np.array([-1.0]),
                          caps=(0.01, 0.01))
    solution = solve_qcqp(problem)
    assert solution.status == 'infeasible'
    assert solution.diagnostics['cap_phase_status'] == 'optimal'
    assert solution.diagnostics['cap_excess'] > 0


def test_reweighting_meets_caps_with_margin():
    problem = QcqpProblem(blocks=(np.eye(1), 2.0 * np.eye(1)), G=np.array([[-1.0, -1.0]]), h=np.array([-1.0]),
                          caps=(0.04, 5.0))
    scaling = convex._scaling(problem)
    anchor = np.array([2.0, 2.0])
    point = convex._reweighted_start(problem, scaling, anchor, QcqpOptions())
    assert point is not None
    x = scaling.scale * point
    assert x[0] ** 2 < 0.04
    assert x.sum() > 1.0


def test_reweighting_gives_up_once_the_caps_stop_improving(monkeypatch):
    calls = []
    solve = convex._interior_point

    def counted(*args, **kwargs):
        calls.append(1)
        return solve(*args, **kwargs)

    monkeypatch.setattr(convex, '_interior_point', counted)
    problem = QcqpProblem(blocks=(np.eye(1), np.eye(1)), G=np.array([[-1.0, -1.0]]), h=np.array([-1.0]),
                          caps=(0.01, 0.01))
    scaling = convex._scaling(problem)
    assert convex._reweighted_start(problem, scaling, np.array([2.0, 2.0]), QcqpOptions()) is None
    assert len(calls) < convex.REWEIGHT_ROUNDS


def test_linear_rows_without_interior_are_infeasible():
    problem = QcqpProblem(blocks=(np.eye(1),), G=np.array([[1.0], [-1.0]]), h=np.array([-1.0, -1.0]))
    solution = solve_qcqp(problem)
    assert solution.status == 'infeasible'
    assert solution.diagnostics['phase1_value'] > 0


def test_phase_one_lp_value():
    t_star, point = phase_one_lp(TOY_ROWS / np.sqrt(2.0), np.array([-1.0, -1.0]) / np.sqrt(2.0))
    assert t_star == pytest.approx(-1.0)
    assert np.all(TOY_ROWS @ point < -1.0)


# ── KKT verification ─────────────────────────────────────────────────────────

def test_kkt_residuals_of_the_toy_optimum():
    problem = toy(1.0)
    solution = solve_qcqp(problem)
    report = verify_kkt(problem, solution)
    assert set(report) == {'stationarity', 'primal', 'dual', 'complementarity'}
    assert max(report.values()) <= 1e-7


def test_kkt_detects_a_perturbed_point():
    problem = toy(1.0)
    solution = solve_qcqp(problem)
    solution.x = solution.x + np.array([1e-2, 0.0])
    assert verify_kkt(problem, solution)['stationarity'] > 1e-4


def test_kkt_detects_a_feasible_non_optimal_point():
    problem = toy(1.0)
    solution = solve_qcqp(problem)
    solution.x = np.array([3.0, 0.5])
    report = verify_kkt(problem, solution)
    assert report['primal'] == 0.0
    assert report['complementarity'] > 1e-4


def test_kkt_needs_a_point():
    solution = solve_qcqp(toy(2.0, cap=1.0))
    with pytest.raises(StructuralError):
        verify_kkt(toy(2.0, cap=1.0), solution)


def test_solver_is_deterministic():
    problem = toy(1.5)
    first, second = solve_qcqp(problem), solve_qcqp(problem)
    assert np.array_equal(first.x, second.x)
    assert first.iterations == second.iterations


def test_iteration_limit_is_reported():
    solution = solve_qcqp(toy(1.0), QcqpOptions(max_iter=1))
    assert solution.status == 'max-iterations'
    assert solution.x is not None
    assert solution.residuals


# ── Problem validation ───────────────────────────────────────────────────────

def test_problem_rejects_indefinite_blocks():
    with pytest.raises(StructuralError):
        QcqpProblem(blocks=(np.diag([1.0, -1.0]),), G=np.zeros((0, 2)), h=np.zeros(0))


def test_problem_rejects_shape_mismatch():
    with pytest.raises(StructuralError):
        QcqpProblem(blocks=(np.eye(2),), G=np.zeros((1, 3)), h=np.zeros(1))


def test_complex_gram_expansion_preserves_power(rng):
    a = rng.standard_normal((4, 2)) + 1j * rng.standard_normal((4, 2))
    b = rng.standard_normal(2) + 1j * rng.standard_normal(2)
    x = np.concatenate([b.real, b.imag])
    assert x @ complex_gram_to_real(a) @ x == pytest.approx(np.linalg.norm(a @ b) ** 2)


# ── Cross-method oracle ──────────────────────────────────────────────────────

def test_interior_point_matches_active_set_enumeration():
    rng = np.random.default_rng(99)
    for _ in range(8):
        analog, channels, symbols, margins = random_ci_instance(rng, 2, [1, 2], [2, 3])
        problem = build_ci_problem(analog, channels, symbols, margins, 4)
        solution = solve_qcqp(problem)
        expected, _ = dual_active_set_qp(problem.objective_matrix(), problem.G, problem.h)
        assert solution.status == 'optimal'
        assert solution.objective == pytest.approx(expected, rel=1e-4)
        assert max(verify_kkt(problem, solution).values()) <= 1e-7


def test_optimum_is_below_sampled_feasible_points():
    rng = np.random.default_rng(41)
    for _ in range(10):
        analog, channels, symbols, margins = random_ci_instance(rng, 2, [2, 2], [3, 2])
        problem = build_ci_problem(analog, channels, symbols, margins, 4)
        solution = solve_qcqp(problem)
        radius = np.linalg.norm(solution.x)
        feasible = []
        for _ in range(50000):
            candidate = solution.x + radius * rng.uniform(0.0, 2.0) * rng.standard_normal(problem.num_vars)
            if np.all(problem.G @ candidate <= problem.h):
                feasible.append(candidate)
                if len(feasible) == 100:
                    break
        assert len(feasible) == 100
        lowest = min(problem.objective(x) for x in feasible)
        assert solution.objective <= lowest * (1 + 1e-9)


@pytest.mark.slow
def test_interior_point_matches_active_set_enumeration_fifty_instances():
    rng = np.random.default_rng(7)
    for _ in range(50):
        num_users = int(rng.integers(1, 4))
        analog, channels, symbols, margins = random_ci_instance(rng, num_users, [2, 1], [3, 2])
        problem = build_ci_problem(analog, channels, symbols, margins, 4)
        solution = solve_qcqp(problem)
        expected, _ = dual_active_set_qp(problem.objective_matrix(), problem.G, problem.h)
        assert solution.objective == pytest.approx(expected, rel=1e-4)
