"""
LP and binary branch-and-bound tests, checked against exhaustive enumeration.
"""

import numpy as np
import pytest

from cihybrid.errors import StructuralError
from cihybrid.milp import MilpModel, MilpOptions, solve_binary_milp, solve_lp
from cihybrid.oracles import brute_force_binary, random_binary_model
from cihybrid.utils.lp_format import format_lp


INF = np.inf


def knapsack() -> MilpModel:
    """maximize 5a + 4b + 3c s.t. 2a + 3b + c <= 4; LP bound 9 1/3, integer optimum 8."""
    return MilpModel.build([5, 4, 3], [([2, 3, 1], '<=', 4)], [0, 0, 0], [1, 1, 1], [True] * 3,
                           names=['a', 'b', 'c'])


# ── LP ───────────────────────────────────────────────────────────────────────

def test_lp_single_bound():
    model = MilpModel.build([1], [([1], '<=', 3)], [0], [INF], [False])
    result = solve_lp(model)
    assert result.status == 'optimal'
    assert result.objective == pytest.approx(3.0)
    assert result.x == pytest.approx([3.0])


def test_lp_box_and_row():
    model = MilpModel.build([1, 1], [([1, 1], '<=', 1)], [0, 0], [1, 1], [False, False])
    assert solve_lp(model).objective == pytest.approx(1.0)


def test_lp_infeasible():
    model = MilpModel.build([1], [([1], '>=', 2), ([1], '<=', 1)], [0], [INF], [False])
    assert solve_lp(model).status == 'infeasible'


def test_lp_unbounded():
    model = MilpModel.build([1], [([1], '>=', 0)], [0], [INF], [False])
    assert solve_lp(model).status == 'unbounded'


def test_lp_equality_and_free_lower_bound():
    model = MilpModel.build([1, 1], [([1, -1], '==', 0), ([1, 0], '<=', 2)], [-INF, -INF], [INF, INF],
                            [False, False])
    result = solve_lp(model)
    assert result.objective == pytest.approx(4.0)
    assert result.x == pytest.approx([2.0, 2.0])


def test_lp_negative_bounds():
    model = MilpModel.build([-1], [], [-3], [5], [False])
    result = solve_lp(model)
    assert result.objective == pytest.approx(3.0)
    assert result.x == pytest.approx([-3.0])


def test_lp_bound_overrides():
    model = knapsack()
    relaxed = solve_lp(model)
    assert relaxed.objective == pytest.approx(28.0 / 3.0)
    fixed = solve_lp(model, lower=np.array([0.0, 1.0, 0.0]), upper=np.array([1.0, 1.0, 1.0]))
    assert fixed.x[1] == pytest.approx(1.0)


# ── Branch and bound ─────────────────────────────────────────────────────────

def test_milp_simple_binary():
    model = MilpModel.build([1, 1], [([1, 1], '<=', 1)], [0, 0], [1, 1], [True, True])
    solution = solve_binary_milp(model)
    assert solution.status == 'optimal'
    assert solution.objective == pytest.approx(1.0)
    assert solution.gap == 0.0


def test_milp_integral_relaxation_is_solved_at_root():
    model = MilpModel.build([3, 2], [([1, 0], '<=', 1), ([0, 1], '<=', 1)], [0, 0], [1, 1], [True, True])
    solution = solve_binary_milp(model)
    assert solution.nodes == 0
    assert solution.x.tolist() == [1.0, 1.0]


def test_milp_knapsack():
    solution = solve_binary_milp(knapsack())
    assert solution.status == 'optimal'
    assert solution.objective == pytest.approx(8.0)
    assert solution.x.tolist() == [1.0, 0.0, 1.0]
    assert solution.root_bound == pytest.approx(28.0 / 3.0)


def test_milp_infeasible():
    model = MilpModel.build([1, 1], [([1, 1], '>=', 3)], [0, 0], [1, 1], [True, True])
    solution = solve_binary_milp(model)
    assert solution.status == 'infeasible'
    assert solution.x is None


def test_milp_node_limit_reports_gap():
    limited = solve_binary_milp(knapsack(), MilpOptions(node_limit=0))
    assert limited.status == 'gap-limited'
    assert limited.x is None

    warm = solve_binary_milp(knapsack(), MilpOptions(node_limit=0), incumbent=np.array([1.0, 0.0, 1.0]))
    assert warm.status == 'gap-limited'
    assert warm.objective == pytest.approx(8.0)
    assert warm.gap == pytest.approx(28.0 / 3.0 - 8.0)


def test_milp_ignores_infeasible_incumbent():
    solution = solve_binary_milp(knapsack(), incumbent=np.array([1.0, 1.0, 1.0]))
    assert solution.objective == pytest.approx(8.0)


def test_milp_is_deterministic():
    model = random_binary_model(np.random.default_rng(8), 10, 3)
    first, second = solve_binary_milp(model), solve_binary_milp(model)
    assert np.array_equal(first.x, second.x)
    assert first.trace == second.trace


def test_milp_unbounded_relaxation_is_structural():
    model = MilpModel.build([1, 1], [([1, 0], '<=', 1)], [0, 0], [1, INF], [True, False])
    with pytest.raises(StructuralError):
        solve_binary_milp(model)


def test_milp_matches_enumeration():
    rng = np.random.default_rng(0)
    for _ in range(40):
        model = random_binary_model(rng, int(rng.integers(2, 9)), int(rng.integers(1, 4)))
        expected, _ = brute_force_binary(model)
        solution = solve_binary_milp(model)
        got = solution.objective if solution.x is not None else float('-inf')
        assert got == pytest.approx(expected, abs=1e-9)


@pytest.mark.slow
def test_milp_matches_enumeration_up_to_twelve_binaries():
    rng = np.random.default_rng(1)
    for _ in range(200):
        model = random_binary_model(rng, int(rng.integers(3, 13)), int(rng.integers(1, 5)))
        expected, _ = brute_force_binary(model)
        solution = solve_binary_milp(model)
        got = solution.objective if solution.x is not None else float('-inf')
        assert got == pytest.approx(expected, abs=1e-9)


# ── Model validation and text dump ───────────────────────────────────────────

def test_model_rejects_bad_shapes():
    with pytest.raises(StructuralError):
        MilpModel.build([1, 1], [([1], '<=', 1)], [0, 0], [1, 1], [False, False])
    with pytest.raises(StructuralError, match="row 1 has 3 coefficients"):
        MilpModel.build([1, 1], [([1, 0], '<=', 1), ([1, 0, 1], '>=', 0)], [0, 0], [1, 1], [False, False])
    with pytest.raises(StructuralError):
        MilpModel.build([1], [([1], '<', 1)], [0], [1], [False])
    with pytest.raises(StructuralError):
        MilpModel.build([1], [], [0], [2], [True])


def test_model_violation_helpers():
    model = knapsack()
    assert model.max_violation(np.array([1.0, 1.0, 0.0])) == pytest.approx(1.0)
    assert model.integrality_violation(np.array([0.5, 0.0, 1.0])) == pytest.approx(0.5)


def test_format_lp_sections():
    text = format_lp(knapsack())
    assert text.splitlines()[:3] == ['Maximize', ' obj: 5 a + 4 b + 3 c', 'Subject To']
    assert ' c0: 2 a + 3 b + 1 c <= 4' in text
    assert 'Binaries\n a b c\nEnd\n' in text
