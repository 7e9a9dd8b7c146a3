"""
Analog precoder tests: phase-conjugate columns, DFT codebooks and codebook
selection.
"""

import cmath
import math

import numpy as np
import pytest

from cihybrid.analog import build_codebook_analog, build_continuous_analog, build_dft_codebook
from cihybrid.assignment import (
    AssignmentResult,
    GainMatrixCodebook,
    gain_matrix_codebook,
    solve_code_assignment,
)
from cihybrid.errors import StructuralError
from cihybrid.model import build_chain_map


def assignment(alpha, mode='continuous', owner=None) -> AssignmentResult:
    alpha = np.asarray(alpha, dtype=int)
    owner = np.zeros(alpha.shape[0], dtype=int) if owner is None else np.asarray(owner)
    return AssignmentResult(alpha=alpha, tau=0.0, objective=0.0, mode=mode, owner=owner)


# ── Continuous ───────────────────────────────────────────────────────────────

def test_phase_conjugate_column(make_channels):
    analog = build_continuous_analog(make_channels([[1 + 1j, -1.0]]), assignment([[1]]),
                                     build_chain_map([1]), 1.0)
    column = analog.matrices[0][:, 0]
    assert column == pytest.approx(np.array([cmath.exp(-1j * math.pi / 4), -1.0]), abs=1e-12)
    assert analog.max_modulus_error() == pytest.approx(0.0, abs=1e-12)


def test_real_positive_channel_gives_flat_column(make_channels):
    analog = build_continuous_analog(make_channels([[0.2, 3.0, 1.5]]), assignment([[1]]),
                                     build_chain_map([1]), 0.5)
    assert analog.matrices[0][:, 0] == pytest.approx(np.full(3, 0.5))


def test_unassigned_chains_are_dropped(make_channels):
    channels = make_channels([[1.0, 1j], [1.0, -1.0]], [[2.0], [1j]])
    alpha = [[0, 1], [0, 0], [1, 0]]
    analog = build_continuous_analog(channels, assignment(alpha, owner=[0, 0, 1]),
                                     build_chain_map([2, 1]), [0.5, 1.0])
    assert analog.effective_chains == [1, 1]
    assert analog.users[0].tolist() == [1]
    assert analog.sources[0].tolist() == [0]
    assert analog.sources[1].tolist() == [2]
    assert analog.matrices[1][0, 0] == pytest.approx(1.0)


def test_continuous_rejects_code_assignment(make_channels):
    with pytest.raises(StructuralError):
        build_continuous_analog(make_channels([[1.0]]), assignment([[1]], mode='codebook'),
                                build_chain_map([1]), 1.0)


# ── Codebooks ────────────────────────────────────────────────────────────────

def test_dft_codebook_two_antennas():
    codebook = build_dft_codebook([2], 1.0)
    assert codebook.matrices[0] == pytest.approx(np.array([[1, 1], [1, -1]]), abs=1e-12)


def test_dft_codebook_four_antennas():
    codebook = build_dft_codebook([4], 1.0)
    assert codebook.code(1) == pytest.approx(np.array([1, -1j, -1, 1j]), abs=1e-12)


def test_codebook_global_indexing():
    codebook = build_dft_codebook([2, 4], [1.0, 0.5])
    assert codebook.total == 6
    assert codebook.owner.tolist() == [0, 0, 1, 1, 1, 1]
    assert codebook.per_bs == [[0, 1], [2, 3, 4, 5]]
    assert np.abs(codebook.code(3)) == pytest.approx(np.full(4, 0.5))


def test_codebook_selection_gathers_codes_in_order():
    codebook = build_dft_codebook([2, 4], 1.0)
    alpha = np.zeros((6, 2), dtype=int)
    alpha[5, 0] = 1
    alpha[2, 1] = 1
    analog = build_codebook_analog(codebook, assignment(alpha, 'codebook', codebook.owner), [1, 2])
    assert analog.matrices[0].shape == (2, 0)
    assert analog.matrices[1] == pytest.approx(np.column_stack([codebook.code(2), codebook.code(5)]))
    assert analog.sources[1].tolist() == [2, 5]
    assert analog.users[1].tolist() == [1, 0]


def test_codebook_selection_over_cap():
    codebook = build_dft_codebook([2, 4], 1.0)
    alpha = np.zeros((6, 2), dtype=int)
    alpha[2, 0] = alpha[5, 1] = 1
    with pytest.raises(StructuralError):
        build_codebook_analog(codebook, assignment(alpha, 'codebook', codebook.owner), [1, 1])


def test_codebook_selection_follows_solver(make_gaussian_channels, rng):
    codebook = build_dft_codebook([4, 2], 1.0)
    channels = make_gaussian_channels(rng, 3, [4, 2])
    gains = gain_matrix_codebook(channels, codebook)
    result = solve_code_assignment(gains, 1.0, [2, 1])
    analog = build_codebook_analog(codebook, result, [2, 1])
    selected = [c for c in range(codebook.total) if result.alpha[c].any()]
    assert np.concatenate(analog.sources).tolist() == selected
    assert sum(analog.effective_chains) == len(selected)
    assert isinstance(gains, GainMatrixCodebook)
