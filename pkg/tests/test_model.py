"""
Network model tests: PSK primitives, received signal, CI slack, power and
config validation.
"""

import cmath
import math

import numpy as np
import pytest
from pydantic import ValidationError

from cihybrid.errors import DomainError, StructuralError
from cihybrid.model import (
    ChannelSet,
    SymbolVector,
    build_chain_map,
    ci_geometry,
    ci_slack,
    dbm_to_watts,
    detect_psk,
    detect_psk_array,
    psk_symbol,
    received_nominal,
    transmit_power,
    watts_to_dbm,
)


# ── PSK ───────────────────────────────────────────────────────────────────────

@pytest.mark.parametrize('m, order, expected', [
    (0, 4, 1 + 0j),
    (1, 4, 0 + 1j),
    (3, 8, complex(-math.sqrt(0.5), math.sqrt(0.5))),
])
def test_psk_symbol_values(m, order, expected):
    assert psk_symbol(m, order) == pytest.approx(expected, abs=1e-12)


@pytest.mark.parametrize('m', [-1, 4])
def test_psk_symbol_rejects_out_of_range_index(m):
    with pytest.raises(DomainError):
        psk_symbol(m, 4)


@pytest.mark.parametrize('y, expected', [
    (1 + 0.1j, 0),
    (-0.2 + 0.9j, 1),
    (cmath.exp(1j * math.pi / 4), 0),
    (0j, 0),
])
def test_detect_psk(y, expected):
    assert detect_psk(y, 4) == expected


def test_detect_psk_array_matches_scalar_detection(rng):
    samples = rng.standard_normal(200) + 1j * rng.standard_normal(200)
    batch = detect_psk_array(samples, 8)
    assert batch.tolist() == [detect_psk(y, 8) for y in samples]


def test_detect_recovers_every_constellation_point():
    for order in (2, 4, 8, 16):
        points = np.array([psk_symbol(m, order) for m in range(order)])
        assert detect_psk_array(points, order).tolist() == list(range(order))


@pytest.mark.parametrize('order', [2, 4, 8])
@pytest.mark.parametrize('delta', [-0.999, -0.5, 0.0, 3.0, 1e6])
def test_detection_ignores_the_radius(order, delta):
    for m in range(order):
        assert detect_psk(psk_symbol(m, order) * (1 + delta), order) == m


def test_symbol_vector_rejects_bad_indices():
    with pytest.raises(DomainError):
        SymbolVector.from_indices([0, 4], 4)


# ── Received signal ──────────────────────────────────────────────────────────

def test_received_single_bs(make_analog, make_channels):
    y = received_nominal(make_channels([[1.0, 0.0]]), make_analog([[1.0], [1.0]]), [np.array([0.5])])
    assert y == pytest.approx(np.array([0.5]))


def test_received_zero_digital_is_silent(make_analog, make_channels):
    channels = make_channels([[1.0, 2.0], [3.0, -1.0]])
    y = received_nominal(channels, make_analog([[1.0], [1.0]]), [np.zeros(1)])
    assert np.all(y == 0)


def test_received_superposes_base_stations(make_analog, make_channels):
    channels = make_channels([[1.0]], [[1.0]])
    analog = make_analog([[1.0]], [[1.0]])
    y = received_nominal(channels, analog, [np.array([1.0]), np.array([1j])])
    assert y[0] == pytest.approx(1 + 1j)


def test_received_uses_plain_transpose(make_analog, make_channels):
    y = received_nominal(make_channels([[1j]]), make_analog([[1.0]]), [np.array([1.0])])
    assert y[0] == pytest.approx(1j)


def test_received_shape_mismatch(make_analog, make_channels):
    with pytest.raises(StructuralError):
        received_nominal(make_channels([[1.0, 0.0, 0.0]]), make_analog([[1.0], [1.0]]), [np.array([1.0])])


def random_unit_modulus(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    return np.exp(1j * rng.uniform(0, 2 * math.pi, (rows, cols)))


def test_received_is_linear_in_each_digital_block(make_analog, make_gaussian_channels, rng):
    channels = make_gaussian_channels(rng, 3, [4, 2])
    analog = make_analog(random_unit_modulus(rng, 4, 2), random_unit_modulus(rng, 2, 1))
    digital = [rng.standard_normal(2) + 1j * rng.standard_normal(2), rng.standard_normal(1) + 1j]
    silent = [np.zeros(2), np.zeros(1)]
    only_macro = received_nominal(channels, analog, [digital[0], silent[1]])
    only_pico = received_nominal(channels, analog, [silent[0], digital[1]])
    c = 2.5 - 0.75j
    tol = 1e-12 * np.abs(only_macro).max()
    scaled = received_nominal(channels, analog, [c * digital[0], digital[1]])
    assert np.allclose(scaled, c * only_macro + only_pico, rtol=1e-12, atol=tol)
    assert np.allclose(received_nominal(channels, analog, digital), only_macro + only_pico, rtol=1e-12, atol=tol)


# ── CI slack ─────────────────────────────────────────────────────────────────

@pytest.mark.parametrize('y, s, expected', [
    (1.0, 1.0, 0.0),
    (2 + 0.5j, 1.0, 0.5),
    (1 + 1j, 1j, -1.0),
])
def test_ci_slack_qpsk(y, s, expected):
    assert ci_slack(y, s, 1.0, math.pi / 4) == pytest.approx(expected, abs=1e-12)


def test_ci_slack_bpsk_is_half_plane():
    assert ci_slack(3 + 100j, 1.0, 1.0, math.pi / 2) == pytest.approx(2.0)
    assert ci_slack(0.5, 1.0, 1.0, math.pi / 2) == pytest.approx(-0.5)


@pytest.mark.parametrize('theta', [math.pi / 2, math.pi / 4, math.pi / 8])
def test_ci_slack_is_rotation_invariant(theta, rng):
    for _ in range(50):
        y = complex(rng.standard_normal(), rng.standard_normal())
        s = cmath.exp(1j * rng.uniform(0, 2 * math.pi))
        gamma = float(rng.uniform(0, 1))
        assert ci_slack(y, s, gamma, theta) == pytest.approx(ci_slack(s.conjugate() * y, 1.0, gamma, theta),
                                                             abs=1e-12)


def test_ci_geometry_gamma():
    geometry = ci_geometry(4, [math.sin(math.pi / 4), 2 * math.sin(math.pi / 4)])
    assert geometry.theta == pytest.approx(math.pi / 4)
    assert geometry.gamma == pytest.approx([1.0, 2.0])
    assert not geometry.is_binary
    assert ci_geometry(2, [1.0]).is_binary


def test_ci_geometry_rejects_bad_order():
    with pytest.raises(DomainError):
        ci_geometry(6, [1.0])


# ── Power ────────────────────────────────────────────────────────────────────

def test_transmit_power(make_analog):
    total, per_bs = transmit_power(make_analog([[1.0], [1.0]]), [np.array([1.0])])
    assert total == pytest.approx(2.0)
    assert per_bs.tolist() == pytest.approx([2.0])

    total, _ = transmit_power(make_analog([[1.0], [1.0]]), [np.zeros(1)])
    assert total == 0.0

    analog = make_analog([[1.0], [1.0]], [[1.0], [1.0]])
    total, per_bs = transmit_power(analog, [np.array([1.0]), np.array([1.0])])
    assert total == pytest.approx(4.0)
    assert per_bs.tolist() == pytest.approx([2.0, 2.0])


def test_transmit_power_matches_the_gram_form(make_analog, rng):
    analog = make_analog(random_unit_modulus(rng, 4, 2), random_unit_modulus(rng, 3, 3))
    digital = [rng.standard_normal(2) + 1j * rng.standard_normal(2),
               rng.standard_normal(3) + 1j * rng.standard_normal(3)]
    total, per_bs = transmit_power(analog, digital)
    expected = [np.real(b.conj() @ (A.conj().T @ A) @ b) for A, b in zip(analog.matrices, digital)]
    assert np.all(per_bs >= 0)
    assert per_bs.tolist() == pytest.approx(expected, rel=1e-9)
    assert total == pytest.approx(sum(expected), rel=1e-9)


def test_dbm_conversions():
    assert dbm_to_watts(30.0) == pytest.approx(1.0)
    assert watts_to_dbm(1.0) == pytest.approx(30.0)
    assert watts_to_dbm(dbm_to_watts(46.0)) == pytest.approx(46.0)
    assert watts_to_dbm(0.0) == float('-inf')


# ── Indexing and containers ──────────────────────────────────────────────────

def test_chain_map_is_bs_major():
    chain_map = build_chain_map([2, 1])
    assert chain_map.total == 3
    assert chain_map.owner == ((0, 0), (0, 1), (1, 0))
    assert chain_map.bs_of.tolist() == [0, 0, 1]
    assert chain_map.chains_of(0) == [0, 1]


def test_channel_set_rejects_inconsistent_user_counts():
    with pytest.raises(StructuralError):
        ChannelSet(per_bs=(np.ones((2, 3), dtype=complex), np.ones((3, 3), dtype=complex)))


def test_channel_subsets(make_channels):
    channels = make_channels([[1, 2], [3, 4], [5, 6]], [[7], [8], [9]])
    sub = channels.subset_users([2, 0]).subset_bs([1])
    assert sub.num_bs == 1
    assert sub.per_bs[0][:, 0].real.tolist() == [9, 7]


# ── Config ───────────────────────────────────────────────────────────────────

def test_config_expands_user_count_and_scalar_margin(make_config):
    config = make_config(users=2, margins=0.5)
    assert config.num_users == 2
    assert config.margin_vector.tolist() == [0.5, 0.5]


def test_config_default_margin_targets_ten_db(make_config):
    config = make_config(noise_power=1e-6)
    assert config.margin_vector[0] ** 2 / 1e-6 == pytest.approx(10.0)


def test_config_default_magnitude_is_inverse_sqrt_antennas(make_config):
    assert make_config(antennas=(4,), rf_chains=(2,)).ps_magnitudes() == pytest.approx([0.5])
    assert make_config(ps_magnitude=2.0).ps_magnitudes() == [2.0]


@pytest.mark.parametrize('overrides', [
    {'antennas': (2,), 'rf_chains': (3,), 'users': 2},
    {'antennas': (2,), 'rf_chains': (1,), 'users': 2},
    {'modulation_order': 6},
    {'margins': [1.0]},
    {'margins': [-1.0, 1.0]},
    {'colour': 'blue'},
])
def test_config_rejects_invalid_values(make_config, overrides):
    with pytest.raises(ValidationError):
        make_config(**overrides)


def test_config_replace_revalidates(make_config):
    config = make_config()
    assert config.replace(seed=7).seed == 7
    with pytest.raises(ValidationError):
        config.replace(modulation_order=3)
