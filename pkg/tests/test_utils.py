"""
Utility tests: config files and presets, channel files, random streams and
console formatting.
"""

import json
from pathlib import Path

import numpy as np
import pytest

from cihybrid.errors import ConfigurationError
from cihybrid.utils.channel_io import dump_channels, format_channels, load_channels, parse_channels
from cihybrid.utils.config_loader import (
    desk_scale_config,
    full_scale_config,
    load_config,
    parse_config,
    save_config,
)
from cihybrid.utils.reporting import format_alpha, format_power
from cihybrid.utils.rng import trial_generators


CONFIG_DIR = Path(__file__).parents[1] / 'configs'


# ── Config files ─────────────────────────────────────────────────────────────

def test_shipped_desk_config_matches_preset():
    shipped = load_config(CONFIG_DIR / 'desk_scale.json')
    preset = desk_scale_config()
    assert shipped.antennas == preset.antennas == [16, 8, 8]
    assert shipped.rf_chains == [8, 4, 4]
    assert shipped.num_users == 8
    assert shipped.budgets == pytest.approx(preset.budgets)
    assert shipped.noise_power == pytest.approx(1e-9)


def test_shipped_full_config_loads():
    config = load_config(CONFIG_DIR / 'full_scale.json')
    assert config.antennas == [64, 32, 32]
    assert config.num_users == 64
    assert config.assignment_method == 'heuristic'


def test_preset_tnr_sets_the_margin():
    config = desk_scale_config(tnr_db=20.0)
    assert config.margin_vector ** 2 / config.noise_power == pytest.approx(np.full(8, 100.0))


def test_save_load_round_trip(make_config, tmp_path):
    config = make_config(antennas=(4, 2), rf_chains=(2, 1), positions=[(0.1, 0.0), (0.0, 0.3)], seed=7)
    path = tmp_path / 'config.json'
    save_config(config, path)
    assert load_config(path) == config


def test_unknown_key_names_the_field():
    data = json.loads((CONFIG_DIR / 'desk_scale.json').read_text(encoding='utf-8'))
    data['antenna_count'] = 3
    with pytest.raises(ConfigurationError, match='antenna_count'):
        parse_config(data, 'edited.json')


def test_malformed_json(tmp_path):
    path = tmp_path / 'broken.json'
    path.write_text('{"users": 2,', encoding='utf-8')
    with pytest.raises(ConfigurationError, match='not valid JSON'):
        load_config(path)


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigurationError, match='cannot read'):
        load_config(tmp_path / 'absent.json')


def test_config_must_be_an_object(tmp_path):
    path = tmp_path / 'list.json'
    path.write_text('[1, 2]', encoding='utf-8')
    with pytest.raises(ConfigurationError):
        load_config(path)


# ── Channel files ────────────────────────────────────────────────────────────

def test_channel_file_is_lossless(make_gaussian_channels, rng, tmp_path):
    channels = make_gaussian_channels(rng, 3, [4, 2])
    path = tmp_path / 'channels.txt'
    dump_channels(channels, path)
    restored = load_channels(path)
    for original, loaded in zip(channels.per_bs, restored.per_bs):
        assert np.array_equal(original, loaded)


def test_channel_text_layout(make_channels):
    text = format_channels(make_channels([[1 + 2j, 0.5]]))
    assert text.splitlines()[1] == '0 0 1 2 0.5 0'


def test_channel_comments_and_blank_lines_are_skipped():
    channels = parse_channels('# header\n\n0 0 1 0\n0 1 0 1\n')
    assert channels.per_bs[0].tolist() == [[1 + 0j], [1j]]


@pytest.mark.parametrize('text, message', [
    ('0 0 1\n', 'odd number'),
    ('0 x 1 0\n', 'malformed'),
    ('# only a comment\n', 'no channel lines'),
    ('0 0 1 0\n0 2 1 0\n', 'missing channel'),
])
def test_channel_parse_errors(text, message):
    with pytest.raises(ConfigurationError, match=message):
        parse_channels(text)


# ── Random streams ───────────────────────────────────────────────────────────

def test_trial_streams_are_reproducible():
    a_channel, a_slot = trial_generators(5, 1, 2, 3)
    b_channel, b_slot = trial_generators(5, 1, 2, 3)
    assert a_channel.random() == b_channel.random()
    assert a_slot.random() == b_slot.random()


def test_trial_streams_differ_per_key():
    draws = {trial_generators(5, 1, 2, t)[0].random() for t in range(10)}
    draws |= {trial_generators(5, s, 2, 0)[0].random() for s in range(1, 5)}
    assert len(draws) == 13
    channel, slot = trial_generators(0, 0, 0, 0)
    assert channel.random() != slot.random()


# ── Reporting ────────────────────────────────────────────────────────────────

def test_format_power():
    assert '30.00 dBm' in format_power(1.0)
    assert format_power(float('nan')) == 'n/a'


def test_format_alpha_marks_unassigned_rows():
    lines = format_alpha(np.array([[1, 0], [0, 0]]), [0, 1])
    assert lines[0].endswith('user 0')
    assert lines[1].endswith('unassigned')


def test_full_preset_uses_the_heuristic():
    config = full_scale_config(seed=3)
    assert config.seed == 3
    assert config.rf_chains == [32, 16, 16]
    assert config.assignment_method == 'heuristic'
