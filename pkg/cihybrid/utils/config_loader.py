#!/usr/bin/env python3
"""
Config Loader
Reads NetworkConfig JSON files and builds the shipped presets.
"""

import json
import math
from pathlib import Path
from typing import Any, Dict, Optional, Union

from pydantic import ValidationError

from cihybrid.channel import default_bs_list
from cihybrid.errors import ConfigurationError
from cihybrid.model import GeometrySpec, NetworkConfig, dbm_to_watts


MACRO_BUDGET_DBM = 46.0
PICO_BUDGET_DBM = 30.0
DESK_NOISE_DBM = -60.0


def describe_validation_error(exc: ValidationError) -> str:
    """One line per rejected field, joined by semicolons."""
    return '; '.join(
        f"{'.'.join(str(p) for p in err['loc']) or '<root>'}: {err['msg']}" for err in exc.errors()
    )


def parse_config(data: Dict[str, Any], source: str = '<dict>') -> NetworkConfig:
    """
    Validate a decoded config mapping.

    Raises:
        ConfigurationError: naming the source and every rejected field
    """
    try:
        return NetworkConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigurationError(f"invalid config {source}: {describe_validation_error(exc)}") from exc


def load_config(path: Union[str, Path]) -> NetworkConfig:
    """
    Load a JSON config whose keys mirror the NetworkConfig fields.

    Raises:
        ConfigurationError: unreadable file, malformed JSON or invalid values
    """
    path = Path(path)
    try:
        text = path.read_text(encoding='utf-8')
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigurationError(f"config {path} must hold a JSON object")
    return parse_config(data, str(path))


def save_config(config: NetworkConfig, path: Union[str, Path]) -> None:
    Path(path).write_text(
        json.dumps(config.model_dump(by_alias=True, mode='json'), indent=2) + '\n', encoding='utf-8'
    )


def _preset(antennas, rf_chains, users: int, assignment_method: str, seed: int,
            tnr_db: Optional[float]) -> NetworkConfig:
    geometry = GeometrySpec()
    budgets = [dbm_to_watts(MACRO_BUDGET_DBM)] + [dbm_to_watts(PICO_BUDGET_DBM)] * (len(antennas) - 1)
    noise = dbm_to_watts(DESK_NOISE_DBM)
    data: Dict[str, Any] = {
        'bs_list': [bs.model_dump(by_alias=True) for bs in default_bs_list(geometry, antennas, rf_chains, budgets)],
        'users': users,
        'noise_power': noise,
        'modulation_order': 4,
        'seed': seed,
        'assignment_method': assignment_method,
    }
    if tnr_db is not None:
        data['margins'] = math.sqrt(noise) * 10.0 ** (tnr_db / 20.0)
    return parse_config(data, '<preset>')


def desk_scale_config(seed: int = 0, tnr_db: Optional[float] = None) -> NetworkConfig:
    """N = (16, 8, 8), R = (8, 4, 4), K = 8, QPSK, budgets 46/30 dBm, noise -60 dBm."""
    return _preset((16, 8, 8), (8, 4, 4), 8, 'exact', seed, tnr_db)


def full_scale_config(seed: int = 0, tnr_db: Optional[float] = None) -> NetworkConfig:
    """N = (64, 32, 32), R = (32, 16, 16), K = 64 with heuristic assignment."""
    return _preset((64, 32, 32), (32, 16, 16), 64, 'heuristic', seed, tnr_db)
