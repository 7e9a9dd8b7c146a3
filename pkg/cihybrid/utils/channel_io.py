#!/usr/bin/env python3
"""
Channel Files
Plain-text dump and load of channel realizations.

One line per (g, k) pair: "g k re_0 im_0 re_1 im_1 ...", numbers written
with 17 significant digits so a round trip is lossless. Lines starting
with '#' are comments.
"""

from pathlib import Path
from typing import Dict, List, Tuple, Union

import numpy as np

from cihybrid.errors import ConfigurationError
from cihybrid.model import ChannelSet


def format_channels(channels: ChannelSet) -> str:
    lines = [f"# {channels.num_bs} BSs, {channels.num_users} users"]
    for g, block in enumerate(channels.per_bs):
        for k in range(block.shape[0]):
            values = ' '.join(f"{v.real:.17g} {v.imag:.17g}" for v in block[k])
            lines.append(f"{g} {k} {values}".rstrip())
    return '\n'.join(lines) + '\n'


def dump_channels(channels: ChannelSet, path: Union[str, Path]) -> None:
    path = Path(path)
    try:
        path.write_text(format_channels(channels), encoding='utf-8')
    except OSError as exc:
        raise OSError(f"cannot write channel file {path}: {exc}") from exc


def parse_channels(text: str, source: str = '<text>') -> ChannelSet:
    """
    Parse the dump format back into a ChannelSet.

    Raises:
        ConfigurationError: malformed lines or missing (g, k) pairs
    """
    entries: Dict[Tuple[int, int], np.ndarray] = {}
    for number, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith('#'):
            continue
        fields = line.split()
        try:
            g, k = int(fields[0]), int(fields[1])
            values = [float(v) for v in fields[2:]]
        except (ValueError, IndexError) as exc:
            raise ConfigurationError(f"{source}:{number}: malformed channel line") from exc
        if len(values) % 2:
            raise ConfigurationError(f"{source}:{number}: odd number of real/imaginary values")
        entries[(g, k)] = np.array(values[0::2]) + 1j * np.array(values[1::2])
    if not entries:
        raise ConfigurationError(f"{source}: no channel lines")

    num_bs = max(g for g, _ in entries) + 1
    num_users = max(k for _, k in entries) + 1
    blocks: List[np.ndarray] = []
    for g in range(num_bs):
        rows = []
        for k in range(num_users):
            if (g, k) not in entries:
                raise ConfigurationError(f"{source}: missing channel for BS {g}, user {k}")
            rows.append(entries[(g, k)])
        if len({row.shape[0] for row in rows}) != 1:
            raise ConfigurationError(f"{source}: BS {g} has channels of different lengths")
        blocks.append(np.array(rows, dtype=complex))
    return ChannelSet(per_bs=tuple(blocks))


def load_channels(path: Union[str, Path]) -> ChannelSet:
    path = Path(path)
    try:
        text = path.read_text(encoding='utf-8')
    except OSError as exc:
        raise ConfigurationError(f"cannot read channel file {path}: {exc}") from exc
    return parse_channels(text, str(path))
