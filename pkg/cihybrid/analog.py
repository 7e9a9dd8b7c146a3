#!/usr/bin/env python3
"""
Analog Precoding
Constant-modulus analog precoders from phase conjugation or codebook selection.
"""

import logging
from dataclasses import dataclass
from typing import TYPE_CHECKING, List, Sequence, Tuple, Union

import numpy as np

from cihybrid.errors import StructuralError
from cihybrid.model import AnalogPrecoderSet, BsSpec, ChannelSet, RfChainMap

if TYPE_CHECKING:
    from cihybrid.assignment import AssignmentResult


logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Codebook:
    """
    Analog codebook shared by all BSs.

    Codes are indexed globally BS-major: the codes of BS 0 come first.

    Attributes:
        matrices: per-BS code matrix of shape (N_g, |C_g|); column j is a code
        magnitudes: entry magnitude a per BS
    """

    matrices: Tuple[np.ndarray, ...]
    magnitudes: Tuple[float, ...]

    @property
    def num_bs(self) -> int:
        return len(self.matrices)

    @property
    def total(self) -> int:
        return sum(m.shape[1] for m in self.matrices)

    @property
    def owner(self) -> np.ndarray:
        """g_c for every global code index c."""
        return np.concatenate([
            np.full(m.shape[1], g, dtype=int) for g, m in enumerate(self.matrices)
        ]) if self.matrices else np.zeros(0, dtype=int)

    @property
    def per_bs(self) -> List[List[int]]:
        """Global code indices of every BS (the sets C_g)."""
        sets, start = [], 0
        for matrix in self.matrices:
            sets.append(list(range(start, start + matrix.shape[1])))
            start += matrix.shape[1]
        return sets

    def code(self, c: int) -> np.ndarray:
        g = int(self.owner[c])
        return self.matrices[g][:, c - self.per_bs[g][0]]


def _magnitude_list(magnitude: Union[float, Sequence[float]], count: int) -> List[float]:
    if np.isscalar(magnitude):
        return [float(magnitude)] * count
    values = [float(v) for v in magnitude]
    if len(values) != count:
        raise StructuralError(f"expected {count} phase-shifter magnitudes, got {len(values)}")
    return values


def build_dft_codebook(bs_list: Sequence[Union[BsSpec, int]],
                       magnitude: Union[float, Sequence[float]] = 1.0) -> Codebook:
    """
    N_g-point DFT codebook per BS: c_c[n] = a exp(-j 2 pi n c / N_g).

    Args:
        bs_list: BS specs or plain antenna counts
        magnitude: a, shared or per BS
    """
    antennas = [bs.antennas if isinstance(bs, BsSpec) else int(bs) for bs in bs_list]
    magnitudes = _magnitude_list(magnitude, len(antennas))
    matrices = []
    for n_ant, a in zip(antennas, magnitudes):
        n = np.arange(n_ant)
        matrices.append(a * np.exp(-2j * np.pi * np.outer(n, n) / n_ant))
    return Codebook(matrices=tuple(matrices), magnitudes=tuple(magnitudes))


def build_continuous_analog(channels: ChannelSet, assignment: 'AssignmentResult', chain_map: RfChainMap,
                            magnitude: Union[float, Sequence[float]]) -> AnalogPrecoderSet:
    """
    Phase-conjugate column a exp(-j angle(h_{g_r,k})) for every assigned chain.

    Unassigned chains produce no column, so BS g ends up with as many
    columns as it has assigned chains, in chain order.
    """
    if assignment.mode != 'continuous':
        raise StructuralError("continuous analog precoding needs an RF-chain assignment")
    if assignment.alpha.shape[0] != chain_map.total:
        raise StructuralError(
            f"assignment has {assignment.alpha.shape[0]} rows for {chain_map.total} RF chains"
        )
    magnitudes = _magnitude_list(magnitude, channels.num_bs)
    matrices, users, sources = [], [], []
    for g in range(channels.num_bs):
        columns, served, chains = [], [], []
        for r in chain_map.chains_of(g):
            assigned = np.flatnonzero(assignment.alpha[r])
            if assigned.size == 0:
                continue
            k = int(assigned[0])
            columns.append(magnitudes[g] * np.exp(-1j * np.angle(channels.h(g, k))))
            served.append(k)
            chains.append(r)
        n_ant = channels.per_bs[g].shape[1]
        matrices.append(np.column_stack(columns) if columns else np.zeros((n_ant, 0), dtype=complex))
        users.append(np.array(served, dtype=int))
        sources.append(np.array(chains, dtype=int))
    return AnalogPrecoderSet(
        matrices=tuple(matrices), users=tuple(users), sources=tuple(sources),
        magnitudes=tuple(magnitudes), mode='continuous',
    )


def build_codebook_analog(codebook: Codebook, assignment: 'AssignmentResult',
                          caps: Sequence[int]) -> AnalogPrecoderSet:
    """
    Gather the selected codes of every BS in ascending code order.

    Raises:
        StructuralError: more codes selected at a BS than it has RF chains
    """
    if assignment.mode != 'codebook':
        raise StructuralError("codebook analog precoding needs a code assignment")
    if assignment.alpha.shape[0] != codebook.total:
        raise StructuralError(
            f"assignment has {assignment.alpha.shape[0]} rows for {codebook.total} codes"
        )
    matrices, users, sources = [], [], []
    for g, codes in enumerate(codebook.per_bs):
        selected = [c for c in codes if assignment.alpha[c].any()]
        if len(selected) > caps[g]:
            raise StructuralError(f"BS {g} selects {len(selected)} codes but has {caps[g]} RF chains")
        local = [c - codes[0] for c in selected] if codes else []
        matrices.append(codebook.matrices[g][:, local])
        users.append(np.array([int(np.flatnonzero(assignment.alpha[c])[0]) for c in selected], dtype=int))
        sources.append(np.array(selected, dtype=int))
    return AnalogPrecoderSet(
        matrices=tuple(matrices), users=tuple(users), sources=tuple(sources),
        magnitudes=codebook.magnitudes, mode='codebook',
    )
