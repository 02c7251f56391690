"""Synchronization-block resource grid: the known pilot unit for sensing.

Only the time-frequency occupancy matters for sensing, so signal resource
elements carry seeded unit-power QPSK instead of standardized sequences.
The block spans 20 resource blocks (240 subcarriers) over four symbols:
the primary sync sequence fills the central 127 subcarriers of symbol 0,
the secondary the central 127 of symbol 2, and the broadcast channel fills
symbols 1 and 3 plus two 48-subcarrier side bands of symbol 2 (subcarriers
0-47 and 192-239, the standard layout with guard bands around the
secondary sequence). Reference-signal positions sit on every 4th broadcast
subcarrier, cyclically shifted by v = pci mod 4.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from .errors import ConfigError
from .waveform import ModulationSymbols

N_SUBCARRIERS = 240
N_SYMBOLS = 4
SYNC_LEN = 127
SYNC_START = (N_SUBCARRIERS - SYNC_LEN) // 2  # 56, central 127 subcarriers
PBCH_SIDE_LEN = 48  # symbol-2 side bands: [0, 48) and [192, 240)
DMRS_COMB = 4
MAX_PCI = 1008


class ReLabel(IntEnum):
    EMPTY = 0
    PSS = 1
    SSS = 2
    PBCH = 3
    DMRS = 4


@dataclass(frozen=True)
class SsbGrid:
    """240 x 4 complex resource grid with per-element occupancy labels."""

    grid: np.ndarray
    occupancy: np.ndarray
    pci: int
    dmrs_shift: int

    def count(self, label: ReLabel) -> int:
        return int(np.count_nonzero(self.occupancy == label))


def _occupancy(v: int) -> np.ndarray:
    occ = np.full((N_SUBCARRIERS, N_SYMBOLS), ReLabel.EMPTY, dtype=np.uint8)
    occ[SYNC_START : SYNC_START + SYNC_LEN, 0] = ReLabel.PSS
    occ[SYNC_START : SYNC_START + SYNC_LEN, 2] = ReLabel.SSS
    occ[:, 1] = ReLabel.PBCH
    occ[:, 3] = ReLabel.PBCH
    occ[:PBCH_SIDE_LEN, 2] = ReLabel.PBCH
    occ[N_SUBCARRIERS - PBCH_SIDE_LEN :, 2] = ReLabel.PBCH
    pbch = occ == ReLabel.PBCH
    comb = (np.arange(N_SUBCARRIERS) % DMRS_COMB == v)[:, None]
    occ[pbch & comb] = ReLabel.DMRS
    return occ


def build_ssb(pci: int, seed: int) -> SsbGrid:
    """Construct the block layout for a cell identity, deterministically.

    Signal elements are filled with unit-modulus QPSK drawn from a stream
    keyed on (seed, pci); empty elements are exactly zero.
    """
    if not 0 <= pci < MAX_PCI:
        raise ValueError(f"pci must be in [0, {MAX_PCI}), got {pci}")
    v = pci % DMRS_COMB
    occ = _occupancy(v)
    rng = np.random.default_rng(np.random.SeedSequence([seed, pci]))
    quad = rng.integers(0, 4, size=(N_SUBCARRIERS, N_SYMBOLS))
    values = np.exp(1j * (np.pi / 4.0 + np.pi / 2.0 * quad))
    grid = np.where(occ != ReLabel.EMPTY, values, 0.0)
    return SsbGrid(grid=grid, occupancy=occ, pci=pci, dmrs_shift=v)


def dmrs_positions(grid: SsbGrid) -> list[tuple[int, int]]:
    """(subcarrier, symbol) indices of reference elements, sorted."""
    rows, cols = np.nonzero(grid.occupancy == ReLabel.DMRS)
    return sorted(zip(rows.tolist(), cols.tolist()))


def ssb_symbol_vector(grid: SsbGrid, symbol: int, n: int) -> ModulationSymbols:
    """Embed one grid column in the center of an n-subcarrier symbol vector.

    Rescaled so the total power equals n, making the column usable as the
    known transmit symbols of a sensing waveform.
    """
    if not 0 <= symbol < N_SYMBOLS:
        raise ValueError(f"symbol must be in [0, {N_SYMBOLS}), got {symbol}")
    if n < N_SUBCARRIERS:
        raise ConfigError(f"need n >= {N_SUBCARRIERS} subcarriers, got {n}")
    col = grid.grid[:, symbol]
    out = np.zeros(n, dtype=np.complex128)
    start = (n - N_SUBCARRIERS) // 2
    out[start : start + N_SUBCARRIERS] = col
    power = float(np.sum(np.abs(out) ** 2))
    out *= np.sqrt(n / power)
    return ModulationSymbols(symbols=out)


def write_grid_csv(grid: SsbGrid, path) -> None:
    """Dump the grid as (subcarrier, symbol, label, re, im) rows."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["subcarrier", "symbol", "label", "re", "im"])
        for k in range(N_SUBCARRIERS):
            for sym in range(N_SYMBOLS):
                val = grid.grid[k, sym]
                writer.writerow(
                    [k, sym, ReLabel(grid.occupancy[k, sym]).name,
                     repr(float(val.real)), repr(float(val.imag))]
                )
