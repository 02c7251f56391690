"""Baseband OFDM symbol generation and delayed/Doppler-shifted replicas.

The symbol is evaluated from its analytic subcarrier-sum form, so replicas
at arbitrary fractional delays are exact. All functions here are pure; no
shared mutable state.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import ConfigError


@dataclass(frozen=True)
class OfdmConfig:
    """Subcarrier layout and sampling grid of one OFDM symbol.

    ``symbol_duration`` is always ``1/subcarrier_spacing`` and is derived,
    never stored. ``sample_rate`` defaults to critical sampling (one sample
    per subcarrier over the useful symbol, i.e. the grid bandwidth).
    """

    carrier_freq: float
    subcarrier_count: int
    subcarrier_spacing: float
    cp_duration: float = 0.0
    sample_rate: float = 0.0  # 0 -> bandwidth (critical sampling)

    def __post_init__(self) -> None:
        if self.subcarrier_count < 1:
            raise ConfigError(f"subcarrier_count must be >= 1, got {self.subcarrier_count}")
        if self.subcarrier_spacing <= 0:
            raise ConfigError("subcarrier_spacing must be positive")
        if self.cp_duration < 0:
            raise ConfigError("cp_duration must be non-negative")
        if self.carrier_freq <= 0:
            raise ConfigError("carrier_freq must be positive")
        if self.sample_rate == 0.0:
            object.__setattr__(self, "sample_rate", self.bandwidth)
        if self.sample_rate < self.bandwidth * (1.0 - 1e-12):
            raise ConfigError(
                f"sample_rate {self.sample_rate:g} Hz below bandwidth {self.bandwidth:g} Hz"
            )

    @property
    def bandwidth(self) -> float:
        return self.subcarrier_count * self.subcarrier_spacing

    @property
    def symbol_duration(self) -> float:
        return 1.0 / self.subcarrier_spacing

    @property
    def symbol_extent(self) -> float:
        """Total duration including the cyclic prefix."""
        return self.symbol_duration + self.cp_duration

    @property
    def dt(self) -> float:
        return 1.0 / self.sample_rate

    @property
    def samples_per_symbol(self) -> int:
        return int(round(self.symbol_extent * self.sample_rate))

    @property
    def wavelength(self) -> float:
        from .constants import SPEED_OF_LIGHT

        return SPEED_OF_LIGHT / self.carrier_freq

    def time_grid(self, t0: float = 0.0) -> np.ndarray:
        """Half-open sampling grid [t0, t0 + symbol_extent)."""
        return t0 + np.arange(self.samples_per_symbol) * self.dt


@dataclass(frozen=True)
class ModulationSymbols:
    """Per-subcarrier modulation symbols, power-normalized to the grid size.

    The total power sum |S_k|^2 must equal the subcarrier count so the
    generated symbol has unit average power.
    """

    symbols: np.ndarray
    seed: int | None = None

    def __post_init__(self) -> None:
        arr = np.ascontiguousarray(self.symbols, dtype=np.complex128)
        object.__setattr__(self, "symbols", arr)
        n = arr.shape[0]
        if n < 1:
            raise ConfigError("empty symbol vector")
        total = float(np.sum(np.abs(arr) ** 2))
        if abs(total - n) > 1e-12 * n:
            raise ConfigError(
                f"symbol power {total:.15g} != subcarrier count {n} (not normalized)"
            )

    def __len__(self) -> int:
        return int(self.symbols.shape[0])

    @property
    def occupied(self) -> np.ndarray:
        """Boolean mask of subcarriers carrying non-negligible power."""
        return np.abs(self.symbols) > 1e-6

    @classmethod
    def qpsk(cls, n: int, seed: int, occupied: int | None = None) -> "ModulationSymbols":
        """Seeded unit-modulus QPSK symbols.

        With ``occupied`` set, only the central ``occupied`` subcarriers
        carry symbols (edges zero) and the used ones are rescaled so the
        total power still equals ``n``.
        """
        if n < 1:
            raise ConfigError("n must be >= 1")
        rng = np.random.default_rng(seed)
        quad = rng.integers(0, 4, size=n)
        syms = np.exp(1j * (np.pi / 4.0 + np.pi / 2.0 * quad))
        if occupied is not None:
            if not 1 <= occupied <= n:
                raise ConfigError(f"occupied must be in [1, {n}], got {occupied}")
            start = (n - occupied) // 2
            mask = np.zeros(n, dtype=bool)
            mask[start : start + occupied] = True
            syms = np.where(mask, syms, 0.0)
            syms *= np.sqrt(n / occupied)
        return cls(symbols=syms, seed=seed)


@dataclass(frozen=True)
class BasebandSignal:
    """Sampled complex baseband signal with its uniform time axis."""

    samples: np.ndarray
    t0: float
    dt: float

    def time_grid(self) -> np.ndarray:
        return self.t0 + np.arange(self.samples.shape[0]) * self.dt


def generate_ofdm_symbol(cfg: OfdmConfig, syms: ModulationSymbols) -> BasebandSignal:
    """Time-domain OFDM symbol (CP included) sampled on [0, T + T_CP).

    samples[n] = N^(-1/2) sum_k S_k exp(j 2 pi k df (t_n - T_CP)). Mean
    power over the useful interval [T_CP, T_CP + T) is exactly 1 for
    normalized symbols.
    """
    if len(syms) != cfg.subcarrier_count:
        raise ConfigError(
            f"symbol vector length {len(syms)} != subcarrier_count {cfg.subcarrier_count}"
        )
    t = cfg.time_grid()
    rows = kernels.replica_rows(
        syms.symbols, cfg.subcarrier_spacing, cfg.cp_duration, cfg.symbol_extent, t, [0.0]
    )
    return BasebandSignal(samples=rows[0], t0=0.0, dt=cfg.dt)


def sample_replica(
    cfg: OfdmConfig,
    syms: ModulationSymbols,
    delay: float,
    doppler: float,
    t_grid: np.ndarray,
) -> np.ndarray:
    """s(t - delay) * exp(j 2 pi doppler t) on an arbitrary time grid.

    Zero outside the delayed symbol support. This is the steering-vector
    primitive used for dictionary atoms and matched filtering.
    """
    if delay < 0:
        raise ConfigError(f"delay must be >= 0, got {delay:g}")
    t_grid = np.asarray(t_grid, dtype=np.float64)
    if t_grid.ndim != 1 or t_grid.shape[0] < 1:
        raise ConfigError("t_grid must be a non-empty 1-D array")
    if t_grid.shape[0] > 1 and np.any(np.diff(t_grid) <= 0):
        raise ConfigError("t_grid must be strictly increasing")
    rows = kernels.replica_rows(
        syms.symbols, cfg.subcarrier_spacing, cfg.cp_duration, cfg.symbol_extent, t_grid, [delay]
    )
    out = rows[0]
    if doppler != 0.0:
        out = out * np.exp(2j * np.pi * doppler * t_grid)
    return out


def replica_bank(
    cfg: OfdmConfig,
    syms: ModulationSymbols,
    delays: np.ndarray,
    t_grid: np.ndarray,
) -> np.ndarray:
    """Stack of delayed replicas, one row per delay, no Doppler term."""
    return kernels.replica_rows(
        syms.symbols, cfg.subcarrier_spacing, cfg.cp_duration, cfg.symbol_extent,
        np.asarray(t_grid, dtype=np.float64), np.asarray(delays, dtype=np.float64),
    )
