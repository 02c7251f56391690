"""Stage-I coarse estimation: delay-Doppler dictionary and greedy pursuit.

The dictionary discretizes (delay, Doppler) with delay step 1/bandwidth
and Doppler step 1/(num_pulses * symbol_duration). Columns are unit-norm
sampled replicas; pursuit iterates correlation, best-atom selection,
least-squares re-fit over the support and residual update, stopping on the
normalized residual energy against the expected noise energy.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import ConfigError, ResourceError
from .scene import PathParams
from .waveform import ModulationSymbols, OfdmConfig


@dataclass(frozen=True)
class DelayDopplerGrid:
    """Rectangular search grid: delays tau_p = delay_start + p * delay_step,
    Dopplers f_q = doppler_center + (q - doppler_count/2) * doppler_step."""

    delay_step: float
    doppler_step: float
    delay_count: int
    doppler_count: int
    delay_start: float = 0.0
    doppler_center: float = 0.0

    def __post_init__(self) -> None:
        if self.delay_count < 1 or self.doppler_count < 1:
            raise ConfigError("grid needs at least one delay and one Doppler cell")
        if self.delay_step <= 0 or self.doppler_step <= 0:
            raise ConfigError("grid steps must be positive")

    @classmethod
    def from_config(
        cls,
        cfg: OfdmConfig,
        num_pulses: int,
        delay_count: int,
        doppler_count: int,
        delay_start: float = 0.0,
        doppler_center: float = 0.0,
    ) -> "DelayDopplerGrid":
        """Grid at the canonical resolutions 1/B and 1/(N_a * T)."""
        return cls(
            delay_step=1.0 / cfg.bandwidth,
            doppler_step=1.0 / (num_pulses * cfg.symbol_duration),
            delay_count=delay_count,
            doppler_count=doppler_count,
            delay_start=delay_start,
            doppler_center=doppler_center,
        )

    @property
    def size(self) -> int:
        return self.delay_count * self.doppler_count

    def delays(self) -> np.ndarray:
        return self.delay_start + np.arange(self.delay_count) * self.delay_step

    def dopplers(self) -> np.ndarray:
        q = np.arange(self.doppler_count)
        return self.doppler_center + (q - self.doppler_count / 2.0) * self.doppler_step

    def atom_params(self, index: int) -> tuple[float, float]:
        """(delay, Doppler) of a column. Ordering is delay-major: columns
        cycle fastest over Doppler."""
        p, q = divmod(index, self.doppler_count)
        return (
            self.delay_start + p * self.delay_step,
            self.doppler_center + (q - self.doppler_count / 2.0) * self.doppler_step,
        )


@dataclass
class Dictionary:
    """Unit-norm steering-vector matrix with its column parameter maps."""

    atoms: np.ndarray  # (n_samples, size), each column unit L2 norm
    delays: np.ndarray  # (size,)
    dopplers: np.ndarray  # (size,)
    replica_norms: np.ndarray  # pre-normalization L2 norm per column
    t_grid: np.ndarray
    grid: DelayDopplerGrid
    cfg: OfdmConfig
    syms: ModulationSymbols

    @property
    def n_samples(self) -> int:
        return int(self.atoms.shape[0])

    @property
    def size(self) -> int:
        return int(self.atoms.shape[1])


def build_dictionary(
    cfg: OfdmConfig,
    syms: ModulationSymbols,
    grid: DelayDopplerGrid,
    t_grid: np.ndarray,
    max_bytes: int = 1 << 29,
) -> Dictionary:
    """Assemble the steering-vector dictionary over the search grid.

    Column (p, q) is the normalized replica at (tau_p, f_q); every grid
    delay must leave full symbol support inside ``t_grid``. The estimated
    matrix footprint is checked against ``max_bytes`` before allocation.
    """
    t_grid = np.asarray(t_grid, dtype=np.float64)
    n_t = t_grid.shape[0]
    need = 16 * n_t * grid.size
    if need > max_bytes:
        raise ResourceError(
            f"dictionary needs {need} bytes ({grid.size} atoms x {n_t} samples), "
            f"budget is {max_bytes}"
        )
    delays = grid.delays()
    rows = kernels.replica_rows(
        syms.symbols, cfg.subcarrier_spacing, cfg.cp_duration, cfg.symbol_extent, t_grid, delays
    )
    dop = np.exp(2j * np.pi * np.outer(grid.dopplers(), t_grid))
    # delay-major ordering: atom index = p * doppler_count + q
    atoms = (rows[:, None, :] * dop[None, :, :]).reshape(grid.size, n_t).T.copy()
    norms = np.linalg.norm(atoms, axis=0)
    bad = np.nonzero(norms < 1e-12)[0]
    if bad.size:
        tau, _ = grid.atom_params(int(bad[0]))
        raise ConfigError(
            f"t_grid does not cover the symbol support of grid delay {tau:g} s"
        )
    atoms /= norms
    col_delay = np.repeat(delays, grid.doppler_count)
    col_doppler = np.tile(grid.dopplers(), grid.delay_count)
    return Dictionary(
        atoms=atoms,
        delays=col_delay,
        dopplers=col_doppler,
        replica_norms=norms,
        t_grid=t_grid,
        grid=grid,
        cfg=cfg,
        syms=syms,
    )


@dataclass
class SparseEstimate:
    """Pursuit output: support, coefficients and per-iteration diagnostics."""

    support: list[int]
    coefficients: np.ndarray
    residual_energy_history: list[float]
    paths: list[PathParams]
    observation_energy: float
    threshold: float
    orthogonality_history: list[float] = field(default_factory=list)
    regularized: bool = False
    iteration_records: list[tuple] = field(default_factory=list)

    def normalized_residual(self) -> float:
        if not self.residual_energy_history:
            return 1.0
        return self.residual_energy_history[-1] / self.observation_energy


def omp_run(
    dictionary: Dictionary,
    u: np.ndarray,
    noise_power: float,
    max_iter: int,
    threshold_mode: str = "aggregate",
) -> SparseEstimate:
    """Orthogonal matching pursuit with least-squares re-fit per iteration.

    Stops when the normalized residual energy ||r||^2 / ||u||^2 drops below
    the threshold or after ``max_iter`` atoms. ``threshold_mode="aggregate"``
    (default) compares against the total expected noise energy,
    noise_power * n_samples / ||u||^2; ``"literal"`` uses the single-sample
    form noise_power / ||u||^2. Ties in the correlation argmax go to the
    lowest atom index; a singular Gram submatrix falls back to a
    diagonally loaded solve and flags the output.
    """
    u = np.asarray(u, dtype=np.complex128)
    if u.shape[0] != dictionary.n_samples:
        raise ConfigError(
            f"observation length {u.shape[0]} != atom length {dictionary.n_samples}"
        )
    if noise_power < 0:
        raise ConfigError("noise_power must be >= 0")
    if threshold_mode not in ("aggregate", "literal"):
        raise ConfigError(f"unknown threshold_mode {threshold_mode!r}")
    if max_iter < 1:
        raise ConfigError("max_iter must be >= 1")
    max_iter = min(max_iter, dictionary.size)

    atoms = dictionary.atoms
    u_energy = float(np.vdot(u, u).real)
    if u_energy == 0.0:
        return SparseEstimate([], np.zeros(0, complex), [0.0], [], 0.0, 0.0)
    noise_energy = noise_power * dictionary.n_samples if threshold_mode == "aggregate" else noise_power
    threshold = noise_energy / u_energy

    support: list[int] = []
    records: list[tuple] = []
    residual_history: list[float] = []
    orth_history: list[float] = []
    regularized = False
    r = u.copy()
    x = np.zeros(0, dtype=np.complex128)
    for it in range(1, max_iter + 1):
        c = atoms.conj().T @ r
        if support:
            # post-LS orthogonality of the previous iteration's residual
            orth_history.append(float(np.max(np.abs(c[support]))))
        mag = np.abs(c)
        mag[support] = -np.inf
        i_best = int(np.argmax(mag))
        support.append(i_best)
        sub = atoms[:, support]
        gram = sub.conj().T @ sub
        rhs = sub.conj().T @ u
        try:
            if len(support) > 1 and np.linalg.cond(gram) > 1e12:
                raise np.linalg.LinAlgError("numerically singular Gram submatrix")
            x = np.linalg.solve(gram, rhs)
        except np.linalg.LinAlgError:
            load = 1e-10 * float(np.trace(gram).real)
            x = np.linalg.solve(gram + load * np.eye(len(support)), rhs)
            regularized = True
        r = u - sub @ x
        energy = float(np.vdot(r, r).real)
        residual_history.append(energy)
        tau, f_d = dictionary.delays[i_best], dictionary.dopplers[i_best]
        alpha = x[-1] / dictionary.replica_norms[i_best]
        records.append((it, i_best, tau, f_d, alpha.real, alpha.imag, energy))
        if energy / u_energy < threshold or energy <= 1e-28 * u_energy:
            break
    orth_history.append(float(np.max(np.abs(atoms[:, support].conj().T @ r))))
    paths = [
        PathParams(
            gain=complex(x[j] / dictionary.replica_norms[i]),
            delay=float(dictionary.delays[i]),
            doppler=float(dictionary.dopplers[i]),
        )
        for j, i in enumerate(support)
    ]
    return SparseEstimate(
        support=support,
        coefficients=x,
        residual_energy_history=residual_history,
        paths=paths,
        observation_energy=u_energy,
        threshold=threshold,
        orthogonality_history=orth_history,
        regularized=regularized,
        iteration_records=records,
    )


def correlation_spectrum(dictionary: Dictionary, u: np.ndarray) -> np.ndarray:
    """|atom^H u| arranged as a (delay_count, doppler_count) surface."""
    c = np.abs(dictionary.atoms.conj().T @ np.asarray(u, dtype=np.complex128))
    return c.reshape(dictionary.grid.delay_count, dictionary.grid.doppler_count)


def strongest_bins(dictionary: Dictionary, u: np.ndarray, count: int) -> list[int]:
    """Atom indices of the ``count`` largest correlation magnitudes.

    Deliberately takes the literal strongest bins with no neighborhood
    exclusion: this is the sparsity-unaware initialization baseline.
    """
    c = np.abs(dictionary.atoms.conj().T @ np.asarray(u, dtype=np.complex128))
    count = min(count, c.shape[0])
    order = np.argsort(-c, kind="stable")
    return [int(i) for i in order[:count]]


def matched_paths(dictionary: Dictionary, u: np.ndarray, indices: list[int]) -> list[PathParams]:
    """Matched-filter amplitude estimates for the given atoms."""
    u = np.asarray(u, dtype=np.complex128)
    out = []
    for i in indices:
        proj = complex(np.vdot(dictionary.atoms[:, i], u))  # <atom, u>
        out.append(
            PathParams(
                gain=proj / dictionary.replica_norms[i],
                delay=float(dictionary.delays[i]),
                doppler=float(dictionary.dopplers[i]),
            )
        )
    return out


def write_estimate_csv(path, estimate: SparseEstimate) -> None:
    """Per-iteration pursuit records as CSV."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "atom_index", "delay_s", "doppler_hz", "re_gain", "im_gain", "residual_energy"])
        for rec in estimate.iteration_records:
            w.writerow([rec[0], rec[1]] + [repr(float(v)) for v in rec[2:]])
