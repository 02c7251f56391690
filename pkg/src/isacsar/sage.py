"""Stage-II fine estimation: per-path expectation-maximization refinement.

Each sweep visits the paths in descending initial-amplitude order; for
path l the E-step subtracts every other path's reconstructed signal from
the observation and the M-step re-estimates (delay, Doppler) by a local
two-level grid search (coarse cell subdivided by ``refine_factor``)
followed by the closed-form amplitude update. The current estimate is
always among the candidates, so the per-sweep reconstruction residual is
non-increasing; an optional quadratic peak interpolation sharpens the
delay below the fine grid step and is only accepted when it does not
reduce the correlation peak.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np

from . import kernels
from .errors import ConfigError
from .omp import DelayDopplerGrid
from .scene import PathParams
from .waveform import ModulationSymbols, OfdmConfig


class ReplicaCache:
    """Delayed-replica provider on a fine delay lattice.

    Rows are cached by lattice index (step = coarse delay step divided by
    the refinement factor), which the local searches, dictionary-adjacent
    code and amplitude tracking all share; arbitrary off-lattice delays are
    evaluated exactly on demand and memoized by value.
    """

    def __init__(
        self,
        cfg: OfdmConfig,
        syms: ModulationSymbols,
        t_grid: np.ndarray,
        delay_step: float,
    ) -> None:
        if delay_step <= 0:
            raise ConfigError("delay_step must be positive")
        self.cfg = cfg
        self.syms = syms
        self.t_grid = np.asarray(t_grid, dtype=np.float64)
        self.step = float(delay_step)
        self._rows: dict[int, np.ndarray] = {}
        self._exact: dict[float, np.ndarray] = {}

    def index_of(self, delay: float) -> int:
        return int(round(delay / self.step))

    def delay_of(self, index: int) -> float:
        return index * self.step

    def _synth(self, delays: np.ndarray) -> np.ndarray:
        return kernels.replica_rows(
            self.syms.symbols,
            self.cfg.subcarrier_spacing,
            self.cfg.cp_duration,
            self.cfg.symbol_extent,
            self.t_grid,
            delays,
        )

    def rows(self, indices: np.ndarray) -> np.ndarray:
        """Replica rows for fine-lattice indices, batching cache misses."""
        indices = np.asarray(indices, dtype=np.int64)
        missing = [int(i) for i in indices if int(i) not in self._rows]
        if missing:
            fresh = self._synth(np.array([self.delay_of(i) for i in missing]))
            for i, row in zip(missing, fresh):
                self._rows[i] = row
        return np.stack([self._rows[int(i)] for i in indices])

    def exact(self, delay: float) -> np.ndarray:
        """Replica at an arbitrary delay (memoized by value)."""
        row = self._exact.get(delay)
        if row is None:
            row = self._synth(np.array([delay]))[0]
            self._exact[delay] = row
        return row

    def modulated(self, path: PathParams) -> np.ndarray:
        """Unit-gain replica at the path's (delay, Doppler)."""
        rep = self.exact(path.delay)
        if path.doppler != 0.0:
            rep = rep * np.exp(2j * np.pi * path.doppler * self.t_grid)
        return rep


@dataclass(frozen=True)
class RefineGrid:
    """Local search extent around the current estimate.

    Fine step per axis is the coarse step divided by ``refine_factor``;
    half-widths are at least one coarse cell.
    """

    delay_step: float
    doppler_step: float
    refine_factor: int = 16
    delay_halfwidth: float = 0.0  # 0 -> one coarse cell
    doppler_halfwidth: float = 0.0

    def __post_init__(self) -> None:
        if self.refine_factor < 2:
            raise ConfigError(f"refine_factor must be >= 2, got {self.refine_factor}")
        if self.delay_step <= 0 or self.doppler_step <= 0:
            raise ConfigError("coarse steps must be positive")
        if self.delay_halfwidth == 0.0:
            object.__setattr__(self, "delay_halfwidth", self.delay_step)
        if self.doppler_halfwidth == 0.0:
            object.__setattr__(self, "doppler_halfwidth", self.doppler_step)
        if self.delay_halfwidth < self.delay_step * (1 - 1e-12):
            raise ConfigError("delay_halfwidth must cover at least one coarse cell")
        if self.doppler_halfwidth < self.doppler_step * (1 - 1e-12):
            raise ConfigError("doppler_halfwidth must cover at least one coarse cell")

    @classmethod
    def from_grid(
        cls, grid: DelayDopplerGrid, refine_factor: int = 16, halfwidth_cells: float = 1.0
    ) -> "RefineGrid":
        return cls(
            delay_step=grid.delay_step,
            doppler_step=grid.doppler_step,
            refine_factor=refine_factor,
            delay_halfwidth=halfwidth_cells * grid.delay_step,
            doppler_halfwidth=halfwidth_cells * grid.doppler_step,
        )

    @property
    def fine_delay_step(self) -> float:
        return self.delay_step / self.refine_factor

    @property
    def fine_doppler_step(self) -> float:
        return self.doppler_step / self.refine_factor


@dataclass
class MStepResult:
    params: PathParams
    interior: bool
    peak_power: float


def sage_e_step(
    u: np.ndarray, paths: list[PathParams], ell: int, replicas: ReplicaCache
) -> np.ndarray:
    """Purified observation: u minus every other path's reconstruction."""
    if not 0 <= ell < len(paths):
        raise ConfigError(f"path index {ell} out of range for {len(paths)} paths")
    out = np.asarray(u, dtype=np.complex128).copy()
    for x, p in enumerate(paths):
        if x == ell or p.gain == 0:
            continue
        out -= p.gain * replicas.modulated(p)
    return out


def sage_m_step(
    u_ell: np.ndarray,
    current: PathParams,
    refine: RefineGrid,
    replicas: ReplicaCache,
    quadratic_interp: bool = False,
) -> MStepResult:
    """Local (delay, Doppler) argmax of the energy-normalized correlation
    power |<u, replica>|^2 / ||replica||^2, then the amplitude update
    <u, replica> / ||replica||^2.

    The normalized power equals the per-path least-squares residual drop,
    and the candidate set always contains the current estimate, so
    accepting the argmax can never increase the per-path residual. If the
    argmax lands on the search boundary the window is doubled once; a
    second boundary hit is reported as a non-interior maximum.
    """
    u_ell = np.asarray(u_ell, dtype=np.complex128)
    t = replicas.t_grid
    step_d = refine.fine_delay_step
    step_f = refine.fine_doppler_step
    w_d = max(1, int(round(refine.delay_halfwidth / step_d)))
    w_f = max(1, int(round(refine.doppler_halfwidth / step_f)))
    interior = True
    for attempt in range(2):
        idx0 = replicas.index_of(current.delay)
        lattice = np.arange(idx0 - w_d, idx0 + w_d + 1)
        lattice = lattice[lattice >= 0]
        if lattice.size == 0:
            return MStepResult(params=current, interior=False, peak_power=0.0)
        rows = replicas.rows(lattice)
        # exact current-delay candidate first: ties prefer the fixed point
        rows = np.vstack([replicas.exact(current.delay)[None, :], rows])
        taus = np.concatenate([[current.delay], lattice * replicas.step])
        freqs = current.doppler + np.arange(-w_f, w_f + 1) * step_f
        dop = np.exp(2j * np.pi * np.outer(freqs, t))
        proj = rows.conj() * u_ell[None, :]
        corr = proj @ dop.conj().T  # corr[j, m] = <u, rep_j * dop_m>
        # normalize by the sampled replica energy: the continuous-time
        # template energy is delay-invariant, but its discrete sum ripples
        # with the fractional delay and would otherwise bias the argmax
        norms_sq = np.sum(np.abs(rows) ** 2, axis=1)
        power = np.abs(corr) ** 2
        np.divide(power, norms_sq[:, None], out=power, where=norms_sq[:, None] > 0)
        power[norms_sq == 0, :] = 0.0
        j_star, m_star = np.unravel_index(int(np.argmax(power)), power.shape)
        on_delay_edge = j_star in (1, rows.shape[0] - 1) and lattice.size > 1
        on_doppler_edge = m_star in (0, freqs.size - 1) and freqs.size > 1
        if (on_delay_edge or on_doppler_edge) and attempt == 0:
            w_d *= 2
            w_f *= 2
            continue
        interior = not (on_delay_edge or on_doppler_edge)
        break
    tau_hat = float(taus[j_star])
    f_hat = float(freqs[m_star])
    best_rep = rows[j_star]
    best_corr = corr[j_star, m_star]
    if quadratic_interp and 1 < j_star < rows.shape[0] - 1:
        y_lo, y0, y_hi = power[j_star - 1, m_star], power[j_star, m_star], power[j_star + 1, m_star]
        denom = y_lo - 2.0 * y0 + y_hi
        if denom < 0.0:
            delta = 0.5 * (y_lo - y_hi) / denom
            delta = float(np.clip(delta, -0.5, 0.5))
            tau_interp = tau_hat + delta * step_d
            if tau_interp >= 0.0:
                rep_i = replicas.exact(tau_interp)
                corr_i = np.vdot(rep_i * dop[m_star], u_ell)
                norm_i = float(np.sum(np.abs(rep_i) ** 2))
                if norm_i > 0 and np.abs(corr_i) ** 2 / norm_i >= power[j_star, m_star]:
                    tau_hat = tau_interp
                    best_rep = rep_i
                    best_corr = corr_i
    norm_sq = float(np.vdot(best_rep, best_rep).real)
    if norm_sq == 0.0:
        return MStepResult(params=current, interior=False, peak_power=0.0)
    alpha = complex(best_corr / norm_sq)
    return MStepResult(
        params=PathParams(gain=alpha, delay=tau_hat, doppler=f_hat),
        interior=interior,
        peak_power=float(np.abs(best_corr) ** 2),
    )


@dataclass(frozen=True)
class SageConfig:
    refine: RefineGrid
    tol: float = 1e-3
    max_sweeps: int = 20
    quadratic_interp: bool = True
    amplitude_floor: float = 0.0  # convergence-metric denominator floor
    divergence_patience: int = 3


@dataclass
class SageState:
    """Refinement output: per-path estimates plus convergence diagnostics."""

    paths: list[PathParams]
    iteration: int
    convergence_metric: float
    converged: bool
    residual_history: list[float] = field(default_factory=list)
    history: list[tuple] = field(default_factory=list)
    non_interior: int = 0
    diverged: bool = False


def _reconstruction_residual(u: np.ndarray, paths: list[PathParams], replicas: ReplicaCache) -> float:
    rec = np.zeros_like(u)
    for p in paths:
        if p.gain != 0:
            rec += p.gain * replicas.modulated(p)
    d = u - rec
    return float(np.vdot(d, d).real)


def sage_iterate(
    u: np.ndarray,
    init: list[PathParams],
    config: SageConfig,
    replicas: ReplicaCache,
) -> SageState:
    """Alternate E/M updates over all paths until the largest normalized
    parameter change falls below ``config.tol`` or the sweep cap hits.

    Paths are processed in descending initial amplitude. If the metric
    rises ``divergence_patience`` sweeps in a row the best-so-far state
    (minimum reconstruction residual) is returned flagged as diverged.
    """
    if not init:
        raise ConfigError("need at least one initial path")
    u = np.asarray(u, dtype=np.complex128)
    order = sorted(range(len(init)), key=lambda i: -abs(init[i].gain))
    paths = [init[i] for i in order]
    n = len(paths)
    history: list[tuple] = []
    residual_history: list[float] = []
    best_paths = list(paths)
    best_residual = np.inf
    non_interior = 0
    metric = np.inf
    prev_metric = None
    rises = 0
    converged = False
    diverged = False
    sweep = 0
    for sweep in range(1, config.max_sweeps + 1):
        metric = 0.0
        for ell in range(n):
            old = paths[ell]
            u_ell = sage_e_step(u, paths, ell, replicas)
            res = sage_m_step(u_ell, old, config.refine, replicas, config.quadratic_interp)
            if not res.interior:
                non_interior += 1
            new = res.params
            d_tau = abs(new.delay - old.delay) / config.refine.delay_step
            d_f = abs(new.doppler - old.doppler) / config.refine.doppler_step
            d_amp = abs(new.gain - old.gain)
            denom = max(abs(new.gain), config.amplitude_floor)
            d_a = 0.0 if d_amp == 0.0 else (d_amp / denom if denom > 0 else np.inf)
            metric = max(metric, d_tau + d_f + d_a)
            paths[ell] = new
        residual = _reconstruction_residual(u, paths, replicas)
        residual_history.append(residual)
        for ell, p in enumerate(paths):
            history.append((sweep, ell, p.delay, p.doppler, abs(p.gain), residual))
        if residual < best_residual:
            best_residual = residual
            best_paths = list(paths)
        if metric < config.tol:
            converged = True
            break
        if prev_metric is not None and metric > prev_metric:
            rises += 1
            if rises >= config.divergence_patience:
                paths = best_paths
                diverged = True
                break
        else:
            rises = 0
        prev_metric = metric
    return SageState(
        paths=paths,
        iteration=sweep,
        convergence_metric=metric,
        converged=converged,
        residual_history=residual_history,
        history=history,
        non_interior=non_interior,
        diverged=diverged,
    )


def select_direct_path(
    paths: list[PathParams],
    threshold_factor: float = 1.2,
    delay_origin: float = 0.0,
) -> PathParams:
    """Near-direct path choice: among paths whose delay (relative to
    ``delay_origin``) is within ``threshold_factor`` of the minimum, return
    the one with the largest amplitude; ties break toward smaller delay.

    Delays must be compared in a frame anchored near the first arrival
    (e.g. the dictionary's delay origin) for the multiplicative threshold
    to separate reflections.
    """
    if not paths:
        raise ConfigError("no paths to select from")
    rel = [p.delay - delay_origin for p in paths]
    if min(rel) < 0:
        raise ConfigError("delay_origin exceeds a path delay")
    tau_min = min(rel)
    cutoff = threshold_factor * tau_min * (1 + 1e-12)
    candidates = [p for p, r in zip(paths, rel) if r <= cutoff]
    return min(candidates, key=lambda p: (-abs(p.gain), p.delay))


def amplitude_series(
    cube_samples: np.ndarray, path: PathParams, replicas: ReplicaCache
) -> np.ndarray:
    """Per-pulse complex amplitude of one path across the whole cube.

    Matched-filter projection <u_i, replica> / ||replica||^2 per slow-time
    column; this is the slow-time response used to rebuild a clean cube
    from a selected path.
    """
    rep = replicas.modulated(path)
    norm_sq = float(np.vdot(rep, rep).real)
    if norm_sq == 0.0:
        raise ConfigError("replica has no support on the cube's time grid")
    return (rep.conj() @ np.asarray(cube_samples, dtype=np.complex128)) / norm_sq


def noise_amplitude_sigma(noise_power: float, path: PathParams, replicas: ReplicaCache) -> float:
    """Standard deviation of the matched-filter amplitude under pure noise."""
    rep = replicas.modulated(path)
    norm = float(np.linalg.norm(rep))
    if norm == 0.0:
        return np.inf
    return float(np.sqrt(noise_power) / norm)


def write_history_csv(path, state: SageState) -> None:
    """Per-sweep refinement history as CSV."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sweep", "path_index", "delay_s", "doppler_hz", "abs_gain", "residual_energy"])
        for row in state.history:
            w.writerow([row[0], row[1]] + [repr(float(v)) for v in row[2:]])
