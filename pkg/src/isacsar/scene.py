"""Platform geometry, parametric multipath channels and echo synthesis.

The channel generator replaces a full ray-traced simulator with an exactly
known parametric model: a (possibly attenuated) near-direct path plus
reflections with exponentially distributed excess delays, seeded complex
gains and bounded uniform Doppler offsets. Exact ground truth makes every
downstream estimator testable against oracles.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import csv

import numpy as np

from . import kernels
from .constants import SPEED_OF_LIGHT as C0
from .errors import ConfigError
from .waveform import ModulationSymbols, OfdmConfig


@dataclass(frozen=True)
class PlatformTrajectory:
    """Straight, level flight along the y axis at constant speed."""

    altitude: float
    velocity: float
    prf: float
    num_pulses: int

    def __post_init__(self) -> None:
        if self.altitude <= 0 or self.velocity <= 0 or self.prf <= 0:
            raise ConfigError("altitude, velocity and prf must be positive")
        if self.num_pulses < 1:
            raise ConfigError("num_pulses must be >= 1")

    def slow_time(self) -> np.ndarray:
        """Pulse timestamps eta_i = (i - num_pulses/2) / prf."""
        i = np.arange(self.num_pulses)
        return (i - self.num_pulses / 2.0) / self.prf


@dataclass(frozen=True)
class GroundTarget:
    """Point scatterer at (x, y, 0) with complex reflectivity."""

    x: float
    y: float
    rcs: complex = 1.0 + 0.0j

    def broadside_range(self, traj: PlatformTrajectory) -> float:
        """Slant range at the target's closest approach."""
        return float(np.hypot(self.x, traj.altitude))


@dataclass(frozen=True)
class AntennaPattern:
    """Azimuth aperture model; beamwidth = 0.886 * wavelength / aperture."""

    wavelength: float
    aperture: float

    def __post_init__(self) -> None:
        if self.aperture <= 0 or self.wavelength <= 0:
            raise ConfigError("aperture and wavelength must be positive")

    @property
    def beamwidth(self) -> float:
        return 0.886 * self.wavelength / self.aperture


@dataclass(frozen=True)
class PathParams:
    """One propagation path: complex gain, two-way delay, Doppler shift."""

    gain: complex
    delay: float
    doppler: float

    def __post_init__(self) -> None:
        if self.delay < 0:
            raise ConfigError(f"path delay must be >= 0, got {self.delay:g}")
        if not (np.isfinite(self.gain) and np.isfinite(self.delay) and np.isfinite(self.doppler)):
            raise ConfigError("path parameters must be finite")


@dataclass
class EchoCube:
    """Complex fast-time x slow-time sample matrix with its time axes."""

    samples: np.ndarray
    t0: np.ndarray
    dt: float
    noise_power: float = 0.0
    direct_power: float = 0.0

    def __post_init__(self) -> None:
        if not np.all(np.isfinite(self.samples)):
            raise ConfigError("echo cube contains non-finite samples")
        if self.t0.shape[0] != self.samples.shape[1]:
            raise ConfigError("one fast-time origin required per pulse")

    @property
    def n_fast(self) -> int:
        return int(self.samples.shape[0])

    @property
    def n_slow(self) -> int:
        return int(self.samples.shape[1])

    def time_grid(self, pulse: int = 0) -> np.ndarray:
        return self.t0[pulse] + np.arange(self.n_fast) * self.dt


def sinc(x: np.ndarray | float) -> np.ndarray | float:
    """Unnormalized sinc: sin(x)/x with sinc(0) = 1."""
    return np.sinc(np.asarray(x) / np.pi)


def slant_range(traj: PlatformTrajectory, tgt: GroundTarget, eta: np.ndarray | float):
    """Instantaneous slant range sqrt(Rb^2 + v^2 (eta - eta_c)^2).

    Rb = sqrt(x^2 + altitude^2) is the broadside (closest-approach) range;
    the target's along-track coordinate y sets the closest-approach time
    eta_c = y / velocity, so a target at y = 0 is broadside at eta = 0.
    """
    rb = np.hypot(tgt.x, traj.altitude)
    eta_c = tgt.y / traj.velocity
    d = np.asarray(eta, dtype=np.float64) - eta_c
    return np.sqrt(rb * rb + (traj.velocity * d) ** 2)


def incidence_angle(traj: PlatformTrajectory, tgt: GroundTarget, eta):
    """Angle off broadside seen from the platform, positive ahead."""
    rb = np.hypot(tgt.x, traj.altitude)
    eta_c = tgt.y / traj.velocity
    d = np.asarray(eta, dtype=np.float64) - eta_c
    return np.arctan2(traj.velocity * d, rb)


def azimuth_envelope(pat: AntennaPattern, theta):
    """Two-way azimuth gain sinc(0.886 theta / beamwidth)^2, in [0, 1]."""
    return sinc(0.886 * np.asarray(theta) / pat.beamwidth) ** 2


@dataclass(frozen=True)
class NlosChannelSpec:
    """Parametric multipath description anchored on the direct-path delay.

    Path 1 is the near-direct path at ``direct_delay`` attenuated by
    ``direct_attenuation_db``; the remaining ``num_paths - 1`` reflections
    draw excess delays from ``min_excess + Exp(excess_scale)`` clipped to
    ``max_excess``, per-path Doppler offsets from U(-doppler_spread,
    +doppler_spread) and complex gains per ``gain_model``:

    - ``"rayleigh"``: complex Gaussian with mean power set by
      ``reflection_powers_db`` (dB relative to the unattenuated direct path)
      minus ``gain_decay_db_per_us`` times the excess delay;
    - ``"fixed"``: deterministic magnitude at that power, random phase
      (for scripted fixtures that must behave identically on every seed).
    """

    num_paths: int
    direct_delay: float
    direct_attenuation_db: float = 0.0
    excess_scale: float = 0.0
    min_excess: float = 0.0
    max_excess: float = 0.0
    doppler_spread: float = 0.0
    gain_model: str = "rayleigh"
    reflection_powers_db: tuple[float, ...] | None = None
    gain_decay_db_per_us: float = 0.0
    fixed_excess: tuple[float, ...] | None = None  # scripted excess delays [s]
    min_separation: float = 0.0  # smallest spacing between reflection delays [s]

    def __post_init__(self) -> None:
        if self.num_paths < 1:
            raise ConfigError(f"num_paths must be >= 1, got {self.num_paths}")
        if self.direct_delay < 0:
            raise ConfigError("direct_delay must be >= 0")
        if self.gain_model not in ("rayleigh", "fixed"):
            raise ConfigError(f"unknown gain_model {self.gain_model!r}")
        if self.num_paths > 1:
            if self.fixed_excess is not None:
                if len(self.fixed_excess) != self.num_paths - 1:
                    raise ConfigError("fixed_excess must list one delay per reflection")
                if min(self.fixed_excess) <= 0:
                    raise ConfigError("fixed excess delays must be > 0")
            else:
                if self.min_excess <= 0:
                    raise ConfigError("min_excess must be > 0 for multipath specs")
                if self.max_excess < self.min_excess:
                    raise ConfigError("max_excess must be >= min_excess")
                if self.excess_scale < 0:
                    raise ConfigError("excess_scale must be >= 0")
            if self.doppler_spread < 0:
                raise ConfigError("doppler_spread must be >= 0")
            if self.reflection_powers_db is not None and len(self.reflection_powers_db) != self.num_paths - 1:
                raise ConfigError("reflection_powers_db must list one power per reflection")

    @property
    def excess_budget(self) -> float:
        """Largest excess delay any realization can produce."""
        if self.num_paths == 1:
            return 0.0
        if self.fixed_excess is not None:
            return max(self.fixed_excess)
        return self.max_excess


def los_channel(direct_delay: float) -> NlosChannelSpec:
    """Single unattenuated direct path."""
    return NlosChannelSpec(num_paths=1, direct_delay=direct_delay)


def synthesize_channel(spec: NlosChannelSpec, rng) -> list[PathParams]:
    """Draw one channel realization; index 0 is always the minimum-delay path.

    ``rng`` may be an integer seed or a ``numpy.random.Generator``. The same
    seed always yields the identical path list.
    """
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    amp = 10.0 ** (-spec.direct_attenuation_db / 20.0)
    phase = rng.uniform(0.0, 2.0 * np.pi)
    paths = [PathParams(gain=amp * np.exp(1j * phase), delay=spec.direct_delay, doppler=0.0)]
    reflections = []
    drawn: list[float] = []
    for r in range(spec.num_paths - 1):
        if spec.fixed_excess is not None:
            excess = spec.fixed_excess[r]
        else:
            for _ in range(200):
                excess = spec.min_excess + rng.exponential(spec.excess_scale)
                excess = min(excess, spec.max_excess)
                if all(abs(excess - e) >= spec.min_separation for e in drawn):
                    break
            else:
                raise ConfigError(
                    "could not draw reflection delays honoring min_separation; "
                    "widen the excess-delay range or lower the separation"
                )
            drawn.append(excess)
        p_db = 0.0 if spec.reflection_powers_db is None else spec.reflection_powers_db[r]
        p_db -= spec.gain_decay_db_per_us * excess * 1e6
        power = 10.0 ** (p_db / 10.0)
        if spec.gain_model == "rayleigh":
            gain = np.sqrt(power / 2.0) * (rng.standard_normal() + 1j * rng.standard_normal())
        else:
            gain = np.sqrt(power) * np.exp(1j * rng.uniform(0.0, 2.0 * np.pi))
        doppler = rng.uniform(-spec.doppler_spread, spec.doppler_spread) if spec.doppler_spread else 0.0
        reflections.append(PathParams(gain=gain, delay=spec.direct_delay + excess, doppler=doppler))
    reflections.sort(key=lambda p: p.delay)
    return paths + reflections


def build_paths_per_pulse(
    traj: PlatformTrajectory,
    target: GroundTarget,
    template: list[PathParams],
    wavelength: float,
) -> list[list[PathParams]]:
    """Geometry-shift a broadside channel template along the aperture.

    All delays in ``template`` are anchored at the target's closest
    approach; per pulse they shift by the two-way range increment and gain
    the geometric Doppler of the platform motion.
    """
    eta = traj.slow_time()
    rb = np.hypot(target.x, traj.altitude)
    r_eta = slant_range(traj, target, eta)
    shift = 2.0 * (r_eta - rb) / C0
    eta_c = target.y / traj.velocity
    f_geo = -2.0 * traj.velocity**2 * (eta - eta_c) / (wavelength * r_eta)
    out = []
    for i in range(traj.num_pulses):
        out.append(
            [
                replace(p, delay=p.delay + shift[i], doppler=p.doppler + f_geo[i])
                for p in template
            ]
        )
    return out


def effective_paths_per_pulse(
    traj: PlatformTrajectory,
    pattern: AntennaPattern,
    target: GroundTarget,
    paths_per_pulse: list[list[PathParams]],
    carrier_freq: float,
    carrier_phase: str = "explicit",
) -> list[list[PathParams]]:
    """Fold reflectivity, azimuth envelope and carrier phase into gains.

    With ``carrier_phase="explicit"`` each path gain is multiplied by
    exp(-j 2 pi f_c tau), the two-way carrier rotation for its own delay;
    this is the slow-time phase history that azimuth compression relies
    on. With ``"folded"`` the rotation is assumed to already live in the
    channel gains and is not applied.
    """
    if carrier_phase not in ("explicit", "folded"):
        raise ConfigError(f"unknown carrier_phase mode {carrier_phase!r}")
    eta = traj.slow_time()
    env = azimuth_envelope(pattern, incidence_angle(traj, target, eta))
    out = []
    for i, paths in enumerate(paths_per_pulse):
        factor = target.rcs * env[i]
        row = []
        for p in paths:
            g = p.gain * factor
            if carrier_phase == "explicit":
                g = g * np.exp(-2j * np.pi * carrier_freq * p.delay)
            row.append(replace(p, gain=g))
        out.append(row)
    return out


def render_echo(
    cfg: OfdmConfig,
    syms: ModulationSymbols,
    traj: PlatformTrajectory,
    pattern: AntennaPattern,
    targets: list[GroundTarget],
    paths_per_pulse: list[list[list[PathParams]]],
    snr_db: float | None,
    seed: int,
    *,
    carrier_phase: str = "explicit",
    window: tuple[float, int] | None = None,
    noise_power: float | None = None,
    guard_samples: int = 10,
) -> EchoCube:
    """Render the received fast-time x slow-time echo cube.

    ``paths_per_pulse`` holds, per target, the per-pulse channel path lists
    (see ``build_paths_per_pulse``). Each path contributes
    gain * envelope * carrier-phase * s(t - tau) * exp(j 2 pi f_d t); white
    complex Gaussian noise is scaled so the per-sample SNR over the
    direct-path support equals ``snr_db``. ``snr_db=None`` (or +inf)
    disables noise; ``noise_power`` overrides the calibration with an
    explicit variance. The noise stream is split per pulse from the master
    seed, so any parallel rendering order is bit-identical to serial.
    """
    if len(targets) != len(paths_per_pulse):
        raise ConfigError("need one per-pulse path list per target")
    eff = [
        effective_paths_per_pulse(traj, pattern, t, ppp, cfg.carrier_freq, carrier_phase)
        for t, ppp in zip(targets, paths_per_pulse)
    ]
    extent = cfg.symbol_extent
    dt = cfg.dt
    all_delays = [p.delay for tgt_paths in eff for pulse in tgt_paths for p in pulse]
    if window is None:
        if all_delays:
            lo, hi = min(all_delays), max(all_delays)
        else:
            lo = hi = 0.0
        t_start = (np.floor(lo / dt) - guard_samples) * dt
        t_start = max(t_start, 0.0)
        n_fast = int(np.ceil((hi + extent - t_start) / dt)) + guard_samples
    else:
        t_start, n_fast = window
        t_end = t_start + n_fast * dt
        for tau in all_delays:
            if tau < t_start or tau + extent > t_end:
                raise ConfigError(
                    f"echo support [{tau:g}, {tau + extent:g}] s exceeds fast-time "
                    f"window [{t_start:g}, {t_end:g}] s (offending delay {tau:g} s)"
                )
    t = t_start + np.arange(n_fast) * dt
    n_slow = traj.num_pulses
    cube = np.zeros((n_fast, n_slow), dtype=np.complex128)
    direct_power_acc = []
    for i in range(n_slow):
        pulse_paths = [p for tgt_paths in eff for p in tgt_paths[i]]
        if pulse_paths:
            delays = np.array([p.delay for p in pulse_paths])
            gains = np.array([p.gain for p in pulse_paths])
            dops = np.array([p.doppler for p in pulse_paths])
            rows = kernels.replica_rows(
                syms.symbols, cfg.subcarrier_spacing, cfg.cp_duration, extent, t, delays
            )
            rows = rows * np.exp(2j * np.pi * np.outer(dops, t))
            cube[:, i] = gains @ rows
            # direct-path-only contribution (path index 0 of every target)
            direct = np.zeros(n_fast, dtype=np.complex128)
            k = 0
            for tgt_paths in eff:
                n_paths = len(tgt_paths[i])
                if n_paths:
                    direct += gains[k] * rows[k]
                k += n_paths
            mask = np.abs(direct) > 0
            if np.any(mask):
                direct_power_acc.append(float(np.mean(np.abs(direct[mask]) ** 2)))
    direct_power = float(np.mean(direct_power_acc)) if direct_power_acc else 0.0
    if noise_power is not None:
        sigma2 = float(noise_power)
    elif snr_db is None or np.isinf(snr_db):
        sigma2 = 0.0
    else:
        if direct_power == 0.0:
            raise ConfigError("cannot calibrate SNR without a direct-path signal; "
                              "pass noise_power explicitly")
        sigma2 = direct_power * 10.0 ** (-snr_db / 10.0)
    if sigma2 > 0.0:
        streams = np.random.SeedSequence(seed).spawn(n_slow)
        s = np.sqrt(sigma2 / 2.0)
        for i in range(n_slow):
            g = np.random.default_rng(streams[i])
            cube[:, i] += s * (g.standard_normal(n_fast) + 1j * g.standard_normal(n_fast))
    return EchoCube(
        samples=cube,
        t0=np.full(n_slow, t_start),
        dt=dt,
        noise_power=sigma2,
        direct_power=direct_power,
    )


def write_truth_csv(path, effective: list[list[PathParams]]) -> None:
    """Ground-truth per-pulse effective paths as CSV rows."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["pulse_index", "path_index", "re_gain", "im_gain", "delay_s", "doppler_hz"])
        for i, pulse in enumerate(effective):
            for ell, p in enumerate(pulse):
                w.writerow(
                    [i, ell]
                    + [repr(float(v)) for v in (p.gain.real, p.gain.imag, p.delay, p.doppler)]
                )
