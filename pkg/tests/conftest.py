import numpy as np
import pytest

from isacsar.harness import ChannelConfig, Scenario
from isacsar.scene import GroundTarget, PlatformTrajectory
from isacsar.waveform import ModulationSymbols, OfdmConfig

DESK_BANDWIDTH = 400e6


@pytest.fixture(scope="session")
def desk_cfg() -> OfdmConfig:
    return OfdmConfig(
        carrier_freq=26e9,
        subcarrier_count=256,
        subcarrier_spacing=DESK_BANDWIDTH / 256,
        cp_duration=32 / DESK_BANDWIDTH,
    )


@pytest.fixture(scope="session")
def small_cfg() -> OfdmConfig:
    return OfdmConfig(
        carrier_freq=26e9,
        subcarrier_count=64,
        subcarrier_spacing=DESK_BANDWIDTH / 64,
        cp_duration=16 / DESK_BANDWIDTH,
    )


@pytest.fixture(scope="session")
def desk_syms(desk_cfg) -> ModulationSymbols:
    return ModulationSymbols.qpsk(desk_cfg.subcarrier_count, seed=7)


@pytest.fixture(scope="session")
def small_syms(small_cfg) -> ModulationSymbols:
    return ModulationSymbols.qpsk(small_cfg.subcarrier_count, seed=7)


@pytest.fixture(scope="session")
def desk_traj() -> PlatformTrajectory:
    return PlatformTrajectory(altitude=1000.0, velocity=40.0, prf=800.0, num_pulses=128)


def desk_scenario(
    scenario_id: str,
    channel: ChannelConfig,
    snr_db=(15.0,),
    seeds=(0,),
    methods=("raw", "sage_only", "omp_sage"),
    num_pulses: int = 128,
    **kwargs,
) -> Scenario:
    return Scenario(
        id=scenario_id,
        ofdm=OfdmConfig(
            carrier_freq=26e9,
            subcarrier_count=256,
            subcarrier_spacing=DESK_BANDWIDTH / 256,
            cp_duration=32 / DESK_BANDWIDTH,
        ),
        trajectory=PlatformTrajectory(
            altitude=1000.0, velocity=40.0, prf=800.0, num_pulses=num_pulses
        ),
        aperture=1.0,
        targets=[GroundTarget(x=1000.0, y=0.0)],
        channel=channel,
        snr_db=list(snr_db),
        seeds=list(seeds),
        methods=list(methods),
        **kwargs,
    )


def scripted_nlos_channel(**overrides) -> ChannelConfig:
    """Fixed-magnitude NLOS fixture: strongest path is a late reflection."""
    base = dict(
        kind="nlos",
        num_paths=3,
        direct_attenuation_db=14.0,
        doppler_spread_hz=200.0,
        gain_model="fixed",
        reflection_powers_db=(0.0, -4.0),
        fixed_excess_cells=(4.0, 8.0),
    )
    base.update(overrides)
    return ChannelConfig(**base)
