"""Desk-scale OFDM ISAC-SAR simulation lab.

Pipeline: OFDM/pilot waveform synthesis -> parametric multipath echo
rendering along a moving platform -> two-stage delay-Doppler estimation
(greedy pursuit, then per-path EM refinement and near-direct path
selection) -> SAR image formation with quantitative quality metrics.
"""

from .errors import ConfigError, ResourceError
from .kernels import BACKEND as KERNEL_BACKEND
from .waveform import BasebandSignal, ModulationSymbols, OfdmConfig, generate_ofdm_symbol, sample_replica
from .scene import (
    AntennaPattern,
    EchoCube,
    GroundTarget,
    NlosChannelSpec,
    PathParams,
    PlatformTrajectory,
    render_echo,
    synthesize_channel,
)
from .omp import DelayDopplerGrid, Dictionary, SparseEstimate, build_dictionary, omp_run
from .sage import RefineGrid, ReplicaCache, SageConfig, SageState, sage_iterate, select_direct_path
from .imaging import ImageMetrics, SarImage, azimuth_compress, compute_metrics, range_compress_zf
from .harness import Scenario, RunRecord, build_context, run_scenario, sweep_and_aggregate

__version__ = "0.1.0"

__all__ = [
    "AntennaPattern",
    "BasebandSignal",
    "ConfigError",
    "DelayDopplerGrid",
    "Dictionary",
    "EchoCube",
    "GroundTarget",
    "ImageMetrics",
    "KERNEL_BACKEND",
    "ModulationSymbols",
    "NlosChannelSpec",
    "OfdmConfig",
    "PathParams",
    "PlatformTrajectory",
    "RefineGrid",
    "ReplicaCache",
    "ResourceError",
    "RunRecord",
    "SageConfig",
    "SageState",
    "SarImage",
    "Scenario",
    "SparseEstimate",
    "build_context",
    "build_dictionary",
    "compute_metrics",
    "azimuth_compress",
    "generate_ofdm_symbol",
    "omp_run",
    "range_compress_zf",
    "render_echo",
    "run_scenario",
    "sage_iterate",
    "sample_replica",
    "select_direct_path",
    "sweep_and_aggregate",
    "synthesize_channel",
    "__version__",
]
