"""Kinetic Monte Carlo engine."""
from .engine import (Channel, EnsembleResult, KmcConfig, KmcState, ProtocolSegment, RateTable,
                     SeedInjection, StepResult, TrajectoryResult, apply_event, build_channels,
                     kmc_step, run_ensemble, run_protocol)
from .geometry import neighbor_table, sample_geometry, sample_velocities

__all__ = [
    "Channel", "EnsembleResult", "KmcConfig", "KmcState", "ProtocolSegment", "RateTable",
    "SeedInjection", "StepResult", "TrajectoryResult", "apply_event", "build_channels",
    "kmc_step", "run_ensemble", "run_protocol", "neighbor_table", "sample_geometry",
    "sample_velocities",
]
