"""Joint offloading, ISAC beamforming and resource allocation for cell-free ICCS networks."""

from .scenario import (ChannelSet, Geometry, InvalidParameterError, PathLossParams,
                       ScenarioConfig, make_scenario)
from .metrics import (BeamformerSet, Instance, LatencyReport, OffloadMatrix,
                      ResourcePlan, State, TaskParams)

__all__ = [
    "BeamformerSet", "ChannelSet", "Geometry", "Instance", "InvalidParameterError",
    "LatencyReport", "OffloadMatrix", "PathLossParams", "ResourcePlan",
    "ScenarioConfig", "State", "TaskParams", "make_scenario",
]
