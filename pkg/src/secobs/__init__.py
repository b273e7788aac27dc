"""Attack-resilient multi-observer state estimation for sampled Lur'e systems.

The package covers the full pipeline: plant and grid modelling, sampled
measurement channels with sensor attacks, the super/sub observer bank with
zero-order-hold innovations, LMI-based gain synthesis with certificates,
numerical certificate verification, and scenario simulation.
"""

__version__ = "0.1.0"

from .nonlinearity import Affine, DeadZone, DeadZoneParams, Tabulated, dead_zone_phi, saturation_limit, sector_check
from .lure import GridTopology, LureSystem, build_lure_from_grid, disturbance_o, plant_derivative, voltage_from_state
from .channel import AttackScenario, MeasurementPacket, SamplingSchedule, attack_value, emit_packet, sample_times, validate_attack
from .bank import ObserverBank, SensorSubset, consistency_measures, enumerate_subsets, restrict_rows, restrict_vec, select_estimate

__all__ = [
    "Affine",
    "AttackScenario",
    "DeadZone",
    "DeadZoneParams",
    "GridTopology",
    "LureSystem",
    "MeasurementPacket",
    "ObserverBank",
    "SamplingSchedule",
    "SensorSubset",
    "Tabulated",
    "attack_value",
    "build_lure_from_grid",
    "consistency_measures",
    "dead_zone_phi",
    "disturbance_o",
    "emit_packet",
    "enumerate_subsets",
    "plant_derivative",
    "restrict_rows",
    "restrict_vec",
    "sample_times",
    "saturation_limit",
    "sector_check",
    "select_estimate",
    "validate_attack",
    "voltage_from_state",
]
