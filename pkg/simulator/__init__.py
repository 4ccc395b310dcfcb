# simulator/__init__.py
from .reward import (
    RewardConfig, MultiplierState, RewardBreakdown, parse_ratio, incremental_waits,
    congestion_weight, is_late, violation_fraction, compute_reward, update_multiplier
)
from .env import PassengerRequest, Driver, Assignment, SimConfig, SimState, RideHailingEnv
from .scenario import Scenario, build_scenario

__all__ = [
    'RewardConfig', 'MultiplierState', 'RewardBreakdown', 'parse_ratio', 'incremental_waits',
    'congestion_weight', 'is_late', 'violation_fraction', 'compute_reward', 'update_multiplier',
    'PassengerRequest', 'Driver', 'Assignment', 'SimConfig', 'SimState', 'RideHailingEnv',
    'Scenario', 'build_scenario',
]
