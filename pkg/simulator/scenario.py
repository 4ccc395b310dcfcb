# simulator/scenario.py - Blocco scenario del config → SimConfig, tabella OD e ambiente
import os
from dataclasses import dataclass, field, fields, replace
from typing import Dict, Mapping, Optional

import numpy as np

from config_rastmoe import DEMAND_CONFIG, SCENARIO_DEFAULTS
from simulator.env import RideHailingEnv, SimConfig
from simulator.reward import RewardConfig
from surrogate.mfd import ODTravelTimeTable, PerturbationSpec, perturb_table
from surrogate.netgraph import NetworkGraph
from utils.errors import ConfigError

SIM_KEYS = {f.name for f in fields(SimConfig)} - {'passenger_rates', 'driver_rates', 'od_probs'}
SCENARIO_SECTIONS = {'demand', 'network', 'flows', 'table'}


@dataclass
class Scenario:
    sim: SimConfig
    table: ODTravelTimeTable
    graph: Optional[NetworkGraph] = None
    meta: Dict = field(default_factory=dict)

    def make_env(self, reward_config: Optional[RewardConfig] = None,
                 perturbation: Optional[PerturbationSpec] = None,
                 perturbation_seed: Optional[int] = None, **overrides) -> RideHailingEnv:
        """Ambiente sullo scenario; perturbation genera una tabella nuova senza toccare quella base"""
        table = self.table
        if perturbation is not None:
            seed = perturbation.seed if perturbation.seed is not None else perturbation_seed
            table = perturb_table(table, perturbation, np.random.default_rng(seed), self.graph)
        sim = self.sim
        if overrides:
            sim = replace(sim, **overrides)
        return RideHailingEnv(sim, table, reward_config)


def _resolve(path: str, base_dir: Optional[str]) -> str:
    if base_dir and not os.path.isabs(path) and not os.path.exists(path):
        return os.path.join(base_dir, path)
    return path


def build_table(block: Mapping, grid_h: int, grid_w: int, base_dir: Optional[str] = None):
    """
    Tabella OD dello scenario: file già costruito, rete da file + flussi, o
    griglia sintetica con flussi a picchi.

    Returns:
        (ODTravelTimeTable, NetworkGraph o None)
    """
    from processors.surrogate_builder import SurrogateBuilder, build_grid_surrogate, build_surrogate
    from surrogate.mfd import synthetic_flows
    from surrogate.netgraph import load_network

    if 'table' in block:
        return ODTravelTimeTable.load(_resolve(block['table'], base_dir)), None

    network = dict(block.get('network', {'kind': 'grid'}))
    flows = dict(block.get('flows', {'kind': 'synthetic'}))
    weight_mode = network.pop('weight_mode', None)

    if network.get('kind', 'grid') == 'grid':
        if flows.get('kind', 'synthetic') != 'synthetic':
            raise ConfigError("a grid network needs synthetic flows")
        flow_params = {k: v for k, v in flows.items() if k != 'kind'}
        result = build_grid_surrogate(grid_h, grid_w, network.get('cell_km', DEMAND_CONFIG['cell_km']),
                                      network.get('lanes', 2), weight_mode, **flow_params)
    elif flows.get('kind') == 'synthetic':
        graph = load_network(_resolve(network['edges'], base_dir),
                             _resolve(network['nodes'], base_dir) if 'nodes' in network else None)
        flow_params = {k: v for k, v in flows.items() if k != 'kind'}
        result = SurrogateBuilder(weight_mode).build(graph, synthetic_flows(graph, **flow_params))
    else:
        result = build_surrogate(
            _resolve(network['edges'], base_dir), _resolve(flows['path'], base_dir),
            weight_mode=weight_mode,
            nodes_path=_resolve(network['nodes'], base_dir) if 'nodes' in network else None,
        )

    table = result['table']
    if table.n_zones != grid_h * grid_w:
        raise ConfigError(f"network has {table.n_zones} zones, scenario grid has {grid_h * grid_w}")
    return table, result['graph']


def build_demand(block: Mapping, grid_h: int, grid_w: int, base_dir: Optional[str] = None):
    from processors.demand import DemandProfiles, demand_profiles

    demand = dict(block.get('demand', {'preset': 'two_peak'}))
    if 'profiles' in demand:
        return DemandProfiles.load(_resolve(demand['profiles'], base_dir))
    if 'passenger_rates' in demand:
        rates = np.asarray(demand['passenger_rates'], dtype=np.float64)
        drivers = demand.get('driver_rates')
        return DemandProfiles(
            passenger_rates=rates,
            driver_rates=np.asarray(drivers) if drivers is not None
            else demand.get('driver_multiple', DEMAND_CONFIG['driver_multiple']) * rates,
            od_probs=np.asarray(demand['od_probs']) if 'od_probs' in demand
            else np.full((grid_h * grid_w,) * 2, 1.0 / (grid_h * grid_w)),
        )
    preset = demand.pop('preset', 'two_peak')
    seed = demand.pop('seed', 0)
    driver_multiple = demand.pop('driver_multiple', DEMAND_CONFIG['driver_multiple'])
    return demand_profiles(preset, grid_h, grid_w, seed, demand, driver_multiple)


def build_scenario(block: Mapping, base_dir: Optional[str] = None) -> Scenario:
    """
    Assembla lo scenario dal blocco `scenario` del training config.

    Args:
        block: Chiavi di SimConfig più le sezioni demand / network / flows / table
        base_dir: Directory per risolvere i path relativi

    Returns:
        Scenario con SimConfig validato e tabella OD
    """
    unknown = set(block) - SIM_KEYS - SCENARIO_SECTIONS - {'grid_h', 'grid_w'}
    if unknown:
        raise ConfigError(f"unknown scenario keys: {sorted(unknown)}")

    values = {**SCENARIO_DEFAULTS, **{k: v for k, v in block.items() if k in SIM_KEYS}}
    grid_h, grid_w = int(values['grid_h']), int(values['grid_w'])
    if 'start_hours' in values:
        values['start_hours'] = tuple(values['start_hours'])

    profiles = build_demand(block, grid_h, grid_w, base_dir)
    table, graph = build_table(block, grid_h, grid_w, base_dir)

    sim = SimConfig(
        passenger_rates=profiles.passenger_rates,
        driver_rates=profiles.driver_rates,
        od_probs=profiles.od_probs,
        **values,
    )
    return Scenario(sim, table, graph, meta={'demand': profiles.meta, 'table_hash': table.build_hash})
