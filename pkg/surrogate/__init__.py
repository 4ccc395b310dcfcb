# surrogate/__init__.py
from .netgraph import (
    Edge, NetworkGraph, RouteSet, ZonePartition, load_network, assign_edge_zones,
    build_static_routes, grid_network, grid_partition, grid_neighbors
)
from .mfd import (
    EdgeFlowSeries, FlowBin, ZoneHourState, ODTravelTimeTable, PerturbationSpec,
    load_flows, zone_lane_km, aggregate_zone_hour, build_zone_speeds, build_od_table,
    query_travel_time, perturb_table, synthetic_flows
)

__all__ = [
    'Edge', 'NetworkGraph', 'RouteSet', 'ZonePartition', 'load_network', 'assign_edge_zones',
    'build_static_routes', 'grid_network', 'grid_partition', 'grid_neighbors',
    'EdgeFlowSeries', 'FlowBin', 'ZoneHourState', 'ODTravelTimeTable', 'PerturbationSpec',
    'load_flows', 'zone_lane_km', 'aggregate_zone_hour', 'build_zone_speeds', 'build_od_table',
    'query_travel_time', 'perturb_table', 'synthetic_flows'
]
