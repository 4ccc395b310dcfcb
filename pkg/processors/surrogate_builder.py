# processors/surrogate_builder.py - Pipeline build-surrogate: rete → route statiche → velocità MFD → tabella OD
import os
from pathlib import Path
from typing import Dict, Mapping, Optional

import pandas as pd

from surrogate.mfd import (
    EdgeFlowSeries, build_od_table, build_zone_speeds,
    edge_speed_average, load_flows, synthetic_flows
)
from surrogate.netgraph import NetworkGraph, build_static_routes, load_network


class SurrogateBuilder:
    """
    Costruisce il surrogato dei tempi di viaggio una volta sola, prima del training.
    Tiene traccia di zone vuote e fallback come warning ispezionabili.
    """

    def __init__(self, weight_mode: Optional[str] = None, intra_zone_km: Optional[float] = None):
        from config_rastmoe import MFD_CONFIG, NETWORK_CONFIG
        self.weight_mode = weight_mode or NETWORK_CONFIG['weight_mode']
        self.mfd_config = dict(MFD_CONFIG)
        if intra_zone_km is not None:
            self.mfd_config['intra_zone_km'] = intra_zone_km
        self.warnings = []

    def build(self, graph: NetworkGraph, series: Mapping[str, EdgeFlowSeries]) -> Dict:
        """
        Esegue routing statico, aggregazione zona-ora e tabella OD.

        Returns:
            Dict con 'graph', 'routes', 'speeds', 'states', 'table', 'fallbacks', 'warnings'
        """
        routes = build_static_routes(graph, self.weight_mode)
        speeds, states = build_zone_speeds(
            graph, series, self.mfd_config['density_eps'], self.mfd_config['fallback_speed_kmh']
        )
        fallbacks = [(s.zone, s.hour) for s in states if s.fallback]
        if fallbacks:
            self.warnings.append(f"{len(fallbacks)} zone-hours use the fallback speed")
            print(f"⚠️ {len(fallbacks)} zone-ore senza veicoli: velocità di fallback "
                  f"{self.mfd_config['fallback_speed_kmh']} km/h")

        table = build_od_table(routes, speeds, self.mfd_config['intra_zone_km'])
        print(f"✅ Tabella OD: {graph.zones} zone, {len(routes.od_pairs)} route × 24 ore "
              f"(hash {table.build_hash})")
        return {
            'graph': graph,
            'routes': routes,
            'speeds': speeds,
            'states': states,
            'series': series,
            'table': table,
            'fallbacks': fallbacks,
            'warnings': list(self.warnings),
        }

    def zone_hour_frame(self, result: Dict) -> pd.DataFrame:
        """Stati zona-ora con la media naive delle velocità d'arco a confronto"""
        graph, series = result['graph'], result['series']
        rows = []
        for state in result['states']:
            rows.append({
                'zone': state.zone,
                'hour': state.hour,
                'lane_km': state.lane_km,
                'veh_hours': state.veh_hours,
                'veh_km': state.veh_km,
                'density': state.density,
                'flow': state.flow,
                'speed_kmh': state.speed,
                'edge_speed_avg_kmh': edge_speed_average(graph, series, state.zone, state.hour),
                'fallback': state.fallback,
            })
        return pd.DataFrame(rows)

    def save(self, result: Dict, out_path) -> Dict[str, str]:
        """Salva tabella, route e diagnostica zona-ora accanto a out_path"""
        out_path = Path(out_path)
        stem = out_path.with_suffix('')
        paths = {
            'table': str(result['table'].save(out_path)),
            'routes': str(result['routes'].save(f"{stem}_routes.json")),
        }
        zone_hours = f"{stem}_zone_hours.csv"
        self.zone_hour_frame(result).to_csv(zone_hours, index=False, encoding='utf-8')
        paths['zone_hours'] = zone_hours

        print(f"💾 Surrogato salvato in {os.path.dirname(paths['table']) or '.'}/")
        for key, path in paths.items():
            print(f"  • {key}: {os.path.basename(path)}")
        return paths


def build_surrogate(network_path, flows_path, out_path=None, weight_mode: Optional[str] = None,
                    nodes_path=None, free_flow_kmh: Optional[float] = None) -> Dict:
    """
    Pipeline completa da file: rete + flussi → ODTravelTimeTable.

    Args:
        network_path: File archi
        flows_path: File flussi per arco
        out_path: Path della tabella JSON (None: nessun salvataggio)
        weight_mode: 'free_flow_time' o 'length'
        nodes_path: File nodi opzionale

    Returns:
        Dict risultato di SurrogateBuilder.build più 'paths'
    """
    print(f"\n🚀 BUILD SURROGATE - {os.path.basename(str(network_path))}")
    print("=" * 50)

    graph = load_network(network_path, nodes_path, free_flow_kmh)
    print(f"  📦 Rete: {len(graph.nodes)} nodi, {len(graph.edges)} archi, {graph.zones} zone")
    series = load_flows(flows_path, graph)
    print(f"  📈 Serie di flusso: {len(series)} archi")

    builder = SurrogateBuilder(weight_mode)
    result = builder.build(graph, series)
    result['paths'] = builder.save(result, out_path) if out_path else {}
    return result


def build_grid_surrogate(grid_h: int, grid_w: int, cell_km: float, lanes: int = 2,
                         weight_mode: Optional[str] = None, **flow_params) -> Dict:
    """Surrogato sintetico su rete a griglia con picchi a bassa velocità"""
    from surrogate.netgraph import grid_network
    graph = grid_network(grid_h, grid_w, cell_km, lanes)
    return SurrogateBuilder(weight_mode, intra_zone_km=cell_km / 2).build(graph, synthetic_flows(graph, **flow_params))
