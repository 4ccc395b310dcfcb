# surrogate/netgraph.py - Rete stradale a zone e route statiche OD
import heapq
import json
import math
from dataclasses import dataclass, replace
from functools import cached_property
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Tuple

import networkx as nx
from shapely.geometry import LineString, Point, Polygon, box

from config_rastmoe import NETWORK_CONFIG
from utils.errors import (
    AssignmentError, ConnectivityError, NetworkParseError,
    NetworkValidationError, RouteError
)
from utils.text_utils import iter_records, parse_number

WEIGHT_MODES = ('free_flow_time', 'length')

OD = Tuple[int, int]


@dataclass(frozen=True)
class Edge:
    id: str
    tail: str
    head: str
    length_km: float
    lanes: int
    zone: int
    free_flow_kmh: Optional[float] = None

    @property
    def lane_km(self) -> float:
        return self.lanes * self.length_km


@dataclass(frozen=True, eq=False)
class NetworkGraph:
    """Grafo diretto con coordinate dei nodi e partizione in zone."""
    nodes: Dict[str, Tuple[float, float]]
    edges: Tuple[Edge, ...]
    zones: int
    zone_of_node: Dict[str, int]
    free_flow_kmh: float = NETWORK_CONFIG['free_flow_kmh']

    @cached_property
    def edge_by_id(self) -> Dict[str, Edge]:
        return {edge.id: edge for edge in self.edges}

    @cached_property
    def out_edges(self) -> Dict[str, Tuple[Edge, ...]]:
        adjacency: Dict[str, List[Edge]] = {node: [] for node in self.nodes}
        for edge in self.edges:
            adjacency[edge.tail].append(edge)
        return {node: tuple(sorted(out, key=lambda e: e.id)) for node, out in adjacency.items()}

    @cached_property
    def od_nodes(self) -> Dict[int, str]:
        """Nodo rappresentativo di ogni zona: il più vicino al centroide delle coordinate"""
        members: Dict[int, List[str]] = {}
        for node, zone in self.zone_of_node.items():
            members.setdefault(zone, []).append(node)

        representatives = {}
        for zone in range(self.zones):
            nodes = members.get(zone)
            if not nodes:
                raise NetworkValidationError(f"zone {zone} has no nodes")
            cx = sum(self.nodes[n][0] for n in nodes) / len(nodes)
            cy = sum(self.nodes[n][1] for n in nodes) / len(nodes)
            representatives[zone] = min(
                nodes, key=lambda n: ((self.nodes[n][0] - cx) ** 2 + (self.nodes[n][1] - cy) ** 2, n)
            )
        return representatives

    def edges_in_zone(self, zone: int) -> List[Edge]:
        return [edge for edge in self.edges if edge.zone == zone]

    def to_networkx(self) -> nx.MultiDiGraph:
        graph = nx.MultiDiGraph()
        for node, (x, y) in self.nodes.items():
            graph.add_node(node, x=x, y=y, zone=self.zone_of_node.get(node))
        for edge in self.edges:
            graph.add_edge(edge.tail, edge.head, key=edge.id, length_km=edge.length_km,
                           lanes=edge.lanes, zone=edge.zone)
        return graph

    def edge_weight(self, edge: Edge, weight_mode: str) -> float:
        if weight_mode == 'length':
            return edge.length_km
        return edge.length_km / (edge.free_flow_kmh or self.free_flow_kmh)


# ==================== LOADING ====================

def _parse_edges(path) -> List[Edge]:
    edges = []
    seen = set()
    for line_no, fields in iter_records(path, 6, 7, header_prefix='edge_id', error_cls=NetworkParseError):
        edge_id, tail, head = fields[0], fields[1], fields[2]
        length_km = parse_number(fields[3], float, path, line_no, 'length_km', NetworkParseError)
        lanes = parse_number(fields[4], int, path, line_no, 'lanes', NetworkParseError)
        zone = parse_number(fields[5], int, path, line_no, 'zone_id', NetworkParseError)
        free_flow = None
        if len(fields) == 7 and fields[6]:
            free_flow = parse_number(fields[6], float, path, line_no, 'free_flow_kmh', NetworkParseError)
            if not (math.isfinite(free_flow) and free_flow > 0):
                raise NetworkParseError(f"{path}:{line_no}: free_flow_kmh must be > 0")

        if not (math.isfinite(length_km) and length_km > 0):
            raise NetworkParseError(f"{path}:{line_no}: length_km must be > 0")
        if lanes < 1:
            raise NetworkParseError(f"{path}:{line_no}: lanes must be ≥ 1")
        if zone < 0:
            raise NetworkParseError(f"{path}:{line_no}: zone_id must be ≥ 0")
        if edge_id in seen:
            raise NetworkParseError(f"{path}:{line_no}: duplicate edge id {edge_id}")
        seen.add(edge_id)

        edges.append(Edge(edge_id, tail, head, length_km, lanes, zone, free_flow))
    return edges


def _parse_nodes(path) -> Tuple[Dict[str, Tuple[float, float]], Dict[str, int]]:
    nodes, zones = {}, {}
    for line_no, fields in iter_records(path, 3, 4, header_prefix='node_id', error_cls=NetworkParseError):
        node_id = fields[0]
        if node_id in nodes:
            raise NetworkParseError(f"{path}:{line_no}: duplicate node id {node_id}")
        x = parse_number(fields[1], float, path, line_no, 'x', NetworkParseError)
        y = parse_number(fields[2], float, path, line_no, 'y', NetworkParseError)
        nodes[node_id] = (x, y)
        if len(fields) == 4 and fields[3]:
            zone = parse_number(fields[3], int, path, line_no, 'zone_id', NetworkParseError)
            if zone < 0:
                raise NetworkParseError(f"{path}:{line_no}: zone_id must be ≥ 0")
            zones[node_id] = zone
    return nodes, zones


def _infer_node_zones(nodes, explicit: Mapping[str, int], edges: List[Edge]) -> Dict[str, int]:
    """Zona esplicita del nodo, altrimenti quella del primo arco uscente, poi entrante"""
    zone_of_node = dict(explicit)
    for edge in sorted(edges, key=lambda e: e.id):
        zone_of_node.setdefault(edge.tail, edge.zone)
    for edge in sorted(edges, key=lambda e: e.id):
        zone_of_node.setdefault(edge.head, edge.zone)
    return {node: zone for node, zone in zone_of_node.items() if node in nodes}


def check_od_connectivity(graph: NetworkGraph) -> None:
    """Tutti i nodi OD devono stare nella stessa componente debolmente connessa"""
    od_nodes = graph.od_nodes
    nx_graph = graph.to_networkx()
    anchor = od_nodes[0]
    component = nx.node_connected_component(nx_graph.to_undirected(as_view=True), anchor)
    for zone in range(graph.zones):
        node = od_nodes[zone]
        if node not in component:
            raise ConnectivityError(f"OD node {node} (zone {zone}) is disconnected from {anchor}")


def load_network(edges_path, nodes_path=None, free_flow_kmh: Optional[float] = None) -> NetworkGraph:
    """
    Carica la rete a zone da file delimitati e la valida.

    Args:
        edges_path: File archi `edge_id, tail_id, head_id, length_km, lanes, zone_id[, free_flow_kmh]`
        nodes_path: File nodi opzionale `node_id, x, y[, zone_id]`
        free_flow_kmh: Velocità free-flow di default (km/h)

    Returns:
        NetworkGraph validato
    """
    edges = _parse_edges(edges_path)
    if nodes_path is not None:
        nodes, explicit_zones = _parse_nodes(nodes_path)
    else:
        nodes, explicit_zones = {}, {}
        for edge in edges:
            nodes.setdefault(edge.tail, (0.0, 0.0))
            nodes.setdefault(edge.head, (0.0, 0.0))

    for edge in edges:
        for endpoint in (edge.tail, edge.head):
            if endpoint not in nodes:
                raise NetworkValidationError(f"edge {edge.id} references unknown node {endpoint}")

    zone_of_node = _infer_node_zones(nodes, explicit_zones, edges)
    zone_ids = [edge.zone for edge in edges] + list(zone_of_node.values())
    if not zone_ids:
        raise NetworkValidationError(f"{edges_path}: network has no edges and no zoned nodes")

    graph = NetworkGraph(
        nodes=nodes,
        edges=tuple(edges),
        zones=max(zone_ids) + 1,
        zone_of_node=zone_of_node,
        free_flow_kmh=free_flow_kmh or NETWORK_CONFIG['free_flow_kmh'],
    )
    check_od_connectivity(graph)
    return graph


def grid_network(grid_h: int, grid_w: int, cell_km: float = 2.0, lanes: int = 2,
                 free_flow_kmh: Optional[float] = None) -> NetworkGraph:
    """Rete sintetica H×W: un nodo per cella, archi bidirezionali tra celle adiacenti"""
    nodes, zone_of_node, edges = {}, {}, []
    for row in range(grid_h):
        for col in range(grid_w):
            zone = row * grid_w + col
            nodes[f"n{zone:03d}"] = ((col + 0.5) * cell_km, (row + 0.5) * cell_km)
            zone_of_node[f"n{zone:03d}"] = zone

    for zone in range(grid_h * grid_w):
        for neighbor in grid_neighbors(zone, grid_h, grid_w):
            edges.append(Edge(f"e{zone:03d}_{neighbor:03d}", f"n{zone:03d}", f"n{neighbor:03d}",
                              cell_km, lanes, zone))

    return NetworkGraph(nodes, tuple(edges), grid_h * grid_w, zone_of_node,
                        free_flow_kmh or NETWORK_CONFIG['free_flow_kmh'])


def save_network(graph: NetworkGraph, edges_path, nodes_path) -> Tuple[Path, Path]:
    """Scrive i file archi/nodi nello stesso schema letto da load_network"""
    edges_path, nodes_path = Path(edges_path), Path(nodes_path)
    edges_path.parent.mkdir(parents=True, exist_ok=True)
    nodes_path.parent.mkdir(parents=True, exist_ok=True)

    edge_lines = ["edge_id,tail_id,head_id,length_km,lanes,zone_id,free_flow_kmh"]
    for edge in graph.edges:
        free_flow = '' if edge.free_flow_kmh is None else repr(edge.free_flow_kmh)
        edge_lines.append(f"{edge.id},{edge.tail},{edge.head},{edge.length_km!r},{edge.lanes},{edge.zone},{free_flow}")
    node_lines = ["node_id,x,y,zone_id"]
    for node, (x, y) in sorted(graph.nodes.items()):
        zone = graph.zone_of_node.get(node, '')
        node_lines.append(f"{node},{x!r},{y!r},{zone}")

    edges_path.write_text("\n".join(edge_lines) + "\n", encoding='utf-8')
    nodes_path.write_text("\n".join(node_lines) + "\n", encoding='utf-8')
    return edges_path, nodes_path


def grid_neighbors(zone: int, grid_h: int, grid_w: int) -> List[int]:
    row, col = divmod(zone, grid_w)
    neighbors = []
    for d_row, d_col in ((-1, 0), (0, -1), (0, 1), (1, 0)):
        r, c = row + d_row, col + d_col
        if 0 <= r < grid_h and 0 <= c < grid_w:
            neighbors.append(r * grid_w + c)
    return sorted(neighbors)


# ==================== ZONE ASSIGNMENT ====================

@dataclass(frozen=True)
class ZonePartition:
    """Geometrie di zona e/o mappatura esplicita arco → zona (la mappatura vince)"""
    polygons: Optional[Mapping[int, Polygon]] = None
    mapping: Optional[Mapping[str, int]] = None


def grid_partition(bbox: Tuple[float, float, float, float], grid_h: int, grid_w: int) -> Dict[int, Polygon]:
    """Celle uniformi H×W sul bounding box (minx, miny, maxx, maxy); zona = riga·W + colonna"""
    minx, miny, maxx, maxy = bbox
    if not (maxx > minx and maxy > miny):
        raise AssignmentError(f"degenerate bounding box {bbox}")
    dx, dy = (maxx - minx) / grid_w, (maxy - miny) / grid_h
    return {
        row * grid_w + col: box(minx + col * dx, miny + row * dy, minx + (col + 1) * dx, miny + (row + 1) * dy)
        for row in range(grid_h) for col in range(grid_w)
    }


def load_zone_mapping(path) -> Dict[str, int]:
    """File di override `edge_id, zone_id`"""
    mapping = {}
    for line_no, fields in iter_records(path, 2, 2, header_prefix='edge_id', error_cls=NetworkParseError):
        mapping[fields[0]] = parse_number(fields[1], int, path, line_no, 'zone_id', NetworkParseError)
    return mapping


def _first_covering(polygons: Mapping[int, Polygon], geometry) -> Optional[int]:
    for zone in sorted(polygons):
        if polygons[zone].covers(geometry):
            return zone
    return None


def assign_edge_zones(graph: NetworkGraph, partition: ZonePartition) -> NetworkGraph:
    """
    Assegna ogni arco a una sola zona.

    Un arco interamente contenuto in una zona prende quella zona; un arco a
    cavallo di più zone prende la zona del nodo di coda. La mappatura
    esplicita ha precedenza sulla geometria.
    """
    polygons = partition.polygons or {}
    mapping = partition.mapping or {}

    new_edges = []
    for edge in graph.edges:
        if edge.id in mapping:
            zone = mapping[edge.id]
        elif polygons:
            tail_xy, head_xy = graph.nodes[edge.tail], graph.nodes[edge.head]
            zone = _first_covering(polygons, LineString([tail_xy, head_xy]))
            if zone is None:
                zone = _first_covering(polygons, Point(tail_xy))
        else:
            zone = None
        if zone is None or zone < 0:
            raise AssignmentError(f"edge {edge.id} is covered by no zone")
        new_edges.append(replace(edge, zone=zone))

    zone_of_node = dict(graph.zone_of_node)
    if polygons:
        for node, xy in graph.nodes.items():
            zone = _first_covering(polygons, Point(xy))
            if zone is not None:
                zone_of_node[node] = zone

    zone_ids = [edge.zone for edge in new_edges] + list(zone_of_node.values()) + list(polygons)
    return replace(graph, edges=tuple(new_edges), zone_of_node=zone_of_node,
                   zones=max([graph.zones - 1] + zone_ids) + 1)


# ==================== STATIC ROUTES ====================

@dataclass(frozen=True, eq=False)
class RouteSet:
    """Percorsi statici P_r per ogni coppia OD r=(o,d) tra nodi rappresentativi di zona."""
    paths: Dict[OD, Tuple[str, ...]]
    od_pairs: Tuple[OD, ...]
    od_nodes: Dict[int, str]
    weights: Dict[OD, float]
    edge_length_km: Dict[str, float]
    edge_zone: Dict[str, int]
    n_zones: int
    weight_mode: str

    def path(self, origin: int, dest: int) -> Tuple[str, ...]:
        try:
            return self.paths[(origin, dest)]
        except KeyError:
            raise RouteError(f"no route for OD pair {origin}:{dest}")

    def to_dict(self) -> Dict:
        return {
            'weight_mode': self.weight_mode,
            'n_zones': self.n_zones,
            'od_nodes': {str(zone): node for zone, node in self.od_nodes.items()},
            'paths': {f"{o}:{d}": list(self.paths[(o, d)]) for o, d in self.od_pairs},
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.dumps(), encoding='utf-8')
        return path

    @classmethod
    def from_dict(cls, data: Dict, graph: NetworkGraph) -> 'RouteSet':
        paths = {}
        for key, edge_ids in data['paths'].items():
            o, d = (int(part) for part in key.split(':'))
            for edge_id in edge_ids:
                if edge_id not in graph.edge_by_id:
                    raise RouteError(f"route {key} references unknown edge {edge_id}")
            paths[(o, d)] = tuple(edge_ids)
        return _make_route_set(graph, paths, data['weight_mode'],
                               {int(z): n for z, n in data['od_nodes'].items()})

    @classmethod
    def load(cls, path, graph: NetworkGraph) -> 'RouteSet':
        return cls.from_dict(json.loads(Path(path).read_text(encoding='utf-8')), graph)


def _make_route_set(graph, paths, weight_mode, od_nodes) -> RouteSet:
    od_pairs = tuple((o, d) for o in range(graph.zones) for d in range(graph.zones))
    missing = [od for od in od_pairs if od not in paths]
    if missing:
        raise RouteError(f"route set misses OD pair {missing[0][0]}:{missing[0][1]}")
    weights = {
        od: sum(graph.edge_weight(graph.edge_by_id[e], weight_mode) for e in paths[od])
        for od in od_pairs
    }
    return RouteSet(
        paths=paths,
        od_pairs=od_pairs,
        od_nodes=dict(od_nodes),
        weights=weights,
        edge_length_km={edge.id: edge.length_km for edge in graph.edges},
        edge_zone={edge.id: edge.zone for edge in graph.edges},
        n_zones=graph.zones,
        weight_mode=weight_mode,
    )


def shortest_paths_from(graph: NetworkGraph, source: str, weight_mode: str) -> Dict[str, Tuple[float, Tuple[str, ...]]]:
    """
    Dijkstra da un nodo sorgente con tie-break sulla sequenza di edge id.

    La coda è ordinata per (peso, sequenza di archi): a parità di peso vince
    la sequenza lessicograficamente più piccola.

    Returns:
        Dict nodo → (peso minimo, sequenza di edge id)
    """
    settled: Dict[str, Tuple[float, Tuple[str, ...]]] = {}
    best = {source: (0.0, ())}
    fringe = [(0.0, (), source)]

    while fringe:
        dist, path, node = heapq.heappop(fringe)
        if node in settled:
            continue
        settled[node] = (dist, path)
        for edge in graph.out_edges.get(node, ()):
            if edge.head in settled:
                continue
            candidate = (dist + graph.edge_weight(edge, weight_mode), path + (edge.id,))
            if edge.head not in best or candidate < best[edge.head]:
                best[edge.head] = candidate
                heapq.heappush(fringe, (candidate[0], candidate[1], edge.head))
    return settled


def build_static_routes(graph: NetworkGraph, weight_mode: str = NETWORK_CONFIG['weight_mode']) -> RouteSet:
    """
    Calcola una volta sola il percorso minimo per ogni coppia OD di zone.

    Args:
        graph: Rete validata
        weight_mode: 'free_flow_time' (ℓ/v_ff) o 'length' (ℓ)

    Returns:
        RouteSet con N² percorsi
    """
    if weight_mode not in WEIGHT_MODES:
        raise RouteError(f"unknown weight mode {weight_mode!r}; expected one of {WEIGHT_MODES}")

    od_nodes = graph.od_nodes
    paths = {}
    for origin in range(graph.zones):
        settled = shortest_paths_from(graph, od_nodes[origin], weight_mode)
        for dest in range(graph.zones):
            target = od_nodes[dest]
            if target not in settled:
                raise RouteError(f"OD pair {origin}:{dest} unreachable ({od_nodes[origin]} → {target})")
            paths[(origin, dest)] = settled[target][1]

    return _make_route_set(graph, paths, weight_mode, od_nodes)
