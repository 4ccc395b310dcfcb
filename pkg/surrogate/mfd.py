# surrogate/mfd.py - Velocità di zona MFD-consistenti e tabella OD oraria
import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from config_rastmoe import MFD_CONFIG, PERTURBATION_CONFIG, TABLE_FORMAT_VERSION
from surrogate.netgraph import OD, NetworkGraph, RouteSet
from utils.errors import (
    ContractError, FlowParseError, PerturbationSpecError,
    SurrogateBuildError, TravelTimeLookupError
)
from utils.text_utils import iter_records, parse_number

HOURS = 24


# ==================== FLOW SERIES ====================

@dataclass(frozen=True)
class FlowBin:
    t_start: float   # h
    dt: float        # h
    density: float   # veh/(lane·km)
    flow: float      # veh/(h·lane)

    @property
    def hour(self) -> int:
        return int(math.floor(self.t_start + 1e-9)) % HOURS


@dataclass
class EdgeFlowSeries:
    edge_id: str
    bins: List[FlowBin] = field(default_factory=list)


def split_at_hours(flow_bin: FlowBin) -> List[FlowBin]:
    """Divide un bin a cavallo di un confine orario; densità e flusso restano invariati"""
    pieces = []
    t, end = flow_bin.t_start, flow_bin.t_start + flow_bin.dt
    while t < end - 1e-12:
        boundary = math.floor(t + 1e-9) + 1.0
        stop = min(end, boundary)
        pieces.append(FlowBin(t, stop - t, flow_bin.density, flow_bin.flow))
        t = stop
    return pieces


def load_flows(path, graph: Optional[NetworkGraph] = None) -> Dict[str, EdgeFlowSeries]:
    """
    Carica le serie per arco `edge_id, t_start_h, dt_h, density, flow`.

    I bin di ogni arco devono essere ordinati e non sovrapposti; i bin che
    attraversano un confine orario vengono divisi proporzionalmente.
    """
    series: Dict[str, EdgeFlowSeries] = {}
    last_end: Dict[str, float] = {}

    for line_no, fields in iter_records(path, 5, 5, header_prefix='edge_id', error_cls=FlowParseError):
        edge_id = fields[0]
        t_start, dt, density, flow = (
            parse_number(value, float, path, line_no, name, FlowParseError)
            for value, name in zip(fields[1:], ('t_start_h', 'dt_h', 'density', 'flow'))
        )
        if graph is not None and edge_id not in graph.edge_by_id:
            raise FlowParseError(f"{path}:{line_no}: unknown edge {edge_id}")
        if not all(math.isfinite(v) for v in (t_start, dt, density, flow)):
            raise FlowParseError(f"{path}:{line_no}: values must be finite")
        if dt <= 0:
            raise FlowParseError(f"{path}:{line_no}: dt must be > 0")
        if t_start < 0 or density < 0 or flow < 0:
            raise FlowParseError(f"{path}:{line_no}: t_start, density and flow must be ≥ 0")
        if t_start < last_end.get(edge_id, -math.inf) - 1e-9:
            raise FlowParseError(f"{path}:{line_no}: bins of edge {edge_id} overlap or are not time-sorted")
        last_end[edge_id] = t_start + dt

        target = series.setdefault(edge_id, EdgeFlowSeries(edge_id))
        target.bins.extend(split_at_hours(FlowBin(t_start, dt, density, flow)))
    return series


def save_flows(series: Mapping[str, EdgeFlowSeries], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = ["edge_id,t_start_h,dt_h,density,flow"]
    for edge_id in sorted(series):
        for b in series[edge_id].bins:
            lines.append(f"{edge_id},{b.t_start!r},{b.dt!r},{b.density!r},{b.flow!r}")
    path.write_text("\n".join(lines) + "\n", encoding='utf-8')
    return path


def synthetic_flows(graph: NetworkGraph, peak_hours: Sequence[float] = (8, 17), peak_width: float = 1.5,
                    offpeak_speed_kmh: float = 40.0, peak_speed_kmh: float = 15.0,
                    base_density: float = 10.0, zone_congestion: Optional[Mapping[int, float]] = None
                    ) -> Dict[str, EdgeFlowSeries]:
    """
    Serie orarie sintetiche con picchi a bassa velocità (q = k·v per costruzione).

    zone_congestion scala l'intensità del picco per zona (default 1.0).
    """
    series = {}
    for edge in graph.edges:
        intensity = (zone_congestion or {}).get(edge.zone, 1.0)
        bins = []
        for hour in range(HOURS):
            bump = max((math.exp(-0.5 * ((hour - p) / peak_width) ** 2) for p in peak_hours), default=0.0)
            bump = min(1.0, bump * intensity)
            speed = offpeak_speed_kmh - (offpeak_speed_kmh - peak_speed_kmh) * bump
            density = base_density * (1.0 + 2.0 * bump)
            bins.append(FlowBin(float(hour), 1.0, density, density * speed))
        series[edge.id] = EdgeFlowSeries(edge.id, bins)
    return series


# ==================== ZONE AGGREGATION ====================

@dataclass(frozen=True)
class ZoneHourState:
    zone: int
    hour: int
    lane_km: float      # L_z
    veh_hours: float    # A_z^(h)
    veh_km: float       # D_z^(h)
    density: float      # k_z^(h)
    flow: float         # q_z^(h)
    speed: float        # v_z^(h), km/h
    dt_h: float
    fallback: bool = False


def zone_lane_km(graph: NetworkGraph) -> np.ndarray:
    """L_z = Σ λ_e ℓ_e per zona; le zone senza archi restano a 0 e usano la velocità di fallback"""
    lane_km = np.zeros(graph.zones)
    for edge in graph.edges:
        lane_km[edge.zone] += edge.lanes * edge.length_km

    empty = [zone for zone in range(graph.zones) if lane_km[zone] <= 0]
    if empty:
        print(f"⚠️ Zone senza archi (L_z = 0, velocità di fallback): {empty}")
    return lane_km


def aggregate_zone_hour(graph: NetworkGraph, series: Mapping[str, EdgeFlowSeries], hour: int,
                        density_eps: float = MFD_CONFIG['density_eps'],
                        fallback_speed_kmh: float = MFD_CONFIG['fallback_speed_kmh'],
                        lane_km: Optional[np.ndarray] = None) -> List[ZoneHourState]:
    """
    Aggrega le serie per arco nell'ora h in stati di zona MFD-consistenti.

    A_z = ΣΣ λ ℓ k Δt, D_z = ΣΣ λ q ℓ Δt, k_z = A/(L Δt_h), q_z = D/(L Δt_h),
    v_z = D/A (velocità space-mean). Se A_z ≤ ε·L_z·Δt_h la zona usa la
    velocità free-flow di fallback.

    Returns:
        Un ZoneHourState per zona
    """
    if not isinstance(hour, (int, np.integer)) or not 0 <= hour < HOURS:
        raise SurrogateBuildError(f"hour {hour} outside 0..23")
    if lane_km is None:
        lane_km = zone_lane_km(graph)

    n_zones = graph.zones
    veh_hours = np.zeros(n_zones)
    veh_km = np.zeros(n_zones)
    bins_seen: List[set] = [set() for _ in range(n_zones)]

    for edge_id in sorted(series):
        edge = graph.edge_by_id.get(edge_id)
        if edge is None:
            raise SurrogateBuildError(f"flow series references unknown edge {edge_id}")
        for b in series[edge_id].bins:
            if b.hour != hour:
                continue
            veh_hours[edge.zone] += edge.lanes * edge.length_km * b.density * b.dt
            veh_km[edge.zone] += edge.lanes * b.flow * edge.length_km * b.dt
            bins_seen[edge.zone].add((b.t_start, b.dt))

    states = []
    for zone in range(n_zones):
        dt_h = sum(dt for _, dt in bins_seen[zone]) or 1.0
        L = float(lane_km[zone])
        A, D = float(veh_hours[zone]), float(veh_km[zone])

        if L <= 0 or A <= density_eps * L * dt_h:
            density = max(A / (L * dt_h), density_eps) if L > 0 else density_eps
            flow = D / (L * dt_h) if L > 0 else 0.0
            states.append(ZoneHourState(zone, hour, L, A, D, density, flow,
                                        fallback_speed_kmh, dt_h, fallback=True))
            continue

        density = max(A / (L * dt_h), density_eps)
        flow = D / (L * dt_h)
        states.append(ZoneHourState(zone, hour, L, A, D, density, flow, D / A, dt_h))
    return states


def edge_speed_average(graph: NetworkGraph, series: Mapping[str, EdgeFlowSeries], zone: int, hour: int) -> float:
    """
    Media delle velocità di arco q_e/k_e pesata per lane-km.

    Solo diagnostica: in traffico eterogeneo sovrastima la velocità space-mean
    e non va mai usata per la tabella OD.
    """
    weighted, weights = 0.0, 0.0
    for edge_id in sorted(series):
        edge = graph.edge_by_id.get(edge_id)
        if edge is None or edge.zone != zone:
            continue
        for b in series[edge_id].bins:
            if b.hour == hour and b.density > 0:
                weighted += edge.lane_km * b.dt * (b.flow / b.density)
                weights += edge.lane_km * b.dt
    return weighted / weights if weights > 0 else float('nan')


def build_zone_speeds(graph: NetworkGraph, series: Mapping[str, EdgeFlowSeries],
                      density_eps: float = MFD_CONFIG['density_eps'],
                      fallback_speed_kmh: float = MFD_CONFIG['fallback_speed_kmh']
                      ) -> Tuple[np.ndarray, List[ZoneHourState]]:
    """Matrice 24×N delle velocità v_z^(h) più tutti gli stati zona-ora"""
    lane_km = zone_lane_km(graph)
    speeds = np.zeros((HOURS, graph.zones))
    states = []
    for hour in range(HOURS):
        for state in aggregate_zone_hour(graph, series, hour, density_eps, fallback_speed_kmh, lane_km):
            speeds[hour, state.zone] = state.speed
            states.append(state)
    return speeds, states


# ==================== OD TABLE ====================

@dataclass(frozen=True, eq=False)
class ODTravelTimeTable:
    """Tabella τ_r^(h) 24×|R| (ore) con lookup O(1) per ora del giorno."""
    times: np.ndarray
    od_pairs: Tuple[OD, ...]
    n_zones: int
    paths: Dict[OD, Tuple[str, ...]]
    zone_speeds: Optional[np.ndarray] = None
    intra_zone: Optional[np.ndarray] = None
    build_hash: str = ''
    perturbation: Optional[Dict] = None

    @cached_property
    def index(self) -> Dict[OD, int]:
        return {od: col for col, od in enumerate(self.od_pairs)}

    @cached_property
    def by_zone(self) -> np.ndarray:
        """Vista 24×N×N (le coppie OD sono ordinate riga per riga)"""
        return self.times.reshape(HOURS, self.n_zones, self.n_zones)

    @staticmethod
    def hour_index(t: float) -> int:
        if t < 0:
            raise ContractError(f"clock time must be ≥ 0, got {t}")
        return int(math.floor(t % HOURS)) % HOURS

    def query(self, od: OD, t: float) -> float:
        """τ_r^(h_t) con h_t = floor(t mod 24); nessun routing al momento della query"""
        col = self.index.get(tuple(od))
        if col is None:
            raise TravelTimeLookupError(f"unknown OD pair {od}")
        return float(self.times[self.hour_index(t), col])

    def travel_time(self, origin: int, dest: int, hour: int) -> float:
        """Tempo zona→zona per l'ora h; dentro la stessa zona usa il tempo intra-zona"""
        if origin == dest and self.intra_zone is not None:
            return float(self.intra_zone[hour, origin])
        return float(self.by_zone[hour, origin, dest])

    def mean_speed(self, hour: int, weights: Optional[np.ndarray] = None) -> Optional[float]:
        if self.zone_speeds is None:
            return None
        return float(np.average(self.zone_speeds[hour], weights=weights))

    def to_dict(self) -> Dict:
        data = {
            'format_version': TABLE_FORMAT_VERSION,
            'n_zones': self.n_zones,
            'n_routes': len(self.od_pairs),
            'build_hash': self.build_hash,
            'od_pairs': [f"{o}:{d}" for o, d in self.od_pairs],
            'paths': {f"{o}:{d}": list(self.paths[(o, d)]) for o, d in self.od_pairs},
            'hours': self.times.tolist(),
        }
        if self.zone_speeds is not None:
            data['zone_speeds'] = self.zone_speeds.tolist()
        if self.intra_zone is not None:
            data['intra_zone'] = self.intra_zone.tolist()
        if self.perturbation is not None:
            data['perturbation'] = self.perturbation
        return data

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), sort_keys=True), encoding='utf-8')
        return path

    @classmethod
    def load(cls, path) -> 'ODTravelTimeTable':
        try:
            data = json.loads(Path(path).read_text(encoding='utf-8'))
        except (OSError, json.JSONDecodeError) as e:
            raise SurrogateBuildError(f"cannot read travel-time table {path}: {e}")
        if data.get('format_version') != TABLE_FORMAT_VERSION:
            raise SurrogateBuildError(f"{path}: unsupported table format {data.get('format_version')}")

        od_pairs = tuple(tuple(int(p) for p in key.split(':')) for key in data['od_pairs'])
        times = np.asarray(data['hours'], dtype=np.float64)
        if times.shape != (HOURS, data['n_routes']) or len(od_pairs) != data['n_routes']:
            raise SurrogateBuildError(f"{path}: table shape {times.shape} does not match header")
        return cls(
            times=times,
            od_pairs=od_pairs,
            n_zones=int(data['n_zones']),
            paths={tuple(int(p) for p in k.split(':')): tuple(v) for k, v in data['paths'].items()},
            zone_speeds=np.asarray(data['zone_speeds']) if 'zone_speeds' in data else None,
            intra_zone=np.asarray(data['intra_zone']) if 'intra_zone' in data else None,
            build_hash=data['build_hash'],
            perturbation=data.get('perturbation'),
        )


def _table_hash(times: np.ndarray, od_pairs, paths, extra: Optional[np.ndarray] = None) -> str:
    digest = hashlib.sha256()
    digest.update(json.dumps({f"{o}:{d}": list(paths[(o, d)]) for o, d in od_pairs}, sort_keys=True).encode())
    digest.update(np.ascontiguousarray(times).tobytes())
    if extra is not None:
        digest.update(np.ascontiguousarray(extra).tobytes())
    return digest.hexdigest()[:16]


def build_od_table(routes: RouteSet, speeds: np.ndarray,
                   intra_zone_km: Optional[float] = MFD_CONFIG['intra_zone_km']) -> ODTravelTimeTable:
    """
    τ_r^(h) = Σ_{e∈P_r} ℓ_e / v_{z(e)}^(h) per tutte le 24 ore.

    Args:
        routes: Percorsi statici
        speeds: Matrice 24×N di velocità di zona (fallback già applicato)
        intra_zone_km: Distanza intra-zona per pickup/trip nella stessa zona (None: nessuna)

    Returns:
        ODTravelTimeTable densa
    """
    speeds = np.asarray(speeds, dtype=np.float64)
    if speeds.shape != (HOURS, routes.n_zones):
        raise SurrogateBuildError(f"speed matrix has shape {speeds.shape}, expected {(HOURS, routes.n_zones)}")
    bad = np.argwhere(~np.isfinite(speeds) | (speeds <= 0))
    if len(bad):
        hour, zone = bad[0]
        raise SurrogateBuildError(f"non-positive speed {speeds[hour, zone]} in zone {zone} at hour {hour}")

    times = np.zeros((HOURS, len(routes.od_pairs)))
    for col, od in enumerate(routes.od_pairs):
        for edge_id in routes.paths[od]:
            times[:, col] += routes.edge_length_km[edge_id] / speeds[:, routes.edge_zone[edge_id]]

    intra = intra_zone_km / speeds if intra_zone_km else None
    return ODTravelTimeTable(
        times=times,
        od_pairs=routes.od_pairs,
        n_zones=routes.n_zones,
        paths=dict(routes.paths),
        zone_speeds=speeds.copy(),
        intra_zone=intra,
        build_hash=_table_hash(times, routes.od_pairs, routes.paths, intra),
    )


def query_travel_time(table: ODTravelTimeTable, od: OD, t: float) -> float:
    return table.query(od, t)


# ==================== PERTURBATIONS ====================

@dataclass(frozen=True)
class PerturbationSpec:
    kind: str                                   # global | incident
    eta_range: Tuple[float, float] = PERTURBATION_CONFIG['eta_range']
    alpha_range: Tuple[float, float] = PERTURBATION_CONFIG['alpha_range']
    corridor_size: Tuple[int, int] = PERTURBATION_CONFIG['corridor_size']
    corridor_edges: Optional[Tuple[str, ...]] = None
    seed: Optional[int] = None

    def __post_init__(self):
        if self.kind not in ('global', 'incident'):
            raise PerturbationSpecError(f"unknown perturbation kind {self.kind!r}")
        for name in ('eta_range', 'alpha_range'):
            lo, hi = getattr(self, name)
            if not (0 < lo <= hi):
                raise PerturbationSpecError(f"{name} must satisfy 0 < low ≤ high, got {(lo, hi)}")
        lo, hi = self.corridor_size
        if not (5 <= lo <= hi <= 12):
            raise PerturbationSpecError(f"corridor_size must lie within [5, 12], got {(lo, hi)}")
        if self.corridor_edges is not None and not 5 <= len(self.corridor_edges) <= 12:
            raise PerturbationSpecError(f"corridor must have 5-12 edges, got {len(self.corridor_edges)}")


def sample_corridor(graph: NetworkGraph, size_range: Tuple[int, int], rng: np.random.Generator,
                    max_attempts: int = PERTURBATION_CONFIG['max_walk_attempts']) -> Tuple[str, ...]:
    """Random walk testa→coda da un arco seme casuale, senza ripetere archi"""
    lo, hi = size_range
    if len(graph.edges) < lo:
        raise PerturbationSpecError(f"incident corridor needs ≥ {lo} edges, graph has {len(graph.edges)}")

    edges = sorted(graph.edges, key=lambda e: e.id)
    target = int(rng.integers(lo, hi + 1))
    for _ in range(max_attempts):
        corridor = [edges[int(rng.integers(len(edges)))]]
        used = {corridor[0].id}
        while len(corridor) < target:
            forward = [e for e in graph.out_edges.get(corridor[-1].head, ()) if e.id not in used]
            if not forward:
                break
            step = forward[int(rng.integers(len(forward)))]
            corridor.append(step)
            used.add(step.id)
        if len(corridor) >= lo:
            return tuple(edge.id for edge in corridor)
    raise PerturbationSpecError(f"could not sample a connected corridor of ≥ {lo} edges")


def perturb_table(table: ODTravelTimeTable, spec: PerturbationSpec,
                  rng: Optional[np.random.Generator] = None,
                  graph: Optional[NetworkGraph] = None) -> ODTravelTimeTable:
    """
    Scenario di robustezza; restituisce una nuova tabella (l'originale non cambia).

    global: τ_r^(h) ← η_h·τ_r^(h) con η_h ~ U(eta_range) indipendente per ora.
    incident: corridoio di 5-12 archi connessi, α ~ U(alpha_range) applicato
    alle route il cui percorso attraversa il corridoio.
    """
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    times = table.times.copy()
    intra = table.intra_zone.copy() if table.intra_zone is not None else None

    if spec.kind == 'global':
        eta = rng.uniform(*spec.eta_range, size=HOURS)
        times *= eta[:, None]
        if intra is not None:
            intra *= eta[:, None]
        info = {'kind': 'global', 'eta': eta.tolist()}
    else:
        if spec.corridor_edges is not None:
            corridor = tuple(spec.corridor_edges)
        elif graph is None:
            raise PerturbationSpecError("incident perturbation needs the network graph to sample a corridor")
        else:
            corridor = sample_corridor(graph, spec.corridor_size, rng)
        alpha = float(rng.uniform(*spec.alpha_range))
        blocked = set(corridor)
        hit = [col for col, od in enumerate(table.od_pairs) if blocked.intersection(table.paths[od])]
        times[:, hit] *= alpha
        info = {'kind': 'incident', 'alpha': alpha, 'corridor': list(corridor),
                'routes_hit': [f"{o}:{d}" for o, d in (table.od_pairs[c] for c in hit)]}

    return replace(table, times=times, intra_zone=intra, perturbation=info,
                   build_hash=_table_hash(times, table.od_pairs, table.paths, intra))
