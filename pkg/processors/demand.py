# processors/demand.py - Profili di domanda: ingest di viaggi reali e generatore sintetico
import json
import math
import os
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from config_rastmoe import DEMAND_CONFIG, DEMAND_PRESETS
from utils.errors import ConfigError, DataError
from utils.text_utils import iter_records

HOURS = 24


@dataclass(frozen=True)
class TripRecord:
    pickup_time: datetime
    pickup_zone: int
    dropoff_zone: int


@dataclass
class DemandProfiles:
    """λ^(i)(h), μ^(i)(h) (N × 24, 1/h) e matrice OD normalizzata per riga."""
    passenger_rates: np.ndarray
    driver_rates: np.ndarray
    od_probs: np.ndarray
    meta: Dict = field(default_factory=dict)

    def to_dict(self) -> Dict:
        return {
            'passenger_rates': self.passenger_rates.tolist(),
            'driver_rates': self.driver_rates.tolist(),
            'od_probs': self.od_probs.tolist(),
            'meta': self.meta,
        }

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), sort_keys=True, indent=1), encoding='utf-8')
        return path

    @classmethod
    def load(cls, path) -> 'DemandProfiles':
        try:
            data = json.loads(Path(path).read_text(encoding='utf-8'))
        except (OSError, json.JSONDecodeError) as e:
            raise DataError(f"cannot read demand profiles {path}: {e}")
        return cls(np.asarray(data['passenger_rates'], dtype=np.float64),
                   np.asarray(data['driver_rates'], dtype=np.float64),
                   np.asarray(data['od_probs'], dtype=np.float64),
                   data.get('meta', {}))


# ==================== INGEST ====================

def _grid_cell(x: float, y: float, bbox, grid_h: int, grid_w: int) -> Optional[int]:
    minx, miny, maxx, maxy = bbox
    if not (minx <= x <= maxx and miny <= y <= maxy):
        return None
    col = min(int((x - minx) / (maxx - minx) * grid_w), grid_w - 1)
    row = min(int((y - miny) / (maxy - miny) * grid_h), grid_h - 1)
    return row * grid_w + col


def load_zone_centroids(path) -> Dict[str, Tuple[float, float]]:
    """Mappa di griglia `source_zone, x, y` (centroide di ogni zona sorgente)"""
    centroids = {}
    for line_no, fields in iter_records(path, 3, 3, header_prefix='source_zone', error_cls=DataError):
        try:
            centroids[fields[0]] = (float(fields[1]), float(fields[2]))
        except ValueError:
            raise DataError(f"{path}:{line_no}: coordinates must be numeric")
    return centroids


def ingest_trips(path, grid_h: int, grid_w: int,
                 centroids: Optional[Mapping[str, Tuple[float, float]]] = None,
                 bbox: Optional[Tuple[float, float, float, float]] = None,
                 driver_multiple: float = DEMAND_CONFIG['driver_multiple'],
                 max_skipped_fraction: float = DEMAND_CONFIG['max_skipped_fraction']) -> DemandProfiles:
    """
    Converte un file di viaggi `timestamp_iso8601, pickup_zone, dropoff_zone` in profili orari.

    Senza centroids le zone del file sono già indici di cella della griglia;
    con centroids ogni zona sorgente viene mappata nella cella H×W del
    bounding box che contiene il suo centroide.

    Args:
        path: File viaggi
        grid_h, grid_w: Griglia di destinazione
        centroids: Mappa zona sorgente → (x, y) opzionale
        bbox: (minx, miny, maxx, maxy); default: bounding box dei centroidi
        driver_multiple: μ = driver_multiple · λ
        max_skipped_fraction: Soglia oltre la quale gli scarti diventano errore

    Returns:
        DemandProfiles con meta {'trips', 'skipped', 'days'}
    """
    n_zones = grid_h * grid_w
    if centroids and bbox is None:
        xs = [xy[0] for xy in centroids.values()]
        ys = [xy[1] for xy in centroids.values()]
        bbox = (min(xs), min(ys), max(xs), max(ys))

    def to_cell(raw: str) -> Optional[int]:
        if centroids:
            xy = centroids.get(raw)
            return None if xy is None else _grid_cell(xy[0], xy[1], bbox, grid_h, grid_w)
        try:
            zone = int(raw)
        except ValueError:
            return None
        return zone if 0 <= zone < n_zones else None

    records: List[TripRecord] = []
    skipped = 0
    for line_no, fields in iter_records(path, 3, 3, header_prefix='timestamp_iso8601', error_cls=DataError):
        try:
            stamp = datetime.fromisoformat(fields[0])
        except ValueError:
            raise DataError(f"{path}:{line_no}: unparseable timestamp {fields[0]!r}")
        origin, dest = to_cell(fields[1]), to_cell(fields[2])
        if origin is None or dest is None:
            skipped += 1
            continue
        records.append(TripRecord(stamp, origin, dest))

    total = len(records) + skipped
    if skipped:
        print(f"⚠️ Viaggi scartati (zona non mappabile): {skipped}/{total}")
    if total and skipped / total > max_skipped_fraction:
        raise DataError(f"{skipped}/{total} trips have unmappable zones (limit {max_skipped_fraction:.0%})")

    counts = np.zeros((n_zones, HOURS))
    od_counts = np.zeros((n_zones, n_zones))
    days = sorted({record.pickup_time.date() for record in records})
    for record in records:
        counts[record.pickup_zone, record.pickup_time.hour] += 1
        od_counts[record.pickup_zone, record.dropoff_zone] += 1

    if not records:
        raise DataError(f"{path}: no trips to normalize the OD matrix")

    passenger_rates = counts / max(len(days), 1)
    row_totals = od_counts.sum(axis=1, keepdims=True)
    empty_rows = np.flatnonzero(row_totals[:, 0] == 0)
    if len(empty_rows):
        print(f"⚠️ Zone senza partenze, riga OD uniforme: {empty_rows.tolist()}")
    od_probs = np.where(row_totals > 0, od_counts / np.maximum(row_totals, 1), 1.0 / n_zones)

    print(f"✅ Ingest: {len(records)} viaggi su {len(days)} giorni → {n_zones} zone")
    return DemandProfiles(
        passenger_rates=passenger_rates,
        driver_rates=driver_multiple * passenger_rates,
        od_probs=od_probs,
        meta={'trips': len(records), 'skipped': skipped, 'days': len(days),
              'driver_multiple': driver_multiple, 'source': os.path.basename(str(path))},
    )


# ==================== SYNTHETIC DEMAND ====================

def peak_bump(hour: float, peak_hours: Sequence[float], width: float) -> float:
    """Campana gaussiana troncata a 3·width (distanza circolare sulle 24 ore), 1 sul picco"""
    best = 0.0
    for peak in peak_hours:
        distance = abs(hour - peak) % HOURS
        distance = min(distance, HOURS - distance)
        if distance <= 3 * width:
            best = max(best, math.exp(-0.5 * (distance / width) ** 2))
    return best


def demand_profiles(preset: str, grid_h: int, grid_w: int, seed: int = 0,
                    overrides: Optional[Mapping] = None,
                    driver_multiple: float = DEMAND_CONFIG['driver_multiple']) -> DemandProfiles:
    """
    Profili sintetici: tasso base × fattore spaziale (seed) × profilo orario.

    Il tasso ai picchi è peak_ratio volte quello fuori picco; il preset flat
    ha la stessa tariffa per tutte le 24 ore.
    """
    if preset not in DEMAND_PRESETS:
        raise ConfigError(f"unknown demand preset {preset!r}; expected one of {sorted(DEMAND_PRESETS)}")
    params = {**DEMAND_PRESETS[preset], **(overrides or {})}
    n_zones = grid_h * grid_w
    rng = np.random.default_rng(seed)

    spatial = rng.uniform(0.5, 1.5, size=n_zones)
    spatial = spatial / spatial.mean()
    if preset == 'flat':
        spatial = np.ones(n_zones)

    profile = np.array([
        1.0 + (params['peak_ratio'] - 1.0) * peak_bump(hour, params.get('peak_hours', ()), params.get('peak_width', 1.0))
        for hour in range(HOURS)
    ])
    passenger_rates = params['base_rate'] * np.outer(spatial, profile)

    rows, cols = np.divmod(np.arange(n_zones), grid_w)
    distance = np.abs(rows[:, None] - rows[None, :]) + np.abs(cols[:, None] - cols[None, :])
    od_weights = np.exp(-distance / max(1.0, (grid_h + grid_w) / 4))
    od_probs = od_weights / od_weights.sum(axis=1, keepdims=True)

    return DemandProfiles(
        passenger_rates=passenger_rates,
        driver_rates=driver_multiple * passenger_rates,
        od_probs=od_probs,
        meta={'preset': preset, 'seed': seed, 'driver_multiple': driver_multiple,
              **{k: list(v) if isinstance(v, tuple) else v for k, v in params.items()}},
    )


def sample_trips(profiles: DemandProfiles, days: int, seed: int = 0,
                 start_date: datetime = datetime(2019, 1, 7)) -> pd.DataFrame:
    """Viaggi Poisson dai profili (stesso schema letto da ingest_trips)"""
    rng = np.random.default_rng(seed)
    n_zones = profiles.passenger_rates.shape[0]
    rows = []
    for day in range(days):
        for zone in range(n_zones):
            for hour in range(HOURS):
                count = int(rng.poisson(profiles.passenger_rates[zone, hour]))
                if not count:
                    continue
                offsets = np.sort(rng.uniform(0, 3600, size=count))
                dests = rng.choice(n_zones, size=count, p=profiles.od_probs[zone])
                base = start_date + timedelta(days=day, hours=hour)
                for offset, dest in zip(offsets, dests):
                    stamp = base + timedelta(seconds=int(offset))
                    rows.append((stamp.isoformat(), zone, int(dest)))
    rows.sort()
    return pd.DataFrame(rows, columns=['timestamp_iso8601', 'pickup_zone', 'dropoff_zone'])


def gen_synthetic_demand(preset: str, grid_h: int, grid_w: int, seed: int, out_dir,
                         overrides: Optional[Mapping] = None, trip_days: int = 0) -> Dict[str, str]:
    """
    Scrive gli scenario file sintetici: profili, rete a griglia e flussi con
    picchi a bassa velocità allineati ai picchi di domanda.

    Returns:
        Dict nome → path dei file scritti
    """
    from surrogate.mfd import save_flows, synthetic_flows
    from surrogate.netgraph import grid_network, save_network

    print(f"\n🚀 GEN DEMAND - preset {preset}, griglia {grid_h}×{grid_w}, seed {seed}")
    print("=" * 50)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    profiles = demand_profiles(preset, grid_h, grid_w, seed, overrides)
    peak_hours = profiles.meta.get('peak_hours', [])
    graph = grid_network(grid_h, grid_w, DEMAND_CONFIG['cell_km'])
    series = synthetic_flows(
        graph, peak_hours=peak_hours, peak_width=profiles.meta.get('peak_width', 1.0),
        offpeak_speed_kmh=DEMAND_CONFIG['offpeak_speed_kmh'], peak_speed_kmh=DEMAND_CONFIG['peak_speed_kmh'],
    )

    paths = {'profiles': str(profiles.save(out_dir / "demand_profiles.json"))}
    edges_path, nodes_path = save_network(graph, out_dir / "network_edges.csv", out_dir / "network_nodes.csv")
    paths['network_edges'], paths['network_nodes'] = str(edges_path), str(nodes_path)
    paths['flows'] = str(save_flows(series, out_dir / "flows.csv"))
    if trip_days:
        trips_path = out_dir / "trips.csv"
        sample_trips(profiles, trip_days, seed).to_csv(trips_path, index=False, encoding='utf-8')
        paths['trips'] = str(trips_path)

    for key, path in paths.items():
        print(f"  ✅ {key}: {os.path.basename(path)}")
    return paths
