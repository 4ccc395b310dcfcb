# tests/test_demand.py
import numpy as np
import pytest

from processors.demand import (
    DemandProfiles, demand_profiles, gen_synthetic_demand, ingest_trips, load_zone_centroids, peak_bump,
    sample_trips,
)
from simulator.scenario import build_scenario
from utils.errors import ConfigError, DataError


def write_trips(path, lines):
    path.write_text("timestamp_iso8601,pickup_zone,dropoff_zone\n" + "\n".join(lines) + "\n", encoding='utf-8')
    return path


# ==================== INGEST ====================

def test_ingest_averages_over_days(tmp_path):
    trips = write_trips(tmp_path / "trips.csv", [
        "2019-01-07T08:10:00,0,1",
        "2019-01-07T08:40:00,0,1",
        "2019-01-07T17:05:00,3,2",
        "2019-01-08T08:20:00,0,0",
    ])
    profiles = ingest_trips(trips, 2, 2)
    assert profiles.meta['days'] == 2 and profiles.meta['trips'] == 4
    assert profiles.passenger_rates[0, 8] == 1.5
    assert profiles.passenger_rates[3, 17] == 0.5
    assert profiles.passenger_rates.sum() == 2.0
    assert np.allclose(profiles.driver_rates, 1.1 * profiles.passenger_rates)
    assert profiles.od_probs[0].tolist() == pytest.approx([1 / 3, 2 / 3, 0.0, 0.0])
    # zone senza partenze: riga uniforme
    assert profiles.od_probs[1].tolist() == [0.25] * 4
    assert np.allclose(profiles.od_probs.sum(axis=1), 1.0)


def test_ingest_maps_centroids_into_grid(tmp_path):
    centroids_path = tmp_path / "zones.csv"
    centroids_path.write_text("source_zone,x,y\nA,0,0\nB,10,0\nC,0,10\nD,10,10\nE,4,4\n", encoding='utf-8')
    centroids = load_zone_centroids(centroids_path)
    assert centroids['E'] == (4.0, 4.0)

    trips = write_trips(tmp_path / "trips.csv", [
        "2019-01-07T09:00:00,A,D",
        "2019-01-07T09:30:00,B,C",
        "2019-01-07T10:00:00,E,B",
    ])
    profiles = ingest_trips(trips, 2, 2, centroids=centroids)
    assert profiles.passenger_rates[0, 9] == 1.0 and profiles.passenger_rates[1, 9] == 1.0
    assert profiles.passenger_rates[0, 10] == 1.0
    assert profiles.od_probs[0, 3] == 0.5 and profiles.od_probs[0, 1] == 0.5
    assert profiles.od_probs[1, 2] == 1.0


def test_ingest_skips_unmappable_zones_within_limit(tmp_path):
    lines = [f"2019-01-07T{hour:02d}:00:00,1,2" for hour in range(20)] + ["2019-01-07T05:00:00,9,2"]
    profiles = ingest_trips(write_trips(tmp_path / "trips.csv", lines), 2, 2)
    assert profiles.meta['skipped'] == 1 and profiles.meta['trips'] == 20


def test_ingest_rejects_mostly_unmappable_file(tmp_path):
    trips = write_trips(tmp_path / "trips.csv", ["2019-01-07T08:00:00,0,1", "2019-01-07T08:00:00,7,1"])
    with pytest.raises(DataError, match="unmappable"):
        ingest_trips(trips, 2, 2)


def test_ingest_reports_bad_timestamp_line(tmp_path):
    trips = write_trips(tmp_path / "trips.csv", ["2019-01-07T08:00:00,0,1", "yesterday,0,1"])
    with pytest.raises(DataError, match=":3:"):
        ingest_trips(trips, 2, 2)


def test_ingest_missing_file(tmp_path):
    with pytest.raises(DataError, match="not found"):
        ingest_trips(tmp_path / "missing.csv", 2, 2)


# ==================== SYNTHETIC ====================

def test_peak_bump_shape():
    assert peak_bump(8, (8, 17), 1.5) == 1.0
    assert peak_bump(2, (8, 17), 1.5) == 0.0
    assert peak_bump(23, (0,), 1.0) == pytest.approx(np.exp(-0.5))
    assert peak_bump(12, (), 1.0) == 0.0


def test_two_peak_preset_ratio():
    profiles = demand_profiles('two_peak', 2, 2, seed=0)
    rates = profiles.passenger_rates
    assert rates.shape == (4, 24)
    assert np.allclose(rates[:, 8] / rates[:, 2], 3.0)
    assert np.allclose(rates[:, 17] / rates[:, 2], 3.0)
    assert rates.mean(axis=0)[2] == pytest.approx(40.0)
    assert np.allclose(profiles.od_probs.sum(axis=1), 1.0)


def test_flat_preset_and_seed():
    flat = demand_profiles('flat', 3, 3, seed=5)
    assert np.all(flat.passenger_rates == 60.0)
    first = demand_profiles('two_peak', 3, 3, seed=1).passenger_rates
    assert np.array_equal(first, demand_profiles('two_peak', 3, 3, seed=1).passenger_rates)
    assert not np.array_equal(first, demand_profiles('two_peak', 3, 3, seed=2).passenger_rates)
    with pytest.raises(ConfigError):
        demand_profiles('weekend', 2, 2)


def test_sampled_trips_recover_rates(tmp_path):
    profiles = demand_profiles('flat', 2, 2, overrides={'base_rate': 5.0})
    trips = sample_trips(profiles, days=30, seed=0)
    path = tmp_path / "trips.csv"
    trips.to_csv(path, index=False)
    recovered = ingest_trips(path, 2, 2)
    assert recovered.meta['days'] == 30
    assert abs(recovered.passenger_rates.mean() - 5.0) < 0.25


def test_generated_files_build_a_scenario(tmp_path):
    paths = gen_synthetic_demand('two_peak', 2, 2, seed=0, out_dir=tmp_path)
    assert set(paths) == {'profiles', 'network_edges', 'network_nodes', 'flows'}
    profiles = DemandProfiles.load(paths['profiles'])
    assert profiles.meta['preset'] == 'two_peak'

    scenario = build_scenario({
        'grid_h': 2, 'grid_w': 2, 'horizon_h': 0.5, 'warmup_epochs': 0,
        'demand': {'profiles': paths['profiles']},
        'network': {'kind': 'file', 'edges': paths['network_edges'], 'nodes': paths['network_nodes']},
        'flows': {'kind': 'file', 'path': paths['flows']},
    })
    assert scenario.table.n_zones == 4
    assert np.array_equal(scenario.sim.passenger_rates, profiles.passenger_rates)
    env = scenario.make_env()
    env.reset(seed=0)
    assert env.observe().shape == (18,)


def test_unknown_scenario_keys_rejected():
    with pytest.raises(ConfigError, match="unknown scenario keys"):
        build_scenario({'grid_h': 2, 'grid_w': 2, 'speed': 3})
