# tests/test_mfd.py
import numpy as np
import pytest

from surrogate.mfd import (
    EdgeFlowSeries, FlowBin, ODTravelTimeTable, PerturbationSpec, aggregate_zone_hour,
    build_od_table, build_zone_speeds, edge_speed_average, load_flows, perturb_table, query_travel_time
)
from surrogate.netgraph import Edge, NetworkGraph, build_static_routes
from utils.errors import (
    ContractError, FlowParseError, PerturbationSpecError, SurrogateBuildError, TravelTimeLookupError
)


def one_zone_graph(*edges):
    nodes = {'a': (0.0, 0.0), 'b': (1.0, 0.0)}
    return NetworkGraph(nodes, tuple(edges), 1, {'a': 0, 'b': 0})


def two_zone_graph(length_km=10.0):
    nodes = {'a': (0.0, 0.0), 'b': (1.0, 0.0)}
    edges = (Edge('ab', 'a', 'b', length_km, 1, 0), Edge('ba', 'b', 'a', length_km, 1, 1))
    return NetworkGraph(nodes, edges, 2, {'a': 0, 'b': 1})


def test_single_edge_speed_is_q_over_k():
    graph = one_zone_graph(Edge('e', 'a', 'b', 1.0, 1, 0))
    series = {'e': EdgeFlowSeries('e', [FlowBin(0.0, 1.0, 10.0, 200.0)])}
    state = aggregate_zone_hour(graph, series, 0)[0]
    assert state.speed == pytest.approx(20.0)
    assert not state.fallback


def test_space_mean_differs_from_edge_speed_average():
    graph = one_zone_graph(Edge('A', 'a', 'b', 1.0, 1, 0), Edge('B', 'b', 'a', 1.0, 1, 0))
    series = {
        'A': EdgeFlowSeries('A', [FlowBin(0.0, 1.0, 100.0, 500.0)]),
        'B': EdgeFlowSeries('B', [FlowBin(0.0, 1.0, 5.0, 300.0)]),
    }
    state = aggregate_zone_hour(graph, series, 0)[0]
    assert state.speed == pytest.approx(800.0 / 105.0)
    assert round(state.speed, 2) == 7.62
    assert edge_speed_average(graph, series, 0, 0) == pytest.approx(32.5)


def test_empty_zone_hour_uses_fallback():
    graph = one_zone_graph(Edge('e', 'a', 'b', 1.0, 1, 0))
    series = {'e': EdgeFlowSeries('e', [FlowBin(5.0, 1.0, 10.0, 200.0)])}
    state = aggregate_zone_hour(graph, series, 0, fallback_speed_kmh=45.0)[0]
    assert state.fallback
    assert state.speed == 45.0


def test_hour_out_of_range():
    graph = one_zone_graph(Edge('e', 'a', 'b', 1.0, 1, 0))
    with pytest.raises(SurrogateBuildError):
        aggregate_zone_hour(graph, {}, 24)


def test_mfd_identity_on_fixture(five_zone_graph, five_zone_series):
    _, states = build_zone_speeds(five_zone_graph, five_zone_series)
    assert len(states) == 24 * 5
    for state in states:
        assert not state.fallback
        assert abs(state.flow - state.density * state.speed) / max(state.flow, 1e-12) < 1e-12


def test_load_flows_splits_hour_boundaries(tmp_path):
    path = tmp_path / "flows.csv"
    path.write_text("edge_id,t_start_h,dt_h,density,flow\ne,0.5,1.0,10.0,200.0\n", encoding='utf-8')
    bins = load_flows(path)['e'].bins
    assert [(b.t_start, b.dt) for b in bins] == [(0.5, 0.5), (1.0, 0.5)]
    assert [b.hour for b in bins] == [0, 1]


def test_load_flows_rejects_overlap(tmp_path):
    path = tmp_path / "flows.csv"
    path.write_text("e,0.0,1.0,10.0,200.0\ne,0.5,1.0,10.0,200.0\n", encoding='utf-8')
    with pytest.raises(FlowParseError, match="overlap"):
        load_flows(path)


def test_load_flows_rejects_unknown_edge(tmp_path, five_zone_graph):
    path = tmp_path / "flows.csv"
    path.write_text("zz,0.0,1.0,10.0,200.0\n", encoding='utf-8')
    with pytest.raises(FlowParseError, match="unknown edge"):
        load_flows(path, five_zone_graph)


def test_single_edge_travel_time():
    routes = build_static_routes(two_zone_graph(10.0))
    table = build_od_table(routes, np.full((24, 2), 50.0))
    assert table.query((0, 1), 3.0) == pytest.approx(0.2)
    assert all(table.query((z, z), h) == 0.0 for z in range(2) for h in range(24))


def test_non_positive_speed_rejected():
    routes = build_static_routes(two_zone_graph())
    speeds = np.full((24, 2), 50.0)
    speeds[3, 1] = 0.0
    with pytest.raises(SurrogateBuildError, match="zone 1 at hour 3"):
        build_od_table(routes, speeds)


def test_peak_hour_slower_on_fixture(five_zone_graph, five_zone_series):
    speeds, _ = build_zone_speeds(five_zone_graph, five_zone_series)
    table = build_od_table(build_static_routes(five_zone_graph), speeds)
    assert table.query((0, 1), 8.0) > table.query((0, 1), 3.0)


def test_monotone_response_to_speed_increase(five_zone_graph):
    routes = build_static_routes(five_zone_graph)
    rng = np.random.default_rng(0)
    for _ in range(100):
        speeds = rng.uniform(5.0, 60.0, size=(24, 5))
        faster = speeds * np.where(rng.random((24, 5)) < 0.3, rng.uniform(1.0, 2.0, size=(24, 5)), 1.0)
        base = build_od_table(routes, speeds).times
        assert np.all(build_od_table(routes, faster).times <= base + 1e-15)


def test_table_additivity(five_zone_graph):
    routes = build_static_routes(five_zone_graph)
    speeds = np.random.default_rng(1).uniform(5.0, 60.0, size=(24, 5))
    table = build_od_table(routes, speeds)
    # 1 → 3 passa per la zona 0: e10 (zona 1) poi e03 (zona 0)
    expected = 2.0 / speeds[:, 1] + 2.0 / speeds[:, 0]
    assert np.allclose(table.times[:, table.index[(1, 3)]], expected, rtol=0, atol=1e-15)


def test_query_uses_modular_clock(five_zone_graph, five_zone_series):
    speeds, _ = build_zone_speeds(five_zone_graph, five_zone_series)
    table = build_od_table(build_static_routes(five_zone_graph), speeds)
    assert ODTravelTimeTable.hour_index(25.5) == 1
    assert query_travel_time(table, (0, 2), 25.5) == table.query((0, 2), 1.0)
    assert table.query((0, 2), 8.1) == table.query((0, 2), 8.9)
    with pytest.raises(TravelTimeLookupError):
        table.query((0, 7), 1.0)
    with pytest.raises(ContractError):
        table.query((0, 1), -1.0)


def test_table_save_load(tmp_path, five_zone_graph, five_zone_series):
    speeds, _ = build_zone_speeds(five_zone_graph, five_zone_series)
    table = build_od_table(build_static_routes(five_zone_graph), speeds)
    loaded = ODTravelTimeTable.load(table.save(tmp_path / "table.json"))
    assert np.array_equal(loaded.times, table.times)
    assert loaded.build_hash == table.build_hash
    assert loaded.od_pairs == table.od_pairs


@pytest.fixture
def fixture_table(five_zone_graph, five_zone_series):
    speeds, _ = build_zone_speeds(five_zone_graph, five_zone_series)
    return build_od_table(build_static_routes(five_zone_graph), speeds)


def test_global_identity_factor(fixture_table):
    perturbed = perturb_table(fixture_table, PerturbationSpec('global', eta_range=(1.0, 1.0)),
                              np.random.default_rng(0))
    assert np.array_equal(perturbed.times, fixture_table.times)


def test_global_is_deterministic_and_leaves_original(fixture_table):
    original = fixture_table.times.copy()
    spec = PerturbationSpec('global', seed=3)
    first, second = perturb_table(fixture_table, spec), perturb_table(fixture_table, spec)
    assert np.array_equal(first.times, second.times)
    assert np.array_equal(fixture_table.times, original)
    ratio = first.times[:, 1] / fixture_table.times[:, 1]
    assert np.all((ratio >= 0.8) & (ratio <= 1.2))


def test_incident_scales_only_crossing_routes(fixture_table, five_zone_graph):
    corridor = ('e12', 'e23', 'e34', 'e41', 'e10')
    spec = PerturbationSpec('incident', alpha_range=(2.0, 2.0), corridor_edges=corridor)
    perturbed = perturb_table(fixture_table, spec, np.random.default_rng(0), five_zone_graph)
    for col, od in enumerate(fixture_table.od_pairs):
        if set(fixture_table.paths[od]) & set(corridor):
            assert np.array_equal(perturbed.times[:, col], 2.0 * fixture_table.times[:, col])
        else:
            assert np.array_equal(perturbed.times[:, col], fixture_table.times[:, col])
    assert '1:0' in perturbed.perturbation['routes_hit']


def test_incident_sampled_corridor_is_connected(fixture_table, five_zone_graph):
    perturbed = perturb_table(fixture_table, PerturbationSpec('incident', seed=11), graph=five_zone_graph)
    corridor = perturbed.perturbation['corridor']
    assert 5 <= len(corridor) <= 12
    for first, second in zip(corridor, corridor[1:]):
        assert five_zone_graph.edge_by_id[first].head == five_zone_graph.edge_by_id[second].tail


def test_incident_needs_five_edges():
    routes = build_static_routes(two_zone_graph())
    table = build_od_table(routes, np.full((24, 2), 50.0))
    with pytest.raises(PerturbationSpecError):
        perturb_table(table, PerturbationSpec('incident', seed=0), graph=two_zone_graph())


def test_invalid_spec_rejected():
    with pytest.raises(PerturbationSpecError):
        PerturbationSpec('flood')
    with pytest.raises(PerturbationSpecError):
        PerturbationSpec('global', eta_range=(1.2, 0.8))
