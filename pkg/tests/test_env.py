# tests/test_env.py
import numpy as np
import pytest

from conftest import flat_table
from simulator.env import (
    Driver, PassengerRequest, RideHailingEnv, SimConfig, exact_assignment, greedy_assignment, sample_arrivals
)
from simulator.reward import RewardConfig
from utils.errors import ConfigError, ContractError, ShapeError

ONES = np.ones(4)
ZEROS = np.zeros(4)


def add_request(env, zone, dest=1):
    state = env.state
    request = PassengerRequest(state.requests_created, zone, dest, state.clock)
    state.requests_created += 1
    state.queues[zone].append(request)
    return request


def add_driver(env, zone):
    state = env.state
    driver = Driver(state.drivers_created, zone)
    state.drivers_created += 1
    state.idle[zone].append(driver)
    return driver


def assert_conserved(env):
    counts = env.conservation()
    assert counts['requests_created'] == counts['unmatched'] + counts['awaiting_pickup'] + counts['completed']
    assert counts['drivers_created'] == (counts['idle'] + counts['enroute_pickup']
                                         + counts['occupied'] + counts['departed'])


def test_fresh_reset_observation(quiet_env_factory):
    env = quiet_env_factory(passenger_rate=12.0, driver_rate=5.0)
    state = env.reset(seed=0)
    assert state.clock == 0.0
    obs = env.observe()
    assert obs.shape == (18,)
    assert obs[:10].tolist() == [0.0, 1.0] + [0.0] * 8
    assert obs[10:14].tolist() == [12.0] * 4
    assert obs[14:].tolist() == [5.0] * 4


def test_observation_counts_queue(quiet_env_factory):
    env = quiet_env_factory()
    env.reset(seed=0)
    for _ in range(3):
        add_request(env, 2)
    assert env.observe()[2 + 2] == 3


def test_same_seed_same_episode(env_factory):
    traces = []
    for _ in range(2):
        env = env_factory(warmup_epochs=6, record_trace=True, randomize_start=True)
        env.reset(seed=42)
        for step in range(30):
            env.step(ONES if step % 3 == 0 else ZEROS)
        traces.append((env.observe(), env.trace_frame()))
    assert np.array_equal(traces[0][0], traces[1][0])
    assert traces[0][1].equals(traces[1][1])


def test_warmup_seeds_queues(env_factory):
    for seed in range(20):
        env = env_factory(warmup_epochs=60)
        state = env.reset(seed=seed)
        assert state.n_p.sum() + state.n_d.sum() > 0
        assert state.completed == []
        assert state.epoch == 60


def test_sample_arrivals_moments():
    rng = np.random.default_rng(0)
    assert all(sample_arrivals(0.0, 1.0, rng) == 0 for _ in range(100))
    draws = np.array([sample_arrivals(3600.0, 1.0 / 3600.0, rng) for _ in range(100_000)])
    assert abs(draws.mean() - 1.0) < 3.0 / np.sqrt(draws.size)
    assert draws.var() == pytest.approx(1.0, rel=0.05)
    with pytest.raises(ContractError):
        sample_arrivals(-1.0, 1.0, rng)


def test_single_pair_pickup_wait(quiet_env_factory):
    env = quiet_env_factory()
    env.reset(seed=0)
    add_request(env, 0)
    add_driver(env, 0)
    assignments = env.match_zone(0)
    assert len(assignments) == 1
    assert assignments[0].request.pickup_wait * 3600.0 == pytest.approx(180.0)
    assert env.state.n_p.sum() == 0 and env.state.n_d.sum() == 0


def test_empty_side_matches_nothing(quiet_env_factory):
    env = quiet_env_factory()
    env.reset(seed=0)
    add_request(env, 0)
    assert env.match_zone(0) == []
    assert env.match_zone(3) == []


def test_greedy_on_small_matrix():
    costs = np.array([[1.0, 2.0], [2.0, 4.0]])
    greedy = greedy_assignment(costs)
    assert greedy == [(0, 0), (1, 1)]
    assert sum(costs[p, d] for p, d in greedy) == 5.0
    # l'anti-diagonale costa 4: il greedy non è ottimo in generale
    exact = exact_assignment(costs)
    assert exact == [(0, 1), (1, 0)]
    assert sum(costs[p, d] for p, d in exact) == 4.0


def test_greedy_matches_exact_with_zone_costs():
    # dentro una zona il costo dipende solo dall'autista
    rng = np.random.default_rng(4)
    for _ in range(50):
        driver_costs = rng.random(int(rng.integers(1, 7)))
        costs = np.broadcast_to(driver_costs, (int(rng.integers(1, 7)), driver_costs.size))
        greedy = sum(costs[p, d] for p, d in greedy_assignment(costs))
        exact = sum(costs[p, d] for p, d in exact_assignment(costs))
        assert greedy == pytest.approx(exact)


def test_exact_matching_limit():
    with pytest.raises(ConfigError):
        exact_assignment(np.zeros((7, 7)))


def test_greedy_pairs_min_side():
    costs = np.random.default_rng(0).random((5, 3))
    pairs = greedy_assignment(costs)
    assert len(pairs) == 3
    assert len({d for _, d in pairs}) == 3


def test_hold_accrues_matching_wait(quiet_env_factory):
    env = quiet_env_factory()
    env.reset(seed=0)
    for _ in range(3):
        add_request(env, 1)
    previous = 0.0
    for _ in range(5):
        _, breakdown, _ = env.step(ZEROS)
        assert breakdown.d_match == pytest.approx(3 * 10.0 / 3600.0)
        assert breakdown.d_pickup == 0.0
        assert breakdown.d_match >= previous
        previous = breakdown.d_match
    assert env.state.n_p[1] == 3


@pytest.mark.parametrize('rate_before, rate_after', [(0.0, 100.0), (100.0, 0.0)])
def test_arrivals_use_rates_of_new_hour(rate_before, rate_after):
    rates = np.zeros((4, 24))
    rates[:, 8], rates[:, 9] = rate_before, rate_after
    config = SimConfig(grid_h=2, grid_w=2, passenger_rates=rates, driver_rates=np.zeros((4, 24)),
                       horizon_h=2.0, epoch_dt_s=3600.0, warmup_epochs=0, randomize_start=False,
                       start_hour=8.0)
    env = RideHailingEnv(config, flat_table(), RewardConfig())
    env.reset(seed=0)
    state, _, _ = env.step(ZEROS)
    assert state.hour == 9
    assert env.observe()[10:14].tolist() == [rate_after] * 4
    assert (state.n_p.sum() > 0) == (rate_after > 0)


def test_match_all_with_ample_drivers(quiet_env_factory):
    env = quiet_env_factory()
    env.reset(seed=0)
    for _ in range(3):
        add_request(env, 0)
    for _ in range(5):
        add_driver(env, 0)
    _, breakdown, _ = env.step(ONES)
    assert env.state.n_p.sum() == 0
    assert env.state.n_d[0] == 2
    assert breakdown.d_match == 0.0
    assert breakdown.d_pickup == pytest.approx(3 * 0.05)


def test_neighbor_matching_flag(quiet_env_factory):
    for flag, expected in ((True, 1), (False, 0)):
        env = quiet_env_factory(neighbor_matching=flag)
        env.reset(seed=0)
        add_request(env, 0)
        add_driver(env, 1)
        assert len(env.match_zone(0)) == expected


def test_scripted_trip_lifecycle(quiet_env_factory):
    env = quiet_env_factory(horizon_h=0.2)
    env.reset(seed=0)
    request = add_request(env, 0, dest=1)
    driver = add_driver(env, 0)

    env.step(ONES)
    assert request.match_time == 0.0
    assert request.pickup_time == pytest.approx(0.05)
    assert driver.status == 'enroute_pickup'
    assert driver.free_at == pytest.approx(0.15)
    assert_conserved(env)

    for _ in range(17):
        env.step(ZEROS)
    assert env.state.epoch == 18
    assert driver.status == 'occupied'
    assert env.state.requests_completed == 1
    assert_conserved(env)

    for _ in range(36):
        env.step(ZEROS)
    assert env.state.epoch == 54
    assert driver.status == 'idle'
    assert env.state.idle[1] == [driver]
    assert_conserved(env)


def test_conservation_and_non_negative_waits(env_factory):
    env = env_factory(horizon_h=0.5, driver_logoff_prob=0.3)
    env.reset(seed=3)
    rng = np.random.default_rng(3)
    done = False
    while not done:
        _, breakdown, done = env.step(rng.integers(0, 2, size=4))
        assert breakdown.d_match >= 0 and breakdown.d_pickup >= 0
        assert_conserved(env)
    for request in env.state.completed:
        assert request.matching_wait >= 0 and request.pickup_wait >= 0
        assert request.request_time <= request.match_time <= request.pickup_time


def test_logoff_counts_departures(quiet_env_factory):
    env = quiet_env_factory(driver_logoff_prob=1.0, horizon_h=0.2)
    env.reset(seed=0)
    add_request(env, 0, dest=1)
    add_driver(env, 0)
    for _ in range(60):
        env.step(ONES)
    assert env.state.drivers_departed == 1
    assert_conserved(env)


def test_step_after_done_raises(quiet_env_factory):
    env = quiet_env_factory(horizon_h=60.0 / 3600.0)
    env.reset(seed=0)
    done = False
    steps = 0
    while not done:
        _, _, done = env.step(ZEROS)
        steps += 1
    assert steps == 6
    with pytest.raises(ContractError):
        env.step(ZEROS)


def test_action_shape_checked(quiet_env_factory):
    env = quiet_env_factory()
    env.reset(seed=0)
    with pytest.raises(ShapeError):
        env.step(np.ones(3))


def test_step_before_reset_raises(quiet_env_factory):
    with pytest.raises(ContractError):
        quiet_env_factory().step(ZEROS)


def test_clone_is_independent(env_factory):
    env = env_factory()
    env.reset(seed=5)
    before = env.observe().copy()
    twin = env.clone()
    for _ in range(10):
        twin.step(ONES)
    assert np.array_equal(env.observe(), before)
    assert twin.state.epoch == 10 and env.state.epoch == 0


def test_episode_summary_excludes_warmup(env_factory):
    env = env_factory(warmup_epochs=30, horizon_h=0.5)
    env.reset(seed=1)
    done = False
    while not done:
        _, _, done = env.step(ONES)
    summary = env.episode_summary()
    assert summary['completed'] == len(env.state.completed) > 0
    start = env.state.control_start_time
    assert all(r.request_time >= start - 1e-12 for r in env.state.completed)
    assert 0.0 <= summary['violation_rate'] <= 1.0


def test_trace_export_columns(env_factory):
    env = env_factory(record_trace=True)
    env.reset(seed=0)
    for _ in range(20):
        env.step(ONES)
    frame = env.trace_frame()
    assert list(frame.columns) == ['time', 'event_kind', 'zone', 'request_id', 'driver_id', 'value']
    assert {'request', 'driver_arrival', 'match'} <= set(frame['event_kind'])


def test_sim_config_validation(sim_factory):
    with pytest.raises(ConfigError):
        sim_factory(epoch_dt_s=0.0)
    with pytest.raises(ConfigError):
        sim_factory(warmup_epochs=400, horizon_h=1.0)
    with pytest.raises(ConfigError):
        SimConfig(grid_h=2, grid_w=2, passenger_rates=np.zeros((3, 24)), driver_rates=np.zeros((4, 24)))
    with pytest.raises(ConfigError):
        sim_factory(passenger_rate=-1.0)
