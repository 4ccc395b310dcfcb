# tests/test_acceptance.py - Riproduzioni end-to-end sullo scenario toy 2×2 (lente, RASTMOE_RUN_SLOW=1)
import math

import numpy as np
import pytest

from conftest import TOY_CONFIG
from policy import ExpertMask
from simulator.reward import RewardConfig
from simulator.scenario import build_scenario
from surrogate.mfd import PerturbationSpec
from trainers.evaluation import degradation, evaluate_policy
from trainers.train_loop import train_loop
from utils.config_loader import load_config

pytestmark = pytest.mark.slow

EVAL_EPISODES = 50


def toy_bundle(**reward):
    return load_config(str(TOY_CONFIG), {}).with_overrides(train={'eval_every': 0, 'verbose': False}, reward=reward)


@pytest.fixture(scope='module')
def adaptive_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("adaptive")
    bundle = toy_bundle()
    result = train_loop(bundle, out, seed=0)
    scenario = build_scenario(bundle.block('scenario'), bundle.base_dir)
    return result, scenario, RewardConfig.from_dict(bundle.block('reward'))


def test_trained_policy_beats_heuristics(adaptive_run):
    result, scenario, reward_config = adaptive_run
    policy = evaluate_policy(result['policy'], scenario, EVAL_EPISODES, reward_config=reward_config)
    for kind in ('instant', 'interval'):
        heuristic = evaluate_policy(kind, scenario, EVAL_EPISODES, reward_config=reward_config)
        assert policy.total_reward > heuristic.total_reward, kind
        assert heuristic.pickup_wait_s > policy.pickup_wait_s, kind


def test_fixed_ratio_training_collapses_matching_wait(adaptive_run, tmp_path):
    result, scenario, reward_config = adaptive_run
    adaptive = evaluate_policy(result['policy'], scenario, EVAL_EPISODES, reward_config=reward_config)

    bundle = toy_bundle(fixed_ratio='8:1')
    hacked = train_loop(bundle, tmp_path, seed=0)
    fixed = evaluate_policy(hacked['policy'], scenario, EVAL_EPISODES, reward_config=reward_config)
    assert fixed.match_wait_s < 0.1 * adaptive.match_wait_s
    assert fixed.pickup_wait_s >= 1.5 * adaptive.pickup_wait_s


def test_masking_busiest_experts_hurts(adaptive_run):
    result, scenario, reward_config = adaptive_run
    policy = result['policy']
    unmasked = evaluate_policy(policy, scenario, EVAL_EPISODES, reward_config=reward_config, track=True)
    mask = ExpertMask.top_frequency(policy.utilization.frequencies(), 2)
    masked = evaluate_policy(policy, scenario, EVAL_EPISODES, seeds=unmasked.seeds, mask=mask,
                             reward_config=reward_config)
    assert masked.total_reward < unmasked.total_reward


def test_incident_degrades_more_than_global(adaptive_run):
    result, scenario, reward_config = adaptive_run
    policy = result['policy']
    base = evaluate_policy(policy, scenario, EVAL_EPISODES, reward_config=reward_config)
    corridor = tuple(sorted(edge.id for edge in scenario.graph.edges)[:5])
    incident = evaluate_policy(policy, scenario, seeds=base.seeds, reward_config=reward_config,
                               perturbation=PerturbationSpec('incident', corridor_edges=corridor))
    shocked = evaluate_policy(policy, scenario, seeds=base.seeds, reward_config=reward_config,
                              perturbation=PerturbationSpec('global'))
    incident_pct = degradation(base, incident)
    assert math.isfinite(incident_pct)
    assert degradation(base, shocked) < incident_pct


def test_training_rerun_is_bit_identical(tmp_path):
    bundle = toy_bundle().with_overrides(train={'total_steps': 4096})
    first = train_loop(bundle, tmp_path / "a", seed=5)
    second = train_loop(bundle, tmp_path / "b", seed=5)
    for name in ("metrics.csv", "lambda_trajectory.csv", "lambda_steps.csv", "utilization.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name
    for name, param in first['policy'].params.items():
        assert np.array_equal(param.data, second['policy'].params[name].data), name
