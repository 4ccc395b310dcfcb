# tests/test_train_loop.py
import importlib
import json
import math

import numpy as np
import pandas as pd
import pytest

from simulator.reward import RewardConfig
from trainers.train_loop import TrainConfig, Trainer, latest_checkpoint, train_loop
from utils.config_loader import ConfigBundle
from utils.errors import ConfigError, NumericError

train_module = importlib.import_module("trainers.train_loop")


def small_bundle(**train) -> ConfigBundle:
    data = {
        'scenario': {
            'grid_h': 2, 'grid_w': 2, 'horizon_h': 0.25, 'warmup_epochs': 0, 'randomize_start': False,
            'start_hour': 8.0,
            'demand': {'preset': 'flat', 'seed': 0},
            'network': {'kind': 'grid'},
            'flows': {'kind': 'synthetic'},
        },
        'encoder': {'d': 8, 'attn_layers': 1, 'attn_heads': 2, 'n_experts': 4, 'top_k': 2, 'expert_hidden': 6},
        'ppo': {'n_steps': 32, 'batch_size': 16, 'n_epochs': 1},
        'grpo': {'group_size': 2},
        'train': {'total_steps': 32, 'n_envs': 2, 'eval_every': 0, 'verbose': False, **train},
    }
    return ConfigBundle(data)


def test_single_update_writes_checkpoint_and_metrics(tmp_path):
    result = train_loop(small_bundle(), tmp_path, seed=0)
    assert result['updates'] == 1 and result['steps'] == 32
    assert latest_checkpoint(tmp_path).name == "checkpoint_000001.npz"
    metrics = pd.read_csv(tmp_path / "metrics.csv")
    assert metrics['update'].tolist() == [1]
    assert math.isfinite(metrics['mean_reward'].iloc[0])
    assert (tmp_path / "lambda_trajectory.csv").exists()
    utilization = pd.read_csv(tmp_path / "utilization.csv")
    assert list(utilization.columns) == ['expert_id', 'hour', 'activation_count']


def test_resume_continues_counters(tmp_path):
    first = train_loop(small_bundle(), tmp_path, seed=0)
    resumed = train_loop(small_bundle(total_steps=64), tmp_path, seed=0, resume=str(first['checkpoint']))
    assert resumed['updates'] == 2 and resumed['steps'] == 64
    assert pd.read_csv(tmp_path / "metrics.csv")['update'].tolist() == [1, 2]
    assert latest_checkpoint(tmp_path).name == "checkpoint_000002.npz"


def test_runs_are_seed_deterministic(tmp_path):
    first = train_loop(small_bundle(), tmp_path / "a", seed=3)
    second = train_loop(small_bundle(), tmp_path / "b", seed=3)
    for name, param in first['policy'].params.items():
        assert np.array_equal(param.data, second['policy'].params[name].data), name
    for name in ("metrics.csv", "lambda_trajectory.csv", "lambda_steps.csv", "utilization.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name


def test_grpo_training_runs(tmp_path):
    result = train_loop(small_bundle(algo='grpo'), tmp_path, seed=1)
    assert result['updates'] == 1
    assert result['checkpoint'].exists()


def test_periodic_evaluation(tmp_path):
    bundle = small_bundle(eval_every=1, eval_episodes=1)
    result = train_loop(bundle, tmp_path, seed=0)
    assert len(result['reports']) == 1
    evals = pd.read_csv(tmp_path / "eval.csv")
    assert evals['update'].tolist() == [1]
    assert evals['seeds'].tolist() == [10_000]


def test_non_finite_metrics_stop_with_dump(tmp_path, monkeypatch):
    def broken_update(*args, **kwargs):
        return {'policy_loss': float('nan'), 'value_loss': 0.0, 'entropy': 0.0, 'clip_frac': 0.0}

    monkeypatch.setattr(train_module, 'ppo_update', broken_update)
    with pytest.raises(NumericError):
        train_loop(small_bundle(), tmp_path, seed=0)
    dump = json.loads((tmp_path / "diagnostic_dump.json").read_text(encoding='utf-8'))
    assert 'policy_loss' in dump['error']
    assert dump['last_checkpoint'] is None
    assert latest_checkpoint(tmp_path) is None


def test_train_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(algo='sac')
    with pytest.raises(ConfigError):
        TrainConfig(total_steps=0)
    with pytest.raises(ConfigError, match="unknown train keys"):
        TrainConfig.from_dict({'epochs': 3})


def test_rollout_length_must_split_across_envs(tmp_path):
    bundle = small_bundle(n_envs=3)
    with pytest.raises(ConfigError, match="multiple of train.n_envs"):
        Trainer(bundle, tmp_path)


def test_lambda_logged_per_transition(tmp_path):
    first = train_loop(small_bundle(), tmp_path, seed=0)
    train_loop(small_bundle(total_steps=64), tmp_path, seed=0, resume=str(first['checkpoint']))
    steps = pd.read_csv(tmp_path / "lambda_steps.csv")
    assert list(steps.columns) == ['update', 'step', 'env', 'lambda', 'g']
    assert steps['step'].tolist() == list(range(1, 65))
    assert steps['env'].tolist() == [0, 1] * 32
    assert steps['update'].tolist() == [1] * 32 + [2] * 32

    config = RewardConfig()
    lam, g = steps['lambda'].to_numpy(), steps['g'].to_numpy()
    assert lam[0] == pytest.approx(config.lambda_init)
    expected = np.maximum(0.0, lam[:-1] + config.xi * (g[:-1] - config.alpha))
    assert np.allclose(lam[1:], expected, rtol=0, atol=1e-12)
    final = max(0.0, lam[-1] + config.xi * (g[-1] - config.alpha))
    trajectory = pd.read_csv(tmp_path / "lambda_trajectory.csv")
    assert trajectory['lambda'].iloc[-1] == pytest.approx(final)
