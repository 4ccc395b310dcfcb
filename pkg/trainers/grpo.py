# trainers/grpo.py - Score normalizzati per gruppo di azioni candidate sullo stesso stato
from dataclasses import dataclass, fields
from typing import Dict, Mapping, Optional, Sequence

import numpy as np

from config_rastmoe import GRPO_CONFIG
from simulator.reward import MultiplierState
from trainers.ppo import PPOConfig, finalize_buffer, ppo_update
from trainers.rollout import RolloutBuffer, collect_rollouts
from utils.errors import CapabilityError, ConfigError


@dataclass(frozen=True)
class GRPOConfig:
    group_size: int = GRPO_CONFIG['group_size']
    eps: float = GRPO_CONFIG['eps']
    beta_g: float = GRPO_CONFIG['beta_g']

    def __post_init__(self):
        if self.group_size < 2:
            raise ConfigError(f"grpo.group_size must be ≥ 2, got {self.group_size}")
        if self.eps <= 0:
            raise ConfigError(f"grpo.eps must be > 0, got {self.eps}")
        if self.beta_g < 0:
            raise ConfigError(f"grpo.beta_g must be ≥ 0, got {self.beta_g}")

    @classmethod
    def from_dict(cls, values: Optional[Mapping] = None) -> 'GRPOConfig':
        values = dict(values or {})
        unknown = set(values) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown grpo keys: {sorted(unknown)}")
        return cls(**values)


def grpo_normalize(rewards: Sequence[float], eps: float = GRPO_CONFIG['eps']) -> np.ndarray:
    """r̃_k = tanh((r_k − r̄) / (σ + eps)) con media e deviazione standard del gruppo"""
    rewards = np.asarray(rewards, dtype=np.float64)
    if rewards.size < 2:
        raise ConfigError(f"a candidate group needs ≥ 2 rewards, got {rewards.size}")
    return np.tanh((rewards - rewards.mean()) / (rewards.std() + eps))


class CandidateScorer:
    """
    Valuta group_size azioni sullo stato corrente di un env clonato: la prima
    è l'azione eseguita, le altre sono estratte dalla policy con un rng dedicato.
    """

    def __init__(self, config: GRPOConfig, rng: np.random.Generator):
        self.config = config
        self.rng = rng

    def candidate_rewards(self, env, executed: np.ndarray, probs: np.ndarray,
                          multiplier: MultiplierState) -> np.ndarray:
        if not callable(getattr(env, 'clone', None)):
            raise CapabilityError(f"{type(env).__name__} does not support state cloning")
        candidates = [np.asarray(executed, dtype=np.float64)]
        for _ in range(self.config.group_size - 1):
            candidates.append((self.rng.random(probs.shape) < probs).astype(np.float64))
        rewards = []
        for action in candidates:
            _, breakdown, _ = env.clone().step(action, multiplier)
            rewards.append(breakdown.r)
        return np.array(rewards)

    def __call__(self, env, executed: np.ndarray, probs: np.ndarray, multiplier: MultiplierState) -> float:
        return float(grpo_normalize(self.candidate_rewards(env, executed, probs, multiplier), self.config.eps)[0])


def blend_advantages(advantages: np.ndarray, scores: np.ndarray, beta_g: float) -> np.ndarray:
    """Â′ = Â + beta_g · r̃"""
    return advantages + beta_g * scores


def grpo_step(envs, policy, grpo_config: GRPOConfig, ppo_config: PPOConfig, rng: np.random.Generator,
              group_rng: np.random.Generator, multiplier: Optional[MultiplierState] = None,
              reward_config=None) -> Dict:
    """
    Rollout con scoring dei candidati, GAE sui reward originali, blend dello
    score nell'advantage e update PPO invariato.

    Returns:
        Dict con 'buffer' e 'stats'
    """
    buffer = collect_rollouts(envs, policy, ppo_config.n_steps, rng, multiplier, reward_config,
                              scorer=CandidateScorer(grpo_config, group_rng))
    apply_group_scores(buffer, grpo_config, ppo_config)
    return {'buffer': buffer, 'stats': ppo_update(buffer, policy, ppo_config, rng)}


def apply_group_scores(buffer: RolloutBuffer, grpo_config: GRPOConfig, ppo_config: PPOConfig) -> RolloutBuffer:
    finalize_buffer(buffer, ppo_config)
    buffer.advantages = blend_advantages(buffer.advantages, buffer.scores, grpo_config.beta_g)
    return buffer
