# trainers/ppo.py - Update PPO con surrogate clippato, entropia e value clipping
import math
from dataclasses import dataclass, fields
from typing import Dict, Mapping, Optional, Tuple

import numpy as np

from config_rastmoe import PPO_CONFIG
from nn import adam_step, backward, maximum, minimum
from trainers.rollout import RolloutBuffer, compute_gae
from utils.errors import ConfigError, NumericError

ADV_EPS = 1e-8


@dataclass(frozen=True)
class PPOConfig:
    lr: float = PPO_CONFIG['lr']
    batch_size: int = PPO_CONFIG['batch_size']
    n_steps: int = PPO_CONFIG['n_steps']
    n_epochs: int = PPO_CONFIG['n_epochs']
    clip_eps: float = PPO_CONFIG['clip_eps']
    clip_range_vf: Optional[float] = PPO_CONFIG['clip_range_vf']
    entropy_coef: float = PPO_CONFIG['entropy_coef']
    value_coef: float = PPO_CONFIG['value_coef']
    gae_lambda: float = PPO_CONFIG['gae_lambda']
    gamma: float = PPO_CONFIG['gamma']
    max_grad_norm: Optional[float] = PPO_CONFIG['max_grad_norm']
    adam_betas: Tuple[float, float] = PPO_CONFIG['adam_betas']
    adam_eps: float = PPO_CONFIG['adam_eps']
    normalize_advantage: bool = PPO_CONFIG['normalize_advantage']

    def __post_init__(self):
        object.__setattr__(self, 'adam_betas', tuple(self.adam_betas))
        if not 0 < self.clip_eps < 1:
            raise ConfigError(f"ppo.clip_eps must lie in (0, 1), got {self.clip_eps}")
        if not 0 < self.gamma <= 1 or not 0 <= self.gae_lambda <= 1:
            raise ConfigError(f"ppo.gamma must lie in (0, 1] and gae_lambda in [0, 1], got {self.gamma}, {self.gae_lambda}")
        if self.lr <= 0 or self.batch_size < 1 or self.n_steps < 1 or self.n_epochs < 1:
            raise ConfigError("ppo.lr, batch_size, n_steps and n_epochs must be positive")

    @classmethod
    def from_dict(cls, values: Optional[Mapping] = None) -> 'PPOConfig':
        values = dict(values or {})
        unknown = set(values) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown ppo keys: {sorted(unknown)}")
        return cls(**values)


def finalize_buffer(buffer: RolloutBuffer, config: PPOConfig) -> RolloutBuffer:
    buffer.advantages, buffer.returns = compute_gae(
        buffer.rewards, buffer.values, buffer.dones, buffer.last_values, config.gamma, config.gae_lambda
    )
    return buffer


def ppo_loss(policy, obs: np.ndarray, actions: np.ndarray, old_log_probs: np.ndarray,
             old_values: np.ndarray, advantages: np.ndarray, returns: np.ndarray, config: PPOConfig):
    """
    Loss PPO su un minibatch.

    Returns:
        (loss Tensor scalare, dict di statistiche)
    """
    result = policy.act_and_evaluate(obs, mode='evaluate', actions=actions)
    ratio = (result.log_prob - old_log_probs).exp()
    surrogate = ratio * advantages
    clipped = ratio.clip(1.0 - config.clip_eps, 1.0 + config.clip_eps) * advantages
    policy_loss = -minimum(surrogate, clipped).mean()

    values = result.value
    value_error = (values - returns) ** 2
    if config.clip_range_vf is not None:
        values_clipped = (values - old_values).clip(-config.clip_range_vf, config.clip_range_vf) + old_values
        value_loss = maximum(value_error, (values_clipped - returns) ** 2).mean()
    else:
        value_loss = value_error.mean()
    entropy = result.entropy.mean()

    loss = policy_loss - config.entropy_coef * entropy + config.value_coef * value_loss
    stats = {
        'policy_loss': policy_loss.item(),
        'value_loss': value_loss.item(),
        'entropy': entropy.item(),
        'clip_frac': float(np.mean(np.abs(ratio.data - 1.0) > config.clip_eps)),
        'max_ratio_dev': float(np.max(np.abs(ratio.data - 1.0))),
    }
    return loss, stats


def ppo_update(buffer: RolloutBuffer, policy, config: PPOConfig, rng: np.random.Generator) -> Dict[str, float]:
    """
    n_epochs passate su minibatch permutati; advantage normalizzati per
    minibatch. Una loss non finita solleva NumericError prima dello step.

    Returns:
        Medie di policy_loss, value_loss, entropy, clip_frac più first_ratio_dev
    """
    if buffer.advantages is None:
        finalize_buffer(buffer, config)
    obs, actions = buffer.flat('obs'), buffer.flat('actions')
    old_log_probs, old_values = buffer.flat('log_probs'), buffer.flat('values')
    advantages, returns = buffer.flat('advantages'), buffer.flat('returns')
    total = len(buffer)

    history = {key: [] for key in ('policy_loss', 'value_loss', 'entropy', 'clip_frac', 'grad_norm')}
    first_ratio_dev = None
    for _ in range(config.n_epochs):
        order = rng.permutation(total)
        for start in range(0, total, config.batch_size):
            idx = order[start:start + config.batch_size]
            adv = advantages[idx]
            if config.normalize_advantage and len(idx) > 1:
                adv = (adv - adv.mean()) / (adv.std() + ADV_EPS)
            loss, stats = ppo_loss(policy, obs[idx], actions[idx], old_log_probs[idx],
                                   old_values[idx], adv, returns[idx], config)
            if not math.isfinite(loss.item()):
                raise NumericError(f"non-finite PPO loss {loss.item()} (policy {stats['policy_loss']}, "
                                   f"value {stats['value_loss']})")
            if first_ratio_dev is None:
                first_ratio_dev = stats['max_ratio_dev']
            backward(loss)
            step = adam_step(policy.params, config.lr, config.adam_betas, config.adam_eps, config.max_grad_norm)
            for key in ('policy_loss', 'value_loss', 'entropy', 'clip_frac'):
                history[key].append(stats[key])
            history['grad_norm'].append(step['grad_norm'])

    summary = {key: float(np.mean(values)) for key, values in history.items()}
    summary['first_ratio_dev'] = first_ratio_dev
    return summary
