# trainers/rollout.py - Raccolta rollout su env paralleli e GAE vettorizzata
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from nn import no_grad
from simulator.reward import MultiplierState, RewardConfig, update_multiplier
from utils.errors import ConfigError

# (env, azione eseguita, probabilità per zona, moltiplicatore) → score normalizzato
CandidateScorer = Callable[[object, np.ndarray, np.ndarray, MultiplierState], float]


@dataclass
class RolloutBuffer:
    """Transizioni (T, n_envs) in ordine temporale; advantages/returns riempiti da compute_gae."""
    obs: np.ndarray
    actions: np.ndarray
    log_probs: np.ndarray
    rewards: np.ndarray
    values: np.ndarray
    dones: np.ndarray
    g: np.ndarray
    lam: np.ndarray
    scores: np.ndarray
    last_values: np.ndarray = None
    advantages: Optional[np.ndarray] = None
    returns: Optional[np.ndarray] = None
    multiplier: MultiplierState = field(default_factory=MultiplierState)
    episodes: List[Dict] = field(default_factory=list)

    @classmethod
    def allocate(cls, n_steps: int, n_envs: int, obs_dim: int, n_zones: int) -> 'RolloutBuffer':
        shape = (n_steps, n_envs)
        return cls(
            obs=np.zeros(shape + (obs_dim,)),
            actions=np.zeros(shape + (n_zones,)),
            log_probs=np.zeros(shape), rewards=np.zeros(shape), values=np.zeros(shape),
            dones=np.zeros(shape), g=np.zeros(shape), lam=np.zeros(shape), scores=np.zeros(shape),
            last_values=np.zeros(n_envs),
        )

    @property
    def n_steps(self) -> int:
        return self.rewards.shape[0]

    @property
    def n_envs(self) -> int:
        return self.rewards.shape[1]

    def __len__(self) -> int:
        return self.rewards.size

    def flat(self, name: str) -> np.ndarray:
        """Campo appiattito (T·n_envs, ...) in ordine tempo-major"""
        values = getattr(self, name)
        return values.reshape((len(self),) + values.shape[2:])


def compute_gae(rewards: np.ndarray, values: np.ndarray, dones: np.ndarray, last_values,
                gamma: float = 0.99, gae_lambda: float = 0.95):
    """
    GAE all'indietro nel tempo, vettorizzata sugli env.

    dones[t] = 1 se l'episodio termina dopo la transizione t (niente bootstrap).

    Returns:
        (advantages, returns) con la shape di rewards
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=np.float64)
    next_values = np.asarray(last_values, dtype=np.float64)

    advantages = np.zeros_like(rewards)
    running = np.zeros_like(next_values)
    for t in reversed(range(rewards.shape[0])):
        nonterminal = 1.0 - dones[t]
        delta = rewards[t] + gamma * next_values * nonterminal - values[t]
        running = delta + gamma * gae_lambda * nonterminal * running
        advantages[t] = running
        next_values = values[t]
    return advantages, advantages + values


def collect_rollouts(envs: Sequence, policy, n_steps: int, rng: np.random.Generator,
                     multiplier: Optional[MultiplierState] = None,
                     reward_config: Optional[RewardConfig] = None,
                     scorer: Optional[CandidateScorer] = None, track: bool = True) -> RolloutBuffer:
    """
    Raccoglie n_steps transizioni in totale su len(envs) ambienti in lockstep.

    Gli env vengono avanzati in ordine di indice; λ è aggiornato dopo ogni
    singolo step, così la traiettoria non dipende dal parallelismo. Gli
    episodi finiti vengono resettati con seed estratti da rng.

    Returns:
        RolloutBuffer con last_values per il bootstrap e il moltiplicatore finale
    """
    n_envs = len(envs)
    if n_envs == 0 or n_steps % n_envs:
        raise ConfigError(f"n_steps={n_steps} must be a positive multiple of the {n_envs} rollout envs")
    reward_config = reward_config or envs[0].reward_config
    multiplier = multiplier or MultiplierState(reward_config.lambda_init)

    for env in envs:
        if env.state is None or env.state.done:
            env.reset(seed=int(rng.integers(2 ** 31)))

    steps_per_env = n_steps // n_envs
    buffer = RolloutBuffer.allocate(steps_per_env, n_envs, envs[0].obs_dim, envs[0].n_zones)
    obs = np.stack([env.observe() for env in envs])

    for t in range(steps_per_env):
        with no_grad():
            result = policy.act_and_evaluate(obs, rng, mode='sample', track=track)
        buffer.obs[t] = obs
        buffer.actions[t] = result.action
        buffer.log_probs[t] = result.log_prob.data
        buffer.values[t] = result.value.data

        for i, env in enumerate(envs):
            if scorer is not None:
                buffer.scores[t, i] = scorer(env, result.action[i], result.probs[i], multiplier)
            _, breakdown, done = env.step(result.action[i], multiplier)
            buffer.rewards[t, i] = breakdown.r
            buffer.g[t, i] = breakdown.g
            buffer.lam[t, i] = breakdown.lam
            buffer.dones[t, i] = float(done)
            multiplier = update_multiplier(multiplier, breakdown.g, reward_config)
            if done:
                buffer.episodes.append({'env': i, **env.episode_summary()})
                env.reset(seed=int(rng.integers(2 ** 31)))
        obs = np.stack([env.observe() for env in envs])

    with no_grad():
        buffer.last_values = policy.forward(obs).values.data.copy()
    buffer.multiplier = multiplier
    return buffer
