# trainers/evaluation.py - Valutazione greedy di policy o euristiche su seed di test
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
from tqdm import tqdm

from config_rastmoe import EVAL_CONFIG, EVAL_CSV_SCHEMA, HEURISTIC_CONFIG
from nn import no_grad
from simulator.reward import MultiplierState, RewardConfig, update_multiplier
from surrogate.mfd import PerturbationSpec
from trainers.heuristics import heuristic_policy
from utils.errors import ConfigError


@dataclass
class EvalReport:
    label: str
    episodes: int
    seeds: List[int]
    total_reward: float
    total_reward_std: float
    match_wait_s: float
    match_wait_std_s: float
    pickup_wait_s: float
    pickup_wait_std_s: float
    violation_rate: float
    rows: List[Dict] = field(default_factory=list)

    def as_row(self) -> Dict:
        row = {key: getattr(self, key) for key in EVAL_CSV_SCHEMA if key != 'seeds'}
        row['seeds'] = ' '.join(str(seed) for seed in self.seeds)
        return row

    @classmethod
    def from_rows(cls, label: str, rows: List[Dict]) -> 'EvalReport':
        if not rows:
            raise ConfigError("an evaluation report needs at least one episode")

        def stat(key):
            values = np.array([row[key] for row in rows], dtype=np.float64)
            return float(values.mean()), float(values.std())
        reward, reward_std = stat('total_reward')
        match, match_std = stat('match_wait_s')
        pickup, pickup_std = stat('pickup_wait_s')
        violation, _ = stat('violation_rate')
        return cls(label, len(rows), [row['seed'] for row in rows], reward, reward_std,
                   match, match_std, pickup, pickup_std, violation, rows)


class PolicyActor:
    """Selezione greedy (p ≥ threshold) in batch, con maschera di esperti opzionale."""

    def __init__(self, policy, mask=None, threshold: float = EVAL_CONFIG['threshold'], track: bool = False):
        self.policy = policy
        self.mask = mask
        self.threshold = threshold
        self.track = track

    def reset(self, n_envs: int):
        pass

    def __call__(self, obs: np.ndarray, clocks: Sequence[float]) -> np.ndarray:
        with no_grad():
            return self.policy.act_and_evaluate(obs, mode='greedy', mask=self.mask, track=self.track,
                                                threshold=self.threshold).action


class HeuristicActor:
    """Un'istanza di euristica per episodio (lo stato dell'intervallo è per env)."""

    def __init__(self, kind: str, n_zones: int, window_s: float = HEURISTIC_CONFIG['interval_window_s']):
        self.kind = kind
        self.n_zones = n_zones
        self.window_s = window_s
        self.heuristics = []

    def reset(self, n_envs: int):
        self.heuristics = [heuristic_policy(self.kind, self.n_zones, self.window_s) for _ in range(n_envs)]

    def __call__(self, obs: np.ndarray, clocks: Sequence[float]) -> np.ndarray:
        return np.stack([h.act(o, c) for h, o, c in zip(self.heuristics, obs, clocks)])


def evaluate_policy(agent: Union[str, object], scenario, episodes: int = EVAL_CONFIG['episodes'],
                    seeds: Optional[Sequence[int]] = None, perturbation: Optional[PerturbationSpec] = None,
                    mask=None, reward_config: Optional[RewardConfig] = None,
                    threshold: float = EVAL_CONFIG['threshold'], seed_offset: int = EVAL_CONFIG['seed_offset'],
                    horizon_h: Optional[float] = None, label: Optional[str] = None,
                    track: bool = False, verbose: bool = False) -> EvalReport:
    """
    Esegue gli episodi di test in lockstep (stessa lunghezza per tutti i seed).

    Args:
        agent: RastMoePolicy oppure 'instant' / 'interval'
        scenario: Scenario con SimConfig e tabella OD
        seeds: Seed degli episodi; default seed_offset + 0..episodes-1
        perturbation: Perturbazione della tabella OD (una per seed)
        mask: ExpertMask applicata al router
        horizon_h: Orizzonte alternativo a quello dello scenario

    Returns:
        EvalReport con medie/deviazioni su episodi e righe per episodio
    """
    seeds = list(seeds) if seeds is not None else [seed_offset + i for i in range(episodes)]
    if not seeds:
        raise ConfigError("evaluation needs at least one episode")
    reward_config = reward_config or RewardConfig()
    n_zones = scenario.sim.n_zones
    if isinstance(agent, str):
        actor, label = HeuristicActor(agent, n_zones), label or agent
    else:
        actor, label = PolicyActor(agent, mask, threshold, track), label or 'policy'

    overrides = {'horizon_h': horizon_h} if horizon_h is not None else {}
    envs = [scenario.make_env(reward_config, perturbation, perturbation_seed=seed, **overrides) for seed in seeds]
    states = [env.reset(seed) for env, seed in zip(envs, seeds)]
    actor.reset(len(envs))
    multipliers = [MultiplierState(reward_config.lambda_init) for _ in envs]
    totals = np.zeros(len(envs))

    progress = tqdm(total=envs[0].config.total_epochs, desc=f"eval {label}", disable=not verbose, leave=False)
    done = False
    while not done:
        obs = np.stack([env.observe() for env in envs])
        actions = actor(obs, [state.clock for state in states])
        for i, env in enumerate(envs):
            _, breakdown, done = env.step(actions[i], multipliers[i])
            multipliers[i] = update_multiplier(multipliers[i], breakdown.g, reward_config)
            totals[i] += breakdown.r
        progress.update(1)
    progress.close()

    rows = [{'seed': seed, 'total_reward': float(total), **env.episode_summary()}
            for seed, total, env in zip(seeds, totals, envs)]
    return EvalReport.from_rows(label, rows)


def degradation(base: EvalReport, other: EvalReport, key: str = 'pickup_wait_s') -> float:
    """Variazione percentuale di una metrica rispetto al report base"""
    reference = getattr(base, key)
    if reference == 0:
        return 0.0 if getattr(other, key) == 0 else float('inf')
    return 100.0 * (getattr(other, key) - reference) / abs(reference)
