# trainers/train_loop.py - Ciclo rollout → update PPO/GRPO con checkpoint, metriche e valutazioni periodiche
import json
import math
import os
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Dict, List, Mapping, Optional

import numpy as np
from tqdm import tqdm

from config_rastmoe import (
    EVAL_CSV_SCHEMA, LAMBDA_CSV_SCHEMA, LAMBDA_STEP_CSV_SCHEMA, METRICS_CSV_SCHEMA, TRAIN_CONFIG
)
from policy import EncoderConfig, RastMoePolicy
from simulator.reward import MultiplierState, RewardConfig
from simulator.scenario import build_scenario
from trainers.evaluation import evaluate_policy
from trainers.grpo import CandidateScorer, GRPOConfig, apply_group_scores
from trainers.ppo import PPOConfig, finalize_buffer, ppo_update
from trainers.rollout import collect_rollouts
from utils.config_loader import ConfigBundle
from utils.errors import ConfigError, NumericError
from utils.metrics_tracker import MetricsTracker, non_finite_fields

ALGOS = ('ppo', 'grpo')
TRAIN_EVAL_SCHEMA = ['update', 'steps'] + EVAL_CSV_SCHEMA
CHECKPOINT_PATTERN = "checkpoint_{:06d}.npz"


@dataclass(frozen=True)
class TrainConfig:
    algo: str = TRAIN_CONFIG['algo']
    total_steps: int = TRAIN_CONFIG['total_steps']
    n_envs: int = TRAIN_CONFIG['n_envs']
    eval_every: int = TRAIN_CONFIG['eval_every']
    eval_episodes: int = TRAIN_CONFIG['eval_episodes']
    eval_seed_offset: int = TRAIN_CONFIG['eval_seed_offset']
    checkpoint_every: int = TRAIN_CONFIG['checkpoint_every']
    verbose: bool = TRAIN_CONFIG['verbose']

    def __post_init__(self):
        if self.algo not in ALGOS:
            raise ConfigError(f"train.algo must be one of {ALGOS}, got {self.algo!r}")
        if self.total_steps < 1 or self.n_envs < 1 or self.checkpoint_every < 1:
            raise ConfigError("train.total_steps, n_envs and checkpoint_every must be ≥ 1")

    @classmethod
    def from_dict(cls, values: Optional[Mapping] = None) -> 'TrainConfig':
        values = dict(values or {})
        unknown = set(values) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown train keys: {sorted(unknown)}")
        return cls(**values)


def checkpoint_path(out_dir, update: int) -> Path:
    return Path(out_dir) / "checkpoints" / CHECKPOINT_PATTERN.format(update)


def latest_checkpoint(out_dir) -> Optional[Path]:
    found = sorted((Path(out_dir) / "checkpoints").glob("checkpoint_*.npz"))
    return found[-1] if found else None


class Trainer:
    """
    Orchestratore del training: scenario, policy, env paralleli e tracking.

    Il moltiplicatore λ è condiviso tra gli env e aggiornato in ordine di env;
    il bias del router viene regolato dopo ogni update, mai tra rollout e update.
    """

    def __init__(self, bundle: ConfigBundle, out_dir, seed: int = 0, resume: Optional[str] = None,
                 verbose: Optional[bool] = None):
        self.bundle = bundle
        self.out_dir = Path(out_dir)
        self.seed = seed
        self.train = TrainConfig.from_dict(bundle.block('train'))
        self.verbose = self.train.verbose if verbose is None else verbose
        self.ppo = PPOConfig.from_dict(bundle.block('ppo'))
        self.grpo = GRPOConfig.from_dict(bundle.block('grpo'))
        self.reward_config = RewardConfig.from_dict(bundle.block('reward'))
        self.scenario = build_scenario(bundle.block('scenario'), bundle.base_dir)
        if self.ppo.n_steps % self.train.n_envs:
            raise ConfigError(f"ppo.n_steps={self.ppo.n_steps} must be a multiple of train.n_envs={self.train.n_envs}")

        self.rng = np.random.default_rng(seed)
        self.group_rng = np.random.default_rng([seed, 1])
        self.multiplier = MultiplierState(self.reward_config.lambda_init)
        self.update = 0
        self.steps = 0
        self.last_checkpoint: Optional[Path] = None

        if resume:
            self.policy, meta = RastMoePolicy.load(resume)
            self._restore(meta)
            self.last_checkpoint = Path(resume)
        else:
            self.policy = RastMoePolicy(self._encoder_config())

        self.envs = [self.scenario.make_env(self.reward_config) for _ in range(self.train.n_envs)]
        self.metrics = MetricsTracker(self.out_dir / "metrics.csv", METRICS_CSV_SCHEMA, bool(resume), self.verbose)
        self.lambdas = MetricsTracker(self.out_dir / "lambda_trajectory.csv", LAMBDA_CSV_SCHEMA, bool(resume), self.verbose)
        self.lambda_steps = MetricsTracker(self.out_dir / "lambda_steps.csv", LAMBDA_STEP_CSV_SCHEMA, bool(resume),
                                           self.verbose)
        self.evals = MetricsTracker(self.out_dir / "eval.csv", TRAIN_EVAL_SCHEMA, bool(resume), self.verbose)
        if resume:
            for tracker in (self.metrics, self.lambdas, self.lambda_steps, self.evals):
                tracker.truncate('update', self.update)

    def _encoder_config(self) -> EncoderConfig:
        block = self.bundle.block('encoder')
        sim = self.scenario.sim
        if block.get('grid_h', sim.grid_h) != sim.grid_h or block.get('grid_w', sim.grid_w) != sim.grid_w:
            print(f"⚠️ Griglia encoder allineata allo scenario: {sim.grid_h}×{sim.grid_w}")
        block.update(grid_h=sim.grid_h, grid_w=sim.grid_w)
        return EncoderConfig.from_dict(block)

    def _restore(self, meta: Dict):
        self.update = int(meta['update'])
        self.steps = int(meta['steps'])
        self.multiplier = MultiplierState(float(meta['multiplier']))
        self.rng.bit_generator.state = meta['rng_state']
        self.group_rng.bit_generator.state = meta['group_rng_state']
        if self.verbose:
            print(f"🔄 Resume da update {self.update} ({self.steps} step), λ={self.multiplier.value:.4f}")

    @property
    def total_updates(self) -> int:
        return max(1, math.ceil(self.train.total_steps / self.ppo.n_steps))

    # ---------- persistence ----------

    def save_checkpoint(self) -> Path:
        path = checkpoint_path(self.out_dir, self.update)
        self.policy.save(path, meta={
            'update': self.update,
            'steps': self.steps,
            'multiplier': self.multiplier.value,
            'rng_state': self.rng.bit_generator.state,
            'group_rng_state': self.group_rng.bit_generator.state,
            'config_hash': self.bundle.hash,
        })
        self.last_checkpoint = path
        return path

    def save_tracking(self):
        for tracker in (self.metrics, self.lambdas, self.lambda_steps, self.evals):
            tracker.save()
        self.policy.utilization.hourly_frame().to_csv(self.out_dir / "utilization.csv", index=False, encoding='utf-8')

    def write_diagnostic_dump(self, error: Exception, stats: Optional[Dict] = None) -> Path:
        path = self.out_dir / "diagnostic_dump.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        dump = {
            'error': str(error),
            'update': self.update,
            'steps': self.steps,
            'multiplier': self.multiplier.value,
            'last_checkpoint': str(self.last_checkpoint) if self.last_checkpoint else None,
            'last_metrics': self.metrics.last(),
            'stats': stats,
        }
        path.write_text(json.dumps(dump, indent=2, default=str), encoding='utf-8')
        return path

    # ---------- loop ----------

    def _episode_stats(self, buffer) -> Dict[str, float]:
        rows = list(buffer.episodes) + [env.episode_summary() for env in self.envs]
        rows = [row for row in rows if row['completed']] or rows
        return {key: float(np.mean([row[key] for row in rows])) for key in ('match_wait_s', 'pickup_wait_s')}

    def _lambda_step_rows(self, buffer) -> List[Dict]:
        """λ usato a ogni transizione, in ordine tempo-major e poi per env (l'ordine di aggiornamento)"""
        update, first = self.update, self.steps + 1
        return [{'update': update, 'step': first + t * buffer.n_envs + i, 'env': i,
                 'lambda': float(buffer.lam[t, i]), 'g': float(buffer.g[t, i])}
                for t in range(buffer.n_steps) for i in range(buffer.n_envs)]

    def run_update(self) -> Dict:
        buffer = collect_rollouts(
            self.envs, self.policy, self.ppo.n_steps, self.rng, self.multiplier, self.reward_config,
            scorer=CandidateScorer(self.grpo, self.group_rng) if self.train.algo == 'grpo' else None,
        )
        if self.train.algo == 'grpo':
            apply_group_scores(buffer, self.grpo, self.ppo)
        else:
            finalize_buffer(buffer, self.ppo)
        stats = ppo_update(buffer, self.policy, self.ppo, self.rng)
        self.policy.load_balance_adjust()

        self.multiplier = buffer.multiplier
        self.update += 1
        self.lambda_steps.extend(self._lambda_step_rows(buffer))
        self.steps += len(buffer)
        row = {
            'update': self.update,
            'steps': self.steps,
            'mean_reward': float(buffer.rewards.mean()),
            'g': float(buffer.g.mean()),
            'lambda': self.multiplier.value,
            **self._episode_stats(buffer),
            **{key: stats[key] for key in ('policy_loss', 'value_loss', 'entropy', 'clip_frac')},
        }
        bad = non_finite_fields(row)
        if bad:
            raise NumericError(f"non-finite training metrics at update {self.update}: {bad}")
        self.metrics.append(row)
        self.lambdas.append({'update': self.update, 'steps': self.steps, 'lambda': self.multiplier.value,
                             'lambda_mean': float(buffer.lam.mean()), 'g_mean': row['g']})
        return row

    def evaluate(self):
        report = evaluate_policy(self.policy, self.scenario, self.train.eval_episodes,
                                 reward_config=self.reward_config, seed_offset=self.train.eval_seed_offset)
        self.evals.append({'update': self.update, 'steps': self.steps, **report.as_row()})
        return report

    def run(self) -> Dict:
        """
        Esegue gli update rimanenti fino al budget di step.

        Returns:
            Dict con policy, ultimo checkpoint, righe di metriche e report di valutazione
        """
        if self.verbose:
            print(f"\n🚀 TRAIN {self.train.algo.upper()} - {self.total_updates} update × {self.ppo.n_steps} step, "
                  f"{self.train.n_envs} env, {self.policy.num_parameters} parametri")
            print("=" * 50)

        reports = []
        progress = tqdm(range(self.update, self.total_updates), desc="update", disable=not self.verbose)
        try:
            for _ in progress:
                row = self.run_update()
                progress.set_postfix(reward=f"{row['mean_reward']:.4f}", lam=f"{row['lambda']:.3f}")
                if self.update % self.train.checkpoint_every == 0 or self.update == self.total_updates:
                    self.save_checkpoint()
                if self.train.eval_every and self.update % self.train.eval_every == 0:
                    reports.append(self.evaluate())
                self.save_tracking()
        except NumericError as e:
            dump = self.write_diagnostic_dump(e)
            self.save_tracking()
            print(f"❌ Errore numerico: {e}")
            print(f"  💾 Dump diagnostico: {dump}; ultimo checkpoint valido: {self.last_checkpoint}")
            raise

        if self.verbose:
            print(f"✅ Training completato: {self.update} update, {self.steps} step")
            self.metrics.print_summary(['update', 'steps', 'mean_reward', 'match_wait_s', 'pickup_wait_s', 'lambda'])
        return {
            'policy': self.policy,
            'checkpoint': self.last_checkpoint,
            'metrics': self.metrics.df,
            'reports': reports,
            'multiplier': self.multiplier.value,
            'steps': self.steps,
            'updates': self.update,
        }


def train_loop(bundle: ConfigBundle, out_dir, seed: int = 0, resume: Optional[str] = None,
               verbose: Optional[bool] = None) -> Dict:
    os.makedirs(out_dir, exist_ok=True)
    return Trainer(bundle, out_dir, seed, resume, verbose).run()
