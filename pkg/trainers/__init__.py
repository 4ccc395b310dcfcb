# trainers/__init__.py
from .heuristics import InstantHeuristic, IntervalHeuristic, heuristic_policy
from .rollout import RolloutBuffer, collect_rollouts, compute_gae
from .ppo import PPOConfig, ppo_loss, ppo_update, finalize_buffer
from .grpo import GRPOConfig, CandidateScorer, grpo_normalize, grpo_step, blend_advantages
from .evaluation import EvalReport, evaluate_policy, degradation
from .train_loop import TrainConfig, Trainer, train_loop, latest_checkpoint

__all__ = [
    'InstantHeuristic', 'IntervalHeuristic', 'heuristic_policy',
    'RolloutBuffer', 'collect_rollouts', 'compute_gae',
    'PPOConfig', 'ppo_loss', 'ppo_update', 'finalize_buffer',
    'GRPOConfig', 'CandidateScorer', 'grpo_normalize', 'grpo_step', 'blend_advantages',
    'EvalReport', 'evaluate_policy', 'degradation',
    'TrainConfig', 'Trainer', 'train_loop', 'latest_checkpoint',
]
