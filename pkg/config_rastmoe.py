# config_rastmoe.py - Configurazione di default del toolkit di dispatch RAST-MoE
import os
from dotenv import load_dotenv

# Carica .env prima di leggere qualsiasi override
load_dotenv()

# Prefisso per override da variabili d'ambiente: RASTMOE_<BLOCK>__<KEY>=value
ENV_PREFIX = "RASTMOE_"

# ==================== PATHS ====================

ASSETS_DIR = "assets"
FIXTURES_DIR = os.path.join(ASSETS_DIR, "fixtures")
CONFIGS_DIR = os.path.join(ASSETS_DIR, "configs")
RUNS_DIR = os.getenv('RASTMOE_RUNS_DIR', "runs")

FIXTURE_PATHS = {
    'five_zone_edges': os.path.join(FIXTURES_DIR, "five_zone_edges.csv"),
    'five_zone_nodes': os.path.join(FIXTURES_DIR, "five_zone_nodes.csv"),
    'five_zone_flows': os.path.join(FIXTURES_DIR, "five_zone_flows.csv"),
    'toy_config': os.path.join(CONFIGS_DIR, "toy_2x2.json"),
}

# ==================== SURROGATE CONFIG ====================

NETWORK_CONFIG = {
    'free_flow_kmh': 50.0,          # velocità free-flow di default per arco
    'weight_mode': 'free_flow_time',  # free_flow_time | length
}

MFD_CONFIG = {
    'density_eps': 1e-6,            # veh/(lane·km), clip di k_z
    'fallback_speed_kmh': 50.0,     # zone-hour vuote
    'intra_zone_km': 1.0,           # distanza media di pickup/trip dentro la zona
}

PERTURBATION_CONFIG = {
    'eta_range': (0.8, 1.2),
    'alpha_range': (1.5, 3.0),
    'corridor_size': (5, 12),
    'max_walk_attempts': 200,
}

# ==================== SIMULATOR CONFIG ====================

SCENARIO_DEFAULTS = {
    'grid_h': 2,
    'grid_w': 2,
    'horizon_h': 6.0,
    'epoch_dt_s': 10.0,
    'warmup_epochs': 60,
    'randomize_start': True,
    'neighbor_matching': True,
    'matcher': 'greedy',            # greedy | exact
    'driver_logoff_prob': 0.0,
    'record_trace': False,
    'seed': 0,
}

EXACT_MATCHING_LIMIT = 6  # coda massima per lato con assegnamento esaustivo

# ==================== REWARD CONFIG ====================

REWARD_CONFIG = {
    'c_m': 1.0,                     # 1/h
    'c_p_base': 1.0,                # 1/h
    'alpha': 0.05,                  # tolleranza violazioni
    'xi': 0.05,                     # passo del moltiplicatore
    'late_threshold_s': 600.0,
    'violation_window': 360,        # epoche (1 h a 10 s)
    'cp_clip': (0.5, 2.0),
    'lambda_init': 0.0,
    'fixed_ratio': None,            # es. "8:1" congela λ e c_p
}

# c_m : c_p per gli esperimenti a pesi fissi
FIXED_RATIO_PRESETS = {
    '1:1': (1.0, 1.0),
    '4:1': (4.0, 1.0),
    '8:1': (8.0, 1.0),
    '1:4': (1.0, 4.0),
    '1:8': (1.0, 8.0),
    '2:1': (2.0, 1.0),
    '3:1': (3.0, 1.0),
}

ALPHA_SWEEP = (0.025, 0.05, 0.075)

# ==================== POLICY CONFIG ====================

ENCODER_CONFIG = {
    'grid_h': 4,
    'grid_w': 4,
    'd': 64,
    'd_c': 2,
    'attn_layers': 2,
    'attn_heads': 4,
    'n_experts': 8,
    'top_k': 2,
    'expert_hidden': 128,
    'load_balance': 'soft_cap',     # none | soft_cap
    'cap_ratio': 2.0,
    'bias_step': 0.01,
    'init_seed': 0,
}

ENCODER_PRESETS = {
    'desk': {},
    'large': {'d': 256, 'n_experts': 16, 'top_k': 4, 'expert_hidden': 1024,
              'attn_layers': 4, 'attn_heads': 8},
}

# ==================== TRAINING CONFIG ====================

PPO_CONFIG = {
    'lr': 2e-4,
    'batch_size': 512,
    'n_steps': 2048,
    'n_epochs': 5,
    'clip_eps': 0.2,
    'clip_range_vf': 0.2,
    'entropy_coef': 0.01,
    'value_coef': 0.7,
    'gae_lambda': 0.95,
    'gamma': 0.99,
    'max_grad_norm': 0.4,
    'adam_betas': (0.9, 0.999),
    'adam_eps': 1e-8,
    'normalize_advantage': True,
}

GRPO_CONFIG = {
    'group_size': 8,
    'eps': 1e-8,
    'beta_g': 1.0,
}

TRAIN_CONFIG = {
    'algo': 'ppo',                  # ppo | grpo
    'total_steps': 200_000,
    'n_envs': 4,
    'eval_every': 10,               # update
    'eval_episodes': 5,
    'eval_seed_offset': 10_000,     # seed di test disgiunti da quelli di training
    'checkpoint_every': 1,
    'verbose': True,
}

EVAL_CONFIG = {
    'episodes': 50,
    'horizon_h': 6.0,
    'threshold': 0.5,
    'seed_offset': 10_000,
}

HEURISTIC_CONFIG = {
    'interval_window_s': 20.0,
}

# ==================== DEMAND CONFIG ====================

DEMAND_PRESETS = {
    'flat': {'base_rate': 60.0, 'peak_ratio': 1.0, 'peak_hours': ()},
    'two_peak': {'base_rate': 40.0, 'peak_ratio': 3.0, 'peak_hours': (8, 17), 'peak_width': 1.5},
    'custom': {'base_rate': 60.0, 'peak_ratio': 2.0, 'peak_hours': (8, 17), 'peak_width': 1.0},
}

DEMAND_CONFIG = {
    'driver_multiple': 1.1,         # μ = multiplo della domanda
    'max_skipped_fraction': 0.10,
    'peak_speed_kmh': 15.0,
    'offpeak_speed_kmh': 40.0,
    'cell_km': 2.0,
}

# ==================== CSV SCHEMAS ====================

METRICS_CSV_SCHEMA = [
    'update', 'steps', 'mean_reward', 'match_wait_s', 'pickup_wait_s', 'g',
    'lambda', 'policy_loss', 'value_loss', 'entropy', 'clip_frac'
]

REWARD_CSV_SCHEMA = ['epoch', 'd_match', 'd_pickup', 'cp_t', 'g', 'lambda', 'r']

TRACE_CSV_SCHEMA = ['time', 'event_kind', 'zone', 'request_id', 'driver_id', 'value']

LAMBDA_CSV_SCHEMA = ['update', 'steps', 'lambda', 'lambda_mean', 'g_mean']
LAMBDA_STEP_CSV_SCHEMA = ['update', 'step', 'env', 'lambda', 'g']

UTILIZATION_CSV_SCHEMA = ['expert_id', 'hour', 'activation_count']

EVAL_CSV_SCHEMA = [
    'label', 'episodes', 'total_reward', 'total_reward_std', 'match_wait_s',
    'match_wait_std_s', 'pickup_wait_s', 'pickup_wait_std_s', 'violation_rate', 'seeds'
]

EPISODE_CSV_SCHEMA = ['label', 'seed', 'total_reward', 'completed', 'match_wait_s', 'pickup_wait_s', 'violation_rate']

REPORT_LONG_SCHEMA = ['run', 'series', 'x', 'key', 'value']

# ==================== RUN CONFIG ====================

EXIT_CODES = {
    'ok': 0,
    'unexpected': 1,
    'config': 2,
    'data': 3,
    'numeric': 4,
}

CHECKPOINT_VERSION = 1
TABLE_FORMAT_VERSION = 1
MANIFEST_NAME = "manifest.json"
