# policy/rast_moe.py - Encoder a token + self-attention + router top-K sparso con teste actor/critic Bernoulli
import math
from dataclasses import asdict, dataclass, fields
from typing import Dict, FrozenSet, Iterable, Mapping, NamedTuple, Optional, Sequence

import numpy as np
import pandas as pd

from config_rastmoe import ENCODER_CONFIG, ENCODER_PRESETS, UTILIZATION_CSV_SCHEMA
from nn import ParameterSet, Tensor, concat, layernorm, load_checkpoint, save_checkpoint, scatter_rows, take_along
from utils.errors import ConfigError, ContractError, MaskError, ShapeError

HOURS = 24
CHANNELS = ('n_p', 'n_d', 'lam', 'mu')
LOAD_BALANCE_MODES = ('none', 'soft_cap')
ACT_MODES = ('sample', 'greedy', 'evaluate')


@dataclass(frozen=True)
class EncoderConfig:
    grid_h: int = ENCODER_CONFIG['grid_h']
    grid_w: int = ENCODER_CONFIG['grid_w']
    d: int = ENCODER_CONFIG['d']
    d_c: int = ENCODER_CONFIG['d_c']
    attn_layers: int = ENCODER_CONFIG['attn_layers']
    attn_heads: int = ENCODER_CONFIG['attn_heads']
    n_experts: int = ENCODER_CONFIG['n_experts']
    top_k: int = ENCODER_CONFIG['top_k']
    expert_hidden: int = ENCODER_CONFIG['expert_hidden']
    load_balance: str = ENCODER_CONFIG['load_balance']
    cap_ratio: float = ENCODER_CONFIG['cap_ratio']
    bias_step: float = ENCODER_CONFIG['bias_step']
    init_seed: int = ENCODER_CONFIG['init_seed']

    def __post_init__(self):
        if self.grid_h < 1 or self.grid_w < 1:
            raise ConfigError(f"encoder grid must be ≥ 1×1, got {self.grid_h}×{self.grid_w}")
        if not 1 <= self.top_k <= self.n_experts:
            raise ConfigError(f"encoder needs 1 ≤ top_k ≤ n_experts, got K={self.top_k}, E={self.n_experts}")
        if self.d % self.attn_heads:
            raise ConfigError(f"encoder d={self.d} is not divisible by attn_heads={self.attn_heads}")
        if self.d % 4:
            raise ConfigError(f"encoder d={self.d} must be divisible by 4 (one quarter per input channel)")
        if self.d_c < 2:
            raise ConfigError(f"encoder d_c must be ≥ 2 (time of day and elapsed fraction), got {self.d_c}")
        if self.attn_layers < 0 or self.expert_hidden < 1:
            raise ConfigError("encoder attn_layers must be ≥ 0 and expert_hidden ≥ 1")
        if self.load_balance not in LOAD_BALANCE_MODES:
            raise ConfigError(f"encoder load_balance must be one of {LOAD_BALANCE_MODES}, got {self.load_balance!r}")
        if self.cap_ratio <= 0 or self.bias_step < 0:
            raise ConfigError("encoder cap_ratio must be > 0 and bias_step ≥ 0")

    @property
    def n_zones(self) -> int:
        return self.grid_h * self.grid_w

    @property
    def obs_dim(self) -> int:
        return 2 + 4 * self.n_zones

    @classmethod
    def from_dict(cls, values: Optional[Mapping] = None, preset: str = 'desk') -> 'EncoderConfig':
        values = dict(values or {})
        preset = values.pop('preset', preset)
        if preset not in ENCODER_PRESETS:
            raise ConfigError(f"unknown encoder preset {preset!r}; expected one of {sorted(ENCODER_PRESETS)}")
        known = {f.name for f in fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ConfigError(f"unknown encoder keys: {sorted(unknown)}")
        return cls(**{**ENCODER_CONFIG, **ENCODER_PRESETS[preset], **values})


@dataclass(frozen=True)
class ExpertMask:
    disabled: FrozenSet[int] = frozenset()

    def __post_init__(self):
        object.__setattr__(self, 'disabled', frozenset(int(e) for e in self.disabled))

    def validate(self, n_experts: int, top_k: int) -> FrozenSet[int]:
        bad = sorted(e for e in self.disabled if not 0 <= e < n_experts)
        if bad:
            raise MaskError(f"mask names unknown experts {bad} (E={n_experts})")
        if n_experts - len(self.disabled) < top_k:
            raise MaskError(f"mask leaves {n_experts - len(self.disabled)} routable experts, top_k={top_k} needed")
        return self.disabled

    @classmethod
    def top_frequency(cls, frequencies: Sequence[float], n: int) -> 'ExpertMask':
        """Maschera i primi n esperti per frequenza (a parità l'id più basso)"""
        order = np.argsort(-np.asarray(frequencies, dtype=np.float64), kind='stable')
        return cls(frozenset(int(e) for e in order[:n]))


@dataclass
class UtilizationCounter:
    """Contatori di attivazione per esperto, totali, per ora del giorno e per finestra di bilanciamento."""
    n_experts: int
    counts: np.ndarray = None
    hourly: np.ndarray = None
    steps: int = 0
    window_counts: np.ndarray = None
    window_steps: int = 0

    def __post_init__(self):
        if self.counts is None:
            self.counts = np.zeros(self.n_experts)
        if self.hourly is None:
            self.hourly = np.zeros((self.n_experts, HOURS))
        if self.window_counts is None:
            self.window_counts = np.zeros(self.n_experts)

    def record(self, indices: np.ndarray, hours: Optional[np.ndarray] = None):
        indices = np.asarray(indices, dtype=np.int64)
        np.add.at(self.counts, indices.ravel(), 1)
        np.add.at(self.window_counts, indices.ravel(), 1)
        if hours is not None:
            hours = np.broadcast_to(np.asarray(hours, dtype=np.int64)[:, None], indices.shape)
            np.add.at(self.hourly, (indices.ravel(), hours.ravel()), 1)
        self.steps += indices.shape[0]
        self.window_steps += indices.shape[0]

    def merge(self, other: 'UtilizationCounter') -> 'UtilizationCounter':
        if other.n_experts != self.n_experts:
            raise ContractError(f"cannot merge counters for {other.n_experts} and {self.n_experts} experts")
        self.counts = self.counts + other.counts
        self.hourly = self.hourly + other.hourly
        self.window_counts = self.window_counts + other.window_counts
        self.steps += other.steps
        self.window_steps += other.window_steps
        return self

    def reset_window(self):
        self.window_counts = np.zeros(self.n_experts)
        self.window_steps = 0

    def frequencies(self) -> np.ndarray:
        return self.counts / self.steps if self.steps else np.zeros(self.n_experts)

    def hourly_frame(self) -> pd.DataFrame:
        experts, hours = np.meshgrid(np.arange(self.n_experts), np.arange(HOURS), indexing='ij')
        return pd.DataFrame({
            UTILIZATION_CSV_SCHEMA[0]: experts.ravel(),
            UTILIZATION_CSV_SCHEMA[1]: hours.ravel(),
            UTILIZATION_CSV_SCHEMA[2]: self.hourly.ravel().astype(np.int64),
        })


@dataclass
class RoutingResult:
    """indices (B, K) distinti per riga; weights (B, K) = softmax dei logit grezzi selezionati."""
    indices: np.ndarray
    weights: Tensor
    logits: Optional[Tensor] = None
    utilization: Optional[UtilizationCounter] = None


class PolicyOutput(NamedTuple):
    logits: Tensor
    values: Tensor
    routing: RoutingResult


class ActResult(NamedTuple):
    action: np.ndarray
    log_prob: Tensor
    entropy: Tensor
    value: Tensor
    routing: RoutingResult
    probs: np.ndarray


# ==================== FEATURE HELPERS ====================

def signed_log1p(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.log1p(np.abs(x))


def sinusoidal_2d(grid_h: int, grid_w: int, d: int) -> np.ndarray:
    """Encoding posizionale (N, d): metà canali per la riga, metà per la colonna"""
    half = d // 2
    freqs = 1.0 / (10000.0 ** (np.arange(0, half, 2) / half))
    rows, cols = np.divmod(np.arange(grid_h * grid_w), grid_w)

    def encode(pos):
        angles = pos[:, None] * freqs[None, :]
        out = np.zeros((len(pos), half))
        out[:, 0::2] = np.sin(angles)
        out[:, 1::2] = np.cos(angles)
        return out
    return np.concatenate((encode(rows.astype(np.float64)), encode(cols.astype(np.float64))), axis=1)


def temporal_covariates(tau: np.ndarray, rho: np.ndarray, d_c: int) -> np.ndarray:
    """[τ, ρ] più armoniche giornaliere sin/cos di τ per d_c > 2"""
    columns = [tau, rho]
    harmonic = 1
    while len(columns) < d_c:
        columns.append(np.sin(2 * math.pi * harmonic * tau))
        if len(columns) < d_c:
            columns.append(np.cos(2 * math.pi * harmonic * tau))
        harmonic += 1
    return np.stack(columns, axis=1)


def bernoulli_log_prob(logits: Tensor, actions: np.ndarray) -> Tensor:
    """Σ_i log Bernoulli(a_i | σ(ℓ_i)) = Σ_i a_i·ℓ_i − softplus(ℓ_i)"""
    return (logits * actions - logits.softplus()).sum(axis=-1)


def bernoulli_entropy(logits: Tensor) -> Tensor:
    return (logits.softplus() - logits * logits.sigmoid()).sum(axis=-1)


# ==================== POLICY ====================

class RastMoePolicy:
    """
    Actor-critic con encoder a token per zona, attention pre-norm, pooling
    medio e mixture-of-experts top-K sul vettore globale.

    Tutte le operazioni lavorano su batch (B, ·); un'osservazione 1-D è
    trattata come batch di 1.
    """

    def __init__(self, config: Optional[EncoderConfig] = None):
        self.config = config or EncoderConfig()
        self.params = ParameterSet()
        self.router_bias = np.zeros(self.config.n_experts)
        self.utilization = UtilizationCounter(self.config.n_experts)
        self.positional = sinusoidal_2d(self.config.grid_h, self.config.grid_w, self.config.d)
        self._init_params(np.random.default_rng(self.config.init_seed))

    def _init_params(self, rng: np.random.Generator):
        cfg = self.config
        d, quarter, n = cfg.d, cfg.d // 4, cfg.n_zones

        def linear(name: str, fan_in: int, fan_out: int, scale: float = 1.0):
            self.params.add(f"{name}.w", rng.normal(0.0, scale / math.sqrt(fan_in), size=(fan_in, fan_out)))
            self.params.add(f"{name}.b", np.zeros(fan_out))

        def norm(name: str):
            self.params.add(f"{name}.g", np.ones(d))
            self.params.add(f"{name}.b", np.zeros(d))

        for channel in CHANNELS:
            linear(f"phi_{channel}.1", 1, quarter)
            linear(f"phi_{channel}.2", quarter, quarter)
        linear('fuse', d, d)
        self.params.add('pos.table', rng.normal(0.0, 0.02, size=(n, d)))
        linear('time', cfg.d_c, d)

        for layer in range(cfg.attn_layers):
            prefix = f"block{layer}"
            norm(f"{prefix}.ln1")
            for proj in ('q', 'k', 'v', 'o'):
                linear(f"{prefix}.attn.{proj}", d, d)
            norm(f"{prefix}.ln2")
            linear(f"{prefix}.ff.1", d, 2 * d)
            linear(f"{prefix}.ff.2", 2 * d, d)
        norm('ln_final')

        linear('router.1', d, d)
        linear('router.2', d, cfg.n_experts)
        for expert in range(cfg.n_experts):
            linear(f"expert{expert}.1", d, cfg.expert_hidden)
            linear(f"expert{expert}.2", cfg.expert_hidden, d)

        linear('actor.hidden', d, d)
        linear('actor.out', d, n, scale=0.01)
        linear('critic.hidden', d, d)
        linear('critic.out', d, 1)

    def _linear(self, x: Tensor, name: str) -> Tensor:
        return x @ self.params[f"{name}.w"] + self.params[f"{name}.b"]

    @property
    def num_parameters(self) -> int:
        return self.params.num_parameters

    # ---------- embedding ----------

    def check_observation(self, obs) -> np.ndarray:
        x = np.asarray(obs, dtype=np.float64)
        if x.ndim == 1:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.config.obs_dim:
            raise ShapeError(f"observation shape {np.shape(obs)} does not match length 2+4N = {self.config.obs_dim}")
        return x

    def fuse_channels(self, obs) -> Tensor:
        """Embedding per cella prima dei termini posizionali e temporali: (B, N, d)"""
        x = self.check_observation(obs)
        batch, n = x.shape[0], self.config.n_zones
        features = signed_log1p(x[:, 2:].reshape(batch, 4, n).transpose(0, 2, 1))
        parts = []
        for c, channel in enumerate(CHANNELS):
            hidden = self._linear(Tensor(features[:, :, c:c + 1]), f"phi_{channel}.1").gelu()
            parts.append(self._linear(hidden, f"phi_{channel}.2"))
        return self._linear(concat(parts, axis=-1), 'fuse')

    def embed_tokens(self, obs) -> Tensor:
        """Token (B, N, d): canali fusi + encoding sinusoidale 2-D + tabella appresa + covariate temporali"""
        x = self.check_observation(obs)
        covariates = temporal_covariates(x[:, 0], x[:, 1], self.config.d_c)
        temporal = self._linear(Tensor(covariates), 'time').reshape(x.shape[0], 1, self.config.d)
        return self.fuse_channels(x) + self.positional + self.params['pos.table'] + temporal

    # ---------- encoder ----------

    def _attention(self, x: Tensor, prefix: str) -> Tensor:
        batch, n, d = x.shape
        heads = self.config.attn_heads
        head_dim = d // heads

        def split(t: Tensor) -> Tensor:
            return t.reshape(batch, n, heads, head_dim).transpose(0, 2, 1, 3)
        q = split(self._linear(x, f"{prefix}.attn.q"))
        k = split(self._linear(x, f"{prefix}.attn.k"))
        v = split(self._linear(x, f"{prefix}.attn.v"))
        scores = (q @ k.transpose(0, 1, 3, 2)) * (1.0 / math.sqrt(head_dim))
        mixed = (scores.softmax(axis=-1) @ v).transpose(0, 2, 1, 3).reshape(batch, n, d)
        return self._linear(mixed, f"{prefix}.attn.o")

    def encode_pool(self, tokens: Tensor) -> Tensor:
        """Blocchi pre-norm (attention + feed-forward, residui), layernorm finale, media sui token → (B, d)"""
        x = tokens
        for layer in range(self.config.attn_layers):
            prefix = f"block{layer}"
            x = x + self._attention(layernorm(x, self.params[f"{prefix}.ln1.g"], self.params[f"{prefix}.ln1.b"]), prefix)
            h = layernorm(x, self.params[f"{prefix}.ln2.g"], self.params[f"{prefix}.ln2.b"])
            x = x + self._linear(self._linear(h, f"{prefix}.ff.1").gelu(), f"{prefix}.ff.2")
        x = layernorm(x, self.params['ln_final.g'], self.params['ln_final.b'])
        return x.mean(axis=-2)

    # ---------- routing ----------

    def router_logits(self, h: Tensor) -> Tensor:
        return self._linear(self._linear(h, 'router.1').gelu(), 'router.2')

    def select_experts(self, logits: Tensor, mask: Optional[ExpertMask] = None,
                       hours: Optional[np.ndarray] = None, track: bool = False) -> RoutingResult:
        """
        Top-K su logit + bias del router (esperti mascherati a −∞, parità → id più basso).
        I pesi sono la softmax dei logit grezzi degli esperti selezionati.
        """
        cfg = self.config
        scores = logits.data + self.router_bias
        if mask is not None:
            disabled = mask.validate(cfg.n_experts, cfg.top_k)
            if disabled:
                scores = scores.copy()
                scores[:, sorted(disabled)] = -np.inf
        indices = np.argsort(-scores, axis=1, kind='stable')[:, :cfg.top_k]
        weights = take_along(logits, indices).softmax(axis=-1)
        if track:
            self.utilization.record(indices, hours)
        return RoutingResult(indices, weights, logits, self.utilization)

    def route_topk(self, h: Tensor, mask: Optional[ExpertMask] = None,
                   hours: Optional[np.ndarray] = None, track: bool = False) -> RoutingResult:
        return self.select_experts(self.router_logits(h), mask, hours, track)

    def expert(self, expert_id: int, h: Tensor) -> Tensor:
        return self._linear(self._linear(h, f"expert{expert_id}.1").gelu(), f"expert{expert_id}.2")

    def moe_forward(self, h: Tensor, routing: RoutingResult) -> Tensor:
        """z = Σ_{e∈I} w_e f_e(h); ogni esperto gira solo sulle righe che lo hanno selezionato"""
        batch = h.shape[0]
        z = None
        for expert_id in np.unique(routing.indices):
            rows, slots = np.nonzero(routing.indices == expert_id)
            contribution = self.expert(int(expert_id), h[rows]) * routing.weights[rows, slots].reshape(-1, 1)
            part = scatter_rows(contribution, rows, batch)
            z = part if z is None else z + part
        return z

    def load_balance_adjust(self, utilization: Optional[UtilizationCounter] = None) -> np.ndarray:
        """
        Soft cap: abbassa di bias_step il bias degli esperti la cui quota di
        attivazioni nella finestra supera cap_ratio/E, poi azzera la finestra.
        """
        cfg = self.config
        counter = utilization or self.utilization
        if cfg.load_balance != 'soft_cap' or counter.window_steps == 0:
            return self.router_bias.copy()
        share = counter.window_counts / (cfg.top_k * counter.window_steps)
        self.router_bias[share > cfg.cap_ratio / cfg.n_experts] -= cfg.bias_step
        counter.reset_window()
        return self.router_bias.copy()

    # ---------- heads ----------

    def heads(self, z: Tensor):
        """(logit per zona (B, N), valore (B,))"""
        logits = self._linear(self._linear(z, 'actor.hidden').tanh(), 'actor.out')
        values = self._linear(self._linear(z, 'critic.hidden').tanh(), 'critic.out')
        return logits, values.reshape(-1)

    def forward(self, obs, mask: Optional[ExpertMask] = None, track: bool = False) -> PolicyOutput:
        x = self.check_observation(obs)
        h = self.encode_pool(self.embed_tokens(x))
        hours = np.floor(x[:, 0] * HOURS + 1e-9).astype(np.int64) % HOURS
        routing = self.route_topk(h, mask, hours, track)
        logits, values = self.heads(self.moe_forward(h, routing))
        return PolicyOutput(logits, values, routing)

    def act_and_evaluate(self, obs, rng: Optional[np.random.Generator] = None, mode: str = 'sample',
                         actions=None, mask: Optional[ExpertMask] = None, track: bool = False,
                         threshold: float = 0.5) -> ActResult:
        """
        Args:
            obs: Osservazione (2+4N,) o batch (B, 2+4N)
            rng: Generatore per mode='sample'
            mode: 'sample' (bit indipendenti), 'greedy' (p ≥ threshold) o 'evaluate' (azioni date)
            actions: Azioni da valutare in mode='evaluate'

        Returns:
            ActResult(action (B, N), log_prob (B,), entropy (B,), value (B,), routing, probs (B, N))
        """
        if mode not in ACT_MODES:
            raise ConfigError(f"act mode must be one of {ACT_MODES}, got {mode!r}")
        out = self.forward(obs, mask, track)
        probs = 0.5 * (1.0 + np.tanh(0.5 * out.logits.data))
        if mode == 'sample':
            if rng is None:
                raise ContractError("sample mode needs an rng")
            chosen = (rng.random(probs.shape) < probs).astype(np.float64)
        elif mode == 'greedy':
            chosen = (probs >= threshold).astype(np.float64)
        else:
            chosen = np.asarray(actions, dtype=np.float64)
            if chosen.ndim == 1:
                chosen = chosen[None, :]
            if chosen.shape != probs.shape:
                raise ShapeError(f"actions shape {np.shape(actions)} does not match logits {probs.shape}")
        return ActResult(chosen, bernoulli_log_prob(out.logits, chosen), bernoulli_entropy(out.logits),
                         out.values, out.routing, probs)

    # ---------- reporting / persistence ----------

    def utilization_report(self, utilization: Optional[UtilizationCounter] = None) -> Dict:
        counter = utilization or self.utilization
        return {
            'steps': counter.steps,
            'frequencies': counter.frequencies(),
            'hourly': counter.hourly.copy(),
            'router_bias': self.router_bias.copy(),
        }

    def merge_utilization(self, counters: Iterable[UtilizationCounter]) -> UtilizationCounter:
        for counter in counters:
            self.utilization.merge(counter)
        return self.utilization

    def save(self, path, meta: Optional[Mapping] = None):
        u = self.utilization
        arrays = {
            'router_bias': self.router_bias,
            'util_counts': u.counts, 'util_hourly': u.hourly, 'util_window_counts': u.window_counts,
            'util_steps': np.array([u.steps, u.window_steps]),
        }
        return save_checkpoint(path, self.params, arrays, {'encoder': asdict(self.config), **(meta or {})})

    @classmethod
    def load(cls, path):
        """
        Returns:
            (RastMoePolicy, meta del checkpoint)
        """
        data = load_checkpoint(path)
        meta = data['meta']
        policy = cls(EncoderConfig(**meta['encoder']))
        policy.params.load_state_dict(data['params'])
        policy.params.load_optimizer_state(data['optimizer'])
        arrays = data['arrays']
        policy.router_bias = np.asarray(arrays['router_bias'], dtype=np.float64).copy()
        steps, window_steps = (int(v) for v in arrays['util_steps'])
        policy.utilization = UtilizationCounter(
            policy.config.n_experts, arrays['util_counts'].astype(np.float64),
            arrays['util_hourly'].astype(np.float64), steps,
            arrays['util_window_counts'].astype(np.float64), window_steps,
        )
        return policy, meta
