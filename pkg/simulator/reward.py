# simulator/reward.py - Reward anti-hacking e moltiplicatore adattivo dei ritardi
from dataclasses import dataclass, fields
from typing import Dict, Iterable, Mapping, Optional, Sequence, Tuple

from config_rastmoe import FIXED_RATIO_PRESETS, REWARD_CONFIG
from utils.errors import ConfigError

SECONDS_PER_HOUR = 3600.0


def parse_ratio(ratio) -> Optional[Tuple[float, float]]:
    """"8:1", (8, 1) o None → (c_m, c_p)"""
    if ratio is None:
        return None
    if isinstance(ratio, str):
        if ratio in FIXED_RATIO_PRESETS:
            return FIXED_RATIO_PRESETS[ratio]
        try:
            c_m, c_p = (float(part) for part in ratio.split(':'))
        except ValueError:
            raise ConfigError(f"fixed_ratio must look like 'c_m:c_p', got {ratio!r}")
        return c_m, c_p
    c_m, c_p = ratio
    return float(c_m), float(c_p)


@dataclass(frozen=True)
class RewardConfig:
    c_m: float = REWARD_CONFIG['c_m']
    c_p_base: float = REWARD_CONFIG['c_p_base']
    alpha: float = REWARD_CONFIG['alpha']
    xi: float = REWARD_CONFIG['xi']
    late_threshold_s: float = REWARD_CONFIG['late_threshold_s']
    violation_window: int = REWARD_CONFIG['violation_window']
    cp_clip: Tuple[float, float] = REWARD_CONFIG['cp_clip']
    lambda_init: float = REWARD_CONFIG['lambda_init']
    fixed_ratio: Optional[Tuple[float, float]] = REWARD_CONFIG['fixed_ratio']

    def __post_init__(self):
        object.__setattr__(self, 'cp_clip', tuple(self.cp_clip))
        object.__setattr__(self, 'fixed_ratio', parse_ratio(self.fixed_ratio))
        if not 0 < self.alpha < 1:
            raise ConfigError(f"reward.alpha must lie in (0, 1), got {self.alpha}")
        if self.xi <= 0:
            raise ConfigError(f"reward.xi must be > 0, got {self.xi}")
        low, high = self.cp_clip
        if not low <= 1 <= high:
            raise ConfigError(f"reward.cp_clip must satisfy low ≤ 1 ≤ high, got {self.cp_clip}")
        if self.violation_window < 1:
            raise ConfigError("reward.violation_window must be ≥ 1")
        if self.lambda_init < 0:
            raise ConfigError("reward.lambda_init must be ≥ 0")
        if self.fixed_ratio is not None and min(self.fixed_ratio) <= 0:
            raise ConfigError(f"reward.fixed_ratio weights must be > 0, got {self.fixed_ratio}")

    @classmethod
    def from_dict(cls, values: Mapping) -> 'RewardConfig':
        known = {f.name for f in fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ConfigError(f"unknown reward keys: {sorted(unknown)}")
        return cls(**values)

    @property
    def late_threshold_h(self) -> float:
        return self.late_threshold_s / SECONDS_PER_HOUR

    @property
    def adaptive(self) -> bool:
        return self.fixed_ratio is None


@dataclass(frozen=True)
class MultiplierState:
    value: float = 0.0

    def __post_init__(self):
        if self.value < 0:
            raise ConfigError(f"multiplier must be ≥ 0, got {self.value}")


@dataclass(frozen=True)
class RewardBreakdown:
    d_match: float
    d_pickup: float
    cp_t: float
    g: float
    lam: float
    r: float

    def as_row(self, epoch: int) -> Dict:
        return {'epoch': epoch, 'd_match': self.d_match, 'd_pickup': self.d_pickup,
                'cp_t': self.cp_t, 'g': self.g, 'lambda': self.lam, 'r': self.r}


def incremental_waits(held_count: int, epoch_dt_h: float, assignments: Iterable) -> Tuple[float, float]:
    """
    ΔW_match = epoch_dt × richieste trattenute; ΔW_pickup = Σ (pickup_time − match_time).

    Le richieste abbinate in questa epoca smettono di accumulare attesa di matching.
    """
    d_match = held_count * epoch_dt_h
    d_pickup = sum(a.request.pickup_time - a.request.match_time for a in assignments)
    return d_match, float(d_pickup)


def congestion_weight(c_p_base: float, mean_speed: float, ref_speed: float,
                      clip: Tuple[float, float] = REWARD_CONFIG['cp_clip']) -> float:
    """c_p(t) = c_p_base · clamp(v_ref / v̄(h)); rete lenta → pickup più penalizzato"""
    if mean_speed <= 0:
        raise ConfigError(f"mean network speed must be > 0, got {mean_speed}")
    low, high = clip
    return c_p_base * min(max(ref_speed / mean_speed, low), high)


def is_late(request, late_threshold_h: float) -> bool:
    return request.matching_wait > late_threshold_h or request.pickup_wait > late_threshold_h


def violation_fraction(window: Sequence, late_threshold_h: float) -> float:
    """Quota di richieste nella finestra con attesa di matching O di pickup oltre soglia; 0 se vuota"""
    if not window:
        return 0.0
    late = sum(1 for request in window if is_late(request, late_threshold_h))
    return late / len(window)


def compute_reward(d_match: float, d_pickup: float, cp_t: float, g: float,
                   multiplier: MultiplierState, config: RewardConfig) -> RewardBreakdown:
    """
    r = −(c_m·ΔW_match + c_p(t)·ΔW_pickup) − λ·(g − α).

    In modalità a pesi fissi λ resta 0 e c_m : c_p è quello configurato.
    """
    if config.fixed_ratio is not None:
        c_m, cp_t = config.fixed_ratio
        lam = 0.0
    else:
        c_m, lam = config.c_m, multiplier.value
    r = -(c_m * d_match + cp_t * d_pickup) - lam * (g - config.alpha)
    return RewardBreakdown(d_match, d_pickup, cp_t, g, lam, r)


def update_multiplier(multiplier: MultiplierState, g: float, config: RewardConfig) -> MultiplierState:
    """λ' = [λ + ξ(g − α)]₊; congelato a 0 con pesi fissi"""
    if config.fixed_ratio is not None:
        return MultiplierState(0.0)
    return MultiplierState(max(0.0, multiplier.value + config.xi * (g - config.alpha)))
