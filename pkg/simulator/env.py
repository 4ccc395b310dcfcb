# simulator/env.py - Simulatore RAST-MDP: code di passeggeri e autisti per zona con azioni hold/match
import copy
import itertools
from collections import deque
from dataclasses import dataclass, field
from typing import Deque, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from config_rastmoe import EXACT_MATCHING_LIMIT, HEURISTIC_CONFIG, SCENARIO_DEFAULTS, TRACE_CSV_SCHEMA
from simulator.reward import (
    MultiplierState, RewardBreakdown, RewardConfig, compute_reward, congestion_weight,
    incremental_waits, is_late, violation_fraction
)
from surrogate.mfd import HOURS, ODTravelTimeTable
from surrogate.netgraph import grid_neighbors
from utils.errors import ConfigError, ContractError, ShapeError

SECONDS_PER_HOUR = 3600.0
CLOCK_EPS = 1e-12
MATCHERS = ('greedy', 'exact')


# ==================== DOMAIN TYPES ====================

@dataclass
class PassengerRequest:
    id: int
    origin_zone: int
    dest_zone: int
    request_time: float
    match_time: Optional[float] = None
    pickup_time: Optional[float] = None

    @property
    def matching_wait(self) -> float:
        return 0.0 if self.match_time is None else self.match_time - self.request_time

    @property
    def pickup_wait(self) -> float:
        if self.pickup_time is None or self.match_time is None:
            return 0.0
        return self.pickup_time - self.match_time


@dataclass
class Driver:
    id: int
    zone: int
    status: str = 'idle'            # idle | enroute_pickup | occupied
    free_at: float = 0.0
    location_at_free: Optional[int] = None
    pickup_at: Optional[float] = None
    request_id: Optional[int] = None


@dataclass(frozen=True)
class Assignment:
    request: PassengerRequest
    driver: Driver
    pickup_time: float              # ore di viaggio autista → origine


@dataclass
class SimConfig:
    """Scenario del simulatore; le tariffe sono per zona e per ora (N × 24, in 1/h)."""
    grid_h: int
    grid_w: int
    passenger_rates: np.ndarray
    driver_rates: np.ndarray
    od_probs: Optional[np.ndarray] = None
    horizon_h: float = SCENARIO_DEFAULTS['horizon_h']
    epoch_dt_s: float = SCENARIO_DEFAULTS['epoch_dt_s']
    warmup_epochs: int = SCENARIO_DEFAULTS['warmup_epochs']
    randomize_start: bool = SCENARIO_DEFAULTS['randomize_start']
    start_hours: Tuple[int, ...] = tuple(range(HOURS))
    start_hour: float = 0.0
    neighbor_matching: bool = SCENARIO_DEFAULTS['neighbor_matching']
    matcher: str = SCENARIO_DEFAULTS['matcher']
    driver_logoff_prob: float = SCENARIO_DEFAULTS['driver_logoff_prob']
    record_trace: bool = SCENARIO_DEFAULTS['record_trace']
    interval_window_s: float = HEURISTIC_CONFIG['interval_window_s']
    seed: int = SCENARIO_DEFAULTS['seed']

    def __post_init__(self):
        n_zones = self.grid_h * self.grid_w
        if self.grid_h < 1 or self.grid_w < 1:
            raise ConfigError(f"grid must be at least 1×1, got {self.grid_h}×{self.grid_w}")
        self.passenger_rates = np.asarray(self.passenger_rates, dtype=np.float64)
        self.driver_rates = np.asarray(self.driver_rates, dtype=np.float64)
        for name in ('passenger_rates', 'driver_rates'):
            rates = getattr(self, name)
            if rates.shape != (n_zones, HOURS):
                raise ConfigError(f"{name} must have shape {(n_zones, HOURS)}, got {rates.shape}")
            if not np.all(np.isfinite(rates)) or np.any(rates < 0):
                raise ConfigError(f"{name} must be finite and ≥ 0")

        if self.od_probs is None:
            self.od_probs = np.full((n_zones, n_zones), 1.0 / n_zones)
        self.od_probs = np.asarray(self.od_probs, dtype=np.float64)
        if self.od_probs.shape != (n_zones, n_zones) or np.any(self.od_probs < 0):
            raise ConfigError(f"od_probs must be a non-negative {n_zones}×{n_zones} matrix")
        if not np.allclose(self.od_probs.sum(axis=1), 1.0, atol=1e-9):
            raise ConfigError("every od_probs row must sum to 1")

        if self.epoch_dt_s <= 0:
            raise ConfigError(f"epoch_dt_s must be > 0, got {self.epoch_dt_s}")
        if self.warmup_epochs < 0:
            raise ConfigError("warmup_epochs must be ≥ 0")
        if self.horizon_h <= self.warmup_epochs * self.epoch_dt_h:
            raise ConfigError("horizon must exceed the warm-up duration")
        if self.matcher not in MATCHERS:
            raise ConfigError(f"matcher must be one of {MATCHERS}, got {self.matcher!r}")
        if not 0 <= self.driver_logoff_prob <= 1:
            raise ConfigError("driver_logoff_prob must lie in [0, 1]")
        self.start_hours = tuple(int(h) % HOURS for h in self.start_hours)
        if not self.start_hours:
            raise ConfigError("start_hours must not be empty")

    @property
    def n_zones(self) -> int:
        return self.grid_h * self.grid_w

    @property
    def epoch_dt_h(self) -> float:
        return self.epoch_dt_s / SECONDS_PER_HOUR

    @property
    def total_epochs(self) -> int:
        return int(round(self.horizon_h / self.epoch_dt_h))

    @property
    def obs_dim(self) -> int:
        return 2 + 4 * self.n_zones


@dataclass
class SimState:
    epoch: int
    start_hour: float
    horizon_h: float
    epoch_dt_h: float
    queues: List[Deque[PassengerRequest]]
    idle: List[List[Driver]]
    rng: np.random.Generator
    passenger_rates: np.ndarray
    driver_rates: np.ndarray
    in_flight: List[Driver] = field(default_factory=list)
    awaiting: Dict[int, PassengerRequest] = field(default_factory=dict)
    completed: List[PassengerRequest] = field(default_factory=list)
    window: Deque[Tuple[int, PassengerRequest]] = field(default_factory=deque)
    requests_created: int = 0
    requests_completed: int = 0
    drivers_created: int = 0
    drivers_departed: int = 0
    control_start_epoch: int = 0
    done: bool = False
    trace: List[Tuple] = field(default_factory=list)

    @property
    def clock(self) -> float:
        return self.start_hour + self.epoch * self.epoch_dt_h

    @property
    def elapsed_h(self) -> float:
        return self.epoch * self.epoch_dt_h

    @property
    def tau_t(self) -> float:
        return self.clock % HOURS

    @property
    def rho_t(self) -> float:
        return self.horizon_h - self.elapsed_h

    @property
    def hour(self) -> int:
        return int(self.tau_t) % HOURS

    @property
    def control_start_time(self) -> float:
        return self.start_hour + self.control_start_epoch * self.epoch_dt_h

    @property
    def n_p(self) -> np.ndarray:
        return np.array([len(queue) for queue in self.queues], dtype=np.float64)

    @property
    def n_d(self) -> np.ndarray:
        return np.array([len(drivers) for drivers in self.idle], dtype=np.float64)

    def driver_counts(self) -> Dict[str, int]:
        enroute = sum(1 for d in self.in_flight if d.status == 'enroute_pickup')
        return {
            'idle': int(self.n_d.sum()),
            'enroute_pickup': enroute,
            'occupied': len(self.in_flight) - enroute,
            'departed': self.drivers_departed,
        }


# ==================== SAMPLING / ASSIGNMENT ====================

def sample_arrivals(rate: float, dt: float, rng: np.random.Generator) -> int:
    """Numero di arrivi Poisson(rate·dt)"""
    if rate < 0 or dt <= 0:
        raise ContractError(f"arrival rate must be ≥ 0 and dt > 0, got rate={rate}, dt={dt}")
    if rate == 0:
        return 0
    return int(rng.poisson(rate * dt))


def greedy_assignment(costs: np.ndarray) -> List[Tuple[int, int]]:
    """
    Accoppia min(n_p, n_d) coppie in ordine crescente di costo.

    Parità risolte per indice di richiesta e poi di autista.
    """
    n_requests, n_drivers = costs.shape
    target = min(n_requests, n_drivers)
    if target == 0:
        return []

    rows, cols = np.indices(costs.shape)
    order = np.lexsort((cols.ravel(), rows.ravel(), costs.ravel()))
    used_requests = np.zeros(n_requests, dtype=bool)
    used_drivers = np.zeros(n_drivers, dtype=bool)
    pairs = []
    for flat in order:
        p, d = divmod(int(flat), n_drivers)
        if used_requests[p] or used_drivers[d]:
            continue
        used_requests[p] = used_drivers[d] = True
        pairs.append((p, d))
        if len(pairs) == target:
            break
    return sorted(pairs)


def exact_assignment(costs: np.ndarray) -> List[Tuple[int, int]]:
    """Assegnamento di costo totale minimo per enumerazione (code fino a 6×6)"""
    n_requests, n_drivers = costs.shape
    if max(n_requests, n_drivers) > EXACT_MATCHING_LIMIT:
        raise ConfigError(f"exact matching is limited to {EXACT_MATCHING_LIMIT}×{EXACT_MATCHING_LIMIT} queues")
    if min(n_requests, n_drivers) == 0:
        return []

    best, best_cost = None, np.inf
    if n_requests <= n_drivers:
        for drivers in itertools.permutations(range(n_drivers), n_requests):
            total = sum(costs[p, d] for p, d in enumerate(drivers))
            if total < best_cost:
                best, best_cost = list(enumerate(drivers)), total
    else:
        for requests in itertools.permutations(range(n_requests), n_drivers):
            total = sum(costs[p, d] for d, p in enumerate(requests))
            if total < best_cost:
                best, best_cost = [(p, d) for d, p in enumerate(requests)], total
    return sorted(best)


# ==================== ENVIRONMENT ====================

class RideHailingEnv:
    """
    Ambiente RAST-MDP a livello di zona.

    Ogni epoca: matching nelle zone con a_i = 1, attesa per le richieste
    trattenute, avanzamento dell'orologio con rilascio degli autisti,
    arrivi Poisson, reward dal modulo reward.
    """

    def __init__(self, config: SimConfig, table: ODTravelTimeTable,
                 reward_config: Optional[RewardConfig] = None):
        if table.n_zones != config.n_zones:
            raise ConfigError(f"travel-time table has {table.n_zones} zones, scenario has {config.n_zones}")
        self.config = config
        self.table = table
        self.reward_config = reward_config or RewardConfig()
        self.multiplier = MultiplierState(self.reward_config.lambda_init)
        self.neighbors = [
            grid_neighbors(zone, config.grid_h, config.grid_w) if config.neighbor_matching else []
            for zone in range(config.n_zones)
        ]
        self.cp_by_hour = self._congestion_weights()
        self.state: Optional[SimState] = None

    @property
    def n_zones(self) -> int:
        return self.config.n_zones

    @property
    def obs_dim(self) -> int:
        return self.config.obs_dim

    def _congestion_weights(self) -> np.ndarray:
        """c_p(t) per ora: velocità media pesata per domanda contro quella di riferimento"""
        cfg = self.reward_config
        speeds = self.table.zone_speeds
        if speeds is None:
            return np.full(HOURS, cfg.c_p_base)

        hourly = self.config.passenger_rates.T
        daily = hourly.sum(axis=0)
        if daily.sum() <= 0:
            daily = np.ones(self.n_zones)
        ref_speed = float(np.average(speeds.max(axis=0), weights=daily))

        weights = np.empty(HOURS)
        for hour in range(HOURS):
            w = hourly[hour] if hourly[hour].sum() > 0 else daily
            weights[hour] = congestion_weight(cfg.c_p_base, float(np.average(speeds[hour], weights=w)),
                                              ref_speed, cfg.cp_clip)
        return weights

    # ---------- lifecycle ----------

    def reset(self, seed: Optional[int] = None) -> SimState:
        """
        Nuovo episodio: orologio a 0 (o a un'ora casuale), code vuote, warm-up
        con l'euristica a intervallo costante. Il log delle richieste completate
        viene svuotato dopo il warm-up.
        """
        cfg = self.config
        rng = np.random.default_rng(cfg.seed if seed is None else seed)
        start_hour = float(cfg.start_hours[int(rng.integers(len(cfg.start_hours)))]) if cfg.randomize_start \
            else float(cfg.start_hour)

        self.state = SimState(
            epoch=0,
            start_hour=start_hour,
            horizon_h=cfg.horizon_h,
            epoch_dt_h=cfg.epoch_dt_h,
            queues=[deque() for _ in range(cfg.n_zones)],
            idle=[[] for _ in range(cfg.n_zones)],
            rng=rng,
            passenger_rates=np.zeros(cfg.n_zones),
            driver_rates=np.zeros(cfg.n_zones),
        )
        self._refresh_rates()

        if cfg.warmup_epochs:
            from trainers.heuristics import IntervalHeuristic
            warmup_policy = IntervalHeuristic(cfg.n_zones, cfg.interval_window_s)
            for _ in range(cfg.warmup_epochs):
                self._advance(warmup_policy.act(None, self.state.clock), self.multiplier)
            self.state.completed.clear()
            self.state.control_start_epoch = self.state.epoch
        return self.state

    def clone(self) -> 'RideHailingEnv':
        """Copia indipendente dello stato (rng incluso); tabella e config sono condivise"""
        twin = copy.copy(self)
        twin.state = copy.deepcopy(self.state)
        return twin

    def _require_state(self) -> SimState:
        if self.state is None:
            raise ContractError("environment must be reset before use")
        return self.state

    # ---------- observation ----------

    def observe(self, state: Optional[SimState] = None) -> np.ndarray:
        """s_t = [τ_t/24, ρ_t/horizon, n_p(1:N), n_d(1:N), λ(1:N), μ(1:N)]"""
        state = state or self._require_state()
        return np.concatenate((
            [state.tau_t / HOURS, state.rho_t / state.horizon_h],
            state.n_p, state.n_d, state.passenger_rates, state.driver_rates,
        ))

    def _refresh_rates(self):
        state = self.state
        state.passenger_rates = self.config.passenger_rates[:, state.hour].copy()
        state.driver_rates = self.config.driver_rates[:, state.hour].copy()

    # ---------- transitions ----------

    def match_zone(self, zone: int) -> List[Assignment]:
        """
        Abbina le richieste della zona agli autisti idle (stessa zona e, se
        abilitato, zone adiacenti) in ordine crescente di tempo di pickup.
        """
        state = self._require_state()
        queue = state.queues[zone]
        if not queue:
            return []
        candidates = [driver for source in [zone, *self.neighbors[zone]] for driver in state.idle[source]]
        if not candidates:
            return []

        clock, hour = state.clock, state.hour
        requests = list(queue)
        driver_costs = np.array([self.table.travel_time(d.zone, zone, hour) for d in candidates])
        costs = np.broadcast_to(driver_costs, (len(requests), len(candidates)))

        use_exact = self.config.matcher == 'exact' and max(costs.shape) <= EXACT_MATCHING_LIMIT
        pairs = exact_assignment(costs) if use_exact else greedy_assignment(costs)

        assignments = []
        matched_requests, matched_drivers = set(), set()
        for p, d in pairs:
            request, driver = requests[p], candidates[d]
            pickup = float(costs[p, d])
            request.match_time = clock
            request.pickup_time = clock + pickup

            driver.status = 'enroute_pickup'
            driver.pickup_at = request.pickup_time
            driver.free_at = request.pickup_time + self.table.travel_time(request.origin_zone, request.dest_zone, hour)
            driver.location_at_free = request.dest_zone
            driver.request_id = request.id

            state.awaiting[request.id] = request
            state.in_flight.append(driver)
            matched_requests.add(request.id)
            matched_drivers.add(driver.id)
            assignments.append(Assignment(request, driver, pickup))
            self._trace('match', zone, request.id, driver.id, pickup)

        state.queues[zone] = deque(r for r in queue if r.id not in matched_requests)
        for source in [zone, *self.neighbors[zone]]:
            state.idle[source] = [d for d in state.idle[source] if d.id not in matched_drivers]
        return assignments

    def step(self, action: Sequence, multiplier: Optional[MultiplierState] = None
             ) -> Tuple[SimState, RewardBreakdown, bool]:
        state = self._require_state()
        if state.done:
            raise ContractError("cannot step a finished episode; call reset()")
        breakdown, _ = self._advance(action, multiplier or self.multiplier)
        if state.epoch >= self.config.total_epochs:
            state.done = True
        return state, breakdown, state.done

    def _advance(self, action, multiplier: MultiplierState) -> Tuple[RewardBreakdown, List[Assignment]]:
        state = self.state
        bits = np.asarray(action)
        if bits.shape != (self.n_zones,):
            raise ShapeError(f"action must have shape ({self.n_zones},), got {bits.shape}")
        hour = state.hour

        assignments = []
        for zone in np.flatnonzero(bits > 0.5):
            assignments.extend(self.match_zone(int(zone)))

        held = sum(len(queue) for queue in state.queues)
        d_match, d_pickup = incremental_waits(held, state.epoch_dt_h, assignments)

        state.epoch += 1
        self._release()
        self._refresh_rates()
        self._arrivals()

        cfg = self.reward_config
        while state.window and state.window[0][0] <= state.epoch - cfg.violation_window:
            state.window.popleft()
        g = violation_fraction([request for _, request in state.window], cfg.late_threshold_h)
        breakdown = compute_reward(d_match, d_pickup, float(self.cp_by_hour[hour]), g, multiplier, cfg)
        return breakdown, assignments

    def _release(self):
        """Completa i pickup scaduti e riporta idle gli autisti che hanno finito la corsa"""
        state = self.state
        clock = state.clock
        logoff = self.config.driver_logoff_prob
        still_busy = []
        for driver in state.in_flight:
            if driver.status == 'enroute_pickup' and driver.pickup_at <= clock + CLOCK_EPS:
                driver.status = 'occupied'
                self._complete(state.awaiting.pop(driver.request_id), driver)
            if driver.status == 'occupied' and driver.free_at <= clock + CLOCK_EPS:
                if logoff > 0 and state.rng.random() < logoff:
                    state.drivers_departed += 1
                    self._trace('logoff', driver.location_at_free, None, driver.id, 0.0)
                    continue
                driver.status = 'idle'
                driver.zone = driver.location_at_free
                driver.pickup_at = driver.request_id = None
                state.idle[driver.zone].append(driver)
                self._trace('dropoff', driver.zone, None, driver.id, 0.0)
                continue
            still_busy.append(driver)
        state.in_flight = still_busy

    def _complete(self, request: PassengerRequest, driver: Driver):
        state = self.state
        state.requests_completed += 1
        state.window.append((state.epoch, request))
        if request.request_time >= state.control_start_time - CLOCK_EPS:
            state.completed.append(request)
        self._trace('pickup', request.origin_zone, request.id, driver.id, request.pickup_wait)

    def _arrivals(self):
        state = self.state
        rng, dt, clock = state.rng, state.epoch_dt_h, state.clock
        for zone in range(self.n_zones):
            n_requests = sample_arrivals(float(state.passenger_rates[zone]), dt, rng)
            if n_requests:
                dests = rng.choice(self.n_zones, size=n_requests, p=self.config.od_probs[zone])
                for dest in dests:
                    request = PassengerRequest(state.requests_created, zone, int(dest), clock)
                    state.requests_created += 1
                    state.queues[zone].append(request)
                    self._trace('request', zone, request.id, None, float(dest))
            for _ in range(sample_arrivals(float(state.driver_rates[zone]), dt, rng)):
                driver = Driver(state.drivers_created, zone)
                state.drivers_created += 1
                state.idle[zone].append(driver)
                self._trace('driver_arrival', zone, None, driver.id, 0.0)

    # ---------- bookkeeping ----------

    def _trace(self, kind: str, zone, request_id, driver_id, value: float):
        if self.config.record_trace:
            self.state.trace.append((self.state.clock, kind, zone, request_id, driver_id, value))

    def trace_frame(self) -> pd.DataFrame:
        state = self._require_state()
        return pd.DataFrame(state.trace, columns=TRACE_CSV_SCHEMA)

    def conservation(self) -> Dict[str, int]:
        """Contatori per i bilanci di richieste e autisti"""
        state = self._require_state()
        drivers = state.driver_counts()
        return {
            'requests_created': state.requests_created,
            'unmatched': int(state.n_p.sum()),
            'awaiting_pickup': len(state.awaiting),
            'completed': state.requests_completed,
            'drivers_created': state.drivers_created,
            **drivers,
        }

    def episode_summary(self) -> Dict[str, float]:
        """Attese medie (s) e tasso di violazione sulle richieste completate dopo il warm-up"""
        state = self._require_state()
        completed = state.completed
        if not completed:
            return {'completed': 0, 'match_wait_s': 0.0, 'pickup_wait_s': 0.0, 'violation_rate': 0.0}
        late_h = self.reward_config.late_threshold_h
        return {
            'completed': len(completed),
            'match_wait_s': float(np.mean([r.matching_wait for r in completed])) * SECONDS_PER_HOUR,
            'pickup_wait_s': float(np.mean([r.pickup_wait for r in completed])) * SECONDS_PER_HOUR,
            'violation_rate': sum(is_late(r, late_h) for r in completed) / len(completed),
        }
