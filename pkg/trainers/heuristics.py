# trainers/heuristics.py - Baseline euristiche: matching immediato e batching a intervallo costante
import math
from typing import Optional, Union

import numpy as np

from config_rastmoe import HEURISTIC_CONFIG
from utils.errors import ConfigError

SECONDS_PER_HOUR = 3600.0
WINDOW_EPS = 1e-6
HEURISTIC_KINDS = ('instant', 'interval')


class InstantHeuristic:
    """Abbina ogni richiesta all'autista disponibile più vicino a ogni epoca."""

    kind = 'instant'

    def __init__(self, n_zones: int):
        self.n_zones = n_zones

    def reset(self):
        pass

    def act(self, obs, clock: float) -> np.ndarray:
        return np.ones(self.n_zones)


class IntervalHeuristic:
    """
    Accumula le richieste per una finestra fissa e abbina tutte le zone quando
    floor(clock / window) avanza. La prima chiamata abbina sempre.
    """

    kind = 'interval'

    def __init__(self, n_zones: int, window_s: float = HEURISTIC_CONFIG['interval_window_s']):
        if window_s <= 0:
            raise ConfigError(f"interval window must be > 0 s, got {window_s}")
        self.n_zones = n_zones
        self.window_s = float(window_s)
        self.last_window: Optional[int] = None

    def reset(self):
        self.last_window = None

    def window_index(self, clock: float) -> int:
        return math.floor(clock * SECONDS_PER_HOUR / self.window_s + WINDOW_EPS)

    def act(self, obs, clock: float) -> np.ndarray:
        window = self.window_index(clock)
        if window == self.last_window:
            return np.zeros(self.n_zones)
        self.last_window = window
        return np.ones(self.n_zones)


Heuristic = Union[InstantHeuristic, IntervalHeuristic]


def heuristic_policy(kind: str, n_zones: int,
                     window_s: float = HEURISTIC_CONFIG['interval_window_s']) -> Heuristic:
    """Factory: 'instant' o 'interval' (window_s in secondi)"""
    if kind == 'instant':
        return InstantHeuristic(n_zones)
    if kind == 'interval':
        return IntervalHeuristic(n_zones, window_s)
    raise ConfigError(f"unknown heuristic {kind!r}; expected one of {HEURISTIC_KINDS}")
