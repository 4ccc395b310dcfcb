# utils/errors.py - Eccezioni del toolkit con exit code per la CLI
from config_rastmoe import EXIT_CODES


class RastMoeError(Exception):
    """Base di tutte le eccezioni del toolkit; porta l'exit code della CLI."""
    exit_code = EXIT_CODES['config']


class ConfigError(RastMoeError, ValueError):
    exit_code = EXIT_CODES['config']


class DataError(RastMoeError, ValueError):
    exit_code = EXIT_CODES['data']


class NumericError(RastMoeError, ArithmeticError):
    exit_code = EXIT_CODES['numeric']


# ==================== NETWORK / SURROGATE ====================

class NetworkParseError(DataError):
    pass


class NetworkValidationError(DataError):
    pass


class ConnectivityError(DataError):
    pass


class AssignmentError(DataError):
    pass


class RouteError(DataError):
    pass


class FlowParseError(DataError):
    pass


class SurrogateBuildError(DataError):
    pass


class TravelTimeLookupError(DataError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else ''


class PerturbationSpecError(ConfigError):
    pass


# ==================== SIMULATOR / LEARNING ====================

class ContractError(RastMoeError, RuntimeError):
    pass


class ShapeError(RastMoeError, ValueError):
    pass


class MaskError(ConfigError):
    pass


class CapabilityError(RastMoeError, TypeError):
    pass
