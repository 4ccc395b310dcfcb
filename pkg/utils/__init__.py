# utils/__init__.py
from .errors import RastMoeError, ConfigError, DataError, NumericError
from .config_loader import ConfigBundle, load_config, config_hash
from .metrics_tracker import MetricsTracker, non_finite_fields
from .run_manifest import RunManifest, build_identifier
from .text_utils import slugify, iter_records, parse_number

__all__ = [
    'RastMoeError', 'ConfigError', 'DataError', 'NumericError',
    'ConfigBundle', 'load_config', 'config_hash',
    'MetricsTracker', 'non_finite_fields',
    'RunManifest', 'build_identifier',
    'slugify', 'iter_records', 'parse_number',
]
