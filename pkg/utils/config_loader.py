# utils/config_loader.py - Config di training JSON + override da ambiente + hash canonico
import copy
import hashlib
import json
import os
from dataclasses import dataclass, field
from typing import Any, Dict, Mapping, Optional

from config_rastmoe import ENV_PREFIX
from utils.errors import ConfigError

CONFIG_BLOCKS = ('scenario', 'encoder', 'ppo', 'grpo', 'reward', 'train', 'eval')


def _jsonable(value):
    if hasattr(value, 'tolist'):
        return value.tolist()
    if isinstance(value, (set, frozenset)):
        return sorted(value)
    raise TypeError(f"{type(value).__name__} is not JSON serializable")


def canonical_json(data: Mapping) -> str:
    return json.dumps(data, sort_keys=True, separators=(',', ':'), default=_jsonable)


def config_hash(data: Mapping) -> str:
    """SHA-256 del JSON canonico (chiavi ordinate)"""
    return hashlib.sha256(canonical_json(data).encode('utf-8')).hexdigest()


def parse_env_value(raw: str) -> Any:
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def apply_env_overrides(data: Dict, environ: Optional[Mapping[str, str]] = None) -> Dict[str, Any]:
    """
    RASTMOE_<BLOCK>__<KEY>[__<SUBKEY>...]=valore (JSON o testo) sovrascrive data[block][key]...

    Returns:
        Dict chiave puntata → valore applicato
    """
    environ = os.environ if environ is None else environ
    applied = {}
    for name in sorted(environ):
        if not name.startswith(ENV_PREFIX) or '__' not in name:
            continue
        path = [part.lower() for part in name[len(ENV_PREFIX):].split('__')]
        if path[0] not in CONFIG_BLOCKS or len(path) < 2 or not all(path):
            print(f"⚠️ Override ignorato (blocco sconosciuto): {name}")
            continue
        target = data
        for part in path[:-1]:
            node = target.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"{name}: {'.'.join(path)} crosses a non-mapping value")
            target = node
        target[path[-1]] = parse_env_value(environ[name])
        applied['.'.join(path)] = target[path[-1]]
    return applied


@dataclass
class ConfigBundle:
    """Config risolto (file + override) con i blocchi di CONFIG_BLOCKS."""
    data: Dict[str, Any]
    path: Optional[str] = None
    overrides: Dict[str, Any] = field(default_factory=dict)

    @property
    def base_dir(self) -> Optional[str]:
        return os.path.dirname(os.path.abspath(self.path)) if self.path else None

    @property
    def hash(self) -> str:
        return config_hash(self.data)

    def block(self, name: str) -> Dict[str, Any]:
        if name not in CONFIG_BLOCKS:
            raise ConfigError(f"unknown config block {name!r}")
        return copy.deepcopy(self.data.get(name, {}))

    def with_overrides(self, **blocks: Mapping) -> 'ConfigBundle':
        """Copia con chiavi sovrascritte per blocco (usata dagli sweep)"""
        data = copy.deepcopy(self.data)
        for name, values in blocks.items():
            if name not in CONFIG_BLOCKS:
                raise ConfigError(f"unknown config block {name!r}")
            data.setdefault(name, {}).update(copy.deepcopy(dict(values)))
        return ConfigBundle(data, self.path, dict(self.overrides))


def load_config(path: Optional[str] = None, environ: Optional[Mapping[str, str]] = None) -> ConfigBundle:
    """
    Carica il training config JSON (o un config vuoto) e applica gli override d'ambiente
    prima del calcolo dell'hash.

    Args:
        path: File JSON con blocchi scenario/encoder/ppo/grpo/reward/train/eval
        environ: Mappa variabili (default os.environ)

    Returns:
        ConfigBundle risolto
    """
    data: Dict[str, Any] = {}
    if path:
        try:
            with open(path, 'r', encoding='utf-8') as handle:
                data = json.load(handle)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}")
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON ({e})")
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be an object")
    unknown = set(data) - set(CONFIG_BLOCKS)
    if unknown:
        raise ConfigError(f"unknown config blocks: {sorted(unknown)}")
    for name, block in data.items():
        if not isinstance(block, dict):
            raise ConfigError(f"config block {name!r} must be an object")

    applied = apply_env_overrides(data, environ)
    if applied:
        print(f"🔧 Override da ambiente: {', '.join(sorted(applied))}")
    return ConfigBundle(data, path, applied)
