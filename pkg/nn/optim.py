# nn/optim.py - ParameterSet, Adam con clipping globale e checkpoint npz
import json
import os
from pathlib import Path
from typing import Dict, Iterator, Mapping, Optional, Tuple

import numpy as np

from config_rastmoe import CHECKPOINT_VERSION
from nn.tensor import Tensor
from utils.errors import ContractError, DataError, NumericError, ShapeError


class ParameterSet:
    """
    Tensori con nome (requires_grad) più lo stato di Adam per parametro.
    Le shape sono congelate alla registrazione.
    """

    def __init__(self):
        self._params: Dict[str, Tensor] = {}
        self.m: Dict[str, np.ndarray] = {}
        self.v: Dict[str, np.ndarray] = {}
        self.steps: Dict[str, int] = {}

    def add(self, name: str, data) -> Tensor:
        if name in self._params:
            raise ContractError(f"duplicate parameter name {name!r}")
        param = Tensor(np.array(data, dtype=np.float64), requires_grad=True)
        self._params[name] = param
        self.m[name] = np.zeros_like(param.data)
        self.v[name] = np.zeros_like(param.data)
        self.steps[name] = 0
        return param

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    @property
    def num_parameters(self) -> int:
        return int(sum(p.size for p in self._params.values()))

    def zero_grad(self):
        for param in self._params.values():
            param.grad = None

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self._params.items()}

    def load_state_dict(self, state: Mapping[str, np.ndarray], strict: bool = True):
        if strict:
            missing = set(self._params) - set(state)
            extra = set(state) - set(self._params)
            if missing or extra:
                raise ContractError(f"parameter names differ: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for name, values in state.items():
            if name not in self._params:
                continue
            values = np.asarray(values, dtype=np.float64)
            if values.shape != self._params[name].shape:
                raise ShapeError(f"parameter {name}: checkpoint shape {values.shape} vs model {self._params[name].shape}")
            self._params[name].data = values.copy()

    def optimizer_state(self) -> Dict[str, Dict]:
        return {'m': {k: v.copy() for k, v in self.m.items()},
                'v': {k: v.copy() for k, v in self.v.items()},
                'steps': dict(self.steps)}

    def load_optimizer_state(self, state: Mapping):
        for name in self._params:
            if name in state.get('m', {}):
                self.m[name] = np.asarray(state['m'][name], dtype=np.float64).copy()
                self.v[name] = np.asarray(state['v'][name], dtype=np.float64).copy()
                self.steps[name] = int(state['steps'][name])


def clip_grad_norm(params: ParameterSet, max_norm: Optional[float]) -> Tuple[float, float]:
    """
    Clipping sulla norma globale dei gradienti presenti.

    Returns:
        (norma prima del clip, fattore di scala applicato)
    """
    grads = [p.grad for p in params._params.values() if p.grad is not None]
    total = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads))) if grads else 0.0
    scale = 1.0
    if max_norm is not None and total > max_norm:
        scale = max_norm / total
        for param in params._params.values():
            if param.grad is not None:
                param.grad = param.grad * scale
    return total, scale


def adam_step(params: ParameterSet, lr: float = 2e-4, betas: Tuple[float, float] = (0.9, 0.999),
              eps: float = 1e-8, max_grad_norm: Optional[float] = 0.4) -> Dict[str, float]:
    """
    Un passo Adam dopo clipping globale. I parametri senza gradiente (esperti
    non selezionati) non toccano né valori né momenti. I gradienti vengono azzerati.

    Returns:
        Dict con 'grad_norm' e 'clip_scale'
    """
    for name, param in params.items():
        if param.grad is not None and not np.all(np.isfinite(param.grad)):
            raise NumericError(f"non-finite gradient in parameter {name}")

    grad_norm, scale = clip_grad_norm(params, max_grad_norm)
    beta1, beta2 = betas
    for name, param in params.items():
        g = param.grad
        if g is None:
            continue
        params.steps[name] += 1
        t = params.steps[name]
        params.m[name] = beta1 * params.m[name] + (1 - beta1) * g
        params.v[name] = beta2 * params.v[name] + (1 - beta2) * g * g
        m_hat = params.m[name] / (1 - beta1 ** t)
        v_hat = params.v[name] / (1 - beta2 ** t)
        param.data = param.data - lr * m_hat / (np.sqrt(v_hat) + eps)
    params.zero_grad()
    return {'grad_norm': grad_norm, 'clip_scale': scale}


# ==================== CHECKPOINT ====================

def save_checkpoint(path, params: ParameterSet, arrays: Optional[Mapping[str, np.ndarray]] = None,
                    meta: Optional[Mapping] = None) -> Path:
    """
    Salva parametri, momenti Adam, array extra e metadati JSON in un .npz.
    Scrittura atomica: file temporaneo poi rename.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {'__version__': np.array(CHECKPOINT_VERSION),
               '__meta__': np.array(json.dumps(meta or {}, sort_keys=True))}
    for name, param in params.items():
        payload[f"param/{name}"] = param.data
        payload[f"adam_m/{name}"] = params.m[name]
        payload[f"adam_v/{name}"] = params.v[name]
        payload[f"adam_t/{name}"] = np.array(params.steps[name])
    for name, values in (arrays or {}).items():
        payload[f"extra/{name}"] = np.asarray(values)

    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, 'wb') as handle:
        np.savez(handle, **payload)
    os.replace(tmp, path)
    return path


def load_checkpoint(path) -> Dict:
    """
    Returns:
        Dict con 'params', 'optimizer', 'arrays', 'meta', 'version'
    """
    try:
        with np.load(path, allow_pickle=False) as data:
            contents = {key: data[key] for key in data.files}
    except (OSError, ValueError) as e:
        raise DataError(f"cannot read checkpoint {path}: {e}")
    if '__version__' not in contents:
        raise DataError(f"{path}: missing checkpoint version header")
    version = int(contents['__version__'])
    if version != CHECKPOINT_VERSION:
        raise DataError(f"{path}: checkpoint version {version}, expected {CHECKPOINT_VERSION}")

    result = {'params': {}, 'optimizer': {'m': {}, 'v': {}, 'steps': {}}, 'arrays': {},
              'meta': json.loads(str(contents['__meta__'])), 'version': version}
    for key, values in contents.items():
        prefix, _, name = key.partition('/')
        if prefix == 'param':
            result['params'][name] = values
        elif prefix == 'adam_m':
            result['optimizer']['m'][name] = values
        elif prefix == 'adam_v':
            result['optimizer']['v'][name] = values
        elif prefix == 'adam_t':
            result['optimizer']['steps'][name] = int(values)
        elif prefix == 'extra':
            result['arrays'][name] = values
    return result
