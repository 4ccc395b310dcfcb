# nn/gradcheck.py - Confronto gradienti autodiff vs differenze finite centrali
from typing import Callable, Dict, Sequence

import numpy as np

from nn.tensor import Tensor, backward


def numeric_grad(fn: Callable[[], Tensor], target: Tensor, step: float = 1e-6) -> np.ndarray:
    """Differenze centrali su ogni elemento di target (modificato in place e ripristinato)"""
    grad = np.zeros_like(target.data)
    flat = target.data.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + step
        plus = fn().item()
        flat[i] = original - step
        minus = fn().item()
        flat[i] = original
        out[i] = (plus - minus) / (2 * step)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-4) -> float:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0


def gradcheck(fn: Callable[[], Tensor], inputs: Sequence[Tensor], step: float = 1e-6,
              floor: float = 1e-4) -> Dict[int, float]:
    """
    Esegue fn (loss scalare) con backward e confronta ogni input con le differenze finite.

    Args:
        fn: Ricostruisce il grafo e restituisce la loss scalare
        inputs: Tensori requires_grad da verificare
        step: Passo delle differenze centrali
        floor: Denominatore minimo dell'errore relativo

    Returns:
        Dict indice input → errore relativo massimo
    """
    for tensor in inputs:
        tensor.grad = None
    backward(fn())
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in inputs]
    for tensor in inputs:
        tensor.grad = None
    return {i: relative_error(analytic[i], numeric_grad(fn, t, step), floor) for i, t in enumerate(inputs)}
