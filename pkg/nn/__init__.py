# nn/__init__.py
from .tensor import (
    Tensor, Tape, backward, no_grad, is_grad_enabled, tensor, as_tensor,
    matmul, concat, take_rows, take_along, scatter_rows, where, minimum, maximum, layernorm
)
from .optim import ParameterSet, adam_step, clip_grad_norm, save_checkpoint, load_checkpoint
from .gradcheck import gradcheck, numeric_grad, relative_error

__all__ = [
    'Tensor', 'Tape', 'backward', 'no_grad', 'is_grad_enabled', 'tensor', 'as_tensor',
    'matmul', 'concat', 'take_rows', 'take_along', 'scatter_rows', 'where', 'minimum', 'maximum', 'layernorm',
    'ParameterSet', 'adam_step', 'clip_grad_norm', 'save_checkpoint', 'load_checkpoint',
    'gradcheck', 'numeric_grad', 'relative_error',
]
