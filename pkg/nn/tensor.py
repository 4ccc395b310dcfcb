# nn/tensor.py - Tensor denso float64 con autodiff reverse-mode
import math
import threading
from contextlib import contextmanager
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np

from utils.errors import ContractError, ShapeError

LAYERNORM_EPS = 1e-10
GELU_COEF = math.sqrt(2.0 / math.pi)

_state = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_state, 'grad_enabled', True)


@contextmanager
def no_grad():
    """Disabilita la registrazione sul tape nel thread corrente (inferenza in rollout)"""
    previous = is_grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = previous


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(a: 'Tensor', b: 'Tensor', op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: cannot broadcast shapes {a.shape} and {b.shape}")


Operand = Union['Tensor', float, int, np.ndarray]


class Tensor:
    """
    Array numpy float64 con gradiente opzionale.

    Ogni operazione su input che richiedono gradiente registra i genitori e
    una funzione backward che restituisce i gradienti per ciascun genitore.
    """

    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self._parents: Tuple['Tensor', ...] = ()
        self._backward: Optional[Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]] = None
        self._op = ''

    # ---------- basics ----------

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.item())

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        flag = ', requires_grad=True' if self.requires_grad else ''
        return f"Tensor(shape={self.shape}{flag}, op={self._op or 'leaf'})"

    def __len__(self):
        return len(self.data)

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def zero_grad(self):
        self.grad = None

    def detach(self) -> 'Tensor':
        return Tensor(self.data)

    def backward(self):
        backward(self)

    # ---------- graph recording ----------

    @staticmethod
    def _result(data, parents: Sequence['Tensor'], op: str, fn) -> 'Tensor':
        needs_grad = is_grad_enabled() and any(p.requires_grad for p in parents)
        out = Tensor(data, requires_grad=needs_grad)
        if needs_grad:
            out._parents = tuple(parents)
            out._backward = fn
            out._op = op
        return out

    # ---------- elementwise ----------

    def __add__(self, other: Operand) -> 'Tensor':
        other = as_tensor(other)
        _broadcast_shape(self, other, 'add')
        a_shape, b_shape = self.shape, other.shape
        return Tensor._result(self.data + other.data, (self, other), 'add',
                              lambda g: (_unbroadcast(g, a_shape), _unbroadcast(g, b_shape)))

    __radd__ = __add__

    def __neg__(self) -> 'Tensor':
        return Tensor._result(-self.data, (self,), 'neg', lambda g: (-g,))

    def __sub__(self, other: Operand) -> 'Tensor':
        other = as_tensor(other)
        _broadcast_shape(self, other, 'sub')
        a_shape, b_shape = self.shape, other.shape
        return Tensor._result(self.data - other.data, (self, other), 'sub',
                              lambda g: (_unbroadcast(g, a_shape), _unbroadcast(-g, b_shape)))

    def __rsub__(self, other: Operand) -> 'Tensor':
        return as_tensor(other) - self

    def __mul__(self, other: Operand) -> 'Tensor':
        other = as_tensor(other)
        _broadcast_shape(self, other, 'mul')
        a, b = self.data, other.data
        return Tensor._result(a * b, (self, other), 'mul',
                              lambda g: (_unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)))

    __rmul__ = __mul__

    def __truediv__(self, other: Operand) -> 'Tensor':
        other = as_tensor(other)
        _broadcast_shape(self, other, 'div')
        a, b = self.data, other.data
        return Tensor._result(a / b, (self, other), 'div',
                              lambda g: (_unbroadcast(g / b, a.shape), _unbroadcast(-g * a / (b * b), b.shape)))

    def __rtruediv__(self, other: Operand) -> 'Tensor':
        return as_tensor(other) / self

    def __pow__(self, exponent: float) -> 'Tensor':
        if isinstance(exponent, Tensor):
            raise ContractError("pow supports scalar exponents only")
        a = self.data
        return Tensor._result(a ** exponent, (self,), 'pow',
                              lambda g: (g * exponent * a ** (exponent - 1),))

    def __matmul__(self, other: 'Tensor') -> 'Tensor':
        return matmul(self, other)

    def __getitem__(self, key) -> 'Tensor':
        shape = self.shape

        def grad_fn(g):
            full = np.zeros(shape)
            np.add.at(full, key, g)
            return (full,)
        return Tensor._result(self.data[key], (self,), 'getitem', grad_fn)

    # ---------- unary ----------

    def exp(self) -> 'Tensor':
        out = np.exp(self.data)
        return Tensor._result(out, (self,), 'exp', lambda g: (g * out,))

    def log(self) -> 'Tensor':
        a = self.data
        return Tensor._result(np.log(a), (self,), 'log', lambda g: (g / a,))

    def tanh(self) -> 'Tensor':
        out = np.tanh(self.data)
        return Tensor._result(out, (self,), 'tanh', lambda g: (g * (1.0 - out * out),))

    def sigmoid(self) -> 'Tensor':
        out = 0.5 * (1.0 + np.tanh(0.5 * self.data))
        return Tensor._result(out, (self,), 'sigmoid', lambda g: (g * out * (1.0 - out),))

    def softplus(self) -> 'Tensor':
        a = self.data
        return Tensor._result(np.logaddexp(0.0, a), (self,), 'softplus',
                              lambda g: (g * 0.5 * (1.0 + np.tanh(0.5 * a)),))

    def gelu(self) -> 'Tensor':
        """GELU con approssimazione tanh"""
        a = self.data
        inner = GELU_COEF * (a + 0.044715 * a ** 3)
        t = np.tanh(inner)
        out = 0.5 * a * (1.0 + t)

        def grad_fn(g):
            d_inner = GELU_COEF * (1.0 + 3 * 0.044715 * a ** 2)
            return (g * (0.5 * (1.0 + t) + 0.5 * a * (1.0 - t * t) * d_inner),)
        return Tensor._result(out, (self,), 'gelu', grad_fn)

    def clip(self, low: float, high: float) -> 'Tensor':
        a = self.data
        inside = (a >= low) & (a <= high)
        return Tensor._result(np.clip(a, low, high), (self,), 'clip', lambda g: (g * inside,))

    # ---------- reductions / shape ----------

    def sum(self, axis=None, keepdims: bool = False) -> 'Tensor':
        shape = self.shape

        def grad_fn(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape).copy(),)
        return Tensor._result(self.data.sum(axis=axis, keepdims=keepdims), (self,), 'sum', grad_fn)

    def mean(self, axis=None, keepdims: bool = False) -> 'Tensor':
        count = self.size if axis is None else np.prod([self.shape[a] for a in np.atleast_1d(axis)])
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    def reshape(self, *shape) -> 'Tensor':
        original = self.shape
        return Tensor._result(self.data.reshape(*shape), (self,), 'reshape', lambda g: (g.reshape(original),))

    def transpose(self, *axes) -> 'Tensor':
        axes = axes or tuple(reversed(range(self.ndim)))
        inverse = np.argsort(axes)
        return Tensor._result(self.data.transpose(axes), (self,), 'transpose', lambda g: (g.transpose(inverse),))

    @property
    def T(self) -> 'Tensor':
        return self.transpose()

    def softmax(self, axis: int = -1) -> 'Tensor':
        shifted = self.data - self.data.max(axis=axis, keepdims=True)
        e = np.exp(shifted)
        out = e / e.sum(axis=axis, keepdims=True)
        return Tensor._result(out, (self,), 'softmax',
                              lambda g: (out * (g - (g * out).sum(axis=axis, keepdims=True)),))


# ==================== FUNCTIONAL OPS ====================

def as_tensor(value: Operand) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Prodotto matriciale con batch broadcasting sulle dimensioni iniziali (ndim ≥ 2)"""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs operands with ≥ 2 dims, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dimensions differ for shapes {a.shape} and {b.shape}")
    x, y = a.data, b.data

    def grad_fn(g):
        return (_unbroadcast(g @ np.swapaxes(y, -1, -2), x.shape),
                _unbroadcast(np.swapaxes(x, -1, -2) @ g, y.shape))
    return Tensor._result(x @ y, (a, b), 'matmul', grad_fn)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError(f"concat: incompatible shapes {[t.shape for t in tensors]}")
    splits = np.cumsum(sizes)[:-1]
    return Tensor._result(data, tensors, 'concat', lambda g: tuple(np.split(g, splits, axis=axis)))


def take_rows(x: Tensor, indices: np.ndarray) -> Tensor:
    """Gather di righe sull'asse 0 (indici ripetuti sommano il gradiente)"""
    return x[np.asarray(indices, dtype=np.int64)]


def take_along(x: Tensor, indices: np.ndarray) -> Tensor:
    """x[b, indices[b, k]] per una matrice (B, E) e indici (B, K)"""
    indices = np.asarray(indices, dtype=np.int64)
    if x.ndim != 2 or indices.ndim != 2 or indices.shape[0] != x.shape[0]:
        raise ShapeError(f"take_along: shapes {x.shape} and {indices.shape} are incompatible")
    rows = np.arange(x.shape[0])[:, None]
    return x[rows, indices]


def scatter_rows(values: Tensor, rows: np.ndarray, n_rows: int) -> Tensor:
    """Matrice (n_rows, ...) nulla con values nelle righe indicate (righe distinte)"""
    rows = np.asarray(rows, dtype=np.int64)
    if len(np.unique(rows)) != len(rows):
        raise ContractError("scatter_rows needs distinct row indices")
    out = np.zeros((n_rows,) + values.shape[1:])
    out[rows] = values.data
    return Tensor._result(out, (values,), 'scatter_rows', lambda g: (g[rows],))


def where(mask: np.ndarray, a: Operand, b: Operand) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    mask = np.asarray(mask, dtype=bool)
    return Tensor._result(np.where(mask, a.data, b.data), (a, b), 'where',
                          lambda g: (_unbroadcast(np.where(mask, g, 0.0), a.shape),
                                     _unbroadcast(np.where(mask, 0.0, g), b.shape)))


def minimum(a: Operand, b: Operand) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return where(a.data <= b.data, a, b)


def maximum(a: Operand, b: Operand) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return where(a.data >= b.data, a, b)


def layernorm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = LAYERNORM_EPS) -> Tensor:
    """Normalizzazione sull'ultimo asse con scala e shift appresi"""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if gamma.shape != (x.shape[-1],) or beta.shape != (x.shape[-1],):
        raise ShapeError(f"layernorm: gamma/beta {gamma.shape}/{beta.shape} do not match input {x.shape}")
    a = x.data
    mu = a.mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(a.var(axis=-1, keepdims=True) + eps)
    x_hat = (a - mu) * inv_std
    out = x_hat * gamma.data + beta.data

    def grad_fn(g):
        g_hat = g * gamma.data
        g_x = inv_std * (g_hat - g_hat.mean(axis=-1, keepdims=True)
                         - x_hat * (g_hat * x_hat).mean(axis=-1, keepdims=True))
        return (g_x, _unbroadcast(g * x_hat, gamma.shape), _unbroadcast(g, beta.shape))
    return Tensor._result(out, (x, gamma, beta), 'layernorm', grad_fn)


# ==================== BACKWARD ====================

class Tape:
    """Nodi del grafo in ordine topologico (genitori prima dei figli)."""

    def __init__(self, nodes: List[Tensor]):
        self.nodes = nodes
        self.consumed = False

    @classmethod
    def from_loss(cls, loss: Tensor) -> 'Tape':
        order, visited = [], set()
        stack = [(loss, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in visited:
                    stack.append((parent, False))
        return cls(order)

    def backward(self, loss: Tensor):
        """Propaga d(loss)/d(·) sommando nei .grad delle foglie; ogni nodo è visitato una volta"""
        if self.consumed:
            raise ContractError("tape already consumed by a previous backward pass")
        if loss.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        if not loss.requires_grad:
            raise ContractError("backward on a graph without gradient-requiring tensors")

        grads = {id(loss): np.ones_like(loss.data)}
        for node in reversed(self.nodes):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.is_leaf:
                if node.requires_grad:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, parent_grad in zip(node._parents, node._backward(g)):
                if parent_grad is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = parent_grad if key not in grads else grads[key] + parent_grad

        for node in self.nodes:
            if not node.is_leaf:
                node._parents, node._backward = (), None
        self.consumed = True


def backward(loss: Tensor) -> Tape:
    tape = Tape.from_loss(loss)
    tape.backward(loss)
    return tape
