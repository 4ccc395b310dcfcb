# tests/test_nn.py
import numpy as np
import pytest

from nn import (
    ParameterSet, Tensor, adam_step, backward, clip_grad_norm, concat, gradcheck, layernorm,
    load_checkpoint, matmul, maximum, minimum, no_grad, save_checkpoint, scatter_rows, take_along,
    take_rows, tensor, where
)
from utils.errors import ContractError, DataError, NumericError, ShapeError

TOL = 1e-4


def leaf(rng, *shape, positive=False):
    data = rng.uniform(0.5, 2.0, size=shape) if positive else rng.normal(size=shape)
    return tensor(data, requires_grad=True)


def weighted(out: Tensor, seed: int = 99) -> Tensor:
    # pesi casuali: evita loss costanti come sum(softmax)
    weights = np.random.default_rng(seed).normal(size=out.shape)
    return (out * weights).sum()


# ==================== FORWARD ====================

def test_fixed_points():
    assert np.allclose(tensor(np.zeros(4)).softmax().data, 0.25)
    assert tensor(0.0).gelu().item() == 0.0
    assert tensor(0.0).tanh().item() == 0.0
    assert tensor(0.0).sigmoid().item() == 0.5
    x = tensor(np.random.default_rng(0).normal(size=(3, 4)))
    assert np.array_equal(matmul(x, tensor(np.eye(4))).data, x.data)


def test_softmax_and_layernorm_normalisation():
    rng = np.random.default_rng(1)
    rows = tensor(rng.normal(scale=5.0, size=(6, 7))).softmax(axis=-1).data
    assert np.all(np.abs(rows.sum(axis=-1) - 1.0) < 1e-12)

    out = layernorm(tensor(rng.normal(3.0, 2.0, size=(5, 8))), tensor(np.ones(8)), tensor(np.zeros(8))).data
    assert np.all(np.abs(out.mean(axis=-1)) < 1e-10)
    assert np.all(np.abs(out.var(axis=-1) - 1.0) < 1e-8)


def test_shape_errors_name_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(4, 5\)"):
        matmul(tensor(np.zeros((2, 3))), tensor(np.zeros((4, 5))))
    with pytest.raises(ShapeError):
        tensor(np.zeros(3)) + tensor(np.zeros(4))
    with pytest.raises(ShapeError):
        concat([tensor(np.zeros((2, 3))), tensor(np.zeros((3, 3)))], axis=-1)
    with pytest.raises(ShapeError):
        layernorm(tensor(np.zeros((2, 3))), tensor(np.ones(4)), tensor(np.zeros(4)))


def test_forward_is_deterministic():
    def run():
        rng = np.random.default_rng(5)
        x, w = tensor(rng.normal(size=(4, 6))), tensor(rng.normal(size=(6, 3)))
        return matmul(x, w).gelu().softmax(axis=-1).data
    assert np.array_equal(run(), run())


# ==================== BACKWARD ====================

def test_linear_and_quadratic_gradients():
    x = tensor([1.0, 2.0, 3.0], requires_grad=True)
    backward(x.sum())
    assert x.grad.tolist() == [1.0, 1.0, 1.0]

    y = tensor([1.0, 2.0], requires_grad=True)
    backward((y * y).sum())
    assert y.grad.tolist() == [2.0, 4.0]


def test_gradients_accumulate_until_zeroed():
    x = tensor([1.0, -1.0], requires_grad=True)
    backward((x * 3.0).sum())
    backward((x * 3.0).sum())
    assert x.grad.tolist() == [6.0, 6.0]
    x.zero_grad()
    assert x.grad is None


def test_shared_node_visited_once():
    x = tensor([2.0], requires_grad=True)
    h = x * x
    backward((h + h * 3.0).sum())
    assert x.grad.tolist() == [16.0]


def test_backward_contract_errors():
    x = tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(ContractError):
        backward(x * 2.0)
    with pytest.raises(ContractError):
        backward(tensor([1.0]).sum())

    loss = (x * 2.0).sum()
    tape = backward(loss)
    with pytest.raises(ContractError, match="consumed"):
        tape.backward(loss)


def test_no_grad_records_nothing():
    x = tensor([1.0], requires_grad=True)
    with no_grad():
        y = x * 2.0
    assert not y.requires_grad and y.is_leaf
    assert (x * 2.0).requires_grad


def test_mlp_gradcheck_strict():
    rng = np.random.default_rng(0)
    x = tensor(rng.normal(size=(4, 5)))
    weights = [leaf(rng, 5, 6), leaf(rng, 6), leaf(rng, 6, 6), leaf(rng, 6), leaf(rng, 6, 1), leaf(rng, 1)]

    def loss():
        w1, b1, w2, b2, w3, b3 = weights
        h = (matmul(x, w1) + b1).tanh()
        h = (matmul(h, w2) + b2).tanh()
        return (matmul(h, w3) + b3).sum() * 0.1

    errors = gradcheck(loss, weights)
    assert max(errors.values()) < 1e-5


OPS = {
    'add_broadcast': ((3, 4), (4,), lambda a, b: a + b),
    'sub': ((3, 4), (3, 4), lambda a, b: a - b),
    'mul_broadcast': ((3, 4), (3, 1), lambda a, b: a * b),
    'div': ((3, 4), (3, 4), lambda a, b: a / (b * b + 1.0)),
    'matmul_batched': ((2, 3, 4), (4, 5), matmul),
    'concat': ((3, 2), (3, 4), lambda a, b: concat([a, b], axis=-1)),
    'minimum': ((3, 4), (3, 4), minimum),
    'maximum': ((3, 4), (3, 4), maximum),
}


@pytest.mark.parametrize('name', sorted(OPS))
def test_binary_op_gradcheck(name):
    a_shape, b_shape, fn = OPS[name]
    for seed in range(5):
        rng = np.random.default_rng(seed)
        a, b = leaf(rng, *a_shape), leaf(rng, *b_shape)
        errors = gradcheck(lambda: weighted(fn(a, b)), [a, b])
        assert max(errors.values()) < TOL, (name, seed, errors)


UNARY = {
    'exp': lambda x: x.exp(),
    'tanh': lambda x: x.tanh(),
    'sigmoid': lambda x: x.sigmoid(),
    'softplus': lambda x: x.softplus(),
    'gelu': lambda x: x.gelu(),
    'softmax': lambda x: x.softmax(axis=-1),
    'softmax_axis0': lambda x: x.softmax(axis=0),
    'pow': lambda x: x ** 3,
    'sum_axis': lambda x: x.sum(axis=0),
    'mean_keepdims': lambda x: x.mean(axis=-1, keepdims=True),
    'reshape': lambda x: x.reshape(4, 3),
    'transpose': lambda x: x.T,
    'getitem': lambda x: x[1:, ::2],
    'take_rows_repeated': lambda x: take_rows(x, np.array([0, 2, 0])),
    'take_along': lambda x: take_along(x, np.array([[0, 3], [1, 1], [2, 0]])),
    'scatter_rows': lambda x: scatter_rows(x, np.array([4, 0, 2]), 6),
    'where': lambda x: where(np.arange(12).reshape(3, 4) % 2 == 0, x, x * 2.0),
}


@pytest.mark.parametrize('name', sorted(UNARY))
def test_unary_op_gradcheck(name):
    for seed in range(5):
        rng = np.random.default_rng(seed)
        x = leaf(rng, 3, 4)
        errors = gradcheck(lambda: weighted(UNARY[name](x)), [x])
        assert errors[0] < TOL, (name, seed, errors)


def test_log_and_clip_gradcheck():
    rng = np.random.default_rng(3)
    x = leaf(rng, 3, 4, positive=True)
    assert gradcheck(lambda: weighted(x.log()), [x])[0] < TOL
    # nessun valore sui bordi del clip
    y = tensor([[0.3, 0.7, 1.2, 1.9], [0.1, 0.9, 1.7, 1.1]], requires_grad=True)
    assert gradcheck(lambda: weighted(y.clip(0.5, 1.5)), [y])[0] < TOL


def test_layernorm_gradcheck():
    for seed in range(5):
        rng = np.random.default_rng(seed)
        x, gamma, beta = leaf(rng, 3, 6), leaf(rng, 6), leaf(rng, 6)
        errors = gradcheck(lambda: weighted(layernorm(x, gamma, beta)), [x, gamma, beta])
        assert max(errors.values()) < TOL


# ==================== OPTIMIZER ====================

def test_zero_gradients_leave_parameters():
    params = ParameterSet()
    w = params.add('w', [1.0, -2.0])
    w.grad = np.zeros(2)
    adam_step(params)
    assert w.data.tolist() == [1.0, -2.0]
    assert w.grad is None


def test_clip_scales_global_norm():
    params = ParameterSet()
    a, b = params.add('a', [0.0, 0.0]), params.add('b', [0.0])
    a.grad, b.grad = np.array([0.0, 3.2]), np.array([2.4])
    norm, scale = clip_grad_norm(params, 0.4)
    assert norm == pytest.approx(4.0)
    assert scale == pytest.approx(0.1)
    assert a.grad.tolist() == pytest.approx([0.0, 0.32])
    assert b.grad.tolist() == pytest.approx([0.24])


def test_parameters_without_gradient_are_untouched():
    params = ParameterSet()
    used, idle = params.add('used', [1.0]), params.add('idle', [5.0])
    for _ in range(3):
        used.grad = np.array([1.0])
        adam_step(params, lr=0.1)
    assert idle.data.tolist() == [5.0]
    assert params.steps == {'used': 3, 'idle': 0}
    assert params.m['idle'].tolist() == [0.0]
    assert used.data[0] < 1.0


def test_non_finite_gradient_named():
    params = ParameterSet()
    w = params.add('router/w', [1.0])
    w.grad = np.array([np.nan])
    with pytest.raises(NumericError, match="router/w"):
        adam_step(params)


def test_adam_decreases_quadratic():
    params = ParameterSet()
    x = params.add('x', [0.0])
    losses = []
    for _ in range(200):
        loss = ((x - 3.0) * (x - 3.0)).sum()
        losses.append(loss.item())
        backward(loss)
        adam_step(params, lr=0.01, max_grad_norm=None)
    assert all(later < earlier for earlier, later in zip(losses[1:], losses[2:]))
    assert losses[-1] < losses[0]


def test_duplicate_parameter_rejected():
    params = ParameterSet()
    params.add('w', [1.0])
    with pytest.raises(ContractError):
        params.add('w', [2.0])


# ==================== CHECKPOINT ====================

def test_checkpoint_round_trip(tmp_path):
    params = ParameterSet()
    w = params.add('w', np.arange(6.0).reshape(2, 3))
    w.grad = np.ones((2, 3))
    adam_step(params)
    path = save_checkpoint(tmp_path / "ckpt.npz", params, {'lambda': np.array(0.7)}, {'step': 10})
    assert not (tmp_path / "ckpt.npz.tmp").exists()

    loaded = load_checkpoint(path)
    assert np.array_equal(loaded['params']['w'], w.data)
    assert loaded['optimizer']['steps'] == {'w': 1}
    assert np.array_equal(loaded['optimizer']['m']['w'], params.m['w'])
    assert float(loaded['arrays']['lambda']) == 0.7
    assert loaded['meta'] == {'step': 10}

    fresh = ParameterSet()
    fresh.add('w', np.zeros((2, 3)))
    fresh.load_state_dict(loaded['params'])
    fresh.load_optimizer_state(loaded['optimizer'])
    assert np.array_equal(fresh['w'].data, w.data)
    assert fresh.steps['w'] == 1


def test_checkpoint_shape_and_version_checks(tmp_path):
    params = ParameterSet()
    params.add('w', np.zeros(3))
    with pytest.raises(ShapeError):
        params.load_state_dict({'w': np.zeros(4)})
    with pytest.raises(ContractError):
        params.load_state_dict({'v': np.zeros(3)})

    bad = tmp_path / "old.npz"
    np.savez(bad, __version__=np.array(-1), __meta__=np.array("{}"))
    with pytest.raises(DataError, match="version"):
        load_checkpoint(bad)
    with pytest.raises(DataError):
        load_checkpoint(tmp_path / "missing.npz")
