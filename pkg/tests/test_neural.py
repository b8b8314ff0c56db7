import numpy as np
import pytest

from multisem.errors import ConfigurationError, ContractError
from multisem.neural import (INFER, SCALAR_SIGMOID, TRAIN, VECTOR, Adam, MlpParams, adam_step,
                             dropout, finite_diff_check, init_mlp, mlp_backward, mlp_forward)
from multisem.numeric import Rng, sigmoid


def unit_net():
    # 2 -> 2 -> 1, every weight 1, biases (0, -1) and 0.5
    return MlpParams(np.ones((2, 2)), np.array([0.0, -1.0]), np.ones((1, 2)), np.array([0.5]))


def test_init_biases_zero_and_reproducible():
    a = init_mlp(Rng(3), 5, 7, 2)
    b = init_mlp(Rng(3), 5, 7, 2)
    assert not a.b1.any() and not a.b2.any()
    for name in a.tensors():
        assert a.tensors()[name].tobytes() == b.tensors()[name].tobytes()


def test_init_weight_scale():
    p = init_mlp(Rng(8), 100, 100, 1)
    assert p.W1.size == 10**4
    assert abs(p.W1.std() / 0.02 - 1.0) < 0.10


@pytest.mark.parametrize("shapes", [
    ((4, 3), (5,), (2, 4), (2,)),
    ((4, 3), (4,), (2, 5), (2,)),
    ((4, 3), (4,), (2, 4), (3,)),
])
def test_mlp_shape_invariants(shapes):
    with pytest.raises(ConfigurationError):
        MlpParams(*(np.zeros(s) for s in shapes))


def test_scalar_sigmoid_needs_single_output():
    with pytest.raises(ConfigurationError):
        MlpParams(np.zeros((3, 2)), np.zeros(3), np.zeros((2, 3)), np.zeros(2), output_kind=SCALAR_SIGMOID)


def test_forward_zero_weights_zero_output():
    p = MlpParams(np.zeros((3, 2)), np.zeros(3), np.zeros((4, 3)), np.zeros(4))
    out, _ = mlp_forward(p, np.zeros(2))
    np.testing.assert_array_equal(out, np.zeros(4))


def test_forward_hand_computed():
    p = unit_net()
    out, _ = mlp_forward(p, np.array([1.0, 2.0]))
    # hidden: relu(3), relu(2) -> 3 + 2 + 0.5
    np.testing.assert_array_equal(out, [5.5])
    out, _ = mlp_forward(p, np.array([-1.0, 0.5]))
    # hidden: relu(-0.5)=0, relu(-1.5)=0
    np.testing.assert_array_equal(out, [0.5])
    q = MlpParams(p.W1, p.b1, p.W2, p.b2, output_kind=SCALAR_SIGMOID)
    assert mlp_forward(q, np.array([1.0, 2.0]))[0] == sigmoid(5.5)


def test_forward_infer_is_deterministic():
    p = init_mlp(Rng(1), 4, 6, 3, dropout_rate=0.7)
    x = Rng(2).normal(size=4)
    a, _ = mlp_forward(p, x, INFER)
    b, _ = mlp_forward(p, x, INFER)
    assert a.tobytes() == b.tobytes()


def test_forward_dimension_mismatch():
    with pytest.raises(ConfigurationError):
        mlp_forward(unit_net(), np.ones(3))


def test_dropout_identity_cases():
    h = Rng(0).normal(size=(4, 5))
    for mode in (TRAIN, INFER):
        out, _ = dropout(Rng(1), h, 0.0, mode)
        np.testing.assert_array_equal(out, h)
    out, _ = dropout(Rng(1), h, 0.7, INFER)
    np.testing.assert_array_equal(out, h)


def test_dropout_statistics():
    h = np.ones(10**5)
    out, mask = dropout(Rng(5), h, 0.7, TRAIN)
    assert abs(np.mean(out == 0.0) - 0.7) < 0.01
    assert abs(out.mean() - 1.0) < 0.02
    np.testing.assert_array_equal(out, h * mask)


def test_dropout_expectation_per_coordinate():
    x = np.array([0.5, -2.0, 3.0])
    rng = Rng(6)
    total = np.zeros(3)
    n = 10**5
    outs, _ = dropout(rng, np.tile(x, (n, 1)), 0.7, TRAIN)
    total = outs.mean(axis=0)
    np.testing.assert_allclose(total, x, rtol=0.02)


def test_dropout_train_needs_rng():
    with pytest.raises(ConfigurationError):
        dropout(None, np.ones(3), 0.5, TRAIN)


def test_backward_zero_grad_out():
    p = init_mlp(Rng(0), 3, 4, 2)
    _, cache = mlp_forward(p, Rng(1).normal(size=(5, 3)))
    grads, gx = mlp_backward(p, cache, np.zeros((5, 2)))
    assert all(not g.any() for g in grads.values())
    assert not gx.any()


def test_backward_stale_cache():
    p = init_mlp(Rng(0), 3, 4, 2)
    _, cache = mlp_forward(p, np.ones(3))
    with pytest.raises(ContractError):
        mlp_backward(p.copy(), cache, np.ones(2))


@pytest.mark.parametrize("kind, out_dim", [(VECTOR, 3), (SCALAR_SIGMOID, 1)])
def test_backward_matches_finite_differences(kind, out_dim):
    rng = Rng(10)
    p = init_mlp(rng, 4, 6, out_dim, dropout_rate=0.5, output_kind=kind, std=0.5)
    p.b1[...] = rng.normal(0, 0.5, 6)
    X = rng.normal(size=(5, 4))
    w = rng.normal(size=(5, out_dim)) if kind == VECTOR else rng.normal(size=5)

    def loss():
        out, _ = mlp_forward(p, X, TRAIN, Rng(77))
        return float(np.sum(w * out))

    out, cache = mlp_forward(p, X, TRAIN, Rng(77))
    grads, _ = mlp_backward(p, cache, w)
    assert finite_diff_check(loss, p.tensors(), grads) < 1e-6


def test_adam_zero_gradient_leaves_parameters():
    params = {"w": np.array([1.0, -2.0])}
    Adam().step(params, {"w": np.zeros(2)})
    np.testing.assert_array_equal(params["w"], [1.0, -2.0])


def test_adam_single_step_hand_value():
    params = {"theta": np.array([0.3])}
    opt = Adam(lr=0.1)
    opt.step(params, {"theta": np.array([1.0])})
    assert abs(params["theta"][0] - (0.3 - 0.1 * (1.0 / (1.0 + 1e-8)))) <= 1e-15


def test_adam_runs_are_bit_identical():
    def run():
        rng = Rng(3)
        params = {"w": rng.normal(size=(3, 2))}
        state = Adam()
        for _ in range(20):
            adam_step(params, {"w": rng.normal(size=(3, 2))}, state)
        return params["w"]

    assert run().tobytes() == run().tobytes()


def test_adam_shape_mismatch():
    opt = Adam()
    params = {"w": np.zeros(3)}
    opt.step(params, {"w": np.zeros(3)})
    with pytest.raises(ContractError):
        opt.step(params, {"w": np.zeros(4)})
    with pytest.raises(ContractError):
        opt.step(params, {"v": np.zeros(3)})


def test_finite_diff_check_quadratic_and_planted_bug():
    params = {"theta": np.array([3.0])}
    loss = lambda: float(params["theta"][0] ** 2)  # noqa: E731
    assert finite_diff_check(loss, params, {"theta": np.array([6.0])}) < 1e-9
    err = finite_diff_check(loss, params, {"theta": np.array([12.0])})
    assert abs(err - 0.5) < 1e-6
