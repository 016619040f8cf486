import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ar_a3c import nn
from ar_a3c.errors import DivergenceError
from oracles import central_difference, dense_forward_oracle, rel_err


def random_net(rng, sizes, activations, scale=1.0):
    weights = tuple(rng.normal(0, scale, (o, i)) for i, o in zip(sizes[:-1], sizes[1:]))
    biases = tuple(rng.normal(0, scale, o) for o in sizes[1:])
    return nn.MlpParams(weights, biases, tuple(activations))


def test_zero_weights_identity_gives_bias():
    params = nn.MlpParams((np.zeros((2, 3)),), (np.array([0.5, -1.5]),), ("identity",))
    out, _ = nn.forward(params, [1.0, 2.0, 3.0])
    np.testing.assert_array_equal(out, [0.5, -1.5])


def test_scalar_tanh():
    params = nn.MlpParams((np.array([[2.0]]),), (np.array([0.0]),), ("tanh",))
    out, _ = nn.forward(params, [1.0])
    assert out[0] == pytest.approx(0.96402758, abs=1e-8)


def test_forward_matches_loop_oracle():
    rng = np.random.default_rng(3)
    params = nn.init_mlp((3, 100, 1), ("relu", "identity"), rng)
    params = params.with_arrays([a + rng.normal(0, 0.1, a.shape) for a in params.arrays()])
    for _ in range(5):
        x = rng.normal(size=3)
        out, _ = nn.forward(params, x)
        expected = dense_forward_oracle(params.weights, params.biases, params.activations, x)
        assert np.max(np.abs(out - expected)) <= 1e-12


def test_batched_forward_equals_rowwise():
    rng = np.random.default_rng(4)
    params = random_net(rng, (3, 7, 2), ("softplus", "tanh"))
    xs = rng.normal(size=(6, 3))
    out, _ = nn.forward(params, xs)
    for i in range(6):
        np.testing.assert_allclose(out[i], nn.forward(params, xs[i])[0], rtol=0, atol=1e-14)


def test_dimension_mismatch():
    params = nn.init_mlp((3, 4, 1), ("tanh", "identity"), np.random.default_rng(0))
    with pytest.raises(ValueError):
        nn.forward(params, [1.0, 2.0])
    _, tape = nn.forward(params, [1.0, 2.0, 3.0])
    with pytest.raises(ValueError):
        nn.backward(params, tape, [1.0, 2.0])
    other = nn.init_mlp((3, 5, 1), ("tanh", "identity"), np.random.default_rng(0))
    with pytest.raises(ValueError):
        nn.backward(other, tape, [1.0])
    with pytest.raises(ValueError):
        nn.MlpParams((np.zeros((4, 3)), np.zeros((1, 5))), (np.zeros(4), np.zeros(1)), ("tanh", "identity"))


def test_zero_seed_gives_zero_grads():
    rng = np.random.default_rng(1)
    params = random_net(rng, (3, 5, 2), ("tanh", "identity"))
    _, tape = nn.forward(params, rng.normal(size=3))
    grads = nn.backward(params, tape, np.zeros(2))
    assert all(np.all(g == 0) for g in grads.arrays())


def test_linear_grad_is_input():
    params = nn.MlpParams((np.array([[0.7]]),), (np.array([0.1]),), ("identity",))
    _, tape = nn.forward(params, [3.5])
    grads = nn.backward(params, tape, [1.0])
    assert grads.weights[0][0, 0] == 3.5
    assert grads.biases[0][0] == 1.0


def test_init_bounds_and_zero_bias():
    params = nn.init_mlp((3, 200, 2), ("tanh", "identity"), np.random.default_rng(0))
    assert np.all(np.abs(params.weights[0]) <= 1 / math.sqrt(3))
    assert np.all(np.abs(params.weights[1]) <= 1 / math.sqrt(200))
    assert all(np.all(b == 0) for b in params.biases)


def _check_gradients(rng, depth, width, batch):
    acts = [str(a) for a in rng.choice(["tanh", "softplus", "relu", "identity"], depth)]
    sizes = [int(rng.integers(1, 5))] + [int(rng.integers(1, width + 1)) for _ in range(depth)]
    params = random_net(rng, sizes, acts, scale=0.8)
    x = rng.normal(size=(batch, sizes[0]))
    seed = rng.normal(size=(batch, sizes[-1]))
    _, tape = nn.forward(params, x)
    grads = nn.backward(params, tape, seed)
    arrays = [a.copy() for a in params.arrays()]

    def f():
        out, _ = nn.forward(params.with_arrays(arrays), x)
        return float(np.sum(out * seed))

    numeric = central_difference(f, arrays)
    return max(rel_err(g, n) for g, n in zip(grads.arrays(), numeric))


def test_gradient_exactness_100_random_nets():
    rng = np.random.default_rng(2024)
    worst = max(_check_gradients(rng, int(rng.integers(1, 4)), 16, int(rng.integers(1, 4))) for _ in range(100))
    assert worst < 1e-5


def test_rmsprop_zero_grad():
    params = nn.MlpParams((np.array([[1.0, 2.0]]),), (np.array([3.0]),), ("identity",))
    state = nn.RmsPropState((np.array([[4.0, 1.0]]), np.array([2.0])), learning_rate=0.1)
    new, st2 = nn.rmsprop_apply(params, nn.zeros_like(params), state)
    np.testing.assert_array_equal(new.weights[0], params.weights[0])
    np.testing.assert_array_equal(new.biases[0], params.biases[0])
    np.testing.assert_allclose(st2.cache[0], [[3.6, 0.9]])
    np.testing.assert_allclose(st2.cache[1], [1.8])


def test_rmsprop_closed_form_single_step():
    params = nn.MlpParams((np.array([[0.0]]),), (np.array([0.0]),), ("identity",))
    state = nn.RmsPropState.for_params(params, learning_rate=0.1, decay=0.9, epsilon=1e-10)
    grads = nn.Grads((np.array([[1.0]]),), (np.array([0.0]),))
    new, st2 = nn.rmsprop_apply(params, grads, state)
    assert st2.cache[0][0, 0] == pytest.approx(0.1)
    assert new.weights[0][0, 0] == pytest.approx(-0.31623, abs=1e-5)
    assert new.weights[0][0, 0] == pytest.approx(-0.1 / (math.sqrt(0.1) + 1e-10), rel=1e-12)
    # pure: inputs untouched
    assert params.weights[0][0, 0] == 0.0 and state.cache[0][0, 0] == 0.0


def test_rmsprop_cache_converges_to_g_squared():
    params = nn.MlpParams((np.array([[0.0]]),), (np.array([0.0]),), ("identity",))
    state = nn.RmsPropState.for_params(params, learning_rate=0.1)
    grads = nn.Grads((np.array([[1.5]]),), (np.array([-0.5]),))
    # oracle: closed form of the geometric recursion
    caches = []
    for k in range(1, 101):
        params, state = nn.rmsprop_apply(params, grads, state)
        caches.append(state.cache[0][0, 0])
        assert caches[-1] == pytest.approx(2.25 * (1 - 0.9**k), rel=1e-12)
    assert all(b > a for a, b in zip(caches, caches[1:]))
    assert abs(caches[-1] - 2.25) < 1e-4 * 2.25
    assert abs(state.cache[1][0] - 0.25) < 1e-6 * 1e2
    # after warm-up the step size approaches the learning rate
    assert params.weights[0][0, 0] == pytest.approx(-sum(0.1 * 1.5 / math.sqrt(2.25 * (1 - 0.9**k)) for k in range(1, 101)), rel=1e-9)


def test_rmsprop_rejects_non_finite():
    params = nn.MlpParams((np.array([[0.0]]),), (np.array([0.0]),), ("identity",))
    state = nn.RmsPropState.for_params(params, learning_rate=0.1)
    with pytest.raises(DivergenceError):
        nn.rmsprop_apply(params, nn.Grads((np.array([[math.nan]]),), (np.array([0.0]),)), state)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), width=st.integers(1, 16))
def test_rmsprop_preserves_shapes_and_nonnegative_cache(seed, width):
    rng = np.random.default_rng(seed)
    params = nn.init_mlp((3, width, 2), ("tanh", "identity"), rng)
    state = nn.RmsPropState.for_params(params, 1e-3)
    grads = nn.Grads(tuple(rng.normal(size=w.shape) for w in params.weights), tuple(rng.normal(size=b.shape) for b in params.biases))
    new, st2 = nn.rmsprop_apply(params, grads, state)
    assert [a.shape for a in new.arrays()] == [a.shape for a in params.arrays()]
    assert all(np.all(c >= 0) for c in st2.cache)
    again, _ = nn.rmsprop_apply(params, grads, state)
    assert all(np.array_equal(a, b) for a, b in zip(new.arrays(), again.arrays()))
