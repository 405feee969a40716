import math

import numpy as np
import pytest
from conftest import central_diff, max_rel_err

from bicephnet.errors import DegenerateInputError, ShapeError, StateError, ValidationError
from bicephnet.nn import (
    Activation,
    DenseLayer,
    L2NormLayer,
    cross_entropy,
    dense_backward,
    dense_forward,
    l2_normalize_backward,
    l2_normalize_forward,
    sigmoid,
    softmax,
)


def test_dense_forward_linear_sum():
    layer = DenseLayer(2, 1, Activation.IDENTITY, weights=[[1.0, 1.0, 0.0]])
    np.testing.assert_array_equal(dense_forward(layer, [[2.0, 3.0]]), [[5.0]])


@pytest.mark.parametrize("act", list(Activation))
def test_bias_only_layer(act):
    c = 0.7
    layer = DenseLayer(3, 2, act, weights=[[0, 0, 0, c], [0, 0, 0, c]])
    out = dense_forward(layer, np.random.default_rng(0).standard_normal((4, 3)))
    f = {"identity": c, "relu": c, "sigmoid": 1 / (1 + math.exp(-c)), "softmax": 0.5}[act.value]
    np.testing.assert_allclose(out, f, rtol=0, atol=1e-15)


def test_dense_forward_matches_loop_oracle(rng):
    layer = DenseLayer(5, 4, Activation.IDENTITY)
    layer.init_uniform(rng)
    layer.weights[:, -1] = rng.standard_normal(4)
    X = rng.standard_normal((3, 5))
    out = dense_forward(layer, X)
    for b in range(3):
        for j in range(4):
            acc = layer.weights[j, -1]
            for i in range(5):
                acc += layer.weights[j, i] * X[b, i]
            assert abs(out[b, j] - acc) < 1e-12


def test_dense_shape_and_state_errors():
    layer = DenseLayer(3, 2)
    with pytest.raises(StateError):
        dense_backward(layer, np.zeros((1, 2)))
    with pytest.raises(ShapeError):
        dense_forward(layer, np.zeros((2, 4)))
    with pytest.raises(ValidationError):
        dense_forward(layer, [[np.nan, 0, 0]])
    dense_forward(layer, np.zeros((2, 3)))
    with pytest.raises(ShapeError):
        dense_backward(layer, np.zeros((2, 3)))


def test_dense_backward_zero_upstream(rng):
    layer = DenseLayer(4, 3, Activation.RELU)
    layer.init_uniform(rng)
    dense_forward(layer, rng.standard_normal((5, 4)))
    g = dense_backward(layer, np.zeros((5, 3)))
    assert not g.weights.any() and not g.inputs.any()


def test_dense_backward_identity_batch_one(rng):
    layer = DenseLayer(4, 3, Activation.IDENTITY)
    layer.init_uniform(rng)
    x = rng.standard_normal((1, 4))
    up = rng.standard_normal((1, 3))
    dense_forward(layer, x)
    g = dense_backward(layer, up)
    np.testing.assert_array_equal(g.weights, up.T @ np.hstack([x, [[1.0]]]))


@pytest.mark.parametrize("act", list(Activation))
def test_dense_backward_finite_differences(act):
    rng = np.random.default_rng(7)
    layer = DenseLayer(6, 5, act)
    layer.init_uniform(rng)
    layer.weights[:, -1] = rng.uniform(-0.5, 0.5, 5)
    X = rng.standard_normal((4, 6))
    while np.min(np.abs(X @ layer.weights[:, :-1].T + layer.weights[:, -1])) < 1e-3:
        X = rng.standard_normal((4, 6))
    R = rng.standard_normal((4, 5))
    loss = lambda: float(np.sum(R * dense_forward(layer, X)))
    dense_forward(layer, X)
    g = dense_backward(layer, R)
    assert max_rel_err(g.weights, central_diff(loss, layer.weights)) < 1e-6
    assert max_rel_err(g.inputs, central_diff(loss, X)) < 1e-6


def test_forward_backward_leave_weights_unchanged(rng):
    layer = DenseLayer(3, 3, Activation.SIGMOID)
    layer.init_uniform(rng)
    before = layer.weights.copy()
    dense_forward(layer, rng.standard_normal((2, 3)))
    dense_backward(layer, rng.standard_normal((2, 3)))
    np.testing.assert_array_equal(layer.weights, before)


def test_relu_subgradient_at_zero_is_zero():
    layer = DenseLayer(1, 1, Activation.RELU, weights=[[1.0, 0.0]])
    dense_forward(layer, [[0.0]])
    assert dense_backward(layer, [[1.0]]).weights[0, 0] == 0.0


def test_l2_normalize_examples():
    layer = L2NormLayer()
    np.testing.assert_allclose(l2_normalize_forward(layer, [[3.0, 4.0]]), [[0.6, 0.8]], atol=1e-15)
    u = np.array([[0.0, 1.0, 0.0]])
    np.testing.assert_array_equal(l2_normalize_forward(layer, u), u)
    with pytest.raises(DegenerateInputError):
        l2_normalize_forward(layer, [[0.0, 0.0]])
    with pytest.raises(StateError):
        L2NormLayer().backward([[1.0, 0.0]])


def test_l2_backward_projection_properties(rng):
    layer = L2NormLayer()
    x = rng.standard_normal((1, 5)) * 3
    y = l2_normalize_forward(layer, x)
    assert np.max(np.abs(l2_normalize_backward(layer, 2.5 * y))) < 1e-15
    v = rng.standard_normal((1, 5))
    v -= (v @ y.T) * y
    np.testing.assert_allclose(l2_normalize_backward(layer, v), v / np.linalg.norm(x), rtol=1e-12, atol=1e-15)


def test_l2_backward_finite_differences(rng):
    layer = L2NormLayer()
    X = rng.standard_normal((8, 16))
    R = rng.standard_normal((8, 16))
    loss = lambda: float(np.sum(R * l2_normalize_forward(layer, X)))
    l2_normalize_forward(layer, X)
    assert max_rel_err(l2_normalize_backward(layer, R), central_diff(loss, X)) < 1e-6


def test_softmax_shift_invariant(rng):
    z = rng.standard_normal((6, 4)) * 10
    np.testing.assert_allclose(softmax(z), softmax(z + 123.4), rtol=0, atol=1e-12)
    assert np.all(np.isfinite(softmax(np.array([[1e308, 0.0]]))))


def test_sigmoid_stable_extremes():
    s = sigmoid(np.array([-1000.0, 0.0, 1000.0]))
    np.testing.assert_array_equal(s, [0.0, 0.5, 1.0])


def test_cross_entropy_trivial_cases():
    loss, grad = cross_entropy(np.eye(3), [0, 1, 2])
    assert loss == 0.0 and not grad.any()
    loss, grad = cross_entropy([[0.5]], [1])
    assert abs(loss - math.log(2)) < 1e-15
    assert abs(loss - 0.693147) < 1e-6
    with pytest.raises(ValidationError):
        cross_entropy([[0.2, 0.8]], [2])
    with pytest.raises(ValidationError):
        cross_entropy([[0.5]], [2])


@pytest.mark.parametrize("C", [1, 3])
def test_fused_cross_entropy_gradient(C, rng):
    Z = rng.standard_normal((7, C)) * 2
    y = rng.integers(0, 2 if C == 1 else C, size=7)
    probs = lambda: sigmoid(Z) if C == 1 else softmax(Z)
    loss = lambda: cross_entropy(probs(), y, logits=Z)[0]
    _, grad = cross_entropy(probs(), y, logits=Z)
    assert max_rel_err(grad, central_diff(loss, Z)) < 1e-6
    # logit form agrees with the probability form away from saturation
    assert abs(cross_entropy(probs(), y)[0] - loss()) < 1e-12


def test_cross_entropy_saturated_logits_stay_finite():
    z = np.array([[800.0]])
    loss, _ = cross_entropy(sigmoid(z), [0], logits=z)
    assert loss == pytest.approx(800.0)
