import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from conftest import central_fd, random_instance

from framp_sim.nn import (
    ConfigurationError,
    ContractError,
    ModelSpec,
    flat_index,
    flatten,
    forward,
    forward_batch,
    init_params,
    loss_and_grad,
    unflatten,
)
from framp_sim.prototypes import PrototypeSet


def reference_forward(spec, params, x):
    """Loop-based forward pass read straight off the documented layout."""
    a = list(map(float, x))
    hidden = a
    for layer in range(spec.n_layers):
        n_in, n_out = spec.layer_widths[layer], spec.layer_widths[layer + 1]
        z = []
        for j in range(n_out):
            s = params[flat_index(spec, layer, j)]
            for i in range(n_in):
                s += a[i] * params[flat_index(spec, layer, i, j)]
            z.append(s)
        if layer < spec.n_layers - 1:
            a = [max(v, 0.0) if spec.relu else math.tanh(v) for v in z]
            hidden = a
        else:
            a = z
    return np.array(a), np.array(hidden)


# --- ModelSpec and layout -----------------------------------------------------

def test_init_linear_length():
    assert len(init_params(ModelSpec((2, 3)), 0)) == 9
    assert len(init_params(ModelSpec((2, 3)), 99)) == 9


def test_init_deterministic():
    spec = ModelSpec((4, 16, 3))
    assert np.array_equal(init_params(spec, 5), init_params(spec, 5))
    assert not np.array_equal(init_params(spec, 5), init_params(spec, 6))


def test_init_fan_in_scale():
    spec = ModelSpec((4, 16, 3))
    layers = unflatten(spec, init_params(spec, 7))
    for (W, b), fan_in in zip(layers, spec.layer_widths[:-1]):
        target = 1 / np.sqrt(fan_in)
        assert abs(W.std() - target) <= 0.3 * target
        assert np.all(b == 0)


def test_d_formula():
    spec = ModelSpec((16, 64, 32, 8))
    assert spec.d == 16 * 64 + 64 + 64 * 32 + 32 + 32 * 8 + 8
    assert spec.hidden_dim == 32 and spec.n_classes == 8


def test_flat_index_bijective():
    spec = ModelSpec((3, 4, 2))
    seen = []
    for layer in range(spec.n_layers):
        n_in, n_out = spec.layer_widths[layer], spec.layer_widths[layer + 1]
        seen += [flat_index(spec, layer, i, j) for i in range(n_in) for j in range(n_out)]
        seen += [flat_index(spec, layer, j) for j in range(n_out)]
    assert sorted(seen) == list(range(spec.d))


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(1, 6), min_size=2, max_size=5), st.integers(0, 2**31 - 1))
def test_flatten_roundtrip(widths, seed):
    spec = ModelSpec(tuple(widths))
    p = np.random.default_rng(seed).standard_normal(spec.d)
    assert np.array_equal(flatten(spec, unflatten(spec, p)), p)
    layers = unflatten(spec, p)
    again = unflatten(spec, flatten(spec, layers))
    assert all(np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1]) for a, b in zip(layers, again))


def test_spec_rejects_bad_widths():
    with pytest.raises(ConfigurationError):
        ModelSpec((3,))
    with pytest.raises(ConfigurationError):
        ModelSpec((3, 0, 2))
    with pytest.raises(ConfigurationError):
        ModelSpec((3, 2), "sigmoid")


# --- forward -------------------------------------------------------------------

def test_forward_zero_mask():
    spec = ModelSpec((2, 2))
    logits, _ = forward(spec, np.arange(1.0, 7.0), np.zeros(6), np.array([3.0, -1.0]))
    assert np.array_equal(logits, [0.0, 0.0])


def test_forward_hand_arithmetic():
    spec = ModelSpec((1, 1))
    logits, _ = forward(spec, np.array([2.0, 1.0]), np.ones(2), np.array([3.0]))
    assert logits[0] == 7.0


@pytest.mark.parametrize("activation", ["relu", "tanh"])
def test_forward_matches_reference(rng, activation):
    for widths in [(3, 5, 4), (4, 6, 5, 3), (2, 3)]:
        spec = ModelSpec(widths, activation)
        p = rng.standard_normal(spec.d)
        x = rng.standard_normal(spec.input_dim)
        logits, hidden = forward(spec, p, np.ones(spec.d), x)
        ref_logits, ref_hidden = reference_forward(spec, p, x)
        np.testing.assert_allclose(logits, ref_logits, rtol=1e-12, atol=1e-12)
        np.testing.assert_allclose(hidden, ref_hidden, rtol=1e-12, atol=1e-12)


def test_forward_mask_acts_as_zero(rng):
    spec = ModelSpec((4, 6, 3), "relu")
    p = rng.standard_normal(spec.d)
    m = rng.random(spec.d) < 0.5
    X = rng.standard_normal((5, 4))
    a, ha = forward_batch(spec, p, m, X)
    b, hb = forward_batch(spec, p * m, None, X)
    assert np.array_equal(a, b) and np.array_equal(ha, hb)


def test_forward_dimension_errors():
    spec = ModelSpec((2, 3))
    with pytest.raises(ContractError):
        forward(spec, np.zeros(8), np.ones(9), np.zeros(2))
    with pytest.raises(ContractError):
        forward(spec, np.zeros(9), np.ones(8), np.zeros(2))
    with pytest.raises(ContractError):
        forward(spec, np.zeros(9), np.ones(9), np.zeros(3))


# --- loss and gradient ---------------------------------------------------------

def test_uniform_logits_loss():
    spec = ModelSpec((3, 5, 4))
    X = np.random.default_rng(0).standard_normal((7, 3))
    loss, grad, _ = loss_and_grad(spec, np.ones(spec.d), np.zeros(spec.d), X, np.arange(7) % 4)
    assert loss == pytest.approx(math.log(4), abs=1e-12)
    assert np.all(grad == 0)


def test_identical_prototypes_add_nothing(rng):
    spec, p, m, X, y, _ = random_instance(rng, (3, 4, 5, 3))
    base, _, batch = loss_and_grad(spec, p, m, X, y)
    with_align, _, _ = loss_and_grad(spec, p, m, X, y, batch, lam=2.5)
    assert with_align == pytest.approx(base, abs=1e-12)


def test_alignment_term_value(rng):
    spec, p, m, X, y, gp = random_instance(rng, (3, 4, 5, 3))
    ce, _, batch = loss_and_grad(spec, p, m, X, y)
    lam = 0.7
    total, _, _ = loss_and_grad(spec, p, m, X, y, gp, lam)
    both = batch.present & gp.present
    expected = sum(np.sum((batch.vectors[c] - gp.vectors[c]) ** 2) for c in np.flatnonzero(both))
    assert total == pytest.approx(ce + lam * expected, rel=1e-12)


def test_batch_prototypes_are_class_means(rng):
    spec, p, m, X, y, _ = random_instance(rng, (3, 4, 5, 3), B=10)
    _, _, protos = loss_and_grad(spec, p, m, X, y)
    _, hidden = forward_batch(spec, p, m, X)
    for c in range(3):
        assert protos.present[c] == np.any(y == c)
        if protos.present[c]:
            np.testing.assert_allclose(protos.vectors[c], hidden[y == c].mean(axis=0), atol=1e-14)


@pytest.mark.parametrize("activation", ["tanh", "relu"])
@pytest.mark.parametrize("lam", [0.0, 0.5])
def test_gradient_matches_finite_differences(activation, lam):
    rng = np.random.default_rng(2024)
    for _ in range(10):
        spec, p, m, X, y, gp = random_instance(rng, (3, 4, 5, 3), activation)
        _, grad, _ = loss_and_grad(spec, p, m, X, y, gp, lam)
        f = lambda q: loss_and_grad(spec, q, m, X, y, gp, lam)[0]
        active = np.flatnonzero(m)
        fd = central_fd(f, p, 1e-5, active)
        err = np.abs(grad[active] - fd[active])
        assert np.all(err <= 1e-4 * (1 + np.abs(fd[active])))


def test_gradient_zero_off_mask(rng):
    for _ in range(20):
        spec, p, m, X, y, gp = random_instance(rng, (4, 7, 5, 3), "relu", density=0.4)
        _, grad, _ = loss_and_grad(spec, p, m, X, y, gp, 1.0)
        assert np.all(grad[~m] == 0.0)


def test_loss_nonnegative(rng):
    for _ in range(50):
        spec, p, m, X, y, gp = random_instance(rng, (3, 5, 4), density=0.9)
        ce, _, _ = loss_and_grad(spec, 5 * p, m, X, y)
        total, _, _ = loss_and_grad(spec, 5 * p, m, X, y, gp, 0.3)
        assert ce >= 0 and total >= ce


def test_large_logits_are_stable():
    spec = ModelSpec((1, 3))
    p = np.array([1000.0, -1000.0, 0.0, 0.0, 0.0, 0.0])
    loss, grad, _ = loss_and_grad(spec, p, np.ones(6), np.array([[1.0]]), np.array([1]))
    assert np.isfinite(loss) and loss == pytest.approx(2000.0)
    assert np.all(np.isfinite(grad))


def test_lambda_without_prototypes_is_rejected(rng):
    spec, p, m, X, y, _ = random_instance(rng, (3, 4, 2))
    with pytest.raises(ConfigurationError):
        loss_and_grad(spec, p, m, X, y, None, 0.5)


def test_label_range_checked():
    spec = ModelSpec((2, 3))
    with pytest.raises(ContractError):
        loss_and_grad(spec, np.zeros(9), np.ones(9), np.zeros((1, 2)), np.array([3]))
