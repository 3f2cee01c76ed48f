import numpy as np
import pytest

from ishm_bench.core import InvalidConfigError, NonFiniteError, NonScalarLossError, ShapeMismatchError
from ishm_bench.numerics import (
    AdamState,
    Tape,
    Tensor,
    adam_step,
    backward,
    concat,
    conv1d,
    conv_transpose1d,
    layer_norm,
    matmul,
    mse_loss,
    mul,
    numerical_gradient,
    parameter,
    relu,
    reshape,
    set_debug,
    slice_tensor,
    softmax_rows,
    sum_all,
    transpose,
)


def _rng(seed):
    return np.random.default_rng(seed)


def _relative_error(analytic, numeric):
    a = np.asarray(analytic)
    b = np.asarray(numeric)
    return np.linalg.norm(a - b) / max(np.linalg.norm(a) + np.linalg.norm(b), 1e-12)


def _check_gradients(build, tensors, n_entries=6, seed=0, tol=1e-4):
    """
    Compare tape gradients of sum(build() * weights) against central differences
    on a few random entries of every tensor.
    """
    rng = _rng(seed)
    with Tape():
        sample = build()
    weights = rng.normal(size=sample.shape)

    def loss_fn():
        return float((build().data * weights).sum())

    with Tape() as tape:
        loss = sum_all(mul(build(), Tensor(weights)))
    grads = backward(tape, loss)
    for tensor in tensors:
        flat = rng.choice(tensor.size, size=min(n_entries, tensor.size), replace=False)
        indices = [np.unravel_index(i, tensor.shape) for i in flat]
        numeric = numerical_gradient(loss_fn, tensor, indices)
        analytic = [grads[tensor][i] for i in indices]
        assert _relative_error(analytic, [numeric[i] for i in indices]) < tol


# -------------------------------
# Forward values against naive loops
# -------------------------------


@pytest.mark.parametrize("seed", range(20))
def test_matmul_matches_loops(seed):
    rng = _rng(seed)
    b, n, k, m = rng.integers(1, 4), rng.integers(1, 5), rng.integers(1, 5), rng.integers(1, 5)
    x, w = rng.normal(size=(b, n, k)), rng.normal(size=(k, m))
    out = matmul(Tensor(x), Tensor(w)).data
    expected = np.zeros((b, n, m))
    for i in range(b):
        for r in range(n):
            for c in range(m):
                expected[i, r, c] = sum(x[i, r, j] * w[j, c] for j in range(k))
    assert np.max(np.abs(out - expected)) <= 1e-12


@pytest.mark.parametrize("seed", range(20))
def test_conv1d_matches_loops(seed):
    rng = _rng(seed)
    batch, cin, cout = rng.integers(1, 3), rng.integers(1, 4), rng.integers(1, 4)
    kernel, stride = rng.integers(1, 5), rng.integers(1, 4)
    length = kernel + rng.integers(0, 12)
    x, w = rng.normal(size=(batch, cin, length)), rng.normal(size=(cout, cin, kernel))
    out = conv1d(Tensor(x), Tensor(w), stride).data
    out_len = (length - kernel) // stride + 1
    expected = np.zeros((batch, cout, out_len))
    for b in range(batch):
        for o in range(cout):
            for t in range(out_len):
                expected[b, o, t] = sum(
                    x[b, c, t * stride + j] * w[o, c, j] for c in range(cin) for j in range(kernel)
                )
    assert out.shape == expected.shape
    assert np.max(np.abs(out - expected)) <= 1e-12


@pytest.mark.parametrize("seed", range(20))
def test_conv_transpose1d_matches_loops(seed):
    rng = _rng(seed)
    batch, cin, cout = rng.integers(1, 3), rng.integers(1, 4), rng.integers(1, 4)
    kernel, stride, length = rng.integers(1, 5), rng.integers(1, 4), rng.integers(1, 8)
    x, w = rng.normal(size=(batch, cin, length)), rng.normal(size=(cin, cout, kernel))
    out = conv_transpose1d(Tensor(x), Tensor(w), stride).data
    expected = np.zeros((batch, cout, (length - 1) * stride + kernel))
    for b in range(batch):
        for c in range(cin):
            for t in range(length):
                for o in range(cout):
                    for j in range(kernel):
                        expected[b, o, t * stride + j] += x[b, c, t] * w[c, o, j]
    assert np.max(np.abs(out - expected)) <= 1e-12


def test_cnn_autoencoder_lengths():
    """Two stride-2 convolutions and their transposes map 200 samples back to 200"""
    x = Tensor(np.zeros((1, 1, 200)))
    h = conv1d(x, Tensor(np.zeros((16, 1, 4))), 2)
    z = conv1d(h, Tensor(np.zeros((32, 16, 3))), 2)
    d = conv_transpose1d(z, Tensor(np.zeros((32, 16, 3))), 2)
    y = conv_transpose1d(d, Tensor(np.zeros((16, 1, 4))), 2)
    assert [h.shape[2], z.shape[2], d.shape[2], y.shape[2]] == [99, 49, 99, 200]


@pytest.mark.parametrize("seed", range(10))
def test_softmax_rows_are_distributions(seed):
    x = _rng(seed).normal(scale=50.0, size=(3, 4, 7))
    y = softmax_rows(Tensor(x)).data
    assert np.all(y >= 0)
    assert np.max(np.abs(y.sum(axis=-1) - 1.0)) <= 1e-12
    row = x[1, 2]
    expected = np.exp(row - row.max()) / np.exp(row - row.max()).sum()
    assert np.allclose(y[1, 2], expected, rtol=0, atol=1e-12)


@pytest.mark.parametrize("seed", range(10))
def test_layer_norm_matches_loops(seed):
    rng = _rng(seed)
    x, g, b = rng.normal(size=(2, 3, 5)), rng.normal(size=5), rng.normal(size=5)
    out = layer_norm(Tensor(x), Tensor(g), Tensor(b)).data
    for i in range(2):
        for j in range(3):
            row = x[i, j]
            mean = sum(row) / 5
            var = sum((v - mean) ** 2 for v in row) / 5
            expected = [(v - mean) / np.sqrt(var + 1e-10) * g[k] + b[k] for k, v in enumerate(row)]
            assert np.allclose(out[i, j], expected, rtol=0, atol=1e-12)


def test_structural_ops():
    x = np.arange(24.0).reshape(2, 3, 4)
    assert np.array_equal(transpose(Tensor(x)).data, x.transpose(0, 2, 1))
    assert np.array_equal(transpose(Tensor(x), (1, 0, 2)).data, x.transpose(1, 0, 2))
    assert reshape(Tensor(x), (6, 4)).shape == (6, 4)
    assert concat([Tensor(x), Tensor(x)], axis=1).shape == (2, 6, 4)
    assert np.array_equal(slice_tensor(Tensor(x), (slice(None), 0)).data, x[:, 0])
    assert np.array_equal(relu(Tensor(x - 10)).data, np.maximum(x - 10, 0))


# -------------------------------
# Gradients
# -------------------------------


@pytest.mark.parametrize("seed", range(5))
def test_elementwise_and_matmul_gradients(seed):
    rng = _rng(seed)
    a = parameter(rng.normal(size=(2, 3, 4)), "a")
    w = parameter(rng.normal(size=(4, 5)), "w")
    bias = parameter(rng.normal(size=5), "bias")
    _check_gradients(lambda: relu(matmul(a, w) + bias) * 2.0 - bias, [a, w, bias], seed=seed)


@pytest.mark.parametrize("seed", range(5))
def test_softmax_and_layer_norm_gradients(seed):
    rng = _rng(seed)
    x = parameter(rng.normal(size=(2, 3, 6)), "x")
    g = parameter(rng.normal(size=6), "g")
    b = parameter(rng.normal(size=6), "b")
    _check_gradients(lambda: softmax_rows(layer_norm(x, g, b)), [x, g, b], seed=seed)


@pytest.mark.parametrize("seed", range(5))
def test_conv_gradients(seed):
    rng = _rng(seed)
    x = parameter(rng.normal(size=(2, 2, 13)), "x")
    k1 = parameter(rng.normal(size=(3, 2, 4)), "k1")
    k2 = parameter(rng.normal(size=(3, 2, 3)), "k2")
    _check_gradients(lambda: conv_transpose1d(conv1d(x, k1, 2), k2, 2), [x, k1, k2], seed=seed)


def test_structural_gradients():
    rng = _rng(4)
    x = parameter(rng.normal(size=(2, 3, 4)), "x")
    y = parameter(rng.normal(size=(2, 2, 4)), "y")
    _check_gradients(
        lambda: reshape(transpose(concat([x, y], axis=1), (0, 2, 1)), (2, 20)),
        [x, y],
    )
    _check_gradients(lambda: slice_tensor(x, (slice(None), 1)), [x])


def test_mse_loss_gradient():
    rng = _rng(2)
    pred = parameter(rng.normal(size=(3, 4)), "pred")
    target = rng.normal(size=(3, 4))
    with Tape() as tape:
        loss = mse_loss(pred, target)
    grads = backward(tape, loss)
    assert loss.item() == pytest.approx(((pred.data - target) ** 2).mean())
    assert np.allclose(grads[pred], 2.0 * (pred.data - target) / 12)


def test_shared_input_gradients_accumulate():
    x = parameter(np.array([3.0]), "x")
    with Tape() as tape:
        loss = sum_all(mul(x, x) + x)
    assert backward(tape, loss)[x] == pytest.approx([7.0])


def test_unreached_parameter_gets_zero_gradient():
    x, unused = parameter(np.ones(3), "x"), parameter(np.ones(2), "unused")
    with Tape() as tape:
        loss = sum_all(x)
    grads = backward(tape, loss)
    assert unused not in grads
    assert np.array_equal(grads[unused], np.zeros(2))


def test_no_recording_outside_tape():
    x = parameter(np.ones(3), "x")
    tape = Tape()
    y = x * 2.0
    assert len(tape) == 0
    assert not y.requires_grad


def test_backward_rejects_non_scalar_loss():
    x = parameter(np.ones(3), "x")
    with Tape() as tape:
        y = x * 2.0
    with pytest.raises(NonScalarLossError):
        backward(tape, y)


def test_shape_mismatch_errors():
    with pytest.raises(ShapeMismatchError):
        matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 2))))
    with pytest.raises(ShapeMismatchError):
        Tensor(np.ones((2, 3))) + Tensor(np.ones((4,)))
    with pytest.raises(ShapeMismatchError):
        mse_loss(Tensor(np.ones(3)), np.ones(4))
    with pytest.raises(ShapeMismatchError):
        conv1d(Tensor(np.ones((1, 2, 5))), Tensor(np.ones((1, 3, 2))))


def test_debug_mode_flags_non_finite_outputs():
    set_debug(True)
    try:
        with pytest.raises(NonFiniteError):
            Tensor(np.array([1.0])) * float("inf")
    finally:
        set_debug(False)


# -------------------------------
# Optimizer
# -------------------------------


def test_adam_minimizes_quadratic():
    """f(w) = w^2 from w = 1 with lr 0.1"""
    params = {"w": parameter(np.array([1.0]), "w")}
    state = AdamState(lr=0.1)
    for _ in range(200):
        with Tape() as tape:
            loss = mse_loss(params["w"], np.zeros(1))
        params = adam_step(params, backward(tape, loss).for_params(params), state)
    assert abs(params["w"].item()) < 1e-2
    assert state.step == 200


def test_adam_zero_gradient_leaves_params():
    params = {"w": parameter(np.array([0.3, -2.0]), "w")}
    updated = adam_step(params, {"w": np.zeros(2)}, AdamState())
    assert np.array_equal(updated["w"].data, params["w"].data)


def test_edge_values():
    assert np.allclose(softmax_rows(Tensor(np.zeros((1, 3)))).data, 1.0 / 3.0)
    stable = softmax_rows(Tensor(np.array([[1000.0, 0.0]]))).data
    assert np.all(np.isfinite(stable)) and stable[0, 0] == 1.0 and stable[0, 1] == 0.0
    flat = layer_norm(Tensor(np.full((1, 4), 2.5)), Tensor(np.ones(4)), Tensor(np.zeros(4))).data
    assert np.array_equal(flat, np.zeros((1, 4)))
    assert mse_loss(Tensor(np.ones(2)), np.zeros(2)).item() == 1.0


def test_adam_first_step_moves_by_learning_rate():
    params = {"w": parameter(np.array([1.0, -1.0]), "w")}
    updated = adam_step(params, {"w": np.array([0.5, -2.0])}, AdamState(lr=0.01))
    assert np.allclose(updated["w"].data, [0.99, -0.99], atol=1e-8)
    assert np.array_equal(params["w"].data, [1.0, -1.0])


def test_adam_state_validation():
    with pytest.raises(InvalidConfigError):
        AdamState(lr=0.0)
    with pytest.raises(InvalidConfigError):
        AdamState(beta1=1.0)
