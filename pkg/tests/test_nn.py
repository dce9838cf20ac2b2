import io

import numpy as np
import pytest

from fmca.exceptions import NonFiniteGradient, ShapeMismatch
from fmca.nn import (AdamState, Layer, NetworkParams, adam_step, backward, dump_params,
                     forward, init_params, load_params, params_from_bytes, params_to_bytes)


def randomize(params, rng, scale=0.5):
    """Perturb every array so layer-norm gains/shifts and biases are non-trivial."""
    for a in params.arrays():
        a += scale * rng.standard_normal(a.shape)
    return params


def fd_check(params, x, loss_grad_fn, h=1e-5):
    """Max relative error between analytic and central-difference gradients.

    ``loss_grad_fn(out) -> (loss, dloss/dout)``.
    """
    out, tape = forward(params, x)
    _, g_out = loss_grad_fn(out)
    grads, dx = backward(params, tape, g_out)
    worst = 0.0
    for a, g in zip(params.arrays(), grads):
        flat, gflat = a.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            lp, _ = loss_grad_fn(forward(params, x)[0])
            flat[i] = old - h
            lm, _ = loss_grad_fn(forward(params, x)[0])
            flat[i] = old
            num = (lp - lm) / (2 * h)
            denom = max(abs(num), abs(gflat[i]), 1e-7)
            worst = max(worst, abs(num - gflat[i]) / denom)
    return worst


class TestForward:
    def test_zero_net_uniform_softmax(self):
        p = init_params(5, 4, 6, 2, np.random.default_rng(0))
        for a in p.arrays():
            a[...] = 0.0
        out, _ = forward(p, np.random.default_rng(1).standard_normal((7, 5)))
        np.testing.assert_allclose(out, 0.25, atol=1e-15)

    def test_identity_linear(self):
        p = NetworkParams([Layer(np.eye(3), np.zeros(3))], head="linear")
        v = np.array([[1.0, -2.0, 3.5]])
        np.testing.assert_array_equal(forward(p, v)[0], v)

    def test_softmax_rows_sum_to_one(self):
        rng = np.random.default_rng(2)
        p = randomize(init_params(10, 6, 12, 3, rng), rng, 2.0)
        out, _ = forward(p, 10 * rng.standard_normal((100, 10)))
        assert np.all(out > 0)
        np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-12)

    def test_shift_invariance(self):
        rng = np.random.default_rng(3)
        p = randomize(init_params(4, 5, 8, 1, rng), rng)
        x = rng.standard_normal((20, 4))
        a, _ = forward(p, x)
        p.layers[-1].bias += 7.25
        b, _ = forward(p, x)
        np.testing.assert_allclose(a, b, atol=1e-12)

    def test_deterministic(self):
        rng = np.random.default_rng(4)
        p = init_params(4, 3, 8, 2, rng)
        x = rng.standard_normal((9, 4))
        np.testing.assert_array_equal(forward(p, x)[0], forward(p, x)[0])

    def test_shape_mismatch(self):
        p = init_params(4, 3, 8, 2, np.random.default_rng(0))
        with pytest.raises(ShapeMismatch):
            forward(p, np.ones((2, 5)))


class TestBackward:
    def test_zero_upstream(self):
        rng = np.random.default_rng(0)
        p = randomize(init_params(4, 3, 8, 2, rng), rng)
        out, tape = forward(p, rng.standard_normal((6, 4)))
        grads, dx = backward(p, tape, np.zeros_like(out))
        assert all(np.all(g == 0) for g in grads) and np.all(dx == 0)

    def test_linear_sum(self):
        rng = np.random.default_rng(1)
        p = NetworkParams([Layer(rng.standard_normal((3, 4)), rng.standard_normal(3))], head="linear")
        x = rng.standard_normal((5, 4))
        out, tape = forward(p, x)
        (gw, gb), _ = backward(p, tape, np.ones_like(out))
        np.testing.assert_allclose(gw, np.outer(np.ones(3), x.sum(axis=0)))
        np.testing.assert_allclose(gb, np.full(3, 5.0))

    @pytest.mark.parametrize("activation", ["tanh", "relu"])
    @pytest.mark.parametrize("head", ["softmax", "linear"])
    def test_finite_differences(self, activation, head):
        rng = np.random.default_rng(7)
        p = randomize(init_params(3, 4, 5, 2, rng, activation=activation, head=head), rng)
        x = rng.standard_normal((6, 3))
        target = rng.standard_normal((6, 4))

        def loss(out):
            return float(np.sum(np.sin(out) * target)), np.cos(out) * target

        assert fd_check(p, x, loss) < 1e-5

    def test_input_gradient(self):
        rng = np.random.default_rng(8)
        p = randomize(init_params(3, 4, 5, 1, rng), rng)
        x = rng.standard_normal((2, 3))
        w = rng.standard_normal((2, 4))
        out, tape = forward(p, x)
        _, dx = backward(p, tape, w)
        h = 1e-6
        for i in range(2):
            for j in range(3):
                xp, xm = x.copy(), x.copy()
                xp[i, j] += h
                xm[i, j] -= h
                num = (np.sum(forward(p, xp)[0] * w) - np.sum(forward(p, xm)[0] * w)) / (2 * h)
                assert abs(num - dx[i, j]) < 1e-7

    def test_logits_mode(self):
        rng = np.random.default_rng(9)
        p = init_params(3, 4, 5, 1, rng)
        out, tape = forward(p, rng.standard_normal((4, 3)))
        g = rng.standard_normal(out.shape)
        grads, _ = backward(p, tape, g, wrt="logits")
        p.head = "linear"
        grads_lin, _ = backward(p, tape, g)
        for a, b in zip(grads, grads_lin):
            np.testing.assert_array_equal(a, b)


class TestAdam:
    def test_zero_grad(self):
        p = init_params(3, 2, 4, 1, np.random.default_rng(0))
        before = [a.copy() for a in p.arrays()]
        st = AdamState.for_params(p, 0.01)
        adam_step(p, [np.zeros_like(a) for a in p.arrays()], st)
        assert st.step == 1
        for a, b in zip(p.arrays(), before):
            np.testing.assert_array_equal(a, b)

    def test_first_step_magnitude(self):
        rng = np.random.default_rng(1)
        p = init_params(3, 2, 4, 1, rng)
        before = [a.copy() for a in p.arrays()]
        grads = [rng.standard_normal(a.shape) for a in p.arrays()]
        adam_step(p, grads, AdamState.for_params(p, 0.01))
        for a, b, g in zip(p.arrays(), before, grads):
            # deviation from lr*sign(g) is lr*eps/|g|
            assert np.all(np.abs(a - b + 0.01 * np.sign(g)) <= 0.01 * 1e-8 / np.abs(g) + 1e-15)

    def test_quadratic_decreases(self):
        p = NetworkParams([Layer(np.random.default_rng(2).standard_normal((3, 3)), np.ones(3))], head="linear")
        st = AdamState.for_params(p, 0.01)
        norms = []
        for _ in range(200):
            adam_step(p, [a.copy() for a in p.arrays()], st)  # grad of 0.5*|p|^2 is p
            norms.append(np.sqrt(sum(np.sum(a**2) for a in p.arrays())))
        assert np.all(np.diff(norms[10:]) < 0)

    def test_non_finite(self):
        p = init_params(3, 2, 4, 1, np.random.default_rng(0))
        grads = [np.zeros_like(a) for a in p.arrays()]
        grads[0][0, 0] = np.nan
        st = AdamState.for_params(p, 0.01)
        with pytest.raises(NonFiniteGradient):
            adam_step(p, grads, st)
        assert st.step == 0


def test_serialization_roundtrip():
    rng = np.random.default_rng(5)
    p = randomize(init_params(7, 3, 6, 2, rng, activation="relu", head="linear"), rng)
    data = params_to_bytes(p)
    assert data[:4] == b"FMCA"
    q = params_from_bytes(data)
    assert q.dims == p.dims and q.activation == "relu" and q.head == "linear"
    for a, b in zip(p.arrays(), q.arrays()):
        np.testing.assert_array_equal(a, b)
    assert params_to_bytes(q) == data
    buf = io.BytesIO()
    dump_params(p, buf)
    buf.seek(0)
    assert load_params(buf).n_parameters() == p.n_parameters()
