import numpy as np
import pytest

from stabprior import gradengine as gd
from stabprior.gradengine import GradientError, Param, ParamSet, Tape, forward_and_backward
from stabprior.numerics import make_rng


def grad_of(fn, x):
    tape = Tape()
    node = tape.leaf(np.asarray(x, dtype=np.float64))
    out = fn(node)
    return tape.backward(out)[node.id], out.value


def fd(fn_value, x, h=1e-6):
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[idx] += h
        xm[idx] -= h
        g[idx] = (fn_value(xp) - fn_value(xm)) / (2 * h)
    return g


def check_op(build, x, rtol=1e-6):
    def value(v):
        t = Tape(record_grad=False)
        return float(build(t.constant(v)).value)

    g, _ = grad_of(build, x)
    np.testing.assert_allclose(g, fd(value, x), rtol=rtol, atol=1e-8)


def test_square_of_three():
    g, v = grad_of(lambda w: gd.sum(gd.square(w)), 3.0)
    assert v == 9.0 and g == 6.0


def test_kl_mean_gradient():
    tape = Tape()
    mu = tape.leaf(np.array([2.0]))
    sigma = tape.leaf(np.array([1.0]))
    kl = gd.kl_gaussian(mu, sigma, np.zeros(1), np.ones(1))
    assert tape.backward(kl)[mu.id][0] == 2.0


def test_stop_gradient_product():
    g, _ = grad_of(lambda w: gd.sum(w * gd.stop_gradient(w)), np.array([2.0]))
    assert g[0] == 2.0


def test_stop_gradient_blocks_branch():
    tape = Tape()
    w = tape.leaf(np.array([1.5]))
    out = gd.sum(gd.stop_gradient(gd.square(w)))
    grads = tape.backward(out)
    assert grads[w.id] is None


rng = make_rng(4)
A = rng.standard_normal((3, 4))
B = rng.standard_normal((4, 2))


@pytest.mark.parametrize("name,build,x", [
    ("add-broadcast", lambda a: gd.sum(gd.square(a + np.arange(4.0))), A),
    ("sub", lambda a: gd.sum(gd.square(1.0 - a)), A),
    ("mul-broadcast", lambda a: gd.sum(a * np.arange(1.0, 5.0)), A),
    ("matmul-left", lambda a: gd.sum(gd.square(a @ B)), A),
    ("matmul-right", lambda b: gd.sum(gd.square(gd.matmul(A, b))), B),
    ("relu", lambda a: gd.sum(gd.square(gd.relu(a))), A),
    ("sqrt", lambda a: gd.sum(gd.sqrt(gd.square(a) + 0.5)), A),
    ("exp-log", lambda a: gd.sum(gd.log(gd.exp(a) + 1.0)), A),
    ("softplus", lambda a: gd.sum(gd.softplus(a)), A),
    ("sum-axis", lambda a: gd.sum(gd.square(gd.sum(a, axis=0))), A),
    ("log-softmax", lambda a: gd.sum(gd.log_softmax(a) * np.arange(12.0).reshape(3, 4)), A),
    ("categorical", lambda a: gd.categorical_loglik(a, np.array([0, 3, 1])), A),
    ("gaussian", lambda a: gd.gaussian_loglik(a, np.ones((3, 4)), 0.7), A),
    ("neg", lambda a: gd.sum(gd.square(-a)), A),
])
def test_op_gradients(name, build, x):
    check_op(build, x)


def test_gaussian_product_partials():
    mp, sp = rng.standard_normal((3, 4)), np.exp(rng.standard_normal((3, 4)))
    sq = np.exp(rng.standard_normal((3, 4)))
    w1, w2 = rng.standard_normal((3, 4)), rng.standard_normal((3, 4))

    def build_mu(m):
        mu_t, s_t = gd.gaussian_product(m, m.tape.constant(sq), mp, sp)
        return gd.sum(mu_t * w1 + s_t * w2)

    def build_sigma(s):
        mu_t, s_t = gd.gaussian_product(s.tape.constant(A), s, mp, sp)
        return gd.sum(mu_t * w1 + s_t * w2)

    check_op(build_mu, A)
    check_op(build_sigma, sq)


def test_kl_partials():
    mp, sp = rng.standard_normal((3, 4)), np.exp(rng.standard_normal((3, 4)))
    sq = np.exp(rng.standard_normal((3, 4)))
    check_op(lambda m: gd.kl_gaussian(m, m.tape.constant(sq), mp, sp), A)
    check_op(lambda s: gd.kl_gaussian(s.tape.constant(A), s, mp, sp), sq)


def test_relu_derivative_zero_at_zero():
    g, _ = grad_of(lambda a: gd.sum(gd.relu(a)), np.array([0.0, 1.0, -1.0]))
    np.testing.assert_array_equal(g, [0.0, 1.0, 0.0])


def test_sqrt_negative_asserts():
    tape = Tape()
    with pytest.raises(AssertionError):
        gd.sqrt(tape.leaf(np.array([-1.0])))


def test_nonfinite_loss_names_first_bad_node():
    tape = Tape()
    x = tape.leaf(np.array([0.0, 1.0]))
    y = gd.log(x)
    loss = gd.sum(y * 2.0)
    with pytest.raises(GradientError, match="log"):
        tape.backward(loss)


def test_nonfinite_gradient_raises():
    tape = Tape()
    z = tape.leaf(np.array([1e-320]))
    loss = gd.sum(gd.log(z))
    assert np.isfinite(loss.value)
    with pytest.raises(GradientError, match="non-finite gradient"):
        tape.backward(loss)


def test_backward_is_replayable():
    tape = Tape()
    a = tape.leaf(A)
    out = gd.sum(gd.square(gd.relu(a @ B)))
    g1 = tape.backward(out)[a.id]
    g2 = tape.backward(out)[a.id]
    np.testing.assert_array_equal(g1, g2)


def test_forward_and_backward_fills_params():
    params = ParamSet([Param(0, "weight-mu", A.copy()), Param(0, "bias", np.ones(2))])
    tape = Tape()
    w = tape.leaf(None, params[0])
    b = tape.leaf(None, params[1])
    loss = gd.sum(gd.square(w @ B + b))
    value = forward_and_backward(tape, loss, params)
    assert value == pytest.approx(float(np.sum((A @ B + 1) ** 2)))
    np.testing.assert_allclose(params[0].grad, 2 * (A @ B + 1) @ B.T)
    np.testing.assert_allclose(params[1].grad, 2 * (A @ B + 1).sum(axis=0))
    params.zero_grad()
    assert not params[0].grad.any()
    assert params.by_role("bias") == [params[1]]


def test_no_grad_tape_records_no_vjp():
    tape = Tape(record_grad=False)
    a = tape.leaf(A)
    out = gd.sum(gd.square(a))
    assert all(n.vjp is None for n in tape.nodes)
    assert out.value == pytest.approx(np.sum(A * A))
