"""Gradient and optimizer tests for the autodiff engine.

Every differentiable operator is checked against central finite
differences; the FD oracle below is the reference implementation and is
deliberately independent of the engine's vjp closures.
"""

import numpy as np
import pytest

from expredit import autodiff as ad
from expredit.errors import ValidationError

RNG = np.random.default_rng(20260817)


def fd_grad(f, x, h=1e-5):
    """Central finite differences of scalar-valued f at array x."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        gf[i] = (fp - fm) / (2.0 * h)
    return g


def rel_err(a, b):
    denom = max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-10)
    return np.max(np.abs(a - b)) / denom


def check_op(build, *shapes, tol=1e-6):
    """build(*nodes) -> output node. Reduces non-scalar outputs with a
    fixed random weighting so the FD oracle sees a scalar function."""
    xs = [RNG.normal(size=s) * 0.7 + 0.1 for s in shapes]
    probe = None

    def run(*arrays):
        nonlocal probe
        nodes = [ad.leaf(a) for a in arrays]
        out = build(*nodes)
        if out.value.shape == ():
            return out, nodes
        if probe is None:
            probe = RNG.normal(size=out.value.shape)
        flatp = ad.const(probe.reshape(-1))
        out = ad.dot(ad.flatten(out), flatp)
        return out, nodes

    out, nodes = run(*xs)
    grads = ad.backward(out)
    analytic = [nodes[i].grad for i in range(len(xs))]

    for i in range(len(xs)):
        def f(xi, i=i):
            args = [x.copy() for x in xs]
            args[i] = xi
            o, _ = run(*args)
            return float(o.value)

        numeric = fd_grad(f, xs[i].copy())
        assert rel_err(analytic[i], numeric) < tol, f"operand {i}"


class TestOperatorGradients:
    def test_add(self):
        check_op(ad.add, (3, 4), (3, 4))

    def test_mul(self):
        check_op(ad.mul, (5,), (5,))

    def test_div(self):
        check_op(ad.div, (4,), (4,))

    def test_scale(self):
        check_op(lambda a: ad.scale(a, -2.5), (3, 2))

    def test_matmul_2d_2d(self):
        check_op(ad.matmul, (3, 4), (4, 2))

    def test_matmul_1d_2d(self):
        check_op(ad.matmul, (4,), (4, 3))

    def test_matmul_2d_1d(self):
        check_op(ad.matmul, (3, 4), (4,))

    def test_tanh(self):
        check_op(ad.tanh, (6,))

    def test_softmax_rows(self):
        check_op(ad.softmax_rows, (4, 5))

    def test_sum_all(self):
        check_op(ad.sum_all, (3, 3))

    def test_mean_rows(self):
        check_op(ad.mean_rows, (5, 3))

    def test_dot(self):
        check_op(ad.dot, (7,), (7,))

    def test_l2norm(self):
        check_op(ad.l2norm, (4, 3))

    def test_rowscale(self):
        check_op(ad.rowscale, (4, 3), (4,))

    def test_outer(self):
        check_op(ad.outer, (3,), (5,))

    def test_transpose(self):
        check_op(ad.transpose, (3, 4))

    def test_flatten(self):
        check_op(ad.flatten, (3, 4))

    def test_concat(self):
        check_op(ad.concat, (3,), (4,))

    def test_select_row(self):
        check_op(lambda a: ad.select_row(a, 2), (4, 3))


def test_square_gradient_exact():
    # d/dx sum(x*x) = 2x, exactly representable
    x = ad.leaf(np.array([1.0, 2.0, 3.0]))
    loss = ad.sum_all(ad.mul(x, x))
    ad.backward(loss)
    assert np.array_equal(x.grad, np.array([2.0, 4.0, 6.0]))


def test_diamond_graph_accumulates_once():
    # z = y + y with y = x*x gives dz/dx = 4x
    x = ad.leaf(np.array([3.0]))
    y = ad.mul(x, x)
    z = ad.sum_all(ad.add(y, y))
    ad.backward(z)
    assert np.array_equal(x.grad, np.array([12.0]))


def cosine_node(a, b):
    return ad.div(ad.dot(a, b), ad.mul(ad.l2norm(a), ad.l2norm(b)))


def test_cosine_composite_fd():
    a = np.array([0.2, -0.1, 0.05, 0.3])
    b = np.array([0.1, 0.2, -0.3, 0.05])

    na, nb = ad.leaf(a.copy()), ad.leaf(b.copy())
    out = cosine_node(na, nb)
    ad.backward(out)

    def f_a(x):
        o = cosine_node(ad.leaf(x), ad.const(b))
        return float(o.value)

    def f_b(x):
        o = cosine_node(ad.const(a), ad.leaf(x))
        return float(o.value)

    assert rel_err(na.grad, fd_grad(f_a, a.copy())) < 1e-6
    assert rel_err(nb.grad, fd_grad(f_b, b.copy())) < 1e-6


def test_softmax_rows_sum_to_one():
    x = RNG.normal(size=(8, 6)) * 5
    y = ad.softmax_rows(ad.const(x)).value
    assert np.max(np.abs(y.sum(axis=1) - 1.0)) < 1e-12


def test_softmax_shift_invariance():
    x = RNG.normal(size=(5, 7))
    y0 = ad.softmax_rows(ad.const(x)).value
    y1 = ad.softmax_rows(ad.const(x + 123.456)).value
    assert np.max(np.abs(y0 - y1)) < 1e-10


def test_l2norm_zero_subgradient():
    x = ad.leaf(np.zeros((3, 2)))
    ad.backward(ad.l2norm(x))
    assert np.array_equal(x.grad, np.zeros((3, 2)))


def test_sum_gradient_is_ones():
    x = ad.leaf(RNG.normal(size=(4, 2)))
    ad.backward(ad.sum_all(x))
    assert np.array_equal(x.grad, np.ones((4, 2)))


def test_backward_linearity_over_loss_sum():
    x_val = RNG.normal(size=(4,))

    def grad_of(build):
        x = ad.leaf(x_val.copy())
        ad.backward(build(x))
        return x.grad

    f = lambda x: ad.dot(x, x)
    g = lambda x: ad.l2norm(ad.tanh(x))
    combined = grad_of(lambda x: ad.add(f(x), g(x)))
    separate = grad_of(f) + grad_of(g)
    assert np.max(np.abs(combined - separate)) < 1e-12


def test_backward_deterministic():
    xs = [ad.leaf(RNG.normal(size=(4, 4))) for _ in range(3)]
    y = ad.matmul(ad.add(xs[0], xs[1]), xs[2])
    loss = ad.l2norm(ad.tanh(y))
    ad.backward(loss)
    first = [x.grad.copy() for x in xs]
    ad.backward(loss)
    for a, x in zip(first, xs):
        assert np.array_equal(a, x.grad)


def test_non_scalar_loss_rejected():
    x = ad.leaf(np.ones(3))
    with pytest.raises(ValidationError):
        ad.backward(ad.tanh(x))


def test_cycle_rejected():
    x = ad.leaf(np.ones(()))
    y = ad.scale(x, 2.0)
    x.parents = (y,)  # forge a cycle by hand
    x.vjp = lambda g: (g,)
    with pytest.raises(ValidationError):
        ad.backward(y)


def test_shape_mismatch_rejected():
    with pytest.raises(ValidationError):
        ad.add(ad.const(np.ones(3)), ad.const(np.ones(4)))
    with pytest.raises(ValidationError):
        ad.matmul(ad.const(np.ones((2, 3))), ad.const(np.ones((2, 3))))


class TestAdam:
    def test_first_step_frozen_value(self):
        # f(x) = x^2 at x=1: grad 2. With lr=1e-3 the bias-corrected first
        # step equals lr * g / (|g| + eps), i.e. very nearly lr.
        p = {"x": np.array([1.0])}
        opt = ad.Adam(p, lr=1e-3)
        opt.step({"x": np.array([2.0])})
        expected = 1.0 - 1e-3 * 2.0 / (2.0 + 1e-8)
        assert abs(p["x"][0] - expected) < 1e-15

    def test_zero_gradient_is_noop(self):
        arr = RNG.normal(size=(3, 2))
        p = {"x": arr.copy()}
        opt = ad.Adam(p)
        opt.step({"x": np.zeros((3, 2))})
        assert np.array_equal(p["x"], arr)

    def test_quadratic_convergence(self):
        # minimize (x-2)^2 from the origin
        p = {"x": np.array([0.0])}
        opt = ad.Adam(p, lr=0.1)
        for _ in range(500):
            g = 2.0 * (p["x"] - 2.0)
            opt.step({"x": g})
        assert abs(p["x"][0] - 2.0) < 1e-3

    def test_constant_gradient_moves_against_sign(self):
        p = {"x": np.array([0.5, -0.5])}
        opt = ad.Adam(p, lr=1e-2)
        g = np.array([3.0, -0.7])
        for _ in range(20):
            before = p["x"].copy()
            opt.step({"x": g})
            moved = p["x"] - before
            assert np.all(np.sign(moved) == -np.sign(g))

    def test_missing_grad_leaves_param(self):
        p = {"a": np.array([1.0]), "b": np.array([2.0])}
        opt = ad.Adam(p)
        opt.step({"a": np.array([1.0])})
        assert p["b"][0] == 2.0
