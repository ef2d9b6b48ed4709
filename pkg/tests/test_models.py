import numpy as np
import pytest

from _oracles import central_difference, rel_err
from kdro.models import (BinaryCrossEntropy, Custom, HingeShift, TwoLayerNet, UncertainLeastSquares, eval_loss,
                         grad_theta)


def test_hinge_shift_values():
    h = HingeShift()
    assert eval_loss(h, [0.0], [[0.0]])[0] == 0.0
    assert eval_loss(h, [0.0], [[2.0]])[0] == 1.0
    assert eval_loss(h, [0.5], [[-2.0]])[0] == pytest.approx(0.5)


def test_hinge_shift_kink_subgradient_is_zero():
    h = HingeShift()
    assert grad_theta(h, [0.0], [[1.0]])[0, 0] == 0.0
    assert grad_theta(h, [0.0], [[-1.0]])[0, 0] == 0.0
    assert grad_theta(h, [0.0], [[2.0]])[0, 0] == 1.0
    assert grad_theta(h, [0.0], [[-2.0]])[0, 0] == -1.0


def test_hinge_shift_multidim():
    h = HingeShift(dim=2)
    assert eval_loss(h, [0.0, 0.0], [[3.0, 4.0]])[0] == pytest.approx(4.0)
    assert np.allclose(grad_theta(h, [0.0, 0.0], [[3.0, 4.0]]), [[0.6, 0.8]])


def test_least_squares_constant_is_ols():
    rng = np.random.default_rng(0)
    A0, b0 = rng.normal(size=(6, 3)), rng.normal(size=6)
    A = np.stack([A0, np.zeros_like(A0)])
    b = np.stack([b0, np.zeros_like(b0)])
    ls = UncertainLeastSquares(A, b)
    theta = rng.normal(size=3)
    xi = rng.normal(size=(4, 1))
    r = A0 @ theta - b0
    assert np.allclose(ls.value(theta, xi), r @ r)
    assert np.allclose(ls.grad_theta(theta, xi), 2 * A0.T @ r)
    assert np.allclose(ls.erm(xi), np.linalg.lstsq(A0, b0, rcond=None)[0])


def test_least_squares_erm_is_stationary():
    rng = np.random.default_rng(1)
    ls = UncertainLeastSquares.random(8, 3, 2, rng)
    xi = rng.uniform(-1, 1, size=(10, 2))
    th = ls.erm(xi)
    assert np.linalg.norm(ls.grad_theta(th, xi).mean(0)) <= 1e-10


def _fd_check(loss, theta, xi, tol=1e-4):
    for row in xi:
        g = loss.grad_theta(theta, row[None, :])[0]
        fd = central_difference(lambda t: loss.value(t, row[None, :])[0], theta)
        assert rel_err(g, fd) <= tol


def test_gradients_match_finite_differences():
    rng = np.random.default_rng(2)
    ls = UncertainLeastSquares.random(5, 3, 2, rng)
    _fd_check(ls, rng.normal(size=3), rng.normal(size=(20, 2)))
    # hinge away from its kink
    h = HingeShift(dim=2)
    xi = rng.uniform(-3, 3, size=(20, 2))
    th = rng.normal(size=2)
    xi = xi[np.abs(np.linalg.norm(xi + th, axis=1) - 1) > 1e-2]
    _fd_check(h, th, xi)
    net = TwoLayerNet(3, hidden=5)
    bce = BinaryCrossEntropy(net)
    xy = np.column_stack([rng.normal(size=(20, 3)), rng.integers(0, 2, size=20)])
    _fd_check(bce, net.init(rng), xy)


def test_bce_input_gradient_and_mean_grad():
    rng = np.random.default_rng(3)
    bce = BinaryCrossEntropy(TwoLayerNet(2, hidden=4))
    th = bce.model.init(rng)
    xy = np.column_stack([rng.normal(size=(7, 2)), rng.integers(0, 2, size=7)])
    assert np.allclose(bce.mean_grad(th, xy), bce.grad_theta(th, xy).mean(0))
    gi = bce.grad_input(th, xy)
    for i in range(7):
        fd = central_difference(lambda x: bce.value(th, np.append(x, xy[i, -1])[None, :])[0], xy[i, :-1])
        assert rel_err(gi[i], fd) <= 1e-4


def test_convexity_midpoint():
    rng = np.random.default_rng(4)
    ls = UncertainLeastSquares.random(4, 2, 1, rng)
    h = HingeShift()
    for loss, p in ((ls, 2), (h, 1)):
        for _ in range(100):
            t1, t2 = rng.normal(size=p) * 2, rng.normal(size=p) * 2
            xi = rng.uniform(-3, 3, size=(1, 1))
            mid = loss.value((t1 + t2) / 2, xi)[0]
            assert mid <= 0.5 * (loss.value(t1, xi)[0] + loss.value(t2, xi)[0]) + 1e-12


def test_custom_loss_reports_bad_point():
    c = Custom(lambda th, xi: np.where(xi[:, 0] > 1, np.inf, xi[:, 0] ** 2), lambda th, xi: np.zeros((len(xi), 1)))
    assert np.allclose(c.value([0.0], [[0.5], [1.0]]), [0.25, 1.0])
    with pytest.raises(ValueError, match=r"xi=\[2.0\]"):
        c.value([0.0], [[0.5], [2.0]])


def test_flags():
    assert HingeShift().convex
    assert not BinaryCrossEntropy(TwoLayerNet(2)).convex
