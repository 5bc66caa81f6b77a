import numpy as np
import pytest
from scipy.optimize import brentq

from tofsi.mma import MmaState, kkt_residual, mma_update


def _run(f, g, x0, m, iters=50, tol=1e-9):
    st = MmaState(len(x0), m)
    x = np.asarray(x0, dtype=float)
    for k in range(1, iters + 1):
        f0, df0 = f(x)
        gv, dg = g(x)
        xn = mma_update(st, x, f0, df0, gv, dg)
        done = np.max(np.abs(xn - x)) < tol
        x = xn
        if done:
            break
    return x, k


def test_weighted_quadratic_with_budget():
    t = np.array([0.9, 0.8, 0.1, 0.5, 0.7])
    w = np.array([1.0, 2.0, 3.0, 1.0, 2.0])
    x, k = _run(lambda x: ((w * (x - t) ** 2).sum(), 2 * w * (x - t)),
                lambda x: (np.array([x.sum() - 2.0]), np.ones((1, 5))), np.full(5, 0.5), 1)
    lam = brentq(lambda l: np.clip(t - l / (2 * w), 0, 1).sum() - 2.0, 0.0, 100.0)
    exact = np.clip(t - lam / (2 * w), 0, 1)
    assert k <= 50
    assert np.max(np.abs(x - exact)) < 1e-4
    assert kkt_residual(x, 2 * w * (x - t), np.array([x.sum() - 2.0]), np.ones((1, 5)), np.array([lam])) < 1e-4


def test_linear_objective_on_disc():
    # min -x1 - x2  s.t. x1^2 + x2^2 <= 0.5 ; KKT point (0.5, 0.5) with lambda = 1
    x, k = _run(lambda x: (-x.sum(), -np.ones(2)),
                lambda x: (np.array([x @ x - 0.5]), 2 * x[None, :]), np.array([0.1, 0.3]), 1)
    assert k <= 50
    assert np.max(np.abs(x - 0.5)) < 1e-4
    assert kkt_residual(x, -np.ones(2), np.array([x @ x - 0.5]), 2 * x[None, :], np.array([1.0])) < 1e-4


def test_one_dimensional_bound():
    x, _ = _run(lambda x: (x[0] ** 2, 2 * x), lambda x: (np.array([0.2 - x[0]]), -np.ones((1, 1))),
                np.array([0.8]), 1)
    assert abs(x[0] - 0.2) < 1e-5


def test_move_limit_respected():
    st = MmaState(3, 1, move=0.05)
    x = np.array([0.3, 0.4, 0.5])
    xn = mma_update(st, x, 0.0, np.array([1.0, -1.0, 1.0]), [-1.0], np.zeros((1, 3)))
    assert np.all(np.abs(xn - x) <= 0.05 + 1e-12)


def test_dimension_and_parameter_checks():
    with pytest.raises(ValueError):
        MmaState(3, 1, move=0.0)
    st = MmaState(3, 1)
    with pytest.raises(ValueError):
        mma_update(st, np.zeros(3), 0.0, np.zeros(2), [0.0], np.zeros((1, 3)))
