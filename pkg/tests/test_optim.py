import math

import numpy as np
import pytest

from wcamnet.optim import NonFiniteGradient, RAdamState, lr_schedule, radam_step
from wcamnet.tensor import Tensor


def reference_radam(theta, grads, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """Scalar RAdam written from the published update rule, plain floats only."""
    m = v = 0.0
    rho_inf = 2 / (1 - beta2) - 1
    out = []
    for t, g in enumerate(grads, 1):
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        m_hat = m / (1 - beta1 ** t)
        rho = rho_inf - 2 * t * beta2 ** t / (1 - beta2 ** t)
        if rho > 4:
            v_hat = math.sqrt(v / (1 - beta2 ** t))
            r = math.sqrt((rho - 4) * (rho - 2) * rho_inf / ((rho_inf - 4) * (rho_inf - 2) * rho))
            theta -= lr * r * m_hat / (v_hat + eps)
        else:
            theta -= lr * m_hat
        out.append(theta)
    return out


def run(grads, lr=0.1, theta=0.0):
    p = {"w": Tensor(np.array([theta]))}
    state = RAdamState(lr=lr)
    path, branches = [], []
    for g in grads:
        p["w"].grad = np.array([g])
        branches.append(radam_step(p, state))
        path.append(float(p["w"].data[0]))
    return path, branches, state


def test_first_step_hand_trace():
    path, branches, _ = run([1.0])
    assert branches == [False]
    assert abs(path[0] + 0.1) < 1e-15


def test_five_step_trajectory_matches_reference():
    grads = [1.0, -0.5, 2.0, 0.25, -1.5]
    path, _, _ = run(grads, lr=0.1, theta=0.3)
    ref = reference_radam(0.3, grads, 0.1)
    assert max(abs(a - b) for a, b in zip(path, ref)) < 1e-10


def test_longer_trajectory_matches_reference():
    grads = list(np.random.default_rng(0).standard_normal(30))
    path, _, _ = run(grads, lr=0.01)
    ref = reference_radam(0.0, grads, 0.01)
    assert max(abs(a - b) for a, b in zip(path, ref)) < 1e-10


def test_branch_indices():
    _, branches, state = run([1.0] * 8)
    assert branches == [False] * 4 + [True] * 4
    assert [state.rho(t) > 4 for t in range(1, 6)] == [False] * 4 + [True]
    assert abs(state.rho(1) - 1.0) < 1e-9


def test_zero_gradient_never_moves():
    path, _, state = run([0.0] * 10, theta=0.7)
    assert path == [0.7] * 10 and state.t == 10


def test_elementwise_and_order_invariant(rng):
    g = rng.standard_normal(12)
    a = {"w": Tensor(np.zeros(12))}
    b = {"w": Tensor(np.zeros((3, 4)))}
    sa, sb = RAdamState(lr=0.05), RAdamState(lr=0.05)
    perm = rng.permutation(12)
    c = {"w": Tensor(np.zeros(12))}
    sc = RAdamState(lr=0.05)
    for _ in range(7):
        a["w"].grad, b["w"].grad, c["w"].grad = g, g.reshape(3, 4), g[perm]
        radam_step(a, sa), radam_step(b, sb), radam_step(c, sc)
    np.testing.assert_array_equal(a["w"].data, b["w"].data.ravel())
    np.testing.assert_array_equal(a["w"].data[perm], c["w"].data)


def test_second_moment_nonnegative(rng):
    p = {"w": Tensor(np.zeros(5))}
    state = RAdamState()
    for _ in range(6):
        p["w"].grad = rng.standard_normal(5)
        radam_step(p, state)
    assert (state.v["w"] >= 0).all()


def test_deterministic(rng):
    g = rng.standard_normal((4, 4))
    outs = []
    for _ in range(2):
        p = {"w": Tensor(np.ones((4, 4)))}
        state = RAdamState(lr=0.01)
        for _ in range(6):
            p["w"].grad = g
            radam_step(p, state)
        outs.append(p["w"].data.tobytes())
    assert outs[0] == outs[1]


@pytest.mark.parametrize("bad", [np.nan, np.inf])
def test_non_finite_rejected_without_mutation(bad):
    p = {"a": Tensor(np.ones(2)), "b": Tensor(np.ones(2))}
    state = RAdamState()
    p["a"].grad = np.ones(2)
    p["b"].grad = np.array([1.0, bad])
    with pytest.raises(NonFiniteGradient, match="b"):
        radam_step(p, state)
    assert state.t == 0 and not state.m
    np.testing.assert_array_equal(p["a"].data, 1.0)


def test_params_without_grad_skipped():
    p = {"a": Tensor(np.ones(2)), "b": Tensor(np.ones(2))}
    p["a"].grad = np.ones(2)
    radam_step(p, RAdamState(lr=0.1))
    np.testing.assert_array_equal(p["b"].data, 1.0)
    assert p["a"].data[0] < 1.0


@pytest.mark.parametrize("epoch,expected", [(0, 1e-4), (99, 1e-4), (100, 1e-5), (250, 1e-6)])
def test_step_schedule(epoch, expected):
    assert math.isclose(lr_schedule(epoch, 1e-4), expected, rel_tol=1e-12)


def test_single_and_constant_modes():
    assert math.isclose(lr_schedule(250, 1e-4, mode="single"), 1e-5, rel_tol=1e-12)
    assert lr_schedule(250, 1e-4, mode="constant") == 1e-4
    with pytest.raises(ValueError):
        lr_schedule(0, 1e-4, mode="cosine")
