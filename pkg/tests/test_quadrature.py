import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from memdarcy import quadrature as qd
from memdarcy.cell import CellField, body_load, step
from memdarcy.errors import GridMismatch
from memdarcy.noise import KLNoise, sample_wiener_batch


def test_constant_integrand_exact():
    N, dt = 20, 0.05
    K = np.broadcast_to(np.eye(2), (N + 1, 2, 2))
    f = np.tile([2.0, -1.0], (N + 1, 1))
    for n in (0, 1, 7, N):
        assert np.abs(qd.convolve(K, f, n, dt) - n * dt * np.array([2.0, -1.0])).max() <= 1e-13


def test_linear_kernel_second_order():
    dt = 1e-2
    t = dt * np.arange(101)
    K = t[:, None, None] * np.eye(2)
    f = np.ones((101, 2))
    assert np.abs(qd.convolve(K, f, 100, dt) - 0.5).max() <= 1e-4


def test_trapezoid_error_order():
    errs = []
    for N in (20, 40):
        dt = 1.0 / N
        t = dt * np.arange(N + 1)
        errs.append(abs(qd.convolve(np.exp(-t), np.cos(t), N, dt) - _exact_exp_cos(1.0)))
    assert 3.5 < errs[0] / errs[1] < 4.5


def _exact_exp_cos(T):
    # int_0^T e^{-(T-s)} cos s ds
    return 0.5 * (np.cos(T) + np.sin(T) - np.exp(-T))


def test_endpoint_exclusion():
    N, dt = 10, 0.1
    K = np.ones(N + 1)
    f = np.arange(N + 1.0)
    full = qd.convolve(K, f, N, dt)
    hist = qd.convolve(K, f, N, dt, endpoint=False)
    assert abs(full - hist - 0.5 * dt * f[N]) < 1e-14


def test_short_inputs_rejected():
    with pytest.raises(GridMismatch):
        qd.convolve(np.ones(3), np.ones(5), 4, 0.1)
    with pytest.raises(GridMismatch):
        qd.stoch_convolve(np.ones(3), 1.0, np.ones(1), 2)


def test_shifted_and_increment_sums_against_loops(rng):
    N, dt = 12, 0.1
    K = rng.standard_normal((N + 1, 2, 2))
    f = rng.standard_normal((N + 1, 2, 5))
    for n in range(1, N + 1):
        ref = sum(dt * K[n - j + 1] @ f[j] for j in range(1, n + 1))
        assert np.allclose(qd.shifted_sum(K, f, n, dt), ref, rtol=0, atol=1e-13)
        ref = sum(((K[n - j + 1] - K[n - j]) @ f[j] for j in range(1, n)), np.zeros((2, 5)))
        assert np.allclose(qd.increment_sum(K, f, n), ref, rtol=0, atol=1e-13)


def test_shifted_sum_reproduces_forced_cell_trajectory(coarse_cell, coarse_table):
    """The aggregate of the implicit-Euler cell dynamics under a time-dependent
    body force is the shifted kernel sum, with no quadrature error."""
    space, op = coarse_cell
    dt, N = coarse_table.dt, 40
    t = dt * np.arange(N + 1)
    amp = np.column_stack([np.sin(3 * t), np.exp(-t)])
    s = CellField(np.zeros(space.n_u), np.zeros(space.n_p), 0.0)
    for n in range(1, N + 1):
        s = step(space, op, s, dt, bulk_force=body_load(space, op, amp[n]))
        agg = qd.shifted_sum(coarse_table.K1, amp, n, dt)
        assert np.abs(op.integral(s.u) - agg).max() <= 1e-12 * np.abs(agg).max()


def test_stoch_zero_path_and_telescoping(rng):
    N = 50
    dW = rng.standard_normal(N) * 0.1
    K = np.ones(N + 1)
    assert qd.stoch_convolve(K, 1.0, np.zeros(N), N) == 0.0
    W = np.concatenate([[0.0], np.cumsum(dW)])
    for n in range(N + 1):
        assert abs(qd.stoch_convolve(K, 1.0, dW, n) - W[n]) <= 1e-13


def test_stoch_isometry_monte_carlo():
    N, dt, R = 100, 1e-2, 10_000
    t = dt * np.arange(N + 1)
    dW = sample_wiener_batch(KLNoise((1.0,), seed=11), dt, N, range(R))[:, :, 0]
    K = np.exp(-t)
    X = dW @ K[N:0:-1]
    var = X.var(ddof=1)
    se = np.sqrt(np.mean((X**2 - np.mean(X**2)) ** 2) / R)
    exact = (1 - np.exp(-2)) / 2
    assert abs(var - exact) <= 3 * se + dt  # left-point bias is O(dt)
    disc = dt * np.sum(K[1:] ** 2)
    assert abs(var - disc) <= 3 * se


def test_fubini_examples(rng):
    N, dt = 30, 0.07
    t = dt * np.arange(N)
    a = 1 + t - 0.3 * t**2 + 0.1 * t**3
    b = 2 - t**2
    assert qd.fubini_check(a, b, dt) <= 1e-12 * qd.fubini_scale(a, b, dt)
    assert qd.fubini_check(np.zeros(N), b, dt) == 0.0
    assert qd.fubini_check(np.ones(N), np.ones(N), dt) == 0.0
    dW = rng.standard_normal(N) * np.sqrt(dt)
    one = np.ones(N)
    assert qd.stoch_fubini_check(one, one, dW, dt) <= 1e-12 * qd.stoch_fubini_scale(one, one, dW, dt)
    assert qd.stoch_fubini_check(a, b, np.zeros(N), dt) == 0.0


def test_fubini_random_trials(rng):
    for _ in range(100):
        N = int(rng.integers(2, 60))
        dt = float(rng.uniform(1e-3, 0.5))
        a, b, g = rng.standard_normal((3, N))
        dW = rng.standard_normal(N) * np.sqrt(dt)
        assert qd.fubini_check(a, b, dt) <= 1e-11 * qd.fubini_scale(a, b, dt)
        assert qd.stoch_fubini_check(a, g, dW, dt) <= 1e-11 * qd.stoch_fubini_scale(a, g, dW, dt)


def test_buffer_horizon():
    buf = qd.ConvolutionBuffer(2, (2,), 0.1)
    for _ in range(3):
        buf.append(np.ones(2))
    assert len(buf) == 3
    with pytest.raises(GridMismatch):
        buf.append(np.ones(2))
    assert np.allclose(buf.convolve(np.ones(3)), [0.2, 0.2])


samples = arrays(np.float64, 9, elements=st.floats(-10, 10))


@given(samples, samples, samples, st.floats(-3, 3))
def test_convolution_linear(K, f, g, c):
    dt = 0.1
    lhs = qd.convolve(K, f + c * g, 8, dt)
    rhs = qd.convolve(K, f, 8, dt) + c * qd.convolve(K, g, 8, dt)
    assert abs(lhs - rhs) <= 1e-10 * (1 + abs(lhs) + abs(rhs))
    lhs = qd.shifted_sum(K, f + c * g, 8, dt)
    rhs = qd.shifted_sum(K, f, 8, dt) + c * qd.shifted_sum(K, g, 8, dt)
    assert abs(lhs - rhs) <= 1e-10 * (1 + abs(lhs) + abs(rhs))


@given(samples, samples)
def test_shifted_sum_is_telescoped_increments(K, f):
    # sum_j dt K[n-j+1] f_j with f constant equals dt * sum_{m=1..n} K[m]
    n, dt = 8, 0.1
    c = np.full(9, f[0])
    assert abs(qd.shifted_sum(K, c, n, dt) - dt * f[0] * K[1:].sum()) <= 1e-10 * (1 + abs(f[0]) * np.abs(K).sum())
