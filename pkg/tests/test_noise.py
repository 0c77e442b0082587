import numpy as np
import pytest
from hypothesis import given, strategies as st

from memdarcy.errors import InvalidSpec
from memdarcy.noise import (
    CHANNEL_W1, CHANNEL_W2, EnsembleSummary, KLNoise, NoiseOperators, boundary_gram, boundary_modes, bulk_modes,
    ensemble_summary, g22_loads, ito_isometry_oracle, ou_discrete_variance, ou_euler_paths, ou_variance_oracle,
    read_ensemble_csv, read_path_csv, sample_wiener, sample_wiener_batch, solve_w3, w3_aggregate_kernel,
    w3_impulse, write_ensemble_csv, write_path_csv,
)
from memdarcy import quadrature as qd


def test_invalid_specs():
    with pytest.raises(InvalidSpec):
        KLNoise((0.0, 0.0))
    with pytest.raises(InvalidSpec):
        KLNoise((1.0, 0.0))
    with pytest.raises(InvalidSpec):
        KLNoise((0.5, 1.0))
    with pytest.raises(InvalidSpec):
        KLNoise((1.0,), seed=-1)


def test_increment_variance_band():
    p = sample_wiener(KLNoise((1.0,), seed=3), 1e-2, 10_000)
    v = p.dW[:, 0].var(ddof=1)
    assert 0.0094 <= v <= 0.0106
    assert np.array_equal(p.W[1:, 0], np.cumsum(p.dW[:, 0]))


def test_determinism_and_independence():
    spec = KLNoise.power_law(4, seed=99)
    a = sample_wiener(spec, 0.1, 50, stream=5)
    b = sample_wiener(spec, 0.1, 50, stream=5)
    assert np.array_equal(a.dW, b.dW)
    c = sample_wiener(spec, 0.1, 50, stream=6)
    d = sample_wiener(KLNoise.power_law(4, seed=99, channel=CHANNEL_W2), 0.1, 50, stream=5)
    assert not np.array_equal(a.dW, c.dW) and not np.array_equal(a.dW, d.dW)
    # batch order does not matter
    batch = sample_wiener_batch(spec, 0.1, 50, [6, 5])
    assert np.array_equal(batch[1], a.dW)


def test_mode_scaling():
    spec = KLNoise.power_law(3, decay=2.0, seed=1)
    Z = sample_wiener_batch(spec, 0.5, 200, range(40)).reshape(-1, 3)
    v = Z.var(axis=0)
    assert np.allclose(v / (spec.lam * 0.5), 1.0, atol=0.1)


def test_bulk_modes_orthonormal():
    n = 200
    x = (np.arange(n) + 0.5) / n
    X, Y = np.meshgrid(x, x)
    pts = np.stack([X, Y], axis=-1)
    M = bulk_modes(8, pts).reshape(8, -1)
    G = M @ M.T / n**2
    assert np.abs(G - np.eye(8)).max() < 1e-10


def test_boundary_modes_orthonormal(coarse_cell):
    space, _ = coarse_cell
    m = boundary_modes(space, 5)
    assert np.abs(boundary_gram(space, m) - np.eye(5)).max() < 1e-12


def test_ou_oracle_examples():
    assert ou_variance_oracle(1.0, 1.0, 0.0) == 0.0
    assert abs(ou_variance_oracle(2.0, 3.0, 10.0) - 9 / 4) <= 1e-8
    assert abs(ou_variance_oracle(1.0, 1.0, 1.0) - 0.432332) < 1e-6
    with pytest.raises(InvalidSpec):
        ou_variance_oracle(0.0, 1.0, 1.0)


def test_ou_discrete_variance_matches_recursion():
    mu, g, dt, n = 1.5, 0.7, 0.1, 13
    r = 1 / (1 + mu * dt)
    v = 0.0
    for _ in range(n):
        v = r**2 * (v + g**2 * dt)
    assert abs(ou_discrete_variance(mu, g, dt, n) - v) <= 1e-14


def test_ou_monte_carlo():
    Z = ou_euler_paths(1.0, 1.0, 1e-3, 1000, 4000, seed=2)
    x = Z[:, -1]
    se = np.sqrt(np.mean((x**2 - np.mean(x**2)) ** 2) / len(x))
    assert abs(x.var(ddof=1) - ou_variance_oracle(1.0, 1.0, 1.0)) <= 3 * se


def test_zero_g22_gives_zero(coarse_cell):
    space, op = coarse_cell
    g22 = np.zeros((2, 3))
    dW = np.random.default_rng(0).standard_normal((10, 3))
    assert np.abs(solve_w3(space, op, g22, dW, 0.05).U).max() == 0.0


def test_w3_impulse_superposition(coarse_cell):
    space, op = coarse_cell
    ops = NoiseOperators.default(J2=3)
    dW = np.random.default_rng(4).standard_normal((12, 3)) * 0.1
    U = solve_w3(space, op, ops.g22, dW, 0.05).U[0]
    V = w3_impulse(space, op, ops.g22, 0.05, 12)
    for n in range(13):
        ref = sum((V[n - k] @ dW[k] for k in range(n)), np.zeros(space.n_u))
        assert np.abs(U[n] - ref).max() <= 1e-12 * max(np.abs(U).max(), 1e-300)
    H = w3_aggregate_kernel(space, op, ops.g22, 0.05, 12)
    for n in (3, 12):
        assert np.allclose(qd.stoch_convolve(H, 1.0, dW, n), op.integral(U[n]), rtol=0, atol=1e-13)
    assert np.all([op.divergence_defect(u) <= 1e-10 for u in U[1:]])


def test_w3_mean_zero_and_ito_isometry(coarse_cell):
    space, op = coarse_cell
    ops = NoiseOperators.default(J2=2)
    spec = KLNoise.power_law(2, seed=8, channel=CHANNEL_W2)
    N, dt, R = 20, 0.05, 500
    dW = sample_wiener_batch(spec, dt, N, range(R))
    tr = solve_w3(space, op, ops.g22, dW, dt)
    I = np.einsum("cu,ru->rc", op.L, tr.U[:, -1])
    se = I.std(axis=0, ddof=1) / np.sqrt(R)
    assert np.all(np.abs(I.mean(axis=0)) <= 3 * se)
    UT = tr.U[:, -1]
    E_T = np.einsum("ru,ru->r", UT, (op.M @ UT.T).T)
    orc = ito_isometry_oracle(space, op, ops.g22, spec.lam, dt, N)
    se_E = E_T.std(ddof=1) / np.sqrt(R)
    assert abs(E_T.mean() - orc[-1]) <= 3 * se_E
    assert orc[0] == 0.0 and np.all(np.diff(orc) >= 0)


def test_hs_norms():
    ops = NoiseOperators.default(J1=3, J2=2, g1_gain=2.0, g21_gain=1.0, g22_gain=3.0)
    lam = np.array([1.0, 0.5, 0.25])
    hs = ops.hs_norms(lam, lam[:2], 4)
    assert np.allclose(hs[:, 0], 4 * lam.sum())
    assert np.allclose(hs[:, 1], 1.5)
    assert np.allclose(hs[:, 2], 9.0)


def test_path_and_ensemble_files_round_trip(tmp_path):
    p = sample_wiener(KLNoise.power_law(3, seed=5), 0.1, 7)
    write_path_csv(p, tmp_path / "p.csv")
    t, dW = read_path_csv(tmp_path / "p.csv")
    assert np.array_equal(dW, p.dW)
    E = np.random.default_rng(0).random((6, 8))
    s = ensemble_summary(np.linspace(0, 1, 8), E)
    write_ensemble_csv(s, tmp_path / "e.csv", quantity="u_l2")
    lines = (tmp_path / "e.csv").read_text().splitlines()
    assert "t,mean_E,var_E,stderr" in lines
    back = read_ensemble_csv(tmp_path / "e.csv")
    assert back.n_paths == 6 and back.extra["quantity"] == "u_l2"
    for name in ("t", "mean", "var", "stderr"):
        assert np.array_equal(getattr(back, name), getattr(s, name))


@given(st.integers(0, 2**64 - 1), st.integers(0, 1000))
def test_streams_reproducible(seed, stream):
    spec = KLNoise((1.0, 0.5), seed=seed)
    assert np.array_equal(sample_wiener(spec, 0.1, 5, stream).dW, sample_wiener(spec, 0.1, 5, stream).dW)
