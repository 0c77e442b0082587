import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from memdarcy import macro as mc
from memdarcy.cell import assemble, leray_project
from memdarcy.errors import KernelHorizonExceeded, NonSeparableInitialData, NotComputed, SingularOperator
from memdarcy.geometry import HoleSpec, build_cell_mesh
from memdarcy.kernels import constant_kernels
from memdarcy.noise import KLNoise, NoiseOperators, sample_wiener, w3_aggregate_kernel

SCHEMES = ("semigroup", "trapezoid")


def _run(table, n, T, forcing=None, scheme="semigroup", **kw):
    pr = mc.MacroProblem(table, n, T, 1, scheme=scheme, **kw)
    grid = mc.problem_grid(pr)
    pr.forcing = forcing(grid) if forcing is not None else None
    return mc.run_macro(pr, grid)


def _assert_constraints(st_):
    g = st_.grid
    for n in range(st_.index + 1):
        un = st_.u[n]
        assert np.abs(g.div(un)).max() <= 1e-8 * max(g.l2_norm(un), 1e-300) or g.l2_norm(un) < 1e-300
    assert abs(np.mean(st_.P[st_.index])) <= 1e-12 * max(np.abs(st_.P[st_.index]).max(), 1.0)


def test_operators_dual_and_fluxless():
    g = mc.make_grid(7)
    assert abs(g.D + g.G.T).max() == 0.0
    # no boundary faces: the summed divergence of any field vanishes identically
    assert np.abs(g.G @ np.ones(g.n_cells)).max() == 0.0
    un = np.random.default_rng(0).standard_normal(g.n_faces)
    assert abs(np.sum(g.div(un))) <= 1e-12 * np.abs(g.div(un)).sum()


def test_singular_coefficient_rejected():
    with pytest.raises(SingularOperator):
        mc.assemble_macro(8, np.diag([1.0, 0.0]))
    with pytest.raises(SingularOperator):
        mc.assemble_macro(8, np.array([[1.0, 0.5], [0.0, 1.0]]))


def test_zero_data_zero_solution(coarse_table):
    s = _run(coarse_table, 8, 0.2)
    assert np.abs(s.u).max() == 0.0 and np.abs(s.P).max() == 0.0


@pytest.mark.parametrize("scheme", SCHEMES)
def test_uniform_forcing_closed_box(scheme):
    table = constant_kernels(np.eye(2), 1.0, 0.05)
    s = _run(table, 16, 1.0, lambda g: (lambda n: mc.uniform_field(g, (1.0, 0.0))), scheme)
    x = s.grid.centers()[:, 0]
    for n in range(len(s.t)):
        assert np.abs(s.P[n] - s.t[n] * (x - 0.5)).max() <= 1e-10
        assert np.abs(s.u[n]).max() <= 1e-10


@pytest.mark.parametrize("scheme", SCHEMES)
def test_solenoidal_forcing_grows_linearly(scheme):
    table = constant_kernels(np.eye(2), 0.5, 0.05)
    s = _run(table, 64, 0.5, lambda g: (lambda n, F=g.sample(mc.curl_psi_exact): F), scheme)
    g = s.grid
    f = g.normal(g.sample(mc.curl_psi_exact))
    for n in range(1, len(s.t)):
        assert g.l2_norm(s.u[n] - s.t[n] * f) <= 0.02 * g.l2_norm(s.t[n] * f)
    assert g.cell_l2(s.P[-1]) <= 0.02 * g.l2_norm(s.t[-1] * f)
    # the discrete curl is exactly solenoidal, so the pressure vanishes
    d = _run(table, 16, 0.5, lambda g: (lambda n, F=mc.curl_field(g): F), scheme)
    assert np.abs(d.P).max() <= 1e-10
    _assert_constraints(s)


def test_semigroup_uniform_forcing_with_disk_kernels(coarse_table):
    dt = coarse_table.dt
    amp = lambda n: 1.0 + np.sin(5 * n * dt)
    s = _run(coarse_table, 8, 0.6, lambda g: (lambda n: amp(n) * mc.uniform_field(g, (1.0, 0.0))))
    x = s.grid.centers()[:, 0]
    integral = np.concatenate([[0.0], np.cumsum([dt * amp(n) for n in range(1, len(s.t))])])
    for n in range(len(s.t)):
        assert np.abs(s.P[n] - integral[n] * (x - 0.5)).max() <= 1e-12
        assert np.abs(s.u[n]).max() <= 1e-12


def test_terms_sum_to_velocity(coarse_table):
    s = _run(coarse_table, 8, 0.3, lambda g: (lambda n: mc.curl_field(g) + (n * 0.01) * mc.uniform_field(g, (0.3, 1.0))))
    for n in (0, 5, s.index):
        u, parts = mc.evaluate_velocity(s, n, terms=True)
        assert set(parts) == set(mc.TERM_NAMES)
        assert np.abs(sum(parts.values()) - u).max() <= 1e-12 * max(np.abs(u).max(), 1.0)
    with pytest.raises(NotComputed):
        mc.evaluate_velocity(s, s.index + 1)


def test_horizon_exceeded(coarse_table):
    with pytest.raises(KernelHorizonExceeded):
        _run(coarse_table, 8, 2.0)


def test_gauge_invariance_to_gradients():
    table = constant_kernels(np.eye(2), 0.3, 0.05)
    base = lambda g: (lambda n: mc.curl_field(g))
    phi = lambda g: np.sin(3 * g.centers()[:, 0]) * g.centers()[:, 1]
    shifted = lambda g: (lambda n: mc.curl_field(g) + g.grad(phi(g)))
    a, b = _run(table, 12, 0.3, base), _run(table, 12, 0.3, shifted)
    assert np.abs(a.u - b.u).max() <= 1e-10
    p = phi(b.grid) - phi(b.grid).mean()
    assert np.abs(b.P[-1] - a.P[-1] - b.t[-1] * p).max() <= 1e-10


@settings(max_examples=5)
@given(st.floats(-2, 2), st.sampled_from(SCHEMES))
def test_linear_in_forcing(coarse_table, c, scheme):
    f1 = lambda g: (lambda n: mc.curl_field(g))
    f2 = lambda g: (lambda n: np.exp(-0.1 * n) * g.sample(lambda p: np.stack([p[:, 0] * p[:, 1], p[:, 0] ** 2], 1)))
    both = lambda g: (lambda n: f1(g)(n) + c * f2(g)(n))
    a, b, ab = (_run(coarse_table, 8, 0.2, f, scheme) for f in (f1, f2, both))
    assert np.abs(ab.u - a.u - c * b.u).max() <= 1e-11 * (1 + np.abs(ab.u).max())
    assert np.abs(ab.P - a.P - c * b.P).max() <= 1e-11 * (1 + np.abs(ab.P).max())


def test_constraints_with_noise(coarse_cell, coarse_table):
    space, op = coarse_cell
    N, dt = 30, coarse_table.dt
    ops = NoiseOperators.default(J1=4, J2=4, g1_gain=1.0, g21_gain=1.0, g22_gain=1.0)
    dW1 = sample_wiener(KLNoise.power_law(4, seed=1), dt, N).dW
    dW2 = sample_wiener(KLNoise.power_law(4, seed=1, channel=2), dt, N).dW
    H3 = w3_aggregate_kernel(space, op, ops.g22, dt, N)
    s = _run(coarse_table, 10, N * dt, lambda g: (lambda n: mc.curl_field(g)), noise=ops, dW1=dW1, dW2=dW2, H3=H3)
    _assert_constraints(s)
    assert s.grid.l2_norm(s.u[-1]) > 0


def test_uniform_boundary_noise_is_absorbed(coarse_cell, coarse_table):
    """The stochastic cell aggregate is uniform in x, so the closed box absorbs it."""
    space, op = coarse_cell
    N, dt = 30, coarse_table.dt
    ops = NoiseOperators.default(J1=4, J2=4, g1_gain=0.0, g21_gain=0.0, g22_gain=1.0)
    dW2 = sample_wiener(KLNoise.power_law(4, seed=2, channel=2), dt, N).dW
    H3 = w3_aggregate_kernel(space, op, ops.g22, dt, N)
    s = _run(coarse_table, 10, N * dt, None, noise=ops, dW2=dW2, H3=H3)
    _, parts = mc.evaluate_velocity(s, N, terms=True)
    assert np.abs(parts["w3"]).max() > 0
    assert np.abs(s.u).max() <= 1e-12 * np.abs(parts["w3"]).max()


def test_w0_examples(open_cell):
    space, op = open_cell
    grid = mc.make_grid(4)
    c, F = mc.w0_aggregate(space, op, np.zeros(space.n_u), lambda p: np.ones(len(p)), grid, 0.1, 5)
    assert np.abs(F).max() == 0.0
    u0 = leray_project(space, op, np.array([1.0, 0.0])).u
    c, F = mc.w0_aggregate(space, op, u0, lambda p: np.ones(len(p)), grid, 0.1, 5)
    assert np.abs(c - [1.0, 0.0]).max() <= 1e-12
    with pytest.raises(NonSeparableInitialData):
        mc.w0_aggregate(space, op, np.eye(2, space.n_u) * [[1.0], [2.0]] + np.eye(2, space.n_u, 1),
                        lambda p: np.ones(len(p)), grid, 0.1, 5)


def test_output_files(tmp_path, coarse_table):
    s = _run(coarse_table, 8, 0.1, lambda g: (lambda n: mc.curl_field(g)))
    mc.write_run_csv(s, tmp_path / "run.csv")
    rows = np.loadtxt(tmp_path / "run.csv", delimiter=",", skiprows=1)
    assert np.array_equal(rows, mc.run_table(s))
    mc.write_snapshot_csv(s, 5, tmp_path / "snap.csv")
    snap = np.loadtxt(tmp_path / "snap.csv", delimiter=",", skiprows=1)
    assert np.array_equal(snap[:, 2], s.P[5])
    assert np.array_equal(snap[:, 3:], mc.cell_velocity(s.grid, s.u[5]))
