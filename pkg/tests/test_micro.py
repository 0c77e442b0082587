import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from memdarcy import fem
from memdarcy import macro as mc
from memdarcy.errors import CFLViolation, ConfigMismatch, HoleTouchesBoundary, InvalidSpec
from memdarcy.kernels import constant_kernels
from memdarcy.micro import (
    MicroConfig, assemble_micro, block_average, build_perforated_mesh, compare_to_homogenized, convection_load,
    macro_cell_averages, relative_l2_error, solve_micro, trilinear, write_error_table,
)

FLUID = 1 - np.pi / 16


def _curl(t, pts):
    return mc.curl_psi_exact(pts)


@pytest.mark.parametrize("eps,holes", [(0.5, 4), (0.25, 16)])
def test_perforated_area(eps, holes):
    m = build_perforated_mesh(eps, 0.1 * eps)
    assert m.n_holes == holes
    assert abs(m.area - FLUID) <= 0.01 * FLUID


def test_hole_margin_enforced():
    with pytest.raises(HoleTouchesBoundary):
        build_perforated_mesh(0.5, 0.05, radius=0.49)


def test_eps_must_tile():
    with pytest.raises(InvalidSpec):
        build_perforated_mesh(0.3, 0.05)
    with pytest.raises(InvalidSpec):
        MicroConfig(eps=0.5, beta=1.0)


def test_cell_lines_are_mesh_edges():
    m = build_perforated_mesh(0.5, 0.1)
    c = m.vertices[m.triangles].mean(axis=1)
    # every triangle lies in the eps-cell of its centroid
    for tri, cell in zip(m.triangles, m.cell_of_triangle):
        i, j = cell % m.k, cell // m.k
        v = m.vertices[tri]
        assert np.all(v[:, 0] >= i * m.eps - 1e-12) and np.all(v[:, 0] <= (i + 1) * m.eps + 1e-12)
        assert np.all(v[:, 1] >= j * m.eps - 1e-12) and np.all(v[:, 1] <= (j + 1) * m.eps + 1e-12)


@pytest.fixture(scope="module")
def micro_pm():
    m = build_perforated_mesh(0.5, 0.1)
    return fem.build_p2(m.vertices, m.triangles)


@settings(max_examples=10)
@given(st.integers(0, 2**32 - 1))
def test_convection_skew(micro_pm, seed):
    rng = np.random.default_rng(seed)
    u, v = rng.standard_normal((2, 2 * micro_pm.n_nodes))
    scale = np.linalg.norm(u) * np.linalg.norm(v) ** 2 / micro_pm.n_nodes
    assert abs(trilinear(micro_pm, u, v, v)) <= 1e-12 * scale
    w = rng.standard_normal(2 * micro_pm.n_nodes)
    assert abs(trilinear(micro_pm, u, v, w) + trilinear(micro_pm, u, w, v)) <= 1e-12 * scale * np.linalg.norm(w)
    assert abs(convection_load(micro_pm, u) @ w - trilinear(micro_pm, u, u, w)) <= 1e-10 * scale * np.linalg.norm(w)


def test_zero_data_zero_trajectory():
    r = solve_micro(MicroConfig(eps=0.5, dt=0.1, T=0.3))
    assert np.abs(r.averages).max() == 0.0 and r.energy_sup == 0.0


def test_energy_inequality_and_constraints():
    cfg = MicroConfig(eps=0.5, dt=0.05, T=0.5, forcing=_curl)
    sysm = assemble_micro(cfg)
    r = solve_micro(cfg, sysm)
    scale = np.max(r.norms)
    assert np.all(r.energy_defects <= 1e-10 * scale)
    assert sysm.op.divergence_defect(r.final) <= 1e-10
    assert sysm.space.normal_trace_defect(r.final) <= 1e-12 * np.abs(r.final).max()
    U = sysm.space.full(r.final)
    outer = sysm.mesh.outer_nodes(sysm.space.pm.nodes)
    assert np.abs(U[outer]).max() == 0.0
    assert r.viscous_energy > 0


def test_cfl_guard():
    cfg = MicroConfig(eps=0.5, dt=0.5, T=1.0, forcing=lambda t, p: 1e6 * mc.curl_psi_exact(p), cfl_max=1e-6)
    with pytest.raises(CFLViolation):
        solve_micro(cfg)


def test_self_comparison_and_block_average():
    table = constant_kernels(np.eye(2), 0.2, 0.05)
    pr = mc.MacroProblem(table, 8, 0.2, 1)
    g = mc.problem_grid(pr)
    pr.forcing = lambda n: mc.curl_field(g)
    s = mc.run_macro(pr, g)
    t, B = macro_cell_averages(s, 2)
    assert relative_l2_error(t, B, t, B) == 0.0
    full = block_average(s.grid, s.u[-1], 8)
    assert np.allclose(full, mc.cell_velocity(s.grid, s.u[-1]))
    with pytest.raises(ConfigMismatch):
        block_average(s.grid, s.u[-1], 3)


def test_unperforated_diagnostic_runs():
    m = build_perforated_mesh(0.5, 0.05, radius=0.0)
    assert m.n_holes == 0 and abs(m.area - 1.0) < 1e-14
    cfg = MicroConfig(eps=0.5, dt=0.05, T=0.2, forcing=_curl, radius=0.0)
    r = solve_micro(cfg)
    table = constant_kernels(np.eye(2), 0.2, 0.05)
    pr = mc.MacroProblem(table, 8, 0.2, 1)
    g = mc.problem_grid(pr)
    F = g.sample(mc.curl_psi_exact)
    pr.forcing = lambda n: F
    err = compare_to_homogenized(r, mc.run_macro(pr, g))
    assert np.isfinite(err)


def test_error_table(tmp_path):
    rows = [dict(eps=0.5, T=1.0, rel_error=0.7, energy_sup=1.0, viscous_energy=2.0, convective_energy=0.0)]
    write_error_table(rows, tmp_path / "e.csv")
    d = np.loadtxt(tmp_path / "e.csv", delimiter=",", skiprows=1)
    assert np.array_equal(d, [0.5, 1.0, 0.7, 1.0, 2.0, 0.0])
