import numpy as np
import pytest
from hypothesis import given, strategies as st

from memdarcy.errors import HoleTouchesBoundary
from memdarcy.geometry import HoleSpec, build_cell_mesh, load_mesh, save_mesh, triangle_areas


def test_disk_area_matches_formula():
    m = build_cell_mesh(HoleSpec(), 0.05)
    assert abs(m.area_Ystar - (1 - np.pi * 0.25**2)) <= 0.01 * (1 - np.pi * 0.25**2)


def test_no_hole_area_exact_and_no_edges():
    m = build_cell_mesh(HoleSpec.none(), 0.25)
    assert m.area_Ystar == 1.0
    assert len(m.hole_edges) == 0
    assert abs(triangle_areas(m.vertices, m.triangles).sum() - 1.0) < 1e-14


def test_large_hole_rejected():
    with pytest.raises(HoleTouchesBoundary):
        HoleSpec("disk", (0.5, 0.5), 0.48)


def test_normal_points_into_hole(coarse_mesh):
    m = coarse_mesh
    mid = 0.5 * (m.vertices[m.hole_edges[:, 0]] + m.vertices[m.hole_edges[:, 1]])
    k = np.argmin(np.linalg.norm(mid - [0.75, 0.5], axis=1))
    assert m.hole_normals[k] @ [-1.0, 0.0] > 0.95
    # chord normals of an inscribed polygon point exactly at the centre
    to_c = [0.5, 0.5] - mid
    to_c /= np.linalg.norm(to_c, axis=1)[:, None]
    assert np.abs(m.hole_normals - to_c).max() < 1e-10


def test_closed_curve_normal_sum(coarse_mesh):
    m = coarse_mesh
    assert np.abs((m.hole_normals * m.hole_edge_lengths[:, None]).sum(axis=0)).max() < 1e-10


def test_area_converges_quadratically():
    exact = 1 - np.pi * 0.25**2
    e1 = abs(build_cell_mesh(HoleSpec(), 0.1).area_Ystar - exact)
    e2 = abs(build_cell_mesh(HoleSpec(), 0.05).area_Ystar - exact)
    assert e2 < e1 / 3


def test_periodic_pairing_involutive(coarse_mesh):
    V = coarse_mesh.vertices
    for i, j in coarse_mesh.pairing().items():
        d = np.abs(V[i] - V[j])
        assert np.all((d < 1e-12) | (np.abs(d - 1) < 1e-12))
        assert coarse_mesh.pairing()[j] == i


def test_d4_symmetric_vertices(coarse_mesh):
    V = coarse_mesh.vertices
    key = {tuple(np.round(v, 10)) for v in V}
    assert all((round(y, 10), round(x, 10)) in key for x, y in V)
    assert all((round(1 - x, 10), round(y, 10)) in key for x, y in V)


def test_min_angle(coarse_mesh):
    assert coarse_mesh.min_angle_deg() >= 5.0


def test_mesh_round_trip(tmp_path, coarse_mesh):
    save_mesh(coarse_mesh, tmp_path / "m.txt")
    m2 = load_mesh(tmp_path / "m.txt")
    assert m2.mesh_hash() == coarse_mesh.mesh_hash()
    assert np.array_equal(m2.hole_normals, coarse_mesh.hole_normals)
    assert np.array_equal(m2.periodic_pairs, coarse_mesh.periodic_pairs)


@given(st.floats(0.05, 0.3), st.floats(0.1, 0.3))
def test_area_bounded_by_disk(r, h):
    m = build_cell_mesh(HoleSpec("disk", (0.5, 0.5), r), h)
    # the inscribed polygon (at least 16 sides) removes less than the disk
    assert 1 - np.pi * r**2 <= m.area_Ystar <= 1 - 8 * r**2 * np.sin(2 * np.pi / 16) + 1e-12
    assert np.all(triangle_areas(m.vertices, m.triangles) > 0)
    assert m.min_angle_deg() >= 5.0
