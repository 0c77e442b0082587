"""Periodic unit-cell meshes with a single interior hole.

The fluid region is ``Y* = [0,1]^2 minus a closed disk``.  Hole-boundary
normals point *into* the hole (away from the fluid); every boundary term in
the solvers assumes that sign.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal, Sequence

import numpy as np
import triangle

from .errors import DegenerateMesh, HoleTouchesBoundary

MARGIN = 0.05
MIN_ANGLE_DEG = 5.0


@dataclass(frozen=True)
class HoleSpec:
    shape: Literal["disk", "none"] = "disk"
    center: tuple[float, float] = (0.5, 0.5)
    radius: float = 0.25

    def __post_init__(self):
        if self.shape not in ("disk", "none"):
            raise ValueError(f"unknown hole shape {self.shape!r}")
        if self.shape == "none":
            object.__setattr__(self, "radius", 0.0)
            return
        if self.radius <= 0:
            raise HoleTouchesBoundary("disk hole needs a positive radius")
        cx, cy = self.center
        lo = min(cx, cy) - self.radius
        hi = max(cx, cy) + self.radius
        if lo < MARGIN - 1e-14 or hi > 1 - MARGIN + 1e-14:
            raise HoleTouchesBoundary(
                f"hole [{lo:.3f}, {hi:.3f}] violates the {MARGIN} margin to the cell boundary"
            )

    @classmethod
    def none(cls) -> "HoleSpec":
        return cls(shape="none", radius=0.0)


@dataclass(frozen=True, eq=False)
class CellMesh:
    """Immutable triangulation of the periodic cell.

    ``hole_edges[k] = (a, b)`` is oriented so that ``b - a`` runs along the
    tangent ``hole_tangents[k]``; ``hole_normals[k]`` points into the hole.
    ``periodic_pairs`` is an involutive pairing of the outer-boundary vertices
    (left/right, bottom/top, opposite corners).
    """

    vertices: np.ndarray
    triangles: np.ndarray
    hole_edges: np.ndarray
    hole_normals: np.ndarray
    hole_tangents: np.ndarray
    periodic_pairs: np.ndarray
    area_Ystar: float
    hole: HoleSpec = field(default_factory=HoleSpec)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def hole_edge_lengths(self) -> np.ndarray:
        v = self.vertices
        return np.linalg.norm(v[self.hole_edges[:, 1]] - v[self.hole_edges[:, 0]], axis=1)

    @property
    def hole_perimeter(self) -> float:
        return float(self.hole_edge_lengths.sum())

    def pairing(self) -> dict[int, int]:
        out = {}
        for i, j in self.periodic_pairs:
            out[int(i)] = int(j)
            out[int(j)] = int(i)
        return out

    def mesh_hash(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.vertices, dtype=np.float64).tobytes())
        h.update(np.ascontiguousarray(self.triangles, dtype=np.int64).tobytes())
        return h.hexdigest()[:16]

    def min_angle_deg(self) -> float:
        return float(triangle_angles(self.vertices, self.triangles).min())


def triangle_areas(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    p = vertices[triangles]
    a = p[:, 1] - p[:, 0]
    b = p[:, 2] - p[:, 0]
    return 0.5 * (a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0])


def triangle_angles(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    p = vertices[triangles]
    ang = []
    for k in range(3):
        u = p[:, (k + 1) % 3] - p[:, k]
        w = p[:, (k + 2) % 3] - p[:, k]
        c = np.einsum("ij,ij->i", u, w) / (np.linalg.norm(u, axis=1) * np.linalg.norm(w, axis=1))
        ang.append(np.degrees(np.arccos(np.clip(c, -1.0, 1.0))))
    return np.stack(ang, axis=1)


def _outer_loop(h: float) -> list[tuple[float, float]]:
    m = max(1, int(np.ceil(1.0 / h - 1e-12)))
    s = np.linspace(0.0, 1.0, m + 1)
    return (
        [(x, 0.0) for x in s[:-1]]
        + [(1.0, y) for y in s[:-1]]
        + [(x, 1.0) for x in s[::-1][:-1]]
        + [(0.0, y) for y in s[::-1][:-1]]
    )


def hole_segment_count(radius: float, h: float) -> int:
    return max(16, int(np.ceil(2 * np.pi * radius / h - 1e-12)))


def triangulate_domain(
    disks: Sequence[tuple[float, float, float]], target_h: float, n_hole_segments: int | None = None
) -> dict:
    """Quality-triangulate the unit square minus ``disks = [(cx, cy, r), ...]``.

    Outer edges get uniform, matching vertex sets on opposite sides and no
    Steiner points are inserted on any input segment.  Returns the raw
    ``triangle`` output dict plus ``hole_vertex_ids`` (one array per disk).
    """
    pts = _outer_loop(target_h)
    n_out = len(pts)
    segs = [(i, (i + 1) % n_out) for i in range(n_out)]
    hole_ids = []
    for cx, cy, r in disks:
        nh = n_hole_segments or hole_segment_count(r, target_h)
        th = 2 * np.pi * np.arange(nh) / nh
        start = len(pts)
        pts += [(cx + r * np.cos(t), cy + r * np.sin(t)) for t in th]
        segs += [(start + i, start + (i + 1) % nh) for i in range(nh)]
        hole_ids.append(np.arange(start, start + nh))
    data = dict(vertices=np.asarray(pts, dtype=float), segments=np.asarray(segs, dtype=np.int32))
    if disks:
        data["holes"] = np.asarray([(cx, cy) for cx, cy, _ in disks], dtype=float)
    # q: quality bound (min angle 30 deg); Y: keep input segments unsplit.
    area = target_h**2 * np.sqrt(3) / 4
    out = triangle.triangulate(data, f"pq30Ya{area:.12g}")
    out["hole_vertex_ids"] = hole_ids
    # triangle keeps input vertices first and in order
    if not np.allclose(out["vertices"][: len(pts)], data["vertices"], atol=0, rtol=0):
        raise DegenerateMesh("triangulator reordered input vertices")
    return out


def orient_hole_edges(vertices, triangles, edges):
    """Return (edges, normals, tangents) with normals pointing away from the fluid."""
    tri_of_edge = {}
    for t, tri in enumerate(triangles):
        for k in range(3):
            a, b = int(tri[k]), int(tri[(k + 1) % 3])
            tri_of_edge.setdefault(frozenset((a, b)), []).append(t)
    out_e, out_n = [], []
    for a, b in edges:
        owners = tri_of_edge.get(frozenset((int(a), int(b))), [])
        if len(owners) != 1:
            raise DegenerateMesh(f"hole edge ({a},{b}) belongs to {len(owners)} fluid triangles")
        tri = triangles[owners[0]]
        c = vertices[[x for x in tri if x not in (a, b)][0]]
        pa, pb = vertices[a], vertices[b]
        d = pb - pa
        n = np.array([d[1], -d[0]]) / np.linalg.norm(d)
        if np.dot(n, c - 0.5 * (pa + pb)) > 0:
            n = -n
        tau = np.array([-n[1], n[0]])
        if np.dot(d, tau) < 0:
            a, b = b, a
        out_e.append((a, b))
        out_n.append(n)
    normals = np.asarray(out_n, dtype=float).reshape(-1, 2)
    # re-normalise: exact unit length for downstream invariants
    normals /= np.linalg.norm(normals, axis=1, keepdims=True) if len(normals) else 1.0
    tangents = np.stack([-normals[:, 1], normals[:, 0]], axis=1) if len(normals) else normals.copy()
    return np.asarray(out_e, dtype=np.int64).reshape(-1, 2), normals, tangents


def _periodic_pairs(vertices: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    x, y = vertices[:, 0], vertices[:, 1]
    on = lambda arr, val: np.abs(arr - val) < tol
    pairs = []

    def match(src, dst, key):
        lookup = {round(float(key[j]), 12): j for j in dst}
        for i in src:
            j = lookup.get(round(float(key[i]), 12))
            if j is None:
                raise DegenerateMesh("outer boundary vertices do not match periodically")
            pairs.append((i, j))

    interior_y = ~on(y, 0) & ~on(y, 1)
    interior_x = ~on(x, 0) & ~on(x, 1)
    match(np.where(on(x, 0) & interior_y)[0], np.where(on(x, 1) & interior_y)[0], y)
    match(np.where(on(y, 0) & interior_x)[0], np.where(on(y, 1) & interior_x)[0], x)
    corner = lambda cx, cy: int(np.where(on(x, cx) & on(y, cy))[0][0])
    pairs.append((corner(0, 0), corner(1, 1)))
    pairs.append((corner(1, 0), corner(0, 1)))
    return np.asarray(pairs, dtype=np.int64)


def _segment_points(a, b, h):
    a, b = np.asarray(a, float), np.asarray(b, float)
    m = max(1, int(np.ceil(np.linalg.norm(b - a) / h - 1e-12)))
    s = np.arange(m) / m
    return [tuple(a + si * (b - a)) for si in s]


def _symmetric_disk_mesh(r: float, h: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """D4-symmetric triangulation for a disk centred in the cell.

    One eighth of the cell (polar angle 0..45 deg about the centre) is
    triangulated and reflected three times, so the mesh is invariant under
    the symmetry group of the square.
    """
    c = 0.5
    n_arc = max(2, int(np.ceil(hole_segment_count(r, h) / 8)))
    A = (c + r, c)
    B = (1.0, c)
    C = (1.0, 1.0)
    D = (c + r / np.sqrt(2), c + r / np.sqrt(2))
    # B -> C must use the same subdivision as the generic outer loop (0.5 / m2)
    m2 = max(1, int(np.ceil(1.0 / h - 1e-12)))
    if m2 % 2:
        m2 += 1
    side = [(1.0, c + k / m2) for k in range(m2 // 2)]
    diag = [(C[0] - t, C[1] - t) for t in _segment_spacing(np.hypot(C[0] - D[0], C[1] - D[1]) / np.sqrt(2), h / np.sqrt(2))]
    th = np.linspace(np.pi / 4, 0.0, n_arc + 1)[:-1]
    arc = [(c + r * np.cos(t), c + r * np.sin(t)) for t in th]
    s0 = 2 * np.pi * r / (8 * n_arc)
    if s0 < 0.5 * h:
        # grade away from a small hole so the segment-preserving mesher keeps its angles
        radial = [(c + r + d, c) for d in _graded_offsets(0.5 - r, s0, h)]
        L = 0.5 - r / np.sqrt(2)
        e = L - np.append(_graded_offsets(L, s0, h)[1:], L)  # distance from C, C first
        diag = [(1.0 - x, 1.0 - x) for x in e[::-1]]
    else:
        radial = _segment_points(A, B, h)
    loop = radial + side + diag + arc
    n = len(loop)
    data = dict(
        vertices=np.asarray(loop, dtype=float),
        segments=np.asarray([(i, (i + 1) % n) for i in range(n)], dtype=np.int32),
    )
    area = h**2 * np.sqrt(3) / 4
    out = triangle.triangulate(data, f"pq30Ya{area:.12g}")
    V0 = np.asarray(out["vertices"], dtype=float)
    T0 = np.asarray(out["triangles"], dtype=np.int64)
    # exact diagonal coordinates survive the swap reflection
    parts_V = [V0, V0[:, ::-1]]
    parts_V += [np.column_stack([1.0 - P[:, 0], P[:, 1]]) for P in parts_V]
    parts_V += [np.column_stack([P[:, 0], 1.0 - P[:, 1]]) for P in parts_V]
    keys: dict[tuple[float, float], int] = {}
    verts = []
    tris = []
    for P in parts_V:
        idx = np.empty(len(P), dtype=np.int64)
        for k, (x, y) in enumerate(P.tolist()):
            key = (round(x, 10), round(y, 10))
            j = keys.get(key)
            if j is None:
                j = keys[key] = len(verts)
                verts.append((x, y))
            idx[k] = j
        tris.append(idx[T0])
    V = np.asarray(verts, dtype=float)
    T = np.vstack(tris)
    hole_ids = np.where(np.abs(np.hypot(V[:, 0] - c, V[:, 1] - c) - r) < 1e-9)[0]
    ang = np.mod(np.arctan2(V[hole_ids, 1] - c, V[hole_ids, 0] - c), 2 * np.pi)
    hole_ids = hole_ids[np.argsort(ang)]
    return V, T, hole_ids


def _graded_offsets(length: float, s0: float, h: float, growth: float = 1.3) -> np.ndarray:
    """Offsets ``0 = d_0 < d_1 < ...  < length`` with steps growing from ``s0`` to at most ``h``."""
    steps = []
    while sum(steps) < length:
        steps.append(min(h, s0 * growth ** len(steps)))
    steps = np.asarray(steps) * length / sum(steps)
    return np.concatenate([[0.0], np.cumsum(steps)[:-1]])


def _segment_spacing(length: float, h: float) -> np.ndarray:
    m = max(1, int(np.ceil(length / h - 1e-12)))
    return length * np.arange(m) / m


def build_cell_mesh(hole: HoleSpec | None = None, target_h: float = 0.05, symmetric: bool = True) -> CellMesh:
    """Triangulate the periodic cell with the given hole.

    A disk centred at (0.5, 0.5) gets a D4-symmetric mesh unless
    ``symmetric=False``.

    >>> m = build_cell_mesh(HoleSpec.none(), 0.25)
    >>> m.area_Ystar
    1.0
    """
    hole = HoleSpec() if hole is None else hole
    if not 0 < target_h <= 0.5:
        raise ValueError("target_h must lie in (0, 0.5]")
    disks = [] if hole.shape == "none" else [(hole.center[0], hole.center[1], hole.radius)]
    centred = disks and np.allclose(hole.center, (0.5, 0.5), atol=0, rtol=0)
    if symmetric and centred:
        V, T, ids = _symmetric_disk_mesh(hole.radius, target_h)
        out = {"hole_vertex_ids": [ids]}
    else:
        out = triangulate_domain(disks, target_h)
        V = np.asarray(out["vertices"], dtype=float)
        T = np.asarray(out["triangles"], dtype=np.int64)
    # counter-clockwise orientation
    neg = triangle_areas(V, T) < 0
    T[neg] = T[neg][:, [0, 2, 1]]
    if triangle_angles(V, T).min() < MIN_ANGLE_DEG:
        raise DegenerateMesh("minimum triangle angle below 5 degrees")
    if disks:
        ids = out["hole_vertex_ids"][0]
        raw = np.stack([ids, np.roll(ids, -1)], axis=1)
        edges, normals, tangents = orient_hole_edges(V, T, raw)
    else:
        edges = np.zeros((0, 2), dtype=np.int64)
        normals = np.zeros((0, 2))
        tangents = np.zeros((0, 2))
    areas = triangle_areas(V, T)
    # shape=none tiles the square exactly; report the exact value
    area = 1.0 if not disks else float(areas.sum())
    return CellMesh(
        vertices=V,
        triangles=T,
        hole_edges=edges,
        hole_normals=normals,
        hole_tangents=tangents,
        periodic_pairs=_periodic_pairs(V),
        area_Ystar=area,
        hole=hole,
    )


def boundary_frames(mesh: CellMesh) -> np.ndarray:
    """Per hole edge ``[nx, ny, tx, ty]``; n into the hole, tau = n rotated +90 deg."""
    return np.hstack([mesh.hole_normals, mesh.hole_tangents])


def save_mesh(mesh: CellMesh, path: str | Path) -> None:
    path = Path(path)
    lines = [f"# hole {mesh.hole.shape} {mesh.hole.center[0]!r} {mesh.hole.center[1]!r} {mesh.hole.radius!r}"]
    lines.append(
        f"{len(mesh.vertices)} {len(mesh.triangles)} {len(mesh.hole_edges)} {len(mesh.periodic_pairs)}"
    )
    lines += [f"{x!r} {y!r}" for x, y in mesh.vertices.tolist()]
    lines += [f"{i} {j} {k}" for i, j, k in mesh.triangles.tolist()]
    lines += [
        f"{i} {j} {nx!r} {ny!r}" for (i, j), (nx, ny) in zip(mesh.hole_edges.tolist(), mesh.hole_normals.tolist())
    ]
    lines += [f"{i} {j}" for i, j in mesh.periodic_pairs.tolist()]
    path.write_text("\n".join(lines) + "\n")


def load_mesh(path: str | Path) -> CellMesh:
    raw = Path(path).read_text().splitlines()
    hole = HoleSpec()
    body = []
    for line in raw:
        if line.startswith("#"):
            parts = line[1:].split()
            if parts and parts[0] == "hole":
                shape = parts[1]
                hole = HoleSpec.none() if shape == "none" else HoleSpec(shape, (float(parts[2]), float(parts[3])), float(parts[4]))
            continue
        if line.strip():
            body.append(line.split())
    nv, nt, ne, npair = (int(x) for x in body[0])
    rows = body[1:]
    V = np.array(rows[:nv], dtype=float).reshape(-1, 2)
    T = np.array(rows[nv : nv + nt], dtype=np.int64).reshape(-1, 3)
    E = rows[nv + nt : nv + nt + ne]
    edges = np.array([[int(a), int(b)] for a, b, *_ in E], dtype=np.int64).reshape(-1, 2)
    normals = np.array([[float(x), float(y)] for *_, x, y in E], dtype=float).reshape(-1, 2)
    pairs = np.array(rows[nv + nt + ne : nv + nt + ne + npair], dtype=np.int64).reshape(-1, 2)
    tangents = np.stack([-normals[:, 1], normals[:, 0]], axis=1) if ne else np.zeros((0, 2))
    area = 1.0 if hole.shape == "none" else float(triangle_areas(V, T).sum())
    return CellMesh(V, T, edges, normals, tangents, pairs, area, hole)
