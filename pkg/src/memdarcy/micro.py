"""Direct simulation of the fine-scale problem on the perforated square.

Weak form per step (implicit Euler for the linear part, explicit convection)::

    (u' - u, phi) + eps (u' - u, phi)_dO + dt [nu eps^2 (grad u', grad phi)
        + (alpha_eps u'_tau, phi_tau)_dO] + dt (q', div-pairing)
      = dt (f, phi) - dt eps^beta b(u, u, phi) + noise

with ``b(u, v, w) = 1/2 [((u.grad) v, w) - ((u.grad) w, v)]`` and
``alpha_eps(x) = eps * alpha(x / eps)``.  The outer boundary carries
``u = 0``; every hole carries ``u . n = 0``.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import triangle

from . import fem
from .cell import CellOperator, DiscreteSpace, _assemble_on, build_space
from .errors import CFLViolation, ConfigMismatch, DegenerateMesh, HoleTouchesBoundary, InvalidSpec, SolveFailure
from .geometry import MARGIN, MIN_ANGLE_DEG, HoleSpec, hole_segment_count, orient_hole_edges, triangle_angles, triangle_areas


@dataclass(frozen=True, eq=False)
class PerforatedMesh:
    """Triangulation of ``D_eps``; cell lines ``x = i eps``, ``y = j eps`` are mesh edges."""

    vertices: np.ndarray
    triangles: np.ndarray
    hole_edges: np.ndarray
    hole_normals: np.ndarray
    hole_tangents: np.ndarray
    hole_of_edge: np.ndarray
    hole_centers: np.ndarray
    eps: float
    k: int
    radius: float  # in cell units
    cell_of_triangle: np.ndarray

    @property
    def n_holes(self) -> int:
        return len(self.hole_centers)

    @property
    def area(self) -> float:
        return float(triangle_areas(self.vertices, self.triangles).sum())

    def outer_nodes(self, points: np.ndarray, tol: float = 1e-12) -> np.ndarray:
        x, y = points[:, 0], points[:, 1]
        on = (np.abs(x) < tol) | (np.abs(x - 1) < tol) | (np.abs(y) < tol) | (np.abs(y - 1) < tol)
        return np.where(on)[0]


def _k_of(eps: float) -> int:
    k = int(round(1.0 / eps))
    if k < 1 or abs(k * eps - 1.0) > 1e-12:
        raise InvalidSpec(f"eps={eps} is not 1/k for an integer k")
    return k


def build_perforated_mesh(eps: float, target_h: float, radius: float = 0.25, center=(0.5, 0.5)) -> PerforatedMesh:
    """Mesh of the unit square minus ``k^2`` disks of radius ``radius * eps``.

    ``radius=0`` gives the unperforated square (diagnostic mode).
    """
    k = _k_of(eps)
    if radius != 0:
        HoleSpec("disk", tuple(center), radius)  # margin check in cell units
    if not 0 < target_h <= eps:
        raise InvalidSpec("target_h must lie in (0, eps]")
    m = max(1, int(np.ceil(eps / target_h - 1e-12)))
    nline = k * m
    s = np.linspace(0.0, 1.0, nline + 1)
    pts: dict[tuple[float, float], int] = {}
    verts: list[tuple[float, float]] = []

    def vid(x, y):
        key = (round(x, 12), round(y, 12))
        j = pts.get(key)
        if j is None:
            j = pts[key] = len(verts)
            verts.append((x, y))
        return j

    segs = []
    for i in range(k + 1):
        xi = s[i * m]
        for a in range(nline):
            segs.append((vid(xi, s[a]), vid(xi, s[a + 1])))
            segs.append((vid(s[a], xi), vid(s[a + 1], xi)))
    r = radius * eps
    nh = hole_segment_count(r, target_h) if r > 0 else 0
    th = 2 * np.pi * np.arange(nh) / nh
    centers, hole_ids = [], []
    for j in range(k if r > 0 else 0):
        for i in range(k):
            cx, cy = (i + center[0]) * eps, (j + center[1]) * eps
            ids = [vid(cx + r * np.cos(t), cy + r * np.sin(t)) for t in th]
            segs += [(ids[a], ids[(a + 1) % nh]) for a in range(nh)]
            centers.append((cx, cy))
            hole_ids.append(np.asarray(ids))
    data = dict(vertices=np.asarray(verts, dtype=float), segments=np.asarray(segs, dtype=np.int32))
    if centers:
        data["holes"] = np.asarray(centers, dtype=float)
    area = target_h**2 * np.sqrt(3) / 4
    out = triangle.triangulate(data, f"pq30Ya{area:.12g}")
    V = np.asarray(out["vertices"], dtype=float)
    T = np.asarray(out["triangles"], dtype=np.int64)
    if not np.allclose(V[: len(verts)], data["vertices"], atol=0, rtol=0):
        raise DegenerateMesh("triangulator reordered input vertices")
    neg = triangle_areas(V, T) < 0
    T[neg] = T[neg][:, [0, 2, 1]]
    if triangle_angles(V, T).min() < MIN_ANGLE_DEG:
        raise DegenerateMesh("minimum triangle angle below 5 degrees")
    edges, normals, tangents, owner = [], [], [], []
    for h, ids in enumerate(hole_ids):
        raw = np.stack([ids, np.roll(ids, -1)], axis=1)
        e, n, t = orient_hole_edges(V, T, raw)
        edges.append(e)
        normals.append(n)
        tangents.append(t)
        owner.append(np.full(len(e), h))
    if not edges:
        edges, normals, tangents, owner = [np.zeros((0, 2), np.int64)], [np.zeros((0, 2))], [np.zeros((0, 2))], [np.zeros(0, int)]
    cent = V[T].mean(axis=1)
    ci = np.clip(np.floor(cent[:, 0] / eps).astype(int), 0, k - 1)
    cj = np.clip(np.floor(cent[:, 1] / eps).astype(int), 0, k - 1)
    return PerforatedMesh(
        V, T, np.vstack(edges), np.vstack(normals), np.vstack(tangents), np.concatenate(owner),
        np.asarray(centers, dtype=float).reshape(-1, 2), eps, k, radius, cj * k + ci,
    )


# ------------------------------------------------------------- convection


def trilinear(pm: fem.P2Mesh, u: np.ndarray, v: np.ndarray, w: np.ndarray) -> float:
    """``b(u, v, w) = 1/2 [((u.grad) v, w) - ((u.grad) w, v)]`` on nodal (interleaved) fields."""
    uq = fem.eval_at_qp(pm, u)
    vq, wq = fem.eval_at_qp(pm, v), fem.eval_at_qp(pm, w)
    gv, gw = fem.grad_at_qp(pm, v), fem.grad_at_qp(pm, w)
    a = np.einsum("tq,tqd,tqcd,tqc->", pm.wdet, uq, gv, wq)
    b = np.einsum("tq,tqd,tqcd,tqc->", pm.wdet, uq, gw, vq)
    return 0.5 * float(a - b)


def convection_load(pm: fem.P2Mesh, u: np.ndarray) -> np.ndarray:
    """Nodal vector ``C`` with ``C . w = b(u, u, w)`` for every nodal w."""
    uq = fem.eval_at_qp(pm, u)
    gu = fem.grad_at_qp(pm, u)
    adv = np.einsum("tqd,tqcd->tqc", uq, gu)
    outer = np.einsum("tqc,tqd->tqcd", uq, uq)
    return 0.5 * (fem.bulk_load(pm, adv) - fem.grad_load(pm, outer))


# --------------------------------------------------------------- solver


@dataclass
class MicroConfig:
    eps: float = 0.5
    beta: float = 2.0
    nu: float = 1.0
    alpha: float | Callable = 1.0  # cell coefficient alpha(y)
    dt: float = 2e-2
    T: float = 1.0
    forcing: Callable | None = None  # f(t, pts (..., 2)) -> (..., 2)
    h_cell: float = 0.1  # mesh size relative to eps
    radius: float = 0.25
    cfl_max: float = 1.0
    output_stride: int = 1
    noise: object | None = None  # MicroNoise
    label: str = ""

    def __post_init__(self):
        if not self.beta > 1:
            raise InvalidSpec("beta must exceed 1")
        _k_of(self.eps)
        if self.dt <= 0 or self.T <= 0 or self.nu <= 0:
            raise InvalidSpec("dt, T and nu must be positive")


@dataclass
class MicroNoise:
    """Additive noise for diagnostic runs: bulk modes for W1, boundary data for W2.

    ``g22_density(j, y)`` returns the tangential density of W2 mode j at cell
    points y (lifted periodically); ``dW1`` (N, J1), ``dW2`` (N, J2).
    """

    g1: np.ndarray
    dW1: np.ndarray
    dW2: np.ndarray | None = None
    g22_density: Callable | None = None


@dataclass(eq=False)
class MicroSystem:
    mesh: PerforatedMesh
    space: DiscreteSpace
    op: CellOperator
    cells: np.ndarray  # (2 k^2, n_u): per-cell averages, rows (cell, component)
    h_min: float


def assemble_micro(cfg: MicroConfig, mesh: PerforatedMesh | None = None) -> MicroSystem:
    mesh = build_perforated_mesh(cfg.eps, cfg.h_cell * cfg.eps, cfg.radius) if mesh is None else mesh
    eps = cfg.eps
    pm0 = fem.build_p2(mesh.vertices, mesh.triangles)
    space = build_space(mesh, hole_bc="slip", periodic=False, outer_dirichlet=mesh.outer_nodes(pm0.nodes))
    cell_alpha = cfg.alpha
    if callable(cell_alpha):
        alpha_eps = lambda x: eps * np.asarray(cell_alpha(np.mod(x / eps, 1.0)))
    else:
        alpha_eps = eps * float(cell_alpha)
    op = _assemble_on(space, cfg.nu * eps**2, alpha_eps)
    # dynamic boundary condition carries an eps-weighted trace mass
    op = dataclasses.replace(op, M_bdry=(eps * op.M_bdry).tocsr(), M_bdry_full=(eps * op.M_bdry_full).tocsr(), _lu={})
    pm = space.pm
    k = mesh.k
    w = np.einsum("tq,qa->ta", pm.wdet, pm.phi)
    rows = np.repeat(mesh.cell_of_triangle, 6)
    A = np.zeros((k * k, pm.n_nodes))
    np.add.at(A, (rows, pm.tri_nodes.ravel()), w.ravel())
    A /= eps**2
    full = np.zeros((2 * k * k, 2 * pm.n_nodes))
    full[0::2, 0::2] = A
    full[1::2, 1::2] = A
    cells = full @ space.T
    edge = np.linalg.norm(mesh.vertices[mesh.triangles[:, 1]] - mesh.vertices[mesh.triangles[:, 0]], axis=1)
    return MicroSystem(mesh, space, op, np.asarray(cells), float(edge.min()))


@dataclass
class MicroResult:
    config: MicroConfig
    t: np.ndarray  # output times
    averages: np.ndarray  # (n_out, k*k, 2)
    energy_sup: float
    viscous_energy: float
    convective_energy: float
    energy_defects: np.ndarray  # per-step energy inequality slack (should be <= 0)
    final: np.ndarray
    norms: np.ndarray = field(default_factory=lambda: np.zeros(0))


def solve_micro(cfg: MicroConfig, system: MicroSystem | None = None, u0: np.ndarray | None = None) -> MicroResult:
    """Time loop; returns per-eps-cell velocity averages at every output step."""
    sysm = assemble_micro(cfg) if system is None else system
    space, op, pm = sysm.space, sysm.op, sysm.space.pm
    eps, dt = cfg.eps, cfg.dt
    N = int(round(cfg.T / dt))
    if abs(N * dt - cfg.T) > 1e-9 * cfg.T:
        raise InvalidSpec("T must be a multiple of dt")
    u = np.zeros(space.n_u) if u0 is None else np.asarray(u0, dtype=float).copy()
    A = op.A
    S = op.M + dt * A
    key = ("step", dt)
    Tt = space.T
    k2 = sysm.mesh.k**2
    outs_t, outs = [0.0], [(sysm.cells @ u).reshape(k2, 2)]
    e_sup = op.h_norm2(u)
    visc = conv = 0.0
    defects, norms = [], [op.h_norm2(u)]
    noise = cfg.noise
    if noise is not None:
        g1_loads = _bulk_mode_loads(space, op, len(noise.g1)) * np.asarray(noise.g1)[None, :]
        g22_loads = _boundary_noise_loads(space, sysm.mesh, noise, eps) if noise.dW2 is not None else None
    for n in range(N):
        t1 = (n + 1) * dt
        F = np.zeros(space.n_u)
        if cfg.forcing is not None:
            F = Tt.T @ fem.bulk_load(pm, np.asarray(cfg.forcing(t1, pm.qp), dtype=float))
        uf = Tt @ u
        umax = float(np.abs(uf).max()) if uf.size else 0.0
        if eps**cfg.beta * umax * dt > cfg.cfl_max * sysm.h_min:
            raise CFLViolation(f"step {n}: eps^beta |u| dt / h = {eps**cfg.beta * umax * dt / sysm.h_min:.3g}")
        C = Tt.T @ convection_load(pm, uf)
        extra = np.zeros(space.n_u)
        if noise is not None:
            extra += g1_loads @ noise.dW1[n]
            if g22_loads is not None:
                extra += g22_loads @ noise.dW2[n]
        rhs = op.M @ u + dt * (F - eps**cfg.beta * C) + extra
        u_new, _ = op.solve_saddle(key, S, rhs)
        if not np.all(np.isfinite(u_new)):
            raise SolveFailure(f"non-finite micro solution at step {n}")
        # energy inequality: kinetic change + dissipation <= work of all loads
        lhs = 0.5 * (op.h_norm2(u_new) - op.h_norm2(u)) + dt * op.energy(u_new)
        work_f = dt * float(F @ u_new) + float(extra @ u_new)
        work_c = -dt * eps**cfg.beta * float(C @ u_new)
        defects.append(lhs - work_f - work_c)
        visc += dt * float(u_new @ (op.K @ u_new))
        conv += abs(work_c)
        u = u_new
        e_sup = max(e_sup, op.h_norm2(u))
        norms.append(op.h_norm2(u))
        if (n + 1) % cfg.output_stride == 0:
            outs_t.append(t1)
            outs.append((sysm.cells @ u).reshape(k2, 2))
    return MicroResult(cfg, np.asarray(outs_t), np.asarray(outs), e_sup, visc, conv, np.asarray(defects), u, np.asarray(norms))


def _bulk_mode_loads(space, op, J: int) -> np.ndarray:
    from .noise import bulk_modes

    pm = space.pm
    modes = bulk_modes(J, pm.qp)  # (J, nt, nq, 2)
    return np.stack([space.T.T @ fem.bulk_load(pm, modes[j]) for j in range(J)], axis=1)


def _boundary_noise_loads(space, mesh: PerforatedMesh, noise: MicroNoise, eps: float) -> np.ndarray:
    """``eps * int (R_eps g22 e_j) phi_tau`` per W2 mode."""
    be, pm = space.be, space.pm
    J = noise.dW2.shape[1]
    y = np.mod(be.qp / eps, 1.0)
    cols = []
    for j in range(J):
        dens = np.asarray(noise.g22_density(j, y), dtype=float) if noise.g22_density else np.zeros(be.qp.shape[:-1])
        vals = eps * dens[..., None] * be.tangent[:, None, :]
        cols.append(space.T.T @ fem.boundary_load(pm, be, vals))
    return np.stack(cols, axis=1)


# ------------------------------------------------------------ comparison


def block_average(grid, un: np.ndarray, k: int) -> np.ndarray:
    """Average a MAC velocity over the k x k eps-cells, shape (k*k, 2)."""
    from .macro import cell_velocity

    n = grid.n
    if n % k:
        raise ConfigMismatch(f"macro grid n={n} is not a multiple of k={k}")
    b = n // k
    uc = cell_velocity(grid, un).reshape(n, n, 2)  # [j, i]
    return uc.reshape(k, b, k, b, 2).mean(axis=(1, 3)).reshape(k * k, 2)


def macro_cell_averages(state, k: int) -> tuple[np.ndarray, np.ndarray]:
    return state.t[: state.index + 1], np.stack([block_average(state.grid, state.u[n], k) for n in range(state.index + 1)])


def relative_l2_error(t_a: np.ndarray, A: np.ndarray, t_b: np.ndarray, B: np.ndarray) -> float:
    """Relative discrete L2([0,T] x D) distance of two per-cell average histories."""
    if A.shape != B.shape or len(t_a) != len(t_b) or not np.allclose(t_a, t_b, rtol=0, atol=1e-12):
        raise ConfigMismatch("histories are sampled on different grids")
    num = np.sum((A - B) ** 2)
    den = np.sum(B**2)
    return float(np.sqrt(num / den)) if den > 0 else float(np.sqrt(num))


def compare_to_homogenized(micro: MicroResult, macro_state) -> float:
    """Relative L2 error of the cell-averaged micro velocity against the macro velocity."""
    k = _k_of(micro.config.eps)
    t_m, B = macro_cell_averages(macro_state, k)
    stride = micro.config.output_stride
    macro_dt = macro_state.dt
    ratio = micro.config.dt * stride / macro_dt
    r = int(round(ratio))
    if r < 1 or abs(r - ratio) > 1e-9:
        raise ConfigMismatch("micro output times are not on the macro grid")
    t_m, B = t_m[::r], B[::r]
    n = min(len(t_m), len(micro.t))
    if abs(micro.t[n - 1] - micro.config.T) > 1e-9 or abs(t_m[n - 1] - micro.config.T) > 1e-9:
        raise ConfigMismatch("micro and macro horizons differ")
    return relative_l2_error(micro.t[:n], micro.averages[:n], t_m[:n], B[:n])


def write_error_table(rows: list[dict], path: str | Path) -> None:
    cols = ["eps", "T", "rel_error", "energy_sup", "viscous_energy", "convective_energy"]
    lines = [",".join(cols)] + [",".join(repr(float(r[c])) for c in cols) for r in rows]
    Path(path).write_text("\n".join(lines) + "\n")
