"""Evolution Stokes problems on the periodic cell with a dynamic slip boundary.

Discretization: P2 velocity / P1 pressure, periodic outer boundary, strong
``u . n = 0`` on the hole by rotating boundary nodes into their (n, tau)
frame and keeping only the tangential unknown.  The dynamic boundary
condition shows up as an extra boundary mass block, so the H inner product
is ``int_Y* u.v dy + int_dO u.v dsigma``.

Time stepping is implicit Euler::

    (M_bulk + M_bdry) (u' - u) / dt + (nu K + R_alpha) u' + B^T q = F,   B u' = 0
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import fem
from .errors import AssemblyFailure, NoHole, NonPositiveSlip, NoSteadyState, SolveFailure
from .geometry import CellMesh

Forcing = Union[None, np.ndarray, Callable]

_TOL = 1e-9


def _periodic_key(p: np.ndarray, tol: float = 1e-10) -> tuple[float, float]:
    x, y = float(p[0]), float(p[1])
    if abs(x - 1.0) < tol:
        x = 0.0
    if abs(y - 1.0) < tol:
        y = 0.0
    return round(x, 9), round(y, 9)


def periodic_classes(points: np.ndarray) -> np.ndarray:
    """Class index per point under the identification x ~ x + e_i."""
    keys = {}
    cls = np.empty(len(points), dtype=np.int64)
    for a, p in enumerate(points):
        k = _periodic_key(p)
        cls[a] = keys.setdefault(k, len(keys))
    return cls


def hole_node_frames(pm: fem.P2Mesh, be: fem.BoundaryEdges) -> dict[int, np.ndarray]:
    """Unit normal per hole node: edge normal at midpoints, averaged at vertices."""
    acc: dict[int, np.ndarray] = {}
    for e in range(len(be.nodes)):
        a, m, b = (int(x) for x in be.nodes[e])
        n = be.normal[e]
        acc[m] = n.copy()
        acc[a] = acc.get(a, np.zeros(2)) + n
        acc[b] = acc.get(b, np.zeros(2)) + n
    return {k: v / np.linalg.norm(v) for k, v in acc.items()}


@dataclass(eq=False)
class DiscreteSpace:
    """Constrained velocity/pressure spaces.

    ``T`` maps reduced velocity unknowns to the interleaved nodal layout;
    ``Tp`` maps reduced pressures to mesh vertices.
    """

    mesh: object
    pm: fem.P2Mesh
    be: fem.BoundaryEdges
    T: sp.csr_matrix
    Tp: sp.csr_matrix
    node_normals: dict
    hole_bc: str
    periodic: bool

    @property
    def n_u(self) -> int:
        return self.T.shape[1]

    @property
    def n_p(self) -> int:
        return self.Tp.shape[1]

    @property
    def has_hole(self) -> bool:
        return len(self.be.nodes) > 0

    def full(self, u: np.ndarray) -> np.ndarray:
        """Nodal velocity, shape (N, 2)."""
        return (self.T @ u).reshape(-1, 2)

    def normal_trace_defect(self, u: np.ndarray) -> float:
        """max |u . n| over hole nodes (zero by construction for slip spaces)."""
        if not self.node_normals:
            return 0.0
        U = self.full(u)
        ids = np.fromiter(self.node_normals.keys(), dtype=np.int64)
        n = np.array([self.node_normals[i] for i in ids.tolist()])
        return float(np.abs(np.einsum("ij,ij->i", U[ids], n)).max())


def build_space(
    mesh,
    hole_bc: str = "slip",
    periodic: bool = True,
    outer_dirichlet: np.ndarray | None = None,
) -> DiscreteSpace:
    """Build DOF maps.  ``hole_bc`` is ``'slip'`` (tangential unknown only) or
    ``'noslip'`` (no unknowns on the hole)."""
    pm = fem.build_p2(mesh.vertices, mesh.triangles)
    be = fem.boundary_edges(pm, mesh.triangles, mesh.hole_edges, mesh.hole_normals)
    frames = hole_node_frames(pm, be)
    N = pm.n_nodes
    cls = periodic_classes(pm.nodes) if periodic else np.arange(N)
    pcls = periodic_classes(mesh.vertices) if periodic else np.arange(len(mesh.vertices))
    fixed = set()
    if outer_dirichlet is not None:
        fixed = set(int(a) for a in outer_dirichlet)

    rows, cols, vals = [], [], []
    dof_of_class: dict[int, int] = {}
    n_dof = 0
    for a in range(N):
        if a in fixed:
            continue
        if a in frames:
            if hole_bc == "noslip":
                continue
            # hole nodes are never periodic images of each other
            n = frames[a]
            tau = (-n[1], n[0])
            rows += [2 * a, 2 * a + 1]
            cols += [n_dof, n_dof]
            vals += [tau[0], tau[1]]
            n_dof += 1
            continue
        c = int(cls[a])
        if c not in dof_of_class:
            dof_of_class[c] = n_dof
            n_dof += 2
        d = dof_of_class[c]
        rows += [2 * a, 2 * a + 1]
        cols += [d, d + 1]
        vals += [1.0, 1.0]
    T = sp.csr_matrix((vals, (rows, cols)), shape=(2 * N, n_dof))
    pc = np.unique(pcls, return_inverse=True)[1]
    Tp = sp.csr_matrix((np.ones(len(pc)), (np.arange(len(pc)), pc)), shape=(len(pc), pc.max() + 1))
    return DiscreteSpace(mesh, pm, be, T, Tp, frames, hole_bc, periodic)


@dataclass
class CellField:
    """One time slice: reduced velocity ``u``, reduced pressure ``q``, time ``t``."""

    u: np.ndarray
    q: np.ndarray
    t: float = 0.0


@dataclass(eq=False)
class CellOperator:
    """Assembled, constrained matrices plus cached saddle-point factorizations."""

    space: DiscreteSpace
    nu: float
    M_bulk: sp.csr_matrix
    M_bdry: sp.csr_matrix
    K: sp.csr_matrix  # nu * (grad, grad)
    R: sp.csr_matrix  # alpha boundary block
    B: sp.csr_matrix
    p_mean: np.ndarray  # int psi, reduced
    L: np.ndarray  # (2, n_u) Y*-integral functionals
    M_bulk_full: sp.csr_matrix
    M_bdry_full: sp.csr_matrix
    alpha_qp: np.ndarray
    _lu: dict = field(default_factory=dict, repr=False)

    @property
    def M(self) -> sp.csr_matrix:
        return self.M_bulk + self.M_bdry

    @property
    def A(self) -> sp.csr_matrix:
        return self.K + self.R

    def h_norm2(self, u: np.ndarray) -> float:
        return float(u @ (self.M @ u))

    def energy(self, u: np.ndarray) -> float:
        return float(u @ (self.A @ u))

    def divergence_defect(self, u: np.ndarray) -> float:
        """``|B u|_inf / (|B|_inf |u|_inf)``."""
        scale = abs(self.B).sum(axis=1).max() * max(np.abs(u).max(), 1e-300)
        return float(np.abs(self.B @ u).max() / scale)

    def integral(self, u: np.ndarray) -> np.ndarray:
        """``int_Y* u dy`` (2-vector)."""
        return self.L @ u

    def saddle(self, key, A: sp.spmatrix):
        lu = self._lu.get(key)
        if lu is None:
            nb = self.B.shape[0]
            m = sp.csr_matrix(self.p_mean.reshape(-1, 1))
            S = sp.bmat(
                [[A, self.B.T, None], [self.B, None, m], [None, m.T, None]],
                format="csc",
            )
            try:
                lu = spla.splu(S)
            except RuntimeError as exc:  # singular factor
                raise AssemblyFailure(f"singular constrained system ({key!r}): {exc}") from exc
            self._lu[key] = lu
        return lu

    def solve_saddle(self, key, A: sp.spmatrix, rhs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        lu = self.saddle(key, A)
        nu_, np_ = self.B.shape[1], self.B.shape[0]
        b = np.zeros(nu_ + np_ + 1)
        b[:nu_] = rhs
        x = lu.solve(b)
        if not np.all(np.isfinite(x)):
            raise SolveFailure(f"non-finite saddle solution ({key!r})")
        u, q = x[:nu_], x[nu_ : nu_ + np_]
        return u, q


def _alpha_values(alpha, pts: np.ndarray) -> np.ndarray:
    if callable(alpha):
        return np.asarray(alpha(pts), dtype=float).reshape(pts.shape[:-1])
    return np.full(pts.shape[:-1], float(alpha))


def assemble(mesh: CellMesh, nu: float = 1.0, alpha=1.0, hole_bc: str = "slip") -> tuple[DiscreteSpace, CellOperator]:
    """Assemble the constrained cell operator.

    ``alpha`` is a constant or a callable of points ``(..., 2) -> (...)``.
    """
    if nu <= 0:
        raise ValueError("viscosity must be positive")
    space = build_space(mesh, hole_bc=hole_bc)
    return space, _assemble_on(space, nu, alpha)


def _assemble_on(space: DiscreteSpace, nu: float, alpha) -> CellOperator:
    pm, be, T, Tp = space.pm, space.be, space.T, space.Tp
    alpha_qp = _alpha_values(alpha, be.qp) if len(be.nodes) else np.zeros((0, len(fem.GAUSS_S)))
    if alpha_qp.size and alpha_qp.min() <= 0:
        raise NonPositiveSlip(f"slip coefficient minimum {alpha_qp.min():g} is not positive")
    Mb_full = fem.vectorize(fem.scalar_mass(pm))
    Md_full = fem.boundary_vector_mass(pm, be)
    K_full = nu * fem.vectorize(fem.scalar_stiffness(pm))
    R_full = fem.boundary_tangential_mass(pm, be, alpha_qp)
    B_full = fem.divergence_p1(pm)
    red = lambda X: (T.T @ X @ T).tocsr()
    p_mean = Tp.T @ (fem.p1_mass(pm) @ np.ones(pm.n_vertices))
    L = fem.integral_functional(pm) @ T
    return CellOperator(
        space=space,
        nu=nu,
        M_bulk=red(Mb_full),
        M_bdry=red(Md_full),
        K=red(K_full),
        R=red(R_full),
        B=(Tp.T @ B_full @ T).tocsr(),
        p_mean=np.asarray(p_mean).ravel(),
        L=np.asarray(L),
        M_bulk_full=Mb_full,
        M_bdry_full=Md_full,
        alpha_qp=alpha_qp,
    )


# ---------------------------------------------------------------- loads


def _bulk_load_full(space: DiscreteSpace, op: CellOperator, f) -> np.ndarray:
    pm = space.pm
    if f is None:
        return np.zeros(2 * pm.n_nodes)
    if callable(f):
        return fem.bulk_load(pm, np.asarray(f(pm.qp), dtype=float))
    f = np.asarray(f, dtype=float)
    if f.shape == (2,):
        return op.M_bulk_full @ np.tile(f, pm.n_nodes)
    if f.shape == (pm.n_nodes, 2):
        return op.M_bulk_full @ f.ravel()
    if f.shape == pm.qp.shape:
        return fem.bulk_load(pm, f)
    raise ValueError(f"cannot interpret bulk field of shape {f.shape}")


def _boundary_load_full(space: DiscreteSpace, op: CellOperator, g, tangential: bool) -> np.ndarray:
    pm, be = space.pm, space.be
    if g is None or not space.has_hole:
        return np.zeros(2 * pm.n_nodes)
    if callable(g):
        vals = np.asarray(g(be.qp), dtype=float)
    else:
        g = np.asarray(g, dtype=float)
        if g.shape == (pm.n_nodes, 2):
            return op.M_bdry_full @ g.ravel()
        if g.shape == (2,):
            vals = np.broadcast_to(g, be.qp.shape)
        elif g.shape == be.qp.shape:
            vals = g
        elif g.shape == be.qp.shape[:-1]:
            # scalar tangential density
            vals = g[..., None] * be.tangent[:, None, :]
            tangential = False
        else:
            raise ValueError(f"cannot interpret boundary data of shape {g.shape}")
    if tangential:
        tt = np.einsum("eqc,ec->eq", vals, be.tangent)
        vals = tt[..., None] * be.tangent[:, None, :]
    return fem.boundary_load(pm, be, vals)


def body_load(space: DiscreteSpace, op: CellOperator, f) -> np.ndarray:
    """Reduced load ``int_Y* f . phi`` (f constant 2-vector, callable, or nodal)."""
    return space.T.T @ _bulk_load_full(space, op, f)


def tangential_load(space: DiscreteSpace, op: CellOperator, g) -> np.ndarray:
    """Reduced load ``int_dO g_tau . phi_tau dsigma``; ``g`` may also be a
    scalar tangential density sampled at boundary quadrature points."""
    return space.T.T @ _boundary_load_full(space, op, g, tangential=True)


# ------------------------------------------------------------ operations


def project_load(space: DiscreteSpace, op: CellOperator, load: np.ndarray) -> CellField:
    """H-orthogonal projection given the dual vector ``<raw, phi>_H``."""
    u, q = op.solve_saddle("mass", op.M, load)
    return CellField(u, q, 0.0)


def leray_project(space: DiscreteSpace, op: CellOperator, raw, boundary="trace") -> CellField:
    """Project the pair ``(raw, boundary)`` onto discretely solenoidal,
    impermeable, periodic fields in the H inner product.

    ``raw`` is a constant 2-vector, a callable, nodal values (N, 2) or values at
    triangle quadrature points.  ``boundary='trace'`` pairs ``raw`` with its
    own trace; pass ``None`` for a zero boundary component or any boundary
    data accepted by :func:`tangential_load` (taken as a full vector).
    """
    load = _bulk_load_full(space, op, raw)
    if isinstance(boundary, str) and boundary == "trace":
        if callable(raw):
            load = load + _boundary_load_full(space, op, raw, tangential=False)
        else:
            r = np.asarray(raw, dtype=float)
            if r.shape == (2,):
                load = load + op.M_bdry_full @ np.tile(r, space.pm.n_nodes)
            elif r.shape == (space.pm.n_nodes, 2):
                load = load + op.M_bdry_full @ r.ravel()
            else:
                raise ValueError("boundary='trace' needs nodal or callable raw data")
    elif boundary is not None:
        load = load + _boundary_load_full(space, op, boundary, tangential=False)
    return project_load(space, op, space.T.T @ load)


def project_reduced(space: DiscreteSpace, op: CellOperator, u: np.ndarray) -> CellField:
    """Projection of a reduced-space field (bulk paired with its own trace)."""
    return project_load(space, op, op.M @ u)


def step(
    space: DiscreteSpace,
    op: CellOperator,
    state: CellField,
    dt: float,
    bulk_force=None,
    bdry_force=None,
) -> CellField:
    """One implicit-Euler step.

    Forces are either reduced load vectors (length ``n_u``) or data accepted by
    :func:`body_load` / :func:`tangential_load`.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    F = _as_load(space, op, bulk_force, body_load) + _as_load(space, op, bdry_force, tangential_load)
    rhs = op.M @ state.u + dt * F
    u, q = op.solve_saddle(("step", dt), op.M + dt * op.A, rhs)
    return CellField(u, q / dt, state.t + dt)


def _as_load(space, op, f, builder) -> np.ndarray:
    if f is None:
        return np.zeros(space.n_u)
    if isinstance(f, np.ndarray) and f.ndim == 1 and f.shape[0] == space.n_u and space.n_u != 2:
        return f
    return builder(space, op, f)


@dataclass
class Trajectory:
    """Cell trajectory on a uniform grid.

    ``U[n]`` is the velocity at ``t[n]``; ``dUdt[n]`` its time derivative sample
    (backward difference for n >= 1, projected forcing at n = 0).
    """

    t: np.ndarray
    U: np.ndarray
    dUdt: np.ndarray
    Q: np.ndarray
    dt: float
    label: str = ""

    def field(self, n: int) -> CellField:
        return CellField(self.U[n], self.Q[n], float(self.t[n]))


def _time_grid(T: float, dt: float) -> tuple[np.ndarray, int]:
    n = int(round(T / dt))
    if n < 1 or abs(n * dt - T) > 1e-9 * max(T, 1.0):
        raise ValueError(f"horizon {T} is not a multiple of dt={dt}")
    return dt * np.arange(n + 1), n


def evolve(space, op, load: np.ndarray, T: float, dt: float, u0: np.ndarray | None = None, label: str = "") -> Trajectory:
    """Integrate ``M du/dt + A u + B^T q = load`` from ``u0`` (default 0).

    ``dUdt[0]`` is the H-projection of the forcing plus ``-A`` applied to u0,
    i.e. the exact derivative of the discrete semigroup at t = 0.
    """
    t, n = _time_grid(T, dt)
    U = np.zeros((n + 1, space.n_u))
    Q = np.zeros((n + 1, space.n_p))
    if u0 is not None:
        U[0] = u0
    state = CellField(U[0].copy(), Q[0].copy(), 0.0)
    for k in range(n):
        state = step(space, op, state, dt, bulk_force=load)
        U[k + 1] = state.u
        Q[k + 1] = state.q
    dUdt = np.empty_like(U)
    dUdt[1:] = np.diff(U, axis=0) / dt
    d0 = project_load(space, op, load - op.A @ U[0])
    dUdt[0] = d0.u
    return Trajectory(t, U, dUdt, Q, dt, label)


def solve_w1(space, op, i: int, T: float = 2.0, dt: float = 1e-2) -> Trajectory:
    """Constant body force ``e_i``, no boundary forcing, zero initial data."""
    if i not in (1, 2):
        raise ValueError("direction index must be 1 or 2")
    e = np.eye(2)[i - 1]
    return evolve(space, op, body_load(space, op, e), T, dt, label=f"w1_{i}")


def solve_w2(space, op, i: int, T: float = 2.0, dt: float = 1e-2) -> Trajectory:
    """No body force, tangential boundary forcing ``(e_i)_tau``, zero initial data."""
    if i not in (1, 2):
        raise ValueError("direction index must be 1 or 2")
    e = np.eye(2)[i - 1]
    return evolve(space, op, tangential_load(space, op, e), T, dt, label=f"w2_{i}")


def write_trajectory_csv(traj: Trajectory, path) -> None:
    """Long format: one row per (t, reduced velocity DOF)."""
    nt, nd = traj.U.shape
    t = np.repeat(traj.t, nd)
    dof = np.tile(np.arange(nd), nt)
    with open(path, "w") as fh:
        fh.write("t,dof_id,value\n")
        fh.writelines(f"{a!r},{b},{c!r}\n" for a, b, c in zip(t.tolist(), dof.tolist(), traj.U.ravel().tolist()))


def write_summary_csv(traj: Trajectory, op: CellOperator, path) -> None:
    """Columns t, h_norm (sqrt of the H form), energy (the energy form a(u, u))."""
    rows = ["t,h_norm,energy"]
    for t, u in zip(traj.t.tolist(), traj.U):
        rows.append(f"{t!r},{float(np.sqrt(max(op.h_norm2(u), 0.0)))!r},{op.energy(u)!r}")
    with open(path, "w") as fh:
        fh.write("\n".join(rows) + "\n")


def energy_budget(op: CellOperator, traj: Trajectory, load: np.ndarray) -> dict:
    """Discrete energy identity of implicit Euler from zero initial data::

        sum dt F.u' = 1/2 |u_N|_H^2 + sum dt a(u', u') + 1/2 sum |u' - u|_H^2
    """
    U, dt = traj.U, traj.dt
    power = dt * float(np.sum(U[1:] @ load))
    kinetic = 0.5 * op.h_norm2(U[-1]) - 0.5 * op.h_norm2(U[0])
    AU = (op.A @ U[1:].T).T
    dissipation = dt * float(np.einsum("ij,ij->", U[1:], AU))
    dU = np.diff(U, axis=0)
    numerical = 0.5 * float(np.einsum("ij,ij->", dU, (op.M @ dU.T).T))
    return dict(power=power, kinetic=kinetic, dissipation=dissipation, numerical=numerical)


def solve_steady_slip(space, op, i: int) -> CellField:
    """Steady state of the w1 problem: ``A w + B^T q = int e_i . phi``."""
    if not space.has_hole:
        raise NoSteadyState("energy form is degenerate without a hole (constants in its kernel)")
    e = np.eye(2)[i - 1]
    u, q = op.solve_saddle("steady", op.A, body_load(space, op, e))
    return CellField(u, q, np.inf)


def steady_permeability(space, op) -> np.ndarray:
    """``K_steady[i, j] = int (w_i^inf)_j dy`` from the steady slip problem."""
    return np.array([op.integral(solve_steady_slip(space, op, i).u) for i in (1, 2)])


def assemble_dirichlet(mesh: CellMesh, nu: float = 1.0) -> tuple[DiscreteSpace, CellOperator]:
    """No-slip hole, periodic outer boundary (steady Stokes cell problem)."""
    if mesh.hole.shape == "none" or len(mesh.hole_edges) == 0:
        raise NoHole("the no-slip cell problem needs a hole")
    space = build_space(mesh, hole_bc="noslip")
    # alpha is irrelevant without tangential unknowns
    return space, _assemble_on(space, nu, 1.0)


def solve_steady_dirichlet(space_d: DiscreteSpace, op_d: CellOperator, i: int) -> tuple[CellField, np.ndarray]:
    """``-nu Lap w + grad q = e_i``, ``w = 0`` on the hole; returns the field and
    the row ``M[i, :] = int w_i dy``."""
    if not space_d.has_hole:
        raise NoHole("the no-slip cell problem needs a hole")
    e = np.eye(2)[i - 1]
    u, q = op_d.solve_saddle("steady", op_d.K, body_load(space_d, op_d, e))
    return CellField(u, q, np.inf), op_d.integral(u)


def dirichlet_matrix(mesh: CellMesh, nu: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(M, G)`` with ``M_ij = int (w_i)_j`` and ``G_ij = nu int grad w_i : grad w_j``."""
    space_d, op_d = assemble_dirichlet(mesh, nu)
    fields, rows = zip(*(solve_steady_dirichlet(space_d, op_d, i) for i in (1, 2)))
    W = np.array([f.u for f in fields])
    return np.array(rows), W @ (op_d.K @ W.T)


# ------------------------------------------------------- diagnostics


def inf_sup_constant(space: DiscreteSpace, op: CellOperator) -> float:
    """Discrete inf-sup constant: sqrt of the smallest nonzero generalized
    eigenvalue of ``B X^{-1} B^T q = beta^2 Mp q`` with X the H1 velocity
    Gram matrix.  Dense; meant for coarse meshes."""
    X = (op.K / op.nu + op.M_bulk).tocsc()
    lu = spla.splu(X)
    Bt = op.B.T.toarray()
    S = op.B @ lu.solve(Bt)
    Mp = (space.Tp.T @ fem.p1_mass(space.pm) @ space.Tp).toarray()
    w = sla.eigh(0.5 * (S + S.T), Mp, eigvals_only=True)
    return float(np.sqrt(max(w[1], 0.0)))


def coercivity_constant(space: DiscreteSpace, op: CellOperator, iters: int = 200) -> float:
    """Smallest eigenvalue of the energy form on the discretely divergence-free
    subspace (relative to the H inner product), by inverse power iteration."""
    rng = np.random.default_rng(0)
    v = project_reduced(space, op, rng.standard_normal(space.n_u)).u
    lam = 0.0
    for _ in range(iters):
        w, _ = op.solve_saddle("steady", op.A, op.M @ v)
        nrm = np.sqrt(op.h_norm2(w))
        v = w / nrm
        lam_new = op.energy(v) / op.h_norm2(v)
        if abs(lam_new - lam) <= 1e-12 * abs(lam_new):
            lam = lam_new
            break
        lam = lam_new
    return float(lam)


# ------------------------------------------------- scalar Neumann problem


@dataclass
class ScalarField:
    values: np.ndarray  # nodal P2 values (N,)
    source: float  # the constant c in -Lap w = -c
    flux_data: float  # int_dO h dsigma
    space: DiscreteSpace

    def mean(self) -> float:
        pm = self.space.pm
        return float(np.einsum("tq,qa,ta->", pm.wdet, pm.phi, self.values[pm.tri_nodes]))

    def boundary_flux(self) -> float:
        """``int_dO grad w . n dsigma`` evaluated from the owning triangles."""
        be, pm = self.space.be, self.space.pm
        if not len(be.nodes):
            return 0.0
        tot = 0.0
        for e in range(len(be.nodes)):
            t = be.owner[e]
            pts = be.qp[e]
            bary = _barycentric(pm.nodes[pm.tri_nodes[t, :3]], pts)
            dphi = np.einsum("qak,kd->qad", fem.p2_basis_dbary(bary), pm.bary_grad[t])
            grad = np.einsum("qad,a->qd", dphi, self.values[pm.tri_nodes[t]])
            tot += float(np.sum(be.length[e] * fem.GAUSS_W * (grad @ be.normal[e])))
        return tot


def _barycentric(tri: np.ndarray, pts: np.ndarray) -> np.ndarray:
    x0 = tri[0]
    J = np.column_stack([tri[1] - x0, tri[2] - x0])
    lam12 = np.linalg.solve(J, (pts - x0).T).T
    return np.column_stack([1 - lam12.sum(axis=1), lam12])


def solve_scalar_neumann(mesh: CellMesh, h=1.0, space: DiscreteSpace | None = None) -> ScalarField:
    """Periodic ``-Lap w = -(1/|Y*|) int_dO h``, ``dw/dn = h`` on the hole,
    zero mean.  ``h`` is a constant or callable of boundary points."""
    space = space or build_space(mesh, hole_bc="slip")
    pm, be = space.pm, space.be
    hq = _alpha_values(h, be.qp) if len(be.nodes) else np.zeros((0, len(fem.GAUSS_S)))
    flux = float(np.sum(be.wlen * hq)) if len(be.nodes) else 0.0
    if not len(be.nodes):
        if not callable(h) and float(h) == 0.0:
            return ScalarField(np.zeros(pm.n_nodes), 0.0, 0.0, space)
        raise NoHole("Neumann data on a hole boundary needs a hole")
    cls = periodic_classes(pm.nodes)
    _, inv = np.unique(cls, return_inverse=True)
    P = sp.csr_matrix((np.ones(pm.n_nodes), (np.arange(pm.n_nodes), inv)))
    K = P.T @ fem.scalar_stiffness(pm) @ P
    intphi = np.zeros(pm.n_nodes)
    np.add.at(intphi, pm.tri_nodes, np.einsum("tq,qa->ta", pm.wdet, pm.phi))
    bload = np.zeros(pm.n_nodes)
    np.add.at(bload, be.nodes, np.einsum("eq,qa,eq->ea", be.wlen, be.psi, hq))
    area = float(pm.area.sum())
    c = flux / area
    rhs = P.T @ (-c * intphi + bload)
    m = P.T @ intphi
    S = sp.bmat([[K, sp.csr_matrix(m.reshape(-1, 1))], [sp.csr_matrix(m.reshape(1, -1)), None]], format="csc")
    x = spla.spsolve(S, np.append(rhs, 0.0))
    w = P @ x[:-1]
    return ScalarField(w, c, flux, space)
