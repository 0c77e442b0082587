"""P2/P1 (Taylor-Hood) finite element machinery on straight-sided triangles.

Velocity unknowns use the interleaved layout ``2 * node + component``.
Pressure is continuous P1 on the mesh vertices.  Everything here works on
plain arrays so the cell and perforated-domain solvers can share it.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

# Degree-5 seven-point rule on the reference triangle (barycentric, weights sum to 1).
_A1, _B1 = 0.059715871789770, 0.470142064105115
_A2, _B2 = 0.797426985353087, 0.101286507323456
_W1, _W2 = 0.132394152788506, 0.125939180544827
TRI_BARY = np.array(
    [
        [1 / 3, 1 / 3, 1 / 3],
        [_A1, _B1, _B1],
        [_B1, _A1, _B1],
        [_B1, _B1, _A1],
        [_A2, _B2, _B2],
        [_B2, _A2, _B2],
        [_B2, _B2, _A2],
    ]
)
TRI_W = np.array([0.225, _W1, _W1, _W1, _W2, _W2, _W2])

# Three-point Gauss-Legendre on [0, 1].
GAUSS_S = 0.5 + 0.5 * np.array([-np.sqrt(0.6), 0.0, np.sqrt(0.6)])
GAUSS_W = np.array([5 / 18, 8 / 18, 5 / 18])


def p2_basis(bary: np.ndarray) -> np.ndarray:
    """P2 shape functions at barycentric points, shape (nq, 6).

    Local order: three vertices, then midpoints of edges (0,1), (1,2), (2,0).
    """
    l0, l1, l2 = bary[:, 0], bary[:, 1], bary[:, 2]
    return np.stack(
        [l0 * (2 * l0 - 1), l1 * (2 * l1 - 1), l2 * (2 * l2 - 1), 4 * l0 * l1, 4 * l1 * l2, 4 * l2 * l0],
        axis=1,
    )


def p2_basis_dbary(bary: np.ndarray) -> np.ndarray:
    """Derivatives of the P2 shape functions w.r.t. (l0, l1, l2), shape (nq, 6, 3)."""
    l0, l1, l2 = bary[:, 0], bary[:, 1], bary[:, 2]
    z = np.zeros_like(l0)
    d = np.empty((len(l0), 6, 3))
    d[:, 0] = np.stack([4 * l0 - 1, z, z], axis=1)
    d[:, 1] = np.stack([z, 4 * l1 - 1, z], axis=1)
    d[:, 2] = np.stack([z, z, 4 * l2 - 1], axis=1)
    d[:, 3] = np.stack([4 * l1, 4 * l0, z], axis=1)
    d[:, 4] = np.stack([z, 4 * l2, 4 * l1], axis=1)
    d[:, 5] = np.stack([4 * l2, z, 4 * l0], axis=1)
    return d


def edge_p2_basis(s: np.ndarray) -> np.ndarray:
    """1D quadratic basis on an edge (start, midpoint, end), shape (nq, 3)."""
    return np.stack([(1 - s) * (1 - 2 * s), 4 * s * (1 - s), s * (2 * s - 1)], axis=1)


@dataclass
class P2Mesh:
    """P2 node numbering and quadrature data for a triangulation.

    Attributes
    ----------
    nodes : (N, 2) coordinates; vertices first, then edge midpoints.
    tri_nodes : (nt, 6) node indices per triangle in local P2 order.
    edge_mid : dict mapping a sorted vertex pair to its midpoint node.
    bary_grad : (nt, 3, 2) gradients of the barycentric coordinates.
    area : (nt,) triangle areas.
    """

    nodes: np.ndarray
    tri_nodes: np.ndarray
    n_vertices: int
    edge_mid: dict
    bary_grad: np.ndarray
    area: np.ndarray
    qp: np.ndarray
    phi: np.ndarray
    dphi: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def wdet(self) -> np.ndarray:
        return self.area[:, None] * TRI_W[None, :]


def build_p2(vertices: np.ndarray, triangles: np.ndarray) -> P2Mesh:
    nv = len(vertices)
    local_edges = [(0, 1), (1, 2), (2, 0)]
    edge_mid: dict[tuple[int, int], int] = {}
    mids = []
    tri_nodes = np.empty((len(triangles), 6), dtype=np.int64)
    tri_nodes[:, :3] = triangles
    for t, tri in enumerate(triangles):
        for k, (i, j) in enumerate(local_edges):
            a, b = int(tri[i]), int(tri[j])
            key = (a, b) if a < b else (b, a)
            idx = edge_mid.get(key)
            if idx is None:
                idx = nv + len(mids)
                edge_mid[key] = idx
                mids.append(0.5 * (vertices[a] + vertices[b]))
            tri_nodes[t, 3 + k] = idx
    nodes = np.vstack([vertices, np.asarray(mids).reshape(-1, 2)])

    p = vertices[triangles]
    x0, x1, x2 = p[:, 0], p[:, 1], p[:, 2]
    det = (x1[:, 0] - x0[:, 0]) * (x2[:, 1] - x0[:, 1]) - (x1[:, 1] - x0[:, 1]) * (x2[:, 0] - x0[:, 0])
    # grad(l_i) = rot(x_{i+2} - x_{i+1}) / det with rot(a, b) = (b, -a)... written out:
    g = np.empty((len(triangles), 3, 2))
    for i in range(3):
        a = p[:, (i + 1) % 3]
        b = p[:, (i + 2) % 3]
        g[:, i, 0] = (a[:, 1] - b[:, 1]) / det
        g[:, i, 1] = (b[:, 0] - a[:, 0]) / det
    area = 0.5 * np.abs(det)
    qp = np.einsum("qk,tkd->tqd", TRI_BARY, p)
    phi = p2_basis(TRI_BARY)
    dphi = np.einsum("qak,tkd->tqad", p2_basis_dbary(TRI_BARY), g)
    return P2Mesh(nodes, tri_nodes, nv, edge_mid, g, area, qp, phi, dphi)


def _scatter(rows, cols, vals, shape) -> sp.csr_matrix:
    return sp.coo_matrix((vals.ravel(), (rows.ravel(), cols.ravel())), shape=shape).tocsr()


def scalar_mass(pm: P2Mesh) -> sp.csr_matrix:
    loc = np.einsum("tq,qa,qb->tab", pm.wdet, pm.phi, pm.phi)
    r = np.repeat(pm.tri_nodes[:, :, None], 6, axis=2)
    c = np.repeat(pm.tri_nodes[:, None, :], 6, axis=1)
    return _scatter(r, c, loc, (pm.n_nodes, pm.n_nodes))


def scalar_stiffness(pm: P2Mesh) -> sp.csr_matrix:
    loc = np.einsum("tq,tqad,tqbd->tab", pm.wdet, pm.dphi, pm.dphi)
    r = np.repeat(pm.tri_nodes[:, :, None], 6, axis=2)
    c = np.repeat(pm.tri_nodes[:, None, :], 6, axis=1)
    return _scatter(r, c, loc, (pm.n_nodes, pm.n_nodes))


def vectorize(a: sp.spmatrix) -> sp.csr_matrix:
    """Lift a scalar nodal matrix to the interleaved two-component layout."""
    return sp.kron(a, sp.identity(2), format="csr")


def divergence_p1(pm: P2Mesh) -> sp.csr_matrix:
    """``B[k, 2a+c] = int phi_a d_c psi_k`` with psi the P1 vertex basis.

    This is the gradient form of the constraint: for ``q`` in P1,
    ``q @ B @ u = int u . grad q``.  Constants are always in the kernel of
    ``B^T`` so the pressure gauge is a single mean-value condition.
    """
    intphi = np.einsum("tq,qa->ta", pm.wdet, pm.phi)  # (nt, 6)
    # grad psi_k is constant per triangle
    loc = np.einsum("ta,tkd->tkad", intphi, pm.bary_grad)  # (nt, 3, 6, 2)
    rows = np.broadcast_to(pm.tri_nodes[:, :3, None, None], loc.shape)
    cols = 2 * pm.tri_nodes[:, None, :, None] + np.arange(2)[None, None, None, :]
    cols = np.broadcast_to(cols, loc.shape)
    return _scatter(rows, cols, loc, (pm.n_vertices, 2 * pm.n_nodes))


def p1_mass(pm: P2Mesh) -> sp.csr_matrix:
    bary = TRI_BARY
    loc = np.einsum("tq,qa,qb->tab", pm.wdet, bary, bary)
    tri = pm.tri_nodes[:, :3]
    r = np.repeat(tri[:, :, None], 3, axis=2)
    c = np.repeat(tri[:, None, :], 3, axis=1)
    return _scatter(r, c, loc, (pm.n_vertices, pm.n_vertices))


@dataclass
class BoundaryEdges:
    """Quadrature data on a set of straight P2 boundary edges."""

    nodes: np.ndarray  # (ne, 3) start, midpoint, end
    length: np.ndarray  # (ne,)
    normal: np.ndarray  # (ne, 2)
    tangent: np.ndarray  # (ne, 2)
    qp: np.ndarray  # (ne, nq, 2)
    psi: np.ndarray  # (nq, 3)
    owner: np.ndarray  # (ne,) triangle index containing the edge

    @property
    def wlen(self) -> np.ndarray:
        return self.length[:, None] * GAUSS_W[None, :]


def boundary_edges(pm: P2Mesh, triangles: np.ndarray, edges: np.ndarray, normals: np.ndarray) -> BoundaryEdges:
    ne = len(edges)
    mids = np.array([pm.edge_mid[(min(a, b), max(a, b))] for a, b in edges.tolist()], dtype=np.int64)
    nodes = np.stack([edges[:, 0], mids, edges[:, 1]], axis=1) if ne else np.zeros((0, 3), dtype=np.int64)
    pa = pm.nodes[edges[:, 0]] if ne else np.zeros((0, 2))
    pb = pm.nodes[edges[:, 1]] if ne else np.zeros((0, 2))
    length = np.linalg.norm(pb - pa, axis=1)
    qp = pa[:, None, :] + GAUSS_S[None, :, None] * (pb - pa)[:, None, :]
    tangent = np.stack([-normals[:, 1], normals[:, 0]], axis=1) if ne else np.zeros((0, 2))
    owner_map = {}
    for t, tri in enumerate(triangles):
        for k in range(3):
            a, b = int(tri[k]), int(tri[(k + 1) % 3])
            owner_map[(min(a, b), max(a, b))] = t
    owner = np.array([owner_map[(min(a, b), max(a, b))] for a, b in edges.tolist()], dtype=np.int64)
    return BoundaryEdges(nodes, length, normals, tangent, qp, edge_p2_basis(GAUSS_S), owner)


def boundary_vector_mass(pm: P2Mesh, be: BoundaryEdges, weight: np.ndarray | None = None) -> sp.csr_matrix:
    """``int_e w u . v dsigma`` over the given edges (full vector)."""
    w = be.wlen if weight is None else be.wlen * weight
    loc = np.einsum("eq,qa,qb->eab", w, be.psi, be.psi)
    r = np.repeat(be.nodes[:, :, None], 3, axis=2)
    c = np.repeat(be.nodes[:, None, :], 3, axis=1)
    return vectorize(_scatter(r, c, loc, (pm.n_nodes, pm.n_nodes)))


def boundary_tangential_mass(pm: P2Mesh, be: BoundaryEdges, weight: np.ndarray | None = None) -> sp.csr_matrix:
    """``int_e w (u . tau)(v . tau) dsigma`` using the edge tangent."""
    w = be.wlen if weight is None else be.wlen * weight
    loc = np.einsum("eq,qa,qb->eab", w, be.psi, be.psi)  # (ne, 3, 3)
    tt = np.einsum("ei,ej->eij", be.tangent, be.tangent)  # (ne, 2, 2)
    full = np.einsum("eab,eij->eaibj", loc, tt)  # (ne, 3, 2, 3, 2)
    dof = 2 * be.nodes[:, :, None] + np.arange(2)[None, None, :]  # (ne, 3, 2)
    r = np.broadcast_to(dof[:, :, :, None, None], full.shape)
    c = np.broadcast_to(dof[:, None, None, :, :], full.shape)
    n = 2 * pm.n_nodes
    return _scatter(r, c, full, (n, n))


def bulk_load(pm: P2Mesh, values: np.ndarray) -> np.ndarray:
    """Load vector ``int f . phi`` from vector values at quadrature points (nt, nq, 2)."""
    loc = np.einsum("tq,qa,tqc->tac", pm.wdet, pm.phi, values)
    out = np.zeros((pm.n_nodes, 2))
    np.add.at(out, pm.tri_nodes, loc)
    return out.ravel()


def grad_load(pm: P2Mesh, values: np.ndarray) -> np.ndarray:
    """Load vector ``int sum_d V[c, d] d(phi)/dx_d`` for component c; ``values`` is (nt, nq, 2, 2)."""
    loc = np.einsum("tq,tqad,tqcd->tac", pm.wdet, pm.dphi, values)
    out = np.zeros((pm.n_nodes, 2))
    np.add.at(out, pm.tri_nodes, loc)
    return out.ravel()


def boundary_load(pm: P2Mesh, be: BoundaryEdges, values: np.ndarray) -> np.ndarray:
    """Load vector ``int_e g . phi dsigma`` from vector values at edge quadrature points."""
    loc = np.einsum("eq,qa,eqc->eac", be.wlen, be.psi, values)
    out = np.zeros((pm.n_nodes, 2))
    np.add.at(out, be.nodes, loc)
    return out.ravel()


def eval_at_qp(pm: P2Mesh, u_full: np.ndarray) -> np.ndarray:
    """Velocity at triangle quadrature points, shape (nt, nq, 2)."""
    u = u_full.reshape(-1, 2)[pm.tri_nodes]  # (nt, 6, 2)
    return np.einsum("qa,tac->tqc", pm.phi, u)


def grad_at_qp(pm: P2Mesh, u_full: np.ndarray) -> np.ndarray:
    """Velocity gradient at quadrature points, ``G[t,q,c,d] = d u_c / d x_d``."""
    u = u_full.reshape(-1, 2)[pm.tri_nodes]
    return np.einsum("tqad,tac->tqcd", pm.dphi, u)


def integral_functional(pm: P2Mesh) -> np.ndarray:
    """Row vectors ``L[j] @ u = int u_j dx``, shape (2, 2N)."""
    intphi = np.zeros(pm.n_nodes)
    np.add.at(intphi, pm.tri_nodes, np.einsum("tq,qa->ta", pm.wdet, pm.phi))
    L = np.zeros((2, 2 * pm.n_nodes))
    L[0, 0::2] = intphi
    L[1, 1::2] = intphi
    return L
