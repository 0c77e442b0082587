"""Homogenized Darcy law with memory on the unit square.

MAC placement: pressure at cell centres, the normal velocity component on
interior faces.  Boundary faces carry zero flux by construction, and
``div = -grad^T`` holds exactly.  Face fields are stored as arrays of shape
``(2, nF)``: both velocity components at every interior face (x-faces first,
then y-faces).  The normal components form the MAC velocity; the tangential
ones are averages used only when a kernel couples the two directions.

At step n the known part::

    b = w0 + int K1(t-s) f ds + int K1(t-s) g1 dW1 - int K1'(t-s) grad P ds
        + int K2(t-s) g21 dW2 + int_Y* w3 dy

is corrected by ``-K1(0) grad P_n`` with ``P_n`` chosen so the result is
discretely divergence-free.  The memory integral uses history only.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import quadrature as qd
from .errors import GridMismatch, KernelHorizonExceeded, NonSeparableInitialData, NotComputed, SingularOperator, SolveFailure
from .kernels import KernelTable, kernel_derivative
from .noise import NoiseOperators, bulk_modes

TERM_NAMES = ("w0", "forcing", "noise_W1", "memory", "noise_W2", "w3", "pressure")


@dataclass(eq=False)
class MacroGrid:
    """n x n cell-centred grid on [0, 1]^2 with interior-face MAC operators."""

    n: int
    Gx: sp.csr_matrix  # cells -> interior x-faces
    Gy: sp.csr_matrix  # cells -> interior y-faces
    Axy: sp.csr_matrix  # y-face values -> x-faces (neighbour average)
    Ayx: sp.csr_matrix  # x-face values -> y-faces
    K0: np.ndarray = field(default_factory=lambda: np.eye(2))
    _lu: object = field(default=None, repr=False)

    @property
    def h(self) -> float:
        return 1.0 / self.n

    @property
    def n_cells(self) -> int:
        return self.n * self.n

    @property
    def n_xf(self) -> int:
        return (self.n - 1) * self.n

    @property
    def n_yf(self) -> int:
        return self.n * (self.n - 1)

    @property
    def n_faces(self) -> int:
        return self.n_xf + self.n_yf

    @property
    def G(self) -> sp.csr_matrix:
        return sp.vstack([self.Gx, self.Gy]).tocsr()

    @property
    def D(self) -> sp.csr_matrix:
        """Divergence of normal face fluxes (boundary fluxes are zero)."""
        return (-self.G.T).tocsr()

    def centers(self) -> np.ndarray:
        c = (np.arange(self.n) + 0.5) * self.h
        X, Y = np.meshgrid(c, c, indexing="xy")
        return np.column_stack([X.ravel(), Y.ravel()])  # index j * n + i

    def xface_points(self) -> np.ndarray:
        h, n = self.h, self.n
        i, j = np.meshgrid(np.arange(1, n), np.arange(n), indexing="xy")
        return np.column_stack([(i * h).ravel(), ((j + 0.5) * h).ravel()])

    def yface_points(self) -> np.ndarray:
        h, n = self.h, self.n
        i, j = np.meshgrid(np.arange(n), np.arange(1, n), indexing="xy")
        return np.column_stack([((i + 0.5) * h).ravel(), (j * h).ravel()])

    def face_points(self) -> np.ndarray:
        return np.vstack([self.xface_points(), self.yface_points()])

    # --- face-field helpers

    def normal(self, F: np.ndarray) -> np.ndarray:
        """MAC velocity (normal components) from a full face field."""
        return np.concatenate([F[0, : self.n_xf], F[1, self.n_xf :]])

    def complete(self, un: np.ndarray) -> np.ndarray:
        """Full face field from normal components, tangential parts averaged."""
        ux, uy = un[: self.n_xf], un[self.n_xf :]
        return np.stack([np.concatenate([ux, self.Ayx @ ux]), np.concatenate([self.Axy @ uy, uy])])

    def grad(self, P: np.ndarray) -> np.ndarray:
        return self.complete(self.G @ P)

    def div(self, F_or_un: np.ndarray) -> np.ndarray:
        un = self.normal(F_or_un) if F_or_un.ndim == 2 else F_or_un
        return self.D @ un

    def apply(self, K: np.ndarray, F: np.ndarray) -> np.ndarray:
        return np.asarray(K) @ F

    def sample(self, func: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
        """Face field from a callable returning (npts, 2) values."""
        return np.asarray(func(self.face_points()), dtype=float).T.copy()

    def l2_norm(self, un: np.ndarray) -> float:
        return float(self.h * np.linalg.norm(un))

    def cell_l2(self, P: np.ndarray) -> float:
        return float(self.h * np.linalg.norm(P))

    def elliptic(self, K: np.ndarray | None = None) -> sp.csr_matrix:
        """``L = G^T Ktilde G`` (the negative of div K grad)."""
        K = self.K0 if K is None else np.asarray(K)
        Gx, Gy = self.Gx, self.Gy
        fx = K[0, 0] * Gx + K[0, 1] * (self.Axy @ Gy)
        fy = K[1, 0] * (self.Ayx @ Gx) + K[1, 1] * Gy
        return (Gx.T @ fx + Gy.T @ fy).tocsr()

    def solve_pressure(self, b: np.ndarray) -> np.ndarray:
        """Zero-mean P with ``div(b_n - K0 grad P) = 0``; ``b`` full face field or normal part."""
        bn = self.normal(b) if b.ndim == 2 else b
        rhs = np.zeros(self.n_cells + 1)
        rhs[: self.n_cells] = self.G.T @ bn
        x = self._lu.solve(rhs)
        if not np.all(np.isfinite(x)):
            raise SolveFailure("non-finite pressure solution")
        return x[: self.n_cells]


def _build_ops(n: int):
    h = 1.0 / n
    nxf, nyf, nc = (n - 1) * n, n * (n - 1), n * n
    cell = lambda i, j: j * n + i
    rows, cols, vals = [], [], []
    for j in range(n):
        for i in range(1, n):
            f = j * (n - 1) + (i - 1)
            rows += [f, f]
            cols += [cell(i, j), cell(i - 1, j)]
            vals += [1 / h, -1 / h]
    Gx = sp.csr_matrix((vals, (rows, cols)), shape=(nxf, nc))
    rows, cols, vals = [], [], []
    for j in range(1, n):
        for i in range(n):
            f = (j - 1) * n + i
            rows += [f, f]
            cols += [cell(i, j), cell(i, j - 1)]
            vals += [1 / h, -1 / h]
    Gy = sp.csr_matrix((vals, (rows, cols)), shape=(nyf, nc))
    # x-face (i, j) touches y-faces (i-1, j), (i, j), (i-1, j+1), (i, j+1) when interior
    rows, cols = [], []
    for j in range(n):
        for i in range(1, n):
            f = j * (n - 1) + (i - 1)
            for ii in (i - 1, i):
                for jj in (j, j + 1):
                    if 1 <= jj <= n - 1:
                        rows.append(f)
                        cols.append((jj - 1) * n + ii)
    Axy = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(nxf, nyf))
    rows, cols = [], []
    for j in range(1, n):
        for i in range(n):
            f = (j - 1) * n + i
            for ii in (i, i + 1):
                for jj in (j - 1, j):
                    if 1 <= ii <= n - 1:
                        rows.append(f)
                        cols.append(jj * (n - 1) + (ii - 1))
    Ayx = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(nyf, nxf))
    # average over the available interior neighbours
    norm = lambda A: sp.diags(1.0 / np.maximum(np.asarray(A.sum(axis=1)).ravel(), 1.0)) @ A
    return Gx, Gy, norm(Axy).tocsr(), norm(Ayx).tocsr()


def make_grid(n: int) -> MacroGrid:
    if n < 2:
        raise ValueError("macro grid needs n >= 2")
    return MacroGrid(n, *_build_ops(n))


def assemble_macro(n: int, K1_0: np.ndarray) -> MacroGrid:
    """Grid plus factorized ``-div(K1_0 grad .)`` with Neumann data and zero-mean gauge."""
    K = np.asarray(K1_0, dtype=float)
    if K.shape != (2, 2) or not np.all(np.isfinite(K)):
        raise SingularOperator("K1(0) must be a finite 2x2 matrix")
    if abs(K[0, 1] - K[1, 0]) > 1e-8 * max(np.abs(K).max(), 1e-300):
        raise SingularOperator("K1(0) is not symmetric")
    eig = np.linalg.eigvalsh(0.5 * (K + K.T))
    if eig.min() <= 1e-12 * max(eig.max(), 1e-300) or eig.max() <= 0:
        raise SingularOperator(f"K1(0) is not positive definite (eigenvalues {eig})")
    grid = make_grid(n)
    grid.K0 = K
    L = grid.elliptic(K)
    ones = sp.csr_matrix(np.full((grid.n_cells, 1), grid.h**2))
    S = sp.bmat([[L, ones], [ones.T, None]], format="csc")
    try:
        grid._lu = spla.splu(S)
    except RuntimeError as exc:
        raise SingularOperator(f"elliptic factorization failed: {exc}") from exc
    return grid


# ------------------------------------------------------------ forcing fields


def uniform_field(grid: MacroGrid, vec) -> np.ndarray:
    v = np.asarray(vec, dtype=float)
    return np.repeat(v[:, None], grid.n_faces, axis=1)


def stream_psi(x, y):
    return np.sin(np.pi * x) ** 2 * np.sin(np.pi * y) ** 2


def curl_psi_exact(pts: np.ndarray) -> np.ndarray:
    """``(d psi / dy, -d psi / dx)`` for ``psi = sin^2(pi x) sin^2(pi y)``."""
    pts = np.asarray(pts, dtype=float)
    x, y = pts[..., 0], pts[..., 1]
    sx, sy = np.sin(np.pi * x), np.sin(np.pi * y)
    dpsi_dx = 2 * np.pi * sx * np.cos(np.pi * x) * sy**2
    dpsi_dy = 2 * np.pi * sy * np.cos(np.pi * y) * sx**2
    return np.stack([dpsi_dy, -dpsi_dx], axis=-1)


def curl_field(grid: MacroGrid, psi: Callable = stream_psi) -> np.ndarray:
    """Discrete curl of a streamfunction vanishing on the boundary.

    Exactly divergence-free with zero normal flux on the MAC grid.
    """
    h, n = grid.h, grid.n
    xp = grid.xface_points()
    ux = (psi(xp[:, 0], xp[:, 1] + 0.5 * h) - psi(xp[:, 0], xp[:, 1] - 0.5 * h)) / h
    yp = grid.yface_points()
    uy = -(psi(yp[:, 0] + 0.5 * h, yp[:, 1]) - psi(yp[:, 0] - 0.5 * h, yp[:, 1])) / h
    return grid.complete(np.concatenate([ux, uy]))


# ------------------------------------------------------------ run state


@dataclass
class MacroProblem:
    """Inputs of a macro run.

    ``forcing(n)`` returns the face field ``f(t_n)``; ``dW1`` (N, J1) and
    ``dW2`` (N, J2) are mode increments; ``w0`` is (N+1, 2, nF) or None;
    ``H3`` is the aggregate kernel of the stochastic cell problem on the macro
    time grid, shape (N+1, 2, J2).

    ``scheme="trapezoid"`` uses ``K1(0)`` as the instantaneous coefficient and
    the trapezoid rule for the forcing and ``K1'`` memory terms.
    ``scheme="semigroup"`` is the exact aggregate of the implicit-Euler cell
    dynamics: kernel samples ``K1[1:]`` weight the forcing, kernel increments
    weight the pressure history and ``K1(dt)`` is the instantaneous coefficient.
    """

    table: KernelTable
    n: int = 32
    T: float = 1.0
    stride: int = 1
    forcing: Callable[[int], np.ndarray] | None = None
    noise: NoiseOperators | None = None
    dW1: np.ndarray | None = None
    dW2: np.ndarray | None = None
    w0: np.ndarray | None = None
    H3: np.ndarray | None = None
    scheme: str = "semigroup"

    @property
    def dt(self) -> float:
        return self.table.dt * self.stride

    @property
    def n_steps(self) -> int:
        return int(round(self.T / self.dt))


@dataclass(eq=False)
class MacroState:
    grid: MacroGrid
    problem: MacroProblem
    K1: np.ndarray
    K2: np.ndarray
    K1p: np.ndarray
    t: np.ndarray
    P: np.ndarray  # (N+1, nc)
    u: np.ndarray  # (N+1, nF) normal components
    f_hist: qd.ConvolutionBuffer
    gradP: qd.ConvolutionBuffer
    s1: np.ndarray | None  # (N, 2, nF) W1 noise fields per increment
    s2: np.ndarray | None
    index: int = -1

    @property
    def dt(self) -> float:
        return float(self.t[1] - self.t[0])


SCHEMES = ("trapezoid", "semigroup")


def instantaneous_coefficient(K1: np.ndarray, scheme: str = "semigroup") -> np.ndarray:
    """``K1(dt)`` for the semigroup scheme, ``K1(0)`` for the trapezoid scheme."""
    return np.asarray(K1[1] if scheme == "semigroup" else K1[0])


def problem_grid(problem: "MacroProblem") -> MacroGrid:
    """Grid factorized with the instantaneous coefficient the problem will use."""
    K1 = problem.table.K1[:: problem.stride]
    return assemble_macro(problem.n, instantaneous_coefficient(K1, problem.scheme))


def _resample(table: KernelTable, stride: int, n_steps: int):
    if stride < 1:
        raise GridMismatch("stride must be a positive integer")
    need = stride * n_steps
    if need > table.n_steps:
        raise KernelHorizonExceeded(f"kernel horizon {table.T} shorter than the run ({need * table.dt})")
    K1 = table.K1[: need + 1 : stride]
    K2 = table.K2[: need + 1 : stride]
    if stride == 1 and table.K1p is not None:
        K1p = table.K1p[: need + 1]
    else:
        sub = KernelTable(table.t[: need + 1 : stride], K1, K2)
        K1p = kernel_derivative(sub)
    return K1, K2, K1p


def init_macro(problem: MacroProblem, grid: MacroGrid | None = None) -> MacroState:
    N = problem.n_steps
    if N < 1 or abs(N * problem.dt - problem.T) > 1e-9 * max(1.0, problem.T):
        raise GridMismatch(f"T={problem.T} is not a multiple of the macro step {problem.dt}")
    K1, K2, K1p = _resample(problem.table, problem.stride, N)
    if problem.scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {problem.scheme!r}")
    K_inst = instantaneous_coefficient(K1, problem.scheme)
    grid = assemble_macro(problem.n, K_inst) if grid is None else grid
    if grid.n != problem.n or not np.allclose(grid.K0, K_inst, rtol=1e-12, atol=0):
        raise GridMismatch("grid does not match the problem (size or K1(0))")
    nF = grid.n_faces
    dt = problem.dt
    pts = grid.face_points()
    s1 = s2 = None
    ops = problem.noise
    if ops is not None and problem.dW1 is not None and np.any(ops.g1):
        dW1 = _check_increments(problem.dW1, N)
        modes = bulk_modes(dW1.shape[1], pts)  # (J1, nF, 2)
        gains = np.stack([_pad(ops.g1_at(k), dW1.shape[1]) for k in range(N)])
        s1 = np.einsum("kj,jfc->kcf", gains * dW1, modes)
    if ops is not None and problem.dW2 is not None and np.any(ops.g21):
        dW2 = _check_increments(problem.dW2, N)
        modes = bulk_modes(dW2.shape[1], pts)
        gains = np.stack([_pad(ops.g21_at(k), dW2.shape[1]) for k in range(N)])
        s2 = np.einsum("kj,jfc->kcf", gains * dW2, modes)
    return MacroState(
        grid=grid,
        problem=problem,
        K1=K1,
        K2=K2,
        K1p=K1p,
        t=dt * np.arange(N + 1),
        P=np.zeros((N + 1, grid.n_cells)),
        u=np.zeros((N + 1, nF)),
        f_hist=qd.ConvolutionBuffer(N, (2, nF), dt),
        gradP=qd.ConvolutionBuffer(N, (2, nF), dt),
        s1=s1,
        s2=s2,
    )


def _pad(g: np.ndarray, J: int) -> np.ndarray:
    g = np.asarray(g, dtype=float).ravel()
    out = np.zeros(J)
    out[: min(J, len(g))] = g[:J]
    return out


def _check_increments(dW: np.ndarray, N: int) -> np.ndarray:
    dW = np.asarray(dW, dtype=float)
    if dW.ndim != 2 or len(dW) < N:
        raise GridMismatch(f"need {N} increments per mode, got shape {dW.shape}")
    return dW[:N]


def known_terms(state: MacroState, n: int) -> dict[str, np.ndarray]:
    """The six history terms of b at step n (pressure term excluded)."""
    pr, g = state.problem, state.grid
    nF = g.n_faces
    dt = state.dt
    zero = np.zeros((2, nF))
    terms = {}
    terms["w0"] = pr.w0[n] if pr.w0 is not None else zero
    semi = pr.scheme == "semigroup"
    if pr.forcing is None:
        terms["forcing"] = zero
    elif semi:
        terms["forcing"] = qd.shifted_sum(state.K1, state.f_hist.data, n, dt)
    else:
        terms["forcing"] = qd.convolve(state.K1, state.f_hist.data, n, dt)
    terms["noise_W1"] = qd.stoch_convolve(state.K1, 1.0, state.s1, n) if state.s1 is not None else zero
    # history only: the s = t_n node belongs to the instantaneous term
    if n == 0:
        terms["memory"] = zero
    elif semi:
        terms["memory"] = -qd.increment_sum(state.K1, state.gradP.data, n)
    else:
        terms["memory"] = -qd.convolve(state.K1p, state.gradP.data, n, dt, endpoint=False)
    terms["noise_W2"] = qd.stoch_convolve(state.K2, 1.0, state.s2, n) if state.s2 is not None else zero
    if pr.H3 is not None and pr.dW2 is not None:
        c = qd.stoch_convolve(pr.H3, 1.0, pr.dW2, n)
        terms["w3"] = np.repeat(np.asarray(c)[:, None], nF, axis=1)
    else:
        terms["w3"] = zero
    return terms


def step_macro(state: MacroState) -> MacroState:
    """Advance one step: assemble b, solve for P_n, set the velocity."""
    n = state.index + 1
    if n >= len(state.t):
        raise KernelHorizonExceeded("run horizon reached")
    pr, g = state.problem, state.grid
    if pr.forcing is not None:
        state.f_hist.append(pr.forcing(n))
    else:
        state.f_hist.append(np.zeros((2, g.n_faces)))
    terms = known_terms(state, n)
    b = sum(terms.values())
    P = g.solve_pressure(b)
    gP = g.grad(P)
    state.gradP.append(gP)
    u = b - g.apply(g.K0, gP)
    state.P[n] = P
    state.u[n] = g.normal(u)
    state.index = n
    return state


def run_macro(problem: MacroProblem, grid: MacroGrid | None = None) -> MacroState:
    state = init_macro(problem, grid)
    for _ in range(len(state.t)):
        step_macro(state)
    return state


def evaluate_velocity(state: MacroState, n: int, terms: bool = False):
    """Stored velocity at step n; with ``terms=True`` also the seven contributions
    (normal components), recomputed from the stored histories."""
    if n < 0 or n > state.index:
        raise NotComputed(f"step {n} has not been computed (last step {state.index})")
    if not terms:
        return state.u[n]
    g = state.grid
    parts = {k: g.normal(v) for k, v in known_terms(state, n).items()}
    parts["pressure"] = -g.normal(g.apply(g.K0, state.gradP.data[n]))
    return state.u[n], parts


# ------------------------------------------------------- initial data term


def w0_aggregate(space, op, W0, a: Callable[[np.ndarray], np.ndarray], grid: MacroGrid, dt: float, n_steps: int,
                 project: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Separable initial data ``u0(x, y) = a(x) W0(y)``.

    Returns ``(c, F)`` with ``c[n] = int_Y* S(t_n) W0 dy`` and the face fields
    ``F[n] = a(x) c[n]``.  ``W0`` may also be a matrix of samples
    ``U0[p] = u0(x_p, .)``; it must then have rank one.
    """
    from .cell import evolve, project_reduced

    W0 = np.asarray(W0, dtype=float)
    if W0.ndim == 2:
        s = np.linalg.svd(W0, compute_uv=False)
        if s.size > 1 and s[1] > 1e-10 * max(s[0], 1e-300):
            raise NonSeparableInitialData("initial data is not of the form a(x) W0(y)")
        _, _, vt = np.linalg.svd(W0, full_matrices=False)
        W0 = vt[0] * s[0]
    if W0.shape != (space.n_u,):
        raise NonSeparableInitialData("W0 must be a reduced cell velocity vector")
    u0 = project_reduced(space, op, W0).u if project else W0
    tr = evolve(space, op, np.zeros(space.n_u), n_steps * dt, dt, u0=u0, label="w0")
    c = tr.U @ op.L.T
    av = np.asarray(a(grid.face_points()), dtype=float).reshape(-1)
    return c, c[:, :, None] * av[None, None, :]


# ------------------------------------------------------------- output


def run_table(state: MacroState) -> np.ndarray:
    """Rows ``(t, |u|_L2, max|div u|, |P|_L2)`` for computed steps."""
    g = state.grid
    rows = []
    for n in range(state.index + 1):
        un = state.u[n]
        rows.append((state.t[n], g.l2_norm(un), float(np.abs(g.div(un)).max()), g.cell_l2(state.P[n])))
    return np.asarray(rows)


def write_run_csv(state: MacroState, path: str | Path) -> None:
    rows = run_table(state)
    lines = ["t,u_l2,max_div,p_l2"] + [",".join(repr(float(v)) for v in r) for r in rows]
    Path(path).write_text("\n".join(lines) + "\n")


def write_snapshot_csv(state: MacroState, n: int, path: str | Path) -> None:
    """Cell-centred snapshot: x, y, P, u1, u2 (velocity averaged from faces)."""
    g = state.grid
    un = evaluate_velocity(state, n)
    uc = cell_velocity(g, un)
    C = g.centers()
    lines = ["x,y,P,u1,u2"]
    lines += [
        ",".join(repr(float(v)) for v in row)
        for row in np.column_stack([C, state.P[n], uc])
    ]
    Path(path).write_text("\n".join(lines) + "\n")


def cell_velocity(grid: MacroGrid, un: np.ndarray) -> np.ndarray:
    """Average the two normal face values of each cell (boundary faces are zero)."""
    n = grid.n
    ux = np.zeros((n, n + 1))
    ux[:, 1:n] = un[: grid.n_xf].reshape(n, n - 1)
    uy = np.zeros((n + 1, n))
    uy[1:n, :] = un[grid.n_xf :].reshape(n - 1, n)
    u1 = 0.5 * (ux[:, :-1] + ux[:, 1:])
    u2 = 0.5 * (uy[:-1, :] + uy[1:, :])
    return np.column_stack([u1.ravel(), u2.ravel()])
