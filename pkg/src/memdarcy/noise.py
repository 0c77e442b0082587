"""Truncated Karhunen-Loeve noise, noise operators, and the stochastic cell problem.

W1 lives on the macro domain D (tensor cosine modes), W2 on the hole boundary
(Fourier modes in arc length).  Increments come from counter-based Philox
streams keyed by ``(seed, stream, channel)`` so any path can be regenerated
independently of scheduling.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import fem
from .cell import tangential_load
from .errors import InvalidSpec, SolveFailure

CHANNEL_W1 = 1
CHANNEL_W2 = 2


@dataclass(frozen=True)
class KLNoise:
    """Truncated expansion ``W = sum_j sqrt(lam_j) beta_j e_j``.

    ``eigenvalues`` must be positive and nonincreasing; ``channel`` separates
    independent processes (W1 vs W2) drawn from the same seed.
    """

    eigenvalues: tuple[float, ...] = tuple(1.0 / (j + 1) ** 2 for j in range(8))
    seed: int = 0
    channel: int = CHANNEL_W1

    def __post_init__(self):
        lam = np.asarray(self.eigenvalues, dtype=float)
        if lam.ndim != 1 or len(lam) < 1:
            raise InvalidSpec("need at least one mode")
        if not np.all(np.isfinite(lam)) or np.any(lam <= 0):
            raise InvalidSpec("eigenvalues must be finite and strictly positive")
        if np.any(np.diff(lam) > 0):
            raise InvalidSpec("eigenvalues must be nonincreasing")
        if not 0 <= int(self.seed) < 2**64:
            raise InvalidSpec("seed must be an unsigned 64-bit integer")
        object.__setattr__(self, "eigenvalues", tuple(float(x) for x in lam))

    @property
    def J(self) -> int:
        return len(self.eigenvalues)

    @property
    def lam(self) -> np.ndarray:
        return np.asarray(self.eigenvalues)

    @property
    def trace(self) -> float:
        return float(self.lam.sum())

    @classmethod
    def power_law(cls, J: int = 8, decay: float = 2.0, seed: int = 0, channel: int = CHANNEL_W1, scale: float = 1.0):
        """``lam_j = scale * (j + 1)^(-decay)``."""
        if J < 1:
            raise InvalidSpec("need at least one mode")
        return cls(tuple(scale * (j + 1.0) ** (-decay) for j in range(J)), seed, channel)


@dataclass
class WienerPath:
    """Per-mode increments ``dW[n, j] ~ N(0, lam_j dt)`` on ``t = dt * arange(N + 1)``."""

    t: np.ndarray
    dW: np.ndarray
    stream: int
    lam: np.ndarray

    @property
    def dt(self) -> float:
        return float(self.t[1] - self.t[0])

    @property
    def W(self) -> np.ndarray:
        """Cumulative path, shape (N + 1, J), ``W[0] = 0``."""
        return np.vstack([np.zeros((1, self.dW.shape[1])), np.cumsum(self.dW, axis=0)])


def rng_for(seed: int, stream: int, channel: int) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(stream), int(channel)))
    return np.random.Generator(np.random.Philox(ss))


def sample_wiener(spec: KLNoise, dt: float, n_steps: int, stream: int = 0) -> WienerPath:
    """Independent Gaussian increments scaled by ``sqrt(lam_j dt)``."""
    if dt <= 0 or n_steps < 1:
        raise InvalidSpec("need dt > 0 and at least one step")
    z = rng_for(spec.seed, stream, spec.channel).standard_normal((n_steps, spec.J))
    dW = z * np.sqrt(spec.lam * dt)
    return WienerPath(dt * np.arange(n_steps + 1), dW, int(stream), spec.lam.copy())


def sample_wiener_batch(spec: KLNoise, dt: float, n_steps: int, streams) -> np.ndarray:
    """Stacked increments, shape (R, n_steps, J), one stream per replica."""
    return np.stack([sample_wiener(spec, dt, n_steps, s).dW for s in streams])


# ------------------------------------------------------------- spatial modes


def _cos1d(k: int, x: np.ndarray) -> np.ndarray:
    return np.ones_like(x) if k == 0 else np.sqrt(2.0) * np.cos(k * np.pi * x)


def bulk_mode_pairs(count: int) -> list[tuple[int, int]]:
    """Tensor indices ``(k, l)`` ordered by total degree, then by ``k``."""
    out = []
    d = 0
    while len(out) < count:
        out += [(k, d - k) for k in range(d, -1, -1)]
        d += 1
    return out[:count]


def bulk_modes(J: int, pts: np.ndarray) -> np.ndarray:
    """Vector modes on D = [0,1]^2 at ``pts`` (..., 2); shape (J, ..., 2).

    Mode ``j`` is ``c_k(x1) c_l(x2) e_{j mod 2}`` with ``c_0 = 1`` and
    ``c_k = sqrt(2) cos(k pi x)``; orthonormal in L2(D)^2.
    """
    pts = np.asarray(pts, dtype=float)
    pairs = bulk_mode_pairs((J + 1) // 2)
    out = np.zeros((J,) + pts.shape)
    for j in range(J):
        k, l = pairs[j // 2]
        out[j, ..., j % 2] = _cos1d(k, pts[..., 0]) * _cos1d(l, pts[..., 1])
    return out


def hole_arclength(space) -> tuple[np.ndarray, float]:
    """Arc length at every boundary quadrature point, measured along tau."""
    be = space.be
    ne = len(be.nodes)
    start = {int(be.nodes[e, 0]): e for e in range(ne)}
    s0 = np.zeros(ne)
    e, acc = 0, 0.0
    for _ in range(ne):
        s0[e] = acc
        acc += be.length[e]
        e = start.get(int(be.nodes[e, 2]), -1)
        if e < 0:
            raise InvalidSpec("hole boundary is not a single closed chain")
    return s0[:, None] + fem.GAUSS_S[None, :] * be.length[:, None], acc


def boundary_modes(space, count: int) -> np.ndarray:
    """Scalar tangential modes at boundary quadrature points, shape (count, ne, nq).

    Ordered ``1, cos(2 pi s/P), sin(2 pi s/P), cos(4 pi s/P), ...`` and made
    exactly orthonormal for the discrete boundary quadrature.
    """
    s, P = hole_arclength(space)
    raw = []
    for m in range(count):
        k = (m + 1) // 2
        if m == 0:
            raw.append(np.ones_like(s))
        elif m % 2:
            raw.append(np.cos(2 * np.pi * k * s / P))
        else:
            raw.append(np.sin(2 * np.pi * k * s / P))
    Phi = np.stack([r.ravel() for r in raw], axis=1)
    w = space.be.wlen.ravel()
    G = Phi.T @ (w[:, None] * Phi)
    C = np.linalg.cholesky(G)
    Q = np.linalg.solve(C, Phi.T).T  # Gram-Schmidt order preserved
    return Q.T.reshape((count,) + s.shape)


def boundary_gram(space, modes: np.ndarray) -> np.ndarray:
    w = space.be.wlen.ravel()
    F = modes.reshape(len(modes), -1)
    return F @ (w[:, None] * F.T)


# ----------------------------------------------------------- noise operators


@dataclass
class NoiseOperators:
    """Finite-rank gains.

    ``g1`` (J1,) or (N, J1): diagonal gains of W1 onto the first J1 bulk modes.
    ``g21`` (J2,) or (N, J2): diagonal gains of W2 onto bulk modes on D.
    ``g22`` (n_bmodes, J2) or (N, n_bmodes, J2): W2 onto boundary Fourier modes.
    A leading time axis means piecewise-constant values on the macro grid.
    """

    g1: np.ndarray
    g21: np.ndarray
    g22: np.ndarray

    @classmethod
    def default(cls, J1: int = 8, J2: int = 8, g1_gain: float = 1.0, g21_gain: float = 0.0, g22_gain: float = 1.0):
        g22 = np.zeros((max(2, J2), J2))
        # W2 mode 0 drives the first tangential Fourier mode cos(2 pi s / P)
        g22[1, 0] = g22_gain
        return cls(np.full(J1, float(g1_gain)), np.full(J2, float(g21_gain)), g22)

    @staticmethod
    def _at(g: np.ndarray, n: int, static_ndim: int) -> np.ndarray:
        g = np.asarray(g, dtype=float)
        return g[min(n, len(g) - 1)] if g.ndim > static_ndim else g

    def g1_at(self, n: int) -> np.ndarray:
        return self._at(self.g1, n, 1)

    def g21_at(self, n: int) -> np.ndarray:
        return self._at(self.g21, n, 1)

    def g22_at(self, n: int) -> np.ndarray:
        return self._at(self.g22, n, 2)

    def hs_norms(self, lam1: np.ndarray, lam2: np.ndarray, n_steps: int) -> np.ndarray:
        """``|g Q^(1/2)|_HS^2`` per step for g1, g21, g22 (modes orthonormal); shape (n_steps, 3)."""
        out = np.zeros((n_steps, 3))
        for n in range(n_steps):
            out[n, 0] = np.sum(self.g1_at(n) ** 2 * lam1[: len(self.g1_at(n))])
            out[n, 1] = np.sum(self.g21_at(n) ** 2 * lam2[: len(self.g21_at(n))])
            out[n, 2] = np.sum(self.g22_at(n) ** 2 * lam2[None, : self.g22_at(n).shape[1]])
        return out

    @property
    def is_zero_g22(self) -> bool:
        return not np.any(self.g22)


def g22_loads(space, op, g22: np.ndarray) -> np.ndarray:
    """Reduced load vectors per W2 mode, shape (n_u, J2)."""
    g22 = np.asarray(g22, dtype=float)
    J2 = g22.shape[1]
    if not space.has_hole or not np.any(g22):
        return np.zeros((space.n_u, J2))
    modes = boundary_modes(space, g22.shape[0])
    dens = np.einsum("mj,meq->jeq", g22, modes)
    return np.stack([tangential_load(space, op, dens[j]) for j in range(J2)], axis=1)


# -------------------------------------------------------- stochastic cell solve


@dataclass
class W3Trajectory:
    t: np.ndarray
    U: np.ndarray  # (R, N + 1, n_u)
    Q: np.ndarray  # (R, N + 1, n_p)

    @property
    def n_paths(self) -> int:
        return self.U.shape[0]


def solve_w3(space, op, g22: np.ndarray, dW: np.ndarray, dt: float, keep_pressure: bool = False) -> W3Trajectory:
    """Semi-implicit Euler-Maruyama for the boundary-driven cell problem.

    ``(M + dt A) u' + B^T q' = M u + G dW_n``, zero initial data.  ``dW`` has
    shape (N, J2) for one path or (R, N, J2) for a batch sharing one
    factorization.
    """
    dW = np.asarray(dW, dtype=float)
    if dW.ndim == 2:
        dW = dW[None]
    R, N, J2 = dW.shape
    G = g22_loads(space, op, g22)
    if G.shape[1] != J2:
        raise InvalidSpec("g22 columns must match the W2 mode count")
    lu = op.saddle(("step", dt), op.M + dt * op.A)
    nu_, np_ = op.B.shape[1], op.B.shape[0]
    U = np.zeros((R, N + 1, nu_))
    Q = np.zeros((R, N + 1, np_)) if keep_pressure else np.zeros((R, 0, np_))
    rhs = np.zeros((nu_ + np_ + 1, R))
    for n in range(N):
        rhs[:nu_] = op.M @ U[:, n].T + G @ dW[:, n].T
        x = lu.solve(rhs)
        if not np.all(np.isfinite(x)):
            raise SolveFailure(f"non-finite stochastic cell step {n}")
        U[:, n + 1] = x[:nu_].T
        if keep_pressure:
            Q[:, n + 1] = x[nu_ : nu_ + np_].T / dt
    return W3Trajectory(dt * np.arange(N + 1), U, Q)


def w3_impulse(space, op, g22: np.ndarray, dt: float, n_steps: int) -> np.ndarray:
    """Impulse responses ``v[m, :, j] = (R M)^(m-1) R G_j``, ``v[0] = 0``; shape (N + 1, n_u, J2).

    Then ``u_n = sum_{k<n} v[n - k] dW_k`` reproduces :func:`solve_w3`.
    """
    G = g22_loads(space, op, g22)
    J2 = G.shape[1]
    lu = op.saddle(("step", dt), op.M + dt * op.A)
    nu_, np_ = op.B.shape[1], op.B.shape[0]
    V = np.zeros((n_steps + 1, nu_, J2))
    rhs = np.zeros((nu_ + np_ + 1, J2))
    rhs[:nu_] = G
    for m in range(1, n_steps + 1):
        V[m] = lu.solve(rhs)[:nu_]
        rhs[:nu_] = op.M @ V[m]
    return V


def w3_aggregate_kernel(space, op, g22: np.ndarray, dt: float, n_steps: int) -> np.ndarray:
    """``H[m] = int_Y* v[m] dy``, shape (N + 1, 2, J2); the aggregate of a path
    is then ``stoch_convolve(H, 1, dW, n)``."""
    V = w3_impulse(space, op, g22, dt, n_steps)
    return np.einsum("cu,muj->mcj", op.L, V)


def ito_isometry_oracle(space, op, g22: np.ndarray, lam: np.ndarray, dt: float, n_steps: int) -> np.ndarray:
    """Exact ``E |u_n|_H^2`` for every n under the discrete scheme."""
    V = w3_impulse(space, op, g22, dt, n_steps)
    MV = np.stack([op.M @ v for v in V])
    norms = np.einsum("muj,muj->mj", V, MV)
    per_step = norms @ (np.asarray(lam)[: V.shape[2]] * dt)
    return np.cumsum(per_step)


def ou_variance_oracle(mu: float, g: float, t) -> np.ndarray | float:
    """Variance of ``dZ = -mu Z dt + g dW`` from ``Z(0) = 0``."""
    if mu <= 0:
        raise InvalidSpec("decay rate must be positive")
    t = np.asarray(t, dtype=float)
    out = g**2 * -np.expm1(-2 * mu * t) / (2 * mu)
    return float(out) if out.ndim == 0 else out


def ou_euler_paths(mu: float, g: float, dt: float, n_steps: int, n_paths: int, seed: int = 0) -> np.ndarray:
    """Implicit-Euler OU samples, shape (n_paths, n_steps + 1), one stream per path."""
    spec = KLNoise((1.0,), seed, CHANNEL_W1)
    Z = np.zeros((n_paths, n_steps + 1))
    dW = sample_wiener_batch(spec, dt, n_steps, range(n_paths))[:, :, 0]
    for n in range(n_steps):
        Z[:, n + 1] = (Z[:, n] + g * dW[:, n]) / (1 + mu * dt)
    return Z


def ou_discrete_variance(mu: float, g: float, dt: float, n: int) -> float:
    """Exact variance of the implicit-Euler OU recursion after n steps."""
    r = 1.0 / (1 + mu * dt)
    return float(g**2 * dt * r**2 * (1 - r ** (2 * n)) / (1 - r**2))


# ---------------------------------------------------------------- output


def write_path_csv(path: WienerPath, fname: str | Path) -> None:
    lines = ["t,mode,increment"]
    for n in range(len(path.dW)):
        for j in range(path.dW.shape[1]):
            lines.append(f"{float(path.t[n])!r},{j},{float(path.dW[n, j])!r}")
    Path(fname).write_text("\n".join(lines) + "\n")


def read_path_csv(fname: str | Path) -> tuple[np.ndarray, np.ndarray]:
    data = np.loadtxt(fname, delimiter=",", skiprows=1, ndmin=2)
    t = np.unique(data[:, 0])
    J = int(data[:, 1].max()) + 1
    return t, data[:, 2].reshape(len(t), J)


@dataclass
class EnsembleSummary:
    t: np.ndarray
    mean: np.ndarray
    var: np.ndarray
    stderr: np.ndarray
    n_paths: int = 0
    extra: dict = field(default_factory=dict)


def ensemble_summary(t: np.ndarray, E: np.ndarray) -> EnsembleSummary:
    """Mean, sample variance and standard error over the first axis of ``E``."""
    E = np.asarray(E, dtype=float)
    R = E.shape[0]
    mean = E.mean(axis=0)
    var = E.var(axis=0, ddof=1) if R > 1 else np.zeros_like(mean)
    return EnsembleSummary(np.asarray(t), mean, var, np.sqrt(var / max(R, 1)), R)


def write_ensemble_csv(summary: EnsembleSummary, fname: str | Path, quantity: str = "E") -> None:
    """Columns t, mean_E, var_E, stderr; ``quantity`` names E in a comment line."""
    lines = [f"# n_paths={summary.n_paths}", f"# quantity={quantity}", "t,mean_E,var_E,stderr"]
    lines += [
        f"{t!r},{m!r},{v!r},{s!r}"
        for t, m, v, s in zip(summary.t.tolist(), summary.mean.tolist(), summary.var.tolist(), summary.stderr.tolist())
    ]
    Path(fname).write_text("\n".join(lines) + "\n")


def read_ensemble_csv(fname: str | Path) -> EnsembleSummary:
    meta, rows = {}, []
    for ln in Path(fname).read_text().splitlines():
        if ln.startswith("#"):
            k, _, v = ln[1:].strip().partition("=")
            meta[k.strip()] = v.strip()
        elif ln.strip() and not ln.startswith("t,"):
            rows.append([float(x) for x in ln.split(",")])
    data = np.array(rows, ndmin=2)
    extra = {k: v for k, v in meta.items() if k != "n_paths"}
    return EnsembleSummary(data[:, 0], data[:, 1], data[:, 2], data[:, 3], int(meta.get("n_paths", 0)), extra)
