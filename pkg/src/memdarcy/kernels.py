"""Permeability kernels sampled from cell trajectories.

``K1(t)_ij = int_Y* (d w1_i / dt)_j dy`` and likewise ``K2`` from the
boundary-forced trajectories.  For the implicit-Euler semigroup the samples
are Gram values ``<S_h^n P e_i, P e_j>_H``, so symmetry and monotonicity hold
to solver precision.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import GridMismatch, NoDecay

XI = (np.array([1.0, 0.0]), np.array([0.0, 1.0]), np.array([1.0, 1.0]))


@dataclass
class KernelTable:
    """Kernel samples on the uniform grid ``t = dt * arange(N + 1)``.

    Arrays ``K1``, ``K2``, ``K1p`` have shape ``(N + 1, 2, 2)``.  ``meta``
    holds provenance (mesh hash, nu, alpha, ...).
    """

    t: np.ndarray
    K1: np.ndarray
    K2: np.ndarray
    K1p: np.ndarray | None = None
    decay_rate: float = float("nan")
    K_steady: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def dt(self) -> float:
        return float(self.t[1] - self.t[0])

    @property
    def T(self) -> float:
        return float(self.t[-1])

    @property
    def n_steps(self) -> int:
        return len(self.t) - 1

    def copy(self) -> "KernelTable":
        return KernelTable(
            self.t.copy(),
            self.K1.copy(),
            self.K2.copy(),
            None if self.K1p is None else self.K1p.copy(),
            self.decay_rate,
            None if self.K_steady is None else self.K_steady.copy(),
            dict(self.meta),
        )


def _check_grids(trajs) -> np.ndarray:
    t0 = np.asarray(trajs[0].t)
    for tr in trajs[1:]:
        if len(tr.t) != len(t0) or not np.allclose(tr.t, t0, rtol=0, atol=1e-12 * max(1.0, t0[-1])):
            raise GridMismatch("trajectories live on different time grids")
    if len(t0) < 2 or not np.allclose(np.diff(t0), t0[1] - t0[0], rtol=1e-9, atol=0):
        raise GridMismatch("time grid must be uniform with at least two points")
    return t0


def _samples(trajs, L: np.ndarray) -> np.ndarray:
    # K[n, i, j] = L_j . dUdt_i[n]
    return np.stack([tr.dUdt @ L.T for tr in trajs], axis=1)


def compute_kernels(
    w1_trajs: Sequence, w2_trajs: Sequence, op, meta: dict | None = None, fit: bool = True
) -> KernelTable:
    """Build ``K1``, ``K2`` (and ``K1p``, decay rate) from the trajectory pairs.

    Parameters
    ----------
    w1_trajs, w2_trajs : sequence of Trajectory
        Directions ``i = 1, 2`` in order.
    op : CellOperator
        Supplies the ``Y*`` integral functionals.
    """
    if len(w1_trajs) != 2 or len(w2_trajs) != 2:
        raise GridMismatch("need both directions i = 1, 2 for w1 and w2")
    t = _check_grids(list(w1_trajs) + list(w2_trajs))
    table = KernelTable(t.copy(), _samples(w1_trajs, op.L), _samples(w2_trajs, op.L), meta=dict(meta or {}))
    table.meta.setdefault("dt", table.dt)
    table.meta.setdefault("T", table.T)
    table.K1p = kernel_derivative(table)
    if fit:
        table.decay_rate = fit_decay_rate(table.t, table.K1)
    return table


def kernel_derivative(table: KernelTable) -> np.ndarray:
    """Second-order central differences inside, first-order one-sided at the ends."""
    K, dt = table.K1, table.dt
    D = np.empty_like(K)
    if len(K) == 2:
        D[:] = (K[1] - K[0]) / dt
        return D
    D[1:-1] = (K[2:] - K[:-2]) / (2 * dt)
    D[0] = (K[1] - K[0]) / dt
    D[-1] = (K[-1] - K[-2]) / dt
    return D


def derivative_richardson(table: KernelTable) -> float:
    """Relative gap between the dt and 2dt central differences at shared interior points."""
    K, dt = table.K1, table.dt
    if len(K) < 5:
        return float("nan")
    D1 = (K[2:] - K[:-2]) / (2 * dt)  # centred at indices 1..N-1
    D2 = (K[4:] - K[:-4]) / (4 * dt)  # centred at indices 2..N-2
    gap = np.abs(D1[1:-1] - D2).max()
    return float(gap / max(np.abs(D1).max(), 1e-300))


def _quadratic_forms(K: np.ndarray) -> np.ndarray:
    return np.stack([np.einsum("i,nij,j->n", xi, K, xi) for xi in XI], axis=1)


def fit_decay_rate(t: np.ndarray, K: np.ndarray, xi: np.ndarray | None = None) -> float:
    """Least-squares exponential rate of ``|xi^T K(t) xi|`` over the last half of the grid.

    Returns 0 when the form is constant or vanishes.
    """
    xi = XI[0] if xi is None else xi
    q = np.abs(np.einsum("i,nij,j->n", xi, K, xi))
    half = len(t) // 2
    tt, qq = t[half:], q[half:]
    if np.all(qq <= 1e-300) or np.ptp(qq) <= 1e-12 * np.abs(qq).max():
        return 0.0
    slope = np.polyfit(tt, np.log(np.maximum(qq, 1e-300)), 1)[0]
    return float(max(-slope, 0.0))


@dataclass
class KernelReport:
    symmetry_defect: float
    min_eigenvalue: float
    monotonicity_violations: int
    derivative_violations: int
    isotropy_defect: float
    decay_rate: float
    decay_rate_K2: float
    tol_symmetry: float = 1e-8
    tol_eig: float = -1e-10
    slack: float = 1e-10

    @property
    def checks(self) -> dict[str, bool]:
        return {
            "symmetry": self.symmetry_defect <= self.tol_symmetry,
            "psd": self.min_eigenvalue >= self.tol_eig,
            "monotone": self.monotonicity_violations == 0,
            "derivative_sign": self.derivative_violations == 0,
        }

    @property
    def passed(self) -> bool:
        return all(self.checks.values())

    def lines(self) -> list[str]:
        vals = dict(
            symmetry_defect=self.symmetry_defect,
            min_eigenvalue=self.min_eigenvalue,
            monotonicity_violations=self.monotonicity_violations,
            derivative_violations=self.derivative_violations,
            isotropy_defect=self.isotropy_defect,
            decay_rate=self.decay_rate,
            decay_rate_K2=self.decay_rate_K2,
        )
        out = [f"{k} = {v!r}" for k, v in vals.items()]
        out += [f"check {k}: {'PASS' if ok else 'FAIL'}" for k, ok in self.checks.items()]
        return out


def check_kernel_properties(table: KernelTable, slack: float = 1e-10) -> KernelReport:
    """Symmetry, PSD, monotonicity and decay diagnostics (report only)."""
    K = table.K1
    scale = np.maximum(np.abs(K).max(axis=(1, 2)), 1e-300)
    sym = float((np.abs(K[:, 0, 1] - K[:, 1, 0]) / scale).max())
    Ks = 0.5 * (K + K.transpose(0, 2, 1))
    min_eig = float(np.linalg.eigvalsh(Ks).min())
    q = _quadratic_forms(K)
    mono = int(np.sum(np.diff(q, axis=0) > slack))
    Kp = kernel_derivative(table) if table.K1p is None else table.K1p
    dviol = int(np.sum(_quadratic_forms(Kp) > slack))
    diag = np.maximum(np.minimum(np.abs(K[:, 0, 0]), np.abs(K[:, 1, 1])), 1e-300)
    iso = float((np.maximum(np.abs(K[:, 0, 1]), np.abs(K[:, 1, 0])) / diag).max())
    rate = fit_decay_rate(table.t, K)
    rate2 = fit_decay_rate(table.t, table.K2)
    return KernelReport(sym, min_eig, mono, dviol, iso, rate, rate2, slack=slack)


def integrate_kernel(table: KernelTable, rule: str = "telescoping") -> np.ndarray:
    """``int_0^inf K1 dt`` from the samples plus the tail ``K1(T) / rate``.

    ``rule="telescoping"`` sums the right-endpoint samples, which reproduces
    ``int_Y* w1(T) dy`` exactly for the implicit-Euler trajectory.
    ``rule="trapezoid"`` is the classical trapezoid rule; it carries an
    ``O(dt K1(0))`` bias from the unresolved initial layer.
    """
    rate = table.decay_rate
    if not math.isfinite(rate):
        rate = fit_decay_rate(table.t, table.K1)
    if not rate > 0:
        raise NoDecay("kernel does not decay; the improper integral diverges")
    K, dt = table.K1, table.dt
    if rule == "telescoping":
        body = dt * K[1:].sum(axis=0)
    elif rule == "trapezoid":
        body = dt * (K[1:-1].sum(axis=0) + 0.5 * (K[0] + K[-1]))
    else:
        raise ValueError(f"unknown rule {rule!r}")
    return body + K[-1] / rate


# ------------------------------------------------------------ persistence

_COLS = [f"{name}_{i}{j}" for name in ("K1", "K2", "K1p") for i in (1, 2) for j in (1, 2)]
CONVENTION = "deterministic memory: implicit-Euler aggregate (default) or trapezoid; stochastic sums: left-point (Ito)"


def _fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, np.ndarray):
        return " ".join(repr(float(v)) for v in x.ravel())
    return str(x)


def save_kernels(table: KernelTable, path: str | Path) -> None:
    """Write the table as CSV preceded by ``# key=value`` metadata lines."""
    meta = dict(table.meta)
    meta.update(dt=table.dt, T=table.T, decay_rate=table.decay_rate, convention=CONVENTION)
    if table.K_steady is not None:
        meta["K_steady"] = np.asarray(table.K_steady)
    lines = [f"# {k}={_fmt(v)}" for k, v in meta.items()]
    lines.append(",".join(["t"] + _COLS))
    K1p = table.K1p if table.K1p is not None else kernel_derivative(table)
    data = np.concatenate(
        [table.t[:, None], table.K1.reshape(-1, 4), table.K2.reshape(-1, 4), K1p.reshape(-1, 4)], axis=1
    )
    lines += [",".join(repr(float(v)) for v in row) for row in data]
    Path(path).write_text("\n".join(lines) + "\n")


def _parse_meta(value: str):
    parts = value.split()
    try:
        nums = [float(p) for p in parts]
    except ValueError:
        return value
    if len(nums) == 1:
        return nums[0]
    return np.array(nums)


def load_kernels(path: str | Path) -> KernelTable:
    meta: dict = {}
    rows = []
    header = None
    for line in Path(path).read_text().splitlines():
        if line.startswith("#"):
            k, _, v = line[1:].strip().partition("=")
            meta[k.strip()] = v if k.strip() in ("convention", "mesh_hash", "hole") else _parse_meta(v)
        elif header is None:
            header = line.split(",")
        elif line.strip():
            rows.append([float(x) for x in line.split(",")])
    if header != ["t"] + _COLS:
        raise ValueError(f"unexpected kernel file header in {path}")
    data = np.asarray(rows)
    t = data[:, 0]
    K1, K2, K1p = (data[:, 1 + 4 * k : 5 + 4 * k].reshape(-1, 2, 2) for k in range(3))
    rate = float(meta.pop("decay_rate", float("nan")))
    Ks = meta.pop("K_steady", None)
    meta.pop("convention", None)
    return KernelTable(t, K1, K2, K1p, rate, None if Ks is None else np.asarray(Ks).reshape(2, 2), meta)


def constant_kernels(K: np.ndarray, T: float, dt: float, K2: np.ndarray | None = None) -> KernelTable:
    """Time-independent kernels (e.g. the no-hole limit ``K1 = I``)."""
    n = int(round(T / dt))
    t = dt * np.arange(n + 1)
    K1 = np.broadcast_to(np.asarray(K, float), (n + 1, 2, 2)).copy()
    K2a = np.zeros_like(K1) if K2 is None else np.broadcast_to(np.asarray(K2, float), K1.shape).copy()
    return KernelTable(t, K1, K2a, np.zeros_like(K1), 0.0)
