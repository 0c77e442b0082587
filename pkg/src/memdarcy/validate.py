"""Self-contained invariant suite with measured defects.

Each check returns a :class:`Check`; ``run_suite`` collects them.  Randomized
checks draw from ``seed``; deterministic checks ignore it.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import fem
from . import macro as mc
from . import quadrature as qd
from .cell import assemble, leray_project
from .geometry import HoleSpec, build_cell_mesh
from .kernels import KernelTable, check_kernel_properties, compute_kernels, constant_kernels
from .noise import ou_euler_paths, ou_variance_oracle


@dataclass
class Check:
    name: str
    defect: float
    tolerance: float
    passed: bool
    deterministic: bool = True

    def line(self) -> str:
        return f"{self.name},{'PASS' if self.passed else 'FAIL'},{self.defect!r},{self.tolerance!r}"


HEADER = "name,status,defect,tolerance"


def _le(name, defect, tol, deterministic=True) -> Check:
    return Check(name, float(defect), float(tol), bool(defect <= tol), deterministic)


def check_fubini(rng: np.random.Generator, trials: int = 100, tol: float = 1e-11) -> list[Check]:
    det, sto = 0.0, 0.0
    for _ in range(trials):
        N = int(rng.integers(2, 80))
        dt = float(rng.uniform(1e-3, 0.5))
        a, b = rng.standard_normal(N), rng.standard_normal(N)
        det = max(det, qd.fubini_check(a, b, dt) / qd.fubini_scale(a, b, dt))
        g = rng.standard_normal(N)
        dW = rng.standard_normal(N) * np.sqrt(dt)
        scale = qd.stoch_fubini_scale(a, g, dW, dt)
        sto = max(sto, qd.stoch_fubini_check(a, g, dW, dt) / max(scale, 1e-300))
    return [_le("fubini_deterministic", det, tol, False), _le("fubini_stochastic", sto, tol, False)]


def check_ou(seed: int, paths: int = 4000, mu: float = 1.0, g: float = 1.0, dt: float = 1e-3) -> list[Check]:
    """Monte Carlo variance within 3 standard errors of the exact OU variance."""
    Z = ou_euler_paths(mu, g, dt, int(round(1.0 / dt)), paths, seed)
    out = []
    for t in (0.5, 1.0):
        n = int(round(t / dt))
        x = Z[:, n]
        var = x.var(ddof=1)
        se = np.sqrt(np.mean((x**2 - np.mean(x**2)) ** 2) / paths)
        z = abs(var - ou_variance_oracle(mu, g, t)) / se
        out.append(_le(f"ou_variance_t{t:g}", z, 3.0, False))
    return out


def check_skew(rng: np.random.Generator, tol: float = 1e-12) -> Check:
    from .micro import build_perforated_mesh, trilinear

    pm_ = build_perforated_mesh(0.5, 0.2)
    pm = fem.build_p2(pm_.vertices, pm_.triangles)
    worst = 0.0
    for _ in range(3):
        u, v = rng.standard_normal(2 * pm.n_nodes), rng.standard_normal(2 * pm.n_nodes)
        scale = np.linalg.norm(u) * np.linalg.norm(v) ** 2 / pm.n_nodes
        worst = max(worst, abs(trilinear(pm, u, v, v)) / scale)
    return _le("convection_skew_symmetry", worst, tol, False)


def _coarse_cell(h: float = 0.1):
    return assemble(build_cell_mesh(HoleSpec(), h))


def check_projection(rng: np.random.Generator, cell=None, tol: float = 1e-10) -> list[Check]:
    space, op = _coarse_cell() if cell is None else cell
    raw = rng.standard_normal((space.pm.n_nodes, 2))
    P1 = leray_project(space, op, raw).u
    P2 = leray_project(space, op, space.full(P1)).u
    idem = np.sqrt(op.h_norm2(P2 - P1) / op.h_norm2(P1))
    return [
        _le("projection_idempotence", idem, tol, False),
        _le("projection_divergence", op.divergence_defect(P1), tol, False),
        _le("projection_normal_trace", space.normal_trace_defect(P1) / np.abs(P1).max(), tol, False),
    ]


def check_dissipation(rng: np.random.Generator, cell=None, trials: int = 10, slack: float = 1e-12) -> Check:
    from .pipeline import dissipation_trial

    space, op = _coarse_cell() if cell is None else cell
    worst = max(dissipation_trial(space, op, rng) for _ in range(trials))
    return _le("energy_dissipation", max(worst, 0.0), slack, False)


def check_macro() -> list[Check]:
    g = mc.assemble_macro(16, np.eye(2))
    duality = abs(g.D + g.G.T).max()
    F = mc.uniform_field(g, (1.0, 0.0))
    table = constant_kernels(np.eye(2), 1.0, 0.1)
    st = mc.run_macro(mc.MacroProblem(table, 16, 1.0, 1, lambda n: F), g)
    x = g.centers()[:, 0]
    perr = max(np.abs(st.P[n] - st.t[n] * (x - 0.5)).max() for n in range(len(st.t)))
    uerr = max(g.l2_norm(st.u[n]) for n in range(len(st.t)))
    return [
        _le("macro_div_grad_duality", duality, 0.0),
        _le("macro_uniform_forcing_pressure", perr, 1e-10),
        _le("macro_uniform_forcing_velocity", uerr, 1e-10),
    ]


def kernel_checks(table: KernelTable) -> list[Check]:
    rep = check_kernel_properties(table)
    ok = rep.checks
    return [
        Check("kernel_symmetry", rep.symmetry_defect, rep.tol_symmetry, ok["symmetry"]),
        Check("kernel_psd", -rep.min_eigenvalue, -rep.tol_eig, ok["psd"]),
        Check("kernel_monotone", float(rep.monotonicity_violations), 0.0, ok["monotone"]),
        Check("kernel_derivative_sign", float(rep.derivative_violations), 0.0, ok["derivative_sign"]),
    ]


def coarse_kernels(cell=None, T: float = 0.5, dt: float = 1e-2) -> KernelTable:
    from .cell import solve_w1, solve_w2

    space, op = _coarse_cell() if cell is None else cell
    w1 = [solve_w1(space, op, i, T, dt) for i in (1, 2)]
    w2 = [solve_w2(space, op, i, T, dt) for i in (1, 2)]
    return compute_kernels(w1, w2, op)


def run_suite(seed: int = 0, kernels: KernelTable | None = None) -> list[Check]:
    rng = np.random.default_rng(seed)
    cell = _coarse_cell()
    checks = check_fubini(rng)
    checks += check_ou(seed)
    checks.append(check_skew(rng))
    checks += check_projection(rng, cell)
    checks.append(check_dissipation(rng, cell))
    checks += check_macro()
    checks += kernel_checks(coarse_kernels(cell) if kernels is None else kernels)
    return checks


def write_report(checks: list[Check], path: str | Path) -> None:
    Path(path).write_text("\n".join([HEADER] + [c.line() for c in checks]) + "\n")


def read_report(path: str | Path) -> list[Check]:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != HEADER:
        raise ValueError(f"{path} is not a validation report")
    out = []
    for ln in lines[1:]:
        name, status, d, t = ln.split(",")
        out.append(Check(name, float(d), float(t), status == "PASS"))
    return out
