"""Config-driven orchestration shared by the CLI and the experiment scripts."""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import macro as mc
from .cell import assemble, leray_project, solve_w1, solve_w2, steady_permeability, step, CellField
from .config import CellSection, MacroSection, NoiseSection, RunConfig
from .errors import ConfigMismatch, GridMismatch, ProvenanceMismatch
from .geometry import CellMesh, HoleSpec, build_cell_mesh
from .kernels import KernelReport, KernelTable, check_kernel_properties, compute_kernels, integrate_kernel
from .noise import CHANNEL_W1, CHANNEL_W2, KLNoise, NoiseOperators, ensemble_summary, sample_wiener, w3_aggregate_kernel


def worker_count() -> int:
    """Worker cap from ``MEMDARCY_THREADS`` (default: all cores)."""
    raw = os.environ.get("MEMDARCY_THREADS", "")
    try:
        n = int(raw) if raw else (os.cpu_count() or 1)
    except ValueError:
        n = 1
    return max(1, n)


def parallel_map(fn: Callable, items, workers: int | None = None) -> list:
    items = list(items)
    workers = worker_count() if workers is None else workers
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))


# ------------------------------------------------------------------ cell


def cell_mesh(c: CellSection) -> CellMesh:
    hole = HoleSpec.none() if c.hole == "none" else HoleSpec("disk", tuple(c.center), c.radius)
    return build_cell_mesh(hole, c.h)


def cell_setup(c: CellSection):
    mesh = cell_mesh(c)
    space, op = assemble(mesh, c.nu, c.alpha)
    return mesh, space, op


def provenance(mesh: CellMesh, c: CellSection) -> dict:
    return dict(mesh_hash=mesh.mesh_hash(), hole=c.hole, radius=float(mesh.hole.radius), h=c.h, nu=c.nu, alpha=c.alpha)


@dataclass
class CellKernelResult:
    table: KernelTable
    report: KernelReport
    mesh: CellMesh
    K_integral: np.ndarray | None = None
    trajectories: dict = field(default_factory=dict)
    op: object = None

    @property
    def steady_error(self) -> float:
        """Relative distance of the kernel integral from the steady permeability."""
        if self.K_integral is None or self.table.K_steady is None:
            return float("nan")
        Ks = self.table.K_steady
        return float(np.linalg.norm(self.K_integral - Ks) / np.linalg.norm(Ks))


def compute_cell_kernels(c: CellSection) -> CellKernelResult:
    mesh, space, op = cell_setup(c)
    w1 = [solve_w1(space, op, i, c.T, c.dt) for i in (1, 2)]
    w2 = [solve_w2(space, op, i, c.T, c.dt) for i in (1, 2)]
    table = compute_kernels(w1, w2, op, meta=provenance(mesh, c))
    K_int = None
    if space.has_hole:
        table.K_steady = steady_permeability(space, op)
        K_int = integrate_kernel(table)
    trajs = {t.label: t for t in w1 + w2}
    return CellKernelResult(table, check_kernel_properties(table), mesh, K_int, trajs, op)


def check_provenance(table: KernelTable, c: CellSection, mesh: CellMesh | None = None) -> None:
    """Refuse kernels produced for a different cell geometry or coefficients."""
    mesh = cell_mesh(c) if mesh is None else mesh
    expected = provenance(mesh, c)
    meta = table.meta
    bad = []
    if str(meta.get("mesh_hash", "")) != expected["mesh_hash"]:
        bad.append(f"mesh_hash {meta.get('mesh_hash')!r} != {expected['mesh_hash']!r}")
    for key in ("nu", "alpha"):
        v = meta.get(key)
        try:
            same = v is not None and float(v) == float(expected[key])
        except (TypeError, ValueError):
            same = False
        if not same:
            bad.append(f"{key} {v!r} != {expected[key]!r}")
    if bad:
        raise ProvenanceMismatch("kernel file does not match the config: " + "; ".join(bad))


# ----------------------------------------------------------------- macro


def macro_forcing(grid: mc.MacroGrid, m: MacroSection) -> Callable[[int], np.ndarray] | None:
    if m.forcing == "none":
        return None
    if m.forcing == "uniform":
        F = mc.uniform_field(grid, m.amplitude * np.asarray(m.direction, dtype=float))
    else:
        F = m.amplitude * grid.sample(mc.curl_psi_exact)
    return lambda n: F


def micro_forcing(m: MacroSection) -> Callable | None:
    """The same forcing as a pointwise function for the fine-scale solver."""
    if m.forcing == "none":
        return None
    if m.forcing == "uniform":
        d = m.amplitude * np.asarray(m.direction, dtype=float)
        return lambda t, pts: np.broadcast_to(d, np.shape(pts)).copy()
    return lambda t, pts: m.amplitude * mc.curl_psi_exact(pts)


def stride_for(table: KernelTable, dt: float) -> int:
    r = dt / table.dt
    s = int(round(r))
    if s < 1 or abs(s - r) > 1e-9 * r:
        raise GridMismatch(f"macro dt={dt} is not a multiple of the kernel dt={table.dt}")
    return s


def noise_operators(nz: NoiseSection) -> NoiseOperators:
    return NoiseOperators.default(nz.J, nz.J, nz.g1_gain, nz.g21_gain, nz.g22_gain)


def noise_specs(nz: NoiseSection) -> tuple[KLNoise, KLNoise]:
    return (
        KLNoise.power_law(nz.J, nz.decay, nz.seed, CHANNEL_W1, nz.scale),
        KLNoise.power_law(nz.J, nz.decay, nz.seed, CHANNEL_W2, nz.scale),
    )


def macro_problem(cfg: RunConfig, table: KernelTable, **noise) -> tuple[mc.MacroProblem, mc.MacroGrid]:
    m = cfg.macro
    pr = mc.MacroProblem(table, m.n, m.T, stride_for(table, m.dt), scheme=m.scheme, **noise)
    grid = mc.problem_grid(pr)
    pr.forcing = macro_forcing(grid, m)
    return pr, grid


def run_deterministic(cfg: RunConfig, table: KernelTable) -> mc.MacroState:
    pr, grid = macro_problem(cfg, table)
    return mc.run_macro(pr, grid)


@dataclass
class NoiseContext:
    ops: NoiseOperators
    spec1: KLNoise
    spec2: KLNoise
    H3: np.ndarray | None
    n_steps: int
    dt: float


def noise_context(cfg: RunConfig, table: KernelTable, space=None, op=None) -> NoiseContext:
    """Shared pieces of a Monte Carlo run; the stochastic cell kernel is built once."""
    m = cfg.macro
    N = int(round(m.T / m.dt))
    ops = noise_operators(cfg.noise)
    s1, s2 = noise_specs(cfg.noise)
    H3 = None
    if not ops.is_zero_g22:
        if space is None:
            _, space, op = cell_setup(cfg.cell)
        H3 = w3_aggregate_kernel(space, op, ops.g22, m.dt, N)
    return NoiseContext(ops, s1, s2, H3, N, m.dt)


def run_path(cfg: RunConfig, table: KernelTable, ctx: NoiseContext, stream: int) -> mc.MacroState:
    dW1 = sample_wiener(ctx.spec1, ctx.dt, ctx.n_steps, stream).dW
    dW2 = sample_wiener(ctx.spec2, ctx.dt, ctx.n_steps, stream).dW
    pr, grid = macro_problem(cfg, table, noise=ctx.ops, dW1=dW1, dW2=dW2, H3=ctx.H3)
    return mc.run_macro(pr, grid)


def monte_carlo(cfg: RunConfig, table: KernelTable, paths: int, ctx: NoiseContext | None = None,
                keep: int = 1):
    """Run ``paths`` replicas with stream ids 0..paths-1.

    Returns ``(summary, norms, kept)``: the ensemble summary of ``|u(t)|_L2``,
    the per-path norm histories (paths, N+1) and the first ``keep`` states.
    """
    ctx = noise_context(cfg, table) if ctx is None else ctx

    def one(r):
        st = run_path(cfg, table, ctx, r)
        norms = np.array([st.grid.l2_norm(st.u[n]) for n in range(st.index + 1)])
        divs = np.array([np.abs(st.grid.div(st.u[n])).max() for n in range(st.index + 1)])
        ratio = float(np.max(divs / np.maximum(norms, 1e-300), initial=0.0))
        return norms, ratio, (st if r < keep else None)

    out = parallel_map(one, range(paths))
    norms = np.stack([o[0] for o in out])
    kept = [o[2] for o in out if o[2] is not None]
    t = cfg.macro.dt * np.arange(norms.shape[1])
    summary = ensemble_summary(t, norms)
    # worst max|div u| / |u| over steps, per path
    summary.extra["max_div_ratio"] = np.array([o[1] for o in out])
    return summary, norms, kept


# ----------------------------------------------------------------- micro


def micro_eps_list(cfg: RunConfig) -> list[float]:
    eps = list(cfg.micro.eps)
    if cfg.micro.fine and 0.125 not in eps:
        eps.append(0.125)
    return eps


def micro_compare(cfg: RunConfig, table: KernelTable) -> list[dict]:
    """Fine-scale runs per eps against the homogenized velocity."""
    from .micro import MicroConfig, compare_to_homogenized, solve_micro

    mi, m = cfg.micro, cfg.macro
    if abs(mi.T - m.T) > 1e-12:
        raise ConfigMismatch("[micro].T and [macro].T differ")
    state = run_deterministic(cfg, table)
    forcing = micro_forcing(m)

    def one(eps):
        stride = max(1, int(round(m.dt / mi.dt))) if m.dt >= mi.dt else 1
        mcfg = MicroConfig(eps=eps, beta=mi.beta, nu=cfg.cell.nu, alpha=cfg.cell.alpha, dt=mi.dt, T=mi.T,
                           forcing=forcing, h_cell=mi.h_cell, radius=cfg.cell.radius, output_stride=stride)
        res = solve_micro(mcfg)
        return dict(eps=eps, T=mi.T, rel_error=compare_to_homogenized(res, state), energy_sup=res.energy_sup,
                    viscous_energy=res.viscous_energy, convective_energy=res.convective_energy,
                    max_energy_defect=float(res.energy_defects.max(initial=0.0)))

    return parallel_map(one, micro_eps_list(cfg))


# --------------------------------------------------------- cell dynamics


def dissipation_trial(space, op, rng: np.random.Generator, dt: float = 1e-2, steps: int = 5) -> float:
    """Largest relative increase of ``|u|_H`` over unforced steps from a random field."""
    raw = rng.standard_normal((space.pm.n_nodes, 2))
    u = leray_project(space, op, raw).u
    state = CellField(u, np.zeros(space.n_p), 0.0)
    worst = -np.inf
    norm = np.sqrt(op.h_norm2(u))
    for _ in range(steps):
        state = step(space, op, state, dt)
        new = np.sqrt(op.h_norm2(state.u))
        worst = max(worst, (new - norm) / max(norm, 1e-300))
        norm = new
    return float(worst)


# ------------------------------------------------------ time refinement


def _coupled_forcing(grid: mc.MacroGrid, dt: float) -> Callable[[int], np.ndarray]:
    """``exp(-t) grad phi + curl psi`` with ``phi = x^2 y``: drives both pressure and flow."""
    pts = grid.face_points()
    x, y = pts[..., 0], pts[..., 1]
    grad_phi = np.stack([2 * x * y, x**2])
    curl = np.moveaxis(mc.curl_psi_exact(pts), -1, 0)
    return lambda n: np.exp(-n * dt) * grad_phi + curl


@dataclass
class ConvergenceResult:
    dts: tuple[float, float]
    errors: dict[str, tuple[float, float]]

    @property
    def orders(self) -> dict[str, float]:
        return {k: float(np.log2(e[0] / e[1])) for k, e in self.errors.items()}


def temporal_convergence(h: float = 0.1, T: float = 1.0, dt: float = 0.04, n: int = 16,
                         scheme: str = "semigroup") -> ConvergenceResult:
    """Errors at ``dt`` and ``dt/2`` against a ``dt/8`` reference.

    Cell: ``|w1(T)|_H``.  Macro: ``u(T)`` and ``P(T)`` with kernels recomputed at
    each step size and the macro step equal to the kernel step.
    """
    space, op = assemble(build_cell_mesh(HoleSpec(), h))
    runs = {}
    for d in (dt, dt / 2, dt / 8):
        w1 = [solve_w1(space, op, i, T, d) for i in (1, 2)]
        w2 = [solve_w2(space, op, i, T, d) for i in (1, 2)]
        table = compute_kernels(w1, w2, op)
        pr = mc.MacroProblem(table, n, T, 1, scheme=scheme)
        grid = mc.problem_grid(pr)
        pr.forcing = _coupled_forcing(grid, d)
        st = mc.run_macro(pr, grid)
        runs[d] = (w1[0].U[-1], st.u[-1], st.P[-1])
    ref = runs[dt / 8]
    cell_norm = lambda v: float(np.sqrt(op.h_norm2(v)))
    errs = {}
    for name, k, norm in (("cell_w1", 0, cell_norm), ("macro_u", 1, np.linalg.norm), ("macro_P", 2, np.linalg.norm)):
        errs[name] = tuple(float(norm(runs[d][k] - ref[k])) for d in (dt, dt / 2))
    return ConvergenceResult((dt, dt / 2), errs)
