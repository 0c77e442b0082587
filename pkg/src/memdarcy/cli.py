"""Command-line entry point.

Exit codes: 0 success, 1 configuration or provenance error, 2 property or
validation failure, 3 solver failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

import numpy as np

from . import pipeline as pl
from .config import RunConfig, dump_config, load_config
from .errors import ConfigError, InvalidSpec, MemDarcyError, ProvenanceMismatch
from .geometry import save_mesh
from .kernels import load_kernels, save_kernels

EXIT_OK, EXIT_CONFIG, EXIT_PROPERTY, EXIT_SOLVER = 0, 1, 2, 3


def _out_dir(args, cfg: RunConfig | None) -> Path:
    d = Path(args.out) if args.out else Path(cfg.output.directory if cfg else "out")
    d.mkdir(parents=True, exist_ok=True)
    return d


def _load(args, required: tuple[str, ...]) -> RunConfig:
    if not args.config:
        raise ConfigError("--config is required for this command")
    cfg = load_config(args.config, required)
    if args.seed is not None:
        cfg.noise = dataclasses.replace(cfg.noise, seed=args.seed)
    if getattr(args, "svg", False):
        cfg.output = dataclasses.replace(cfg.output, svg=True)
    return cfg


def cmd_cell_kernels(args) -> int:
    cfg = _load(args, ("cell",))
    out = _out_dir(args, cfg)
    res = pl.compute_cell_kernels(cfg.cell)
    save_kernels(res.table, out / "kernels.csv")
    save_mesh(res.mesh, out / "mesh.txt")
    lines = [f"mesh_hash = {res.mesh.mesh_hash()}"] + res.report.lines()
    if res.K_integral is not None:
        lines += [
            f"K_steady = {res.table.K_steady.ravel().tolist()!r}",
            f"K_integral = {res.K_integral.ravel().tolist()!r}",
            f"steady_relative_error = {res.steady_error!r}",
        ]
    (out / "kernel_report.txt").write_text("\n".join(lines) + "\n")
    if args.dump_trajectories:
        from .cell import write_summary_csv, write_trajectory_csv

        for label, traj in res.trajectories.items():
            write_trajectory_csv(traj, out / f"traj_{label}.csv")
            write_summary_csv(traj, res.op, out / f"summary_{label}.csv")
    print("\n".join(lines))
    return EXIT_OK if res.report.passed else EXIT_PROPERTY


def _write_snapshots(state, cfg: RunConfig, out: Path, tag: str = "") -> None:
    from .macro import write_snapshot_csv

    every = cfg.output.snapshot_every
    for n in range(0, state.index + 1, every):
        write_snapshot_csv(state, n, out / f"snapshot{tag}_{n:05d}.csv")
        if cfg.output.svg:
            from .render import write_snapshot_svg

            write_snapshot_svg(state, n, out / f"snapshot{tag}_{n:05d}.svg")


def cmd_darcy_run(args) -> int:
    from .macro import write_run_csv
    from .noise import write_ensemble_csv

    cfg = _load(args, ("cell", "macro"))
    if not args.kernels:
        raise ConfigError("--kernels FILE is required")
    table = load_kernels(args.kernels)
    pl.check_provenance(table, cfg.cell)
    out = _out_dir(args, cfg)
    paths = args.paths if args.paths is not None else 1
    if paths < 1:
        raise ConfigError("--paths must be positive")
    if not cfg.noise.enabled and args.paths is None:
        state = pl.run_deterministic(cfg, table)
        write_run_csv(state, out / "run.csv")
        _write_snapshots(state, cfg, out)
        print(f"u_l2(T) = {float(state.grid.l2_norm(state.u[state.index]))!r}")
        return EXIT_OK
    summary, norms, kept = pl.monte_carlo(cfg, table, paths)
    write_ensemble_csv(summary, out / "ensemble.csv", quantity="u_l2")
    rows = ["stream,u_l2_T"] + [f"{r},{float(norms[r, -1])!r}" for r in range(paths)]
    (out / "paths.csv").write_text("\n".join(rows) + "\n")
    write_run_csv(kept[0], out / "run.csv")
    _write_snapshots(kept[0], cfg, out, "_path0")
    m, se = float(summary.mean[-1]), float(summary.stderr[-1])
    print(f"paths = {paths}")
    print(f"mean u_l2(T) = {m!r}")
    print(f"stderr u_l2(T) = {se!r}")
    return EXIT_OK


def cmd_micro_compare(args) -> int:
    from .micro import write_error_table

    cfg = _load(args, ("cell", "macro", "micro"))
    out = _out_dir(args, cfg)
    if args.kernels:
        table = load_kernels(args.kernels)
        pl.check_provenance(table, cfg.cell)
    else:
        table = pl.compute_cell_kernels(cfg.cell).table
    rows = pl.micro_compare(cfg, table)
    write_error_table(rows, out / "micro_errors.csv")
    for r in rows:
        print(f"eps = {r['eps']!r}  rel_error = {r['rel_error']!r}")
    return EXIT_OK


def cmd_validate(args) -> int:
    from .validate import HEADER, run_suite, write_report

    table = load_kernels(args.kernels) if args.kernels else None
    checks = run_suite(args.seed if args.seed is not None else 0, table)
    print(HEADER)
    for c in checks:
        print(c.line())
    if args.out:
        write_report(checks, _out_dir(args, None) / "validate.csv")
    return EXIT_OK if all(c.passed for c in checks) else EXIT_PROPERTY


def cmd_show_config(args) -> int:
    cfg = _load(args, ())
    print(dump_config(cfg), end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="memdarcy", description="Cell kernels, Darcy-with-memory runs and checks.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML run configuration")
    common.add_argument("--out", help="output directory (default: [output].directory)")
    common.add_argument("--seed", type=int, help="override [noise].seed (unsigned 64-bit)")
    common.add_argument("--paths", type=int, help="Monte Carlo replicas (stream ids 0..R-1)")
    common.add_argument("--svg", action="store_true", help="also write SVG snapshots")
    common.add_argument("--kernels", help="kernel CSV written by cell-kernels")
    sub = p.add_subparsers(dest="command", required=True)
    for name, fn, help_ in (
        ("cell-kernels", cmd_cell_kernels, "solve the cell problems and write the kernel table"),
        ("darcy-run", cmd_darcy_run, "run the homogenized model with a kernel table"),
        ("micro-compare", cmd_micro_compare, "fine-scale runs against the homogenized velocity"),
        ("validate", cmd_validate, "run the invariant suite"),
        ("show-config", cmd_show_config, "print the config with defaults applied"),
    ):
        sp = sub.add_parser(name, parents=[common], help=help_)
        sp.set_defaults(func=fn)
        if name == "cell-kernels":
            sp.add_argument("--dump-trajectories", action="store_true", help="write per-DOF and summary trajectory CSVs")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.seed is not None and not 0 <= args.seed < 2**64:
        print("error: --seed must be an unsigned 64-bit integer", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except (ConfigError, ProvenanceMismatch, InvalidSpec) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MemDarcyError as exc:
        print(f"solver failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (np.linalg.LinAlgError, FloatingPointError, RuntimeError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
