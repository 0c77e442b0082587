"""Fine-scale perforated-domain runs against the homogenized velocity."""
import argparse
import time

from memdarcy import pipeline as pl
from memdarcy.config import load_config


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default="configs/micro.toml")
    ap.add_argument("--fine", action="store_true", help="add eps = 1/8 (slow)")
    a = ap.parse_args()

    cfg = load_config(a.config)
    cfg.micro.fine = cfg.micro.fine or a.fine
    table = pl.compute_cell_kernels(cfg.cell).table
    t0 = time.perf_counter()
    rows = pl.micro_compare(cfg, table)
    print(f"{'eps':>8} {'rel L2 error':>14} {'energy sup':>12} {'energy defect':>14}")
    for r in rows:
        print(f"{r['eps']:8.4f} {r['rel_error']:14.4f} {r['energy_sup']:12.4e} {r['max_energy_defect']:14.2e}")
    print(f"runtime {time.perf_counter() - t0:.0f}s")


if __name__ == "__main__":
    main()
