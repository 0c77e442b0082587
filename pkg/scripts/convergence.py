"""Observed temporal orders of the cell solver and the macro scheme."""
import argparse

from memdarcy import pipeline as pl


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--dt", type=float, default=0.04)
    ap.add_argument("--scheme", default="semigroup", choices=["semigroup", "trapezoid"])
    a = ap.parse_args()

    res = pl.temporal_convergence(dt=a.dt, scheme=a.scheme)
    print(f"dt = {res.dts[0]}, {res.dts[1]}; reference dt/8")
    for k, (e1, e2) in res.errors.items():
        print(f"{k:8s} errors {e1:.3e} {e2:.3e}  order {res.orders[k]:.3f}")


if __name__ == "__main__":
    main()
