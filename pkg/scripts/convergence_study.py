"""Convergence of the particle method (RK2, RK4) and the finite-volume baseline on the quartic problem.

Prints one table per method and optionally writes them as CSV.
"""

import argparse
import csv
from pathlib import Path

from shockparticles.integrator import EvolveOptions, evolve
from shockparticles.problems import fit_order, fv_sweep, particle_sweep, quartic_field, reference_averages


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--reference-dt", type=float, default=1 / 8192)
    ap.add_argument("--cells", type=int, default=1000, help="cells for the L1 error of the particle runs")
    ap.add_argument("--fv-order", type=int, default=2, choices=(1, 2))
    ap.add_argument("--out", type=Path, help="directory for CSV tables")
    args = ap.parse_args()

    f0 = quartic_field()
    dts = [1 / 2 ** k for k in range(3, 10)]
    ref = reference_averages(f0, args.reference_dt, 1.0, n_cells=args.cells)
    ref_field = evolve(f0, EvolveOptions(dt=args.reference_dt, t_end=1.0)).field
    tables = {
        "rk4": particle_sweep(f0, dts, order=4, t_end=1.0, reference=ref, n_cells=args.cells),
        "rk2": particle_sweep(f0, dts, order=2, t_end=1.0, reference=ref, n_cells=args.cells),
        f"fv{args.fv_order}": fv_sweep(f0, [25, 50, 100, 200, 400, 800], t_end=1.0, reference_field=ref_field,
                                       order=args.fv_order),
    }
    for name, rows in tables.items():
        print(f"\n{name}: fitted order {fit_order([r.resolution for r in rows], [r.error for r in rows]):.3f}")
        print(f"{'resolution':>12} {'l1 error':>12} {'local':>7} {'seconds':>8}")
        for r in rows:
            local = "" if r.local_order is None else f"{r.local_order:.3f}"
            print(f"{r.resolution:12.6g} {r.error:12.4e} {local:>7} {r.seconds:8.3f}")
        if args.out:
            args.out.mkdir(parents=True, exist_ok=True)
            with open(args.out / f"{name}.csv", "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["resolution", "l1_error", "local_order", "seconds"])
                for r in rows:
                    w.writerow([repr(r.resolution), repr(r.error), "" if r.local_order is None else repr(r.local_order),
                                f"{r.seconds:.4f}"])


if __name__ == "__main__":
    main()
