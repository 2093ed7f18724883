"""Eigenvalue convergence for a(x) = x^alpha against the Bessel-zero formula.

Writes one CSV row per (alpha, N, mode) with the relative error and the
observed order under mesh doubling.
"""

import argparse
import csv
from pathlib import Path

import numpy as np

from degctrl import model, spectral


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--alphas", default="0.5,1.0,1.5")
    ap.add_argument("--nodes", default="250,500,1000,2000")
    ap.add_argument("--modes", type=int, default=5)
    ap.add_argument("--out", default="results/scripts")
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    sizes = [int(s) for s in args.nodes.split(",")]
    with open(out / "bessel_benchmark.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["alpha", "boundary", "N", "j", "lambda", "reference", "rel_error", "order"])
        for alpha in (float(a) for a in args.alphas.split(",")):
            p = model.make_problem(np.eye(1), [[0.0]], [[1.0]], model.PowerCoefficient(alpha), (0.3, 0.8), 1.0)
            ref = spectral.power_law_eigenvalues(alpha, 1.0, args.modes)
            prev = None
            for N in sizes:
                lam = spectral.compute_basis(p, N=N, M=args.modes).eigenvalues
                err = np.abs(lam - ref) / ref
                order = np.log2(prev / err) if prev is not None else np.full(args.modes, np.nan)
                for j in range(args.modes):
                    w.writerow([alpha, p.boundary, N, j + 1, repr(float(lam[j])), repr(float(ref[j])),
                                f"{err[j]:.6e}", f"{order[j]:.4f}"])
                print(f"alpha={alpha} {p.boundary} N={N}: max rel err {err.max():.3e}, min order {np.nanmin(order):.3f}"
                      if prev is not None else f"alpha={alpha} {p.boundary} N={N}: max rel err {err.max():.3e}")
                prev = err


if __name__ == "__main__":
    main()
