"""Shepp-Logan reconstruction error against angle count and profile width.

Usage: python3 scripts/recon_angles.py [--size 128] [--angles 90 180 360] [--factors 1 2]
"""
import argparse

import numpy as np

from gradon.geometry import Domain, make_euclidean
from gradon.normal import PrincipalSymbol
from gradon.phantoms import shepp_logan
from gradon.recon import SymbolPreconditioner, cg_normal_solve
from gradon.transform import Grid, Projector, make_layout


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--size", type=int, default=128)
    ap.add_argument("--angles", type=int, nargs="+", default=[90, 180, 360])
    ap.add_argument("--factors", type=float, nargs="+", default=[1.0, 2.0])
    ap.add_argument("--max-iter", type=int, default=200)
    args = ap.parse_args()
    df = make_euclidean(2)
    g = Grid(Domain(), args.size)
    f = shepp_logan(g).values
    pre = SymbolPreconditioner(PrincipalSymbol(df), g)
    print("angles,delta_factor,iterations,relative_error")
    for factor in args.factors:
        for n in args.angles:
            P = Projector(df, None, g, make_layout(df, g, n, factor), factor)
            res = cg_normal_solve(P, P.forward(f), tol=1e-6, max_iter=args.max_iter, preconditioner=pre)
            err = np.linalg.norm(res.field.values - f) / np.linalg.norm(f)
            print(f"{n},{factor:g},{res.iterations},{err:.4f}", flush=True)


if __name__ == "__main__":
    main()
