"""Sweep the species diffusivity of a configuration and report where the
smallness verdicts switch on.

This is how the shipped desk configuration was tuned: D is raised until the
first smallness case holds with some margin.
"""
import argparse
from dataclasses import replace

import numpy as np

from pemcell.analysis import estimate_embedding_constant, smallness_report
from pemcell.config import load_config, shipped_config
from pemcell.femcore import build_layout
from pemcell.materials import MaterialLaw
from pemcell.mesh import build_mesh


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default=str(shipped_config("desk_inregime.toml")))
    ap.add_argument("--d-min", type=float, default=0.1)
    ap.add_argument("--d-max", type=float, default=10.0)
    ap.add_argument("--n", type=int, default=21)
    args = ap.parse_args()
    cfg = load_config(args.config)
    mesh = build_mesh(cfg.geometry, cfg.divisions_x, cfg.divisions_y)
    layout = build_layout(mesh)
    S = cfg.analysis.S_star or cfg.analysis.S_star_safety * estimate_embedding_constant(mesh, layout).value
    print(f"S* = {S:.6g}")
    print(f"{'D':>10s} {'a#':>10s} {'b':>10s} {'c':>10s} small1 small2")
    for D in np.geomspace(args.d_min, args.d_max, args.n):
        law = MaterialLaw.constant(D)
        coeffs = replace(cfg.coefficients, D_fluid=(law, law), D_porous=(law, law))
        rep = smallness_report(coeffs, mesh, layout, S, q=cfg.analysis.q, M_r=cfg.analysis.M_r,
                               phi_bound=cfg.analysis.phi_bound)
        print(f"{D:10.4g} {rep.a_sharp:10.4g} {rep.b:10.4g} {rep.c:10.4g} "
              f"{str(rep.small1):>6s} {str(rep.small2):>6s}")


if __name__ == "__main__":
    main()
