"""Command-line entry point.

Exit codes: 0 success, 2 bad configuration or arguments, 3 invalid geometry,
4 outside the ellipticity regime, 5 no convergence.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from .analysis import (HypothesisReport, estimate_embedding_constant, smallness_report,
                       state_norms)
from .config import ConfigError, RunConfig, load_config, shipped_config
from .femcore import DofLayout, h1_seminorm, l2_norm
from .materials import BVParams, butler_volmer, butler_volmer_derivative
from .mesh import Boundary, InvalidGeometryError, MultiregionMesh, build_mesh, measure
from .mms import PROBLEMS, mms_study
from .picard import PicardDivergence, balances, run_fixed_point
from .vtk import write_mesh, write_state

EXIT_OK, EXIT_PARSE, EXIT_GEOMETRY, EXIT_REGIME, EXIT_DIVERGED = 0, 2, 3, 4, 5

log = logging.getLogger("pemcell")


def _dump_json(path: Path, data: dict) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def _out_dir(args, cfg: RunConfig | None) -> Path:
    if args.out_dir is not None:
        out = Path(args.out_dir)
    elif cfg is not None:
        out = Path(cfg.output.directory)
        if not out.is_absolute() and cfg.source is not None:
            out = Path(cfg.source).resolve().parent / out
    else:
        out = Path("out")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _mesh(cfg: RunConfig) -> tuple[MultiregionMesh, DofLayout]:
    from .femcore import build_layout

    mesh = build_mesh(cfg.geometry, cfg.divisions_x, cfg.divisions_y)
    return mesh, build_layout(mesh)


def hypothesis_report(cfg: RunConfig, mesh, layout, seed: int = 0) -> HypothesisReport:
    """Smallness report with S* supplied by the config or estimated and inflated."""
    an = cfg.analysis
    if an.S_star is not None:
        S, source = an.S_star, "supplied"
    else:
        est = estimate_embedding_constant(mesh, layout, seed=seed)
        S, source = est.value * an.S_star_safety, f"estimated {est.value:.6g} x {an.S_star_safety:g}"
    return smallness_report(cfg.coefficients, mesh, layout, S, q=an.q, M_r=an.M_r,
                            phi_bound=an.phi_bound, S_star_source=source)


# ---------------------------------------------------------------------------
# commands

def cmd_generate_mesh(args) -> int:
    cfg = load_config(args.config)
    mesh = build_mesh(cfg.geometry, cfg.divisions_x, cfg.divisions_y)
    out = Path(args.out) if args.out else _out_dir(args, cfg) / "mesh.vtk"
    out.parent.mkdir(parents=True, exist_ok=True)
    write_mesh(out, mesh)
    print(f"nodes: {mesh.n_nodes}")
    print(f"triangles: {mesh.n_triangles}")
    print(f"wrote {out}")
    return EXIT_OK


def cmd_check(args) -> int:
    cfg = load_config(args.config)
    mesh, layout = _mesh(cfg)
    report = hypothesis_report(cfg, mesh, layout, args.seed)
    out = _out_dir(args, cfg)
    report.write(out / "report.json")
    print(report.summary())
    if not report.elliptic:
        print("warning: an ellipticity margin is not positive; the solver would run outside "
              "the analysed regime")
        return EXIT_REGIME
    return EXIT_OK


def solve_balances(state, mesh, layout, coeffs) -> dict:
    """Balances together with the scales the tolerances refer to."""
    bal = balances(state, mesh, layout, coeffs)
    u_h1 = math.sqrt(sum(l2_norm(mesh, layout[c], v) ** 2 + h1_seminorm(mesh, layout[c], v) ** 2
                         for c, v in (("ux", state.ux), ("uy", state.uy))))
    current_scale = abs(bal["anode_current"]) + coeffs.bv.j_L * measure(mesh, [Boundary.GAMMA_C])
    bal["u_H1"] = u_h1
    bal["darcy_flux_relative"] = abs(bal["darcy_net_flux"]) / u_h1 if u_h1 > 0 else 0.0
    bal["current_imbalance_relative"] = abs(bal["current_imbalance"]) / current_scale
    return bal


def cmd_solve(args) -> int:
    cfg = load_config(args.config)
    mesh, layout = _mesh(cfg)
    out = _out_dir(args, cfg)
    report = hypothesis_report(cfg, mesh, layout, args.seed)
    if cfg.output.report:
        report.write(out / "report.json")
    warnings = []
    if not report.elliptic:
        warnings.append("ellipticity fails; solving anyway")
    elif not (report.small1 or report.small2):
        warnings.append("neither smallness case holds; convergence is not guaranteed")
    for w in warnings:
        print(f"warning: {w}")
    try:
        state, trace = run_fixed_point(mesh, layout, cfg.coefficients, cfg.picard,
                                       S_star=report.S_star)
        code = EXIT_OK
    except PicardDivergence as exc:
        print(f"no convergence: {exc}")
        trace, state, code = exc.trace, None, EXIT_DIVERGED
    if cfg.output.trace:
        trace.write_csv(out / "trace.csv")
    for note in trace.notes:
        print(f"note: {note}")
    if state is None:
        return code
    if cfg.output.fields:
        write_state(out / "fields.vtk", mesh, layout, state, cfg.coefficients.E_cell)
    if cfg.output.mesh:
        write_mesh(out / "mesh.vtk", mesh)
    bal = solve_balances(state, mesh, layout, cfg.coefficients)
    bal["iterations"] = len(trace)
    bal.update({f"norm.{k}": v for k, v in state_norms(mesh, layout, state, cfg.picard.t_exponent).items()})
    if cfg.output.balances:
        _dump_json(out / "balances.json", bal)
    print(f"converged in {len(trace)} outer iterations (last update {trace.updates[-1]:.3e})")
    print(f"current imbalance {bal['current_imbalance']:.3e}, Darcy net flux {bal['darcy_net_flux']:.3e}")
    return code


def cmd_mms(args) -> int:
    result = mms_study(args.problem, args.levels, threads=args.threads)
    path = Path(args.out) if args.out else _out_dir(args, None) / f"mms_{args.problem}.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    result.write_csv(path)
    for row in result.rows():
        print("level {} h={:.4g} L2={:.4e} H1={:.4e} order_L2={:.3f} order_H1={:.3f}".format(*row))
    return EXIT_OK


def _bv_params(args) -> BVParams:
    cfg = load_config(args.config if args.config else shipped_config("pemfc_physical.toml"))
    return cfg.coefficients.bv


def cmd_bv_curve(args) -> int:
    if args.n < 2 or not args.eta_max > args.eta_min:
        raise ConfigError("bv-curve needs n >= 2 and eta_max > eta_min")
    params = _bv_params(args)
    eta = np.linspace(args.eta_min, args.eta_max, args.n)
    j = butler_volmer(eta, args.side, params)
    dj = butler_volmer_derivative(eta, args.side, params)
    path = Path(args.out) if args.out else _out_dir(args, None) / f"bv_{args.side}.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("eta", "j", "djdeta"))
        for row in zip(eta + 0.0, j + 0.0, dj):
            w.writerow([f"{v:.17g}" for v in row])
    print(f"wrote {path}")
    return EXIT_OK


# ---------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_PARSE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out-dir", default=None, help="directory for output files")
    common.add_argument("--threads", type=int, default=1, help="worker processes (mms levels)")
    common.add_argument("--seed", type=int, default=0, help="seed of the embedding-constant restarts")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="pemcell", description="Coupled Stokes-Darcy / electrochemical cell solver")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate-mesh", parents=[common], help="write the mesh as VTK")
    g.add_argument("--config", required=True)
    g.add_argument("--out", default=None, help="output file (default OUT_DIR/mesh.vtk)")
    g.set_defaults(func=cmd_generate_mesh)

    c = sub.add_parser("check", parents=[common], help="evaluate the hypotheses and smallness conditions")
    c.add_argument("--config", required=True)
    c.set_defaults(func=cmd_check)

    s = sub.add_parser("solve", parents=[common], help="run the coupled fixed-point solver")
    s.add_argument("--config", required=True)
    s.set_defaults(func=cmd_solve)

    m = sub.add_parser("mms", parents=[common], help="manufactured-solution convergence study")
    m.add_argument("--problem", choices=PROBLEMS, required=True)
    m.add_argument("--levels", type=int, default=3)
    m.add_argument("--out", default=None)
    m.set_defaults(func=cmd_mms)

    b = sub.add_parser("bv-curve", parents=[common], help="tabulate the electrode kinetics")
    b.add_argument("--side", choices=("a", "c"), required=True)
    b.add_argument("--eta-min", type=float, default=-0.5)
    b.add_argument("--eta-max", type=float, default=0.5)
    b.add_argument("--n", type=int, default=101)
    b.add_argument("--config", default=None, help="take the kinetics from this config")
    b.add_argument("--out", default=None)
    b.set_defaults(func=cmd_bv_curve)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "levels", 3) < 3:
        parser.exit(EXIT_PARSE, "pemcell: error: at least 3 levels are required\n")
    if args.threads < 1:
        parser.exit(EXIT_PARSE, "pemcell: error: --threads must be positive\n")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except InvalidGeometryError as exc:
        print(f"geometry error: {exc}", file=sys.stderr)
        return EXIT_GEOMETRY


if __name__ == "__main__":
    sys.exit(main())
