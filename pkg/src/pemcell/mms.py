"""Manufactured-solution convergence studies.

Sources are injected through the weak form: the load vector is the
continuous bilinear form applied to the exact fields, which is the same as
adding the strong-form source and the matching Neumann/interface data.  The
discrete solution is then the Galerkin projection of the exact field, so
P1 rates (L2 order 2, H1 order 1) are expected on smooth data.
"""
from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import scipy.sparse as sp
import sympy

from .femcore import (TRI2, TRI4, DofLayout, FieldDofs, SparseSystem,
                      apply_dirichlet, assemble_boundary_load, assemble_diffusion,
                      assemble_gradient_load, build_layout, continuous_potential_field,
                      element_points, gradient, interface_jump, interpolate, solve_sparse)
from .flow import FlowInputs, flow_builder, interface_normal_x
from .materials import BVParams, CoefficientSet, MaterialLaw
from .mesh import (ALL_REGIONS, CATALYST, COOLED_WALL, FLUID, FLUID_POROUS, POROUS, CellGeometry,
                   MultiregionMesh, Region, build_mesh)
from .tec import TecInputs, assemble_tec_linear

PROBLEMS = ("heat", "species", "potential", "flow")
CSV_COLUMNS = ("level", "h", "err_l2", "err_h1", "order_l2", "order_h1")

X, Y = sympy.symbols("x y")
_C = MaterialLaw.constant


@dataclass(frozen=True)
class MMSSetup:
    geometry: CellGeometry = CellGeometry(0.5, 0.2, 0.2, 0.2, 0.5, 1.0)
    divisions_x: tuple[int, ...] = (4, 2, 2, 2, 4)
    divisions_y: int = 8


@dataclass
class MMSLevel:
    level: int
    h: float
    err_l2: float
    err_h1: float


@dataclass
class MMSResult:
    problem: str
    levels: list[MMSLevel] = field(default_factory=list)

    def orders(self, attr: str) -> list[float]:
        out = [math.nan]
        for a, b in zip(self.levels, self.levels[1:]):
            e0, e1 = getattr(a, attr), getattr(b, attr)
            out.append(math.log(e0 / e1) / math.log(a.h / b.h) if e0 > 0 and e1 > 0 else math.nan)
        return out

    @property
    def order_l2(self) -> float:
        return self.orders("err_l2")[-1]

    @property
    def order_h1(self) -> float:
        return self.orders("err_h1")[-1]

    def rows(self) -> list[tuple]:
        o2, o1 = self.orders("err_l2"), self.orders("err_h1")
        return [(lv.level, lv.h, lv.err_l2, lv.err_h1, a, b)
                for lv, a, b in zip(self.levels, o2, o1)]

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_COLUMNS)
            for row in self.rows():
                w.writerow([row[0]] + [f"{v:.17g}" for v in row[1:]])


def mms_coefficients(**overrides) -> CoefficientSet:
    """Constant coefficients with distinct region values so interfaces are exercised."""
    base = dict(
        mu=_C(1.0), lam=_C(0.5), beta=_C(2.0), h_c=_C(1.5),
        K_l={Region.ANODE_GDL: 1.0, Region.MEMBRANE: 0.5, Region.CATHODE_GDL: 2.0},
        klinkenberg_b={r: 0.0 for r in POROUS},
        D_fluid=(_C(1.0), _C(1.0)), D_porous=(_C(0.5), _C(0.5)),
        k=_C(1.0), sigma_gdl=_C(2.0), sigma_membrane=_C(0.5),
        bv=BVParams(0.02, 0.01, 0.1, 0.1, 1.0, 1.0, 0.05, 0.05), R_specific=0.0,
    )
    base.update(overrides)
    return CoefficientSet(**base)


# ---------------------------------------------------------------------------
# exact fields

class Exact:
    """A sympy expression with vectorized value and gradient."""

    def __init__(self, expr):
        self.expr = sympy.sympify(expr)
        self._f = sympy.lambdify((X, Y), self.expr, "numpy")
        self._g = [sympy.lambdify((X, Y), sympy.diff(self.expr, v), "numpy") for v in (X, Y)]

    @staticmethod
    def _eval(fn, xy):
        xy = np.asarray(xy, dtype=float)
        return np.broadcast_to(np.asarray(fn(xy[..., 0], xy[..., 1]), dtype=float), xy.shape[:-1])

    def __call__(self, xy) -> np.ndarray:
        return self._eval(self._f, xy)

    def grad(self, xy) -> np.ndarray:
        return np.stack([self._eval(g, xy) for g in self._g], axis=-1)


def _exact_fields(geom: CellGeometry) -> dict[str, Exact]:
    L, W = geom.L, geom.breakpoints[-1]
    s = sympy.sin(sympy.pi * Y / L)
    return {
        "theta": Exact(s * sympy.cos(sympy.pi * X / W) * (1 + X)),
        "rho": Exact(s * sympy.exp(X) * (1 + Y / 2)),
        "w_x": Exact(sympy.Rational(1, 2) * sympy.cos(2 * X) * s),
        "w_y": Exact(1 + sympy.sin(3 * X) * Y),
        "phi": Exact(s * sympy.cos(3 * X + Y)),
        "u_x": Exact(sympy.sin(2 * X) * sympy.cos(Y)),
        "u_y": Exact(sympy.cos(X) * sympy.sin(2 * Y) + X * Y),
        "p": Exact(sympy.cos(2 * X + Y) + X * Y),
    }


# ---------------------------------------------------------------------------
# error norms against exact fields

def _errors(mesh: MultiregionMesh, fd: FieldDofs, values: np.ndarray, exact: Exact,
            regions=None) -> tuple[float, float]:
    regions = fd.regions if regions is None else regions
    tris = mesh.triangles_in(regions)
    xy = element_points(mesh, tris, TRI4)
    w = mesh.areas[tris][:, None] * TRI4.normalized_weights[None, :]
    e = interpolate(mesh, fd, values, tris, TRI4) - exact(xy)
    ge = gradient(mesh, fd, values, tris)[:, None, :] - exact.grad(xy)
    return math.sqrt(float(np.sum(w * e**2))), math.sqrt(float(np.sum(w * np.sum(ge**2, axis=-1))))


def _diffusion_load(mesh, layout, name, coef: float, exact: Exact, regions) -> np.ndarray:
    """``int coef grad(exact) . grad(test)`` over ``regions``."""
    tris = mesh.triangles_in(regions)
    g = coef * exact.grad(element_points(mesh, tris, TRI2))
    return (assemble_gradient_load(mesh, layout, name, g[..., 0], 0, regions, rule=TRI2)
            + assemble_gradient_load(mesh, layout, name, g[..., 1], 1, regions, rule=TRI2))


def mesh_size(mesh: MultiregionMesh) -> float:
    p = mesh.nodes[mesh.triangles]
    edges = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 1], p[:, 0] - p[:, 2]], axis=1)
    return float(np.max(np.linalg.norm(edges, axis=-1)))


def _solve_homogeneous(system: SparseSystem, load: np.ndarray) -> np.ndarray:
    rhs = load.copy()
    rhs[system.dirichlet] = 0.0
    return solve_sparse(SparseSystem(system.matrix, rhs, system.offsets, system.dirichlet))


# ---------------------------------------------------------------------------
# single levels

def _heat(mesh, layout, coeffs, ex):
    th = ex["theta"]
    system = assemble_tec_linear(mesh, layout, coeffs, TecInputs.zeros(layout), fields=("theta",))
    h = float(coeffs.h_c.params["value"])
    load = (_diffusion_load(mesh, layout, "theta", float(coeffs.k.params["value"]), th, ALL_REGIONS)
            + assemble_boundary_load(mesh, layout, "theta", lambda xy: h * th(xy), COOLED_WALL))
    x = _solve_homogeneous(system, load)
    return _errors(mesh, layout["theta"], x, th)


def _species(mesh, layout, coeffs, ex):
    rho = ex["rho"]
    xy_u = mesh.nodes[layout["ux"].dof_node]
    inputs = TecInputs.zeros(layout)
    inputs.wx = ex["w_x"](xy_u).copy()
    inputs.wy = ex["w_y"](xy_u).copy()
    system = assemble_tec_linear(mesh, layout, coeffs, inputs, fields=("rho1",))
    load = np.zeros(layout["rho1"].ndof)
    for region in ALL_REGIONS:
        D = coeffs.D_fluid[0] if region in FLUID else coeffs.D_porous[0]
        load += _diffusion_load(mesh, layout, "rho1", float(D.params["value"]), rho, [region])
    tris = mesh.triangles_in(FLUID)
    xy = element_points(mesh, tris, TRI2)
    r = rho(xy)
    for comp, name in ((0, "ux"), (1, "uy")):
        w = interpolate(mesh, layout[name], getattr(inputs, "w" + "xy"[comp]), tris, TRI2)
        load += assemble_gradient_load(mesh, layout, "rho1", r * w, comp, FLUID, rule=TRI2)
    x = _solve_homogeneous(system, load)
    return _errors(mesh, layout["rho1"], x, rho)


def continuous_layout(layout: DofLayout) -> DofLayout:
    """Layout whose potential is the unbroken P1 field (the zero-jump limit)."""
    cont = replace(continuous_potential_field(layout.mesh), name="phi")
    return DofLayout(layout.mesh, {**layout.fields, "phi": cont})


def _potential(mesh, layout, coeffs, ex):
    phi = ex["phi"]
    lay = continuous_layout(layout)
    system = assemble_tec_linear(mesh, lay, coeffs, TecInputs.zeros(lay), fields=("phi",))
    load = np.zeros(lay["phi"].ndof)
    for region in POROUS:
        sig = coeffs.sigma_membrane if region == Region.MEMBRANE else coeffs.sigma_gdl
        load += _diffusion_load(mesh, lay, "phi", float(sig.params["value"]), phi, [region])
    x = _solve_homogeneous(system, load)
    return _errors(mesh, lay["phi"], x, phi)


def _flow(mesh, layout, coeffs, ex):
    """Velocity L2 error and Darcy-pressure H1-seminorm error."""
    ux_e, uy_e, p_e = ex["u_x"], ex["u_y"], ex["p"]
    mu = float(coeffs.mu.params["value"])
    lam = float(coeffs.lam.params["value"])
    beta = float(coeffs.beta.params["value"])
    bb = flow_builder(mesh, layout, coeffs, FlowInputs.zeros(layout))
    tris = mesh.triangles_in(FLUID)
    xy = element_points(mesh, tris, TRI2)
    gx, gy = ux_e.grad(xy), uy_e.grad(xy)
    div = gx[..., 0] + gy[..., 1]
    Dxy = 0.5 * (gx[..., 1] + gy[..., 0])
    glx = lambda name, f, c: assemble_gradient_load(mesh, layout, name, f, c, FLUID, rule=TRI2)
    bb.add_rhs("ux", glx("ux", mu * gx[..., 0] + lam * div, 0) + glx("ux", mu * Dxy, 1))
    bb.add_rhs("uy", glx("uy", mu * Dxy, 0) + glx("uy", mu * gy[..., 1] + lam * div, 1))
    bb.add_rhs("uy", assemble_boundary_load(mesh, layout, "uy", lambda q: beta * uy_e(q), FLUID_POROUS))
    for tag in FLUID_POROUS:
        nx = interface_normal_x(mesh, layout, tag)
        bb.add_rhs("ux", assemble_boundary_load(mesh, layout, "ux", lambda q: nx * p_e(q), [tag]))
        bb.add_rhs("p", assemble_boundary_load(mesh, layout, "p", lambda q: -nx * ux_e(q), [tag]))
    for region in POROUS:
        K = coeffs.K_l[region] / mu
        bb.add_rhs("p", _diffusion_load(mesh, layout, "p", K, p_e, [region]))
    xy_u = mesh.nodes[layout["ux"].dof_node]
    system = bb.build({"ux": ux_e(xy_u)[layout["ux"].dirichlet],
                       "uy": uy_e(xy_u)[layout["uy"].dirichlet]})
    parts = system.split(solve_sparse(system))
    ex_l2, _ = _errors(mesh, layout["ux"], parts["ux"], ux_e)
    ey_l2, _ = _errors(mesh, layout["uy"], parts["uy"], uy_e)
    _, p_h1 = _errors(mesh, layout["p"], parts["p"], p_e)
    return math.hypot(ex_l2, ey_l2), p_h1


_RUNNERS = {"heat": _heat, "species": _species, "potential": _potential, "flow": _flow}


def run_level(problem: str, level: int, setup: MMSSetup = MMSSetup(),
              coeffs: CoefficientSet | None = None) -> MMSLevel:
    f = 2**level
    mesh = build_mesh(setup.geometry, tuple(d * f for d in setup.divisions_x), setup.divisions_y * f)
    layout = build_layout(mesh)
    coeffs = coeffs or mms_coefficients()
    e2, e1 = _RUNNERS[problem](mesh, layout, coeffs, _exact_fields(setup.geometry))
    return MMSLevel(level, mesh_size(mesh), e2, e1)


def mms_study(problem: str, levels: int = 3, setup: MMSSetup | None = None,
              coeffs: CoefficientSet | None = None, threads: int = 1) -> MMSResult:
    """Errors and observed orders over ``levels`` uniform refinements.

    For ``flow`` the L2 column is the velocity error and the H1 column the
    Darcy-pressure error; every other problem reports its single field.
    """
    if problem not in _RUNNERS:
        raise ValueError(f"unknown problem {problem!r}; choose from {', '.join(PROBLEMS)}")
    if levels < 3:
        raise ValueError("a convergence study needs at least 3 levels")
    setup = setup or MMSSetup()
    args = [(problem, k, setup, coeffs) for k in range(levels)]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run_level, *zip(*args)))
    else:
        results = [run_level(*a) for a in args]
    return MMSResult(problem, results)


# ---------------------------------------------------------------------------
# broken versus continuous potential

def prolongation(layout: DofLayout, cont: FieldDofs) -> sp.csr_matrix:
    """Map continuous potential dofs onto the broken space (both copies share a value)."""
    fd = layout["phi"]
    rows = np.arange(fd.ndof)
    cols = cont.node_dof[fd.dof_node]
    return sp.csr_matrix((np.ones(fd.ndof), (rows, cols)), shape=(fd.ndof, cont.ndof))


def zero_jump_consistency(mesh: MultiregionMesh, coeffs: CoefficientSet | None = None,
                          exact: Exact | None = None) -> dict:
    """Solve the potential problem in the broken space constrained to zero jump and
    in the continuous space; return the largest difference and the largest jump."""
    coeffs = coeffs or mms_coefficients()
    exact = exact or _exact_fields(mesh.geometry)["phi"]
    layout = build_layout(mesh)
    lay_c = continuous_layout(layout)
    cont = lay_c["phi"]

    def raw(lay):
        K = sp.csr_matrix((lay["phi"].ndof, lay["phi"].ndof))
        b = np.zeros(lay["phi"].ndof)
        for region in POROUS:
            sig = float((coeffs.sigma_membrane if region == Region.MEMBRANE else coeffs.sigma_gdl).params["value"])
            K = K + assemble_diffusion(mesh, lay, "phi", sig, [region])
            b += _diffusion_load(mesh, lay, "phi", sig, exact, [region])
        return K, b

    Kc, bc = raw(lay_c)
    Kb, bb = raw(layout)
    P = prolongation(layout, cont)
    zeros = np.zeros(len(cont.dirichlet))
    Ac, rc = apply_dirichlet(Kc, bc, cont.dirichlet, zeros)
    Ar, rr = apply_dirichlet((P.T @ Kb @ P).tocsr(), P.T @ bb, cont.dirichlet, zeros)
    solve = lambda A, r: solve_sparse(SparseSystem(A, r, {"phi": (0, len(r))}, cont.dirichlet))
    xc = solve(Ac, rc)
    xr = P @ solve(Ar, rr)
    jump = max(float(np.max(np.abs(interface_jump(mesh, layout, "phi", xr, t))))
               for t in sorted(CATALYST))
    scale = max(float(np.max(np.abs(xc))), 1e-300)
    return {"max_difference": float(np.max(np.abs(xr - P @ xc))) / scale, "max_jump": jump,
            "matrix_difference": float(abs(Ac - Ar).max()) if (Ac - Ar).nnz else 0.0}

