"""Stokes-Darcy problem with a Beavers-Joseph-Saffman interface at frozen density,
temperature and Darcy-pressure iterates."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .femcore import (TRI2, BlockBuilder, DofLayout, SparseSystem, assemble_boundary_mass,
                      assemble_diffusion, assemble_gradient_load, boundary_l2_norm, div_norm,
                      edge_interpolate, edge_set, interpolate, lp_norm, solve_sparse,
                      sym_grad_norm, h1_seminorm, EDGE3)
from .materials import CoefficientSet
from .mesh import FLUID, FLUID_POROUS, POROUS, Boundary, MultiregionMesh

FLOW_FIELDS = ("ux", "uy", "p")


@dataclass
class FlowInputs:
    """Frozen iterates: Darcy pressure ``pi``, partial densities ``rho`` (I, n), temperature ``xi``."""

    pi: np.ndarray
    rho: np.ndarray
    xi: np.ndarray

    @property
    def rho_sum(self) -> np.ndarray:
        return np.asarray(self.rho).sum(axis=0)

    def check(self, layout: DofLayout) -> None:
        if len(self.pi) != layout["p"].ndof:
            raise ValueError(f"pi has length {len(self.pi)}, expected {layout['p'].ndof}")
        if np.shape(self.rho) != (2, layout["rho1"].ndof):
            raise ValueError(f"rho has shape {np.shape(self.rho)}")
        if len(self.xi) != layout["theta"].ndof:
            raise ValueError(f"xi has length {len(self.xi)}")

    @classmethod
    def zeros(cls, layout: DofLayout) -> "FlowInputs":
        n = layout["theta"].ndof
        return cls(np.zeros(layout["p"].ndof), np.zeros((2, n)), np.zeros(n))


@dataclass
class FlowSolution:
    ux: np.ndarray
    uy: np.ndarray
    p: np.ndarray
    diagnostics: dict = field(default_factory=dict)


def lifting_values(mesh: MultiregionMesh, layout: DofLayout, coeffs: CoefficientSet):
    """Nodal values of the lifting on the velocity dofs."""
    geom = mesh.geometry
    xy = mesh.nodes[layout["ux"].dof_node]
    u0 = coeffs.lifting_u0(xy[:, 0], xy[:, 1], geom)
    return u0[:, 0], u0[:, 1]


def interface_normal_x(mesh: MultiregionMesh, layout: DofLayout, tag: Boundary) -> float:
    """x-component of the normal pointing from the channel into the porous layer."""
    es = edge_set(mesh, layout["ux"], [tag])
    return float(np.sign(es.normal[0, 0]))


def flow_builder(mesh: MultiregionMesh, layout: DofLayout, coeffs: CoefficientSet,
                 inputs: FlowInputs) -> BlockBuilder:
    """Every block and load of the (u, p) system before boundary values are imposed."""
    inputs.check(layout)
    bb = BlockBuilder(layout, FLOW_FIELDS)
    tris_f = mesh.triangles_in(FLUID)
    xi_f = interpolate(mesh, layout["theta"], inputs.xi, tris_f, TRI2)
    mu = coeffs.mu(xi_f)[..., None, None]
    lam = coeffs.lam(xi_f)[..., None, None]
    E = lambda a, b, c, d: np.array([[a, b], [c, d]], dtype=float)
    blocks = {
        ("ux", "ux"): mu * E(1, 0, 0, 0.5) + lam * E(1, 0, 0, 0),
        ("uy", "uy"): mu * E(0.5, 0, 0, 1) + lam * E(0, 0, 0, 1),
        ("uy", "ux"): mu * E(0, 0.5, 0, 0) + lam * E(0, 0, 1, 0),
        ("ux", "uy"): mu * E(0, 0, 0.5, 0) + lam * E(0, 1, 0, 0),
    }
    for (test, trial), C in blocks.items():
        bb.add(test, trial, assemble_diffusion(mesh, layout, test, C, FLUID, trial=trial, rule=TRI2))

    # tangential slip on the vertical interfaces acts on u_y
    xi_e = edge_interpolate(inputs.xi, edge_set(mesh, layout["theta"], FLUID_POROUS,
                                                side=list(FLUID)))
    bb.add("uy", "uy", assemble_boundary_mass(mesh, layout, "uy", coeffs.beta(xi_e), FLUID_POROUS))

    # Darcy block, region by region (permeability is region dependent)
    for region in POROUS:
        tris = mesh.triangles_in([region])
        if len(tris) == 0:
            continue
        pi_q = interpolate(mesh, layout["p"], inputs.pi, tris, TRI2)
        xi_q = interpolate(mesh, layout["theta"], inputs.xi, tris, TRI2)
        coef = coeffs.klinkenberg(pi_q, region) / coeffs.mu(xi_q)
        bb.add("p", "p", assemble_diffusion(mesh, layout, "p", coef, [region]))

    # skew interface coupling: +int p v.n - int u.n q
    for tag in FLUID_POROUS:
        nx = interface_normal_x(mesh, layout, tag)
        B = assemble_boundary_mass(mesh, layout, "ux", nx, [tag], trial="p")
        bb.add("ux", "p", B)
        bb.add("p", "ux", -B.T.tocsr())

    # Boyle pressure enters only through the rhs
    if np.any(inputs.rho_sum) and np.any(inputs.xi):
        rs = interpolate(mesh, layout["rho1"], inputs.rho_sum, tris_f, TRI2)
        f = coeffs.R_specific * rs * xi_f
        bb.add_rhs("ux", assemble_gradient_load(mesh, layout, "ux", f, 0, FLUID, rule=TRI2))
        bb.add_rhs("uy", assemble_gradient_load(mesh, layout, "uy", f, 1, FLUID, rule=TRI2))
    return bb


def assemble_flow(mesh: MultiregionMesh, layout: DofLayout, coeffs: CoefficientSet,
                  inputs: FlowInputs) -> SparseSystem:
    """Monolithic (u, p) system; inlet/outlet data is the lifting, walls carry u.n = 0."""
    bb = flow_builder(mesh, layout, coeffs, inputs)
    u0x, u0y = lifting_values(mesh, layout, coeffs)
    return bb.build({"ux": u0x[layout["ux"].dirichlet], "uy": u0y[layout["uy"].dirichlet]})


def flow_quantities(mesh, layout, ux, uy, p) -> dict:
    return {
        "Du": sym_grad_norm(mesh, layout, ux, uy),
        "uT_gamma": boundary_l2_norm(mesh, layout["uy"], uy, FLUID_POROUS),
        "grad_p": h1_seminorm(mesh, layout["p"], p),
    }


def darcy_net_flux(mesh: MultiregionMesh, layout: DofLayout, ux: np.ndarray) -> float:
    """``int_Gamma u.n ds`` with n pointing into the porous layers."""
    total = 0.0
    for tag in FLUID_POROUS:
        nx = interface_normal_x(mesh, layout, tag)
        es = edge_set(mesh, layout["ux"], [tag])
        v = edge_interpolate(ux, es)
        total += nx * float(np.sum(es.length * (v @ EDGE3.normalized_weights)))
    return total


def solve_flow(mesh: MultiregionMesh, layout: DofLayout, coeffs: CoefficientSet,
               inputs: FlowInputs) -> FlowSolution:
    system = assemble_flow(mesh, layout, coeffs, inputs)
    x = solve_sparse(system)
    parts = system.split(x)
    ux, uy, p = parts["ux"], parts["uy"], parts["p"]
    diag = flow_quantities(mesh, layout, ux, uy, p)
    r = system.rhs - system.matrix @ x
    diag["residual"] = float(np.linalg.norm(r) / max(np.linalg.norm(system.rhs), 1e-300))
    diag["darcy_net_flux"] = darcy_net_flux(mesh, layout, ux)
    return FlowSolution(ux, uy, p, diag)


@dataclass
class EstimateReport:
    lhs: float
    rhs: float
    passed: bool
    terms: dict = field(default_factory=dict)

    def __bool__(self) -> bool:
        return self.passed


def lifting_norms(mesh: MultiregionMesh, layout: DofLayout, coeffs: CoefficientSet) -> dict:
    """Norms of the lifting: ``||D u0||``, ``||div u0||`` on the channels and ``||u0||`` on Gamma."""
    u0x, u0y = lifting_values(mesh, layout, coeffs)
    gamma = np.hypot(boundary_l2_norm(mesh, layout["ux"], u0x, FLUID_POROUS),
                     boundary_l2_norm(mesh, layout["uy"], u0y, FLUID_POROUS))
    return {"Du0": sym_grad_norm(mesh, layout, u0x, u0y),
            "div_u0": div_norm(mesh, layout, u0x, u0y),
            "u0_gamma": float(gamma)}


def check_flow_estimate(mesh: MultiregionMesh, layout: DofLayout, solution: FlowSolution,
                        inputs: FlowInputs, coeffs: CoefficientSet,
                        u0_norms: dict | None = None, rtol: float = 1e-8) -> EstimateReport:
    """Energy bound of the velocity/pressure pair against the data."""
    bd = coeffs.bounds()
    n = 2
    u0n = lifting_norms(mesh, layout, coeffs) if u0_norms is None else u0_norms
    q = flow_quantities(mesh, layout, solution.ux, solution.uy, solution.p)
    lhs = ((n - 1) / n * bd.mu_lo * q["Du"] ** 2 + bd.beta_lo * q["uT_gamma"] ** 2
           + bd.K_l / bd.mu_hi * q["grad_p"] ** 2)
    rho4 = lp_norm(mesh, layout["rho1"], inputs.rho_sum, 4, FLUID)
    xi4 = lp_norm(mesh, layout["theta"], inputs.xi, 4, FLUID)
    rhs = ((coeffs.R_specific / np.sqrt(bd.mu_lo) * rho4 * xi4 + np.sqrt(bd.mu_hi) * u0n["Du0"]) ** 2
           + bd.lam_hi * u0n["div_u0"] ** 2
           + max(bd.beta_hi, bd.mu_hi / bd.K_l) * u0n["u0_gamma"] ** 2)
    return EstimateReport(lhs, rhs, bool(lhs <= rhs * (1 + rtol)),
                          {**q, "rho_sum_L4": rho4, "xi_L4": xi4, **u0n})
