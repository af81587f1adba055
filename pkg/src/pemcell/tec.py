"""Coupled partial-density / temperature / potential problem.

The anode Butler-Volmer term is treated implicitly by Newton's method, the
cathode term is evaluated at the frozen potential jump.  The potential is
the collector-shifted field ``phi_cc`` (zero on both collectors); the cell
voltage only reappears in the exported potential.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .femcore import (EDGE3, TRI2, TRI4, BlockBuilder, DofLayout, SparseSystem,
                      assemble_boundary_load, assemble_boundary_mass, assemble_convection,
                      assemble_diffusion, assemble_interface_jump, assemble_interface_jump_load,
                      assemble_load, boundary_l2_norm, cellwise_lt_norm, edge_interpolate, edge_set,
                      gradient, h1_seminorm, interface_jump, interpolate, solve_sparse)
from .materials import (FARADAY, M_H2, M_O2, N_SPECIES, CoefficientSet, butler_volmer,
                        butler_volmer_derivative)
from .mesh import (ALL_REGIONS, COOLED_WALL, FLUID, GDL, POROUS, Boundary, MultiregionMesh,
                   Region)

TEC_FIELDS = ("rho1", "rho2", "theta", "phi")


class NewtonDivergence(RuntimeError):
    def __init__(self, message: str, history: list[float]):
        super().__init__(message)
        self.history = history


class RegimeViolation(ValueError):
    pass


@dataclass
class TecInputs:
    """Frozen data: velocity ``(wx, wy)`` on the channel dofs, densities
    ``rho`` (I, n), temperature ``xi``, previous potential ``phi_bar`` and the
    per-triangle Joule field ``Phi``."""

    wx: np.ndarray
    wy: np.ndarray
    rho: np.ndarray
    xi: np.ndarray
    phi_bar: np.ndarray
    Phi: np.ndarray

    @classmethod
    def zeros(cls, layout: DofLayout) -> "TecInputs":
        n = layout["theta"].ndof
        return cls(np.zeros(layout["ux"].ndof), np.zeros(layout["uy"].ndof), np.zeros((2, n)),
                   np.zeros(n), np.zeros(layout["phi"].ndof), np.zeros(layout.mesh.n_triangles))

    def check(self, layout: DofLayout) -> None:
        if np.any(self.Phi < 0):
            raise ValueError("Joule field must be non-negative")
        if len(self.Phi) != layout.mesh.n_triangles:
            raise ValueError("Joule field must have one value per triangle")
        if len(self.phi_bar) != layout["phi"].ndof or len(self.xi) != layout["theta"].ndof:
            raise ValueError("frozen potential/temperature do not match the layout")
        if np.shape(self.rho) != (N_SPECIES, layout["rho1"].ndof):
            raise ValueError(f"rho has shape {np.shape(self.rho)}")
        if len(self.wx) != layout["ux"].ndof or len(self.wy) != layout["uy"].ndof:
            raise ValueError("velocity does not match the layout")


@dataclass
class TecOptions:
    tol: float = 1e-10
    max_iter: int = 30
    max_halvings: int = 10
    min_steps: int = 1
    species_faradaic_flux: bool = False
    artificial_diffusion: float = 0.0


@dataclass
class TecSolution:
    rho: np.ndarray
    theta: np.ndarray
    phi: np.ndarray
    newton_steps: int
    residuals: list[float] = field(default_factory=list)
    frozen: TecInputs | None = None


def _velocity_at(mesh, layout, inputs, tris, rule):
    return np.stack([interpolate(mesh, layout["ux"], inputs.wx, tris, rule),
                     interpolate(mesh, layout["uy"], inputs.wy, tris, rule)], axis=-1)


def assemble_tec_linear(mesh: MultiregionMesh, layout: DofLayout, coeffs: CoefficientSet,
                        inputs: TecInputs, options: TecOptions | None = None,
                        fields=TEC_FIELDS) -> SparseSystem:
    """Linear part of the coupled system (every term except the anode kinetics).

    ``fields`` restricts assembly to a subset of the unknowns, dropping the
    blocks that couple to the others.
    """
    options = options or TecOptions()
    inputs.check(layout)
    fields = tuple(f for f in TEC_FIELDS if f in fields)
    bb = BlockBuilder(layout, fields)
    n = N_SPECIES
    names = TEC_FIELDS
    for region in ALL_REGIONS:
        tris = mesh.triangles_in([region])
        if len(tris) == 0:
            continue
        rho_q = np.stack([interpolate(mesh, layout["rho1"], r, tris, TRI2) for r in inputs.rho])
        xi_q = interpolate(mesh, layout["theta"], inputs.xi, tris, TRI2)
        A = coeffs.eval_A(rho_q, xi_q, region)
        if options.artificial_diffusion > 0 and region in FLUID:
            w = _velocity_at(mesh, layout, inputs, tris, TRI2)
            h = np.sqrt(2 * mesh.areas[tris])[:, None]
            extra = options.artificial_diffusion * h * np.linalg.norm(w, axis=-1)
            for i in range(n):
                A[..., i, i] += extra
        for i, test in enumerate(names):
            for j, trial in enumerate(names):
                if test not in fields or trial not in fields:
                    continue
                if not np.any(A[..., i, j]):
                    continue
                bb.add(test, trial, assemble_diffusion(mesh, layout, test, A[..., i, j], [region],
                                                       trial=trial, rule=TRI2))

    tris_f = mesh.triangles_in(FLUID)
    if np.any(inputs.wx) or np.any(inputs.wy):
        w = _velocity_at(mesh, layout, inputs, tris_f, TRI4)
        for i in range(n):
            if names[i] in fields:
                bb.add(names[i], names[i], assemble_convection(mesh, layout, names[i], w, FLUID))

    if "theta" in fields:
        es = edge_set(mesh, layout["theta"], COOLED_WALL)
        h = coeffs.h_c(edge_interpolate(inputs.xi, es))
        bb.add("theta", "theta", assemble_boundary_mass(mesh, layout, "theta", h, COOLED_WALL))
        if coeffs.theta_e != 0:
            bb.add_rhs("theta", assemble_boundary_load(mesh, layout, "theta", h * coeffs.theta_e,
                                                       COOLED_WALL))
        if np.any(inputs.Phi):
            for region in GDL:
                tris = mesh.triangles_in([region])
                rho_q = np.stack([interpolate(mesh, layout["rho1"], r, tris, TRI4) for r in inputs.rho])
                xi_q = interpolate(mesh, layout["theta"], inputs.xi, tris, TRI4)
                src = coeffs.sigma(rho_q, xi_q, region) * inputs.Phi[tris][:, None]
                bb.add_rhs("theta", assemble_load(mesh, layout, "theta", src, [region]))

    if "phi" in fields and np.any(inputs.phi_bar):
        eta_c = interface_jump(mesh, layout, "phi", inputs.phi_bar, Boundary.GAMMA_C)
        jc = butler_volmer(eta_c, "c", coeffs.bv)
        bb.add_rhs("phi", assemble_interface_jump_load(mesh, layout, "phi", jc, Boundary.GAMMA_C))

    if options.species_faradaic_flux and "rho1" in fields and np.any(inputs.phi_bar):
        # consumption of the species-1 carrier at the catalyst layers (s M / (n F) j)
        for tag, side, s, M in ((Boundary.GAMMA_A, "a", 2, M_H2), (Boundary.GAMMA_C, "c", 1, M_O2)):
            eta = interface_jump(mesh, layout, "phi", inputs.phi_bar, tag)
            flux = -s * M / (4 * FARADAY) * butler_volmer(eta, side, coeffs.bv)
            bb.add_rhs("rho1", assemble_boundary_load(mesh, layout, "rho1", flux, [tag]))

    return bb.build()


def anode_current_density(mesh, layout, coeffs, phi):
    """``j_a([phi])`` at the edge quadrature points of the anode interface."""
    return butler_volmer(interface_jump(mesh, layout, "phi", phi, Boundary.GAMMA_A), "a", coeffs.bv)


def interface_current(mesh: MultiregionMesh, layout: DofLayout, coeffs: CoefficientSet,
                      phi: np.ndarray, side: str) -> float:
    """``int_{Gamma_l} j_l([phi]) ds`` for ``side`` in {'a', 'c'}."""
    tag = Boundary.GAMMA_A if side == "a" else Boundary.GAMMA_C
    j = butler_volmer(interface_jump(mesh, layout, "phi", phi, tag), side, coeffs.bv)
    es = edge_set(mesh, layout["phi"], [tag], side=Region.MEMBRANE)
    return float(np.sum(es.length * (j @ EDGE3.normalized_weights)))


class _AnodeKinetics:
    """Nonlinear anode term and its Jacobian embedded in the monolithic system."""

    def __init__(self, mesh, layout, coeffs, system: SparseSystem):
        self.mesh, self.layout, self.coeffs = mesh, layout, coeffs
        self.n = system.dim
        self.active = "phi" in system.offsets
        if self.active:
            self.a, self.b = system.offsets["phi"]
        self.keep = np.ones(self.n, dtype=bool)
        self.keep[system.dirichlet] = False

    def residual(self, X):
        out = np.zeros(self.n)
        if not self.active:
            return out
        phi = X[self.a:self.b]
        j = anode_current_density(self.mesh, self.layout, self.coeffs, phi)
        out[self.a:self.b] = assemble_interface_jump_load(self.mesh, self.layout, "phi", j,
                                                          Boundary.GAMMA_A)
        out[~self.keep] = 0.0
        return out

    def jacobian(self, X):
        if not self.active:
            return sp.csr_matrix((self.n, self.n))
        phi = X[self.a:self.b]
        eta = interface_jump(self.mesh, self.layout, "phi", phi, Boundary.GAMMA_A)
        dj = butler_volmer_derivative(eta, "a", self.coeffs.bv)
        M = assemble_interface_jump(self.mesh, self.layout, "phi", dj, Boundary.GAMMA_A).tocoo()
        r, c = M.row + self.a, M.col + self.a
        ok = self.keep[r] & self.keep[c]
        return sp.csr_matrix((M.data[ok], (r[ok], c[ok])), shape=(self.n, self.n))


def newton_solve_tec(mesh: MultiregionMesh, layout: DofLayout, coeffs: CoefficientSet,
                     inputs: TecInputs, options: TecOptions | None = None,
                     initial: tuple[np.ndarray, np.ndarray, np.ndarray] | None = None,
                     fields=TEC_FIELDS) -> TecSolution:
    """Solve ``A X - b + N_a(X) = 0`` by damped Newton from ``initial`` (rho, theta, phi)."""
    options = options or TecOptions()
    system = assemble_tec_linear(mesh, layout, coeffs, inputs, options, fields)
    A, b = system.matrix, system.rhs
    kin = _AnodeKinetics(mesh, layout, coeffs, system)
    X = np.zeros(system.dim)
    if initial is not None:
        rho0, theta0, phi0 = initial
        init = {"rho1": rho0[0], "rho2": rho0[1], "theta": theta0, "phi": phi0}
        for name, (a, bnd) in system.offsets.items():
            X[a:bnd] = init[name]
        X[system.dirichlet] = b[system.dirichlet]

    def F(X):
        return A @ X - b + kin.residual(X)

    scale = np.linalg.norm(b)
    scale = scale if scale > 0 else 1.0
    r = F(X)
    history = [float(np.linalg.norm(r))]
    steps = 0
    while history[-1] > options.tol * scale or steps < options.min_steps:
        if steps >= options.max_iter:
            raise NewtonDivergence(f"Newton did not converge in {options.max_iter} steps "
                                   f"(residual {history[-1]:.3e})", history)
        J = (A + kin.jacobian(X)).tocsr()
        delta = solve_sparse(SparseSystem(J, -r), rtol=1e-12)
        t = 1.0
        for _ in range(options.max_halvings + 1):
            Xt = X + t * delta
            rt = F(Xt)
            if np.linalg.norm(rt) < history[-1] or history[-1] == 0:
                break
            t *= 0.5
        else:
            raise NewtonDivergence("line search failed to reduce the residual", history)
        X, r = Xt, rt
        history.append(float(np.linalg.norm(r)))
        steps += 1
    parts = system.split(X)
    zeros = np.zeros(layout["theta"].ndof)
    rho = np.stack([parts.get("rho1", zeros), parts.get("rho2", zeros)])
    return TecSolution(rho, parts.get("theta", zeros), parts.get("phi", np.zeros(layout["phi"].ndof)),
                       steps, history, inputs)


def compute_joule(mesh: MultiregionMesh, layout: DofLayout, phi: np.ndarray) -> np.ndarray:
    """Per-triangle ``|grad phi|^2`` on the gas diffusion layers, zero elsewhere."""
    out = np.zeros(mesh.n_triangles)
    tris = mesh.triangles_in(GDL)
    g = gradient(mesh, layout["phi"], phi, tris)
    out[tris] = np.sum(g**2, axis=1)
    return out


def velocity_lq_norm(mesh: MultiregionMesh, layout: DofLayout, wx, wy, q: float = 4.0) -> float:
    tris = mesh.triangles_in(FLUID)
    wxq = interpolate(mesh, layout["ux"], wx, tris, TRI4)
    wyq = interpolate(mesh, layout["uy"], wy, tris, TRI4)
    mag = np.hypot(wxq, wyq)
    return float(np.sum(mesh.areas[tris] * ((mag**q) @ TRI4.normalized_weights)) ** (1 / q))


@dataclass
class TecEstimateReport:
    lhs: float
    rhs: float
    passed: bool
    terms: dict = field(default_factory=dict)

    def __bool__(self) -> bool:
        return self.passed


def check_tec_estimate(mesh: MultiregionMesh, layout: DofLayout, solution: TecSolution,
                       inputs: TecInputs, coeffs: CoefficientSet, S_star: float,
                       q: float = 4.0, t: float = 1.5, rtol: float = 1e-8) -> TecEstimateReport:
    """Energy bound of (rho, theta, phi) against the Joule, kinetic and cooling data."""
    from .analysis import ellipticity_margins

    bd = coeffs.bounds()
    m = ellipticity_margins(bd)
    w_q = velocity_lq_norm(mesh, layout, inputs.wx, inputs.wy, q)
    drift = S_star * w_q
    if drift >= min(m.species):
        raise RegimeViolation(f"S*||w||_{q:g} = {drift:.4g} reaches the species margin "
                              f"{min(m.species):.4g}")
    lhs = 0.0
    for i, name in enumerate(("rho1", "rho2")):
        rho = solution.rho[i]
        lhs += (m.species[i] - drift) * h1_seminorm(mesh, layout[name], rho, FLUID) ** 2
        lhs += m.species[i] * h1_seminorm(mesh, layout[name], rho, POROUS) ** 2
    lhs += m.potential * h1_seminorm(mesh, layout["phi"], solution.phi, POROUS) ** 2
    lhs += m.heat * h1_seminorm(mesh, layout["theta"], solution.theta) ** 2
    lhs += bd.h_lo * boundary_l2_norm(mesh, layout["theta"], solution.theta, COOLED_WALL) ** 2
    from .mesh import measure
    Phi_t = cellwise_lt_norm(mesh, inputs.Phi, t)
    theta_e_sq = coeffs.theta_e**2 * measure(mesh, COOLED_WALL)
    rhs = ((S_star * bd.sigma_hi) ** 2 / bd.k_lo * Phi_t**2
           + bd.j_L**2 / min(bd.sigma_lo, bd.sigma_m / 2) + bd.h_hi * theta_e_sq)
    return TecEstimateReport(lhs, rhs, bool(lhs <= rhs * (1 + rtol)),
                             {"w_Lq": w_q, "drift": drift, "Phi_Lt": Phi_t})
