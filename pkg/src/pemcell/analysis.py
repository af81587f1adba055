"""Wellposedness calculator: ellipticity margins, smallness conditions,
discrete Sobolev constant and the trace inequality on the cathode layer."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy.sparse.linalg import splu

from .femcore import (TRI4, DofLayout, assemble_diffusion, assemble_mass, boundary_l2_norm,
                      cellwise_lt_norm, h1_seminorm, interpolate)
from .materials import N_SPECIES, CoefficientBounds, CoefficientSet
from .mesh import COOLED_WALL, POROUS, Boundary, MultiregionMesh, Region, measure

REPORT_KEYS = (
    "margins.a1", "margins.a2", "margins.heat", "margins.potential",
    "const.a", "const.b", "const.c", "const.C0", "const.R1", "const.R3", "const.Delta",
    "verdict.ellipticity", "verdict.small1", "verdict.small2",
    "interval.R2sq_lo", "interval.R2sq_hi",
)


@dataclass(frozen=True)
class Margins:
    species: tuple[float, ...]
    heat: float
    potential: float

    @property
    def all(self) -> tuple[float, ...]:
        return (*self.species, self.heat, self.potential)

    @property
    def smallest(self) -> float:
        return min(self.all)

    @property
    def elliptic(self) -> bool:
        return all(m > 0 for m in self.all)


def ellipticity_margins(bounds: CoefficientBounds, n_species: int = N_SPECIES) -> Margins:
    """Coercivity margins left after absorbing every cross term by Young's inequality."""
    I = n_species
    heat, pot = I + 1, I + 2
    D_f = bounds.D_f_lo
    positive = (*D_f, *bounds.D_p_lo, bounds.k_lo, bounds.sigma_lo, bounds.sigma_m)
    if min(positive) <= 0:
        raise ValueError("diffusivities and conductivities need positive lower bounds")
    a = bounds.a
    species = []
    for i in range(1, I + 1):
        m = min(D_f[i - 1], bounds.D_p_lo[i - 1])
        m -= 2**I * a(heat, i) ** 2 / bounds.k_lo
        m -= 2**I * a(pot, i) ** 2 / bounds.sigma_m
        m -= 2 ** (I + 1) * sum(a(j, i) ** 2 / D_f[j - 1] for j in range(1, I + 1) if j != i)
        species.append(m)
    a_heat = (bounds.k_lo - 4 * sum(a(j, heat) ** 2 / D_f[j - 1] for j in range(1, I + 1))
              - 2 * a(pot, heat) ** 2 / bounds.sigma_m)
    a_pot = (min(bounds.sigma_lo, bounds.sigma_m) - 2 * a(heat, pot) ** 2 / bounds.k_lo
             - 2 * sum(a(j, pot) ** 2 / D_f[j - 1] for j in range(1, I + 1)))
    return Margins(tuple(species), a_heat, a_pot)


# ---------------------------------------------------------------------------
# smallness conditions

# Verdicts are decided in exact rational arithmetic on the given floats, so
# parameters sitting on a boundary are not flipped by rounding.

def _exact(*values):
    return [Fraction(float(v)) for v in values]


def small1_holds(a: float, b: float, c: float, a_sharp: float) -> bool:
    if not all(math.isfinite(v) for v in (a, b, c, a_sharp)):
        return False
    a, b, c, s = _exact(a, b, c, a_sharp)
    return b > 0 and s > 0 and b >= s + a * c / s


def small2_holds(a: float, b: float, c: float, a_sharp: float) -> bool:
    if not all(math.isfinite(v) for v in (a, b, c, a_sharp)):
        return False
    a, b, c, s = _exact(a, b, c, a_sharp)
    delta = b * b - 4 * a * c
    if not (b > 0 and delta > 0 and 4 * a * c < b * b):
        return False
    # b < 2 a# + sqrt(delta)
    gap = b - 2 * s
    return gap < 0 or gap * gap < delta


def admissible_interval(a: float, b: float, c: float, a_sharp: float) -> tuple[float, float]:
    """Admissible range of R2^2; (nan, nan) when neither condition holds."""
    if small1_holds(a, b, c, a_sharp):
        hi = (b - a_sharp) / a if a > 0 else math.inf
        return c / a_sharp, hi
    if small2_holds(a, b, c, a_sharp):
        if a == 0:
            return c / b, math.inf
        root = math.sqrt(b * b - 4 * a * c)
        # smaller root of a x^2 - b x + c in the cancellation-free form
        lo = max((b - a_sharp) / a, 2 * c / (b + root))
        hi = min(b / a, (b + root) / (2 * a))
        return lo, hi
    return math.nan, math.nan


@dataclass
class HypothesisReport:
    margins: Margins
    a: float
    b: float
    c: float
    C0: float
    a_sharp: float
    R1: float
    R3: float
    R3_mode: str
    delta: float
    small1: bool
    small2: bool
    R2sq: tuple[float, float]
    S_star: float
    q: float
    M_r: float | None
    extras: dict = field(default_factory=dict)

    @property
    def elliptic(self) -> bool:
        return self.margins.elliptic

    def as_dict(self) -> dict:
        def num(x):
            return None if x is None or not math.isfinite(x) else float(x)
        m = self.margins
        return {
            "margins.a1": num(m.species[0]), "margins.a2": num(m.species[1]),
            "margins.heat": num(m.heat), "margins.potential": num(m.potential),
            "const.a": num(self.a), "const.b": num(self.b), "const.c": num(self.c),
            "const.C0": num(self.C0), "const.R1": num(self.R1), "const.R3": num(self.R3),
            "const.Delta": num(self.delta),
            "verdict.ellipticity": bool(self.elliptic),
            "verdict.small1": bool(self.small1), "verdict.small2": bool(self.small2),
            "interval.R2sq_lo": num(self.R2sq[0]), "interval.R2sq_hi": num(self.R2sq[1]),
        }

    def write(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.as_dict(), indent=2) + "\n")

    def summary(self) -> str:
        m = self.margins
        lines = [
            "margins: " + ", ".join(f"{x:.6g}" for x in m.all),
            f"S* = {self.S_star:.6g} ({self.extras.get('S_star_source', 'supplied')}), q = {self.q:g}",
            f"a = {self.a:.6g}, b = {self.b:.6g} (diffusivity form {self.extras['b_diffusivity']:.6g},"
            f" margin form {self.extras['b_margin']:.6g}), c = {self.c:.6g}",
            f"C0 = {self.C0:.6g}, a# = {self.a_sharp:.6g}, Delta = {self.delta:.6g}",
            f"R3 = {self.R3:.6g} ({self.R3_mode}), R1 = {self.R1:.6g}",
            f"ellipticity: {'pass' if self.elliptic else 'FAIL'}; "
            f"small1: {'pass' if self.small1 else 'fail'}; small2: {'pass' if self.small2 else 'fail'}",
        ]
        if math.isfinite(self.R2sq[0]):
            lines.append(f"admissible R2^2 in [{self.R2sq[0]:.6g}, {self.R2sq[1]:.6g}]")
        return "\n".join(lines)


def regularity_bound(bounds: CoefficientBounds, M_r: float, cl_length: float) -> float:
    """Gradient bound of the potential on the diffusion layers given the regularity constant."""
    s_lo, s_hi = bounds.sigma_lo, bounds.sigma_hi
    denom = s_hi * (s_hi - M_r * math.sqrt(max(s_hi**2 - s_lo**2, 0.0)))
    if denom <= 0:
        raise ValueError("regularity constant too large for the conductivity contrast")
    return s_lo * M_r / denom * bounds.j_L * cl_length


def smallness_report(coeffs: CoefficientSet, mesh: MultiregionMesh, layout: DofLayout,
                     S_star: float, q: float = 4.0, M_r: float | None = None,
                     phi_bound: float | None = None, S_star_source: str = "supplied") -> HypothesisReport:
    """Evaluate every constant of the existence argument on a concrete parameter set.

    ``R3`` comes from ``M_r`` when given, otherwise from ``phi_bound`` (a
    configured or a posteriori bound on the Joule field).
    """
    from .flow import lifting_norms

    bd = coeffs.bounds()
    margins = ellipticity_margins(bd)
    u0 = lifting_norms(mesh, layout, coeffs)
    C0 = (math.sqrt(bd.mu_hi) * u0["Du0"] + math.sqrt(bd.lam_hi) * u0["div_u0"]
          + math.sqrt(max(bd.beta_hi, bd.mu_hi / bd.K_l)) * u0["u0_gamma"])
    kappa = math.sqrt(min(bd.mu_lo / 2, bd.beta_lo))
    a = coeffs.R_specific / (kappa * math.sqrt(bd.mu_lo))
    b_diff = min(bd.D_f_lo) / S_star - C0 / kappa
    b_margin = min(margins.species) / S_star - C0 / kappa
    b = min(b_diff, b_margin)
    if M_r is not None:
        R3, mode = regularity_bound(bd, M_r, measure(mesh, [Boundary.GAMMA_A, Boundary.GAMMA_C])), "M_r"
    elif phi_bound is not None:
        R3, mode = float(phi_bound), "phi_bound"
    else:
        R3, mode = 0.0, "omitted"
    theta_e_sq = coeffs.theta_e**2 * measure(mesh, COOLED_WALL)
    c = ((S_star * bd.sigma_hi) ** 2 / bd.k_lo * R3**2
         + bd.j_L**2 / min(bd.sigma_lo, bd.sigma_m / 2) + bd.h_hi * theta_e_sq)
    a_sharp = margins.smallest
    delta = b * b - 4 * a * c
    ok1 = margins.elliptic and small1_holds(a, b, c, a_sharp)
    ok2 = margins.elliptic and small2_holds(a, b, c, a_sharp)
    R2sq = admissible_interval(a, b, c, a_sharp) if (ok1 or ok2) else (math.nan, math.nan)
    r2 = R2sq[0] if math.isfinite(R2sq[0]) else math.nan
    R1 = math.sqrt(bd.mu_hi / bd.K_l) * (coeffs.R_specific * r2 / math.sqrt(bd.mu_lo) + C0)
    return HypothesisReport(
        margins=margins, a=a, b=b, c=c, C0=C0, a_sharp=a_sharp, R1=R1, R3=R3, R3_mode=mode,
        delta=delta, small1=ok1, small2=ok2, R2sq=R2sq, S_star=S_star, q=q, M_r=M_r,
        extras={"b_diffusivity": b_diff, "b_margin": b_margin, "S_star_source": S_star_source,
                **u0},
    )


# ---------------------------------------------------------------------------
# discrete Sobolev constant

def _h1_gram(mesh, layout, name="theta"):
    K = assemble_diffusion(mesh, layout, name, 1.0)
    M = assemble_mass(mesh, layout, name, 1.0)
    return (K + M).tocsc()


def _l4_power_and_gradient(mesh, layout, v, name="theta"):
    fd = layout[name]
    tris = mesh.triangles_in(fd.regions)
    vq = interpolate(mesh, fd, v, tris, TRI4)
    w = mesh.areas[tris][:, None] * TRI4.normalized_weights[None, :]
    f = float(np.sum(w * vq**4))
    loc = np.einsum("tq,qi->ti", w * vq**3, TRI4.shape_values) * 4
    g = np.bincount(fd.elem_dofs[tris].ravel(), loc.ravel(), minlength=fd.ndof)
    return f, g


@dataclass
class EmbeddingEstimate:
    value: float
    best: np.ndarray
    history: list[float]


def estimate_embedding_constant(mesh: MultiregionMesh, layout: DofLayout, iterations: int = 50,
                                restarts: int = 5, seed: int = 0,
                                warm_starts: list[np.ndarray] | None = None) -> EmbeddingEstimate:
    """Lower bound for ``sup ||v||_4 / ||v||_{1,2}`` over the P1 space.

    Each start is driven by the ascent map ``v <- H^{-1} grad ||v||_4^4``
    normalized in the ``H^1`` inner product ``H``; the map never decreases
    the (convex) objective on the unit sphere.
    """
    H = _h1_gram(mesh, layout)
    lu = splu(H)
    n = H.shape[0]
    rng = np.random.default_rng(seed)
    starts = [np.ones(n)] + [rng.standard_normal(n) for _ in range(restarts)]
    if warm_starts:
        starts = list(warm_starts) + starts
    best, best_v, history = -np.inf, None, []

    def normalize(v):
        return v / math.sqrt(float(v @ (H @ v)))

    for v in starts:
        v = normalize(np.asarray(v, dtype=float))
        f, g = _l4_power_and_gradient(mesh, layout, v)
        for _ in range(iterations):
            w = normalize(lu.solve(g))
            fw, gw = _l4_power_and_gradient(mesh, layout, w)
            if fw <= f:
                break
            v, f, g = w, fw, gw
        ratio = f**0.25
        history.append(ratio)
        if ratio > best:
            best, best_v = ratio, v
    return EmbeddingEstimate(float(best), best_v, history)


def sobolev_ratio(mesh: MultiregionMesh, layout: DofLayout, v: np.ndarray) -> float:
    H = _h1_gram(mesh, layout)
    f, _ = _l4_power_and_gradient(mesh, layout, v)
    return f**0.25 / math.sqrt(float(v @ (H @ v)))


# ---------------------------------------------------------------------------
# trace inequality on the cathode layer

@dataclass
class TraceReport:
    max_ratio: float
    linear_ratio: float
    samples: int
    passed: bool


def trace_ratio(mesh: MultiregionMesh, layout: DofLayout, v: np.ndarray) -> float:
    """``int_{Gamma_c} v^2 / (l_c int_{Omega_c} |grad v|^2)`` (0 for v = 0)."""
    fd = layout["theta"]
    lhs = boundary_l2_norm(mesh, fd, v, [Boundary.GAMMA_C], side=Region.CATHODE_GDL) ** 2
    rhs = mesh.geometry.l_c * h1_seminorm(mesh, fd, v, [Region.CATHODE_GDL]) ** 2
    if rhs == 0:
        return 0.0 if lhs == 0 else math.inf
    return lhs / rhs


def trace_inequality_check(mesh: MultiregionMesh, layout: DofLayout, samples: int = 200,
                           seed: int = 0, tol: float = 1e-12) -> TraceReport:
    fd = layout["theta"]
    x = mesh.nodes[fd.dof_node, 0]
    bp = mesh.geometry.breakpoints
    x_c, x_end = bp[3], bp[4]
    span = bp[-1]
    inside = (x >= x_c - 1e-12 * span) & (x <= x_end + 1e-12 * span)
    far = np.abs(x - x_end) <= 1e-12 * span
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(samples):
        v = np.zeros(fd.ndof)
        v[inside] = rng.standard_normal(inside.sum())
        v[far] = 0.0
        worst = max(worst, trace_ratio(mesh, layout, v))
    lin = np.where(inside, 1.0 - (x - x_c) / (x_end - x_c), 0.0)
    lin_ratio = trace_ratio(mesh, layout, lin)
    return TraceReport(worst, lin_ratio, samples, bool(worst <= 1 + tol))


def state_norms(mesh: MultiregionMesh, layout: DofLayout, state, t: float = 1.5) -> dict:
    """Norms measured against the radii of the invariant ball."""
    triple = math.sqrt(sum(h1_seminorm(mesh, layout["rho1"], r) ** 2 for r in state.rho)
                       + h1_seminorm(mesh, layout["theta"], state.theta) ** 2
                       + h1_seminorm(mesh, layout["phi"], state.phi, POROUS) ** 2)
    return {"grad_p": h1_seminorm(mesh, layout["p"], state.p), "triple": triple,
            "Phi_t": cellwise_lt_norm(mesh, state.Phi, t)}


def mms_study(problem: str, levels: int = 3, **kwargs):
    from .mms import mms_study as run
    return run(problem, levels, **kwargs)
