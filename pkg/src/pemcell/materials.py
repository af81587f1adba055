"""Constitutive laws, coefficient bounds and electrode kinetics."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .mesh import FLUID, POROUS, CellGeometry, Region

FARADAY = 9.6485e4          # C/mol
GAS_CONSTANT = 8.314        # J/mol/K
M_H2 = 2e-3                 # kg/mol
M_H2O = 18e-3
M_O2 = 32e-3
M_AIR = 28.97e-3
SIGMA_NAFION = 8.3          # S/m
THETA_REF = 357.15          # K
P_ATM = 101325.0            # Pa
RHO_AIR = 0.995             # kg/m3, stated value (the formula gives ~0.988)

N_SPECIES = 2


class DomainError(ValueError):
    pass


@dataclass(frozen=True)
class MaterialLaw:
    """A scalar law clamped to its declared bounds.

    ``form`` is one of ``constant`` (params: value), ``affine``
    (params: value, slope, ref) or ``table`` (params: x, y; linear
    interpolation, flat extrapolation).  ``argument`` selects whether the law
    reads the temperature or a partial density.
    """

    form: str
    params: Mapping[str, object]
    lower: float
    upper: float
    argument: str = "theta"

    def __post_init__(self):
        if self.form not in ("constant", "affine", "table"):
            raise ValueError(f"unknown law form {self.form!r}")
        if self.argument not in ("theta", "rho"):
            raise ValueError(f"unknown law argument {self.argument!r}")
        if not self.lower <= self.upper:
            raise ValueError(f"law bounds inverted: [{self.lower}, {self.upper}]")

    @classmethod
    def constant(cls, value: float, lower: float | None = None, upper: float | None = None,
                 argument: str = "theta") -> "MaterialLaw":
        return cls("constant", {"value": float(value)},
                   float(value) if lower is None else float(lower),
                   float(value) if upper is None else float(upper), argument)

    @classmethod
    def from_csv(cls, path: str | Path, lower: float, upper: float,
                 argument: str = "theta") -> "MaterialLaw":
        with open(path, newline="") as fh:
            rows = [r for r in csv.reader(fh) if r and not r[0].lstrip().startswith("#")]
        try:
            data = np.array([[float(a), float(b)] for a, b in rows], dtype=float)
        except ValueError:
            # header row
            data = np.array([[float(a), float(b)] for a, b in rows[1:]], dtype=float)
        order = np.argsort(data[:, 0])
        return cls("table", {"x": tuple(data[order, 0]), "y": tuple(data[order, 1])},
                   lower, upper, argument)

    @property
    def bound(self) -> float:
        """Bound on the absolute value, as used for off-diagonal entries."""
        return max(abs(self.lower), abs(self.upper))

    def __call__(self, arg) -> np.ndarray:
        arg = np.asarray(arg, dtype=float)
        if self.form == "constant":
            out = np.full(arg.shape, self.params["value"], dtype=float)
        elif self.form == "affine":
            out = self.params["value"] + self.params["slope"] * (arg - self.params.get("ref", 0.0))
        else:
            out = np.interp(arg, self.params["x"], self.params["y"])
        return np.clip(out, self.lower, self.upper)

    def check_bounds(self, box: tuple[float, float], samples: int = 10_000,
                     rng: np.random.Generator | None = None) -> bool:
        rng = np.random.default_rng(0) if rng is None else rng
        values = self(rng.uniform(box[0], box[1], samples))
        return bool(np.all((values >= self.lower) & (values <= self.upper)))


def tafel_slope(theta_ref: float) -> float:
    if theta_ref <= 0:
        raise DomainError(f"reference temperature must be positive, got {theta_ref}")
    return GAS_CONSTANT * theta_ref / FARADAY


@dataclass(frozen=True)
class BVParams:
    """Regularized Butler-Volmer data for both electrodes.

    Tafel slopes default to ``R theta / F`` of the reference temperatures.
    """

    j_a0: float
    j_c0: float
    j_aL: float
    j_cL: float
    theta_a: float = THETA_REF
    theta_c: float = THETA_REF
    B_a: float | None = None
    B_c: float | None = None

    def __post_init__(self):
        if self.B_a is None:
            object.__setattr__(self, "B_a", tafel_slope(self.theta_a))
        if self.B_c is None:
            object.__setattr__(self, "B_c", tafel_slope(self.theta_c))

    def validate(self) -> None:
        for name in ("j_a0", "j_c0", "j_aL", "j_cL", "theta_a", "theta_c", "B_a", "B_c"):
            if not getattr(self, name) > 0:
                raise ValueError(f"Butler-Volmer parameter {name} must be positive")
        if not self.j_a0 > self.j_c0:
            raise ValueError("anode exchange current must exceed the cathode one")

    @property
    def j_L(self) -> float:
        return max(self.j_aL, self.j_cL)

    def side(self, side: str) -> tuple[float, float, float]:
        if side == "a":
            return self.j_a0, self.j_aL, self.B_a
        if side == "c":
            return self.j_c0, self.j_cL, self.B_c
        raise ValueError(f"side must be 'a' or 'c', got {side!r}")


def _bv_positive(x, j0, jL):
    # x = |eta| / B >= 0
    with np.errstate(over="ignore"):
        s = 2.0 * j0 * np.sinh(x)
    with np.errstate(invalid="ignore"):
        frac = np.where(np.isinf(s), 1.0, s / (jL + s))
    # the exact value is < jL; round down instead of to nearest at saturation
    return np.minimum(jL * frac, np.nextafter(jL, 0.0))


def butler_volmer(eta, side: str, params: BVParams) -> np.ndarray:
    """Regularized, odd Butler-Volmer current density (A/m^2)."""
    j0, jL, B = params.side(side)
    eta = np.asarray(eta, dtype=float)
    j = _bv_positive(np.abs(eta) / B, j0, jL)
    return np.where(eta < 0, -j, j)


def butler_volmer_derivative(eta, side: str, params: BVParams) -> np.ndarray:
    j0, jL, B = params.side(side)
    x = np.abs(np.asarray(eta, dtype=float)) / B
    small = x <= 20.0
    xs = np.where(small, x, 0.0)
    s = 2.0 * j0 * np.sinh(xs)
    direct = jL**2 * 2.0 * j0 * np.cosh(xs) / (B * (jL + s) ** 2)
    # for large x: sinh ~ cosh ~ e^x / 2
    xl = np.where(small, 0.0, x)
    em = np.exp(-xl)
    asym = jL**2 * em / (B * j0 * (1.0 + jL * em / j0) ** 2)
    return np.where(small, direct, asym)


def boyle_pressure(rho, theta, R_specific: float) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    if np.any(theta <= 0):
        raise DomainError("temperature must be positive")
    return R_specific * np.asarray(rho, dtype=float) * theta


@dataclass(frozen=True)
class CoefficientSet:
    """Every coefficient of the coupled problem.

    ``cross`` holds the off-diagonal entries of the (I+2)x(I+2) transport
    matrix keyed by 1-based ``(row, col)``: rows/columns 1..I are species,
    I+1 is heat and I+2 the potential.
    """

    mu: MaterialLaw
    lam: MaterialLaw
    beta: MaterialLaw
    h_c: MaterialLaw
    K_l: Mapping[Region, float]
    klinkenberg_b: Mapping[Region, float]
    D_fluid: tuple[MaterialLaw, ...]
    D_porous: tuple[MaterialLaw, ...]
    k: MaterialLaw
    sigma_gdl: MaterialLaw
    sigma_membrane: MaterialLaw
    bv: BVParams
    R_specific: float
    E_cell: float = 0.0
    theta_e: float = 0.0
    u_in: float = 0.0
    u_out: float = 0.0
    cross: Mapping[tuple[int, int], MaterialLaw] = field(default_factory=dict)
    p_floor: Mapping[Region, float] | None = None
    cross_diffusion_domain: str = "membrane"
    state_box: Mapping[str, tuple[float, float]] = field(
        default_factory=lambda: {"theta": (-1.0, 1.0), "rho": (-1.0, 1.0)})

    def validate(self, samples: int = 10_000) -> None:
        if len(self.D_fluid) != N_SPECIES or len(self.D_porous) != N_SPECIES:
            raise ValueError(f"exactly {N_SPECIES} species diffusivities required")
        if set(self.K_l) != set(POROUS) or set(self.klinkenberg_b) != set(POROUS):
            raise ValueError("K_l and b must be given on every porous region")
        if any(v <= 0 for v in self.K_l.values()):
            raise ValueError("liquid permeabilities must be positive")
        if any(v < 0 for v in self.klinkenberg_b.values()):
            raise ValueError("Klinkenberg constants must be non-negative")
        if self.klinkenberg_b[Region.MEMBRANE] != 0:
            raise ValueError("Klinkenberg constant must vanish in the membrane")
        if self.cross_diffusion_domain not in ("membrane", "omega"):
            raise ValueError("cross_diffusion_domain must be 'membrane' or 'omega'")
        lower_positive = {"mu": self.mu, "beta": self.beta, "h_c": self.h_c, "k": self.k,
                          "sigma_gdl": self.sigma_gdl, "sigma_membrane": self.sigma_membrane}
        lower_positive.update({f"D_fluid[{i}]": d for i, d in enumerate(self.D_fluid)})
        lower_positive.update({f"D_porous[{i}]": d for i, d in enumerate(self.D_porous)})
        for name, law in lower_positive.items():
            if not law.lower > 0:
                raise ValueError(f"{name} needs a strictly positive lower bound")
        for (r, c) in self.cross:
            if r == c or not (1 <= r <= N_SPECIES + 2 and 1 <= c <= N_SPECIES + 2):
                raise ValueError(f"invalid cross-coefficient index {(r, c)}")
        self.bv.validate()
        rng = np.random.default_rng(0)
        theta = rng.uniform(*self.state_box["theta"], samples)
        nu = 2 * self.lam(theta) + self.mu(theta)
        if np.any(nu < 0):
            raise ValueError("bulk viscosity n*lambda + mu must be non-negative")

    # bounds -----------------------------------------------------------
    def bounds(self) -> "CoefficientBounds":
        return CoefficientBounds(
            mu_lo=self.mu.lower, mu_hi=self.mu.upper, lam_hi=self.lam.bound,
            beta_lo=self.beta.lower, beta_hi=self.beta.upper,
            h_lo=self.h_c.lower, h_hi=self.h_c.upper,
            K_l=min(self.K_l.values()),
            D_f_lo=tuple(d.lower for d in self.D_fluid),
            D_p_lo=tuple(d.lower for d in self.D_porous),
            D_hi=tuple(max(f.upper, p.upper) for f, p in zip(self.D_fluid, self.D_porous)),
            k_lo=self.k.lower, k_hi=self.k.upper,
            sigma_lo=self.sigma_gdl.lower, sigma_m=self.sigma_membrane.lower,
            sigma_hi=max(self.sigma_gdl.upper, self.sigma_membrane.upper),
            cross_hi={key: law.bound for key, law in self.cross.items()},
            j_L=self.bv.j_L,
        )

    # laws ---------------------------------------------------------------
    def klinkenberg(self, p, region: Region) -> np.ndarray:
        """Gas permeability ``K_l (1 + b / p)`` with the pressure floored at ``p_floor``."""
        region = Region(region)
        if region not in POROUS:
            raise DomainError(f"no permeability in fluid region {region.name}")
        K_l, b = self.K_l[region], self.klinkenberg_b[region]
        p = np.asarray(p, dtype=float)
        if b == 0:
            return np.full(p.shape, K_l)
        floor = b if self.p_floor is None else self.p_floor[region]
        return K_l * (1.0 + b / np.maximum(p, floor))

    def permeability_upper(self) -> float:
        out = 0.0
        for r in POROUS:
            b = self.klinkenberg_b[r]
            floor = b if self.p_floor is None else self.p_floor[r]
            out = max(out, self.K_l[r] * (1 + (b / floor if b else 0.0)))
        return out

    def sigma(self, rho, theta, region: Region) -> np.ndarray:
        law = self.sigma_membrane if Region(region) == Region.MEMBRANE else self.sigma_gdl
        return law(_law_argument(law, rho, theta, None))

    def eval_A(self, rho, theta, region: Region) -> np.ndarray:
        """Transport matrix at the given states, masked to what acts in ``region``.

        ``rho`` has shape (I, ...) and ``theta`` the trailing shape; the
        result has shape (..., I+2, I+2).
        """
        rho = np.asarray(rho, dtype=float)
        theta = np.asarray(theta, dtype=float)
        if rho.shape[0] != N_SPECIES:
            raise ValueError(f"expected {N_SPECIES} partial densities, got {rho.shape[0]}")
        region = Region(region)
        n = N_SPECIES
        A = np.zeros(theta.shape + (n + 2, n + 2))
        D = self.D_fluid if region in FLUID else self.D_porous
        for i in range(n):
            A[..., i, i] = D[i](_law_argument(D[i], rho, theta, i))
        A[..., n, n] = self.k(theta) if self.k.argument == "theta" else self.k(rho.sum(axis=0))
        porous = region in POROUS
        membrane = region == Region.MEMBRANE
        if porous:
            A[..., n + 1, n + 1] = self.sigma(rho, theta, region)
        for (r, c), law in self.cross.items():
            i, j = r - 1, c - 1
            if (i == n + 1 or j == n + 1) and not porous:
                continue
            if i < n and j < n and not (membrane or self.cross_diffusion_domain == "omega"):
                continue
            if i == n + 1 and j <= n and not membrane:
                continue
            species = j if j < n else (i if i < n else None)
            A[..., i, j] = law(_law_argument(law, rho, theta, species))
        return A

    def lifting_u0(self, x, y, geometry: CellGeometry) -> np.ndarray:
        """Explicit inlet/outlet lifting ``(0, u_in + (u_out - u_in) y / L)``."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        bp = geometry.breakpoints
        tol = 1e-12 * bp[-1]
        inside_y = (y >= -tol) & (y <= geometry.L + tol)
        in_fuel = (x >= -tol) & (x <= bp[1] + tol)
        in_air = (x >= bp[4] - tol) & (x <= bp[5] + tol)
        if not np.all(inside_y & (in_fuel | in_air)):
            raise DomainError("lifting is only defined on the channels")
        uy = self.u_in + (self.u_out - self.u_in) * y / geometry.L
        return np.stack([np.zeros_like(uy), uy], axis=-1)


def _law_argument(law: MaterialLaw, rho, theta, species):
    if law.argument == "theta":
        return theta
    rho = np.asarray(rho, dtype=float)
    return rho.sum(axis=0) if species is None else rho[species]


@dataclass(frozen=True)
class CoefficientBounds:
    """Declared bounds of the coefficient hypotheses."""

    mu_lo: float
    mu_hi: float
    lam_hi: float
    beta_lo: float
    beta_hi: float
    h_lo: float
    h_hi: float
    K_l: float
    D_f_lo: tuple[float, ...]
    D_p_lo: tuple[float, ...]
    D_hi: tuple[float, ...]
    k_lo: float
    k_hi: float
    sigma_lo: float
    sigma_m: float
    sigma_hi: float
    cross_hi: Mapping[tuple[int, int], float]
    j_L: float

    def a(self, row: int, col: int) -> float:
        return self.cross_hi.get((row, col), 0.0)


def formula_air_density() -> float:
    """Air density from the ideal-gas formula with the stated constants."""
    return P_ATM * M_AIR / (GAS_CONSTANT * THETA_REF)
