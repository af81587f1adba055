"""Run configuration read from a TOML file."""
from __future__ import annotations

import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .materials import BVParams, CoefficientSet, MaterialLaw
from .mesh import POROUS, CellGeometry, Region
from .picard import PicardConfig
from .tec import TecOptions


class ConfigError(ValueError):
    """Malformed or incomplete configuration; the message names the offending field."""


REGION_KEYS = {"anode_gdl": Region.ANODE_GDL, "membrane": Region.MEMBRANE,
               "cathode_gdl": Region.CATHODE_GDL}


@dataclass
class AnalysisOptions:
    S_star: float | None = None
    S_star_safety: float = 1.5
    q: float = 4.0
    M_r: float | None = None
    phi_bound: float | None = None


@dataclass
class OutputOptions:
    directory: str = "out"
    mesh: bool = True
    fields: bool = True
    trace: bool = True
    report: bool = True
    balances: bool = True
    timing: bool = False


@dataclass
class RunConfig:
    geometry: CellGeometry
    divisions_x: tuple[int, ...]
    divisions_y: int
    coefficients: CoefficientSet
    picard: PicardConfig
    analysis: AnalysisOptions = field(default_factory=AnalysisOptions)
    output: OutputOptions = field(default_factory=OutputOptions)
    source: Path | None = None


def _get(block: Mapping, key: str, where: str, kind=float, default: Any = ...):
    if key not in block:
        if default is ...:
            raise ConfigError(f"missing field {where}.{key}")
        return default
    value = block[key]
    try:
        if kind is bool:
            if not isinstance(value, bool):
                raise TypeError
            return value
        if kind is int:
            if isinstance(value, bool) or int(value) != value:
                raise TypeError
            return int(value)
        if kind is float and isinstance(value, bool):
            raise TypeError
        return kind(value)
    except (TypeError, ValueError):
        raise ConfigError(f"field {where}.{key} has invalid value {value!r}") from None


def _law(spec, where: str, base: Path | None, argument: str = "theta") -> MaterialLaw:
    if isinstance(spec, (int, float)) and not isinstance(spec, bool):
        return MaterialLaw.constant(float(spec), argument=argument)
    if not isinstance(spec, Mapping):
        raise ConfigError(f"field {where} must be a number or a table")
    form = spec.get("form", "constant")
    arg = spec.get("argument", argument)
    if arg not in ("theta", "rho"):
        raise ConfigError(f"field {where}.argument must be 'theta' or 'rho'")
    if form == "constant":
        value = _get(spec, "value", where)
        return MaterialLaw.constant(value, _get(spec, "lower", where, default=None),
                                    _get(spec, "upper", where, default=None), arg)
    lower = _get(spec, "lower", where)
    upper = _get(spec, "upper", where)
    if form == "affine":
        params = {"value": _get(spec, "value", where), "slope": _get(spec, "slope", where),
                  "ref": _get(spec, "ref", where, default=0.0)}
        try:
            return MaterialLaw("affine", params, lower, upper, arg)
        except ValueError as exc:
            raise ConfigError(f"field {where}: {exc}") from None
    if form == "table":
        rel = spec.get("csv")
        if not isinstance(rel, str):
            raise ConfigError(f"field {where}.csv must name a two-column table")
        path = Path(rel) if base is None or Path(rel).is_absolute() else base / rel
        if not path.exists():
            raise ConfigError(f"field {where}.csv: table {path} does not exist")
        try:
            return MaterialLaw.from_csv(path, lower, upper, arg)
        except (ValueError, OSError) as exc:
            raise ConfigError(f"field {where}.csv: {exc}") from None
    raise ConfigError(f"field {where}.form must be constant, affine or table, got {form!r}")


def _per_region(spec, where: str) -> dict[Region, float]:
    if isinstance(spec, (int, float)) and not isinstance(spec, bool):
        return {r: float(spec) for r in POROUS}
    if not isinstance(spec, Mapping):
        raise ConfigError(f"field {where} must be a number or a per-region table")
    unknown = set(spec) - set(REGION_KEYS)
    if unknown:
        raise ConfigError(f"field {where} has unknown regions {sorted(unknown)}")
    return {REGION_KEYS[k]: _get(spec, k, where) for k in REGION_KEYS}


def _block(doc: Mapping, key: str, required: bool = True) -> Mapping:
    value = doc.get(key)
    if value is None:
        if required:
            raise ConfigError(f"missing block [{key}]")
        return {}
    if not isinstance(value, Mapping):
        raise ConfigError(f"[{key}] must be a table")
    return value


def parse_config(doc: Mapping, base: Path | None = None) -> RunConfig:
    g = _block(doc, "geometry")
    geometry = CellGeometry(*(_get(g, k, "geometry") for k in ("w_fuel", "l_a", "l_m", "l_c", "w_air", "L")))
    dx = g.get("divisions_x")
    if not isinstance(dx, list) or len(dx) != 5:
        raise ConfigError("field geometry.divisions_x must list five strip counts")
    divisions_x = tuple(_get({"d": d}, "d", "geometry.divisions_x", int) for d in dx)
    divisions_y = _get(g, "divisions_y", "geometry", int)

    m = _block(doc, "materials")
    where = "materials"
    kin = _block(m, "kinetics")
    try:
        bv = BVParams(**{k: _get(kin, k, "materials.kinetics") for k in ("j_a0", "j_c0", "j_aL", "j_cL")},
                      theta_a=_get(kin, "theta_a", "materials.kinetics", default=357.15),
                      theta_c=_get(kin, "theta_c", "materials.kinetics", default=357.15),
                      B_a=_get(kin, "B_a", "materials.kinetics", default=None),
                      B_c=_get(kin, "B_c", "materials.kinetics", default=None))
    except ValueError as exc:
        raise ConfigError(f"materials.kinetics: {exc}") from None
    perm = _block(m, "permeability")
    diff = _block(m, "diffusivity")
    for key in ("fluid", "porous"):
        if not isinstance(diff.get(key), list) or len(diff[key]) != 2:
            raise ConfigError(f"field materials.diffusivity.{key} must list two species laws")
    cross = {}
    for key, spec in _block(m, "cross", required=False).items():
        try:
            r, c = (int(s) for s in key.split(","))
        except ValueError:
            raise ConfigError(f"materials.cross key {key!r} must read 'row,col'") from None
        cross[(r, c)] = _law(spec, f"materials.cross.{key}", base)
    solver = _block(doc, "solver", required=False)
    box = m.get("state_box", {"theta": [-1.0, 1.0], "rho": [-1.0, 1.0]})
    try:
        coeffs = CoefficientSet(
            mu=_law(_get(m, "mu", where, lambda x: x), "materials.mu", base),
            lam=_law(_get(m, "lam", where, lambda x: x, default=0.0), "materials.lam", base),
            beta=_law(_get(m, "beta", where, lambda x: x), "materials.beta", base),
            h_c=_law(_get(m, "h_c", where, lambda x: x), "materials.h_c", base),
            K_l=_per_region(perm.get("K_l"), "materials.permeability.K_l"),
            klinkenberg_b=_per_region(perm.get("b", 0.0), "materials.permeability.b"),
            p_floor=(_per_region(perm["p_floor"], "materials.permeability.p_floor")
                     if "p_floor" in perm else None),
            D_fluid=tuple(_law(s, f"materials.diffusivity.fluid[{i}]", base)
                          for i, s in enumerate(diff["fluid"])),
            D_porous=tuple(_law(s, f"materials.diffusivity.porous[{i}]", base)
                           for i, s in enumerate(diff["porous"])),
            k=_law(_get(m, "k", where, lambda x: x), "materials.k", base),
            sigma_gdl=_law(_get(m, "sigma_gdl", where, lambda x: x), "materials.sigma_gdl", base),
            sigma_membrane=_law(_get(m, "sigma_membrane", where, lambda x: x),
                                "materials.sigma_membrane", base),
            bv=bv,
            R_specific=_get(m, "R_specific", where),
            E_cell=_get(m, "E_cell", where, default=0.0),
            theta_e=_get(m, "theta_e", where, default=0.0),
            u_in=_get(m, "u_in", where, default=0.0),
            u_out=_get(m, "u_out", where, default=0.0),
            cross=cross,
            cross_diffusion_domain=solver.get("cross_diffusion_domain", "membrane"),
            state_box={k: tuple(float(x) for x in v) for k, v in box.items()},
        )
        coeffs.validate()
    except ConfigError:
        raise
    except (ValueError, KeyError, TypeError) as exc:
        raise ConfigError(f"materials: {exc}") from None

    out = _block(doc, "output", required=False)
    newton = TecOptions(
        tol=_get(solver, "newton_tol", "solver", default=1e-10),
        max_iter=_get(solver, "newton_max_iter", "solver", int, default=30),
        species_faradaic_flux=_get(solver, "species_faradaic_flux", "solver", bool, default=False),
        artificial_diffusion=_get(solver, "artificial_diffusion", "solver", default=0.0),
    )
    try:
        picard = PicardConfig(
            tol=_get(solver, "tol", "solver", default=1e-8),
            max_outer=_get(solver, "max_outer", "solver", int, default=100),
            omega=_get(solver, "omega", "solver", default=1.0),
            auto_relax=_get(solver, "auto_relax", "solver", bool, default=True),
            t_exponent=_get(solver, "t_exponent", "solver", default=1.5),
            newton=newton,
            timing=_get(out, "timing", "output", bool, default=False),
        )
    except ValueError as exc:
        raise ConfigError(f"solver: {exc}") from None
    an = _block(doc, "analysis", required=False)
    analysis = AnalysisOptions(
        S_star=_get(an, "S_star", "analysis", default=None),
        S_star_safety=_get(an, "S_star_safety", "analysis", default=1.5),
        q=_get(an, "q", "analysis", default=4.0),
        M_r=_get(an, "M_r", "analysis", default=None),
        phi_bound=_get(an, "phi_bound", "analysis", default=None),
    )
    output = OutputOptions(
        directory=str(out.get("directory", "out")),
        **{k: _get(out, k, "output", bool, default=True)
           for k in ("mesh", "fields", "trace", "report", "balances")},
        timing=picard.timing,
    )
    return RunConfig(geometry, divisions_x, divisions_y, coeffs, picard, analysis, output)


def load_config(path: str | Path) -> RunConfig:
    """Read and validate a configuration file.

    Geometry errors surface as ``InvalidGeometryError``; every other problem
    as ``ConfigError`` naming the line or field.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    cfg = parse_config(doc, base=path.resolve().parent)
    cfg.source = path
    return cfg


def shipped_config(name: str) -> Path:
    """Path of a configuration template bundled with the package."""
    ref = resources.files("pemcell") / "configs" / name
    return Path(str(ref))
