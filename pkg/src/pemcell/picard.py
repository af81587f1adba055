"""Outer fixed-point iteration over (Darcy pressure, densities, temperature,
potential, Joule field)."""
from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .femcore import (DofLayout, SingularSystemError, State, cellwise_lt_norm, h1_seminorm,
                      vector_l2_norm)
from .flow import FlowInputs, FlowSolution, check_flow_estimate, darcy_net_flux, lifting_norms, solve_flow
from .materials import CoefficientSet
from .mesh import POROUS, MultiregionMesh
from .tec import (NewtonDivergence, TecInputs, TecOptions, TecSolution, assemble_tec_linear,
                  check_tec_estimate, compute_joule, interface_current, newton_solve_tec)

TRACE_COLUMNS = ("iter", "du", "dp", "drho1", "drho2", "dtheta", "dphi", "dPhi", "newton_steps",
                 "current_imbalance", "darcy_flux", "seconds")
EPS = 1e-14


class PicardDivergence(RuntimeError):
    def __init__(self, message: str, trace: "IterationTrace"):
        super().__init__(message)
        self.trace = trace


@dataclass
class PicardConfig:
    tol: float = 1e-8
    max_outer: int = 100
    omega: float = 1.0
    auto_relax: bool = True
    t_exponent: float = 1.5
    newton: TecOptions = field(default_factory=TecOptions)
    timing: bool = False
    check_estimates: bool = False

    def __post_init__(self):
        if not 0 < self.omega <= 1:
            raise ValueError(f"relaxation must lie in (0, 1], got {self.omega}")
        if not self.tol > 0:
            raise ValueError("tolerance must be positive")
        if self.t_exponent <= 1:
            raise ValueError("the Joule exponent must exceed 1 in two dimensions")


@dataclass
class IterationRecord:
    iter: int
    du: float
    dp: float
    drho1: float
    drho2: float
    dtheta: float
    dphi: float
    dPhi: float
    newton_steps: int
    current_imbalance: float
    darcy_flux: float
    seconds: float
    omega: float = 1.0
    flow_estimate: object | None = None
    tec_estimate: object | None = None

    @property
    def update(self) -> float:
        return max(self.du, self.dp, self.drho1, self.drho2, self.dtheta, self.dphi, self.dPhi)


@dataclass
class IterationTrace:
    records: list[IterationRecord] = field(default_factory=list)
    converged: bool = False
    notes: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def updates(self) -> list[float]:
        return [r.update for r in self.records]

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(TRACE_COLUMNS)
            for r in self.records:
                row = [getattr(r, c) for c in TRACE_COLUMNS]
                w.writerow([v if isinstance(v, (int, np.integer)) else f"{v:.17g}" for v in row])


@dataclass
class LastSolve:
    """Inputs and raw outputs of the final inner solves (before relaxation)."""

    flow_inputs: FlowInputs
    flow: FlowSolution
    tec_inputs: TecInputs
    tec: TecSolution


def _rel(diff: float, ref: float) -> float:
    return diff / (ref + EPS)


def _update_norms(mesh, layout, old: State, new: State, t: float) -> dict:
    def h1(name, a, b, regions=None):
        return _rel(h1_seminorm(mesh, layout[name], b - a, regions), h1_seminorm(mesh, layout[name], b, regions))
    return {
        "du": _rel(vector_l2_norm(mesh, layout, new.ux - old.ux, new.uy - old.uy),
                   vector_l2_norm(mesh, layout, new.ux, new.uy)),
        "dp": h1("p", old.p, new.p),
        "drho1": h1("rho1", old.rho[0], new.rho[0]),
        "drho2": h1("rho2", old.rho[1], new.rho[1]),
        "dtheta": h1("theta", old.theta, new.theta),
        "dphi": h1("phi", old.phi, new.phi, POROUS),
        "dPhi": _rel(cellwise_lt_norm(mesh, new.Phi - old.Phi, t), cellwise_lt_norm(mesh, new.Phi, t)),
    }


def _relax(old: State, target: State, omega: float) -> State:
    if omega == 1.0:
        return replace(target)
    mix = lambda a, b: (1 - omega) * a + omega * b
    return State(ux=target.ux, uy=target.uy, p=mix(old.p, target.p), rho=mix(old.rho, target.rho),
                 theta=mix(old.theta, target.theta), phi=mix(old.phi, target.phi),
                 Phi=mix(old.Phi, target.Phi), frozen=target.frozen)


def fixed_point_map(mesh: MultiregionMesh, layout: DofLayout, coeffs: CoefficientSet,
                    state: State, options: TecOptions) -> State:
    """One application of the map: flow solve, electrochemical solve, Joule update."""
    fin = FlowInputs(pi=state.p, rho=state.rho, xi=state.theta)
    fsol = solve_flow(mesh, layout, coeffs, fin)
    tin = TecInputs(wx=fsol.ux, wy=fsol.uy, rho=state.rho, xi=state.theta, phi_bar=state.phi,
                    Phi=state.Phi)
    tsol = newton_solve_tec(mesh, layout, coeffs, tin, options,
                            initial=(state.rho, state.theta, state.phi))
    return State(ux=fsol.ux, uy=fsol.uy, p=fsol.p, rho=tsol.rho, theta=tsol.theta, phi=tsol.phi,
                 Phi=compute_joule(mesh, layout, tsol.phi),
                 frozen=LastSolve(fin, fsol, tin, tsol))


def run_fixed_point(mesh: MultiregionMesh, layout: DofLayout, coeffs: CoefficientSet,
                    config: PicardConfig | None = None, S_star: float | None = None,
                    initial: State | None = None) -> tuple[State, IterationTrace]:
    """Iterate the coupled map from zero until the relative update drops below ``tol``."""
    config = config or PicardConfig()
    state = initial if initial is not None else State.zeros(layout)
    trace = IterationTrace()
    omega = config.omega
    best_update = np.inf
    previous: tuple[State, State] | None = None
    u0n = lifting_norms(mesh, layout, coeffs) if config.check_estimates else None
    k = 0
    while k < config.max_outer:
        k += 1
        start = time.perf_counter()
        try:
            target = fixed_point_map(mesh, layout, coeffs, state, config.newton)
        except (NewtonDivergence, SingularSystemError) as exc:
            if previous is None or omega <= config.omega / 2:
                raise PicardDivergence(f"inner solve failed at iteration {k}: {exc}", trace) from exc
            omega /= 2
            trace.notes.append(f"iteration {k}: inner failure, relaxation halved to {omega:g}")
            old, old_target = previous
            state = _relax(old, old_target, omega)
            target = fixed_point_map(mesh, layout, coeffs, state, config.newton)
        new = _relax(state, target, omega)
        upd = _update_norms(mesh, layout, state, new, config.t_exponent)
        last: LastSolve = target.frozen
        imbalance = (interface_current(mesh, layout, coeffs, last.tec.phi, "a")
                     - interface_current(mesh, layout, coeffs, last.tec_inputs.phi_bar, "c"))
        rec = IterationRecord(
            iter=k, **upd, newton_steps=last.tec.newton_steps, current_imbalance=imbalance,
            darcy_flux=last.flow.diagnostics["darcy_net_flux"],
            seconds=time.perf_counter() - start if config.timing else 0.0, omega=omega)
        if config.check_estimates:
            rec.flow_estimate = check_flow_estimate(mesh, layout, last.flow, last.flow_inputs, coeffs, u0n)
            rec.tec_estimate = check_tec_estimate(mesh, layout, last.tec, last.tec_inputs, coeffs,
                                                  S_star, t=config.t_exponent)
        trace.records.append(rec)
        previous = (state, target)
        state = new
        if rec.update <= config.tol:
            trace.converged = True
            return state, trace
        if config.auto_relax and omega == 1.0 and k > 1 and rec.update > best_update:
            omega = 0.5
            trace.notes.append(f"iteration {k}: update grew, relaxation set to 0.5")
        best_update = min(best_update, rec.update)
    raise PicardDivergence(f"no convergence in {config.max_outer} outer iterations "
                           f"(last update {trace.updates[-1]:.3e})", trace)


def balances(state: State, mesh: MultiregionMesh, layout: DofLayout,
             coeffs: CoefficientSet) -> dict[str, float]:
    """Darcy net flux, anode/cathode current imbalance and the heat balance residual."""
    last = state.frozen if isinstance(state.frozen, LastSolve) else None
    ux = state.ux
    if last is None:
        phi, phi_bar = state.phi, state.phi
        tin = TecInputs(wx=state.ux, wy=state.uy, rho=state.rho, xi=state.theta,
                        phi_bar=state.phi, Phi=state.Phi)
        rho, theta = state.rho, state.theta
    else:
        phi, phi_bar, tin = last.tec.phi, last.tec_inputs.phi_bar, last.tec_inputs
        rho, theta, ux = last.tec.rho, last.tec.theta, last.flow.ux
    ja = interface_current(mesh, layout, coeffs, phi, "a")
    jc = interface_current(mesh, layout, coeffs, phi_bar, "c")
    fd = layout["theta"]
    full = assemble_tec_linear(mesh, layout, coeffs, tin)
    X = np.concatenate([rho[0], rho[1], theta, phi])
    a, b = full.offsets["theta"]
    r = (full.matrix @ X - full.rhs)[a:b]
    heat = float(np.sum(r[fd.free]))
    return {"darcy_net_flux": darcy_net_flux(mesh, layout, ux),
            "current_imbalance": ja - jc, "anode_current": ja, "cathode_current": jc,
            "heat_balance": heat}
