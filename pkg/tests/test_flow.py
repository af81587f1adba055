import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, strategies as st

from pemcell.femcore import build_layout, sym_grad_norm
from pemcell.flow import (FlowInputs, assemble_flow, check_flow_estimate, darcy_net_flux,
                          flow_builder, interface_normal_x, lifting_norms, solve_flow)
from pemcell.mesh import FLUID_POROUS, Boundary, build_mesh, measure, refine

from conftest import C, DESK_GEOMETRY, desk_coeffs


def random_inputs(layout, rng, scale=1.0):
    n = layout["theta"].ndof
    return FlowInputs(pi=scale * rng.uniform(0.5, 2.0, layout["p"].ndof),
                      rho=scale * rng.uniform(0.0, 1.0, (2, n)),
                      xi=scale * rng.uniform(-1.0, 1.0, n))


def velocity_form(mesh, layout, coeffs):
    bb = flow_builder(mesh, layout, coeffs, FlowInputs.zeros(layout))
    A = bb.matrix()
    (a, _), (_, b) = bb.offsets["ux"], bb.offsets["uy"]
    return A[a:b, a:b]


def random_admissible(layout, rng):
    """Velocity vector vanishing on the Dirichlet dofs of both components."""
    vx = rng.standard_normal(layout["ux"].ndof)
    vy = rng.standard_normal(layout["uy"].ndof)
    vx[layout["ux"].dirichlet] = 0.0
    vy[layout["uy"].dirichlet] = 0.0
    return vx, vy


def test_interface_normals_point_into_porous_layers(mesh, layout):
    assert interface_normal_x(mesh, layout, Boundary.GAMMA_FUEL) == 1.0
    assert interface_normal_x(mesh, layout, Boundary.GAMMA_AIR) == -1.0


def test_skew_coupling(mesh, layout, coeffs):
    bb = flow_builder(mesh, layout, coeffs, FlowInputs.zeros(layout))
    A = bb.matrix()
    (a, b), (c, d) = bb.offsets["ux"], bb.offsets["p"]
    up, pu = A[a:b, c:d], A[c:d, a:b]
    assert up.nnz > 0
    assert abs(up + pu.T).max() == 0.0
    # the y-velocity does not see the pressure on vertical interfaces
    (e, f) = bb.offsets["uy"]
    assert A[e:f, c:d].nnz == 0


def test_zero_data_gives_zero_solution(mesh, layout):
    coeffs = desk_coeffs(u_in=0.0, u_out=0.0)
    system = assemble_flow(mesh, layout, coeffs, FlowInputs.zeros(layout))
    assert not np.any(system.rhs)
    sol = solve_flow(mesh, layout, coeffs, FlowInputs.zeros(layout))
    assert not np.any(sol.ux) and not np.any(sol.uy) and not np.any(sol.p)


def test_bjs_term_measures_interface(mesh, layout, coeffs):
    beta = 2.5
    bb = flow_builder(mesh, layout, desk_coeffs(beta=C(beta)), FlowInputs.zeros(layout))
    ref = flow_builder(mesh, layout, desk_coeffs(beta=C(0.0, 0.0, 0.0)), FlowInputs.zeros(layout))
    a, b = bb.offsets["uy"]
    D = (bb.matrix() - ref.matrix())[a:b, a:b]
    ones = np.ones(b - a)
    assert ones @ D @ ones == pytest.approx(beta * measure(mesh, FLUID_POROUS), rel=1e-13)


def test_darcy_balance_and_residual(mesh, layout, coeffs, rng):
    sol = solve_flow(mesh, layout, coeffs, random_inputs(layout, rng))
    assert sol.diagnostics["residual"] < 1e-10
    scale = np.abs(sol.ux).max() * measure(mesh, FLUID_POROUS)
    assert abs(darcy_net_flux(mesh, layout, sol.ux)) <= 1e-10 * max(scale, 1e-300)
    # inlet/outlet data is the lifting
    u0 = coeffs.lifting_u0(*mesh.nodes[layout["uy"].dof_node].T, mesh.geometry)
    d = layout["uy"].dirichlet
    assert np.allclose(sol.uy[d], u0[d, 1], atol=1e-15)


@pytest.mark.parametrize("lam", [0.0, 0.5, -0.25])
def test_coercivity_device(mesh, layout, rng, lam):
    coeffs = desk_coeffs(mu=C(1.3), lam=C(lam))
    A = velocity_form(mesh, layout, coeffs)
    mu_lo = coeffs.bounds().mu_lo
    for _ in range(20):
        vx, vy = random_admissible(layout, rng)
        v = np.concatenate([vx, vy])
        assert v @ A @ v >= 0.5 * mu_lo * sym_grad_norm(mesh, layout, vx, vy) ** 2 - 1e-12


def smallest_coercivity_ratio(mesh, layout, coeffs):
    """min a(v, v) / ||D v||^2 over admissible discrete velocities."""
    A = velocity_form(mesh, layout, coeffs).toarray()
    D = velocity_form(mesh, layout, desk_coeffs(lam=C(0.0), beta=C(0.0, 0.0, 0.0))).toarray()
    free = np.concatenate([layout["ux"].free, layout["ux"].ndof + layout["uy"].free])
    return scipy.linalg.eigh(A[np.ix_(free, free)], D[np.ix_(free, free)], eigvals_only=True)[0]


def test_coercivity_needs_lambda_above_quarter_viscosity(mesh, layout):
    """The bound relies on (div v)^2 <= |Dv|^2; the sharp bound is n |Dv|^2, so
    lambda = -mu/2, which still satisfies n lambda + mu >= 0, breaks it."""
    weak = desk_coeffs(lam=C(-0.5))
    weak.validate()
    assert smallest_coercivity_ratio(mesh, layout, weak) < 0.5
    assert smallest_coercivity_ratio(mesh, layout, desk_coeffs(lam=C(-0.25))) >= 0.5


@given(seed=st.integers(0, 2**32 - 1))
def test_flow_form_positive_definite(seed, mesh, layout):
    rng = np.random.default_rng(seed)
    bb = flow_builder(mesh, layout, desk_coeffs(), random_inputs(layout, rng))
    A = bb.matrix()
    x = rng.standard_normal(A.shape[0])
    x[bb.dirichlet_dofs()] = 0.0
    if not np.any(x):
        return
    assert x @ A @ x > 0


@given(seed=st.integers(0, 2**32 - 1), scale=st.floats(0.0, 3.0))
def test_flow_estimate_holds(seed, scale, mesh, layout):
    rng = np.random.default_rng(seed)
    coeffs = desk_coeffs(R_specific=0.3)
    inputs = random_inputs(layout, rng, scale)
    sol = solve_flow(mesh, layout, coeffs, inputs)
    rep = check_flow_estimate(mesh, layout, sol, inputs, coeffs)
    assert rep, rep


def test_lifting_norms_linear_profile(mesh, layout):
    coeffs = desk_coeffs(u_in=1.0, u_out=3.0)
    n = lifting_norms(mesh, layout, coeffs)
    g, L = mesh.geometry, mesh.geometry.L
    area = (g.w_fuel + g.w_air) * L
    slope = 2.0 / L
    # D u0 has the single entry d(u_y)/dy
    assert n["Du0"] == pytest.approx(slope * np.sqrt(area), rel=1e-13)
    assert n["div_u0"] == pytest.approx(slope * np.sqrt(area), rel=1e-13)
    # two interfaces, each with int_0^L (1 + 2y/L)^2 dy = 13 L / 3
    assert n["u0_gamma"] == pytest.approx(np.sqrt(2 * 13 * L / 3), rel=1e-13)


def test_refined_solve(mesh, coeffs, rng):
    fine = refine(mesh)
    lay = build_layout(fine)
    sol = solve_flow(fine, lay, coeffs, random_inputs(lay, rng))
    assert sol.diagnostics["residual"] < 1e-10
    assert np.isfinite(sol.diagnostics["grad_p"])


def test_coarse_mesh_solve():
    m = build_mesh(DESK_GEOMETRY, (1, 1, 1, 1, 1), 2)
    lay = build_layout(m)
    sol = solve_flow(m, lay, desk_coeffs(), FlowInputs.zeros(lay))
    assert np.all(np.isfinite(sol.uy))
