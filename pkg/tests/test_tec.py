import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pemcell.femcore import SparseSystem
from pemcell.materials import butler_volmer
from pemcell.mesh import GDL, Boundary, Region, measure
from pemcell.tec import (RegimeViolation, TecInputs, TecOptions, _AnodeKinetics,
                         assemble_tec_linear, check_tec_estimate, compute_joule,
                         interface_current, newton_solve_tec)

from conftest import C, desk_coeffs

TIGHT = TecOptions(tol=1e-13, max_iter=40)


def cathode_jump(mesh, layout, eta0):
    """Potential whose only nonzero entries are the cathode-side copies on Gamma_c."""
    fd = layout["phi"]
    phi = np.zeros(fd.ndof)
    phi[fd.node_dof[mesh.edge_nodes([Boundary.GAMMA_C])]] = eta0
    return phi


def driven_inputs(mesh, layout, rng):
    inp = TecInputs.zeros(layout)
    inp.wx[:] = 0.1 * rng.standard_normal(len(inp.wx))
    inp.wy[:] = 0.05 + 0.1 * rng.standard_normal(len(inp.wy))
    inp.phi_bar[:] = cathode_jump(mesh, layout, 0.05)
    inp.Phi[mesh.triangles_in(GDL)] = rng.uniform(0, 1, len(mesh.triangles_in(GDL)))
    return inp


def test_zero_data_zero_system(mesh, layout, coeffs):
    system = assemble_tec_linear(mesh, layout, coeffs, TecInputs.zeros(layout))
    assert not np.any(system.rhs)
    sol = newton_solve_tec(mesh, layout, coeffs, TecInputs.zeros(layout))
    assert not np.any(sol.rho) and not np.any(sol.theta) and not np.any(sol.phi)


def test_joule_source(mesh, layout):
    coeffs = desk_coeffs(sigma_gdl=C(3.0))
    inp = TecInputs.zeros(layout)
    Phi0 = 0.7
    inp.Phi[mesh.triangles_in(GDL)] = Phi0
    system = assemble_tec_linear(mesh, layout, coeffs, inp, fields=("theta",))
    fd = layout["theta"]
    expected = np.zeros(fd.ndof)
    for t in mesh.triangles_in(GDL):
        expected[fd.elem_dofs[t]] += 3.0 * Phi0 * mesh.areas[t] / 3
    expected[fd.dirichlet] = 0.0
    assert np.allclose(system.rhs, expected, rtol=1e-13, atol=1e-16)


def test_cathode_jump_load(mesh, layout, coeffs):
    eta0 = 0.08
    inp = TecInputs.zeros(layout)
    inp.phi_bar[:] = cathode_jump(mesh, layout, eta0)
    system = assemble_tec_linear(mesh, layout, coeffs, inp, fields=("phi",))
    fd = layout["phi"]
    jc = float(butler_volmer(eta0, "c", coeffs.bv))
    mem = fd.membrane_dof[mesh.edge_nodes([Boundary.GAMMA_C])]
    L = mesh.geometry.L
    assert system.rhs[mem].sum() == pytest.approx(-jc * L, rel=1e-13)
    assert interface_current(mesh, layout, coeffs, inp.phi_bar, "c") == pytest.approx(jc * L, rel=1e-13)
    assert interface_current(mesh, layout, coeffs, inp.phi_bar, "a") == 0.0


def test_cooling_maximum_principle(mesh, layout):
    coeffs = desk_coeffs(theta_e=2.0, h_c=C(5.0))
    sol = newton_solve_tec(mesh, layout, coeffs, TecInputs.zeros(layout), fields=("theta",))
    assert sol.theta.min() >= -1e-14
    assert sol.theta.max() <= 2.0 + 1e-12
    assert sol.theta.max() > 0.5
    assert np.all(sol.theta[layout["theta"].dirichlet] == 0.0)


def test_newton_jacobian_matches_finite_differences(mesh, layout, coeffs, rng):
    inp = driven_inputs(mesh, layout, rng)
    system = assemble_tec_linear(mesh, layout, coeffs, inp)
    kin = _AnodeKinetics(mesh, layout, coeffs, system)
    X = 0.05 * rng.standard_normal(system.dim)
    X[system.dirichlet] = 0.0
    F = lambda Z: system.matrix @ Z - system.rhs + kin.residual(Z)
    J = system.matrix + kin.jacobian(X)
    h = 1e-6
    for _ in range(10):
        d = rng.standard_normal(system.dim)
        d[system.dirichlet] = 0.0
        fd = (F(X + h * d) - F(X - h * d)) / (2 * h)
        assert np.linalg.norm(fd - J @ d) <= 1e-5 * np.linalg.norm(J @ d)


def test_newton_residuals_decrease(mesh, layout, rng):
    coeffs = desk_coeffs(bv=desk_coeffs().bv.__class__(0.5, 0.01, 2.0, 2.0, 1.0, 1.0, 0.02, 0.02))
    inp = driven_inputs(mesh, layout, rng)
    inp.phi_bar[:] = cathode_jump(mesh, layout, 0.3)
    sol = newton_solve_tec(mesh, layout, coeffs, inp, TIGHT)
    h = sol.residuals
    assert sol.newton_steps >= 2
    assert all(b < a for a, b in zip(h, h[1:]))
    assert h[-1] <= 1e-13 * np.linalg.norm(assemble_tec_linear(mesh, layout, coeffs, inp).rhs)


def test_blocks_decouple_without_cross_terms(mesh, layout, coeffs, rng):
    inp = driven_inputs(mesh, layout, rng)
    full = newton_solve_tec(mesh, layout, coeffs, inp, TIGHT)
    theta = newton_solve_tec(mesh, layout, coeffs, inp, TIGHT, fields=("theta",))
    species = newton_solve_tec(mesh, layout, coeffs, inp, TIGHT, fields=("rho1", "rho2"))
    # later Newton steps are driven by the potential alone and only add round-off here
    assert np.allclose(full.theta, theta.theta, rtol=0, atol=1e-14 * np.abs(theta.theta).max())
    assert np.allclose(full.rho, species.rho, rtol=0, atol=1e-14 * np.abs(species.rho).max())
    assert theta.newton_steps == 1 and species.newton_steps == 1
    phi = newton_solve_tec(mesh, layout, coeffs, inp, TIGHT, fields=("phi",))
    assert np.allclose(full.phi, phi.phi, rtol=0, atol=1e-12)


def test_current_balance_of_one_solve(mesh, layout, coeffs, rng):
    inp = driven_inputs(mesh, layout, rng)
    sol = newton_solve_tec(mesh, layout, coeffs, inp, TIGHT)
    ia = interface_current(mesh, layout, coeffs, sol.phi, "a")
    ic = interface_current(mesh, layout, coeffs, inp.phi_bar, "c")
    assert ic > 0
    assert abs(ia - ic) <= 1e-9 * abs(ic)


def test_compute_joule(mesh, layout):
    fd = layout["phi"]
    x = mesh.nodes[fd.dof_node, 0]
    Phi = compute_joule(mesh, layout, 2.0 * x)
    gdl = np.zeros(mesh.n_triangles, dtype=bool)
    gdl[mesh.triangles_in(GDL)] = True
    assert np.allclose(Phi[gdl], 4.0, rtol=1e-13)
    assert not np.any(Phi[~gdl])
    # L1 norm of Phi is the squared H1 seminorm over the diffusion layers
    assert np.sum(mesh.areas * Phi) == pytest.approx(4.0 * measure(mesh, list(GDL)), rel=1e-13)


@settings(max_examples=15)
@given(seed=st.integers(0, 2**32 - 1), eta=st.floats(-0.15, 0.15), w=st.floats(0.0, 0.3))
def test_tec_estimate_holds(seed, eta, w, mesh, layout):
    rng = np.random.default_rng(seed)
    coeffs = desk_coeffs(theta_e=1.0)
    inp = driven_inputs(mesh, layout, rng)
    inp.wx *= w
    inp.wy *= w
    inp.phi_bar[:] = cathode_jump(mesh, layout, eta)
    # |eta| <= 0.15 keeps the cathode current below the anode limiting current
    sol = newton_solve_tec(mesh, layout, coeffs, inp, TIGHT)
    rep = check_tec_estimate(mesh, layout, sol, inp, coeffs, S_star=1.3)
    assert rep, rep


def test_regime_violation(mesh, layout, coeffs, rng):
    inp = driven_inputs(mesh, layout, rng)
    inp.wy[:] = 100.0
    sol = newton_solve_tec(mesh, layout, coeffs, inp, TIGHT)
    with pytest.raises(RegimeViolation):
        check_tec_estimate(mesh, layout, sol, inp, coeffs, S_star=1.3)


def test_inputs_are_checked(layout):
    inp = TecInputs.zeros(layout)
    inp.Phi[0] = -1.0
    with pytest.raises(ValueError):
        inp.check(layout)
    with pytest.raises(ValueError):
        TecInputs(np.zeros(3), np.zeros(3), np.zeros((2, 3)), np.zeros(3), np.zeros(3),
                  np.zeros(3)).check(layout)


def test_faradaic_flux_option(mesh, layout, coeffs):
    inp = TecInputs.zeros(layout)
    inp.phi_bar[:] = cathode_jump(mesh, layout, 0.1)
    off = assemble_tec_linear(mesh, layout, coeffs, inp, TecOptions())
    on = assemble_tec_linear(mesh, layout, coeffs, inp, TecOptions(species_faradaic_flux=True))
    a, b = off.offsets["rho1"]
    assert not np.any(off.rhs[a:b])
    assert on.rhs[a:b].sum() < 0
    assert isinstance(on, SparseSystem)
    assert Region.MEMBRANE in layout["phi"].regions
