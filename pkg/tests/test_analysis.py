import json
import math

import numpy as np
import pytest
import sympy
from hypothesis import assume, given, strategies as st

from pemcell.analysis import (REPORT_KEYS, admissible_interval, ellipticity_margins,
                              estimate_embedding_constant, regularity_bound, small1_holds,
                              small2_holds, smallness_report, sobolev_ratio, state_norms,
                              trace_inequality_check, trace_ratio)
from pemcell.femcore import State, build_layout
from pemcell.materials import CoefficientBounds
from pemcell.mesh import Region, build_mesh, measure, refine

from conftest import C, DESK_GEOMETRY, desk_coeffs


def bounds(off=0.0, diag=1.0, **kw):
    cross = {(r, c): off for r in range(1, 5) for c in range(1, 5) if r != c}
    base = dict(mu_lo=1.0, mu_hi=1.0, lam_hi=0.0, beta_lo=1.0, beta_hi=1.0, h_lo=1.0, h_hi=1.0,
                K_l=1.0, D_f_lo=(diag, diag), D_p_lo=(diag, diag), D_hi=(diag, diag), k_lo=diag,
                k_hi=diag, sigma_lo=diag, sigma_m=diag, sigma_hi=diag, cross_hi=cross, j_L=1.0)
    base.update(kw)
    return CoefficientBounds(**base)


def test_margins_example():
    m = ellipticity_margins(bounds(off=0.1))
    expected = (0.84, 0.84, 0.90, 0.94)
    assert all(abs(x - e) <= 1e-12 for x, e in zip(m.all, expected))
    assert m.elliptic


def test_margins_without_cross_terms():
    b = bounds(D_f_lo=(2.0, 3.0), D_p_lo=(1.5, 4.0), k_lo=0.7, sigma_lo=0.9, sigma_m=0.4)
    m = ellipticity_margins(b)
    assert m.all == (1.5, 3.0, 0.7, 0.4)


def test_margins_need_positive_diagonal():
    with pytest.raises(ValueError):
        ellipticity_margins(bounds(k_lo=0.0))


@given(i=st.integers(1, 4), j=st.integers(1, 4), a=st.floats(0, 0.5), da=st.floats(0, 0.5))
def test_margins_decrease_with_cross_terms(i, j, a, da):
    assume(i != j)
    lo = ellipticity_margins(bounds(cross_hi={(i, j): a}))
    hi = ellipticity_margins(bounds(cross_hi={(i, j): a + da}))
    assert all(y <= x for x, y in zip(lo.all, hi.all))


def brute_small1(a, b, c, a_sharp):
    return sympy.Rational(b) >= sympy.Rational(a_sharp) + sympy.Rational(a) * sympy.Rational(c) / sympy.Rational(a_sharp)


def brute_small2(a, b, c, a_sharp):
    """Literal form with exact square roots."""
    a, b, c, s = (sympy.Rational(v) for v in (a, b, c, a_sharp))
    delta = b * b - 4 * a * c
    if not delta > 0:
        return False
    return bool(2 * sympy.sqrt(a * c) < b) and bool(b < 2 * s + sympy.sqrt(delta))


@pytest.mark.parametrize("a,a_sharp", [(0.3, 0.8), (0.05, 0.2), (1.2, 2.0)])
def test_verdicts_match_brute_force_grid(a, a_sharp):
    mismatches = 0
    for b in np.linspace(-1.0, 6.0, 100):
        for c in np.linspace(0.0, 6.0, 100):
            b, c = float(b), float(c)
            mismatches += small1_holds(a, b, c, a_sharp) != brute_small1(a, b, c, a_sharp)
            mismatches += small2_holds(a, b, c, a_sharp) != brute_small2(a, b, c, a_sharp)
    assert mismatches == 0


@given(a=st.floats(1e-3, 5), b=st.floats(-5, 20), c=st.floats(0, 20), a_sharp=st.floats(1e-2, 5))
def test_admissible_interval_is_invariant(a, b, c, a_sharp):
    lo, hi = admissible_interval(a, b, c, a_sharp)
    if not (small1_holds(a, b, c, a_sharp) or small2_holds(a, b, c, a_sharp)):
        assert math.isnan(lo) and math.isnan(hi)
        return
    assert lo <= hi * (1 + 1e-12)
    x = lo
    # the ball of radius R2 is mapped into itself
    if b - a * x >= a_sharp:
        assert c / a_sharp <= x * (1 + 1e-9)
    else:
        assert b - a * x > 0
        assert c / (b - a * x) <= x * (1 + 1e-9) + 1e-12


def test_limit_cases():
    # no Boyle coupling: small1 reduces to b >= a#
    assert small1_holds(0.0, 1.0, 5.0, 1.0)
    assert not small1_holds(0.0, 0.99, 5.0, 1.0)
    assert admissible_interval(0.0, 2.0, 1.0, 1.0) == (1.0, math.inf)
    # no data at all
    assert small1_holds(0.3, 1.0, 0.0, 1.0)
    assert admissible_interval(0.3, 1.0, 0.0, 1.0) == (0.0, 0.0)
    assert not small1_holds(0.3, -1.0, 0.0, 1.0)
    assert not small2_holds(0.3, -1.0, 0.0, 1.0)


def test_report_keys_and_json(tmp_path, mesh, layout):
    rep = smallness_report(desk_coeffs(), mesh, layout, S_star=1.3, phi_bound=0.5)
    d = rep.as_dict()
    assert tuple(d) == REPORT_KEYS
    path = tmp_path / "report.json"
    rep.write(path)
    assert json.loads(path.read_text()) == d
    assert rep.R3_mode == "phi_bound" and rep.R3 == 0.5
    bad = smallness_report(desk_coeffs(D_fluid=(C(0.01), C(0.01))), mesh, layout, S_star=1.3)
    d = bad.as_dict()
    assert d["verdict.small1"] is False and d["verdict.small2"] is False
    assert d["interval.R2sq_lo"] is None and d["const.R1"] is None
    assert "null" in json.dumps(d)


def test_report_constants(mesh, layout):
    coeffs = desk_coeffs(R_specific=0.02, beta=C(0.4))
    rep = smallness_report(coeffs, mesh, layout, S_star=1.3)
    kappa = math.sqrt(min(0.5, 0.4))
    assert rep.a == pytest.approx(0.02 / kappa, rel=1e-14)
    u0 = rep.extras
    C0 = u0["Du0"] + 0.0 * u0["div_u0"] + 1.0 * u0["u0_gamma"]
    assert rep.C0 == pytest.approx(C0, rel=1e-14)
    assert rep.b == pytest.approx(min(5.0, min(rep.margins.species)) / 1.3 - C0 / kappa, rel=1e-14)
    jL = coeffs.bv.j_L
    assert rep.c == pytest.approx(jL**2 / 0.5, rel=1e-14)
    assert rep.R3_mode == "omitted"


def test_regularity_bound():
    b = bounds(sigma_lo=1.0, sigma_hi=2.0)
    # sigma_# M_r j_L |Gamma_CL| / (sigma^# (sigma^# - M_r sqrt(sigma^#^2 - sigma_#^2)))
    expected = 0.1 * 2.0 / (2.0 * (2.0 - 0.1 * math.sqrt(3.0)))
    assert regularity_bound(b, 0.1, 2.0) == pytest.approx(expected, rel=1e-14)
    with pytest.raises(ValueError):
        regularity_bound(b, 10.0, 2.0)


def test_embedding_constant_lower_bounds(mesh, layout, rng):
    est = estimate_embedding_constant(mesh, layout, iterations=20, restarts=3)
    area = measure(mesh, list(Region))
    assert est.value >= area ** -0.25 * (1 - 1e-12)
    for _ in range(5):
        assert est.value >= sobolev_ratio(mesh, layout, rng.standard_normal(layout["theta"].ndof))
    assert est.value == pytest.approx(sobolev_ratio(mesh, layout, est.best), rel=1e-12)


def test_embedding_constant_unit_square_scale():
    # a cell of unit area: the constant function alone gives 1
    m = build_mesh(DESK_GEOMETRY.__class__(0.2, 0.2, 0.2, 0.2, 0.2, 1.0), (2, 2, 2, 2, 2), 10)
    est = estimate_embedding_constant(m, build_layout(m), iterations=20, restarts=2)
    assert est.value >= 1.0 - 1e-12


def test_embedding_constant_monotone_under_refinement(mesh, layout):
    coarse = estimate_embedding_constant(mesh, layout, iterations=20, restarts=2)
    fine_mesh = refine(mesh)
    fine_layout = build_layout(fine_mesh)
    # the P1 spaces are nested, so the supremum cannot decrease
    fine = estimate_embedding_constant(fine_mesh, fine_layout, iterations=20, restarts=2)
    assert fine.value >= coarse.value * (1 - 1e-12)


def test_trace_inequality(mesh, layout):
    rep = trace_inequality_check(mesh, layout, samples=200, seed=3)
    assert rep.passed
    assert rep.max_ratio <= 1.0
    assert abs(rep.linear_ratio - 1.0) <= 1e-12
    assert trace_ratio(mesh, layout, np.zeros(layout["theta"].ndof)) == 0.0


def test_state_norms_of_zero_state(layout, mesh):
    n = state_norms(mesh, layout, State.zeros(layout))
    assert n == {"grad_p": 0.0, "triple": 0.0, "Phi_t": 0.0}
