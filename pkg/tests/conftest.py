import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from pemcell.femcore import build_layout
from pemcell.materials import BVParams, CoefficientSet, MaterialLaw
from pemcell.mesh import POROUS, CellGeometry, Region, build_mesh

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("thorough", max_examples=400, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

C = MaterialLaw.constant
DESK_GEOMETRY = CellGeometry(0.5, 0.2, 0.2, 0.2, 0.5, 1.0)


def desk_coeffs(**overrides) -> CoefficientSet:
    """Nondimensional O(1) coefficients used across the unit tests."""
    base = dict(
        mu=C(1.0), lam=C(0.0), beta=C(1.0), h_c=C(1.0),
        K_l={r: 1.0 for r in POROUS},
        klinkenberg_b={Region.ANODE_GDL: 0.1, Region.MEMBRANE: 0.0, Region.CATHODE_GDL: 0.1},
        D_fluid=(C(5.0), C(5.0)), D_porous=(C(5.0), C(5.0)),
        k=C(1.0), sigma_gdl=C(1.0), sigma_membrane=C(1.0),
        bv=BVParams(0.02, 0.01, 0.1, 0.1, 1.0, 1.0, 0.05, 0.05),
        R_specific=0.01, u_in=0.01, u_out=0.02,
    )
    base.update(overrides)
    return CoefficientSet(**base)


@pytest.fixture(scope="session")
def mesh():
    return build_mesh(DESK_GEOMETRY, (4, 2, 2, 2, 4), 8)


@pytest.fixture(scope="session")
def layout(mesh):
    return build_layout(mesh)


@pytest.fixture
def coeffs():
    return desk_coeffs()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import sys

    module = sys.modules.get("test_acceptance")
    results = getattr(module, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
