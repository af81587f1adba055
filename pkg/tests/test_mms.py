import csv

import numpy as np
import pytest

from pemcell.femcore import build_layout
from pemcell.mesh import build_mesh
from pemcell.mms import (CSV_COLUMNS, PROBLEMS, MMSSetup, continuous_layout, mms_study,
                         prolongation, zero_jump_consistency)

from conftest import DESK_GEOMETRY


@pytest.fixture(scope="module")
def studies():
    return {p: mms_study(p, 3) for p in PROBLEMS}


@pytest.mark.parametrize("problem", PROBLEMS)
def test_second_order_l2(studies, problem):
    res = studies[problem]
    assert 1.8 <= res.order_l2 <= 2.2
    assert all(a.err_l2 > b.err_l2 for a, b in zip(res.levels, res.levels[1:]))
    assert [lv.h for lv in res.levels] == pytest.approx([res.levels[0].h / 2**k for k in range(3)])


@pytest.mark.parametrize("problem", ["heat", "species", "potential"])
def test_first_order_h1(studies, problem):
    assert 0.9 <= studies[problem].order_h1 <= 1.1


def test_csv(tmp_path, studies):
    path = tmp_path / "mms.csv"
    studies["heat"].write_csv(path)
    rows = list(csv.reader(path.open()))
    assert tuple(rows[0]) == CSV_COLUMNS
    assert [r[0] for r in rows[1:]] == ["0", "1", "2"]
    assert rows[1][4] == "nan"


def test_threads_give_identical_results():
    setup = MMSSetup(divisions_x=(2, 1, 1, 1, 2), divisions_y=4)
    a = mms_study("heat", 3, setup)
    b = mms_study("heat", 3, setup, threads=2)
    assert a.rows() == b.rows()


def test_study_arguments():
    with pytest.raises(ValueError):
        mms_study("heat", 2)
    with pytest.raises(ValueError):
        mms_study("magnetism")


def test_zero_jump_potential_equals_continuous():
    mesh = build_mesh(DESK_GEOMETRY, (2, 2, 2, 2, 2), 4)
    out = zero_jump_consistency(mesh)
    assert out["max_difference"] <= 1e-12
    assert out["max_jump"] == 0.0
    assert out["matrix_difference"] <= 1e-12


def test_prolongation_duplicates_values(mesh, layout):
    cont = continuous_layout(layout)["phi"]
    P = prolongation(layout, cont)
    v = np.arange(cont.ndof, dtype=float)
    w = P @ v
    fd = layout["phi"]
    dup = fd.membrane_dof >= 0
    assert np.array_equal(w[fd.membrane_dof[dup]], w[fd.node_dof[dup]])
    assert P.shape == (fd.ndof, cont.ndof)
    assert build_layout(mesh)["phi"].ndof == fd.ndof
