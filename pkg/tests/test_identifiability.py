from fractions import Fraction

import numpy as np
import pytest
import sympy as sp

from p2dident.identifiability import (ELECTROLYTE_COLUMNS, ExponentMatrix, electrolyte_generators,
                                      identifiability_class, identifiability_matrix, nullspace_scalings,
                                      same_span, solid_matrix)
from p2dident.params import ScalingTransform, apply_scaling, group


def test_rank_and_nullspace_at_standard_bruggeman():
    m = identifiability_matrix(1.5)
    assert m.shape == (8, 10)
    assert m.rank() == 8
    assert len(nullspace_scalings(m)) == 2


def test_nullspace_matches_hand_generators():
    for b in (Fraction(3, 2), Fraction(2), Fraction(7, 5)):
        m = identifiability_matrix(b)
        assert same_span(nullspace_scalings(m), list(electrolyte_generators(b)))
        for d in electrolyte_generators(b):
            assert m.matrix * sp.Matrix(d.vector) == sp.zeros(8, 1)


def test_symbolic_bruggeman():
    b = sp.Symbol("b", positive=True)
    m = identifiability_matrix(b)
    assert m.rank() == 8
    for d in electrolyte_generators(b):
        assert sp.simplify(m.matrix * sp.Matrix(d.vector)) == sp.zeros(8, 1)


def test_solid_system_direction():
    dirs = nullspace_scalings(solid_matrix())
    assert len(dirs) == 1
    assert tuple(dirs[0].vector) == (1, 2, 1)


def test_full_rank_toy_is_identifiable():
    m = ExponentMatrix.from_rows([[1, 0], [1, 1]])
    assert nullspace_scalings(m) == []
    assert identifiability_class(m) == "globally identifiable (no scaling freedom)"
    assert "unidentifiable" in identifiability_class(solid_matrix())


def test_label_mismatch():
    with pytest.raises(ValueError):
        ExponentMatrix.from_rows([[1, 0]], rows=("a", "b"))


def test_direction_applies_to_values():
    d = electrolyte_generators()[1]
    vals = {c: 2.0 for c in ELECTROLYTE_COLUMNS}
    out = d.apply(vals, 3.0)
    assert out["A"] == pytest.approx(6.0) and out["eps_s.pos"] == pytest.approx(2.0 / 3.0)
    assert out["L.pos"] == 2.0


def test_numeric_matrix_and_format():
    m = identifiability_matrix()
    a = m.to_numpy()
    assert a.shape == (8, 10) and np.linalg.matrix_rank(a) == 8
    assert "tau_d_e.pos" in m.format()
    assert m.row("nu_e.sep") == {"L.sep": 1, "eps_e.sep": 1}


def test_scaled_physical_sets_share_grouping(physical):
    for s in (ScalingTransform(mu=3.0), ScalingTransform(mu1=1.7), ScalingTransform(mu2=1.4)):
        a, b = group(physical).flat(), group(apply_scaling(physical, s)).flat()
        for k in a:
            assert b[k] == pytest.approx(a[k], rel=1e-12)
