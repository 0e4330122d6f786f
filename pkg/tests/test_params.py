import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from p2dident.config import read_parameters
from p2dident.params import (MODEL_PARAMETER_KEYS, ElectrodeProperties, GroupedParameterSet, ParameterError,
                             PhysicalParameterSet, ScalingTransform, SeparatorProperties, apply_scaling, group,
                             physical_from_dict, physical_to_dict, secondary_quantities)

from conftest import DATA


def test_nominal_matches_golden_file(physical):
    golden = read_parameters(DATA / "nominal_grouped.ini").grouped.flat()
    got = group(physical).flat()
    assert set(golden) == set(got)
    for k, v in golden.items():
        assert got[k] == pytest.approx(v, rel=1e-13), k


def test_model_parameter_keys_cover_twenty_entries(grouped):
    assert len(MODEL_PARAMETER_KEYS) == 20
    assert set(MODEL_PARAMETER_KEYS) <= set(grouped.flat())


def test_flat_roundtrip(grouped):
    again = GroupedParameterSet.from_flat(grouped.flat())
    assert again == grouped


def test_with_values_replaces_only_named(grouped):
    g2 = grouped.with_values({"pos.tau_k": 1.0, "r_f": 0.5})
    assert g2.pos.tau_k == 1.0 and g2.r_f == 0.5
    assert g2.neg == grouped.neg and g2.sep == grouped.sep


@pytest.mark.parametrize("key", ["neg.tau_d_s", "sep.kappa", "gamma"])
def test_grouped_rejects_nonpositive(grouped, key):
    with pytest.raises(ParameterError):
        grouped.with_values({key: 0.0})


def test_zero_film_resistance_allowed(grouped):
    assert grouped.with_values({"r_f": 0.0}).r_f == 0.0


def test_physical_validation(physical):
    with pytest.raises(ParameterError, match="t_plus"):
        replace(physical, t_plus=1.2)
    with pytest.raises(ParameterError, match="eps_s"):
        replace(physical, neg=replace(physical.neg, eps_s=0.8))
    with pytest.raises(ParameterError):
        replace(physical, D_e=-1.0)


def test_physical_dict_roundtrip(physical):
    assert physical_from_dict(physical_to_dict(physical)) == physical


def test_physical_dict_unknown_key(physical):
    d = physical_to_dict(physical)
    d["neg"]["bogus"] = 1.0
    with pytest.raises(ParameterError, match="bogus"):
        physical_from_dict(d)


def test_secondary_quantities(physical):
    s = secondary_quantities(physical)
    assert s["neg.a_s"] == pytest.approx(3 * 0.6 / 5e-6)
    assert s["pos.eps_f"] == pytest.approx(1 - 0.5 - 0.35)
    assert s["cell_thickness"] == pytest.approx(8.5e-5 + 2.5e-5 + 7.5e-5)


def test_identity_scaling_is_noop(physical):
    assert apply_scaling(physical, ScalingTransform()) == physical


def test_scaling_rejects_nonpositive():
    with pytest.raises(ParameterError):
        ScalingTransform(mu=0.0)


factor = st.floats(0.5, 2.0)


@st.composite
def physical_sets(draw):
    def electrode():
        eps_s = draw(st.floats(0.3, 0.6))
        return ElectrodeProperties(
            D_s=draw(st.floats(1e-15, 1e-13)), R_s=draw(st.floats(1e-6, 1e-5)), eps_s=eps_s,
            eps_e=draw(st.floats(0.1, 1.0 - eps_s - 0.05)), L=draw(st.floats(3e-5, 1.5e-4)),
            k_n=draw(st.floats(1e-12, 1e-10)), c_s_max=draw(st.floats(1e4, 6e4)),
            sigma_s=draw(st.floats(1.0, 200.0)), E_Ds=draw(st.floats(0, 6e4)), E_kn=draw(st.floats(0, 6e4)))

    return PhysicalParameterSet(
        neg=electrode(), sep=SeparatorProperties(draw(st.floats(0.3, 0.6)), draw(st.floats(1e-5, 5e-5))),
        pos=electrode(), A=draw(st.floats(0.01, 1.0)), D_e=draw(st.floats(1e-10, 1e-9)),
        kappa_e=draw(st.floats(0.2, 2.0)), t_plus=draw(st.floats(0.2, 0.5)),
        f_activity_term=draw(st.floats(0.5, 2.0)), R_f=draw(st.floats(1e-5, 1e-3)),
        c_e_ref=draw(st.floats(500, 2000)), i_ref=draw(st.floats(0.5, 10.0)))


@settings(max_examples=60, deadline=None)
@given(physical_sets(), factor, factor, factor)
def test_scaling_families_leave_grouped_unchanged(phys, mu, mu1, mu2):
    # the transform can leave the physical domain (t_plus, volume fractions)
    try:
        scaled = apply_scaling(phys, ScalingTransform(mu, mu1, mu2))
    except ParameterError:
        assume(False)
    a = group(phys).flat()
    b = group(scaled).flat()
    for k in a:
        assert math.isclose(a[k], b[k], rel_tol=1e-12, abs_tol=1e-300), k


@settings(max_examples=40, deadline=None)
@given(physical_sets(), st.floats(1.05, 2.0))
def test_particle_radius_alone_changes_grouping(phys, mu):
    r = replace(phys, neg=replace(phys.neg, R_s=phys.neg.R_s * mu))
    assert group(r).neg.tau_d_s == pytest.approx(group(phys).neg.tau_d_s * mu**2, rel=1e-12)


@settings(max_examples=40, deadline=None)
@given(physical_sets())
def test_grouped_values_positive(phys):
    g = group(phys).flat()
    assert all(np.isfinite(v) and v > 0 for k, v in g.items() if "E_tau" not in k)
    assert all(v >= 0 for k, v in g.items() if "E_tau" in k)
