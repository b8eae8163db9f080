import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trapkit import symmetry as sy
from trapkit.studies import random_planewise_axis_field


def test_four_rod_nullspace_is_alternating_pattern():
    ns = sy.charge_nullspace(sy.four_rod_angles())
    assert ns.shape == (4, 1)
    assert sy.in_span(ns, [1, -1, 1, -1])
    assert sy.projector_equal(ns, np.array([[1.0], [-1.0], [1.0], [-1.0]]) / 2)
    assert not sy.in_span(ns, [1, 0, -1, 0])


@settings(max_examples=100, deadline=None)
@given(alpha=st.floats(0.05, math.pi / 2 - 0.05))
def test_four_rod_nullspace_any_opening_angle(alpha):
    ns = sy.charge_nullspace(sy.four_rod_angles(alpha))
    assert ns.shape[1] == 1
    assert sy.in_span(ns, [1, -1, 1, -1], tol=1e-8)


@settings(max_examples=200, deadline=None)
@given(r=st.floats(1.0, 1000.0), frac=st.floats(0.01, 0.99))
def test_surface_pair_nullspace_trivial(r, frac):
    ns = sy.charge_nullspace(sy.surface_pair_angles(frac * r, r))
    assert ns.shape[1] == 0


def test_surface_pair_rejects_bad_heights():
    with pytest.raises(ValueError):
        sy.surface_pair_angles(2.0, 1.0)


def test_moments_discrete_and_sampled():
    rep = sy.angular_moments(sy.CrossSectionCharges.discrete(sy.four_rod_angles(), [1, -1, 1, -1]))
    assert rep.all_satisfied
    rep = sy.angular_moments(sy.CrossSectionCharges.discrete(sy.four_rod_angles(), [1, 1, 1, 1]))
    assert not rep.satisfied["m_0"]
    rep = sy.angular_moments(sy.CrossSectionCharges.sampled(lambda t: np.sin(2 * t) + np.cos(3 * t), 64))
    assert rep.all_satisfied and rep.error_estimate < 1e-12
    rep = sy.angular_moments(sy.CrossSectionCharges.sampled(lambda t: np.cos(t), 64))
    assert rep.m_cos == pytest.approx(math.pi)
    assert not rep.all_satisfied


def test_potential_condition_on_analytic_fields():
    rng = np.random.default_rng(3)
    r, th, z = rng.uniform(1, 50, 50), rng.uniform(0, 2 * np.pi, 50), rng.uniform(-50, 50, 50)

    def quad(P):
        return P[:, 0] * P[:, 1] * (1 + 0.01 * P[:, 2])

    def shifted(P):
        return quad(P) + P[:, 0]

    assert sy.potential_condition_check(quad, r, th, z).relative_violation < 1e-14
    assert not sy.potential_condition_check(shifted, r, th, z).satisfied


def test_axis_field_single_charge_coulomb():
    from trapkit.constants import COULOMB_K
    E = sy.axis_field_from_charges([[0, 0, 10.0]], [1e-18], 0.0)
    assert E[2] == pytest.approx(-COULOMB_K * 1e-18 / (10e-6) ** 2, rel=1e-12)
    with pytest.warns(RuntimeWarning):
        sy.axis_field_from_charges([[0, 0, 0.0], [0, 0, 5.0]], [1.0, 1e-18], 0.0)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), z0=st.floats(-250.0, 250.0))
def test_planewise_conditions_null_axis_field(seed, z0):
    assert random_planewise_axis_field(np.random.default_rng(seed), z0=z0) < 1e-10
