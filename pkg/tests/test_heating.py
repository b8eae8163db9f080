import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trapkit import heating as ht
from trapkit.field_solver import BoundaryConditionSet, Solver
from trapkit.geometry import FUSED_SILICA, Cylinder, Pose, Scene, Solid
from trapkit.heating import (
    SIO2,
    TA2O5,
    CoatingStack,
    DeltaField,
    FitError,
    HeatingConfig,
    coating_integral,
    fit_power_law,
    heating_rate,
    noise_spectrum,
    rescale_rate,
)
from trapkit.mesher import mesh_scene


@pytest.fixture(scope="module")
def fibre_solver():
    fibre = Solid("fibre", Cylinder(62.5, 400.0), Pose(), FUSED_SILICA, "DielectricBody")
    return Solver(mesh_scene(Scene((fibre,), symmetry=("x", "y")), 12.0))


@pytest.fixture(scope="module")
def fibre_result(fibre_solver):
    return ht.heating_at(fibre_solver, (0.0, 0.0, -100.0))


def uniform_delta(field, n=5, area=2.0):
    normal = np.tile([0.0, 0.0, -1.0], (n, 1))
    return DeltaField(np.zeros((n, 3)), np.full(n, area), normal, np.tile(field, (n, 1)), 1.0)


def test_coating_integral_uniform_field_oracle():
    E = np.array([3.0, 4.0, 12.0])
    d = uniform_delta(E)
    stack = CoatingStack(pairs=3)
    A = 5 * 2.0 * 1e-12
    expected = 0.0
    for mat, t in ((SIO2, 250.0), (TA2O5, 250.0)):
        expected += 3 * t * 1e-9 * mat.eps_r * mat.tan_delta * A * (25.0 + 144.0 / mat.eps_r**2)
    assert coating_integral(d, stack) == pytest.approx(expected, rel=1e-12)
    assert coating_integral(d, CoatingStack(pairs=0)) == 0.0


def test_lossless_stack_gives_zero_exactly(fibre_solver):
    res = ht.heating_at(fibre_solver, (0.0, 0.0, -100.0), stack=CoatingStack().lossless())
    assert res.ndot == (0.0, 0.0, 0.0)
    assert res.S == (0.0, 0.0, 0.0)


def test_rates_positive_and_transverse_symmetric(fibre_result):
    assert all(v > 0 for v in fibre_result.ndot)
    assert fibre_result.rate("x") == pytest.approx(fibre_result.rate("y"), rel=0.02)
    assert fibre_result.total == pytest.approx(sum(fibre_result.ndot))


def test_rate_falls_with_distance(fibre_solver, fibre_result):
    far = ht.heating_at(fibre_solver, (0.0, 0.0, -200.0))
    assert all(f < n for f, n in zip(far.ndot, fibre_result.ndot))


@settings(max_examples=50, deadline=None)
@given(T=st.floats(1.0, 1000.0), k=st.floats(0.1, 10.0))
def test_noise_proportional_to_temperature(T, k):
    d = uniform_delta(np.array([1.0, 2.0, 3.0]))
    s1 = noise_spectrum(d, CoatingStack(), HeatingConfig(temperature=T), "x")
    s2 = noise_spectrum(d, CoatingStack(), HeatingConfig(temperature=k * T), "x")
    assert s2 == pytest.approx(k * s1, rel=1e-12)


@settings(max_examples=50, deadline=None)
@given(S=st.floats(1e-16, 1e-8), w=st.floats(1e5, 1e8), k=st.floats(0.1, 10.0))
def test_rate_inverse_in_frequency_at_fixed_noise(S, w, k):
    assert heating_rate(S, k * w) == pytest.approx(heating_rate(S, w) / k, rel=1e-12)


@settings(max_examples=50, deadline=None)
@given(w=st.floats(1e5, 1e8), k=st.floats(0.1, 10.0))
def test_rescale_law_matches_full_formula(w, k):
    d = uniform_delta(np.array([1.0, 0.0, 2.0]))
    a = HeatingConfig(omega_radial=w)
    b = HeatingConfig(omega_radial=k * w)
    na = heating_rate(noise_spectrum(d, CoatingStack(), a, "x"), w)
    nb = heating_rate(noise_spectrum(d, CoatingStack(), b, "x"), k * w)
    assert rescale_rate(na, w, k * w) == pytest.approx(nb, rel=1e-12)


def test_heating_rate_rejects_bad_frequency():
    with pytest.raises(ValueError):
        heating_rate(1e-12, 0.0)


def test_delta_field_requires_shared_mesh(fibre_solver):
    other = Solver(mesh_scene(fibre_solver.mesh.scene, 20.0))
    bc = BoundaryConditionSet.grounded(point_charges=[((0.0, 0.0, -100.0), 1.602e-19)])
    with pytest.raises(ValueError, match="different meshes"):
        ht.delta_field(fibre_solver.solve(bc), other.solve(bc))


def test_power_law_recovery():
    d = np.array([150.0, 175.0, 200.0, 250.0])
    f = fit_power_law(d, 3e12 * d**-5.5)
    assert f.alpha == pytest.approx(5.5, rel=1e-10)
    assert f.prefactor == pytest.approx(3e12, rel=1e-8)
    assert f.r_squared == pytest.approx(1.0)


def test_power_law_rejections():
    with pytest.raises(FitError, match="monotonically"):
        fit_power_law([1, 2, 3], [3.0, 1.0, 2.0])
    with pytest.raises(FitError):
        fit_power_law([1, 2, 3], [3.0, 0.0, -1.0])
    with pytest.raises(FitError):
        fit_power_law([1, 2], [3.0, 1.0])


def test_stack_validation():
    with pytest.raises(ValueError):
        CoatingStack(pairs=-1)
    with pytest.raises(ValueError):
        CoatingStack(layers=((SIO2, 0.0),))
    assert CoatingStack().thickness_nm == 20 * 500.0
    assert math.isclose(HeatingConfig().omega("z"), 2 * math.pi * 1e6)


def test_scene_families():
    assert len(ht.heating_scene("shield_protruded").solids) == 16
    with pytest.raises(ValueError):
        ht.heating_scene("nope")
    with pytest.raises(ValueError):
        ht.length_scene("shield", 100.0)


def test_noise_independent_of_displacement(fibre_solver, fibre_result):
    half = ht.heating_at(fibre_solver, (0.0, 0.0, -100.0), HeatingConfig(displacement=0.5))
    for a, b in zip(half.S, fibre_result.S):
        assert b == pytest.approx(a, rel=0.03)
