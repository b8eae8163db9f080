import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trapkit import trap_analysis as ta
from trapkit.constants import E_CHARGE
from trapkit.geometry import CA40, DriveConfig, IonSpecies
from trapkit.trap_analysis import AnalysisError, TrapFields

OMEGA = 2 * math.pi * 20e6
G = 2e3  # quadrupole gradient, V/m per um


def quad(P, g=G, centre=(0.0, 0.0)):
    P = np.asarray(P, dtype=float).reshape(-1, 3)
    return np.stack([g * (P[:, 0] - centre[0]), -g * (P[:, 1] - centre[1]), np.zeros(len(P))], axis=1)


def analytic_radial(species=CA40, g=G, omega=OMEGA):
    return species.charge * g * 1e6 / (math.sqrt(2) * species.mass * omega)


def test_quadrupole_radial_frequency():
    fields = TrapFields(quad, None, CA40, OMEGA)
    fit = ta.secular_fit_fields(fields, window=5.0)
    w = analytic_radial()
    assert fit.frequencies == pytest.approx([w, w], rel=1e-9)
    np.testing.assert_allclose(fit.minimum, 0.0, atol=1e-9)
    assert fit.unstable == []


@pytest.mark.parametrize("theta", [10.0, -20.0, 35.0])
def test_tilt_follows_dc_quadrupole(theta):
    t = math.radians(theta)
    k_ps = float(ta.pseudo_energy(quad([[1.0, 0, 0]])[0], CA40, OMEGA))  # eV at 1 um

    def dc(P):
        P = np.asarray(P).reshape(-1, 3)
        u = P[:, 0] * math.cos(t) + P[:, 1] * math.sin(t)
        v = -P[:, 0] * math.sin(t) + P[:, 1] * math.cos(t)
        return 0.3 * k_ps * (u * u - v * v)

    fit = ta.secular_fit_fields(TrapFields(quad, dc, CA40, OMEGA), window=5.0)
    assert fit.tilt_deg == pytest.approx(theta, abs=1e-6)
    w = analytic_radial()
    assert sorted(fit.frequencies) == pytest.approx([w * math.sqrt(0.7), w * math.sqrt(1.3)], rel=1e-9)


def test_axial_frequency_of_parabola():
    z = np.linspace(-50, 50, 101)
    w = 2 * math.pi * 1e6
    e = 0.5 * CA40.mass * w**2 * (z * 1e-6) ** 2 / E_CHARGE
    assert ta.axial_frequency(z, e, CA40) == pytest.approx(w, rel=1e-9)


def test_fit_rejects_missing_minimum():
    def dc(P):
        return 1e3 * np.asarray(P).reshape(-1, 3)[:, 0]

    with pytest.raises(AnalysisError):
        ta.secular_fit_fields(TrapFields(quad, dc, CA40, OMEGA), window=5.0)
    pm = ta.pseudopotential(TrapFields(quad, None, CA40, OMEGA), CA40, DriveConfig(),
                            ta.grid_axes(half=(0.0, 0.0, 0.0)))
    with pytest.raises(AnalysisError):
        ta.secular_fit(pm)


def _cubic_axis(P, a=1e3):
    P = np.asarray(P, dtype=float).reshape(-1, 3)
    z = P[:, 2]
    E = quad(P)
    E[:, 2] = a * z * (z * z - 100.0**2) / 1e4
    return E


def test_three_separated_nulls_and_barrier():
    fields = TrapFields(_cubic_axis, None, CA40, OMEGA)
    scan = ta.axis_scan(fields, z_range=(-150.0, 150.0), dz=7.0)
    assert scan.null_points == pytest.approx((-100.0, 0.0, 100.0), abs=1e-5)
    assert scan.null_regions == ()
    fine = ta.axis_scan(fields, z_range=(-110.0, 110.0), dz=0.25)
    zb = 100.0 / math.sqrt(3)
    expected = float(ta.pseudo_energy(_cubic_axis([[0, 0, zb]]), CA40, OMEGA)[0])
    assert fine.central_barrier() == pytest.approx(expected, rel=1e-4)


def test_null_region_detected():
    def rf(P):
        P = np.asarray(P, dtype=float).reshape(-1, 3)
        E = quad(P)
        z = P[:, 2]
        E[:, 2] = 1e3 * np.sign(z) * np.maximum(np.abs(z) - 50.0, 0.0) ** 2
        return E

    scan = ta.axis_scan(TrapFields(rf, None, CA40, OMEGA), dz=5.0)
    assert len(scan.null_regions) == 1
    a, b = scan.null_regions[0]
    assert -55.0 <= a <= -45.0 and 45.0 <= b <= 55.0
    assert scan.null_points == ()


def test_min_line_follows_displaced_null():
    def rf(P):
        P = np.asarray(P, dtype=float).reshape(-1, 3)
        return quad(P, centre=(0.3, -0.7)) + np.column_stack([0 * P[:, :2], 1e-3 * P[:, 2:]])

    line = ta.trace_min_line(TrapFields(rf, None, CA40, OMEGA), np.linspace(-20, 20, 9))
    np.testing.assert_allclose(line.xy, np.tile([0.3, -0.7], (9, 1)), atol=1e-8)


def test_find_wells_and_barriers():
    z = np.linspace(-3, 3, 601)
    e = (z * z - 1.0) ** 2
    assert [round(b[0], 6) for b in ta.find_barriers(z, e)] == [0.0]
    assert ta.find_barriers(z, e)[0][1] == pytest.approx(1.0)
    assert sorted(round(w[0], 6) for w in ta.find_wells(z, e)) == [-1.0, 1.0]
    assert ta.find_barriers(z, e, floor=2.0) == ()


def test_drive_conditions():
    from trapkit.geometry import build_four_rod_trap
    scene = build_four_rod_trap()
    rf = ta.rf_conditions(scene, DriveConfig("SingleRf", 10.0))
    assert rf.voltage["RfA"] == 20.0 and rf.voltage["RfB"] == 0.0
    rf = ta.rf_conditions(scene, DriveConfig("DualRf", 10.0))
    assert rf.voltage["RfA"] == 10.0 and rf.voltage["RfB"] == -10.0


@settings(max_examples=100, deadline=None)
@given(s=st.floats(1e-3, 1e3), mass_amu=st.floats(1.0, 300.0), k=st.floats(0.01, 100.0))
def test_pseudopotential_scaling_laws(s, mass_amu, k):
    P = np.array([[1.0, 2.0, 3.0], [-4.0, 0.5, 7.0]])
    ion = IonSpecies.from_amu("X", mass_amu)
    heavy = IonSpecies.from_amu("X", mass_amu * k)
    base = ta.pseudo_energy(quad(P), ion, OMEGA)
    # rf amplitude enters linearly in E0, squared in the pseudopotential
    assert ta.pseudo_energy(quad(P, g=s * G), ion, OMEGA) == pytest.approx(s * s * base, rel=1e-6)
    assert ta.pseudo_energy(quad(P), heavy, OMEGA) == pytest.approx(base / k, rel=1e-6)


@settings(max_examples=25, deadline=None)
@given(s=st.floats(0.1, 10.0))
def test_secular_frequency_linear_in_amplitude(s):
    a = ta.secular_fit_fields(TrapFields(quad, None, CA40, OMEGA), window=3.0)
    b = ta.secular_fit_fields(TrapFields(lambda P: quad(P, g=s * G), None, CA40, OMEGA), window=3.0)
    assert b.frequencies == pytest.approx(s * a.frequencies, rel=1e-6)


def test_sub_floor_sample_next_to_root_counts_once():
    # samples land 0.3 um from each null and fall below a loose floor
    fields = TrapFields(_cubic_axis, None, CA40, OMEGA)
    scan = ta.axis_scan(fields, z_range=(-150.3, 149.7), dz=5.0, rel_floor=0.05)
    assert len(scan.null_points) == 3
    assert scan.null_points == pytest.approx((-100.0, 0.0, 100.0), abs=1e-5)
