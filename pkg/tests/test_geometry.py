import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from trapkit.geometry import (CA40, BladeTrapParams, Box, Cylinder, DriveConfig, GeometryError, IonSpecies, Material,
                              Pose, Scene, Solid, SurfaceChargePatch, SurfaceTrapParams, Tube, apply_misalignment, build_blade_trap,
                              build_four_rod_trap, build_surface_trap, hyperbolic_surrogate, surface_null_height)


def test_materials_validate():
    assert Material.conductor().is_conductor
    with pytest.raises(GeometryError):
        Material("Conductor", 2.0)
    with pytest.raises(GeometryError):
        Material.dielectric(0.5)
    with pytest.raises(GeometryError):
        Material.dielectric(3.75, -1e-3)


def test_shapes_reject_bad_dimensions():
    with pytest.raises(GeometryError):
        Tube(80.0, 75.0, 100.0)
    with pytest.raises(GeometryError):
        Cylinder(-1.0, 10.0)
    with pytest.raises(GeometryError):
        Box((1.0, 0.0, 1.0))


def test_species_charge_multiple_of_e():
    with pytest.raises(ValueError):
        IonSpecies("odd", 1e-25, 0.5 * CA40.charge)
    assert CA40.mass == pytest.approx(6.6359e-26, rel=1e-4)


def test_drive_amplitudes():
    s = DriveConfig("SingleRf", 30.0)
    d = DriveConfig("DualRf", 30.0)
    assert s.rf_amplitudes() == {"RfA": 60.0, "RfB": 0.0}
    assert d.rf_amplitudes() == {"RfA": 30.0, "RfB": -30.0}
    assert s.pair_amplitude == d.pair_amplitude == 60.0
    with pytest.raises(ValueError):
        DriveConfig("TripleRf", 1.0)


def test_blade_trap_solid_counts():
    full = build_blade_trap(cavity_length=300.0)
    bare = build_blade_trap(with_fibres=False, with_shields=False)
    # 4 rf blades + 8 endcap blades, plus a fibre and a shield on each side
    assert len(bare.solids) == 12
    assert len(full.solids) == 16
    assert {s.name for s in full.solids} - {s.name for s in bare.solids} == {"fibre_R", "fibre_L", "shield_R",
                                                                               "shield_L"}


def test_bare_blade_mirror_symmetry():
    bare = build_blade_trap(with_fibres=False, with_shields=False)
    for ax in "xyz":
        partner = bare.mirror_partner(ax)
        for i, j in enumerate(partner):
            a, b = bare.solids[i], bare.solids[j]
            if a.role in ("RfA", "RfB"):
                # reflection across x=0 or y=0 swaps the diagonal pairs
                assert b.role in ("RfA", "RfB")
            assert a.volume() == pytest.approx(b.volume(), rel=1e-12)


def test_rf_roles_on_diagonals():
    bare = build_blade_trap(with_fibres=False, with_shields=False)
    roles = {s.name: s.role for s in bare.solids}
    assert roles["rf_q1"] == roles["rf_q3"] == "RfA"
    assert roles["rf_q2"] == roles["rf_q4"] == "RfB"


def test_shield_protrusion_positions():
    sc = build_blade_trap(cavity_length=300.0, shield_protrusion=25.0)
    sh = sc.solids[sc.index("shield_R")]
    fi = sc.solids[sc.index("fibre_R")]
    assert sh.bounds()[0][0] == pytest.approx(125.0)
    assert fi.bounds()[0][0] == pytest.approx(150.0)
    shl = sc.solids[sc.index("shield_L")]
    assert shl.bounds()[1][0] == pytest.approx(-125.0)


def test_overlap_names_both_solids():
    a = Solid("a", Box((10.0, 10.0, 10.0)), Pose(), Material.conductor(), "RfA")
    b = Solid("b", Box((10.0, 10.0, 10.0)), Pose((5.0, 0.0, 0.0)), Material.conductor(), "RfB")
    with pytest.raises(GeometryError, match="'a' and 'b'"):
        Scene((a, b)).check_overlaps()


def test_four_rod_counts_and_symmetry():
    sc = build_four_rod_trap(50.0, 250.0, 4000.0)
    assert len(sc.solids) == 4
    assert len(build_four_rod_trap(50.0, 250.0, 4000.0, with_shields=True).solids) == 6
    c = np.array([s.pose.origin[:2] for s in sc.solids])
    # D4: rotating by 90 degrees maps the rod axes onto each other
    rot = c @ np.array([[0.0, 1.0], [-1.0, 0.0]])
    for p in rot:
        assert np.min(np.linalg.norm(c - p, axis=1)) < 1e-9
    assert np.allclose(np.linalg.norm(c, axis=1), 250.0)


def test_hyperbolic_surrogate_ratio():
    sc = hyperbolic_surrogate(250.0)
    r = sc.solids[0].shape.radius
    assert r / 250.0 == pytest.approx(1.1468)
    assert np.linalg.norm(sc.solids[0].pose.origin[:2]) == pytest.approx(250.0 + r)


def test_surface_trap_planar():
    sc = build_surface_trap(with_shields=False)
    tops = {round(float(s.bounds()[1][1]), 9) for s in sc.solids}
    assert tops == {0.0}
    assert sc.meta["ion_height"] == pytest.approx(surface_null_height(SurfaceTrapParams()))


def test_surface_trap_retracted_shields():
    sc = build_surface_trap(cavity_length=500.0)
    sh = sc.solids[sc.index("shield_R")]
    assert sh.bounds()[0][0] == pytest.approx(250.0)


def test_misalignment_identity_and_translation():
    base = build_blade_trap()
    assert apply_misalignment(base, "R", (0.0, 0.0, 0.0)) is base
    moved = apply_misalignment(base, "R", (-5.0, 0.0, 0.0))
    f0 = base.solids[base.index("fibre_R")].bounds()[0][0]
    f1 = moved.solids[moved.index("fibre_R")].bounds()[0][0]
    assert f1 == pytest.approx(f0 - 5.0)
    assert moved.solids[moved.index("fibre_L")] == base.solids[base.index("fibre_L")]
    z = apply_misalignment(base, "L", (0.0, 0.0, 5.0))
    assert "z" not in z.symmetry and "y" in z.symmetry
    with pytest.raises(GeometryError):
        apply_misalignment(base, "Q", (1.0, 0.0, 0.0))


def test_charge_patch_region():
    with pytest.raises(GeometryError):
        SurfaceChargePatch("fibre_R", "Back", 1.0)


def test_scene_roundtrip_exact():
    sc = build_blade_trap(shield_protrusion=10.0)
    text = sc.dumps()
    again = Scene.loads(text)
    assert again.dumps() == text
    assert again == sc


@settings(max_examples=25, deadline=None)
@given(st.floats(0.0, 40.0), st.floats(200.0, 400.0))
def test_protrusion_property(prot, L):
    sc = build_blade_trap(cavity_length=L, shield_protrusion=prot, check=False)
    sh = sc.solids[sc.index("shield_R")]
    fi = sc.solids[sc.index("fibre_R")]
    assert fi.bounds()[0][0] - sh.bounds()[0][0] == pytest.approx(prot, abs=1e-9)


@settings(max_examples=25, deadline=None)
@given(st.tuples(st.floats(-20, 20), st.floats(-5, 5), st.floats(-5, 5)))
def test_misalignment_moves_pair_rigidly(off):
    base = build_blade_trap()
    moved = apply_misalignment(base, "R", off, check=False)
    for name in ("fibre_R", "shield_R"):
        a = np.array(base.solids[base.index(name)].pose.origin)
        b = np.array(moved.solids[moved.index(name)].pose.origin)
        assert np.allclose(b - a, off, atol=1e-12)


def test_blade_params_defaults():
    p = BladeTrapParams()
    assert p.tip_width == 22.0 and p.taper_angle_deg == 12.7
    assert math.isclose(p.fibre_radius, 62.5)
