import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from trapkit.constants import E_CHARGE, EPS0_PER_UM
from trapkit.field_solver import (BoundaryConditionSet, InsideConductorError, Solver, SolverError, export_csv,
                                  superpose)
from trapkit.geometry import Box, Material, Pose, Scene, Solid, SurfaceChargePatch, build_four_rod_trap, build_sphere
from trapkit.mesher import mesh_scene
from trapkit import studies


@pytest.fixture(scope="module")
def rods():
    scene = build_four_rod_trap(50.0, 250.0, 1500.0)
    return Solver(mesh_scene(scene, 40.0))


@pytest.fixture(scope="module")
def dielectric_sphere():
    m = mesh_scene(build_sphere(50.0, material=Material.dielectric(3.75)), 8.0)
    sol = Solver(m).solve(BoundaryConditionSet({}, (), [((0.0, 0.0, 90.0), E_CHARGE)]))
    return m, sol


def test_sphere_capacitance():
    r = studies.sphere_oracle(100.0, 10.0)
    assert r["panels"] >= 4000
    assert abs(r["rel_error"]) < 0.02


def test_image_charge():
    assert studies.image_charge_oracle()["max_rel_error"] < 0.05


def test_capacitance_reciprocity():
    r = studies.capacitance_symmetry_oracle()
    assert r["max_rel_asymmetry"] < 0.01
    C = r["matrix_F"]
    # self terms positive, mutual terms negative
    assert np.all(np.diag(C) > 0)
    assert np.all(C[~np.eye(len(C), dtype=bool)] < 0)


def test_gradient_consistency():
    assert studies.gradient_consistency_oracle()["max_rel_error"] < 0.005


def test_image_charge_field_continuity():
    # oracle field: normal D and tangential E continuous across z = 0
    eps = 3.75
    src = np.array([0.0, 0.0, 20.0])
    above = studies.image_charge_field([7.0, 3.0, 1e-9], src, E_CHARGE, eps)
    below = studies.image_charge_field([7.0, 3.0, -1e-9], src, E_CHARGE, eps)
    assert above[2] == pytest.approx(eps * below[2], rel=1e-6)
    assert above[:2] == pytest.approx(below[:2], rel=1e-6)


def test_conductor_boundary_condition(rods):
    sol = rods.solve(BoundaryConditionSet({"RfA": 1.0, "RfB": -1.0}))
    m = rods.mesh
    # potential just outside the RfA rods approaches 1 V
    idx = np.flatnonzero(np.isin(m.body, [0, 2]))[::53]
    P = m.centroid[idx] + 0.5 * m.normal[idx]
    assert np.allclose(sol.potential(P), 1.0, atol=0.02)
    assert sol.solve_residual < 1e-8


def test_dielectric_interface_condition(dielectric_sphere):
    m, sol = dielectric_sphere
    errs = []
    for i in range(0, len(m), 97):
        c, n, h = m.centroid[i], m.normal[i], 0.01 * m.size[i]
        f = lambda s: sol.field([c + s * n], check=False)[0] @ n  # noqa: E731
        e_out = 2 * f(h) - f(2 * h)
        e_in = 2 * f(-h) - f(-2 * h)
        errs.append(abs(3.75 * e_in - e_out) / abs(e_out))
    assert max(errs) < 0.01


def test_surface_field_matches_offset_limit(dielectric_sphere):
    m, sol = dielectric_sphere
    idx = np.arange(0, len(m), 211)
    Es = sol.surface_field(np.isin(np.arange(len(m)), idx))
    for k, i in enumerate(idx):
        c, n, h = m.centroid[i], m.normal[i], 0.01 * m.size[i]
        lim = 2 * sol.field([c + h * n], check=False)[0] - sol.field([c + 2 * h * n], check=False)[0]
        assert np.linalg.norm(Es[k] - lim) < 0.01 * np.linalg.norm(lim)


def test_total_charge_of_isolated_dielectric_is_zero(dielectric_sphere):
    _, sol = dielectric_sphere
    q = sol.body_charge()[0]
    assert abs(q) < 1e-3 * E_CHARGE


@settings(max_examples=20, deadline=None)
@given(st.floats(-100, 100), st.floats(-100, 100))
def test_superposition_linear(rods, a, b):
    sa, sb = rods.solve_many([BoundaryConditionSet({"RfA": 1.0, "RfB": 0.0}),
                              BoundaryConditionSet({"RfA": 0.0, "RfB": 1.0})])
    direct = rods.solve(BoundaryConditionSet({"RfA": a, "RfB": b}))
    comb = superpose([sa, sb], [a, b])
    P = np.array([[10.0, 5.0, 0.0], [0.0, 30.0, 100.0]])
    scale = max(abs(a), abs(b), 1e-12)
    assert np.allclose(direct.potential(P), comb.potential(P), atol=1e-10 * scale)
    assert np.allclose(direct.field(P), comb.field(P), rtol=1e-8, atol=1e-6 * scale)


def test_superpose_rejects_foreign_mesh(rods):
    other = Solver(mesh_scene(build_sphere(50.0, role="RfA"), 20.0)).solve(BoundaryConditionSet({"RfA": 1.0}))
    s = rods.solve(BoundaryConditionSet({"RfA": 1.0, "RfB": 0.0}))
    with pytest.raises(ValueError):
        superpose([s, other], [1.0, 1.0])


def test_inside_conductor_rejected(rods):
    sol = rods.solve(BoundaryConditionSet({"RfA": 1.0, "RfB": 0.0}))
    x = 250.0 / math.sqrt(2)
    with pytest.raises(InsideConductorError):
        sol.potential([[x, x, 0.0]])


def test_missing_voltage_rejected(rods):
    with pytest.raises((SolverError, ValueError, KeyError)):
        rods.solve(BoundaryConditionSet({"RfA": 1.0}))


def test_grounded_set_solves(rods):
    sol = rods.solve(BoundaryConditionSet.grounded(point_charges=[((0.0, 0.0, 0.0), E_CHARGE)]))
    # induced charge on grounded rods is negative and bounded by the source
    q = sum(sol.group_charge(g) for g in ("RfA", "RfB"))
    assert -E_CHARGE < q < 0


def test_charge_patch_needs_dielectric(rods):
    bc = BoundaryConditionSet({"RfA": 0.0, "RfB": 0.0}, (SurfaceChargePatch("rod_1", "All", 1.0),))
    with pytest.raises(SolverError):
        rods.solve(bc)


def test_charge_patch_total_charge():
    blk = Solid("slab", Box((100.0, 100.0, 20.0)), Pose(), Material.dielectric(3.75), "DielectricBody")
    m = mesh_scene(Scene((blk,)), 15.0)
    sol = Solver(m).solve(BoundaryConditionSet({}, (SurfaceChargePatch("slab", "All", 2.0),)))
    area = float(m.area.sum())
    # free charge is prescribed; bound charge of a neutral dielectric sums to zero
    assert sol.body_charge()[0] == pytest.approx(2.0 * E_CHARGE * area, rel=1e-6)


def test_memory_guard(monkeypatch):
    monkeypatch.setenv("TRAPKIT_MEMORY_GB", "1e-6")
    s = Solver(mesh_scene(build_sphere(50.0, role="RfA"), 20.0))
    with pytest.raises(SolverError, match="TRAPKIT_MEMORY_GB"):
        s.solve(BoundaryConditionSet({"RfA": 1.0}))


def test_ground_fixed_at_zero():
    s = Solver(mesh_scene(build_sphere(50.0), 20.0))
    with pytest.raises(SolverError, match="0 V"):
        s.solve(BoundaryConditionSet({"Ground": 1.0}))


def test_point_charge_free_space():
    # a lone point source in a scene far away reproduces Coulomb's law
    m = mesh_scene(build_sphere(10.0, center=(5000.0, 0.0, 0.0)), 5.0)
    sol = Solver(m).solve(BoundaryConditionSet({"Ground": 0.0}, (), [((0.0, 0.0, 0.0), E_CHARGE)]))
    r = 20.0
    phi = sol.potential([[0.0, 0.0, r]])[0]
    assert phi == pytest.approx(E_CHARGE / (4 * math.pi * EPS0_PER_UM * r), rel=1e-2)


def test_export_csv(tmp_path, rods):
    sol = rods.solve(BoundaryConditionSet({"RfA": 1.0, "RfB": 0.0}))
    path = tmp_path / "f.csv"
    export_csv(sol, [[0.0, 0.0, 0.0], [10.0, 0.0, 0.0]], path)
    lines = path.read_text().splitlines()
    assert lines[0].startswith("x_um,y_um,z_um")
    assert len(lines) == 3
