"""Acceptance criteria, one test per criterion.

Each test records a single pass/fail line (see ``criterion_log`` in
conftest.py) that is repeated in the terminal summary.
"""

import math
import time

import numpy as np
import pytest

from trapkit import cli, cqed, heating, studies, symmetry
from trapkit import trap_analysis as ta
from trapkit.field_solver import Solver
from trapkit.geometry import CA40, DriveConfig, IonSpecies, hyperbolic_surrogate

pytestmark = pytest.mark.slow


def within(value, lo, hi):
    return lo <= value <= hi


def timed(fn, *args, **kw):
    t0 = time.perf_counter()
    out = fn(*args, **kw)
    return out, time.perf_counter() - t0


def test_criterion_01_solver_oracles(criterion_log):
    checks = []
    total = 0.0
    sph, t = timed(studies.sphere_oracle)
    total += t
    checks.append(("sphere_capacitance", sph["panels"] >= 4000 and abs(sph["rel_error"]) <= 0.02 and t < 120,
                    f"{sph['rel_error']:+.2e} at {sph['panels']} panels, {t:.0f} s"))
    img, t = timed(studies.image_charge_oracle)
    total += t
    checks.append(("image_charge", img["max_rel_error"] <= 0.05 and t < 120,
                   f"{img['max_rel_error']:.2e}, {t:.0f} s"))
    cap, t = timed(studies.capacitance_symmetry_oracle)
    total += t
    checks.append(("capacitance_symmetry", cap["max_rel_asymmetry"] <= 0.01 and t < 120,
                   f"{cap['max_rel_asymmetry']:.2e}, {t:.0f} s"))
    grad, t = timed(studies.gradient_consistency_oracle)
    total += t
    checks.append(("gradient_consistency", grad["max_rel_error"] <= 0.005 and t < 120,
                   f"{grad['max_rel_error']:.2e}, {t:.0f} s"))
    assert criterion_log(1, "solver oracles", checks, total)


def test_criterion_02_mathieu(criterion_log):
    m, t = timed(studies.mathieu_oracle)
    checks = [("secular_frequency", abs(m["rel_error"]) <= 0.05, f"{m['rel_error']:+.2e}"),
              ("runtime", t < 300, f"{t:.0f} s")]
    assert criterion_log(2, "Mathieu secular frequency", checks, t)


def test_criterion_03_cqed(criterion_log):
    t0 = time.perf_counter()
    rows = cqed.species_table()
    table_ok = all(round(r.eta, 3) == pytest.approx(e, abs=1e-12) for r, e in zip(rows, cqed.TABULATED_ETA))
    worst = 0.0
    rng = np.random.default_rng(7)
    for _ in range(2000):
        g = cqed.CavityGeometry.from_xi(rng.uniform(50, 5e4), rng.uniform(1e-3, 1 - 1e-3), rng.uniform(1e3, 1e7))
        tr = rows[rng.integers(len(rows))]
        a, b = cqed.cooperativity(g, tr), cqed.cooperativity_from_waist(g, tr)
        worst = max(worst, abs(a - b) / abs(a))
    xi = np.concatenate([rng.uniform(1e-6, 1 - 1e-6, 5000), np.linspace(1e-3, 0.5, 500)])
    sym = bool(np.array_equal(cqed.c_over_eta(500.0, 1e5, xi), cqed.c_over_eta(500.0, 1e5, 1.0 - xi)))
    lo, _ = cqed.xi_window_for_threshold(25000.0, 1e6)
    long_ok = (cqed.c_over_eta(25000.0, 1e6, 0.01) >= 100.0
               and np.all(cqed.c_over_eta(25000.0, 1e6, np.linspace(0.02, 0.98, 97)) < 100.0))
    f_mid = cqed.finesse_for_threshold(500.0, 0.5)
    short_ok = abs(f_mid / 8.2e4 - 1) < 0.01 and f_mid < 1e5
    checks = [("eta_table", table_ok, "3 decimals"),
              ("routes_agree", worst <= 1e-12, f"max rel diff {worst:.1e}"),
              ("mirror_symmetry", sym, "bitwise"),
              ("R_c_25mm", bool(long_ok), f"F=1e6 threshold xi < {lo:.4f}"),
              ("R_c_500um", bool(short_ok), f"F at xi=0.5 = {f_mid:.4g}")]
    assert criterion_log(3, "cavity QED relations", checks, time.perf_counter() - t0)


def test_criterion_04_drive_dichotomy(criterion_log):
    out, t = timed(studies.drive_dichotomy)
    ii, iii = out["II"].metrics, out["III"].metrics
    nulls = ii["null_points"]
    gaps = np.diff(nulls) if len(nulls) > 1 else np.array([0.0])
    b2, b3 = ii["central_barrier_ev"], iii["central_barrier_ev"]
    checks = [("single_rf_three_nulls", ii["n_null_points"] == 3 and not ii["null_regions"] and gaps.min() > 20.0,
               f"nulls at {', '.join(f'{z:.1f}' for z in nulls)} um"),
              ("single_rf_barrier", within(b2, 0.03, 0.09), f"{b2:.4f} eV"),
              ("dual_rf_axis_field", iii["max_abs_E0z"] <= iii["noise_floor_V_per_m"],
               f"max |E0z| {iii['max_abs_E0z']:.2e} <= floor {iii['noise_floor_V_per_m']:.2e} V/m"),
              ("dual_rf_barrier", b3 < b2 / 100, f"{b3:.2e} eV"),
              ("panels", ii["panels"] <= 50000, str(ii["panels"])),
              ("runtime", t < 1800, f"{t:.0f} s")]
    assert criterion_log(4, "drive-scheme dichotomy", checks, t)


def test_criterion_05_symmetry(criterion_log):
    res, t = timed(studies.symmetry_check)
    m = res.metrics
    rng = np.random.default_rng(11)
    dims = [symmetry.charge_nullspace(symmetry.surface_pair_angles(f * r, r)).shape[1]
            for r, f in zip(rng.uniform(10, 1000, 200), rng.uniform(0.01, 0.99, 200))]
    planewise = max(studies.random_planewise_axis_field(rng, z0=z0) for z0 in rng.uniform(-250, 250, 20))
    checks = [("four_rod_nullspace", m["four_rod_nullspace_ok"], "span{(1,-1,1,-1)}"),
              ("surface_nullspace", max(m["surface_nullspace_dims"] + dims) == 0, f"{len(dims) + 3} h/r pairs"),
              ("dual_rf_condition", m["dual_rf_violation"] < 1e-3, f"{m['dual_rf_violation']:.1e}"),
              ("single_rf_condition_violated", m["single_rf_violation"] >= 1e-3, f"{m['single_rf_violation']:.2f}"),
              ("planewise_axis_field", max(planewise, m["random_planewise_max_field_ratio"]) < 1e-10,
               f"max |E|/|E_abs| {max(planewise, m['random_planewise_max_field_ratio']):.1e}"),
              ("runtime", t < 600, f"{t:.0f} s")]
    assert criterion_log(5, "symmetry analytics", checks, t)


def test_criterion_06_charge_shielding(criterion_log):
    ch, t1 = timed(studies.charge_study)
    comp, t2 = timed(studies.compensation_study)
    m, c = ch.metrics, comp.metrics
    checks = [("unshielded_barrier", m["unshielded"]["barrier_ev"] > 1.0, f"{m['unshielded']['barrier_ev']:.3f} eV"),
              ("shielded_barrier", within(m["shielded"]["barrier_ev"], 0.03, 0.15),
               f"{m['shielded']['barrier_ev']:.4f} eV"),
              ("reduction_factor", within(m["shield_reduction_factor"], 3.0, 5.0), f"{m['shield_reduction_factor']:.2f}"),
              ("compensated_single_well", c["single_well"], f"axial {c['restored_axial_hz'] / 1e3:.0f} kHz"),
              ("v_near", within(c["v_near"], -3.6, -1.2), f"{c['v_near']:+.3f} V (ref -2.4)"),
              ("v_far", within(c["v_far"], 0.4, 1.2), f"{c['v_far']:+.3f} V (ref +0.8)"),
              ("runtime", t1 + t2 < 3600, f"{t1 + t2:.0f} s")]
    assert criterion_log(6, "charge shielding and compensation", checks, t1 + t2)


def test_criterion_07_heating(criterion_log):
    t0 = time.perf_counter()
    cfg = heating.HeatingConfig()
    centre, solvers = {}, {}
    for v in ("no_shield", "shield"):
        solvers[v] = Solver(studies.mesh_for(heating.heating_scene(v)))
        centre[v] = heating.heating_at(solvers[v], (0.0, 0.0, 0.0), cfg)
    ratio = centre["shield"].total / centre["no_shield"].total
    # exact laws, reusing the factorised unshielded system
    base = solvers["no_shield"]
    lossless = heating.heating_at(base, (0.0, 0.0, 0.0), cfg, heating.CoatingStack().lossless())
    S1 = centre["no_shield"].S[0]
    S_T = heating.heating_at(base, (0.0, 0.0, 0.0), heating.HeatingConfig(temperature=2 * cfg.temperature)).S[0]
    w = cfg.omega("x")
    law_T = abs(S_T / S1 - 2.0) <= 1e-12
    law_w = abs(heating.heating_rate(S1, 2 * w) / heating.heating_rate(S1, w) - 0.5) <= 1e-12
    ls = studies.length_scaling()
    lm = ls.metrics
    t = time.perf_counter() - t0

    def a(fam, mode):
        return lm.get(f"alpha_{fam}_{mode}")

    exps_ok = all(a("shield", k) is not None and a("no_shield", k) is not None
                  and a("shield", k) >= a("no_shield", k) + 3.0 for k in "xyz")
    nd = centre["no_shield"].ndot
    checks = [("shield_exponent_gain", exps_ok,
               ", ".join(f"{k}: {a('no_shield', k):.2f}->{a('shield', k):.2f}" for k in "xyz")),
              ("unshielded_alpha_x", within(a("no_shield", "x"), 4.2, 7.2), f"{a('no_shield', 'x'):.2f}"),
              ("unshielded_alpha_z", within(a("no_shield", "z"), 5.3, 8.3), f"{a('no_shield', 'z'):.2f}"),
              ("centre_ratio", within(ratio, 0.1, 0.4), f"{ratio:.3f}"),
              ("unshielded_absolute", all(within(v, 1e2, 1e3) for v in nd),
               "ndot " + ", ".join(f"{v:.3g}" for v in nd) + " /s"),
              ("lossless_zero", lossless.ndot == (0.0, 0.0, 0.0), "exact"),
              ("S_prop_T", law_T, f"{S_T / S1:.15f}"),
              ("ndot_inv_omega", law_w, "exact"),
              ("runtime", t < 3600, f"{t:.0f} s")]
    assert criterion_log(7, "dielectric heating", checks, t)


def test_criterion_08_misalignment(criterion_log):
    t0 = time.perf_counter()
    res = {ax: studies.misalignment_sweep(ax, (5.0,)).metrics for ax in "yxz"}
    t = time.perf_counter() - t0
    y = res["y"]
    bump, shift = y["max_bump_uev"][0], y["shift_nm"][0][1]
    checks = [("y_bumps_detected", y["n_bumps"][0] > 0, f"{y['n_bumps'][0]} bumps"),
              ("y_bump_height", within(bump, 2.6 * 0.4, 2.6 * 1.6), f"{bump:.2f} ueV (ref 2.6)"),
              ("y_vertical_shift", within(shift, 550 * 0.4, 550 * 1.6), f"{shift:.0f} nm (ref 550)"),
              ("x_no_bumps", res["x"]["n_bumps"][0] == 0, f"{res['x']['n_bumps'][0]} bumps"),
              ("z_no_bumps", res["z"]["n_bumps"][0] == 0, f"{res['z']['n_bumps'][0]} bumps"),
              ("runtime", t < 3600, f"{t:.0f} s")]
    assert criterion_log(8, "fibre misalignment", checks, t)


def test_criterion_09_surface_trap(criterion_log):
    res, t = timed(studies.surface_trap_study)
    m = res.metrics
    w = m["well_depth_ev"]
    ratio = w[0] / w[-1] if w[-1] > 0 else math.inf
    checks = [("depth_decreasing", all(a > b for a, b in zip(w, w[1:])),
               ", ".join(f"{1e3 * v:.3g}" for v in w) + " meV"),
              ("depth_ratio", ratio > 100, f"{ratio:.1f}"),
              ("bare_depth", within(m["bare_depth_ev"], 0.027 * 0.6, 0.027 * 1.4),
               f"{1e3 * m['bare_depth_ev']:.1f} meV (ref 27)"),
              ("runtime", t < 1800, f"{t:.0f} s")]
    assert criterion_log(9, "surface trap with fibres", checks, t)


def test_criterion_10_determinism_and_scaling(criterion_log):
    t0 = time.perf_counter()
    cfg = cli.validate_config({"study": "RadialPotential", "scene": {"kind": "hyperbolic"},
                               "drive": {"scheme": "DualRf", "v0": 15.0}, "mesh": {"level": "coarse"},
                               "params": {"map_half": 20.0}})
    bodies = []
    for _ in range(2):
        r = cli.run_study(cfg)
        bodies.append(cli.csv_text(*r.tables["radial_map"]).encode())
    det = bodies[0] == bodies[1]
    solver = Solver(studies.mesh_for(hyperbolic_surrogate(), "coarse"))
    P = np.random.default_rng(5).uniform(-40, 40, (50, 3))
    d1, d2 = DriveConfig("DualRf", 15.0), DriveConfig("DualRf", 30.0)
    s1, s2 = solver.solve_many([ta.rf_conditions(solver.mesh.scene, d) for d in (d1, d2)])
    p1 = ta.TrapFields(s1, None, CA40, d1.omega_rf).pseudo(P)
    p2 = ta.TrapFields(s2, None, CA40, d2.omega_rf).pseudo(P)
    heavy = IonSpecies("heavy", 3.0 * CA40.mass)
    p3 = ta.TrapFields(s1, None, heavy, d1.omega_rf).pseudo(P)
    v_err = float(np.max(np.abs(p2 / (4 * p1) - 1)))
    m_err = float(np.max(np.abs(3 * p3 / p1 - 1)))
    checks = [("byte_identical_csv", det, f"{len(bodies[0])} bytes"),
              ("pseudo_V0_squared", v_err <= 1e-6, f"{v_err:.1e}"),
              ("pseudo_inverse_mass", m_err <= 1e-6, f"{m_err:.1e}")]
    assert criterion_log(10, "determinism and scaling laws", checks, time.perf_counter() - t0)
