"""End-to-end studies: scene construction, meshing presets, solves and analysis.

Every study returns a :class:`StudyResult` holding scalar metrics, data
tables for CSV output and (in ``extras``) the richer analysis objects for
programmatic use. The CLI maps one config file onto one study.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import cqed, heating, symmetry
from .constants import COULOMB_K, E_CHARGE, EPS0_PER_UM, UM
from .field_solver import BoundaryConditionSet, Solver, superpose
from .geometry import (CA40, BladeTrapParams, DriveConfig, Material, Pose, Scene, Solid, Box, Cylinder, Sphere,
                       SurfaceChargePatch, SurfaceTrapParams, apply_misalignment, build_blade_trap, fibre_pair, fibre_side,
                       build_sphere, build_surface_trap, hyperbolic_surrogate)
from .mesher import AxisBox, Ball, MirrorUnion, RefineRule, mesh_scene
from . import trap_analysis as ta

LEVELS = {"coarse": 1.6, "standard": 1.0, "fine": 0.75}


@dataclass
class StudyResult:
    study: str
    metrics: dict
    tables: dict = field(default_factory=dict)
    extras: dict = field(default_factory=dict)


def _scale(level) -> float:
    if isinstance(level, (int, float)):
        return float(level)
    try:
        return LEVELS[level]
    except KeyError:
        raise ValueError(f"unknown mesh level {level!r}; expected one of {sorted(LEVELS)}") from None


# ---------------------------------------------------------------------------
# meshing presets


def blade_rules(scene: Scene, params: BladeTrapParams | None = None, level="standard") -> list:
    """Refinement for blade traps: trap centre, endcap gaps, facets and shield fronts."""
    p = params or BladeTrapParams()
    s = _scale(level)
    info = scene.meta
    rules = [RefineRule(AxisBox((-200.0, -200.0, -300.0), (200.0, 200.0, 300.0)), 14.0 * s)]
    if any(sol.group == "endcap" for sol in scene.solids):
        zg = p.rf_length / 2 + p.endcap_gap / 2
        rules.append(RefineRule(MirrorUnion(AxisBox((-250.0, -250.0, zg - 60.0), (250.0, 250.0, zg + 60.0)),
                                            ("z",)), 24.0 * s))
    if info.get("with_fibres") or info.get("with_shields"):
        half = info["cavity_length"] / 2
        sf = info.get("shield_front", half)
        x0 = min(half, sf) - 10.0
        x1 = max(half, sf) + 60.0
        r = p.shield_outer_radius + 5.0
        rules.append(RefineRule(MirrorUnion(AxisBox((x0, -r, -r), (x1, r, r)), ("x",)), 12.0 * s))
        if info.get("with_fibres"):
            rules.append(RefineRule(MirrorUnion(Ball((half, 0.0, 0.0), 40.0), ("x",)), 8.0 * s))
    return rules


def surface_rules(scene: Scene, params: BladeTrapParams | None = None, level="standard") -> list:
    p = params or BladeTrapParams()
    s = _scale(level)
    info = scene.meta
    rules = [RefineRule(AxisBox((-350.0, -10.0, -400.0), (350.0, 10.0, 400.0)), 20.0 * s)]
    if info.get("with_shields"):
        h = info["ion_height"]
        half = info["cavity_length"] / 2
        r = p.shield_outer_radius + 5.0
        rules.append(RefineRule(MirrorUnion(AxisBox((half - 10.0, h - r, -r), (half + 60.0, h + r, r)), ("x",)),
                                14.0 * s))
        rules.append(RefineRule(AxisBox((-half, h - 30.0, -100.0), (half, h + 30.0, 100.0)), 20.0 * s))
    return rules


def mesh_for(scene: Scene, level="standard", params: BladeTrapParams | None = None):
    """Mesh ``scene`` with the preset of its kind."""
    kind = scene.meta.get("kind")
    s = _scale(level)
    if kind == "blade":
        return mesh_scene(scene, 150.0 * s, blade_rules(scene, params, level), grade=0.3)
    if kind == "surface":
        return mesh_scene(scene, 150.0 * s, surface_rules(scene, params, level), grade=0.3)
    if kind == "four_rod":
        rules = [RefineRule(AxisBox((-700.0, -700.0, -300.0), (700.0, 700.0, 300.0)), 40.0 * s)]
        return mesh_scene(scene, 120.0 * s, rules, grade=0.3)
    return mesh_scene(scene, 20.0 * s)


def blade_scene(case: str | None = None, **kw) -> Scene:
    """Blade trap for a named case (``bare``, ``I``, ``II``, ``III``) or keyword options."""
    if case in (None, ""):
        return build_blade_trap(**kw)
    presets = {"bare": dict(with_fibres=False, with_shields=False),
               "I": dict(with_fibres=True, with_shields=False),
               "II": dict(with_fibres=True, with_shields=True),
               "III": dict(with_fibres=True, with_shields=True)}
    if case not in presets:
        raise ValueError(f"unknown blade case {case!r}")
    return build_blade_trap(**{**presets[case], **kw})


CASE_DRIVES = {"bare": "DualRf", "I": "SingleRf", "II": "SingleRf", "III": "DualRf"}


def _solve_rf_dc(scene, drive, level, params=None, patches=()):
    mesh = mesh_for(scene, level, params)
    solver = Solver(mesh)
    rf, dc = solver.solve_many([ta.rf_conditions(scene, drive), ta.dc_conditions(scene, drive, patches)])
    return mesh, solver, rf, dc


# ---------------------------------------------------------------------------
# radial potential and axis scans


def radial_potential(scene: Scene, drive: DriveConfig, species=CA40, level="standard", window=10.0,
                     spacing=1.0, map_half=60.0, map_spacing=4.0, z0=0.0, params=None) -> StudyResult:
    """Radial pseudopotential cross-section and secular fit at the trap centre."""
    mesh, solver, rf, dc = _solve_rf_dc(scene, drive, level, params)
    fields = ta.TrapFields(rf, None, species, drive.omega_rf)
    fit = ta.secular_fit_fields(fields, (0.0, 0.0, z0), window, spacing, "xy")
    grid = ta.grid_axes((0.0, 0.0, z0), (map_half, map_half, 0.0), map_spacing)
    pmap = ta.pseudopotential(fields, species, drive, grid)
    X, Y = np.meshgrid(pmap.x, pmap.y, indexing="ij")
    rows = np.column_stack([X.ravel(), Y.ravel(), pmap.phi_pseudo[:, :, 0].ravel()])
    f = np.sort(np.abs(fit.frequencies_hz))
    metrics = {"panels": len(mesh.area), "f_low_hz": float(f[0]), "f_high_hz": float(f[-1]),
               "f1_hz": float(fit.frequencies_hz[0]), "f2_hz": float(fit.frequencies_hz[1]),
               "tilt_deg": float(fit.tilt_deg), "fit_residual_ev": fit.fit_residual,
               "solve_residual": rf.solve_residual}
    return StudyResult("RadialPotential", metrics, {"radial_map": (("x_um", "y_um", "phi_pseudo_eV"), rows)},
                       {"fit": fit, "rf": rf, "dc": dc, "fields": fields})


def axis_study(scene: Scene, drive: DriveConfig, species=CA40, level="standard", z_range=(-600.0, 600.0),
               dz=5.0, rel_floor=1e-3, params=None, solutions=None) -> StudyResult:
    """rf field components, pseudopotential and nulls along the trap axis."""
    if solutions is None:
        mesh, solver, rf, dc = _solve_rf_dc(scene, drive, level, params)
    else:
        rf, dc = solutions
        mesh = rf.mesh
    fields = ta.TrapFields(rf, dc, species, drive.omega_rf)
    rf_only = ta.TrapFields(rf, None, species, drive.omega_rf)
    scan = ta.axis_scan(rf_only, z_range, dz, rel_floor)
    P = np.column_stack([np.zeros_like(scan.z), np.zeros_like(scan.z), scan.z])
    tot = fields.total(P)
    rows = np.column_stack([scan.z, scan.E0, scan.E0_norm, scan.phi_pseudo, tot])
    metrics = {"panels": len(mesh.area), "null_points": list(scan.null_points),
               "null_regions": [list(r) for r in scan.null_regions], "n_null_points": len(scan.null_points),
               "central_barrier_ev": scan.central_barrier(),
               "max_pseudo_ev": float(scan.phi_pseudo.max()), "max_abs_E0z": float(np.abs(scan.E0[:, 2]).max()),
               "noise_floor_V_per_m": scan.floor, "solve_residual": rf.solve_residual}
    header = ("z_um", "E0x_V_per_m", "E0y_V_per_m", "E0z_V_per_m", "E0_norm_V_per_m", "phi_pseudo_eV", "phi_total_eV")
    return StudyResult("AxisScan", metrics, {"axis_scan": (header, rows)},
                       {"scan": scan, "rf": rf, "dc": dc, "fields": fields})


def drive_dichotomy(level="standard", v0=30.0, species=CA40, params=None, z_range=None, dz=5.0) -> dict:
    """Cases II and III on one shielded mesh (single versus dual rf).

    The default scan covers the rf segment, ``|z| <= rf_length / 2``.
    """
    if z_range is None:
        half = (params or BladeTrapParams()).rf_length / 2
        z_range = (-half, half)
    scene = blade_scene("II", params=params)
    mesh = mesh_for(scene, level, params)
    solver = Solver(mesh)
    out = {}
    for case, scheme in (("II", "SingleRf"), ("III", "DualRf")):
        drive = DriveConfig(scheme, v0)
        rf, dc = solver.solve_many([ta.rf_conditions(scene, drive), ta.dc_conditions(scene, drive)])
        out[case] = axis_study(scene, drive, species, z_range=z_range, dz=dz, solutions=(rf, dc))
        fields = ta.TrapFields(rf, None, species, drive.omega_rf)
        out[case].extras["fit"] = ta.secular_fit_fields(fields, (0.0, 0.0, 0.0), 10.0, 1.0, "xy")
    return out


# ---------------------------------------------------------------------------
# stray charge and compensation


def _charge_pieces(scene, drive, density, host, level, params, species, z, region="FrontFacet"):
    """rf, endcap, charge and shield-unit solutions with on-axis profiles."""
    mesh = mesh_for(scene, level, params)
    solver = Solver(mesh)
    groups = [g for g in scene.conductor_groups() if g != "Ground"]
    zero = {g: 0.0 for g in groups}
    bcs = {"rf": ta.rf_conditions(scene, drive),
           "endcap": BoundaryConditionSet({**zero, "endcap": 1.0}),
           "charge": BoundaryConditionSet(zero, (SurfaceChargePatch(host, region, density),))}
    for g in groups:
        if g.startswith("shield"):
            bcs[g] = BoundaryConditionSet({**zero, g: 1.0})
    names = list(bcs)
    sols = dict(zip(names, solver.solve_many([bcs[n] for n in names])))
    dc = {n: s for n, s in sols.items() if n != "rf"}
    prof = ta.axial_profiles(sols["rf"], dc, species, drive, z)
    return mesh, sols, prof


def _fields_for(sols, weights, species, drive):
    names = list(weights)
    dc = superpose([sols[n] for n in names], [weights[n] for n in names])
    return ta.TrapFields(sols["rf"], dc, species, drive.omega_rf)


def charge_study(density=10.0, endcap_voltage=150.0, cavity_length=300.0, drive: DriveConfig | None = None,
                 species=CA40, level="standard", params=None, z_range=(-600.0, 600.0), dz=2.0,
                 probe_distance=150.0, host="fibre_R", region="All") -> StudyResult:
    """Axial double well from a charged facet, with and without grounded shields.

    The shield reduction factor is taken on an isolated fibre (see
    :func:`shield_reduction`); the ratio inside the full trap, where the
    blades already screen the facet, is reported as ``in_trap_probe_ratio``.
    """
    drive = drive or DriveConfig("DualRf", 30.0)
    z = np.arange(z_range[0], z_range[1] + 0.5 * dz, dz)
    metrics, cols, extras = {}, [z], {}
    probe = np.array([[cavity_length / 2 - probe_distance, 0.0, 0.0]])
    e_probe = {}
    for tag, shields in (("unshielded", False), ("shielded", True)):
        scene = build_blade_trap(params, cavity_length, with_shields=shields)
        mesh, sols, prof = _charge_pieces(scene, drive, density, host, level, params, species, z, region)
        w = {"endcap": endcap_voltage, "charge": 1.0}
        fields = _fields_for(sols, w, species, drive)
        rep = ta.charge_report(prof, w, fields)
        base = ta.charge_report(prof, {"endcap": endcap_voltage})
        e_probe[tag] = float(np.linalg.norm(sols["charge"].field(probe)[0]))
        cols.append(rep.energy)
        metrics[tag] = {"panels": len(mesh.area), "barrier_ev": rep.barrier_ev, "wells_um": list(rep.wells_um),
                        "min_shift_um": list(rep.min_shift_um), "single_well": rep.single_well,
                        "uncharged_axial_hz": base.axial_omega / (2 * math.pi),
                        "probe_field_V_per_m": e_probe[tag]}
        extras[tag] = {"report": rep, "profiles": prof, "solutions": sols, "scene": scene}
    metrics["in_trap_probe_ratio"] = e_probe["unshielded"] / e_probe["shielded"]
    iso = shield_reduction(probe_distance, (0.0,), density, cavity_length, params)
    metrics["shield_reduction_factor"] = iso["factor_protrusion_0"]
    header = ("z_um", "phi_total_unshielded_eV", "phi_total_shielded_eV")
    return StudyResult("ChargeStudy", metrics, {"charge_profile": (header, np.column_stack(cols))}, extras)


def shield_reduction(distance=150.0, protrusions=(0.0, 10.0, 20.0), density=10.0, cavity_length=300.0,
                     params=None, edge=12.0) -> dict:
    """Field of a charged facet on the fibre axis, bare fibre versus shielded fibre.

    An isolated fibre (no trap electrodes) carries ``density`` on its front
    facet; returns |E| at ``distance`` from the facet without a shield and
    the reduction factor for each shield protrusion.
    """
    p = params or BladeTrapParams()
    half = cavity_length / 2
    probe = np.array([[half - distance, 0.0, 0.0]])
    out = {}

    def field_for(shields, front):
        solids = [s for s in fibre_pair(p, cavity_length, True, shields, front) if s.name.endswith("_R")]
        scene = Scene(tuple(solids), ("y", "z"), {"kind": "fibre"})
        r = p.shield_outer_radius + 5.0
        rules = [RefineRule(AxisBox((min(half, front) - 10.0, -r, -r), (half + 80.0, r, r)), edge)]
        mesh = mesh_scene(scene, 60.0, rules, grade=0.3)
        sol = Solver(mesh).solve(BoundaryConditionSet({}, (SurfaceChargePatch("fibre_R", "FrontFacet", density),),
                                                      (), True))
        return float(np.linalg.norm(sol.field(probe)[0]))

    e0 = field_for(False, half)
    out["bare_field_V_per_m"] = e0
    for pr in protrusions:
        out[f"factor_protrusion_{pr:g}"] = e0 / field_for(True, half - pr)
    return out


def compensation_study(density=10.0, endcap_voltage=150.0, cavity_length=300.0, drive: DriveConfig | None = None,
                       species=CA40, level="standard", params=None, z_range=(-600.0, 600.0), dz=2.0,
                       curvature_weight=0.1, shift_weight=1.0, host="fibre_R", scales=(1.0,),
                       region="All") -> StudyResult:
    """Shield voltages restoring a single centred well for a charged facet.

    ``scales`` multiplies the charge density (superposition), so several
    densities share one set of solves.
    """
    drive = drive or DriveConfig("DualRf", 30.0)
    z = np.arange(z_range[0], z_range[1] + 0.5 * dz, dz)
    scene = build_blade_trap(params, cavity_length, with_shields=True)
    mesh, sols, prof = _charge_pieces(scene, drive, density, host, level, params, species, z, region)
    side = scene.solids[scene.index(host)]
    near = "shield_R" if side.pose.origin[0] > 0 else "shield_L"
    far = "shield_L" if near == "shield_R" else "shield_R"
    results = []
    rows = []
    for s in scales:
        c = ta.compensate(prof, {"endcap": endcap_voltage, "charge": float(s)}, near, far,
                          curvature_weight, shift_weight)
        results.append(c)
        rows.append([s * density, c.v_near, c.v_far, c.restored_hz, c.baseline_hz, float(c.single_well),
                     c.report.barrier_ev, c.objective])
    c0 = results[0]
    metrics = {"panels": len(mesh.area), "v_near": c0.v_near, "v_far": c0.v_far,
               "restored_axial_hz": c0.restored_hz, "baseline_axial_hz": c0.baseline_hz,
               "single_well": c0.single_well, "objective": c0.objective,
               "sweep": [{"density": r[0], "v_near": r[1], "v_far": r[2]} for r in rows]}
    header = ("density_e_per_um2", "v_near_V", "v_far_V", "restored_axial_hz", "baseline_axial_hz",
              "single_well", "barrier_eV", "objective")
    return StudyResult("Compensate", metrics, {"compensation": (header, np.array(rows))},
                       {"results": results, "profiles": prof, "solutions": sols})


# ---------------------------------------------------------------------------
# misalignment


def misalignment_sweep(axis: str = "y", offsets=(5.0,), drive: DriveConfig | None = None, species=CA40,
                       level=1.25, params=None, cavity_length=300.0, z_range=(-400.0, 400.0), dz=4.0,
                       rel_floor=1e-4, side="R") -> StudyResult:
    """Pseudopotential minimum line with one fibre and its shield displaced.

    Every offset reuses the mesh of the aligned scene with the moved panels
    translated, so differences between offsets come from the geometry only.
    """
    drive = drive or DriveConfig("DualRf", 30.0)
    base = build_blade_trap(params, cavity_length)
    mesh0 = mesh_for(base, level, params)
    z = np.arange(z_range[0], z_range[1] + 0.5 * dz, dz)
    reports, rows, metrics = [], [], {"offsets": [], "max_bump_uev": [], "shift_nm": [], "n_bumps": []}
    k = "xyz".index(axis)
    for off in offsets:
        vec = [0.0, 0.0, 0.0]
        vec[k] = float(off)
        scene = apply_misalignment(base, side, tuple(vec))
        mesh = mesh0.translated_bodies(fibre_side(base, side), tuple(vec), scene) if off else mesh0
        sol = Solver(mesh).solve(ta.rf_conditions(scene, drive))
        fields = ta.TrapFields(sol, None, species, drive.omega_rf)
        rep = ta.misalignment_report(fields, vec, z, rel_floor)
        reports.append(rep)
        for zi, (x, y), e in zip(z, rep.min_line.xy, rep.min_line.pseudo):
            rows.append([off, zi, x, y, e])
        metrics["offsets"].append(float(off))
        metrics["max_bump_uev"].append(rep.max_bump_uev)
        metrics["shift_nm"].append(list(rep.shift_nm))
        metrics["n_bumps"].append(len(rep.bumps))
    metrics["axis"] = axis
    metrics["panels"] = len(mesh0.area)
    header = ("offset_um", "z_um", "x_min_um", "y_min_um", "phi_pseudo_eV")
    return StudyResult("Misalignment", metrics, {"min_line": (header, np.array(rows))}, {"reports": reports})


# ---------------------------------------------------------------------------
# heating


def heating_scan(z_positions=(0.0, 50.0, 100.0, 150.0, 200.0, 250.0, 300.0), variants=heating.HEATING_VARIANTS,
                 cavity_length=300.0, cfg: heating.HeatingConfig = heating.HeatingConfig(),
                 stack: heating.CoatingStack = heating.CoatingStack(), level="standard", params=None) -> StudyResult:
    rows, out = [], {}
    for v in variants:
        scene = heating.heating_scene(v, cavity_length, params=params)
        solver = Solver(mesh_for(scene, level, params))
        res = heating.position_scan(solver, z_positions, cfg, stack)
        out[v] = res
        for r in res:
            rows.append([heating.HEATING_VARIANTS.index(v), r.position[2], *r.ndot, r.total])
    c = {v: out[v][int(np.argmin(np.abs(np.asarray(z_positions))))] for v in out}
    metrics = {f"center_{v}": list(c[v].ndot) for v in out}
    if "shield" in out and "no_shield" in out:
        metrics["center_ratio_shield"] = c["shield"].total / c["no_shield"].total
    header = ("variant", "z_um", "ndot_x", "ndot_y", "ndot_z", "ndot_total")
    return StudyResult("Heating", metrics, {"heating_scan": (header, np.array(rows))}, {"results": out})


def length_scaling(distances=(150.0, 175.0, 200.0, 225.0, 250.0), families=heating.LENGTH_FAMILIES,
                   cfg: heating.HeatingConfig = heating.HeatingConfig(),
                   stack: heating.CoatingStack = heating.CoatingStack(), level="standard", params=None,
                   shield_front=150.0) -> StudyResult:
    """Heating at the cavity centre against ion-facet distance d, with power-law fits."""
    rows, fits, metrics, data = [], {}, {}, {}
    for fam in families:
        rates = []
        for d in distances:
            scene = heating.length_scene(fam, d, shield_front, params)
            solver = Solver(mesh_for(scene, level, params))
            r = heating.heating_at(solver, (0.0, 0.0, 0.0), cfg, stack)
            rates.append(r.ndot)
            rows.append([heating.LENGTH_FAMILIES.index(fam), d, *r.ndot])
        rates = np.array(rates)
        data[fam] = rates
        for k, mode in enumerate(heating.MODES):
            key = f"{fam}_{mode}"
            try:
                f = heating.fit_power_law(distances, rates[:, k])
                fits[key] = f
                metrics[f"alpha_{key}"] = f.alpha
                metrics[f"r2_{key}"] = f.r_squared
            except heating.FitError as exc:
                metrics[f"alpha_{key}"] = None
                metrics[f"fit_error_{key}"] = str(exc)
    header = ("family", "d_um", "ndot_x", "ndot_y", "ndot_z")
    return StudyResult("LengthScaling", metrics, {"length_scaling": (header, np.array(rows))},
                       {"fits": fits, "rates": data})


# ---------------------------------------------------------------------------
# surface trap


def _surface_drive(rf_amplitude: float, omega_rf: float) -> DriveConfig:
    return DriveConfig("SingleRf", rf_amplitude / 2, omega_rf)


def surface_trap_study(cavity_lengths=(300.0, 400.0, 500.0), rf_amplitude=25.0, omega_rf=2 * math.pi * 20e6,
                       species=CA40, params: SurfaceTrapParams | None = None, level="standard",
                       z_range=(-300.0, 300.0), dz=4.0) -> StudyResult:
    """Bare trap depth and the FFPC-induced well along the minimum line."""
    drive = _surface_drive(rf_amplitude, omega_rf)
    bare = build_surface_trap(params, with_shields=False)
    sol = Solver(mesh_for(bare, level)).solve(ta.rf_conditions(bare, drive))
    fields = ta.TrapFields(sol, None, species, omega_rf)
    depth = ta.surface_trap_depth(fields)
    h = depth.null_height
    z = np.arange(z_range[0], z_range[1] + 0.5 * dz, dz)
    rows, wells, lines = [], [], {}
    for L in cavity_lengths:
        scene = build_surface_trap(params, ion_height=h, cavity_length=L)
        s = Solver(mesh_for(scene, level)).solve(ta.rf_conditions(scene, drive))
        f = ta.TrapFields(s, None, species, omega_rf)
        line = ta.trace_min_line(f, z, seed=(0.0, h))
        w = ta.well_depth_along_line(line)
        wells.append(w.depth_ev)
        lines[L] = w
        for zi, (x, y), e in zip(z, line.xy, line.pseudo):
            rows.append([L, zi, x, y, e])
    metrics = {"bare_depth_ev": depth.depth_ev, "null_height_um": h, "saddle_height_um": depth.saddle_height,
               "cavity_lengths": list(cavity_lengths), "well_depth_ev": wells}
    header = ("cavity_length_um", "z_um", "x_min_um", "y_min_um", "phi_pseudo_eV")
    return StudyResult("SurfaceTrap", metrics, {"surface_min_line": (header, np.array(rows))},
                       {"bare": depth, "wells": lines})


# ---------------------------------------------------------------------------
# cavity design


def cqed_grid(R_c=25000.0, finesse_range=(1e4, 1e6), xi_range=(1e-3, 1 - 1e-3), n_finesse=41, n_xi=41) -> StudyResult:
    g = cqed.design_grid(R_c, finesse_range, xi_range, resolution=(n_finesse, n_xi))
    F, X = np.meshgrid(g.finesse, g.xi, indexing="ij")
    rows = np.column_stack([F.ravel(), X.ravel(), g.c_over_eta.ravel()])
    metrics = {"R_c_um": R_c, "max_c_over_eta": float(np.max(g.c_over_eta))}
    return StudyResult("CqedGrid", metrics, {"cqed_grid": (("finesse", "xi", "C_over_eta"), rows)}, {"grid": g})


# ---------------------------------------------------------------------------
# symmetry checks


def symmetry_check(level="coarse", params=None, seed=0, n_random=4) -> StudyResult:
    """Nullspaces, potential conditions on BEM solutions and random plane-wise charges."""
    ns = symmetry.charge_nullspace(symmetry.four_rod_angles())
    four_rod_ok = ns.shape[1] == 1 and symmetry.in_span(ns, [1, -1, 1, -1])
    surf = []
    for h, r in ((50.0, 100.0), (100.0, 150.0), (120.0, 500.0)):
        surf.append(symmetry.charge_nullspace(symmetry.surface_pair_angles(h, r)).shape[1])
    scene = blade_scene("II", params=params)
    solver = Solver(mesh_for(scene, level, params))
    rng = np.random.default_rng(seed)
    r = rng.uniform(5.0, 60.0, 64)
    th = rng.uniform(0.0, 2 * np.pi, 64)
    zz = rng.uniform(-300.0, 300.0, 64)
    viol = {}
    for scheme in ("DualRf", "SingleRf"):
        drive = DriveConfig(scheme, 30.0)
        sol = solver.solve(ta.rf_conditions(scene, drive))
        viol[scheme] = symmetry.potential_condition_check(lambda P: sol.potential(P, check=False), r, th, zz)
    rand = []
    for _ in range(n_random):
        rand.append(random_planewise_axis_field(rng))
    metrics = {"four_rod_nullspace_ok": bool(four_rod_ok), "surface_nullspace_dims": surf,
               "dual_rf_violation": viol["DualRf"].relative_violation,
               "single_rf_violation": viol["SingleRf"].relative_violation,
               "random_planewise_max_field_ratio": float(max(rand))}
    return StudyResult("SymmetryCheck", metrics, {}, {"violations": viol})


def random_planewise_axis_field(rng, n_r=6, n_theta=16, n_z=41, z0=None) -> float:
    """Axis field of a random density obeying the plane-wise conditions.

    The density is built as f(r, z) * g(theta) with g odd under theta -> -theta
    and theta -> pi - theta, so each plane meets the rf-null conditions. Returns
    the on-axis field relative to the field of the same charges taken with
    absolute values.
    """
    coeff = rng.normal(size=3)
    zc = rng.uniform(-100.0, 100.0, 3)

    def rho(R, T, Z):
        g = coeff[0] * np.sin(2 * T) + coeff[1] * np.sin(6 * T) + coeff[2] * np.sin(10 * T)
        f = np.exp(-((Z - zc[0]) / 80.0) ** 2) * (1 + 0.3 * np.cos(Z / 37.0 + zc[1])) * (R / 100.0) ** 2
        return 1e-20 * f * g

    pos, q = symmetry.cylindrical_samples(rho, np.linspace(50.0, 150.0, n_r), n_theta, np.linspace(-300, 300, n_z))
    z0 = rng.uniform(-200.0, 200.0) if z0 is None else z0
    E = symmetry.axis_field_from_charges(pos, q, z0)
    Eabs = symmetry.axis_field_from_charges(pos, np.abs(q), z0)
    return float(np.linalg.norm(E) / max(np.linalg.norm(Eabs), 1e-300))


# ---------------------------------------------------------------------------
# solver oracles


def sphere_oracle(radius=100.0, edge=10.0) -> dict:
    scene = build_sphere(radius, role="RfA")
    mesh = mesh_scene(scene, edge)
    sol = Solver(mesh).solve(BoundaryConditionSet({"RfA": 1.0}))
    c = sol.group_charge("RfA")
    c0 = 4 * math.pi * EPS0_PER_UM * radius
    return {"panels": len(mesh.area), "capacitance_F": c, "exact_F": c0, "rel_error": c / c0 - 1.0}


def _three_conductor_scene(with_dielectric: bool = False) -> Scene:
    """Sphere, box and cylinder with no common symmetry."""
    solids = [Solid("ball", Sphere(60.0), Pose((0.0, 0.0, 0.0)), Material.conductor(), "RfA"),
              Solid("block", Box((80.0, 100.0, 60.0)), Pose((170.0, 30.0, -20.0)), Material.conductor(), "RfB"),
              Solid("rod", Cylinder(30.0, 120.0), Pose((-150.0, -40.0, -50.0)), Material.conductor(), "Dc",
                    "endcap")]
    if with_dielectric:
        solids.append(Solid("slab", Box((200.0, 200.0, 40.0)), Pose((0.0, 0.0, -140.0)),
                            Material.dielectric(3.75, 0.0), "DielectricBody"))
    return Scene(tuple(solids))


def capacitance_symmetry_oracle(edge=12.0) -> dict:
    """Reciprocity of the capacitance matrix, max |C_ij - C_ji| / |C_ij|."""
    mesh = mesh_scene(_three_conductor_scene(), edge)
    groups, C = Solver(mesh).capacitance_matrix()
    worst = 0.0
    for i in range(len(groups)):
        for j in range(i + 1, len(groups)):
            worst = max(worst, abs(C[i, j] - C[j, i]) / max(abs(C[i, j]), abs(C[j, i])))
    return {"panels": len(mesh.area), "groups": groups, "matrix_F": C, "max_rel_asymmetry": worst}


def gradient_consistency_oracle(edge=12.0, h=0.05, seed=1) -> dict:
    """Evaluated field against the central-difference gradient of the potential."""
    scene = _three_conductor_scene(with_dielectric=True)
    mesh = mesh_scene(scene, edge)
    sol = Solver(mesh).solve(BoundaryConditionSet({"RfA": 1.0, "RfB": -0.5, "endcap": 0.3}))
    rng = np.random.default_rng(seed)
    pts = []
    while len(pts) < 24:
        p = rng.uniform((-250.0, -150.0, -200.0), (280.0, 200.0, 150.0))
        if min(float(sd.sdf(p[None])[0]) for sd in scene.solids) > 15.0:
            pts.append(p)
    P = np.array(pts)
    E = sol.field(P)
    grad = np.zeros_like(P)
    for k in range(3):
        d = np.zeros(3)
        d[k] = h
        grad[:, k] = (sol.potential(P + d) - sol.potential(P - d)) / (2 * h)
    E_fd = -grad / UM
    err = np.linalg.norm(E - E_fd, axis=1) / np.linalg.norm(E_fd, axis=1)
    return {"panels": len(mesh.area), "max_rel_error": float(err.max()), "points": len(P)}


def image_charge_oracle(eps=3.75, height=20.0, base=80.0, fine=4.0) -> dict:
    """Point charge above a dielectric slab compared with the half-space image solution."""
    blk = Solid("block", Box((400.0, 400.0, 200.0)), Pose((0.0, 0.0, -200.0)), Material.dielectric(eps, 0.0),
                "DielectricBody")
    scene = Scene((blk,), ("x", "y"))
    mesh = mesh_scene(scene, base, [RefineRule(Ball((0.0, 0.0, 0.0), 5.0), fine)], grade=0.25)
    q = E_CHARGE
    src = np.array([0.0, 0.0, height])
    sol = Solver(mesh).solve(BoundaryConditionSet({}, (), [(tuple(src), q)]))
    pts = np.array([[0.0, 0.0, -10.0], [15.0, 0.0, -20.0], [0.0, 0.0, 10.0], [10.0, 5.0, 30.0]])
    errs = []
    for p in pts:
        E = sol.field([p])[0]
        Ex = image_charge_field(p, src, q, eps)
        errs.append(float(np.linalg.norm(E - Ex) / np.linalg.norm(Ex)))
    return {"panels": len(mesh.area), "max_rel_error": max(errs), "rel_errors": errs}


def image_charge_field(p, src, q, eps) -> np.ndarray:
    """Field (V/m) of a charge above the plane z = 0 bounding a dielectric half-space."""
    p = np.asarray(p, dtype=float)
    src = np.asarray(src, dtype=float)
    img = src * np.array([1.0, 1.0, -1.0])
    if p[2] < 0:
        d = (p - src) * UM
        return COULOMB_K * (2 * q / (1 + eps)) * d / np.linalg.norm(d) ** 3
    qi = -q * (eps - 1) / (eps + 1)
    d1 = (p - src) * UM
    d2 = (p - img) * UM
    return COULOMB_K * (q * d1 / np.linalg.norm(d1) ** 3 + qi * d2 / np.linalg.norm(d2) ** 3)


def mathieu_frequency(v0_pair: float, r0: float, omega_rf: float, species=CA40) -> float:
    """Low-q secular angular frequency of an ideal quadrupole.

    ``v0_pair`` is the pair-to-pair rf amplitude; q = 2 e V0 / (m r0^2 Omega^2).
    """
    q = 2 * species.charge * v0_pair / (species.mass * (r0 * UM) ** 2 * omega_rf**2)
    return q * omega_rf / (2 * math.sqrt(2))


def mathieu_oracle(r0=250.0, v0=15.0, omega_rf=2 * math.pi * 20e6, species=CA40, level="standard") -> dict:
    """BEM four-rod surrogate against the Mathieu low-q formula."""
    scene = hyperbolic_surrogate(r0)
    drive = DriveConfig("DualRf", v0, omega_rf)
    mesh = mesh_for(scene, level)
    sol = Solver(mesh).solve(ta.rf_conditions(scene, drive))
    fields = ta.TrapFields(sol, None, species, omega_rf)
    fit = ta.secular_fit_fields(fields, (0.0, 0.0, 0.0), 10.0, 1.0, "xy")
    w = float(np.mean(np.abs(fit.frequencies)))
    w0 = mathieu_frequency(drive.pair_amplitude, r0, omega_rf, species)
    return {"panels": len(mesh.area), "omega_bem": w, "omega_mathieu": w0, "rel_error": w / w0 - 1.0,
            "degeneracy": float(abs(fit.frequencies[0] - fit.frequencies[1]) / w)}


def validate(quick: bool = False) -> StudyResult:
    """Oracle suite: solver checks, Mathieu secular frequency and nullspaces."""
    rows = []
    sph = sphere_oracle(edge=20.0 if quick else 10.0)
    rows.append(("sphere_capacitance", sph["rel_error"], 0.02))
    img = image_charge_oracle()
    rows.append(("image_charge", img["max_rel_error"], 0.05))
    rows.append(("capacitance_symmetry", capacitance_symmetry_oracle()["max_rel_asymmetry"], 0.01))
    rows.append(("gradient_consistency", gradient_consistency_oracle()["max_rel_error"], 0.005))
    mat = mathieu_oracle(level="coarse" if quick else "standard")
    rows.append(("mathieu", mat["rel_error"], 0.05))
    ns = symmetry.charge_nullspace(symmetry.four_rod_angles())
    rows.append(("four_rod_nullspace", 0.0 if symmetry.in_span(ns, [1, -1, 1, -1]) and ns.shape[1] == 1 else 1.0,
                 1e-12))
    dims = [symmetry.charge_nullspace(symmetry.surface_pair_angles(h, r)).shape[1]
            for h, r in ((50.0, 100.0), (100.0, 150.0), (120.0, 500.0))]
    rows.append(("surface_nullspace", float(max(dims)), 1e-12))
    table = np.array([[i, abs(v), tol, float(abs(v) <= tol)] for i, (_, v, tol) in enumerate(rows)])
    metrics = {name: {"value": float(v), "tolerance": tol, "pass": bool(abs(v) <= tol)} for name, v, tol in rows}
    metrics["all_pass"] = all(m["pass"] for m in metrics.values())
    return StudyResult("Validate", metrics, {"validation": (("check", "abs_value", "tolerance", "pass"), table)},
                       {"names": [r[0] for r in rows]})
