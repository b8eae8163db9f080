"""Batch front-end: one TOML config describes one study.

    trapkit run <config.toml>
    trapkit list-studies [name]
    trapkit compare <baseline dir> <new dir> --tol <tolerances.toml>
    trapkit validate [--quick] [--output dir]

Exit codes: 0 success, 1 failed checks or comparison, 2 config error (the
message names the offending field path), 3 solver or analysis failure.
``TRAPKIT_WORKERS`` sets the number of parallel scenario solves in sweep
studies and the kernel thread count.
"""

from __future__ import annotations

import argparse
import csv
import fnmatch
import hashlib
import io
import json
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import __version__, heating, studies
from .field_solver import SolverError
from .geometry import SPECIES, DriveConfig, GeometryError, Scene, build_four_rod_trap, build_surface_trap, \
    hyperbolic_surrogate
from .trap_analysis import AnalysisError

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_SOLVER = 0, 1, 2, 3


class ConfigError(ValueError):
    """Schema violation; ``path`` is the dotted location of the bad field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


# ---------------------------------------------------------------------------
# schema


@dataclass(frozen=True)
class Field:
    name: str
    kind: str  # float, int, bool, str, level, floats, strs
    default: object = None
    required: bool = False
    doc: str = ""
    choices: tuple = ()


def _f(name, kind, default=None, doc="", choices=(), required=False):
    return Field(name, kind, default, required, doc, tuple(choices))


SCENE_FIELDS = (
    _f("kind", "str", "blade", "scene family", ("blade", "four_rod", "hyperbolic", "surface")),
    _f("file", "str", None, "scene JSON written by Scene.dumps (overrides the builder)"),
    _f("case", "str", None, "blade preset", ("bare", "I", "II", "III")),
    _f("cavity_length", "float", 300.0, "facet-to-facet distance (um)"),
    _f("with_fibres", "bool", None, "blade: include fibres"),
    _f("with_shields", "bool", None, "blade/surface/four_rod: include grounded shields"),
    _f("shield_protrusion", "float", 0.0, "blade: shield front beyond the facet (um)"),
    _f("r0", "float", 250.0, "hyperbolic: electrode distance (um)"),
    _f("rod_radius", "float", 50.0, "four_rod: rod radius (um)"),
    _f("rod_distance", "float", 250.0, "four_rod: rod axis distance (um)"),
    _f("ion_height", "float", None, "surface: fibre axis height, default the rf-null height (um)"),
)

DRIVE_FIELDS = (
    _f("scheme", "str", None, "rf scheme", ("SingleRf", "DualRf"), required=True),
    _f("v0", "float", None, "rf amplitude parameter (V); pair-to-pair amplitude is 2 v0", required=True),
    _f("rf_frequency_hz", "float", 20e6, "rf drive frequency (Hz)"),
    _f("endcap_voltage", "float", 0.0, "dc voltage on the endcap blades (V)"),
)

HEATING_FIELDS = (
    _f("temperature", "float", 295.0, "coating temperature (K)"),
    _f("displacement", "float", 1.0, "ion displacement for the field difference (um)"),
    _f("axial_hz", "float", 1e6, "axial secular frequency (Hz)"),
    _f("radial_hz", "float", 3e6, "radial secular frequency (Hz)"),
)


@dataclass(frozen=True)
class StudyKind:
    name: str
    doc: str
    needs_scene: bool
    needs_drive: bool
    params: tuple
    default_level: object = "standard"


CATALOG = {s.name: s for s in (
    StudyKind("RadialPotential", "radial pseudopotential map and secular fit at the trap centre", True, True, (
        _f("window", "float", 10.0, "half-width of the fit region (um)"),
        _f("spacing", "float", 1.0, "fit sample spacing (um)"),
        _f("map_half", "float", 60.0, "half-width of the exported map (um)"),
        _f("map_spacing", "float", 4.0, "map spacing (um)"),
        _f("z0", "float", 0.0, "axial position of the cross-section (um)"))),
    StudyKind("AxisScan", "rf field, pseudopotential, nulls and barriers along the trap axis", True, True, (
        _f("z_min", "float", -600.0, "scan start (um)"),
        _f("z_max", "float", 600.0, "scan end (um)"),
        _f("dz", "float", 5.0, "scan step (um)"),
        _f("rel_floor", "float", 1e-3, "null threshold relative to the characteristic rf field"))),
    StudyKind("ChargeStudy", "axial double well from a charged fibre with and without shields", False, True, (
        _f("density", "float", 10.0, "deposited charge (e/um^2)"),
        _f("endcap_voltage", "float", 150.0, "endcap voltage (V)"),
        _f("cavity_length", "float", 300.0, "facet-to-facet distance (um)"),
        _f("region", "str", "All", "charged surface of the fibre", ("All", "FrontFacet")),
        _f("probe_distance", "float", 150.0, "distance from the facet for the shield reduction factor (um)"),
        _f("z_min", "float", -600.0, "profile start (um)"),
        _f("z_max", "float", 600.0, "profile end (um)"),
        _f("dz", "float", 2.0, "profile step (um)"))),
    StudyKind("Compensate", "shield voltages that restore a single well for a charged fibre", False, True, (
        _f("density", "float", 10.0, "deposited charge (e/um^2)"),
        _f("endcap_voltage", "float", 150.0, "endcap voltage (V)"),
        _f("cavity_length", "float", 300.0, "facet-to-facet distance (um)"),
        _f("region", "str", "All", "charged surface of the fibre", ("All", "FrontFacet")),
        _f("scales", "floats", [1.0], "charge multipliers evaluated by superposition"),
        _f("curvature_weight", "float", 0.1, "weight of the relative curvature error"),
        _f("shift_weight", "float", 1.0, "weight of the transverse shift (per um^2)"),
        _f("z_min", "float", -600.0, "profile start (um)"),
        _f("z_max", "float", 600.0, "profile end (um)"),
        _f("dz", "float", 2.0, "profile step (um)"))),
    StudyKind("Misalignment", "pseudopotential minimum line with one fibre displaced", False, True, (
        _f("axes", "strs", ["y"], "displacement axes", ("x", "y", "z")),
        _f("offsets", "floats", [5.0], "displacements (um)"),
        _f("cavity_length", "float", 300.0, "facet-to-facet distance (um)"),
        _f("z_min", "float", -400.0, "line start (um)"),
        _f("z_max", "float", 400.0, "line end (um)"),
        _f("dz", "float", 4.0, "line step (um)"),
        _f("rel_floor", "float", 1e-4, "bump threshold relative to the rf energy scale")), 1.25),
    StudyKind("Heating", "dielectric-loss heating rates along the trap axis", False, False, (
        _f("variants", "strs", list(heating.HEATING_VARIANTS), "fibre variants", heating.HEATING_VARIANTS),
        _f("z_positions", "floats", [0.0, 50.0, 100.0, 150.0, 200.0, 250.0, 300.0], "ion positions (um)"),
        _f("cavity_length", "float", 300.0, "facet-to-facet distance (um)"),
        *HEATING_FIELDS)),
    StudyKind("LengthScaling", "heating at the centre against facet distance with power-law fits", False, False, (
        _f("families", "strs", list(heating.LENGTH_FAMILIES), "scene families", heating.LENGTH_FAMILIES),
        _f("distances", "floats", [150.0, 175.0, 200.0, 225.0, 250.0], "ion-facet distances (um)"),
        _f("shield_front", "float", 150.0, "fixed shield front position (um)"),
        *HEATING_FIELDS)),
    StudyKind("CqedGrid", "cooperativity per branching-wavelength product over finesse and xi", False, False, (
        _f("R_c_um", "float", 25000.0, "mirror radius of curvature (um)"),
        _f("finesse_min", "float", 1e4, "lowest finesse"),
        _f("finesse_max", "float", 1e6, "highest finesse"),
        _f("xi_min", "float", 1e-3, "lowest normalised length"),
        _f("xi_max", "float", 1 - 1e-3, "highest normalised length"),
        _f("n_finesse", "int", 41, "finesse samples"),
        _f("n_xi", "int", 41, "xi samples"))),
    StudyKind("SymmetryCheck", "nullspaces, potential conditions and random plane-wise charges", False, False, (
        _f("seed", "int", 0, "random seed"),
        _f("n_random", "int", 4, "random plane-wise distributions")), "coarse"),
    StudyKind("SurfaceTrap", "bare surface-trap depth and the well induced by shielded fibres", False, False, (
        _f("cavity_lengths", "floats", [300.0, 400.0, 500.0], "facet-to-facet distances (um)"),
        _f("rf_amplitude", "float", 25.0, "rf amplitude on the rf rails (V)"),
        _f("rf_frequency_hz", "float", 20e6, "rf drive frequency (Hz)"),
        _f("z_min", "float", -300.0, "line start (um)"),
        _f("z_max", "float", 300.0, "line end (um)"),
        _f("dz", "float", 4.0, "line step (um)"))),
    StudyKind("Validate", "solver oracle suite", False, False, (
        _f("quick", "bool", False, "coarser meshes"),)),
)}

TOP_FIELDS = ("study", "output", "species", "scene", "drive", "mesh", "params")


def _check_value(path: str, f: Field, v):
    k = f.kind
    if k == "float":
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigError(path, f"expected a number, got {v!r}")
        v = float(v)
        if not math.isfinite(v):
            raise ConfigError(path, "must be finite")
    elif k == "int":
        if isinstance(v, bool) or not isinstance(v, int):
            raise ConfigError(path, f"expected an integer, got {v!r}")
    elif k == "bool":
        if not isinstance(v, bool):
            raise ConfigError(path, f"expected true/false, got {v!r}")
    elif k == "str":
        if not isinstance(v, str):
            raise ConfigError(path, f"expected a string, got {v!r}")
    elif k == "floats":
        if not isinstance(v, list) or not v:
            raise ConfigError(path, "expected a non-empty list of numbers")
        v = [_check_value(f"{path}[{i}]", Field(f.name, "float"), x) for i, x in enumerate(v)]
    elif k == "strs":
        if not isinstance(v, list) or not v:
            raise ConfigError(path, "expected a non-empty list of strings")
        for i, x in enumerate(v):
            _check_value(f"{path}[{i}]", Field(f.name, "str", choices=f.choices), x)
        return list(v)
    elif k == "level":
        if isinstance(v, bool) or not (isinstance(v, (int, float)) or v in studies.LEVELS):
            raise ConfigError(path, f"expected one of {sorted(studies.LEVELS)} or a positive number, got {v!r}")
        if isinstance(v, (int, float)) and not v > 0:
            raise ConfigError(path, "mesh scale must be positive")
    if f.choices and k == "str" and v not in f.choices:
        raise ConfigError(path, f"expected one of {list(f.choices)}, got {v!r}")
    return v


def _section(cfg: dict, name: str, fields_: tuple, required: bool) -> dict:
    raw = cfg.get(name)
    if raw is None:
        if required:
            raise ConfigError(name, "required section missing")
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(name, "expected a table")
    known = {f.name: f for f in fields_}
    for key in raw:
        if key not in known:
            raise ConfigError(f"{name}.{key}", f"unknown field; expected one of {sorted(known)}")
    out = {}
    for f in fields_:
        path = f"{name}.{f.name}"
        if f.name in raw:
            out[f.name] = _check_value(path, f, raw[f.name])
        elif f.required:
            raise ConfigError(path, "required field missing")
        else:
            out[f.name] = f.default
    return out


def validate_config(cfg: dict) -> dict:
    """Check a parsed config against the catalog and fill in defaults."""
    if "study" not in cfg:
        raise ConfigError("study", f"required field missing; expected one of {sorted(CATALOG)}")
    name = cfg["study"]
    if name not in CATALOG:
        raise ConfigError("study", f"unknown study {name!r}; see `trapkit list-studies` for {sorted(CATALOG)}")
    for key in cfg:
        if key not in TOP_FIELDS:
            raise ConfigError(key, f"unknown field; expected one of {list(TOP_FIELDS)}")
    kind = CATALOG[name]
    out = {"study": name}
    out["output"] = _check_value("output", Field("output", "str"), cfg["output"]) if "output" in cfg else None
    sp = cfg.get("species", "40Ca+")
    if sp not in SPECIES:
        raise ConfigError("species", f"unknown species {sp!r}; expected one of {sorted(SPECIES)}")
    out["species"] = sp
    out["mesh"] = _section(cfg, "mesh", (_f("level", "level", kind.default_level, "mesh level or scale"),), False)
    if kind.needs_scene:
        out["scene"] = _section(cfg, "scene", SCENE_FIELDS, True)
    elif "scene" in cfg:
        raise ConfigError("scene", f"study {name} builds its own scenes")
    if kind.needs_drive:
        out["drive"] = _section(cfg, "drive", DRIVE_FIELDS, True)
    elif "drive" in cfg:
        raise ConfigError("drive", f"study {name} takes no drive section")
    out["params"] = _section(cfg, "params", kind.params, False)
    p = out["params"]
    if "z_min" in p and not p["z_min"] < p["z_max"]:
        raise ConfigError("params.z_max", "must exceed params.z_min")
    for key in ("dz", "spacing", "map_spacing", "window", "displacement", "temperature"):
        if key in p and not p[key] > 0:
            raise ConfigError(f"params.{key}", "must be positive")
    return out


def load_config(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError("<file>", f"cannot read {path}: {exc}") from None
    try:
        cfg = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError("<file>", f"TOML syntax error: {exc}") from None
    return validate_config(cfg)


# ---------------------------------------------------------------------------
# study dispatch


def workers() -> int:
    try:
        n = int(os.environ.get("TRAPKIT_WORKERS", "1"))
    except ValueError:
        raise ConfigError("TRAPKIT_WORKERS", "must be an integer") from None
    return max(1, n)


def _set_threads(n: int) -> None:
    import numba
    numba.set_num_threads(max(1, min(n, numba.config.NUMBA_NUM_THREADS)))


def _fan_out(fn, items, n):
    """Map ``fn`` over ``items`` with up to ``n`` threads, keeping order."""
    if n <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


def build_scene(sc: dict, base_dir: Path) -> Scene:
    try:
        if sc["file"]:
            return Scene.loads((base_dir / sc["file"]).read_text())
        kind = sc["kind"]
        if kind == "blade":
            kw = {"cavity_length": sc["cavity_length"], "shield_protrusion": sc["shield_protrusion"]}
            for k in ("with_fibres", "with_shields"):
                if sc[k] is not None:
                    kw[k] = sc[k]
            return studies.blade_scene(sc["case"], **kw)
        if kind == "four_rod":
            return build_four_rod_trap(sc["rod_radius"], sc["rod_distance"], with_shields=bool(sc["with_shields"]))
        if kind == "hyperbolic":
            return hyperbolic_surrogate(sc["r0"])
        shields = True if sc["with_shields"] is None else sc["with_shields"]
        return build_surface_trap(ion_height=sc["ion_height"], cavity_length=sc["cavity_length"],
                                  with_shields=shields)
    except OSError as exc:
        raise ConfigError("scene.file", str(exc)) from None
    except (GeometryError, KeyError, json.JSONDecodeError) as exc:
        raise ConfigError("scene", f"invalid scene: {exc}") from None


def build_drive(d: dict) -> DriveConfig:
    return DriveConfig(d["scheme"], d["v0"], 2 * math.pi * d["rf_frequency_hz"], d["endcap_voltage"])


def _heating_cfg(p: dict, species) -> heating.HeatingConfig:
    return heating.HeatingConfig(p["temperature"], p["displacement"], 2 * math.pi * p["axial_hz"],
                                 2 * math.pi * p["radial_hz"], species)


def _merge(results: list, name: str) -> studies.StudyResult:
    """Join partial results of one study kind split over disjoint sub-cases."""
    metrics, tables, extras = {}, {}, {}
    for r in results:
        metrics.update(r.metrics)
        for t, (h, rows) in r.tables.items():
            tables[t] = (h, np.vstack([tables[t][1], rows])) if t in tables else (h, rows)
        for k, v in r.extras.items():
            extras.setdefault(k, {}).update(v)
    return studies.StudyResult(name, metrics, tables, extras)


def run_study(cfg: dict, base_dir: Path = Path(".")) -> studies.StudyResult:
    name = cfg["study"]
    p = cfg["params"]
    level = cfg["mesh"]["level"]
    species = SPECIES[cfg["species"]]
    n = workers()
    _set_threads(n)
    drive = build_drive(cfg["drive"]) if "drive" in cfg else None
    zr = (p["z_min"], p["z_max"]) if "z_min" in p else None
    if name == "RadialPotential":
        scene = build_scene(cfg["scene"], base_dir)
        return studies.radial_potential(scene, drive, species, level, p["window"], p["spacing"], p["map_half"],
                                        p["map_spacing"], p["z0"])
    if name == "AxisScan":
        scene = build_scene(cfg["scene"], base_dir)
        return studies.axis_study(scene, drive, species, level, zr, p["dz"], p["rel_floor"])
    if name == "ChargeStudy":
        return studies.charge_study(p["density"], p["endcap_voltage"], p["cavity_length"], drive, species, level,
                                    z_range=zr, dz=p["dz"], probe_distance=p["probe_distance"], region=p["region"])
    if name == "Compensate":
        return studies.compensation_study(p["density"], p["endcap_voltage"], p["cavity_length"], drive, species,
                                          level, z_range=zr, dz=p["dz"], curvature_weight=p["curvature_weight"],
                                          shift_weight=p["shift_weight"], scales=tuple(p["scales"]),
                                          region=p["region"])
    if name == "Misalignment":
        def one(ax):
            return studies.misalignment_sweep(ax, tuple(p["offsets"]), drive, species, level,
                                              cavity_length=p["cavity_length"], z_range=zr, dz=p["dz"],
                                              rel_floor=p["rel_floor"])
        parts = _fan_out(one, p["axes"], n)
        for ax, r in zip(p["axes"], parts):
            h, rows = r.tables["min_line"]
            r.tables["min_line"] = (("axis",) + h, np.column_stack([np.full(len(rows), "xyz".index(ax)), rows]))
        res = studies.StudyResult("Misalignment", {"axes": list(p["axes"])},
                                  {"min_line": (parts[0].tables["min_line"][0],
                                                np.vstack([r.tables["min_line"][1] for r in parts]))},
                                  {"reports": {ax: r.extras["reports"] for ax, r in zip(p["axes"], parts)}})
        for ax, r in zip(p["axes"], parts):
            res.metrics[ax] = {k: v for k, v in r.metrics.items() if k != "axis"}
        return res
    if name == "Heating":
        hc = _heating_cfg(p, species)
        parts = _fan_out(lambda v: studies.heating_scan(tuple(p["z_positions"]), (v,), p["cavity_length"], hc,
                                                        level=level), p["variants"], n)
        res = _merge(parts, "Heating")
        c = {v: r.metrics[f"center_{v}"] for v, r in zip(p["variants"], parts)}
        if "shield" in c and "no_shield" in c:
            res.metrics["center_ratio_shield"] = sum(c["shield"]) / sum(c["no_shield"])
        return res
    if name == "LengthScaling":
        hc = _heating_cfg(p, species)
        parts = _fan_out(lambda fam: studies.length_scaling(tuple(p["distances"]), (fam,), hc, level=level,
                                                            shield_front=p["shield_front"]), p["families"], n)
        return _merge(parts, "LengthScaling")
    if name == "CqedGrid":
        return studies.cqed_grid(p["R_c_um"], (p["finesse_min"], p["finesse_max"]), (p["xi_min"], p["xi_max"]),
                                 p["n_finesse"], p["n_xi"])
    if name == "SymmetryCheck":
        return studies.symmetry_check(level, seed=p["seed"], n_random=p["n_random"])
    if name == "SurfaceTrap":
        return studies.surface_trap_study(tuple(p["cavity_lengths"]), p["rf_amplitude"],
                                          2 * math.pi * p["rf_frequency_hz"], species, level=level,
                                          z_range=zr, dz=p["dz"])
    if name == "Validate":
        return studies.validate(p["quick"])
    raise ConfigError("study", f"no runner for {name!r}")  # pragma: no cover


# ---------------------------------------------------------------------------
# outputs


def _plain(v):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to null."""
    if isinstance(v, dict):
        return {str(k): _plain(x) for k, x in v.items()}
    if isinstance(v, (list, tuple, np.ndarray)):
        return [_plain(x) for x in v]
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if math.isfinite(v) else None
    return v


def _cell(v) -> str:
    v = float(v)
    if v.is_integer() and abs(v) < 1e15:
        return str(int(v))
    return repr(v)


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in np.atleast_2d(np.asarray(rows, dtype=float)):
        if r.size:
            w.writerow([_cell(x) for x in r])
    return buf.getvalue()


def write_outputs(result: studies.StudyResult, out_dir: Path) -> list:
    out_dir.mkdir(parents=True, exist_ok=True)
    files = []
    for name in sorted(result.tables):
        header, rows = result.tables[name]
        text = csv_text(header, rows)
        path = out_dir / f"{name}.csv"
        path.write_text(text)
        files.append({"file": path.name, "sha256": hashlib.sha256(text.encode()).hexdigest(),
                      "columns": list(header), "rows": text.count("\n") - 1})
    summary = json.dumps({"study": result.study, "metrics": _plain(result.metrics)}, indent=1, sort_keys=True) + "\n"
    (out_dir / "summary.json").write_text(summary)
    files.append({"file": "summary.json", "sha256": hashlib.sha256(summary.encode()).hexdigest()})
    return files


def inputs_hash(cfg: dict, base_dir: Path) -> str:
    blob = json.dumps(cfg, sort_keys=True)
    sc = cfg.get("scene")
    if sc and sc.get("file"):
        blob += (base_dir / sc["file"]).read_text()
    return hashlib.sha256(blob.encode()).hexdigest()


def cmd_run(path, out=None) -> int:
    t0 = time.perf_counter()
    started = datetime.now(timezone.utc).isoformat()
    try:
        cfg = load_config(path)
        base = Path(path).resolve().parent
        out_dir = Path(out) if out else (base / cfg["output"] if cfg["output"] else
                                         base / f"{Path(path).stem}_out")
        digest = inputs_hash(cfg, base)
        t1 = time.perf_counter()
        result = run_study(cfg, base)
    except ConfigError as exc:
        print(f"config error at {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverError, AnalysisError, np.linalg.LinAlgError, MemoryError, heating.FitError) as exc:
        print(f"solver failure ({type(exc).__name__}): {exc}", file=sys.stderr)
        return EXIT_SOLVER
    t2 = time.perf_counter()
    files = write_outputs(result, out_dir)
    t3 = time.perf_counter()
    manifest = {"tool": "trapkit", "version": __version__, "study": cfg["study"], "config_path": str(path),
                "inputs_sha256": digest, "config": cfg, "workers": workers(), "started_utc": started,
                "finished_utc": datetime.now(timezone.utc).isoformat(),
                "timings_s": {"setup": t1 - t0, "solve_and_analysis": t2 - t1, "write": t3 - t2,
                              "total": t3 - t0},
                "outputs": files}
    (out_dir / "manifest.json").write_text(json.dumps(_plain(manifest), indent=1, sort_keys=True) + "\n")
    print(f"{cfg['study']}: wrote {len(files)} files to {out_dir} in {t3 - t0:.1f} s")
    _print_summary(result)
    if cfg["study"] == "Validate" and not result.metrics.get("all_pass", False):
        return EXIT_FAIL
    return EXIT_OK


def _print_summary(result: studies.StudyResult) -> None:
    for k, v in sorted(_flatten(_plain(result.metrics)).items()):
        print(f"  {k} = {v}")


def cmd_list(name=None) -> int:
    if name and name not in CATALOG:
        print(f"unknown study {name!r}; known: {', '.join(CATALOG)}", file=sys.stderr)
        return EXIT_CONFIG
    kinds = [CATALOG[name]] if name else list(CATALOG.values())
    for k in kinds:
        print(f"{k.name}: {k.doc}")
        req = []
        if k.needs_scene:
            req.append("[scene]")
        if k.needs_drive:
            req += [f"drive.{f.name}" for f in DRIVE_FIELDS if f.required]
        print(f"  required: {', '.join(req) if req else 'none'}")
        print(f"  mesh.level (default {k.default_level!r})")
        sections = [("params", k.params)]
        if k.needs_drive:
            sections.insert(0, ("drive", DRIVE_FIELDS))
        if k.needs_scene:
            sections.insert(0, ("scene", SCENE_FIELDS))
        for sec, flds in sections:
            for f in flds:
                tag = "required" if f.required else f"default {f.default!r}"
                ch = f" one of {list(f.choices)}" if f.choices else ""
                print(f"  {sec}.{f.name} ({f.kind}, {tag}){ch}: {f.doc}")
    return EXIT_OK


def cmd_validate(quick=False, out=None) -> int:
    t0 = time.perf_counter()
    try:
        result = studies.validate(quick)
    except (SolverError, np.linalg.LinAlgError, MemoryError) as exc:
        print(f"solver failure ({type(exc).__name__}): {exc}", file=sys.stderr)
        return EXIT_SOLVER
    print(f"{'check':<22} {'value':>12} {'tolerance':>10}  result")
    for name in result.extras["names"]:
        m = result.metrics[name]
        print(f"{name:<22} {m['value']:>12.4g} {m['tolerance']:>10.3g}  {'PASS' if m['pass'] else 'FAIL'}")
    print(f"validation {'passed' if result.metrics['all_pass'] else 'FAILED'} in {time.perf_counter() - t0:.1f} s")
    if out:
        write_outputs(result, Path(out))
    return EXIT_OK if result.metrics["all_pass"] else EXIT_FAIL


# ---------------------------------------------------------------------------
# regression comparison


def _flatten(d, prefix="") -> dict:
    out = {}
    if isinstance(d, dict):
        for k, v in d.items():
            out.update(_flatten(v, f"{prefix}{k}." if not isinstance(v, (dict, list)) or v else f"{prefix}{k}"))
        return {k.rstrip("."): v for k, v in out.items()}
    if isinstance(d, list):
        for i, v in enumerate(d):
            out.update(_flatten(v, f"{prefix}[{i}]."))
        return out
    return {prefix: d}


def _read_csv(path: Path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], np.array([[float(x) for x in r] for r in rows[1:]], dtype=float).reshape(-1, len(rows[0]))


@dataclass
class Comparison:
    key: str
    baseline: object
    new: object
    diff: float
    tol: float
    status: str  # pass, fail, expected, missing

    @property
    def ok(self) -> bool:
        return self.status in ("pass", "expected")


def _tolerance(key: str, tol: dict, default: float) -> float:
    if key in tol:
        return float(tol[key])
    for pat, v in tol.items():
        if fnmatch.fnmatchcase(key, pat):
            return float(v)
    return default


def compare_dirs(a, b, tolerances: dict | None = None) -> list:
    """Per-metric and per-column relative differences between two run directories.

    ``tolerances`` holds ``default`` (relative), ``abs_floor``, a
    ``tolerances`` table of per-key values (glob patterns allowed) and an
    ``expected_ratio`` table of keys whose new/baseline ratio is fixed by a
    scaling rule. Keys are dotted metric paths or ``table.column``.
    """
    t = tolerances or {}
    default = float(t.get("default", 1e-9))
    floor = float(t.get("abs_floor", 1e-300))
    tol = t.get("tolerances", {})
    ratio = t.get("expected_ratio", {})
    a, b = Path(a), Path(b)
    out = []

    def num(x):
        return isinstance(x, (int, float)) and not isinstance(x, bool)

    def check(key, va, vb, diff_fn):
        if key in ratio:
            r = float(ratio[key])
            tl = _tolerance(key, tol, default)
            d = diff_fn(r)
            out.append(Comparison(key, va, vb, d, tl, "expected" if d <= tl else "fail"))
        else:
            tl = _tolerance(key, tol, default)
            d = diff_fn(1.0)
            out.append(Comparison(key, va, vb, d, tl, "pass" if d <= tl else "fail"))

    ma = _flatten(json.loads((a / "summary.json").read_text())["metrics"])
    mb = _flatten(json.loads((b / "summary.json").read_text())["metrics"])
    for k in sorted(ma):
        va = ma[k]
        if k not in mb:
            out.append(Comparison(k, va, None, math.inf, 0.0, "missing"))
            continue
        vb = mb[k]
        if num(va) and num(vb):
            check(k, va, vb, lambda r, va=va, vb=vb: abs(vb - r * va) / max(abs(r * va), floor))
        elif va is None and vb is None or va == vb:
            out.append(Comparison(k, va, vb, 0.0, 0.0, "pass"))
        else:
            out.append(Comparison(k, va, vb, math.inf, 0.0, "fail"))
    for fa in sorted(a.glob("*.csv")):
        fb = b / fa.name
        table = fa.stem
        if not fb.exists():
            out.append(Comparison(table, fa.name, None, math.inf, 0.0, "missing"))
            continue
        ha, xa = _read_csv(fa)
        hb, xb = _read_csv(fb)
        if ha != hb or xa.shape != xb.shape:
            out.append(Comparison(table, f"{xa.shape} {ha}", f"{xb.shape} {hb}", math.inf, 0.0, "fail"))
            continue
        for j, col in enumerate(ha):
            ca, cb = xa[:, j], xb[:, j]
            check(f"{table}.{col}", f"max|.|={np.max(np.abs(ca)) if ca.size else 0:.6g}",
                  f"max|.|={np.max(np.abs(cb)) if cb.size else 0:.6g}",
                  lambda r, ca=ca, cb=cb: float(np.max(np.abs(cb - r * ca)) / max(np.max(np.abs(r * ca)), floor))
                  if ca.size else 0.0)
    return out


def cmd_compare(a, b, tol_path=None) -> int:
    try:
        t = tomllib.loads(Path(tol_path).read_text()) if tol_path else {}
    except (OSError, tomllib.TOMLDecodeError) as exc:
        print(f"config error at tolerances: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    for d in (a, b):
        if not (Path(d) / "summary.json").exists():
            print(f"config error at {d}: no summary.json (not a run directory)", file=sys.stderr)
            return EXIT_CONFIG
    res = compare_dirs(a, b, t)
    width = max([len(c.key) for c in res] + [3])
    for c in res:
        d = "inf" if math.isinf(c.diff) else f"{c.diff:.3g}"
        print(f"{c.key:<{width}}  diff={d:<10} tol={c.tol:<8.3g} {c.status}")
    n_bad = sum(not c.ok for c in res)
    finite = [c.diff for c in res if c.status == "pass"]
    print(f"{len(res) - n_bad}/{len(res)} ok; max diff {max(finite) if finite else 0:.3g}")
    return EXIT_OK if n_bad == 0 else EXIT_FAIL


# ---------------------------------------------------------------------------


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="trapkit", description="Ion-trap and fibre-cavity field studies.")
    ap.add_argument("--version", action="version", version=f"trapkit {__version__}")
    sub = ap.add_subparsers(dest="cmd", required=True)
    r = sub.add_parser("run", help="run one study config")
    r.add_argument("config")
    r.add_argument("--output", help="output directory (overrides the config)")
    ls = sub.add_parser("list-studies", help="print the study catalog")
    ls.add_argument("name", nargs="?")
    c = sub.add_parser("compare", help="compare two run directories")
    c.add_argument("baseline")
    c.add_argument("new")
    c.add_argument("--tol", help="tolerances TOML")
    v = sub.add_parser("validate", help="run the solver oracle suite")
    v.add_argument("--quick", action="store_true")
    v.add_argument("--output")
    args = ap.parse_args(argv)
    if args.cmd == "run":
        return cmd_run(args.config, args.output)
    if args.cmd == "list-studies":
        return cmd_list(args.name)
    if args.cmd == "compare":
        return cmd_compare(args.baseline, args.new, args.tol)
    return cmd_validate(args.quick, args.output)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
