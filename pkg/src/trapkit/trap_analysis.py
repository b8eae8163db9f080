"""Trap physics from field solutions.

Energies are reported in eV and positions in um. The pseudopotential of
an rf field with amplitude E0 at angular frequency Omega is

    Phi_pseudo = q^2 |E0|^2 / (4 m Omega^2)

and the total potential energy adds q * phi_dc of the static fields.
Field sources are either :class:`~trapkit.field_solver.FieldSolution`
objects or plain callables, so analytic test potentials can be injected.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq, least_squares, minimize, minimize_scalar
from scipy.signal import find_peaks

from .constants import E_CHARGE
from .field_solver import BoundaryConditionSet, FieldSolution
from .geometry import CA40, DriveConfig, IonSpecies, Scene


class AnalysisError(RuntimeError):
    """Analysis precondition not met (e.g. no minimum in the fit window)."""


# ---------------------------------------------------------------------------
# boundary conditions for a drive


def rf_conditions(scene: Scene, drive: DriveConfig) -> BoundaryConditionSet:
    """rf snapshot at the cosine peak; dc electrodes at rf ground."""
    amps = drive.rf_amplitudes()
    pots = {}
    for g in scene.conductor_groups():
        if g in amps:
            pots[g] = amps[g]
        elif g != "Ground":
            pots[g] = 0.0
    return BoundaryConditionSet(pots)


def dc_conditions(scene: Scene, drive: DriveConfig, patches=(), extra: dict | None = None) -> BoundaryConditionSet:
    """Static potentials: rf electrodes at 0 V, endcaps and overrides applied."""
    over = {**drive.overrides, **(extra or {})}
    pots = {}
    for g in scene.conductor_groups():
        if g == "Ground":
            continue
        if g in over:
            pots[g] = over[g]
        elif g == "endcap":
            pots[g] = drive.endcap_voltage
        else:
            pots[g] = 0.0
    return BoundaryConditionSet(pots, tuple(patches))


# ---------------------------------------------------------------------------
# field access


def _as_points(points) -> np.ndarray:
    return np.asarray(points, dtype=float).reshape(-1, 3)


@dataclass(frozen=True)
class TrapFields:
    """rf amplitude field and static potential seen by one ion species.

    ``rf`` maps points (um) to E0 in V/m; ``dc`` maps points to volts.
    Either may be a FieldSolution, a callable or None (zero).
    """

    rf: object = None
    dc: object = None
    species: IonSpecies = CA40
    omega_rf: float = 2 * math.pi * 20e6

    def e0(self, points) -> np.ndarray:
        P = _as_points(points)
        if self.rf is None:
            return np.zeros((len(P), 3))
        if isinstance(self.rf, FieldSolution):
            return self.rf.field(P, check=False)
        return np.asarray(self.rf(P), dtype=float).reshape(-1, 3)

    def phi_dc(self, points) -> np.ndarray:
        P = _as_points(points)
        if self.dc is None:
            return np.zeros(len(P))
        if isinstance(self.dc, FieldSolution):
            return self.dc.potential(P, check=False)
        return np.asarray(self.dc(P), dtype=float).reshape(-1)

    def e_dc(self, points) -> np.ndarray:
        P = _as_points(points)
        if self.dc is None:
            return np.zeros((len(P), 3))
        if isinstance(self.dc, FieldSolution):
            return self.dc.field(P, check=False)
        h = 1e-3
        g = np.zeros((len(P), 3))
        for k in range(3):
            d = np.zeros(3)
            d[k] = h
            g[:, k] = -(self.phi_dc(P + d) - self.phi_dc(P - d)) / (2 * h * 1e-6)
        return g

    def pseudo_from_e0(self, E0) -> np.ndarray:
        return pseudo_energy(E0, self.species, self.omega_rf)

    def pseudo(self, points) -> np.ndarray:
        return self.pseudo_from_e0(self.e0(points))

    def dc_energy(self, points) -> np.ndarray:
        return self.species.charge / E_CHARGE * self.phi_dc(points)

    def total(self, points) -> np.ndarray:
        return self.pseudo(points) + self.dc_energy(points)


def pseudo_energy(E0, species: IonSpecies = CA40, omega_rf: float = 2 * math.pi * 20e6) -> np.ndarray:
    """Pseudopotential energy in eV for rf amplitude E0 (V/m, (..., 3))."""
    E0 = np.asarray(E0, dtype=float)
    e2 = np.sum(E0 * E0, axis=-1)
    return species.charge**2 * e2 / (4.0 * species.mass * omega_rf**2) / E_CHARGE


def trap_fields(rf_sol, dc_sol, species: IonSpecies, drive: DriveConfig) -> TrapFields:
    return TrapFields(rf_sol, dc_sol, species, drive.omega_rf)


# ---------------------------------------------------------------------------
# pseudopotential maps and secular fits


@dataclass(frozen=True)
class PseudoMap:
    """Potential energies (eV) on a rectilinear grid (um)."""

    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    phi_pseudo: np.ndarray
    phi_dc: np.ndarray
    species: IonSpecies = CA40
    omega_rf: float = 2 * math.pi * 20e6

    @property
    def phi_total(self) -> np.ndarray:
        return self.phi_pseudo + self.phi_dc

    @property
    def points(self) -> np.ndarray:
        X, Y, Z = np.meshgrid(self.x, self.y, self.z, indexing="ij")
        return np.stack([X, Y, Z], axis=-1)


def grid_axes(center=(0.0, 0.0, 0.0), half=(10.0, 10.0, 0.0), spacing=1.0):
    """Axes of a grid centred on ``center``; half width 0 gives a single node."""
    out = []
    for c, h in zip(center, half):
        n = int(round(h / spacing))
        out.append(c + spacing * np.arange(-n, n + 1))
    return tuple(out)


def pseudopotential(sol, species: IonSpecies, drive: DriveConfig, grid, sol_dc=None) -> PseudoMap:
    """Pseudopotential (and dc energy) on a grid given as (x, y, z) axes."""
    fields = sol if isinstance(sol, TrapFields) else TrapFields(sol, sol_dc, species, drive.omega_rf)
    x, y, z = (np.atleast_1d(np.asarray(a, dtype=float)) for a in grid)
    X, Y, Z = np.meshgrid(x, y, z, indexing="ij")
    P = np.stack([X, Y, Z], axis=-1).reshape(-1, 3)
    ps = fields.pseudo(P).reshape(X.shape)
    dc = fields.dc_energy(P).reshape(X.shape)
    return PseudoMap(x, y, z, ps, dc, fields.species, fields.omega_rf)


@dataclass(frozen=True)
class SecularFit:
    """Harmonic fit around a potential minimum.

    ``frequencies`` are angular (rad/s), sorted with the principal axes
    (columns of ``axes``); negative values flag unstable directions.
    ``tilt_deg`` is the angle between x and the radial principal axis
    closest to it.
    """

    frequencies: np.ndarray
    axes: np.ndarray
    tilt_deg: float
    minimum: np.ndarray
    hessian: np.ndarray
    fit_residual: float
    dims: tuple = (0, 1, 2)

    @property
    def unstable(self) -> list:
        return [i for i, w in enumerate(self.frequencies) if w < 0]

    @property
    def frequencies_hz(self) -> np.ndarray:
        return self.frequencies / (2 * math.pi)


def _quadratic_design(X):
    n, d = X.shape
    cols = [np.ones(n)]
    cols += [X[:, i] for i in range(d)]
    pairs = [(i, j) for i in range(d) for j in range(i, d)]
    cols += [X[:, i] * X[:, j] for i, j in pairs]
    return np.stack(cols, axis=1), pairs


def fit_quadratic(X, f):
    """Least-squares quadratic; returns (value0, gradient, Hessian, rms)."""
    X = np.asarray(X, dtype=float)
    f = np.asarray(f, dtype=float)
    d = X.shape[1]
    A, pairs = _quadratic_design(X)
    coef, *_ = np.linalg.lstsq(A, f, rcond=None)
    g = coef[1:1 + d]
    H = np.zeros((d, d))
    for c, (i, j) in zip(coef[1 + d:], pairs):
        if i == j:
            H[i, i] = 2 * c
        else:
            H[i, j] = H[j, i] = c
    rms = float(np.sqrt(np.mean((A @ coef - f) ** 2)))
    return float(coef[0]), g, H, rms


def _secular_from_hessian(H_eV_um2, species):
    """Eigen-decomposition of an energy Hessian (eV/um^2)."""
    H = 0.5 * (H_eV_um2 + H_eV_um2.T)
    lam, vec = np.linalg.eigh(H)
    k = lam * E_CHARGE * 1e12  # J/m^2
    w = np.sign(k) * np.sqrt(np.abs(k) / species.mass)
    return w, vec


def _tilt(vec, dims):
    """Angle (deg) of the principal axis closest to x, within +-45 deg."""
    if 0 not in dims or 1 not in dims:
        return 0.0
    ix, iy = dims.index(0), dims.index(1)
    best = None
    for c in range(vec.shape[1]):
        v = vec[:, c]
        if len(dims) == 3 and abs(v[dims.index(2)]) > 0.5:
            continue
        ang = math.degrees(math.atan2(v[iy], v[ix]))
        ang = (ang + 90.0) % 180.0 - 90.0
        if best is None or abs(ang) < abs(best):
            best = ang
    return 0.0 if best is None else best


def secular_fit(pmap: PseudoMap, around=None, window: float = 10.0) -> SecularFit:
    """Quadratic fit of phi_total on the grid nodes within ``window`` of ``around``.

    Grid axes with a single node are treated as fixed (cross-section fits).
    """
    P = pmap.points.reshape(-1, 3)
    f = pmap.phi_total.reshape(-1)
    dims = tuple(k for k, a in enumerate((pmap.x, pmap.y, pmap.z)) if len(a) > 1)
    if not dims:
        raise AnalysisError("grid has no extent to fit")
    c = np.asarray(around if around is not None else P[np.argmin(f)], dtype=float)
    sel = np.all(np.abs(P[:, dims] - c[list(dims)]) <= window + 1e-9, axis=1)
    if sel.sum() < len(_quadratic_design(np.zeros((1, len(dims))))[1]) + len(dims) + 1:
        raise AnalysisError("too few grid nodes in the fit window")
    X = P[sel][:, dims] - c[list(dims)]
    f0, g, H, rms = fit_quadratic(X, f[sel])
    try:
        shift = -np.linalg.solve(H, g)
    except np.linalg.LinAlgError as exc:
        raise AnalysisError("singular Hessian in secular fit") from exc
    w, vec = _secular_from_hessian(H, pmap.species)
    if np.all(w > 0) and np.any(np.abs(shift) > window):
        raise AnalysisError(f"no interior minimum within +-{window} um (stationary point offset {shift})")
    m = c.copy()
    m[list(dims)] += shift
    return SecularFit(w, vec, _tilt(vec, dims), m, H, rms, dims)


def secular_fit_fields(fields: TrapFields, around=(0.0, 0.0, 0.0), window: float = 10.0,
                       spacing: float = 1.0, plane: str = "xy") -> SecularFit:
    """Sample a cross-section (``"xy"``) or a cube (``"xyz"``) and fit it."""
    half = tuple(window if a in plane else 0.0 for a in "xyz")
    grid = grid_axes(around, half, spacing)
    pmap = pseudopotential(fields, fields.species, DriveConfig(omega_rf=fields.omega_rf), grid)
    return secular_fit(pmap, around, window)


def axial_frequency(z, energy, species: IonSpecies = CA40, around: float = 0.0, window: float = 50.0) -> float:
    """Angular frequency from a parabola fit of an axial profile (eV vs um)."""
    z = np.asarray(z, dtype=float)
    sel = np.abs(z - around) <= window + 1e-9
    c = np.polyfit(z[sel] - around, np.asarray(energy)[sel], 2)
    k = 2 * c[0] * E_CHARGE * 1e12
    return float(np.sign(k) * math.sqrt(abs(k) / species.mass))


# ---------------------------------------------------------------------------
# axis scans, nulls and barriers


@dataclass(frozen=True)
class AxisScan:
    z: np.ndarray
    E0: np.ndarray
    phi_pseudo: np.ndarray
    phi_total: np.ndarray
    floor: float
    null_points: tuple
    null_regions: tuple
    barriers: tuple

    @property
    def E0_norm(self) -> np.ndarray:
        return np.linalg.norm(self.E0, axis=1)

    def central_barrier(self, z_center: float = 0.0) -> float:
        """Largest barrier among the peaks nearest the centre on each side."""
        if not self.barriers:
            return 0.0
        zs = np.array([b[0] for b in self.barriers])
        hs = np.array([b[1] for b in self.barriers])
        out = 0.0
        for side in (zs >= z_center, zs <= z_center):
            if side.any():
                i = np.flatnonzero(side)[np.argmin(np.abs(zs[side] - z_center))]
                out = max(out, hs[i])
        return float(out)


def characteristic_field(fields: TrapFields, z0: float = 0.0, radius: float = 10.0, n: int = 8) -> float:
    """Mean |E0| on a ring of ``radius`` around the axis at z0."""
    th = 2 * np.pi * np.arange(n) / n
    P = np.stack([radius * np.cos(th), radius * np.sin(th), np.full(n, z0)], axis=1)
    return float(np.mean(np.linalg.norm(fields.e0(P), axis=1)))


def noise_floor(mean_axis_field: float, e_char: float, rel: float = 1e-3, abs_rel: float = 1e-9) -> float:
    """Field magnitude below which the rf field counts as nulled."""
    return max(rel * mean_axis_field, abs_rel * e_char)


def find_barriers(z, energy, floor: float = 0.0) -> tuple:
    """Local maxima of an energy profile with their prominence (eV)."""
    energy = np.asarray(energy, dtype=float)
    if len(energy) < 3:
        return ()
    idx, props = find_peaks(energy, prominence=max(floor, 0.0))
    keep = props["prominences"] > 0
    idx, prom = idx[keep], props["prominences"][keep]
    return tuple((float(z[i]), float(p)) for i, p in zip(idx, prom))


def find_wells(z, energy, floor: float = 0.0) -> tuple:
    """Local minima of a profile (positions, depth below neighbouring maxima)."""
    return find_barriers(z, -np.asarray(energy, dtype=float), floor)


def axis_scan(fields: TrapFields, z_range=(-600.0, 600.0), dz: float = 5.0, rel_floor: float = 1e-3,
              xy=(0.0, 0.0)) -> AxisScan:
    """E0 components, potentials, rf nulls and barriers along a line parallel to z."""
    z = np.arange(z_range[0], z_range[1] + 0.5 * dz, dz)
    P = np.stack([np.full_like(z, xy[0]), np.full_like(z, xy[1]), z], axis=1)
    E0 = fields.e0(P)
    ps = fields.pseudo_from_e0(E0)
    tot = ps + fields.dc_energy(P)
    norm = np.linalg.norm(E0, axis=1)
    e_char = characteristic_field(fields, 0.5 * (z_range[0] + z_range[1]))
    floor = noise_floor(float(norm.mean()), e_char, rel_floor)
    below = norm <= floor

    def enorm(zz):
        return float(np.linalg.norm(fields.e0([[xy[0], xy[1], zz]])[0]))

    def ez(zz):
        return float(fields.e0([[xy[0], xy[1], zz]])[0, 2])

    points = []
    # sign changes of the axial component, refined by bisection
    s = np.sign(E0[:, 2])
    for i in np.flatnonzero(s[:-1] * s[1:] < 0):
        if below[i] and below[i + 1]:
            continue
        r = brentq(ez, z[i], z[i + 1], xtol=1e-6)
        if enorm(r) <= floor:
            points.append(r)
    # isolated minima of |E0| without a sign change
    for i in range(1, len(z) - 1):
        if norm[i] < norm[i - 1] and norm[i] <= norm[i + 1] and not below[i] and s[i - 1] * s[i + 1] > 0:
            res = minimize_scalar(enorm, bounds=(z[i - 1], z[i + 1]), method="bounded", options={"xatol": 1e-6})
            if res.fun <= floor:
                points.append(float(res.x))
    regions = []
    i = 0
    while i < len(z):
        if below[i]:
            j = i
            while j + 1 < len(z) and below[j + 1]:
                j += 1
            if j > i:
                regions.append((float(z[i]), float(z[j])))
            else:
                points.append(float(z[i]))
            i = j + 1
        else:
            i += 1
    points = [p for p in points if not any(a - dz <= p <= b + dz for a, b in regions)]
    # a refined root and a sub-floor grid sample next to it are the same null
    merged = []
    for p in sorted(points):
        if merged and p - merged[-1][-1] <= dz:
            merged[-1].append(p)
        else:
            merged.append([p])
    points = [round(min(c, key=enorm), 6) for c in merged]
    e_floor = float(fields.pseudo_from_e0(np.array([floor, 0.0, 0.0])))
    barriers = find_barriers(z, tot, max(e_floor, 1e-12 * float(np.max(np.abs(tot)) if tot.size else 0.0)))
    return AxisScan(z, E0, ps, tot, floor, tuple(points), tuple(regions), barriers)


# ---------------------------------------------------------------------------
# minimum lines


@dataclass(frozen=True)
class MinLine:
    """Transverse pseudopotential minimum per z slice."""

    z: np.ndarray
    xy: np.ndarray
    pseudo: np.ndarray
    e0: np.ndarray

    def bumps(self, floor: float) -> tuple:
        return find_barriers(self.z, self.pseudo, floor)

    def shift_at(self, z0: float = 0.0) -> np.ndarray:
        i = int(np.argmin(np.abs(self.z - z0)))
        return self.xy[i]


def trace_min_line(fields: TrapFields, z, seed=(0.0, 0.0), scale: float = 1.0) -> MinLine:
    """Follow the rf null line by Levenberg-Marquardt on E0(x, y; z).

    Each slice minimises |E0|^2 (the pseudopotential) over (x, y), seeded
    with the result of the previous slice. Slices are processed outward
    from the one nearest z = 0.
    """
    z = np.asarray(z, dtype=float)
    xy = np.zeros((len(z), 2))
    order0 = int(np.argmin(np.abs(z)))
    e_scale = max(characteristic_field(fields, float(z[order0]), radius=10.0), 1e-30)

    def solve_slice(zz, start):
        def res(v):
            return fields.e0([[v[0], v[1], zz]])[0] / e_scale
        out = least_squares(res, start, method="lm", x_scale=scale, xtol=1e-12, ftol=1e-15, gtol=1e-15)
        return out.x

    xy[order0] = solve_slice(z[order0], np.asarray(seed, dtype=float))
    for i in range(order0 + 1, len(z)):
        xy[i] = solve_slice(z[i], xy[i - 1])
    for i in range(order0 - 1, -1, -1):
        xy[i] = solve_slice(z[i], xy[i + 1])
    P = np.column_stack([xy, z])
    E0 = fields.e0(P)
    return MinLine(z, xy, fields.pseudo_from_e0(E0), E0)


def bump_floor(fields: TrapFields, rel: float = 1e-4, z0: float = 0.0) -> float:
    """Pseudopotential (eV) of a residual field ``rel`` times the field 10 um off axis."""
    e = rel * characteristic_field(fields, z0)
    return float(fields.pseudo_from_e0(np.array([e, 0.0, 0.0])))


@dataclass(frozen=True)
class MisalignmentReport:
    offset: tuple
    min_line: MinLine
    bumps: tuple
    max_bump_ev: float
    shift_um: tuple
    floor_ev: float

    @property
    def max_bump_uev(self) -> float:
        return self.max_bump_ev * 1e6

    @property
    def shift_nm(self) -> tuple:
        return tuple(1e3 * s for s in self.shift_um)


def misalignment_report(fields: TrapFields, offset, z, rel_floor: float = 1e-4) -> MisalignmentReport:
    line = trace_min_line(fields, z)
    floor = bump_floor(fields, rel_floor)
    b = line.bumps(floor)
    mx = max((h for _, h in b), default=0.0)
    return MisalignmentReport(tuple(float(o) for o in offset), line, b, float(mx),
                              tuple(float(v) for v in line.shift_at(0.0)), floor)


# ---------------------------------------------------------------------------
# stray charge on the fibres


@dataclass(frozen=True)
class AxialProfiles:
    """On-axis energies (eV) and transverse dc fields (V/m) of linear pieces.

    ``pseudo`` is fixed; every entry of ``dc`` is the profile of one static
    source at unit weight so that weighted sums describe any voltage set.
    """

    z: np.ndarray
    pseudo: np.ndarray
    dc: dict
    dc_field: dict
    species: IonSpecies
    radial_omega: float

    def energy(self, weights: dict) -> np.ndarray:
        e = self.pseudo.copy()
        q = self.species.charge / E_CHARGE
        for k, w in weights.items():
            if w:
                e = e + q * w * self.dc[k]
        return e

    def transverse_field(self, weights: dict) -> np.ndarray:
        E = np.zeros((len(self.z), 3))
        for k, w in weights.items():
            if w:
                E = E + w * self.dc_field[k]
        return E


def axial_profiles(rf_sol, dc_sols: dict, species: IonSpecies, drive: DriveConfig, z) -> AxialProfiles:
    z = np.asarray(z, dtype=float)
    P = np.stack([np.zeros_like(z), np.zeros_like(z), z], axis=1)
    fields = TrapFields(rf_sol, None, species, drive.omega_rf)
    ps = fields.pseudo(P)
    dc, dcf = {}, {}
    for k, sol in dc_sols.items():
        phi, E = sol.potential_and_field(P, check=False)
        dc[k], dcf[k] = phi, E
    fit = secular_fit_fields(fields, (0.0, 0.0, 0.0), window=5.0, spacing=1.0)
    wr = float(np.mean(np.abs(fit.frequencies))) if rf_sol is not None else 0.0
    return AxialProfiles(z, ps, dc, dcf, species, wr)


@dataclass(frozen=True)
class ChargeReport:
    z: np.ndarray
    energy: np.ndarray
    barrier_ev: float
    wells_um: tuple
    min_shift_um: tuple
    single_well: bool
    axial_omega: float = float("nan")


def _profile_report(z, energy, species, rel_floor: float = 1e-4) -> tuple:
    # features smaller than this fraction of the profile span are solver ripple
    e_floor = max(rel_floor * float(np.ptp(energy)), 1e-9)
    wells = find_wells(z, energy, e_floor)
    barriers = find_barriers(z, energy, e_floor)
    wz = tuple(sorted(w for w, _ in wells))
    central = 0.0
    if len(wz) >= 2:
        left = max(w for w in wz if w <= 0) if any(w <= 0 for w in wz) else wz[0]
        right = min(w for w in wz if w >= 0) if any(w >= 0 for w in wz) else wz[-1]
        for zb, h in barriers:
            if left < zb < right:
                i = int(np.argmin(np.abs(z - zb)))
                central = max(central, float(energy[i] - max(np.interp(left, z, energy), np.interp(right, z, energy))))
    return wz, central


def charge_report(profiles: AxialProfiles, weights: dict, fields: TrapFields | None = None) -> ChargeReport:
    """Double-well analysis of the on-axis total potential."""
    z = profiles.z
    e = profiles.energy(weights)
    wells, barrier = _profile_report(z, e, profiles.species)
    single = len(wells) <= 1
    if single:
        i = int(np.argmin(e))
        zc = float(z[i])
    else:
        zc = min(wells, key=abs)
    # transverse shift of the minimum from the dc force against the rf confinement
    Et = profiles.transverse_field(weights)
    i = int(np.argmin(np.abs(z - zc)))
    shift = np.zeros(3)
    if profiles.radial_omega > 0:
        shift[:2] = profiles.species.charge * Et[i, :2] / (profiles.species.mass * profiles.radial_omega**2) * 1e6
    shift[2] = zc
    w = axial_frequency(z, e, profiles.species, around=zc, window=30.0) if single else float("nan")
    if fields is not None:
        res = minimize(lambda v: float(fields.total([v])[0]), shift, method="Nelder-Mead",
                       options={"xatol": 1e-3, "fatol": 1e-12, "maxiter": 400})
        shift = res.x
    return ChargeReport(z, e, float(barrier), wells, tuple(float(s) for s in shift), single, w)


@dataclass(frozen=True)
class Compensation:
    v_near: float
    v_far: float
    objective: float
    single_well: bool
    restored_omega: float
    baseline_omega: float
    report: ChargeReport

    @property
    def restored_hz(self) -> float:
        return self.restored_omega / (2 * math.pi)

    @property
    def baseline_hz(self) -> float:
        return self.baseline_omega / (2 * math.pi)


def compensate(profiles: AxialProfiles, base: dict, near: str, far: str, curvature_weight: float = 0.1,
               shift_weight: float = 1.0, window: float = 30.0, start=(0.0, 0.0)) -> Compensation:
    """Shield voltages that undo a stray-charge distortion of the axial well.

    Minimises barrier (eV) + curvature_weight * ((k - k0)/k0)^2
    + shift_weight * (transverse shift / 1 um)^2 by Nelder-Mead, where k is
    the axial curvature at z = 0 and k0 that of the uncharged trap.
    ``base`` holds the weights of the fixed sources (endcaps and charge);
    the charge entry is named ``"charge"`` and dropped for the baseline.
    """
    z = profiles.z
    sel = np.abs(z) <= window + 1e-9
    uncharged = {k: v for k, v in base.items() if k != "charge"}
    e0 = profiles.energy(uncharged)
    k0 = np.polyfit(z[sel], e0[sel], 2)[0]
    w0 = axial_frequency(z, e0, profiles.species, 0.0, window)
    i0 = int(np.argmin(np.abs(z)))
    sp = profiles.species

    def parts(v):
        wts = {**base, near: v[0], far: v[1]}
        e = profiles.energy(wts)
        wells, barrier = _profile_report(z, e, sp)
        k = np.polyfit(z[sel], e[sel], 2)[0]
        Et = profiles.transverse_field(wts)[i0]
        shift = sp.charge * np.linalg.norm(Et[:2]) / (sp.mass * profiles.radial_omega**2) * 1e6 \
            if profiles.radial_omega > 0 else 0.0
        return barrier, (k - k0) / k0, shift, wells, e

    def obj(v):
        b, dk, sh, _, _ = parts(v)
        return b + curvature_weight * dk * dk + shift_weight * sh * sh

    res = minimize(obj, np.asarray(start, dtype=float), method="Nelder-Mead",
                   options={"xatol": 1e-6, "fatol": 1e-14, "maxiter": 4000, "initial_simplex":
                            np.array([start, [start[0] + 1.0, start[1]], [start[0], start[1] + 1.0]])})
    v = res.x
    rep = charge_report(profiles, {**base, near: v[0], far: v[1]})
    w = axial_frequency(z, profiles.energy({**base, near: v[0], far: v[1]}), sp, 0.0, window)
    return Compensation(float(v[0]), float(v[1]), float(res.fun), rep.single_well, w, w0, rep)


# ---------------------------------------------------------------------------
# surface traps


@dataclass(frozen=True)
class SurfaceDepth:
    null_height: float
    saddle_height: float
    depth_ev: float


def surface_trap_depth(fields: TrapFields, z0: float = 0.0, y_max: float = 600.0, dy: float = 1.0,
                       x0: float = 0.0) -> SurfaceDepth:
    """Escape depth along the vertical line above the rf null of a surface trap."""
    y = np.arange(dy, y_max + 0.5 * dy, dy)
    P = np.stack([np.full_like(y, x0), y, np.full_like(y, z0)], axis=1)
    e = fields.total(P)
    i = int(np.argmin(e))
    if i == 0 or i == len(y) - 1:
        raise AnalysisError("no pseudopotential minimum above the surface")
    res = minimize_scalar(lambda t: float(fields.total([[x0, t, z0]])[0]), bounds=(y[i - 1], y[i + 1]),
                          method="bounded", options={"xatol": 1e-6})
    j = i + int(np.argmax(e[i:]))
    if j == len(y) - 1:
        raise AnalysisError("no escape saddle below y_max")
    sad = minimize_scalar(lambda t: -float(fields.total([[x0, t, z0]])[0]), bounds=(y[j - 1], y[j + 1]),
                          method="bounded", options={"xatol": 1e-6})
    return SurfaceDepth(float(res.x), float(sad.x), float(-sad.fun - res.fun))


@dataclass(frozen=True)
class WellAlongLine:
    line: MinLine
    depth_ev: float
    barrier_z: tuple


def well_depth_along_line(line: MinLine, z_center: float = 0.0) -> WellAlongLine:
    """Depth of the pseudopotential well at ``z_center`` along a minimum line."""
    z, e = line.z, line.pseudo
    i0 = int(np.argmin(np.abs(z - z_center)))
    left = e[:i0 + 1]
    right = e[i0:]
    jl = int(np.argmax(left))
    jr = i0 + int(np.argmax(right))
    # local minimum between the two maxima
    m = float(np.min(e[jl:jr + 1]))
    depth = min(float(e[jl]), float(e[jr])) - m
    return WellAlongLine(line, max(depth, 0.0), (float(z[jl]), float(z[jr])))
