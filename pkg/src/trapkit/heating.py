"""Motional heating from dielectric loss in the fibre mirror coatings.

The ion is a point charge e; moving it by ``a`` along axis i changes the
field in the coating by E^zeta_i. The fluctuation-dissipation estimate of
the field noise is

    S_i(omega) = 4 k_B T eps0 / (a^2 e^2 omega) * integral eps_r tan(delta) |E^zeta_i|^2 dV

and the heating rate ndot_i = e^2 S_i(omega_i) / (4 m hbar omega_i).

The coating is far too thin to mesh. Each layer instead sees the
vacuum-side field at the facet, with the tangential component continuous
and the normal component reduced by the layer permittivity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .constants import E_CHARGE, EPS0, HBAR, K_B
from .field_solver import BoundaryConditionSet, FieldSolution, Solver
from .geometry import CA40, BladeTrapParams, IonSpecies, Scene, build_blade_trap

MODES = ("x", "y", "z")


class FitError(ValueError):
    """Power-law fit rejected (e.g. non-monotone data)."""


@dataclass(frozen=True)
class CoatingMaterial:
    name: str
    eps_r: float
    tan_delta: float


SIO2 = CoatingMaterial("SiO2", 3.75, 1.3e-3)
TA2O5 = CoatingMaterial("Ta2O5", 22.0, 7.0e-3)


@dataclass(frozen=True)
class CoatingStack:
    """Repeated unit of (material, thickness in nm) layers."""

    layers: tuple = ((SIO2, 250.0), (TA2O5, 250.0))
    pairs: int = 20

    def __post_init__(self):
        if self.pairs < 0:
            raise ValueError("pair count must be non-negative")
        for _, t in self.layers:
            if not t > 0:
                raise ValueError("layer thickness must be positive")

    def expanded(self) -> list:
        return [lay for _ in range(self.pairs) for lay in self.layers]

    @property
    def thickness_nm(self) -> float:
        return self.pairs * sum(t for _, t in self.layers)

    def lossless(self) -> "CoatingStack":
        return replace(self, layers=tuple((replace(m, tan_delta=0.0), t) for m, t in self.layers))


@dataclass(frozen=True)
class HeatingConfig:
    """Temperature (K), ion displacement a (um) and secular frequencies (rad/s)."""

    temperature: float = 295.0
    displacement: float = 1.0
    omega_axial: float = 2 * math.pi * 1e6
    omega_radial: float = 2 * math.pi * 3e6
    species: IonSpecies = CA40

    def omega(self, mode: str) -> float:
        return self.omega_axial if mode == "z" else self.omega_radial


@dataclass(frozen=True)
class HeatingResult:
    """Noise spectra ((V/m)^2/Hz) and heating rates (quanta/s) for x, y, z."""

    position: tuple
    S: tuple
    ndot: tuple
    config: HeatingConfig

    @property
    def total(self) -> float:
        return float(sum(self.ndot))

    def rate(self, mode: str) -> float:
        return self.ndot[MODES.index(mode)]


@dataclass(frozen=True)
class DeltaField:
    """Change of the vacuum-side facet field when the ion moves by ``a``."""

    centroid: np.ndarray
    area: np.ndarray
    normal: np.ndarray
    field: np.ndarray
    displacement: float


def coating_mask(mesh) -> np.ndarray:
    """Panels on the front facets of all dielectric bodies."""
    mask = np.zeros(len(mesh.area), dtype=bool)
    for b, s in enumerate(mesh.scene.solids):
        if not s.is_conductor:
            mask |= mesh.face_mask(b, "start")
    return mask


def delta_field(sol0: FieldSolution, sol_a: FieldSolution, displacement: float | None = None,
                mask=None) -> DeltaField:
    """Facet field difference between a displaced and an equilibrium ion."""
    if sol0.mesh is not sol_a.mesh:
        raise ValueError("displaced and equilibrium solutions use different meshes")
    mesh = sol0.mesh
    if mask is None:
        mask = coating_mask(mesh)
    if displacement is None:
        p0 = np.array(sol0.bc.point_charges[0][0])
        pa = np.array(sol_a.bc.point_charges[0][0])
        displacement = float(np.linalg.norm(pa - p0))
    if displacement == 0.0:
        n = int(np.count_nonzero(mask))
        return DeltaField(mesh.centroid[mask], mesh.area[mask], mesh.normal[mask], np.zeros((n, 3)), 0.0)
    E = sol_a.surface_field(mask) - sol0.surface_field(mask)
    return DeltaField(mesh.centroid[mask], mesh.area[mask], mesh.normal[mask], E, float(displacement))


def coating_integral(delta: DeltaField, stack: CoatingStack) -> float:
    """integral eps_r tan(delta) |E|^2 dV over the stack, in V^2 m."""
    En = np.einsum("ij,ij->i", delta.field, delta.normal)
    Et2 = np.sum(delta.field**2, axis=1) - En**2
    A = delta.area * 1e-12
    tangential = float(np.sum(A * Et2))
    normal = float(np.sum(A * En**2))
    total = 0.0
    for mat, t in stack.expanded():
        if mat.tan_delta == 0.0:
            continue
        total += t * 1e-9 * mat.eps_r * mat.tan_delta * (tangential + normal / mat.eps_r**2)
    return total


def noise_spectrum(delta: DeltaField, stack: CoatingStack, cfg: HeatingConfig, mode: str) -> float:
    """Field noise S_i at the secular frequency of ``mode``, (V/m)^2/Hz."""
    if delta.displacement == 0.0:
        return 0.0
    a = delta.displacement * 1e-6
    w = cfg.omega(mode)
    integral = coating_integral(delta, stack)
    return 4 * K_B * cfg.temperature * EPS0 * integral / (a * a * E_CHARGE**2 * w)


def heating_rate(S: float, omega: float, species: IonSpecies = CA40) -> float:
    """Heating rate in quanta/s from the field noise at the mode frequency."""
    if not omega > 0:
        raise ValueError("secular frequency must be positive")
    return species.charge**2 * S / (4 * species.mass * HBAR * omega)


def rescale_rate(ndot: float, omega_from: float, omega_to: float) -> float:
    """Rate at another secular frequency (S scales as 1/omega, so ndot as 1/omega^2)."""
    return ndot * (omega_from / omega_to) ** 2


def heating_at(solver: Solver, position, cfg: HeatingConfig = HeatingConfig(),
               stack: CoatingStack = CoatingStack()) -> HeatingResult:
    """Heating rates for an ion at ``position`` with all conductors grounded."""
    p0 = np.asarray(position, dtype=float)
    a = cfg.displacement
    q = cfg.species.charge
    bcs = [BoundaryConditionSet.grounded(point_charges=[(tuple(p0), q)])]
    for k in range(3):
        d = np.zeros(3)
        d[k] = a
        bcs.append(BoundaryConditionSet.grounded(point_charges=[(tuple(p0 + d), q)]))
    sols = solver.solve_many(bcs)
    mask = coating_mask(solver.mesh)
    S, nd = [], []
    for k, mode in enumerate(MODES):
        dlt = delta_field(sols[0], sols[k + 1], a, mask)
        s = noise_spectrum(dlt, stack, cfg, mode)
        S.append(s)
        nd.append(heating_rate(s, cfg.omega(mode), cfg.species))
    return HeatingResult(tuple(float(v) for v in p0), tuple(S), tuple(nd), cfg)


def position_scan(solver: Solver, z_positions, cfg: HeatingConfig = HeatingConfig(),
                  stack: CoatingStack = CoatingStack()) -> list:
    return [heating_at(solver, (0.0, 0.0, float(z)), cfg, stack) for z in z_positions]


# ---------------------------------------------------------------------------
# scene families


HEATING_VARIANTS = ("no_shield", "shield", "shield_protruded")
LENGTH_FAMILIES = ("no_shield", "shield", "no_shield_no_rf")


def heating_scene(variant: str, cavity_length: float = 300.0, protrusion: float = 25.0,
                  params: BladeTrapParams | None = None) -> Scene:
    """Blade trap with fibres for one of :data:`HEATING_VARIANTS`."""
    if variant == "no_shield":
        return build_blade_trap(params, cavity_length, with_shields=False)
    if variant == "shield":
        return build_blade_trap(params, cavity_length, with_shields=True)
    if variant == "shield_protruded":
        return build_blade_trap(params, cavity_length, with_shields=True, shield_protrusion=protrusion)
    raise ValueError(f"unknown heating variant {variant!r}; expected one of {HEATING_VARIANTS}")


def length_scene(family: str, d: float, shield_front: float = 150.0,
                 params: BladeTrapParams | None = None) -> Scene:
    """Scene with facets at x = +-d for one of :data:`LENGTH_FAMILIES`.

    The shielded family keeps the shields fixed and retracts the fibres
    inside them, so ``d`` must not be smaller than ``shield_front``.
    """
    if family == "no_shield":
        return build_blade_trap(params, 2 * d, with_shields=False)
    if family == "no_shield_no_rf":
        return build_blade_trap(params, 2 * d, with_shields=False, with_rf=False)
    if family == "shield":
        if d < shield_front:
            raise ValueError("fibres cannot protrude past the fixed shields")
        return build_blade_trap(params, 2 * d, with_shields=True, shield_front=shield_front)
    raise ValueError(f"unknown length family {family!r}; expected one of {LENGTH_FAMILIES}")


# ---------------------------------------------------------------------------
# power-law fits


@dataclass(frozen=True)
class PowerLawFit:
    """rate = prefactor * d^-alpha fitted in log-log space."""

    alpha: float
    prefactor: float
    r_squared: float
    d: tuple
    rate: tuple


def fit_power_law(d, rate) -> PowerLawFit:
    d = np.asarray(d, dtype=float)
    r = np.asarray(rate, dtype=float)
    if len(d) < 3:
        raise FitError("need at least three points")
    if np.any(r <= 0) or np.any(d <= 0):
        raise FitError(f"non-positive data in power-law fit: d={d.tolist()}, rate={r.tolist()}")
    order = np.argsort(d)
    d, r = d[order], r[order]
    if not np.all(np.diff(r) < 0):
        raise FitError(f"rate is not monotonically decreasing in d: d={d.tolist()}, rate={r.tolist()}")
    x, y = np.log(d), np.log(r)
    slope, icpt = np.polyfit(x, y, 1)
    pred = slope * x + icpt
    ss_res = float(np.sum((y - pred) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return PowerLawFit(float(-slope), float(math.exp(icpt)), r2, tuple(d.tolist()), tuple(r.tolist()))
