"""Parametric trap scenes: solids, materials, electrical roles and drives.

Coordinates are micrometres. The trap axis is z, the cavity (fibre) axis is
x. Scenes are immutable; builders return new scenes and transforms such as
:func:`apply_misalignment` return modified copies.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, fields, replace
from typing import Union

import numpy as np

from .constants import AMU, E_CHARGE

AXES = ("x", "y", "z")
ROLES = ("RfA", "RfB", "Dc", "Ground", "FloatingShield", "DielectricBody")


class GeometryError(ValueError):
    """Invalid solid parameters or interpenetrating solids."""


# ---------------------------------------------------------------------------
# materials, species, drives


@dataclass(frozen=True)
class Material:
    kind: str
    relative_permittivity: float | None = None
    loss_tangent: float | None = None

    def __post_init__(self):
        if self.kind == "Conductor":
            if self.relative_permittivity is not None or self.loss_tangent is not None:
                raise GeometryError("a conductor carries no permittivity or loss tangent")
        elif self.kind == "Dielectric":
            if self.relative_permittivity is None or not self.relative_permittivity >= 1.0:
                raise GeometryError("dielectric needs relative permittivity >= 1")
            if self.loss_tangent is None or not self.loss_tangent >= 0.0:
                raise GeometryError("dielectric needs loss tangent >= 0")
        else:
            raise GeometryError(f"unknown material kind {self.kind!r}")

    @classmethod
    def conductor(cls) -> "Material":
        return cls("Conductor")

    @classmethod
    def dielectric(cls, eps_r: float, tan_delta: float = 0.0) -> "Material":
        return cls("Dielectric", float(eps_r), float(tan_delta))

    @property
    def is_conductor(self) -> bool:
        return self.kind == "Conductor"


FUSED_SILICA = Material.dielectric(3.75, 0.0)


@dataclass(frozen=True)
class IonSpecies:
    """Trapped ion; mass in kg, charge in coulomb."""

    name: str
    mass: float
    charge: float = E_CHARGE

    def __post_init__(self):
        if not self.mass > 0:
            raise ValueError("ion mass must be positive")
        n = self.charge / E_CHARGE
        if abs(n - round(n)) > 1e-9 or round(n) == 0:
            raise ValueError("ion charge must be a non-zero multiple of e")

    @classmethod
    def from_amu(cls, name: str, mass_amu: float, charge_number: int = 1) -> "IonSpecies":
        return cls(name, mass_amu * AMU, charge_number * E_CHARGE)


CA40 = IonSpecies.from_amu("40Ca+", 39.962590863 - 5.48579909e-4)

SPECIES = {"40Ca+": CA40,
           "88Sr+": IonSpecies.from_amu("88Sr+", 87.9056125 - 5.48579909e-4),
           "138Ba+": IonSpecies.from_amu("138Ba+", 137.905247 - 5.48579909e-4),
           "171Yb+": IonSpecies.from_amu("171Yb+", 170.9363315 - 5.48579909e-4)}


@dataclass(frozen=True)
class DriveConfig:
    """rf and dc drive of a trap.

    ``v0`` is the rf amplitude parameter: single-rf puts ``2 v0`` on the RfA
    electrodes and holds RfB at rf ground, dual-rf puts ``+v0`` on RfA and
    ``-v0`` on RfB. Either way the pair-to-pair amplitude is ``2 v0``.
    """

    scheme: str = "DualRf"
    v0: float = 30.0
    omega_rf: float = 2 * math.pi * 20e6
    endcap_voltage: float = 0.0
    dc_overrides: tuple = ()

    def __post_init__(self):
        if self.scheme not in ("SingleRf", "DualRf"):
            raise ValueError(f"unknown rf scheme {self.scheme!r}")
        if not self.omega_rf > 0:
            raise ValueError("omega_rf must be positive")
        if isinstance(self.dc_overrides, dict):
            object.__setattr__(self, "dc_overrides", tuple(sorted(self.dc_overrides.items())))

    @property
    def overrides(self) -> dict:
        return dict(self.dc_overrides)

    def rf_amplitudes(self) -> dict:
        if self.scheme == "SingleRf":
            return {"RfA": 2.0 * self.v0, "RfB": 0.0}
        return {"RfA": self.v0, "RfB": -self.v0}

    @property
    def pair_amplitude(self) -> float:
        a = self.rf_amplitudes()
        return a["RfA"] - a["RfB"]


# ---------------------------------------------------------------------------
# shapes (local coordinates)


@dataclass(frozen=True)
class Box:
    """Axis-aligned box centred on the local origin."""

    half_extents: tuple

    def __post_init__(self):
        object.__setattr__(self, "half_extents", tuple(float(v) for v in self.half_extents))
        if len(self.half_extents) != 3 or min(self.half_extents) <= 0:
            raise GeometryError("box half extents must be three positive lengths")

    def volume(self):
        a, b, c = self.half_extents
        return 8 * a * b * c

    def area(self):
        a, b, c = self.half_extents
        return 8 * (a * b + b * c + a * c)

    def sdf(self, p):
        q = np.abs(p) - np.array(self.half_extents)
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
        inside = np.minimum(np.max(q, axis=-1), 0.0)
        return outside + inside

    def bounds(self):
        h = np.array(self.half_extents)
        return -h, h


@dataclass(frozen=True)
class Plate:
    """Thin plate: local x is the width, y the thickness, z the length."""

    width: float
    length: float
    thickness: float

    def __post_init__(self):
        if min(self.width, self.length, self.thickness) <= 0:
            raise GeometryError("plate dimensions must be positive")

    @property
    def box(self) -> Box:
        return Box((self.width / 2, self.thickness / 2, self.length / 2))

    def volume(self):
        return self.box.volume()

    def area(self):
        return self.box.area()

    def sdf(self, p):
        return self.box.sdf(p)

    def bounds(self):
        return self.box.bounds()


@dataclass(frozen=True)
class Cylinder:
    """Solid cylinder along local z from 0 to ``length``."""

    radius: float
    length: float

    def __post_init__(self):
        if self.radius <= 0 or self.length <= 0:
            raise GeometryError("cylinder radius and length must be positive")

    def volume(self):
        return math.pi * self.radius**2 * self.length

    def area(self):
        return 2 * math.pi * self.radius * (self.radius + self.length)

    def sdf(self, p):
        rho = np.hypot(p[..., 0], p[..., 1])
        d = np.stack([rho - self.radius, np.abs(p[..., 2] - self.length / 2) - self.length / 2], axis=-1)
        return np.linalg.norm(np.maximum(d, 0.0), axis=-1) + np.minimum(np.max(d, axis=-1), 0.0)

    def bounds(self):
        r = self.radius
        return np.array([-r, -r, 0.0]), np.array([r, r, self.length])


@dataclass(frozen=True)
class Tube:
    """Hollow cylinder along local z from 0 to ``length``."""

    inner_radius: float
    outer_radius: float
    length: float

    def __post_init__(self):
        if not 0 < self.inner_radius < self.outer_radius:
            raise GeometryError("tube needs 0 < inner_radius < outer_radius")
        if self.length <= 0:
            raise GeometryError("tube length must be positive")

    def volume(self):
        return math.pi * (self.outer_radius**2 - self.inner_radius**2) * self.length

    def area(self):
        ri, ro, h = self.inner_radius, self.outer_radius, self.length
        return 2 * math.pi * (ri + ro) * h + 2 * math.pi * (ro**2 - ri**2)

    def sdf(self, p):
        rho = np.hypot(p[..., 0], p[..., 1])
        mid = 0.5 * (self.inner_radius + self.outer_radius)
        half = 0.5 * (self.outer_radius - self.inner_radius)
        d = np.stack([np.abs(rho - mid) - half, np.abs(p[..., 2] - self.length / 2) - self.length / 2], axis=-1)
        return np.linalg.norm(np.maximum(d, 0.0), axis=-1) + np.minimum(np.max(d, axis=-1), 0.0)

    def bounds(self):
        r = self.outer_radius
        return np.array([-r, -r, 0.0]), np.array([r, r, self.length])


@dataclass(frozen=True)
class Prism:
    """Convex polygon in the local xy plane extruded from z0 to z1.

    Used for tapered blade electrodes. The profile is stored counter-clockwise.
    """

    profile: tuple
    z0: float
    z1: float

    def __post_init__(self):
        pts = tuple((float(x), float(y)) for x, y in self.profile)
        if len(pts) < 3:
            raise GeometryError("prism profile needs at least three vertices")
        if _signed_area(pts) < 0:
            pts = pts[::-1]
        object.__setattr__(self, "profile", pts)
        if not self.z1 > self.z0:
            raise GeometryError("prism needs z1 > z0")
        p = np.array(pts)
        e = np.roll(p, -1, axis=0) - p
        cross = e[:, 0] * np.roll(e, -1, axis=0)[:, 1] - e[:, 1] * np.roll(e, -1, axis=0)[:, 0]
        if np.any(cross <= 0):
            raise GeometryError("prism profile must be strictly convex")

    @property
    def section_area(self):
        return _signed_area(self.profile)

    def volume(self):
        return self.section_area * (self.z1 - self.z0)

    def area(self):
        p = np.array(self.profile)
        perim = np.linalg.norm(np.roll(p, -1, axis=0) - p, axis=1).sum()
        return 2 * self.section_area + perim * (self.z1 - self.z0)

    def sdf(self, p):
        poly = np.array(self.profile)
        e = np.roll(poly, -1, axis=0) - poly
        n = np.stack([e[:, 1], -e[:, 0]], axis=1)
        n /= np.linalg.norm(n, axis=1)[:, None]
        xy = p[..., :2]
        plane = np.max(np.einsum("...kj,kj->...k", xy[..., None, :] - poly, n), axis=-1)
        # outside the polygon use the exact distance to the nearest edge segment
        d2 = _polygon_edge_distance(xy, poly)
        d2 = np.where(plane > 0, d2, plane)
        dz = np.abs(p[..., 2] - 0.5 * (self.z0 + self.z1)) - 0.5 * (self.z1 - self.z0)
        d = np.stack([d2, dz], axis=-1)
        return np.linalg.norm(np.maximum(d, 0.0), axis=-1) + np.minimum(np.max(d, axis=-1), 0.0)

    def bounds(self):
        p = np.array(self.profile)
        return (np.array([p[:, 0].min(), p[:, 1].min(), self.z0]),
                np.array([p[:, 0].max(), p[:, 1].max(), self.z1]))


@dataclass(frozen=True)
class Sphere:
    """Sphere centred on the local origin (used for solver checks)."""

    radius: float

    def __post_init__(self):
        if self.radius <= 0:
            raise GeometryError("sphere radius must be positive")

    def volume(self):
        return 4 / 3 * math.pi * self.radius**3

    def area(self):
        return 4 * math.pi * self.radius**2

    def sdf(self, p):
        return np.linalg.norm(p, axis=-1) - self.radius

    def bounds(self):
        r = self.radius
        return np.full(3, -r), np.full(3, r)


Shape = Union[Box, Plate, Cylinder, Tube, Prism, Sphere]
SHAPES = {c.__name__: c for c in (Box, Plate, Cylinder, Tube, Prism, Sphere)}


def _signed_area(pts):
    p = np.asarray(pts, dtype=float)
    x, y = p[:, 0], p[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def _polygon_edge_distance(xy, poly):
    a = poly
    b = np.roll(poly, -1, axis=0)
    ab = b - a
    ap = xy[..., None, :] - a
    t = np.clip(np.einsum("...kj,kj->...k", ap, ab) / np.einsum("kj,kj->k", ab, ab), 0.0, 1.0)
    closest = a + t[..., None] * ab
    return np.min(np.linalg.norm(xy[..., None, :] - closest, axis=-1), axis=-1)


# ---------------------------------------------------------------------------
# poses and solids

_IDENTITY = ((1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0))


@dataclass(frozen=True)
class Pose:
    """Rigid transform: global = rotation @ local + origin."""

    origin: tuple = (0.0, 0.0, 0.0)
    rotation: tuple = _IDENTITY

    def __post_init__(self):
        o = tuple(float(v) for v in self.origin)
        r = tuple(tuple(float(v) for v in row) for row in self.rotation)
        R = np.array(r)
        if R.shape != (3, 3) or not np.allclose(R @ R.T, np.eye(3), atol=1e-12) \
                or abs(np.linalg.det(R) - 1.0) > 1e-12:
            raise GeometryError("pose rotation must be a proper rotation matrix")
        object.__setattr__(self, "origin", o)
        object.__setattr__(self, "rotation", r)

    @property
    def R(self) -> np.ndarray:
        return np.array(self.rotation)

    @property
    def t(self) -> np.ndarray:
        return np.array(self.origin)

    def to_global(self, p):
        return np.asarray(p) @ self.R.T + self.t

    def to_local(self, p):
        return (np.asarray(p) - self.t) @ self.R

    def translated(self, offset) -> "Pose":
        return Pose(tuple(np.array(self.origin) + np.asarray(offset, dtype=float)), self.rotation)

    @classmethod
    def frame(cls, origin, e1, e2, e3) -> "Pose":
        """Pose whose local x, y, z axes map to the given unit vectors."""
        R = np.column_stack([e1, e2, e3]).astype(float)
        return cls(tuple(origin), tuple(map(tuple, R)))


@dataclass(frozen=True)
class Solid:
    """A placed solid with material and electrical role.

    ``label`` names the electrical group of Dc and FloatingShield solids
    (e.g. ``"endcap"`` or ``"shield_R"``); other roles use fixed groups.
    """

    name: str
    shape: Shape
    pose: Pose
    material: Material
    role: str
    label: str = ""

    def __post_init__(self):
        if self.role not in ROLES:
            raise GeometryError(f"unknown electrical role {self.role!r}")
        if self.role == "DielectricBody":
            if self.material.is_conductor:
                raise GeometryError(f"{self.name}: dielectric body needs a dielectric material")
        elif not self.material.is_conductor:
            raise GeometryError(f"{self.name}: electrode role {self.role} needs a conductor")
        if self.role in ("Dc", "FloatingShield") and not self.label:
            raise GeometryError(f"{self.name}: {self.role} needs a label")

    @property
    def group(self) -> str | None:
        """Electrical group used for potentials; None for dielectrics."""
        if self.role in ("Dc", "FloatingShield"):
            return self.label
        return {"RfA": "RfA", "RfB": "RfB", "Ground": "Ground"}.get(self.role)

    @property
    def is_conductor(self) -> bool:
        return self.material.is_conductor

    def sdf(self, points):
        return self.shape.sdf(self.pose.to_local(points))

    def volume(self):
        return self.shape.volume()

    def area(self):
        return self.shape.area()

    def bounds(self):
        lo, hi = self.shape.bounds()
        corners = np.array([[x, y, z] for x in (lo[0], hi[0]) for y in (lo[1], hi[1]) for z in (lo[2], hi[2])])
        g = self.pose.to_global(corners)
        return g.min(axis=0), g.max(axis=0)

    def translated(self, offset) -> "Solid":
        return replace(self, pose=self.pose.translated(offset))


@dataclass(frozen=True)
class SurfaceChargePatch:
    """Prescribed surface charge density (e/um^2) on a dielectric solid."""

    host: str
    region: str = "FrontFacet"
    density: float = 0.0

    def __post_init__(self):
        if self.region not in ("FrontFacet", "All"):
            raise GeometryError(f"unknown patch region {self.region!r}")


# ---------------------------------------------------------------------------
# scenes


@dataclass(frozen=True)
class Scene:
    """Immutable collection of solids.

    ``symmetry`` lists the coordinate planes (``"x"`` for x = 0, ...) under
    which the geometry and materials are mirror invariant. Electrical roles
    may swap under a mirror; the mesher exploits only the geometry.
    """

    solids: tuple
    symmetry: tuple = ()
    info: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "solids", tuple(self.solids))
        object.__setattr__(self, "symmetry", tuple(a for a in AXES if a in self.symmetry))
        if isinstance(self.info, dict):
            object.__setattr__(self, "info", tuple(sorted(self.info.items())))
        names = [s.name for s in self.solids]
        if len(set(names)) != len(names):
            raise GeometryError("solid names must be unique")

    def __len__(self):
        return len(self.solids)

    @property
    def meta(self) -> dict:
        return dict(self.info)

    @property
    def names(self):
        return [s.name for s in self.solids]

    def solid(self, name: str) -> Solid:
        for s in self.solids:
            if s.name == name:
                return s
        raise KeyError(f"no solid named {name!r}")

    def index(self, name: str) -> int:
        return self.names.index(name)

    def conductor_groups(self) -> list:
        seen = []
        for s in self.solids:
            g = s.group
            if g is not None and g not in seen:
                seen.append(g)
        return seen

    def with_symmetry(self, axes) -> "Scene":
        return replace(self, symmetry=tuple(axes))

    # -- checks ---------------------------------------------------------

    def check_overlaps(self, tol: float = 0.1, spacing: float | None = None):
        """Raise GeometryError when two solids interpenetrate by more than tol."""
        for i, a in enumerate(self.solids):
            for b in self.solids[i + 1:]:
                if _overlap(a, b, tol, spacing):
                    raise GeometryError(f"solids {a.name!r} and {b.name!r} overlap")

    def mirror_partner(self, axis: str, tol: float = 1e-6) -> list:
        """Index of the mirror image of each solid, or raise if absent."""
        k = AXES.index(axis)
        out = []
        for s in self.solids:
            pts = _surface_samples(s, 5.0 * tol + 1.0, limit=400)
            pts = pts.copy()
            pts[:, k] *= -1
            match = None
            for j, t in enumerate(self.solids):
                if t.material != s.material:
                    continue
                if np.max(np.abs(t.sdf(pts))) < 1e-6 * max(1.0, np.abs(pts).max()) + tol:
                    if abs(t.volume() - s.volume()) <= 1e-9 * s.volume():
                        match = j
                        break
            if match is None:
                raise GeometryError(f"solid {s.name!r} has no mirror image across {axis}=0")
            out.append(match)
        return out

    def verify_symmetry(self) -> None:
        for ax in self.symmetry:
            self.mirror_partner(ax)

    # -- serialisation ------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "symmetry": list(self.symmetry),
            "info": [[k, v] for k, v in self.info],
            "solids": [_solid_to_dict(s) for s in self.solids],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Scene":
        return cls(tuple(_solid_from_dict(s) for s in d["solids"]), tuple(d.get("symmetry", ())),
                   tuple((k, v) for k, v in d.get("info", [])))

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    @classmethod
    def loads(cls, text: str) -> "Scene":
        return cls.from_dict(json.loads(text))

    def listing(self) -> str:
        """Plain-text table of solids for debugging."""
        lines = ["# name role group material shape parameters origin"]
        for s in self.solids:
            m = s.material
            mat = "conductor" if m.is_conductor else f"dielectric(eps={m.relative_permittivity!r},tand={m.loss_tangent!r})"
            params = " ".join(f"{f.name}={getattr(s.shape, f.name)!r}" for f in fields(s.shape))
            o = " ".join(repr(v) for v in s.pose.origin)
            lines.append(f"{s.name} {s.role} {s.group} {mat} {type(s.shape).__name__}({params}) [{o}]")
        return "\n".join(lines) + "\n"


def _solid_to_dict(s: Solid) -> dict:
    shape = {f.name: _plain(getattr(s.shape, f.name)) for f in fields(s.shape)}
    return {
        "name": s.name,
        "shape": type(s.shape).__name__,
        "params": shape,
        "origin": list(s.pose.origin),
        "rotation": [list(r) for r in s.pose.rotation],
        "material": {"kind": s.material.kind, "relative_permittivity": s.material.relative_permittivity,
                     "loss_tangent": s.material.loss_tangent},
        "role": s.role,
        "label": s.label,
    }


def _plain(v):
    if isinstance(v, tuple):
        return [_plain(x) for x in v]
    return v


def _tupled(v):
    if isinstance(v, list):
        return tuple(_tupled(x) for x in v)
    return v


def _solid_from_dict(d: dict) -> Solid:
    cls = SHAPES[d["shape"]]
    shape = cls(**{k: _tupled(v) for k, v in d["params"].items()})
    pose = Pose(tuple(d["origin"]), tuple(tuple(r) for r in d["rotation"]))
    return Solid(d["name"], shape, pose, Material(**d["material"]), d["role"], d.get("label", ""))


# ---------------------------------------------------------------------------
# overlap detection


def _surface_samples(s: Solid, spacing: float, limit: int = 20000) -> np.ndarray:
    """Points on the surface of a solid (global coordinates)."""
    sh = s.shape
    pts = []
    if isinstance(sh, (Box, Plate)):
        h = np.array((sh.box if isinstance(sh, Plate) else sh).half_extents)
        n = np.clip(np.ceil(2 * h / spacing).astype(int) + 1, 2, int(limit ** 0.5))
        g = [np.linspace(-h[k], h[k], n[k]) for k in range(3)]
        for k in range(3):
            i, j = [a for a in range(3) if a != k]
            A, B = np.meshgrid(g[i], g[j], indexing="ij")
            for sgn in (-1, 1):
                p = np.zeros(A.shape + (3,))
                p[..., i], p[..., j], p[..., k] = A, B, sgn * h[k]
                pts.append(p.reshape(-1, 3))
    elif isinstance(sh, (Cylinder, Tube)):
        radii = [sh.radius] if isinstance(sh, Cylinder) else [sh.inner_radius, sh.outer_radius]
        rmax = max(radii)
        nt = int(np.clip(np.ceil(2 * np.pi * rmax / spacing), 16, 720))
        nz = int(np.clip(np.ceil(sh.length / spacing) + 1, 2, max(2, limit // nt)))
        t = 2 * np.pi * np.arange(nt) / nt
        z = np.linspace(0, sh.length, nz)
        for r in radii:
            T, Z = np.meshgrid(t, z, indexing="ij")
            pts.append(np.stack([r * np.cos(T), r * np.sin(T), Z], -1).reshape(-1, 3))
        rin = 0.0 if isinstance(sh, Cylinder) else sh.inner_radius
        nr = int(np.clip(np.ceil((rmax - rin) / spacing) + 1, 2, 200))
        rr = np.linspace(rin, rmax, nr)
        R, T = np.meshgrid(rr, t, indexing="ij")
        for zc in (0.0, sh.length):
            pts.append(np.stack([R * np.cos(T), R * np.sin(T), np.full_like(R, zc)], -1).reshape(-1, 3))
    elif isinstance(sh, Prism):
        poly = np.array(sh.profile)
        nz = int(np.clip(np.ceil((sh.z1 - sh.z0) / spacing) + 1, 2, 400))
        z = np.linspace(sh.z0, sh.z1, nz)
        ring = []
        for a, b in zip(poly, np.roll(poly, -1, axis=0)):
            m = int(np.clip(np.ceil(np.linalg.norm(b - a) / spacing), 1, 400))
            u = np.arange(m) / m
            ring.append(a + u[:, None] * (b - a))
        ring = np.concatenate(ring)
        for zc in z:
            pts.append(np.column_stack([ring, np.full(len(ring), zc)]))
        lo, hi = poly.min(axis=0), poly.max(axis=0)
        nx = int(np.clip(np.ceil((hi - lo).max() / spacing) + 1, 2, 200))
        X, Y = np.meshgrid(np.linspace(lo[0], hi[0], nx), np.linspace(lo[1], hi[1], nx), indexing="ij")
        cap = np.column_stack([X.ravel(), Y.ravel()])
        cap = cap[sh.sdf(np.column_stack([cap, np.full(len(cap), 0.5 * (sh.z0 + sh.z1))])) <= 1e-9]
        for zc in (sh.z0, sh.z1):
            pts.append(np.column_stack([cap, np.full(len(cap), zc)]))
    elif isinstance(sh, Sphere):
        n = int(np.clip(np.ceil(np.pi * sh.radius / spacing), 8, 200))
        th = np.linspace(0, np.pi, n)
        ph = 2 * np.pi * np.arange(2 * n) / (2 * n)
        T, P = np.meshgrid(th, ph, indexing="ij")
        pts.append(sh.radius * np.stack([np.sin(T) * np.cos(P), np.sin(T) * np.sin(P), np.cos(T)], -1).reshape(-1, 3))
    p = np.concatenate(pts)
    if len(p) > limit:
        p = p[:: int(math.ceil(len(p) / limit))]
    return s.pose.to_global(p)


def _overlap(a: Solid, b: Solid, tol: float, spacing: float | None) -> bool:
    alo, ahi = a.bounds()
    blo, bhi = b.bounds()
    if np.any(alo > bhi + tol) or np.any(blo > ahi + tol):
        return False
    lo = np.maximum(alo, blo) - tol
    hi = np.minimum(ahi, bhi) + tol
    for s, t in ((a, b), (b, a)):
        sp = spacing or max(1.0, 0.02 * float(np.max(hi - lo)))
        p = _surface_samples(s, sp, limit=200000)
        keep = np.all((p >= lo) & (p <= hi), axis=1)
        p = p[keep]
        if len(p) and np.min(t.sdf(p)) < -tol:
            return True
    return False


# ---------------------------------------------------------------------------
# builders


@dataclass(frozen=True)
class BladeTrapParams:
    """Blade trap and fibre-cavity dimensions (um).

    The blade tip distance is chosen so that a 60 V pair-to-pair rf drive
    at 20 MHz gives about 3.1 MHz radial for 40Ca+, and the rf segment
    length so that 150 V on the endcaps gives about 624 kHz axial with
    flush grounded shields in place.
    """

    tip_distance: float = 177.0
    tip_width: float = 22.0
    taper_angle_deg: float = 12.7
    blade_depth: float = 2000.0
    rf_length: float = 2300.0
    endcap_length: float = 1000.0
    endcap_gap: float = 50.0
    fibre_radius: float = 62.5
    fibre_length: float = 1000.0
    fibre_material: Material = FUSED_SILICA
    shield_inner_radius: float = 75.0
    shield_outer_radius: float = 95.0


def blade_profile(p: BladeTrapParams, angle: float = math.pi / 4) -> tuple:
    """Cross-section polygon (global xy) of the blade pointing along ``angle``."""
    half_taper = math.radians(p.taper_angle_deg) / 2
    w0 = p.tip_width / 2
    w1 = w0 + p.blade_depth * math.tan(half_taper)
    r0, r1 = p.tip_distance, p.tip_distance + p.blade_depth
    local = [(r0, -w0), (r1, -w1), (r1, w1), (r0, w0)]
    c, s = math.cos(angle), math.sin(angle)
    return tuple((c * u - s * v, s * u + c * v) for u, v in local)


def _mirror_profile(profile, sx, sy):
    return tuple((sx * x, sy * y) for x, y in profile)


def _x_axis_pose(x0: float, direction: int) -> Pose:
    """Frame with local z along +-x, local x along +y."""
    if direction > 0:
        return Pose.frame((x0, 0.0, 0.0), (0, 1, 0), (0, 0, 1), (1, 0, 0))
    return Pose.frame((x0, 0.0, 0.0), (0, 1, 0), (0, 0, -1), (-1, 0, 0))


def fibre_pair(p: BladeTrapParams, cavity_length: float, with_fibres: bool, with_shields: bool,
               shield_front: float | None = None, height: float = 0.0) -> list:
    """Fibres along x with facets at +-L/2 and optional concentric shields.

    ``shield_front`` is the |x| of the shield front faces; by default they
    are flush with the facets.
    """
    if cavity_length <= 0:
        raise GeometryError("cavity length must be positive")
    half = cavity_length / 2
    front = half if shield_front is None else float(shield_front)
    back = half + p.fibre_length
    out = []
    for side, sgn in (("R", 1), ("L", -1)):
        if with_fibres:
            pose = _x_axis_pose(sgn * half, sgn).translated((0.0, height, 0.0))
            out.append(Solid(f"fibre_{side}", Cylinder(p.fibre_radius, p.fibre_length), pose,
                             p.fibre_material, "DielectricBody"))
        if with_shields:
            if front <= 0:
                raise GeometryError("shield front must lie at positive |x|")
            pose = _x_axis_pose(sgn * front, sgn).translated((0.0, height, 0.0))
            out.append(Solid(f"shield_{side}", Tube(p.shield_inner_radius, p.shield_outer_radius, back - front),
                             pose, Material.conductor(), "FloatingShield", f"shield_{side}"))
    return out


def build_blade_trap(params: BladeTrapParams | None = None, cavity_length: float = 300.0,
                     with_fibres: bool = True, with_shields: bool = True,
                     shield_protrusion: float = 0.0, shield_front: float | None = None,
                     with_rf: bool = True, with_endcaps: bool = True, check: bool = True) -> Scene:
    """Blade trap: four rf blades, eight endcap blades, fibres and shields.

    Parameters
    ----------
    cavity_length : float
        Facet-to-facet distance L; facets sit at x = +-L/2.
    shield_protrusion : float
        Distance by which the shield front extends past the facet towards
        the trap centre.
    shield_front : float, optional
        Explicit |x| of the shield front (overrides the protrusion); used to
        retract fibres inside fixed shields.
    with_rf : bool
        Drop the rf blades when False (heating comparison without rf).
    """
    p = params or BladeTrapParams()
    if shield_protrusion < 0:
        raise GeometryError("shield protrusion must be non-negative")
    if shield_front is None:
        shield_front = cavity_length / 2 - shield_protrusion
    base = blade_profile(p, math.pi / 4)
    quads = (("q1", 1, 1, "RfA"), ("q2", -1, 1, "RfB"), ("q3", -1, -1, "RfA"), ("q4", 1, -1, "RfB"))
    solids = []
    zr = p.rf_length / 2
    ze0 = zr + p.endcap_gap
    ze1 = ze0 + p.endcap_length
    for tag, sx, sy, role in quads:
        prof = _mirror_profile(base, sx, sy)
        if with_rf:
            solids.append(Solid(f"rf_{tag}", Prism(prof, -zr, zr), Pose(), Material.conductor(), role))
        if with_endcaps:
            solids.append(Solid(f"endcap_{tag}_pos", Prism(prof, ze0, ze1), Pose(), Material.conductor(),
                                "Dc", "endcap"))
            solids.append(Solid(f"endcap_{tag}_neg", Prism(prof, -ze1, -ze0), Pose(), Material.conductor(),
                                "Dc", "endcap"))
    if with_fibres or with_shields:
        solids += fibre_pair(p, cavity_length, with_fibres, with_shields, shield_front)
    info = {"kind": "blade", "cavity_length": float(cavity_length), "shield_front": float(shield_front),
            "with_fibres": with_fibres, "with_shields": with_shields}
    scene = Scene(tuple(solids), ("x", "y", "z"), info)
    if check:
        scene.check_overlaps()
    return scene


def build_four_rod_trap(rod_radius: float = 50.0, rod_distance: float = 250.0, length: float = 4000.0,
                        with_shields: bool = False, alpha: float = math.pi / 4,
                        shield_front: float = 150.0, shield_length: float = 1000.0,
                        params: BladeTrapParams | None = None, check: bool = True) -> Scene:
    """Four cylindrical rods along z at angles alpha, pi-alpha, pi+alpha, -alpha.

    Rods at alpha and pi+alpha are RfA, the other two RfB. ``rod_distance``
    is the distance of the rod axes from the trap axis.
    """
    if not rod_distance > rod_radius:
        raise GeometryError("rod distance must exceed the rod radius")
    c, s = rod_distance * math.cos(alpha), rod_distance * math.sin(alpha)
    rods = (("rod_1", c, s, "RfA"), ("rod_2", -c, s, "RfB"), ("rod_3", -c, -s, "RfA"), ("rod_4", c, -s, "RfB"))
    solids = [Solid(n, Cylinder(rod_radius, length), Pose((x, y, -length / 2)), Material.conductor(), role)
              for n, x, y, role in rods]
    if with_shields:
        p = params or BladeTrapParams()
        p = replace(p, fibre_length=shield_length)
        solids += fibre_pair(p, 2 * shield_front, False, True, shield_front)
    info = {"kind": "four_rod", "rod_radius": rod_radius, "rod_distance": rod_distance, "length": length}
    scene = Scene(tuple(solids), ("x", "y", "z"), info)
    if check:
        scene.check_overlaps()
    return scene


def hyperbolic_surrogate(r0: float = 250.0, length: float = 4000.0) -> Scene:
    """Round-rod quadrupole approximating hyperbolic electrodes.

    Rod radius 1.1468 r0 cancels the leading (dodecapole) correction.
    """
    R = 1.1468 * r0
    scene = build_four_rod_trap(R, r0 + R, length)
    return replace(scene, info=tuple(sorted({**scene.meta, "r0": r0}.items())))


@dataclass(frozen=True)
class SurfaceTrapParams:
    """Five-wire surface trap: ground | rf | centre ground | rf | ground.

    Electrode top faces lie in the plane y = 0. Widths in um.
    """

    center_width: float = 80.0
    rf_width: float = 250.0
    gap: float = 5.0
    outer_width: float = 800.0
    length: float = 2400.0
    thickness: float = 5.0


def surface_null_height(p: SurfaceTrapParams) -> float:
    """rf-null height of the gapless, infinitely long five-wire trap."""
    b, a = p.center_width, p.rf_width
    return 0.5 * math.sqrt(b * (b + 2 * a))


def build_surface_trap(params: SurfaceTrapParams | None = None, ion_height: float | None = None,
                       cavity_length: float = 300.0, with_shields: bool = True,
                       blade: BladeTrapParams | None = None, check: bool = True) -> Scene:
    """Planar trap with optional shielded fibres along x at the ion height."""
    p = params or SurfaceTrapParams()
    h = surface_null_height(p) if ion_height is None else float(ion_height)
    if h <= 0:
        raise GeometryError("ion height must be positive")
    g, t = p.gap, p.thickness
    xc = p.center_width / 2
    x_rf0 = xc + g
    x_rf1 = x_rf0 + p.rf_width
    x_g0 = x_rf1 + g
    x_g1 = x_g0 + p.outer_width
    rails = [("center", 0.0, p.center_width, "Ground")]
    for side, sgn in (("R", 1), ("L", -1)):
        rails.append((f"rf_{side}", sgn * (x_rf0 + x_rf1) / 2, p.rf_width, "RfA"))
        rails.append((f"ground_{side}", sgn * (x_g0 + x_g1) / 2, p.outer_width, "Ground"))
    solids = [Solid(f"rail_{n}", Plate(w, p.length, t), Pose((xc_, -t / 2, 0.0)), Material.conductor(), role)
              for n, xc_, w, role in rails]
    if with_shields:
        bp = blade or BladeTrapParams()
        solids += fibre_pair(bp, cavity_length, True, True, None, height=h)
    info = {"kind": "surface", "ion_height": h, "cavity_length": float(cavity_length), "with_shields": with_shields}
    scene = Scene(tuple(solids), ("x", "z"), info)
    if check:
        scene.check_overlaps()
    return scene


def build_sphere(radius: float = 100.0, center=(0.0, 0.0, 0.0), role: str = "Ground",
                 material: Material | None = None) -> Scene:
    mat = material or Material.conductor()
    role = "DielectricBody" if not mat.is_conductor else role
    s = Solid("sphere", Sphere(radius), Pose(tuple(center)), mat, role)
    sym = ("x", "y", "z") if np.allclose(center, 0) else ()
    return Scene((s,), sym, {"kind": "sphere"})


def fibre_side(scene: Scene, target: str) -> list:
    """Names of the fibre and shield on side 'L' or 'R'."""
    t = target.upper()
    if t not in ("L", "R"):
        raise GeometryError("misalignment target must be 'L' or 'R'")
    names = [n for n in (f"fibre_{t}", f"shield_{t}") if n in scene.names]
    if not names:
        raise GeometryError(f"scene has no fibre or shield on side {t}")
    return names


def apply_misalignment(scene: Scene, target: str, offset, check: bool = True) -> Scene:
    """Translate one fibre+shield pair rigidly by ``offset`` (um)."""
    off = np.asarray(offset, dtype=float)
    names = fibre_side(scene, target)
    if not np.any(off):
        return scene
    solids = tuple(s.translated(off) if s.name in names else s for s in scene.solids)
    keep = tuple(a for k, a in enumerate(AXES) if a in scene.symmetry and k != 0 and off[k] == 0.0)
    out = Scene(solids, keep, scene.info + (("misalignment", f"{target}:{off.tolist()}"),))
    if check:
        out.check_overlaps()
    return out
