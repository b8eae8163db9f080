"""Closed-form cavity QED design relations for fibre Fabry-Perot cavities.

All lengths are in micrometres. The cooperativity of a symmetric cavity with
mirror radius of curvature ``R_c`` and length ``L`` is written through the
normalised length ``xi = L / (2 R_c)``, which runs from 0 (planar limit) to 1
(concentric limit).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class UnstableCavityError(ValueError):
    """Raised when a cavity geometry lies outside the stability range."""


@dataclass(frozen=True)
class CavityGeometry:
    """Symmetric two-mirror cavity.

    Parameters
    ----------
    R_c : float
        Mirror radius of curvature in um.
    L : float
        Mirror separation in um.
    finesse : float
        Cavity finesse.
    """

    R_c: float
    L: float
    finesse: float = 1.0

    def __post_init__(self):
        if not self.R_c > 0:
            raise UnstableCavityError(f"radius of curvature must be positive, got {self.R_c}")
        if not self.finesse > 0:
            raise ValueError(f"finesse must be positive, got {self.finesse}")
        xi = self.xi
        if not 0.0 < xi < 1.0:
            raise UnstableCavityError(f"xi = L/(2 R_c) = {xi} outside (0, 1)")

    @property
    def xi(self) -> float:
        return self.L / (2.0 * self.R_c)

    @classmethod
    def from_xi(cls, R_c: float, xi: float, finesse: float = 1.0) -> "CavityGeometry":
        return cls(R_c=R_c, L=2.0 * R_c * xi, finesse=finesse)


@dataclass(frozen=True)
class TransitionSpec:
    """Optical transition used for cavity coupling.

    ``eta`` is the product of branching ratio and wavelength (um); it is the
    only atomic input the cooperativity needs.
    """

    species: str
    transition: str
    wavelength: float
    alpha: float

    def __post_init__(self):
        if not self.wavelength > 0:
            raise ValueError("wavelength must be positive")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("branching ratio must lie in [0, 1]")

    @property
    def eta(self) -> float:
        return self.alpha * self.wavelength


# Species, transition label, wavelength (um), branching ratio.
_TABLE = (
    ("Ca+", "S1/2-P1/2", 0.397, 0.936),
    ("Ca+", "D5/2-P3/2", 0.854, 0.059),
    ("Sr+", "S1/2-P1/2", 0.422, 0.941),
    ("Sr+", "D5/2-P3/2", 1.033, 0.053),
    ("Ba+", "S1/2-P1/2", 0.493, 0.729),
    ("Ba+", "D5/2-P3/2", 0.614, 0.215),
    ("Yb+", "S1/2-P1/2", 0.370, 0.995),
    ("Yb+", "D3/2-D[3/2]1/2", 0.935, 0.018),
)

# Rounded eta values as tabulated in the literature (um).
TABULATED_ETA = (0.372, 0.050, 0.397, 0.055, 0.359, 0.132, 0.368, 0.017)


def species_table() -> list[TransitionSpec]:
    """Return the eight common ion transitions with recomputed eta."""
    return [TransitionSpec(s, t, lam, a) for s, t, lam, a in _TABLE]


def transition(species: str, label: str) -> TransitionSpec:
    for row in species_table():
        if row.species == species and row.transition == label:
            return row
    raise KeyError(f"unknown transition {species} {label}")


def waist(geom: CavityGeometry, wavelength: float) -> float:
    """TEM00 waist radius (um) at the cavity centre."""
    half = geom.L / 2.0
    return math.sqrt(wavelength / math.pi) * (half * (geom.R_c - half)) ** 0.25


def cooperativity(geom: CavityGeometry, tr: TransitionSpec) -> float:
    """Cooperativity from finesse, curvature, normalised length and eta."""
    xi = geom.xi
    return 3.0 * geom.finesse / math.pi**2 * tr.eta / (geom.R_c * math.sqrt(xi * (1.0 - xi)))


def cooperativity_from_waist(geom: CavityGeometry, tr: TransitionSpec) -> float:
    """Cooperativity via the mode waist, C = 3 alpha F / pi^3 (lambda/w0)^2.

    Independent route used to cross-check :func:`cooperativity`.
    """
    w0 = waist(geom, tr.wavelength)
    return 3.0 * tr.alpha * geom.finesse / math.pi**3 * (tr.wavelength / w0) ** 2


def emission_probability(C: float) -> float:
    """Probability that the excited ion emits into the cavity mode."""
    if C < 0:
        raise ValueError("cooperativity must be non-negative")
    if math.isinf(C):
        return 1.0
    return 2.0 * C / (2.0 * C + 1.0)


def c_over_eta(R_c, finesse, xi):
    """Vectorised C/eta in 1/um."""
    R_c = np.asarray(R_c, dtype=float)
    finesse = np.asarray(finesse, dtype=float)
    xi = np.asarray(xi, dtype=float)
    # map xi onto its complement in [0.5, 1], where 1 - hi is exact, so that
    # xi and the rounded 1 - xi give bit-identical results
    hi = np.where(xi < 0.5, 1.0 - xi, xi)
    lo = 1.0 - hi
    return 3.0 * finesse / np.pi**2 / (R_c * np.sqrt(lo * hi))


@dataclass(frozen=True)
class DesignGrid:
    R_c: float
    finesse: np.ndarray
    xi: np.ndarray
    c_over_eta: np.ndarray  # shape (n_finesse, n_xi)

    def to_rows(self):
        for i, f in enumerate(self.finesse):
            for j, x in enumerate(self.xi):
                yield float(f), float(x), float(self.c_over_eta[i, j])


def design_grid(R_c: float, finesse_range=(1e4, 1e6), xi_range=(1e-3, 1 - 1e-3),
                resolution=(121, 199), log_finesse=True) -> DesignGrid:
    """Fill a (finesse, xi) grid with C/eta for a fixed curvature.

    The xi axis is built symmetric about 1/2 so that the grid is exactly
    mirror-symmetric under xi -> 1 - xi.
    """
    nf, nx = resolution
    if log_finesse:
        fin = np.logspace(math.log10(finesse_range[0]), math.log10(finesse_range[1]), nf)
    else:
        fin = np.linspace(finesse_range[0], finesse_range[1], nf)
    lo = xi_range[0]
    half = np.linspace(lo, 0.5, (nx + 1) // 2)
    if nx % 2:
        xi = np.concatenate([half, (1.0 - half[:-1])[::-1]])
    else:
        xi = np.concatenate([half[:-1], (1.0 - half[:-1])[::-1]])
    grid = c_over_eta(R_c, fin[:, None], xi[None, :])
    return DesignGrid(R_c=R_c, finesse=fin, xi=xi, c_over_eta=grid)


def finesse_for_threshold(R_c: float, xi: float, threshold: float = 100.0) -> float:
    """Finesse at which C/eta reaches ``threshold`` (1/um)."""
    return threshold * math.pi**2 * R_c * math.sqrt(xi * (1.0 - xi)) / 3.0


def xi_window_for_threshold(R_c: float, finesse: float, threshold: float = 100.0):
    """Range of xi outside which C/eta exceeds ``threshold``.

    Returns ``(xi_lo, xi_hi)`` such that C/eta >= threshold exactly for
    ``xi <= xi_lo`` or ``xi >= xi_hi``; ``None`` when the threshold is met
    for every xi.
    """
    # xi(1-xi) <= p where p = (3 F / (pi^2 R_c threshold))^2
    p = (3.0 * finesse / (math.pi**2 * R_c * threshold)) ** 2
    if p >= 0.25:
        return None
    root = math.sqrt(0.25 - p)
    return 0.5 - root, 0.5 + root
