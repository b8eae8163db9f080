"""Physical constants and unit helpers.

Lengths inside the toolkit are micrometres, potentials volts, times seconds.
Conversions to SI happen at the edges (field values are reported in V/m).
"""

from __future__ import annotations

from scipy import constants as _c

E_CHARGE = _c.e
EPS0 = _c.epsilon_0
K_B = _c.k
HBAR = _c.hbar
AMU = _c.physical_constants["atomic mass constant"][0]

UM = 1e-6

# 1/(4 pi eps0) in V*m/C
COULOMB_K = 1.0 / (4.0 * _c.pi * EPS0)

# Surface density of 1 e/um^2 expressed in the solver's scaled units.
# The solver unknown is s = sigma / (4 pi eps0) in V/um; sigma in C/um^2
# divided by eps0 in F/um gives V/um.
EPS0_PER_UM = EPS0 * UM


def surface_density_to_scaled(density_e_per_um2: float) -> float:
    """Convert a surface charge density in e/um^2 to solver units (V/um)."""
    return density_e_per_um2 * E_CHARGE / (4.0 * _c.pi * EPS0_PER_UM)


def point_charge_strength(charge: float) -> float:
    """Coulomb prefactor q/(4 pi eps0) in V*um for a charge in coulomb."""
    return charge * COULOMB_K / UM
