"""Electrostatic and cavity design toolkit for ion traps with fibre cavities."""

import os as _os

# the TBB layer shipped with some distributions is too old for numba; the
# OpenMP pool behaves identically for the kernels here
_os.environ.setdefault("NUMBA_THREADING_LAYER", "omp")

__version__ = "0.1.0"
