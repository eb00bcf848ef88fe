"""The Shin-Metiu model molecule.

One proton (charge +1, mass 1836) moves on a line between two fixed ions a
distance L apart; a single electron interacts with all three centers
through erf-softened Coulomb attractions.  The fixed ions repel the proton
with bare 1/r terms, so the proton must stay strictly inside (-L/2, L/2).

All functions are pure; analytic derivatives are provided wherever a force
is needed, with series expansions taking over near coincident coordinates
so forces stay continuous when a grid point crosses the proton position.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import erf

from .errors import GeometryError
from .grid import Grid1D

TWO_OVER_SQRT_PI = 2.0 / np.sqrt(np.pi)

# below this fraction of the softening length the erf kernels switch to
# their Taylor series (exact to machine precision there)
_SERIES_CUTOFF = 1e-4


@dataclass(frozen=True)
class ShinMetiuParams:
    """Model parameters in atomic units."""

    L: float = 9.45
    R_f: float = 1.511
    R_l: float = 1.511
    R_r: float = 1.511
    M: float = 1836.0
    Z: float = 1.0

    def __post_init__(self):
        for name in ("L", "R_f", "R_l", "R_r", "M"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    def check_geometry(self, R: float) -> None:
        """Hard wall: the bare nuclear potential diverges at |R| = L/2."""
        if not abs(R) < self.L / 2.0:
            raise GeometryError(
                f"nucleus at R={R} outside |R| < L/2 = {self.L / 2.0}"
            )


def soft_coulomb(d, r_soft: float):
    """erf(|d|/r_soft)/|d| with its analytic limit 2/(sqrt(pi) r_soft) at 0.

    Even and smooth in d; accepts scalars or arrays.
    """
    if r_soft <= 0:
        raise ValueError("r_soft must be positive")
    d = np.asarray(d, dtype=float)
    u = d / r_soft
    small = np.abs(u) < _SERIES_CUTOFF
    safe = np.where(small, 1.0, d)
    out = erf(np.abs(safe) / r_soft) / np.abs(safe)
    u2 = u * u
    series = (TWO_OVER_SQRT_PI / r_soft) * (1.0 - u2 / 3.0 + u2 * u2 / 10.0)
    out = np.where(small, series, out)
    return float(out) if out.ndim == 0 else out


def soft_coulomb_derivative(d, r_soft: float):
    """d/dd of soft_coulomb; odd in d.

    The closed form (gaussian*d - erf)/d**2 cancels catastrophically near
    d = 0, so a Taylor series is used below the cutoff.
    """
    d = np.asarray(d, dtype=float)
    u = d / r_soft
    small = np.abs(u) < _SERIES_CUTOFF
    safe = np.where(small, 1.0, d)
    gauss = TWO_OVER_SQRT_PI / r_soft * np.exp(-(safe / r_soft) ** 2)
    out = (gauss * safe - erf(safe / r_soft)) / safe**2
    series = (TWO_OVER_SQRT_PI / r_soft**2) * (-2.0 * u / 3.0 + 2.0 * u**3 / 5.0)
    out = np.where(small, series, out)
    return float(out) if out.ndim == 0 else out


def electron_potential(grid: Grid1D, R: float, p: ShinMetiuParams) -> np.ndarray:
    """Attractive potential felt by the electron at each grid point."""
    p.check_geometry(R)
    r = grid.points
    return -(
        soft_coulomb(r - R, p.R_f)
        + soft_coulomb(r - p.L / 2.0, p.R_r)
        + soft_coulomb(r + p.L / 2.0, p.R_l)
    )


def nuclear_potential(R: float, p: ShinMetiuParams) -> float:
    """Repulsion of the moving nucleus by the two fixed ions."""
    p.check_geometry(R)
    half = p.L / 2.0
    return 1.0 / (half - R) + 1.0 / (half + R)


def nuclear_potential_gradient(R: float, p: ShinMetiuParams) -> float:
    """Exact derivative of nuclear_potential with respect to R."""
    p.check_geometry(R)
    half = p.L / 2.0
    return 1.0 / (half - R) ** 2 - 1.0 / (half + R) ** 2


def electron_nuclear_force_kernel(
    grid: Grid1D, R: float, p: ShinMetiuParams
) -> np.ndarray:
    """-d/dR of the electron-nucleus attraction, evaluated on the grid.

    Contracting the kernel with the electron density gives the
    Hellmann-Feynman force contribution of the electron on the nucleus.
    Only the moving-ion term depends on R.
    """
    p.check_geometry(R)
    # V_en(r;R) contains -soft_coulomb(r-R); d/dR gives +derivative,
    # so -dV/dR = -soft_coulomb_derivative(r-R).
    return -soft_coulomb_derivative(grid.points - R, p.R_f)


def molecular_dipole(R: float, r_mean: float, p: ShinMetiuParams) -> float:
    """Total molecular dipole Z*R - <r>; the fixed-ion pair cancels."""
    return p.Z * R - r_mean


def bare_electronic_hamiltonian(
    grid: Grid1D, R: float, p: ShinMetiuParams, kinetic: np.ndarray | None = None
) -> np.ndarray:
    """Kinetic + electron-nuclear attraction for one molecule at geometry R.

    Pass a precomputed kinetic matrix to skip rebuilding it in hot loops.
    """
    from .grid import kinetic_operator

    if kinetic is None:
        kinetic = kinetic_operator(grid, mass=1.0)
    h = kinetic.copy()
    h[np.diag_indices_from(h)] += electron_potential(grid, R, p)
    return h


def bare_surface_energy(
    grid: Grid1D, R: float, p: ShinMetiuParams, kinetic: np.ndarray | None = None
) -> float:
    """Uncoupled Born-Oppenheimer energy: electronic ground state + nuclear."""
    h = bare_electronic_hamiltonian(grid, R, p, kinetic)
    return float(np.linalg.eigvalsh(h)[0]) + nuclear_potential(R, p)


def find_surface_minimum(grid: Grid1D, p: ShinMetiuParams) -> float:
    """Locate the minimum of the bare surface in the positive-R well.

    The surface is symmetric under R -> -R; the positive well is used by
    convention wherever a single reference geometry is needed.
    """
    from scipy.optimize import minimize_scalar

    from .grid import kinetic_operator

    kin = kinetic_operator(grid, mass=1.0)
    scan = np.linspace(0.05, p.L / 2.0 - 0.5, 60)
    energies = [bare_surface_energy(grid, float(R), p, kin) for R in scan]
    best = int(np.argmin(energies))
    lo = scan[max(best - 1, 0)]
    hi = scan[min(best + 1, len(scan) - 1)]
    res = minimize_scalar(
        lambda R: bare_surface_energy(grid, float(R), p, kin),
        bounds=(lo, hi),
        method="bounded",
        options={"xatol": 1e-10},
    )
    return float(res.x)
