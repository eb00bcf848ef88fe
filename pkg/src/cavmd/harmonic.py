"""Analytic normal-mode model of harmonic molecules in a cavity.

Serves as an independent cross-check of the full simulator: N identical
harmonic molecules (vibration omega_vib, dipole derivative mu_prime,
static electronic polarizability alpha_e) couple to one cavity mode
through the squared-polarization Hamiltonian.  The electronic coordinates
respond much faster than anything else, so they are eliminated exactly by
a Schur complement of the stiffness matrix, leaving an (N+1)-dimensional
mass-weighted Hessian over the nuclear coordinates and the displacement
coordinate.

With s = 1 / (1 + alpha_e * sum_n lam_n^2) the elimination multiplies
every coupling-generated stiffness entry by s:

    nuclear block   omega_vib^2 delta_nm + lam_n lam_m mu'^2 s / m
    nuclear-cavity  -omega_c lam_n mu' s / sqrt(m)
    cavity          omega_c^2 s

so the effective cavity frequency is redshifted by 1/sqrt(1 + alpha_e
sum lam_n^2), which is how the ensemble polarizability detunes the mode.
The elimination becomes exact as the electron mass goes to zero at fixed
polarizability; `full_coordinate_hessian` provides the un-eliminated
(2N+1)-coordinate model for verifying exactly that.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ImaginaryFrequencyError
from .grid import Grid1D, kinetic_operator
from .shin_metiu import (
    ShinMetiuParams,
    bare_electronic_hamiltonian,
    bare_surface_energy,
    find_surface_minimum,
)


@dataclass(frozen=True)
class HarmonicEnsembleParams:
    n_molecules: int
    omega_vib: float
    mu_prime: float
    mass: float
    omega_cavity: float
    coupling: float
    alpha_e: float = 0.0

    def __post_init__(self):
        if self.n_molecules < 1:
            raise ValueError("n_molecules must be >= 1")
        if self.omega_vib <= 0 or self.omega_cavity <= 0 or self.mass <= 0:
            raise ValueError("frequencies and mass must be positive")
        if self.coupling < 0 or self.alpha_e < 0:
            raise ValueError("coupling and alpha_e must be >= 0")


@dataclass(frozen=True)
class NormalModes:
    """Mode frequencies (ascending) with the cavity weight of each mode."""

    frequencies: np.ndarray
    participation: np.ndarray

    def polaritons(self) -> tuple[float, float]:
        """Frequencies of the two modes with the largest cavity weight."""
        top = np.argsort(self.participation)[-2:]
        lo, hi = sorted(self.frequencies[top])
        return float(lo), float(hi)


def _couplings(p: HarmonicEnsembleParams, couplings) -> np.ndarray:
    if couplings is None:
        return np.full(p.n_molecules, p.coupling, dtype=float)
    couplings = np.asarray(couplings, dtype=float)
    if couplings.shape != (p.n_molecules,):
        raise ValueError("couplings must have one entry per molecule")
    return couplings


def build_hessian(p: HarmonicEnsembleParams, couplings=None) -> np.ndarray:
    """Mass-weighted (N+1)x(N+1) Hessian after electronic elimination.

    `couplings` optionally gives per-molecule effective couplings (e.g.
    orientation-projected values); by default all molecules couple with
    p.coupling.
    """
    lam = _couplings(p, couplings)
    n = p.n_molecules
    s = 1.0 / (1.0 + p.alpha_e * float(lam @ lam))
    k = np.empty((n + 1, n + 1))
    k[:n, :n] = np.outer(lam, lam) * (p.mu_prime**2 * s / p.mass)
    k[:n, :n] += np.diag(np.full(n, p.omega_vib**2))
    cross = -p.omega_cavity * lam * p.mu_prime * s / np.sqrt(p.mass)
    k[:n, n] = cross
    k[n, :n] = cross
    k[n, n] = p.omega_cavity**2 * s
    return k


def full_coordinate_hessian(
    p: HarmonicEnsembleParams, couplings=None, electron_mass: float = 1.0
) -> np.ndarray:
    """Un-eliminated (2N+1)-coordinate mass-weighted Hessian.

    Each molecule carries an explicit harmonic electronic coordinate of
    the given mass whose stiffness reproduces the static polarizability
    alpha_e.  Coordinate order: nuclei, electrons, cavity.
    """
    if p.alpha_e <= 0:
        raise ValueError("full model needs alpha_e > 0")
    if electron_mass <= 0:
        raise ValueError("electron_mass must be positive")
    lam = _couplings(p, couplings)
    n = p.n_molecules
    dim = 2 * n + 1
    # total polarization in mass-weighted coordinates is b @ x
    b = np.zeros(dim)
    b[:n] = lam * p.mu_prime / np.sqrt(p.mass)
    b[n : 2 * n] = lam / np.sqrt(electron_mass)
    k = np.outer(b, b)
    k[np.arange(n), np.arange(n)] += p.omega_vib**2
    k[np.arange(n, 2 * n), np.arange(n, 2 * n)] += 1.0 / (electron_mass * p.alpha_e)
    k[dim - 1, dim - 1] += p.omega_cavity**2
    k[dim - 1, :] -= p.omega_cavity * b
    k[:, dim - 1] -= p.omega_cavity * b
    return k


def normal_modes(hessian: np.ndarray, cavity_index: int = -1) -> NormalModes:
    """Frequencies and cavity participation of a mass-weighted Hessian."""
    evals, evecs = np.linalg.eigh(hessian)
    if np.any(evals < 0):
        raise ImaginaryFrequencyError(
            f"negative Hessian eigenvalue {evals.min()}: unphysical parameters"
        )
    return NormalModes(
        frequencies=np.sqrt(evals),
        participation=evecs[cavity_index, :] ** 2,
    )


def polariton_prediction(
    p: HarmonicEnsembleParams, couplings=None
) -> NormalModes:
    """Normal modes of the eliminated model; LP/UP via NormalModes.polaritons."""
    return normal_modes(build_hessian(p, couplings))


@dataclass(frozen=True)
class ExtractedMoleculeParams:
    """Harmonic-limit parameters measured numerically from the grid model."""

    r_min: float
    omega_vib: float
    mu_prime: float
    alpha_e: float


def extract_molecule_params(
    grid: Grid1D,
    molecule: ShinMetiuParams,
    displacement: float = 1e-3,
    field: float = 1e-4,
) -> ExtractedMoleculeParams:
    """Measure omega_vib, mu_prime and alpha_e at the bare-surface minimum.

    omega_vib comes from the curvature of the bare surface, mu_prime from
    the slope of the total dipole, alpha_e from the mean-electron response
    to a small uniform potential slope added to the bare Hamiltonian.
    """
    kin = kinetic_operator(grid, mass=1.0)
    r_min = find_surface_minimum(grid, molecule)

    e_plus = bare_surface_energy(grid, r_min + displacement, molecule, kin)
    e_zero = bare_surface_energy(grid, r_min, molecule, kin)
    e_minus = bare_surface_energy(grid, r_min - displacement, molecule, kin)
    curvature = (e_plus - 2.0 * e_zero + e_minus) / displacement**2
    omega_vib = float(np.sqrt(curvature / molecule.M))

    def mean_r(R: float, eps: float = 0.0) -> float:
        h = bare_electronic_hamiltonian(grid, R, molecule, kin)
        if eps:
            h = h + np.diag(eps * grid.points)
        _, vecs = np.linalg.eigh(h)
        psi = vecs[:, 0]
        return float(psi @ (grid.points * psi))

    d_r = (mean_r(r_min + displacement) - mean_r(r_min - displacement)) / (
        2.0 * displacement
    )
    mu_prime = molecule.Z - d_r

    alpha_e = -(mean_r(r_min, +field) - mean_r(r_min, -field)) / (2.0 * field)
    return ExtractedMoleculeParams(
        r_min=r_min, omega_vib=omega_vib, mu_prime=float(mu_prime),
        alpha_e=float(alpha_e),
    )
