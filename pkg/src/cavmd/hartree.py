"""Self-consistent mean-field electronic structure of the coupled ensemble.

Every molecule's electron feels, besides its own bare potential, a cavity
displacement field and the mean dipoles of all other molecules.  The
ground state of the ensemble is the fixed point of recomputing each
molecule's ground state in the field of the others' converged mean
dipoles; sweeps update all molecules simultaneously (Jacobi style), which
makes the iteration order-independent and bit-reproducible.

Energy bookkeeping: the reported total is the variational mean-field
energy, with the inter-molecular dipole-dipole sum entering at half
weight.  Summing the dressed eigenvalues instead would double-count that
interaction.  Per-molecule self terms are excluded from the pair sum; the
intra-molecular quadratic polarization term is kept as the full operator
expectation.

Forces are Hellmann-Feynman forces, exact at the variational fixed point.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ScfConvergenceError, StaleSolutionError
from .grid import Grid1D, ground_state_batch, kinetic_operator
from .shin_metiu import (
    ShinMetiuParams,
    electron_potential,
    nuclear_potential,
    nuclear_potential_gradient,
    soft_coulomb,
    soft_coulomb_derivative,
)

ORIENTATION_NORM_TOL = 1e-12

# cavity polarization is fixed along the laboratory z axis
POLARIZATION_AXIS = 2


@dataclass(frozen=True)
class CavityMode:
    """One cavity mode: frequency omega (hartree), bare coupling strength."""

    omega: float
    coupling: float

    def __post_init__(self):
        if self.omega <= 0:
            raise ValueError(f"mode frequency must be positive, got {self.omega}")
        if self.coupling < 0:
            raise ValueError(f"coupling must be >= 0, got {self.coupling}")


@dataclass(frozen=True)
class ScfOptions:
    """Convergence controls for the mean-field iteration.

    The energy alone is a weak stopping criterion: it is stationary at
    the variational fixed point, so its sweep-to-sweep change is
    quadratic in the dipole error.  dipole_tol additionally bounds the
    largest mean-dipole move of the final sweep, which guarantees one
    further sweep cannot shift any <r> by more than it.
    """

    energy_tol: float = 1e-7
    max_iter: int = 200
    mixing: float = 1.0
    dipole_tol: float = 5e-7

    def __post_init__(self):
        if self.energy_tol <= 0 or self.dipole_tol <= 0:
            raise ValueError("energy_tol and dipole_tol must be positive")
        if not 0 < self.mixing <= 1:
            raise ValueError("mixing must be in (0, 1]")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")


@dataclass(frozen=True)
class EnsembleState:
    """All classical degrees of freedom at one instant.

    positions/velocities: per-molecule nuclear coordinate (bohr, a.u.);
    q/p: per-mode displacement coordinate and momentum; orientations:
    per-molecule unit 3-vector giving the molecular axis in the lab frame.
    """

    positions: np.ndarray
    velocities: np.ndarray
    q: np.ndarray
    p: np.ndarray
    orientations: np.ndarray
    time: float = 0.0

    @property
    def n_molecules(self) -> int:
        return self.positions.shape[0]

    @property
    def n_modes(self) -> int:
        return self.q.shape[0]

    def validate(self) -> None:
        n = self.n_molecules
        if self.velocities.shape != (n,):
            raise ValueError("velocities shape does not match positions")
        if self.orientations.shape != (n, 3):
            raise ValueError("orientations must have shape (N, 3)")
        if self.p.shape != self.q.shape:
            raise ValueError("p shape does not match q")
        norms = np.linalg.norm(self.orientations, axis=1)
        if np.any(np.abs(norms - 1.0) > ORIENTATION_NORM_TOL):
            raise ValueError("orientations must be unit vectors")


@dataclass(frozen=True)
class EnergyBreakdown:
    """Additive pieces of the total classical+electronic energy (hartree)."""

    bare: float
    dse_local: float
    coupling: float
    dipole_dipole: float
    photon: float

    @property
    def total(self) -> float:
        return (
            self.bare + self.dse_local + self.coupling
            + self.dipole_dipole + self.photon
        )

    def as_tuple(self) -> tuple[float, ...]:
        return (
            self.bare, self.dse_local, self.coupling,
            self.dipole_dipole, self.photon, self.total,
        )


@dataclass(frozen=True)
class ElectronicSolution:
    """Converged ensemble ground state for one classical configuration."""

    psi: np.ndarray       # (N, n_points) ground-state coefficient vectors
    eps: np.ndarray       # (N,) dressed single-molecule eigenvalues
    r_mean: np.ndarray    # (N,) mean electron coordinate per molecule
    x_mean: np.ndarray    # (N, M) mean electronic polarization per mode
    energy: EnergyBreakdown
    iterations: int
    token: bytes = field(repr=False, default=b"")


def effective_couplings(state: EnsembleState, modes) -> np.ndarray:
    """Per-molecule, per-mode coupling: bare strength times axis projection."""
    lam = np.array([m.coupling for m in modes], dtype=float)
    proj = state.orientations[:, POLARIZATION_AXIS]
    return proj[:, None] * lam[None, :]


def effective_coupling(n: int, alpha: int, state: EnsembleState, modes) -> float:
    """Coupling of molecule n to mode alpha for the current orientation."""
    if not 0 <= n < state.n_molecules:
        raise IndexError(f"molecule index {n} out of range")
    if not 0 <= alpha < len(modes):
        raise IndexError(f"mode index {alpha} out of range")
    return float(
        modes[alpha].coupling * state.orientations[n, POLARIZATION_AXIS]
    )


def nuclear_polarizations(
    state: EnsembleState, modes, charge: float = 1.0
) -> np.ndarray:
    """Projected nuclear polarization per mode; fixed-ion pairs cancel."""
    lam_nm = effective_couplings(state, modes)
    return charge * lam_nm.T @ state.positions


def nuclear_polarization(
    state: EnsembleState, alpha: int, modes, charge: float = 1.0
) -> float:
    return float(nuclear_polarizations(state, modes, charge)[alpha])


def dipole_dipole_energy(x_mean: np.ndarray) -> float:
    """Full inter-molecular double sum of mean electronic polarizations.

    x_mean has shape (N, M).  The n == m terms are excluded; no 1/2
    factor here (the energy breakdown stores half of this value).
    """
    x_mean = np.atleast_2d(np.asarray(x_mean, dtype=float))
    totals = x_mean.sum(axis=0)
    return float(np.sum(totals**2) - np.sum(x_mean**2))


class CavityHartreeSolver:
    """Owns the grid operators and performs SCF solves and force evaluations.

    One solver per trajectory; instances hold no mutable state between
    calls apart from cached geometry-independent matrices.
    """

    def __init__(
        self,
        grid: Grid1D,
        molecule: ShinMetiuParams,
        modes,
        options: ScfOptions | None = None,
    ):
        self.grid = grid
        self.molecule = molecule
        self.modes = list(modes)
        self.options = options or ScfOptions()
        self.kinetic = kinetic_operator(grid, mass=1.0)
        self.omega = np.array([m.omega for m in self.modes], dtype=float)
        self._r = grid.points
        self._r2 = grid.points**2
        self._diag = np.arange(grid.n_points)
        # attraction to the two fixed ions does not depend on R
        self._v_fixed = -(
            soft_coulomb(self._r - molecule.L / 2.0, molecule.R_r)
            + soft_coulomb(self._r + molecule.L / 2.0, molecule.R_l)
        )

    # -- construction of Hamiltonians -------------------------------------

    def _electron_potentials(self, positions: np.ndarray) -> np.ndarray:
        """Electron potential rows for every molecule, shape (N, n_points)."""
        for R in positions:
            self.molecule.check_geometry(float(R))
        moving = soft_coulomb(
            self._r[None, :] - positions[:, None], self.molecule.R_f
        )
        return self._v_fixed[None, :] - moving

    def bare_hamiltonians(self, positions: np.ndarray) -> np.ndarray:
        """Stack of bare electronic Hamiltonians, one per molecule."""
        positions = np.asarray(positions, dtype=float)
        n_mol = positions.shape[0]
        h = np.broadcast_to(self.kinetic, (n_mol, *self.kinetic.shape)).copy()
        h[:, self._diag, self._diag] += self._electron_potentials(positions)
        return h

    def bare_ground_states(
        self, positions: np.ndarray
    ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Ground energies, wavefunctions and <r> of the uncoupled molecules."""
        positions = np.asarray(positions, dtype=float)
        energies, psi = ground_state_batch(self.bare_hamiltonians(positions))
        r_mean = (psi**2) @ self._r
        return energies, psi, r_mean

    def dressed_hamiltonian(
        self, n: int, state: EnsembleState, mean_dipoles: np.ndarray
    ) -> np.ndarray:
        """Dressed electronic Hamiltonian of molecule n.

        mean_dipoles holds the mean electronic polarization of every
        molecule and mode, shape (N, M); molecule n's own entry is
        excluded from the field it feels.  The purely classical photon and
        nuclear constants are not included here.
        """
        state.validate()
        mean_dipoles = np.atleast_2d(np.asarray(mean_dipoles, dtype=float))
        if mean_dipoles.shape != (state.n_molecules, len(self.modes)):
            raise ValueError(
                f"mean_dipoles must have shape (N, M) = "
                f"({state.n_molecules}, {len(self.modes)})"
            )
        if not 0 <= n < state.n_molecules:
            raise IndexError(f"molecule index {n} out of range")
        lam_nm = effective_couplings(state, self.modes)
        x_nuc = nuclear_polarizations(state, self.modes, self.molecule.Z)
        others = mean_dipoles.sum(axis=0) - mean_dipoles[n]
        coeff = x_nuc - self.omega * state.q + others
        h = self.kinetic.copy()
        h[self._diag, self._diag] += electron_potential(
            self.grid, float(state.positions[n]), self.molecule
        )
        # linear field term of each mode plus the quadratic polarization term
        h[self._diag, self._diag] += (
            -(lam_nm[n] * coeff).sum() * self._r
            + 0.5 * (lam_nm[n] ** 2).sum() * self._r2
        )
        return h

    # -- self-consistent field --------------------------------------------

    def scf_solve(
        self,
        state: EnsembleState,
        guess: ElectronicSolution | None = None,
        options: ScfOptions | None = None,
        guess_r_mean: np.ndarray | None = None,
    ) -> ElectronicSolution:
        """Iterate the mean-field map to its fixed point.

        Converged when one full sweep changes the total variational energy
        by less than energy_tol.  Raises ScfConvergenceError at the sweep
        cap; never returns a stale solution.  The starting mean dipoles
        come from guess_r_mean, else from a previous solution, else from
        the bare ground states.
        """
        state.validate()
        opts = options or self.options
        n_mol = state.n_molecules
        lam_nm = effective_couplings(state, self.modes)
        x_nuc = nuclear_polarizations(state, self.modes, self.molecule.Z)
        e_photon = self._photon_energy(state, x_nuc)

        # geometry-static part of the dressed operator: bare + quadratic term
        # (this also enforces the |R| < L/2 domain)
        h_static = self.bare_hamiltonians(state.positions)
        half = self.molecule.L / 2.0
        e_nuc = float(
            np.sum(1.0 / (half - state.positions) + 1.0 / (half + state.positions))
        )
        dse_half = 0.5 * (lam_nm**2).sum(axis=1)
        h_static[:, self._diag, self._diag] += np.outer(dse_half, self._r2)

        if guess_r_mean is not None:
            r_mean = np.asarray(guess_r_mean, dtype=float)
        elif guess is not None:
            r_mean = guess.r_mean
        else:
            _, _, r_mean = self.bare_ground_states(state.positions)
        if r_mean.shape != (n_mol,):
            raise ValueError("starting guess has wrong number of molecules")
        x_mean = -lam_nm * r_mean[:, None]

        mixing = opts.mixing
        drive = x_nuc - self.omega * state.q
        h_work = np.empty_like(h_static)
        e_prev = None
        d_prev = 0.0
        flips = 0
        x_in_prev = None
        x_out_prev = None
        for sweep in range(1, opts.max_iter + 1):
            coeff = drive[None, :] + (x_mean.sum(axis=0)[None, :] - x_mean)
            lin = -(lam_nm * coeff).sum(axis=1)
            np.copyto(h_work, h_static)
            h_work[:, self._diag, self._diag] += lin[:, None] * self._r[None, :]
            eps, psi = ground_state_batch(h_work)
            dens = psi**2
            r_new = dens @ self._r
            r2_new = dens @ self._r2
            x_new = -lam_nm * r_new[:, None]
            # <H_bare> follows from the dressed eigenvalue without another
            # matrix contraction: the dressing is diagonal
            e_bare_elec = eps - lin * r_new - dse_half * r2_new
            energy = EnergyBreakdown(
                bare=float(e_bare_elec.sum() + e_nuc),
                dse_local=float(dse_half @ r2_new),
                coupling=float((drive[None, :] * x_new).sum()),
                dipole_dipole=0.5 * dipole_dipole_energy(x_new),
                photon=e_photon,
            )
            if e_prev is not None:
                d_e = energy.total - e_prev
                d_r = float(np.max(np.abs(r_new - r_mean))) if n_mol else 0.0
                if abs(d_e) < opts.energy_tol and d_r < opts.dipole_tol:
                    return ElectronicSolution(
                        psi=psi,
                        eps=eps,
                        r_mean=r_new,
                        x_mean=x_new,
                        energy=energy,
                        iterations=sweep,
                        token=self._token(state, lam_nm),
                    )
                # damp the dipole update if the energy keeps oscillating
                if d_e * d_prev < 0:
                    flips += 1
                    if flips >= 5 and mixing == 1.0:
                        mixing = 0.5
                else:
                    flips = 0
                d_prev = d_e
            e_prev = energy.total
            r_mean = r_new
            if mixing < 1.0:
                x_mean = mixing * x_new + (1.0 - mixing) * x_mean
            else:
                # secant update on the dipole residual: removes the dominant
                # linear mode of the mean-field map, which cuts the sweep
                # count roughly in half at production couplings; falls back
                # to a plain step when the residual history is degenerate
                x_next = x_new
                if x_in_prev is not None:
                    res = x_new - x_mean
                    d_res = res - (x_out_prev - x_in_prev)
                    denom = float(np.vdot(d_res, d_res))
                    if denom > 1e-300:
                        theta = float(np.vdot(res, d_res)) / denom
                        theta = min(max(theta, -10.0), 1.0)
                        x_next = x_new - theta * (x_new - x_out_prev)
                x_in_prev = x_mean
                x_out_prev = x_new
                x_mean = x_next
        raise ScfConvergenceError(
            f"SCF did not converge in {opts.max_iter} sweeps "
            f"(last |dE| vs tol {opts.energy_tol})"
        )

    def evaluate_energy(
        self, state: EnsembleState, psi: np.ndarray
    ) -> EnergyBreakdown:
        """Mean-field energy of arbitrary normalized trial orbitals."""
        state.validate()
        psi = np.atleast_2d(np.asarray(psi, dtype=float))
        lam_nm = effective_couplings(state, self.modes)
        x_nuc = nuclear_polarizations(state, self.modes, self.molecule.Z)
        h_bare = self.bare_hamiltonians(state.positions)
        dens = psi**2
        r_mean = dens @ self._r
        r2_mean = dens @ self._r2
        x_mean = -lam_nm * r_mean[:, None]
        drive = x_nuc - self.omega * state.q
        e_nuc = sum(
            nuclear_potential(float(R), self.molecule) for R in state.positions
        )
        return EnergyBreakdown(
            bare=float(np.einsum("ni,nij,nj->", psi, h_bare, psi) + e_nuc),
            dse_local=float(0.5 * (lam_nm**2).sum(axis=1) @ r2_mean),
            coupling=float((drive[None, :] * x_mean).sum()),
            dipole_dipole=0.5 * dipole_dipole_energy(x_mean),
            photon=self._photon_energy(state, x_nuc),
        )

    # -- forces ------------------------------------------------------------

    def nuclear_forces(
        self, sol: ElectronicSolution, state: EnsembleState
    ) -> np.ndarray:
        """Deterministic force on every moving nucleus (hartree/bohr)."""
        self._check_fresh(sol, state)
        p = self.molecule
        positions = state.positions
        lam_nm = effective_couplings(state, self.modes)
        x_nuc = nuclear_polarizations(state, self.modes, p.Z)
        # bare nuclear repulsion and Hellmann-Feynman electronic attraction
        f_nuc = -np.array(
            [nuclear_potential_gradient(float(R), p) for R in positions]
        )
        kern = -soft_coulomb_derivative(
            self._r[None, :] - positions[:, None], p.R_f
        )
        f_elec = ((sol.psi**2) * kern).sum(axis=1)
        # cavity reaction: displacement field minus total ensemble polarization
        field = self.omega * state.q - x_nuc - sol.x_mean.sum(axis=0)
        f_cav = p.Z * (lam_nm * field[None, :]).sum(axis=1)
        return f_nuc + f_elec + f_cav

    def nuclear_force(
        self, n: int, sol: ElectronicSolution, state: EnsembleState
    ) -> float:
        if not 0 <= n < state.n_molecules:
            raise IndexError(f"molecule index {n} out of range")
        return float(self.nuclear_forces(sol, state)[n])

    def photon_forces(
        self, sol: ElectronicSolution, state: EnsembleState
    ) -> np.ndarray:
        """Force on each displacement coordinate (unit photon mass)."""
        self._check_fresh(sol, state)
        x_nuc = nuclear_polarizations(state, self.modes, self.molecule.Z)
        return -self.omega**2 * state.q + self.omega * (
            x_nuc + sol.x_mean.sum(axis=0)
        )

    def photon_force(
        self, alpha: int, sol: ElectronicSolution, state: EnsembleState
    ) -> float:
        if not 0 <= alpha < len(self.modes):
            raise IndexError(f"mode index {alpha} out of range")
        return float(self.photon_forces(sol, state)[alpha])

    def refresh_photon_energy(
        self, sol: ElectronicSolution, state: EnsembleState
    ) -> EnergyBreakdown:
        """Breakdown with the photon term recomputed for state's momenta.

        The electronic solution is insensitive to velocities and photon
        momenta, but the photon energy contains p^2/2; after the
        integrator's momentum updates the stored term would be stale.
        """
        self._check_fresh(sol, state)
        from dataclasses import replace as _replace

        x_nuc = nuclear_polarizations(state, self.modes, self.molecule.Z)
        return _replace(sol.energy, photon=self._photon_energy(state, x_nuc))

    # -- diagnostics ---------------------------------------------------------

    def local_polarization_shifts(
        self, state: EnsembleState, sol: ElectronicSolution
    ) -> np.ndarray:
        """Mean-electron displacement relative to the uncoupled molecule.

        Solves the bare problem at the instantaneous geometries; purely a
        diagnostic, never fed back into the dynamics.
        """
        self._check_fresh(sol, state)
        _, _, r_bare = self.bare_ground_states(state.positions)
        return sol.r_mean - r_bare

    def local_polarization_shift(
        self, n: int, state: EnsembleState, sol: ElectronicSolution
    ) -> float:
        if not 0 <= n < state.n_molecules:
            raise IndexError(f"molecule index {n} out of range")
        return float(self.local_polarization_shifts(state, sol)[n])

    # -- helpers -------------------------------------------------------------

    def _photon_energy(self, state: EnsembleState, x_nuc: np.ndarray) -> float:
        shifted = state.q - x_nuc / self.omega if len(self.modes) else state.q
        return float(
            0.5 * np.sum(state.p**2) + 0.5 * np.sum(self.omega**2 * shifted**2)
        )

    def _token(self, state: EnsembleState, lam_nm: np.ndarray) -> bytes:
        # electronic problem depends on positions, q and couplings only
        return (
            state.positions.tobytes()
            + state.q.tobytes()
            + lam_nm.tobytes()
        )

    def _check_fresh(
        self, sol: ElectronicSolution, state: EnsembleState
    ) -> None:
        lam_nm = effective_couplings(state, self.modes)
        if sol.token != self._token(state, lam_nm):
            raise StaleSolutionError(
                "electronic solution does not correspond to this state"
            )
