"""Thermostatted propagation of nuclei, displacement coordinates and
molecular orientations.

The integrator is the stochastic-velocity scheme of Bussi and Parrinello:
an Ornstein-Uhlenbeck half-map on every velocity, a velocity-Verlet
kick-drift-kick with a fresh self-consistent solve after the drift, and a
second OU half-map.  With zero friction and temperature the step reduces
exactly to velocity Verlet.  Photon coordinates carry unit mass and are
propagated by the identical scheme.

Orientations perform overdamped rotational Brownian motion: a
forward-Euler cross-product update with exact renormalization every step,
with no feedback from forces.  Each degree of freedom (every nuclear
coordinate, every mode, every orientation component) owns an independent,
reproducible random substream, so trajectories replay bit-identically for
a given seed regardless of how the work is scheduled.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import TYPE_CHECKING

import numpy as np

from .errors import CavmdError, TrajectoryError
from .hartree import CavityHartreeSolver, EnsembleState
from .shin_metiu import find_surface_minimum

if TYPE_CHECKING:
    from .config import ExperimentConfig

# frequency of the vibrational fundamental the cavity is tuned to; sets the
# width of the initial thermal position distribution
VIBRATIONAL_FUNDAMENTAL = 6.27e-3


@dataclass(frozen=True)
class ThermostatParams:
    """Langevin thermostat and time-step parameters (atomic units)."""

    kT: float = 0.5e-3
    gamma: float = 0.3e-5
    dt: float = 50.0
    tau_R: float = 0.5e-5
    rotations_enabled: bool = False

    def __post_init__(self):
        if self.kT < 0 or self.gamma < 0 or self.tau_R < 0:
            raise ValueError("kT, gamma and tau_R must be >= 0")
        if self.dt <= 0:
            raise ValueError("dt must be positive")


class RngStreams:
    """Independent per-degree-of-freedom random substreams.

    Streams are derived from (master seed, domain, index) so any stream is
    reproducible in isolation and all are statistically independent.
    Domains: 1 nuclear coordinates, 2 cavity modes, 3 orientation
    components.
    """

    def __init__(self, master_seed: int, n_molecules: int, n_modes: int):
        if master_seed < 0:
            raise ValueError("seed must be a non-negative integer")
        self.master_seed = int(master_seed)
        self.nuclear = [self._generator(1, i) for i in range(n_molecules)]
        self.mode = [self._generator(2, a) for a in range(n_modes)]
        self.orientation = [
            [self._generator(3, n, c) for c in range(3)]
            for n in range(n_molecules)
        ]

    def _generator(self, *key: int) -> np.random.Generator:
        seq = np.random.SeedSequence(entropy=self.master_seed, spawn_key=key)
        return np.random.Generator(np.random.PCG64(seq))

    def nuclear_normals(self) -> np.ndarray:
        return np.array([g.standard_normal() for g in self.nuclear])

    def mode_normals(self) -> np.ndarray:
        return np.array([g.standard_normal() for g in self.mode])

    def orientation_normals(self) -> np.ndarray:
        return np.array(
            [[g.standard_normal() for g in row] for row in self.orientation]
        )


def langevin_step(
    state,
    sol,
    solver,
    thermo: ThermostatParams,
    rngs: RngStreams,
    guess_r_mean=None,
):
    """Advance all nuclei and displacement coordinates by one time step.

    Requires the converged electronic solution for the current state;
    returns the new state together with the converged solution at the new
    configuration (so callers never solve twice for the same geometry).
    guess_r_mean optionally seeds the post-drift solve (e.g. with dipoles
    extrapolated from earlier steps); it only affects the iteration count,
    never the converged result.
    """
    dt = thermo.dt
    mass = solver.molecule.M
    c1 = math.exp(-thermo.gamma * dt / 2.0)
    c2_nuc = math.sqrt((1.0 - c1 * c1) * thermo.kT / mass)
    c2_ph = math.sqrt((1.0 - c1 * c1) * thermo.kT)

    v = c1 * state.velocities + c2_nuc * rngs.nuclear_normals()
    p = c1 * state.p + c2_ph * rngs.mode_normals()

    v = v + (0.5 * dt / mass) * solver.nuclear_forces(sol, state)
    p = p + 0.5 * dt * solver.photon_forces(sol, state)

    new_state = replace(
        state,
        positions=state.positions + dt * v,
        velocities=v,
        q=state.q + dt * p,
        p=p,
        time=state.time + dt,
    )
    new_sol = solver.scf_solve(new_state, guess=sol, guess_r_mean=guess_r_mean)

    v = new_state.velocities + (0.5 * dt / mass) * solver.nuclear_forces(
        new_sol, new_state
    )
    p = new_state.p + 0.5 * dt * solver.photon_forces(new_sol, new_state)

    v = c1 * v + c2_nuc * rngs.nuclear_normals()
    p = c1 * p + c2_ph * rngs.mode_normals()
    return replace(new_state, velocities=v, p=p), new_sol


def rotation_step(
    orientations: np.ndarray, tau_R: float, dt: float, rngs: RngStreams
) -> np.ndarray:
    """One forward-Euler step of rotational Brownian motion.

    n <- n/|n| + sqrt(dt tau_R) S x n/|n| followed by exact
    renormalization; S is a standard-normal 3-vector per molecule.
    """
    if tau_R < 0:
        raise ValueError("tau_R must be >= 0")
    unit = orientations / np.linalg.norm(orientations, axis=1, keepdims=True)
    noise = rngs.orientation_normals()
    stepped = unit + math.sqrt(dt * tau_R) * np.cross(noise, unit)
    return stepped / np.linalg.norm(stepped, axis=1, keepdims=True)


def initialize(
    cfg: "ExperimentConfig", solver: CavityHartreeSolver, rngs: RngStreams
) -> EnsembleState:
    """Draw thermal initial conditions near the bare ground-state minimum.

    The bare surface is a symmetric double well and no well-to-well
    transfer occurs at the simulated temperatures, so thermal equilibrium
    assigns each molecule to the +R or -R minimum with equal probability;
    positions then spread around it with the thermal width of the
    vibrational fundamental.  (A single-well ensemble would carry a net
    permanent dipole and a spurious nonzero mean cavity-induced
    polarization.)  Velocities and photon momenta are Maxwell-Boltzmann;
    displacement coordinates follow the thermal distribution of the bare
    mode.  Orientations are uniform on the sphere (random mode) or
    exactly along z (aligned).
    """
    thermo = cfg.thermo
    n_mol = cfg.ensemble.n_molecules
    mass = solver.molecule.M
    r_min = find_surface_minimum(solver.grid, solver.molecule)

    sigma_pos = math.sqrt(thermo.kT / mass) / VIBRATIONAL_FUNDAMENTAL
    sigma_vel = math.sqrt(thermo.kT / mass)
    well_signs = np.sign(rngs.nuclear_normals())
    well_signs[well_signs == 0] = 1.0
    positions = well_signs * r_min + sigma_pos * rngs.nuclear_normals()
    velocities = sigma_vel * rngs.nuclear_normals()

    omega = np.array([m.omega for m in solver.modes])
    sqrt_kt = math.sqrt(thermo.kT)
    q = sqrt_kt / omega * rngs.mode_normals() if len(omega) else np.zeros(0)
    p = sqrt_kt * rngs.mode_normals() if len(omega) else np.zeros(0)

    if cfg.ensemble.orientation_mode == "random":
        vecs = rngs.orientation_normals()
        norms = np.linalg.norm(vecs, axis=1, keepdims=True)
        if np.any(norms == 0):
            raise ValueError("degenerate orientation draw")
        orientations = vecs / norms
    else:
        orientations = np.tile([0.0, 0.0, 1.0], (n_mol, 1))

    state = EnsembleState(
        positions=positions,
        velocities=velocities,
        q=q,
        p=p,
        orientations=orientations,
        time=0.0,
    )
    state.validate()
    return state


ENERGY_COLUMNS = ("bare", "dse", "coupling", "dipole_dipole", "photon", "total")


@dataclass
class Trajectory:
    """Sampled observables of one run; all series share the same stride."""

    time: np.ndarray          # (S,)
    q: np.ndarray             # (S, M)
    p: np.ndarray             # (S, M)
    dipole_total: np.ndarray  # (S,) axis-projected total dipole
    dipole_mol: np.ndarray    # (S, N) axis-projected per-molecule dipole
    dr_mol: np.ndarray | None  # (S, N) cavity-induced polarization shifts
    ke_nuclear: np.ndarray    # (S,)
    ke_photon: np.ndarray     # (S,)
    energy: np.ndarray        # (S, 6) columns per ENERGY_COLUMNS
    meta: dict

    @property
    def n_samples(self) -> int:
        return self.time.shape[0]

    @property
    def n_molecules(self) -> int:
        return self.dipole_mol.shape[1]

    @property
    def sample_interval(self) -> float:
        """Time between stored samples (dt times the sampling stride)."""
        return float(self.meta["dt_au"]) * int(self.meta["stride"])


class _Recorder:
    def __init__(self, solver: CavityHartreeSolver, with_dr: bool):
        self.solver = solver
        self.with_dr = with_dr
        self.rows: list[dict] = []

    def record(self, state: EnsembleState, sol) -> None:
        mass = self.solver.molecule.M
        charge = self.solver.molecule.Z
        proj = state.orientations[:, 2]
        dip = (charge * state.positions - sol.r_mean) * proj
        energy = self.solver.refresh_photon_energy(sol, state)
        row = {
            "time": state.time,
            "q": state.q.copy(),
            "p": state.p.copy(),
            "dip_total": float(dip.sum()),
            "dip_mol": dip,
            "ke_nuclear": float(0.5 * mass * np.sum(state.velocities**2)),
            "ke_photon": float(0.5 * np.sum(state.p**2)),
            "energy": energy.as_tuple(),
        }
        if self.with_dr:
            row["dr"] = self.solver.local_polarization_shifts(state, sol)
        self.rows.append(row)

    def build(self, meta: dict) -> Trajectory:
        rows = self.rows
        if rows:
            dipole_mol = np.array([r["dip_mol"] for r in rows])
            q = np.array([r["q"] for r in rows])
            p = np.array([r["p"] for r in rows])
        else:
            dipole_mol = np.zeros((0, int(meta["n_molecules"])))
            q = np.zeros((0, int(meta["n_modes"])))
            p = np.zeros((0, int(meta["n_modes"])))
        return Trajectory(
            time=np.array([r["time"] for r in rows]),
            q=q,
            p=p,
            dipole_total=np.array([r["dip_total"] for r in rows]),
            dipole_mol=dipole_mol,
            dr_mol=np.array([r["dr"] for r in rows]) if self.with_dr and rows
            else (np.zeros((0, int(meta["n_molecules"]))) if self.with_dr else None),
            ke_nuclear=np.array([r["ke_nuclear"] for r in rows]),
            ke_photon=np.array([r["ke_photon"] for r in rows]),
            energy=np.array([r["energy"] for r in rows]).reshape(len(rows), 6),
            meta=meta,
        )


def run_trajectory(
    cfg: "ExperimentConfig", solver: CavityHartreeSolver | None = None
) -> Trajectory:
    """Initialize and propagate one trajectory, recording observables.

    Observables are recorded every `stride` steps after the burn-in,
    starting with the state at the end of the burn-in.  On a step failure
    a TrajectoryError is raised carrying the failing step index and the
    partial trajectory recorded so far.
    """
    from . import __version__
    from .config import config_hash

    if solver is None:
        solver = cfg.build_solver()
    run = cfg.run
    thermo = cfg.thermo
    n_mol = cfg.ensemble.n_molecules
    rngs = RngStreams(cfg.seed, n_mol, len(solver.modes))
    recorder = _Recorder(solver, with_dr=run.polarization_diagnostics)
    meta = {
        "dt_au": thermo.dt,
        "stride": run.stride,
        "seed": cfg.seed,
        "config_hash": config_hash(cfg),
        "version": __version__,
        "n_molecules": n_mol,
        "n_modes": len(solver.modes),
        "omega_au": [m.omega for m in solver.modes],
        "lambda_au": [m.coupling for m in solver.modes],
        "orientation": cfg.ensemble.orientation_mode,
        "kT_au": thermo.kT,
        "error": None,
    }

    total = run.burn_in + run.n_steps
    step = 0
    try:
        state = initialize(cfg, solver, rngs)
        sol = solver.scf_solve(state)
        if run.burn_in == 0:
            recorder.record(state, sol)
        prev_r_mean = None
        for step in range(1, total + 1):
            # linear dipole extrapolation seeds the post-drift solve
            predictor = (
                2.0 * sol.r_mean - prev_r_mean if prev_r_mean is not None else None
            )
            prev_r_mean = sol.r_mean
            state, sol = langevin_step(
                state, sol, solver, thermo, rngs, guess_r_mean=predictor
            )
            if thermo.rotations_enabled:
                orientations = rotation_step(
                    state.orientations, thermo.tau_R, thermo.dt, rngs
                )
                state = replace(state, orientations=orientations)
                # couplings changed with the orientations; refresh the solve
                sol = solver.scf_solve(state, guess=sol)
            if step >= run.burn_in and (step - run.burn_in) % run.stride == 0:
                recorder.record(state, sol)
    except CavmdError as exc:
        meta["error"] = {"code": type(exc).__name__, "step": step}
        raise TrajectoryError(
            f"step {step} failed: {exc}", step=step, partial=recorder.build(meta)
        ) from exc
    return recorder.build(meta)


# ---------------------------------------------------------------------------
# trajectory persistence (columnar text with '#' metadata preamble)

_FLOAT_FMT = ".17g"


def write_trajectory(traj: Trajectory, path, timestamp: str | None = None) -> None:
    import datetime

    meta = traj.meta
    n_mol = traj.dipole_mol.shape[1]
    n_modes = traj.q.shape[1]
    if timestamp is None:
        timestamp = datetime.datetime.now().isoformat(timespec="seconds")
    header = ["time_au"]
    header += [f"q{a}_au" for a in range(n_modes)]
    header += [f"p{a}_au" for a in range(n_modes)]
    header += ["dip_total_au"]
    header += [f"dip_mol{n}_au" for n in range(n_mol)]
    if traj.dr_mol is not None:
        header += [f"dr_mol{n}_bohr" for n in range(n_mol)]
    header += ["ke_nuclear_hartree", "ke_photon_hartree"]
    header += [f"e_{name}_hartree" for name in ENERGY_COLUMNS]

    with open(path, "w") as fh:
        fh.write("# cavmd trajectory v1\n")
        fh.write(f"# created: {timestamp}\n")
        for key in (
            "config_hash", "seed", "version", "dt_au", "stride",
            "n_molecules", "n_modes", "orientation", "kT_au",
        ):
            fh.write(f"# {key}: {meta.get(key, 'unknown')}\n")
        fh.write(f"# omega_au: {_format_list(meta['omega_au'])}\n")
        fh.write(f"# lambda_au: {_format_list(meta['lambda_au'])}\n")
        if meta.get("error"):
            err = meta["error"]
            fh.write(f"# error: code={err['code']} step={err['step']}\n")
        fh.write(",".join(header) + "\n")
        for i in range(traj.n_samples):
            vals = [traj.time[i]]
            vals += list(traj.q[i])
            vals += list(traj.p[i])
            vals.append(traj.dipole_total[i])
            vals += list(traj.dipole_mol[i])
            if traj.dr_mol is not None:
                vals += list(traj.dr_mol[i])
            vals += [traj.ke_nuclear[i], traj.ke_photon[i]]
            vals += list(traj.energy[i])
            fh.write(",".join(format(v, _FLOAT_FMT) for v in vals) + "\n")


def _format_list(values) -> str:
    return " ".join(format(float(v), _FLOAT_FMT) for v in values)


def read_trajectory(path) -> Trajectory:
    meta: dict = {"error": None}
    header = None
    data_rows = []
    with open(path) as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if ":" in body:
                    key, _, value = body.partition(":")
                    meta[key.strip()] = value.strip()
                continue
            if header is None:
                header = line.split(",")
                continue
            data_rows.append([float(x) for x in line.split(",")])
    if header is None:
        raise ValueError(f"no data header found in {path}")
    for key, cast in (
        ("dt_au", float), ("stride", int), ("seed", int),
        ("n_molecules", int), ("n_modes", int), ("kT_au", float),
    ):
        if key in meta:
            meta[key] = cast(meta[key])
    for key in ("omega_au", "lambda_au"):
        if key in meta and isinstance(meta[key], str):
            meta[key] = [float(x) for x in meta[key].split()]
    if isinstance(meta.get("error"), str):
        parts = dict(p.split("=") for p in meta["error"].split())
        meta["error"] = {"code": parts["code"], "step": int(parts["step"])}

    arr = np.array(data_rows, dtype=float).reshape(len(data_rows), len(header))
    col = {name: i for i, name in enumerate(header)}
    n_modes = sum(1 for name in header if name.startswith("q") and name.endswith("_au"))
    n_mol = sum(1 for name in header if name.startswith("dip_mol"))
    has_dr = any(name.startswith("dr_mol") for name in header)

    def block(prefix, count, suffix):
        idx = [col[f"{prefix}{k}{suffix}"] for k in range(count)]
        return arr[:, idx]

    return Trajectory(
        time=arr[:, col["time_au"]],
        q=block("q", n_modes, "_au"),
        p=block("p", n_modes, "_au"),
        dipole_total=arr[:, col["dip_total_au"]],
        dipole_mol=block("dip_mol", n_mol, "_au"),
        dr_mol=block("dr_mol", n_mol, "_bohr") if has_dr else None,
        ke_nuclear=arr[:, col["ke_nuclear_hartree"]],
        ke_photon=arr[:, col["ke_photon_hartree"]],
        energy=arr[:, [col[f"e_{name}_hartree"] for name in ENERGY_COLUMNS]],
        meta=meta,
    )
