"""Declarative experiment configuration.

Config files are flat-tree key-value text: one `dotted.key = value` pair
per line, `#` comments, list entries addressed as `cavity[0].lambda`.
Unknown keys are hard errors so typos never pass silently.  Frequencies
may be given either in millihartree (`omega_mh`, matching how spectra are
reported) or directly in hartree (`omega`); everything else is atomic
units.  An empty file yields the default single-molecule, zero-coupling,
2000-step setup.

The environment variable CAVMD_OUTPUT_DIR overrides output_dir; every
other setting must live in the file so the config hash pins provenance.
"""

from __future__ import annotations

import hashlib
import os
import re
from dataclasses import dataclass, field, replace

from .dynamics import ThermostatParams
from .errors import ConfigError
from .grid import make_grid
from .hartree import CavityHartreeSolver, CavityMode, ScfOptions
from .shin_metiu import ShinMetiuParams
from .units import hartree_to_mh, mh_to_hartree

ENV_OUTPUT_DIR = "CAVMD_OUTPUT_DIR"

DEFAULT_CAVITY_OMEGA = 6.27e-3  # hartree; the bare vibrational fundamental


@dataclass(frozen=True)
class GridSpec:
    n_points: int = 41
    spacing: float = 0.8


@dataclass(frozen=True)
class EnsembleSpec:
    n_molecules: int = 1
    orientation_mode: str = "aligned"  # "aligned" | "random"


@dataclass(frozen=True)
class RunSpec:
    n_steps: int = 2000
    stride: int = 1
    polarization_diagnostics: bool = False
    burn_in: int = 0


@dataclass(frozen=True)
class ExperimentConfig:
    molecule: ShinMetiuParams = field(default_factory=ShinMetiuParams)
    grid: GridSpec = field(default_factory=GridSpec)
    cavity: tuple[CavityMode, ...] = (
        CavityMode(omega=DEFAULT_CAVITY_OMEGA, coupling=0.0),
    )
    ensemble: EnsembleSpec = field(default_factory=EnsembleSpec)
    thermo: ThermostatParams = field(default_factory=ThermostatParams)
    scf: ScfOptions = field(default_factory=ScfOptions)
    run: RunSpec = field(default_factory=RunSpec)
    seed: int = 1234
    output_dir: str = "."

    def build_solver(self) -> CavityHartreeSolver:
        grid = make_grid(self.grid.n_points, self.grid.spacing)
        return CavityHartreeSolver(grid, self.molecule, self.cavity, self.scf)


def lambda_for_N(lambda_1: float, n_molecules: int, mode: str) -> float:
    """Coupling that keeps the collective Rabi splitting fixed versus N.

    Randomly oriented ensembles use lambda_1/sqrt(N); aligned ensembles
    carry the full projection of every molecule, so the equivalent value
    is lambda_1/sqrt(2N).
    """
    if n_molecules < 1:
        raise ValueError("n_molecules must be >= 1")
    if mode == "random":
        return lambda_1 / n_molecules**0.5
    if mode == "aligned":
        return lambda_1 / (2.0 * n_molecules) ** 0.5
    raise ValueError(f"unknown orientation mode {mode!r}")


# ---------------------------------------------------------------------------
# parsing

_CAVITY_KEY = re.compile(r"^cavity\[(\d+)\]\.(omega|omega_mh|lambda)$")

_SCALAR_KEYS: dict[str, tuple[str, type]] = {
    "molecule.L": ("float", float),
    "molecule.R_f": ("float", float),
    "molecule.R_l": ("float", float),
    "molecule.R_r": ("float", float),
    "molecule.M": ("float", float),
    "molecule.Z": ("float", float),
    "grid.n_points": ("int", int),
    "grid.spacing": ("float", float),
    "ensemble.N": ("int", int),
    "ensemble.orientation": ("str", str),
    "thermo.kT": ("float", float),
    "thermo.gamma": ("float", float),
    "thermo.dt": ("float", float),
    "thermo.tau_R": ("float", float),
    "thermo.rotations": ("tristate", str),
    "scf.energy_tol": ("float", float),
    "scf.max_iter": ("int", int),
    "scf.mixing": ("float", float),
    "scf.dipole_tol": ("float", float),
    "run.n_steps": ("int", int),
    "run.stride": ("int", int),
    "run.polarization_diagnostics": ("bool", bool),
    "run.burn_in": ("int", int),
    "seed": ("int", int),
    "output_dir": ("str", str),
}

_BOOL_WORDS = {"true": True, "yes": True, "1": True,
               "false": False, "no": False, "0": False}


def load_config(path) -> ExperimentConfig:
    """Parse and validate a config file, filling defaults for omitted keys."""
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return loads_config(text, source=str(path))


def loads_config(text: str, source: str = "<string>") -> ExperimentConfig:
    raw: dict[str, tuple[str, int]] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(
                f"{source}:{lineno}: expected 'key = value', got {stripped!r}"
            )
        key, _, value = stripped.partition("=")
        key = key.strip()
        value = value.strip()
        if not _CAVITY_KEY.match(key) and key not in _SCALAR_KEYS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in raw:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        raw[key] = (value, lineno)
    return _build_config(raw, source)


def _parse_scalar(key: str, value: str, kind: str, source: str, lineno: int):
    try:
        if kind == "int":
            return int(value)
        if kind == "float":
            return float(value)
        if kind == "bool":
            return _BOOL_WORDS[value.lower()]
        return value
    except (ValueError, KeyError) as exc:
        raise ConfigError(
            f"{source}:{lineno}: {key}: cannot parse {value!r} as {kind}"
        ) from exc


def _build_config(raw: dict, source: str) -> ExperimentConfig:
    def take(key, default):
        if key not in raw:
            return default
        value, lineno = raw.pop(key)
        kind = _SCALAR_KEYS[key][0]
        if kind == "tristate":
            if value.lower() == "auto":
                return "auto"
            return _parse_scalar(key, value, "bool", source, lineno)
        return _parse_scalar(key, value, kind, source, lineno)

    def checked(factory, prefix, **kwargs):
        try:
            return factory(**kwargs)
        except ValueError as exc:
            raise ConfigError(f"{prefix}: {exc}") from exc

    molecule = checked(
        ShinMetiuParams, "molecule",
        L=take("molecule.L", 9.45),
        R_f=take("molecule.R_f", 1.511),
        R_l=take("molecule.R_l", 1.511),
        R_r=take("molecule.R_r", 1.511),
        M=take("molecule.M", 1836.0),
        Z=take("molecule.Z", 1.0),
    )
    n_points = take("grid.n_points", 41)
    spacing = take("grid.spacing", 0.8)
    if n_points < 3:
        raise ConfigError("grid.n_points: must be >= 3")
    if spacing <= 0:
        raise ConfigError("grid.spacing: must be positive")
    grid = GridSpec(n_points=n_points, spacing=spacing)

    cavity = _build_cavity(raw, source)

    n_mol = take("ensemble.N", 1)
    if n_mol < 1:
        raise ConfigError("ensemble.N: must be >= 1")
    orientation = take("ensemble.orientation", "aligned")
    if orientation not in ("aligned", "random"):
        raise ConfigError(
            f"ensemble.orientation: must be 'aligned' or 'random', "
            f"got {orientation!r}"
        )
    ensemble = EnsembleSpec(n_molecules=n_mol, orientation_mode=orientation)

    rotations = take("thermo.rotations", "auto")
    if rotations == "auto":
        rotations = orientation == "random"
    thermo = checked(
        ThermostatParams, "thermo",
        kT=take("thermo.kT", 0.5e-3),
        gamma=take("thermo.gamma", 0.3e-5),
        dt=take("thermo.dt", 50.0),
        tau_R=take("thermo.tau_R", 0.5e-5),
        rotations_enabled=rotations,
    )
    scf = checked(
        ScfOptions, "scf",
        energy_tol=take("scf.energy_tol", 1e-7),
        max_iter=take("scf.max_iter", 200),
        mixing=take("scf.mixing", 1.0),
        dipole_tol=take("scf.dipole_tol", 5e-7),
    )
    n_steps = take("run.n_steps", 2000)
    stride = take("run.stride", 1)
    burn_in = take("run.burn_in", 0)
    if n_steps < 0:
        raise ConfigError("run.n_steps: must be >= 0")
    if stride < 1:
        raise ConfigError("run.stride: must be >= 1")
    if burn_in < 0:
        raise ConfigError("run.burn_in: must be >= 0")
    run = RunSpec(
        n_steps=n_steps,
        stride=stride,
        polarization_diagnostics=take("run.polarization_diagnostics", False),
        burn_in=burn_in,
    )
    seed = take("seed", 1234)
    if seed < 0 or seed >= 2**64:
        raise ConfigError("seed: must be a 64-bit non-negative integer")
    output_dir = take("output_dir", ".")
    output_dir = os.environ.get(ENV_OUTPUT_DIR) or output_dir

    if raw:
        key = next(iter(raw))
        raise ConfigError(f"{source}:{raw[key][1]}: unhandled key {key!r}")
    return ExperimentConfig(
        molecule=molecule, grid=grid, cavity=cavity, ensemble=ensemble,
        thermo=thermo, scf=scf, run=run, seed=seed, output_dir=output_dir,
    )


def _build_cavity(raw: dict, source: str) -> tuple[CavityMode, ...]:
    entries: dict[int, dict[str, tuple[str, int]]] = {}
    for key in [k for k in raw if k.startswith("cavity")]:
        match = _CAVITY_KEY.match(key)
        value, lineno = raw.pop(key)
        entries.setdefault(int(match.group(1)), {})[match.group(2)] = (
            value, lineno,
        )
    if not entries:
        return (CavityMode(omega=DEFAULT_CAVITY_OMEGA, coupling=0.0),)
    if sorted(entries) != list(range(len(entries))):
        raise ConfigError(
            f"cavity indices must be contiguous from 0, got {sorted(entries)}"
        )
    modes = []
    for i in sorted(entries):
        fields = entries[i]
        if "omega" in fields and "omega_mh" in fields:
            raise ConfigError(
                f"cavity[{i}]: give either omega or omega_mh, not both"
            )
        if "omega_mh" in fields:
            value, lineno = fields["omega_mh"]
            omega = mh_to_hartree(
                _parse_scalar(f"cavity[{i}].omega_mh", value, "float", source, lineno)
            )
        elif "omega" in fields:
            value, lineno = fields["omega"]
            omega = _parse_scalar(f"cavity[{i}].omega", value, "float", source, lineno)
        else:
            omega = DEFAULT_CAVITY_OMEGA
        if "lambda" in fields:
            value, lineno = fields["lambda"]
            coupling = _parse_scalar(
                f"cavity[{i}].lambda", value, "float", source, lineno
            )
        else:
            coupling = 0.0
        try:
            modes.append(CavityMode(omega=omega, coupling=coupling))
        except ValueError as exc:
            raise ConfigError(f"cavity[{i}]: {exc}") from exc
    return tuple(modes)


# ---------------------------------------------------------------------------
# canonical serialization and provenance hash


def dump_config(cfg: ExperimentConfig) -> str:
    """Canonical text form; reload yields an identical config."""
    m, g, e, t, s, r = cfg.molecule, cfg.grid, cfg.ensemble, cfg.thermo, cfg.scf, cfg.run
    lines = [
        f"molecule.L = {m.L!r}",
        f"molecule.R_f = {m.R_f!r}",
        f"molecule.R_l = {m.R_l!r}",
        f"molecule.R_r = {m.R_r!r}",
        f"molecule.M = {m.M!r}",
        f"molecule.Z = {m.Z!r}",
        f"grid.n_points = {g.n_points}",
        f"grid.spacing = {g.spacing!r}",
    ]
    for i, mode in enumerate(cfg.cavity):
        lines.append(f"cavity[{i}].omega_mh = {hartree_to_mh(mode.omega)!r}")
        lines.append(f"cavity[{i}].lambda = {mode.coupling!r}")
    lines += [
        f"ensemble.N = {e.n_molecules}",
        f"ensemble.orientation = {e.orientation_mode}",
        f"thermo.kT = {t.kT!r}",
        f"thermo.gamma = {t.gamma!r}",
        f"thermo.dt = {t.dt!r}",
        f"thermo.tau_R = {t.tau_R!r}",
        f"thermo.rotations = {'true' if t.rotations_enabled else 'false'}",
        f"scf.energy_tol = {s.energy_tol!r}",
        f"scf.max_iter = {s.max_iter}",
        f"scf.mixing = {s.mixing!r}",
        f"scf.dipole_tol = {s.dipole_tol!r}",
        f"run.n_steps = {r.n_steps}",
        f"run.stride = {r.stride}",
        f"run.polarization_diagnostics = "
        f"{'true' if r.polarization_diagnostics else 'false'}",
        f"run.burn_in = {r.burn_in}",
        f"seed = {cfg.seed}",
        f"output_dir = {cfg.output_dir}",
    ]
    return "\n".join(lines) + "\n"


def config_hash(cfg: ExperimentConfig) -> str:
    """sha256 of the canonical serialization, output_dir excluded.

    Two outputs with equal hashes came from physically identical runs
    (including the seed); where the files land does not change identity.
    """
    text = "\n".join(
        line for line in dump_config(cfg).splitlines()
        if not line.startswith("output_dir")
    )
    return hashlib.sha256(text.encode()).hexdigest()


def with_seed(cfg: ExperimentConfig, seed: int | None) -> ExperimentConfig:
    return cfg if seed is None else replace(cfg, seed=seed)
