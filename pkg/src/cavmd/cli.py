"""Command-line interface.

Subcommands: run, spectrum, polarization, oracle, check-forces,
scaling-sweep.  All outputs are CSV files with '#' metadata preambles and
unit-suffixed column names.  Exit codes: 0 success, 2 configuration
error, 3 numerical failure, 4 I/O error.  Every failure ends with one
machine-parsable line on stderr: "ERROR code=<name> step=<k>".
"""

from __future__ import annotations

import argparse
import os
import sys
import traceback

import numpy as np

from . import __version__
from .analysis import (
    WindowSpec,
    global_absorption,
    local_absorption,
    polarization_stats,
    rabi_analysis,
    write_peaks_csv,
    write_polarization_csv,
    write_spectrum_csv,
)
from .config import (
    ExperimentConfig,
    config_hash,
    lambda_for_N,
    load_config,
    with_seed,
)
from .dynamics import read_trajectory, run_trajectory, write_trajectory
from .errors import (
    CavmdError,
    ConfigError,
    EigensolverError,
    GeometryError,
    ImaginaryFrequencyError,
    MissingObservableError,
    PeaksNotFoundError,
    ScfConvergenceError,
    SignalTooShortError,
    StaleSolutionError,
    TrajectoryError,
)
from .harmonic import (
    HarmonicEnsembleParams,
    extract_molecule_params,
    polariton_prediction,
)
from .hartree import CavityMode, EnsembleState, ScfOptions
from .units import hartree_to_mh, mh_to_hartree

_ERROR_CODES = {
    ConfigError: "config-error",
    GeometryError: "geometry-error",
    EigensolverError: "eigensolver-failure",
    ScfConvergenceError: "scf-no-convergence",
    StaleSolutionError: "stale-solution",
    MissingObservableError: "missing-observable",
    SignalTooShortError: "signal-too-short",
    PeaksNotFoundError: "peaks-not-found",
    ImaginaryFrequencyError: "imaginary-frequency",
}

_EXIT_CODES = {
    "config-error": 2,
    "missing-observable": 2,
    "signal-too-short": 2,
    "io-error": 4,
}


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except TrajectoryError as exc:
        cause_code = _ERROR_CODES.get(type(exc.__cause__), "step-failure")
        return _fail(str(exc), cause_code, step=exc.step)
    except CavmdError as exc:
        code = _ERROR_CODES.get(type(exc), "numerical-failure")
        return _fail(str(exc), code)
    except OSError as exc:
        return _fail(str(exc), "io-error")
    except Exception:  # noqa: BLE001 - the CLI must never crash bare
        traceback.print_exc()
        return _fail("unexpected internal error", "internal-error")


def _fail(message: str, code: str, step: int | None = None) -> int:
    print(message, file=sys.stderr)
    print(f"ERROR code={code} step={step if step is not None else '-'}",
          file=sys.stderr)
    return _EXIT_CODES.get(code, 3)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cavmd",
        description="Cavity-Hartree molecular dynamics for ensembles of "
        "model molecules under vibrational strong coupling",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="propagate one trajectory")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("spectrum", help="absorption spectra from a trajectory")
    p.add_argument("--traj", required=True)
    p.add_argument("--omega-cavity", type=float, required=True,
                   help="bare cavity frequency in mH")
    p.add_argument("--window", type=int, default=4096)
    p.add_argument("--shift", type=float, default=1.0 / 3.0,
                   help="window shift as a fraction of the window length")
    p.add_argument("--min-prominence", type=float, default=0.05,
                   help="peak prominence threshold as a fraction of the maximum")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_spectrum)

    p = sub.add_parser("polarization", help="local polarization statistics")
    p.add_argument("--traj", nargs="+", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_polarization)

    p = sub.add_parser("oracle", help="harmonic normal-mode predictions vs N")
    p.add_argument("--config", required=True)
    p.add_argument("--n-list", default="1,4,16,64")
    p.add_argument("--rescale", choices=("none", "random", "aligned"),
                   default="none",
                   help="rescale the config coupling with 1/sqrt(N) rules")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("check-forces",
                       help="analytic vs finite-difference forces")
    p.add_argument("--config", required=True)
    p.add_argument("--n-samples", type=int, default=10)
    p.set_defaults(func=cmd_check_forces)

    p = sub.add_parser("scaling-sweep",
                       help="run and analyze a sweep over ensemble sizes")
    p.add_argument("--config", required=True)
    p.add_argument("--n-list", default="1,4,16,64")
    p.add_argument("--fixed-rabi", type=_parse_bool, default=False,
                   help="rescale lambda as 1/sqrt(N) to keep the splitting")
    p.add_argument("--window", type=int, default=4096)
    p.add_argument("--min-prominence", type=float, default=0.05,
                   help="peak prominence threshold as a fraction of the maximum")
    p.add_argument("--omega-cavity", type=float, default=None,
                   help="reference frequency (mH) separating LP from UP; "
                   "defaults to the configured bare cavity frequency")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_scaling_sweep)
    return parser


def _parse_bool(text: str) -> bool:
    lowered = text.lower()
    if lowered in ("true", "yes", "1"):
        return True
    if lowered in ("false", "no", "0"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _parse_n_list(text: str) -> list[int]:
    try:
        values = [int(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise ConfigError(f"--n-list: cannot parse {text!r}") from exc
    if not values or any(v < 1 for v in values):
        raise ConfigError(f"--n-list: need positive integers, got {text!r}")
    return values


def _out_dir(args, cfg: ExperimentConfig | None = None) -> str:
    out = args.out or (cfg.output_dir if cfg is not None else ".")
    os.makedirs(out, exist_ok=True)
    return out


def _preamble(cfg: ExperimentConfig) -> dict:
    return {
        "config_hash": config_hash(cfg),
        "seed": cfg.seed,
        "version": __version__,
    }


# ---------------------------------------------------------------------------


def cmd_run(args) -> int:
    cfg = with_seed(load_config(args.config), args.seed)
    out = _out_dir(args, cfg)
    path = os.path.join(out, "trajectory.csv")
    try:
        traj = run_trajectory(cfg)
    except TrajectoryError as exc:
        if exc.partial is not None:
            write_trajectory(exc.partial, path)
            print(f"partial trajectory written to {path}", file=sys.stderr)
        raise
    write_trajectory(traj, path)
    print(f"wrote {path} ({traj.n_samples} samples)")
    return 0


def cmd_spectrum(args) -> int:
    traj = read_trajectory(args.traj)
    spec = WindowSpec(
        window_len=args.window,
        shift=max(1, int(round(args.window * args.shift))),
    )
    omega_cavity = mh_to_hartree(args.omega_cavity)
    out = args.out or (os.path.dirname(os.path.abspath(args.traj)))
    os.makedirs(out, exist_ok=True)
    preamble = {
        "source": os.path.basename(args.traj),
        "config_hash": traj.meta.get("config_hash", "unknown"),
        "seed": traj.meta.get("seed", "unknown"),
        "version": __version__,
        "window_len": spec.window_len,
        "shift": spec.effective_shift,
        "omega_cavity_mH": args.omega_cavity,
    }
    g_spec = global_absorption(traj, spec)
    l_spec = local_absorption(traj, spec)
    spectrum_path = os.path.join(out, "spectrum.csv")
    write_spectrum_csv(spectrum_path, g_spec, l_spec, preamble)
    print(f"wrote {spectrum_path}")
    peaks = rabi_analysis(g_spec, omega_cavity, args.min_prominence)
    peaks_path = os.path.join(out, "peaks.csv")
    write_peaks_csv(peaks_path, peaks, preamble)
    print(
        f"wrote {peaks_path} (LP={hartree_to_mh(peaks.omega_lp):.4f} mH, "
        f"UP={hartree_to_mh(peaks.omega_up):.4f} mH, "
        f"rabi={hartree_to_mh(peaks.rabi):.4f} mH)"
    )
    return 0


def cmd_polarization(args) -> int:
    rows = []
    preamble = {"version": __version__}
    for i, path in enumerate(args.traj):
        traj = read_trajectory(path)
        stats = polarization_stats(traj)
        rows.append((traj.meta.get("n_molecules", stats.n_molecules), stats))
        preamble[f"source_{i}"] = (
            f"{os.path.basename(path)} "
            f"config_hash={traj.meta.get('config_hash', 'unknown')} "
            f"seed={traj.meta.get('seed', 'unknown')}"
        )
    out = args.out or os.path.dirname(os.path.abspath(args.traj[0]))
    os.makedirs(out, exist_ok=True)
    path = os.path.join(out, "polarization.csv")
    write_polarization_csv(path, rows, preamble)
    print(f"wrote {path} ({len(rows)} rows)")
    return 0


def cmd_oracle(args) -> int:
    cfg = load_config(args.config)
    if len(cfg.cavity) != 1:
        raise ConfigError("oracle predictions need exactly one cavity mode")
    n_list = _parse_n_list(args.n_list)
    grid = cfg.build_solver().grid
    extracted = extract_molecule_params(grid, cfg.molecule)
    lambda_1 = cfg.cavity[0].coupling
    out = _out_dir(args, cfg)
    path = os.path.join(out, "oracle.csv")
    with open(path, "w") as fh:
        fh.write("# cavmd oracle v1\n")
        fh.write(f"# config_hash: {config_hash(cfg)}\n")
        fh.write(f"# seed: {cfg.seed}\n")
        fh.write(f"# version: {__version__}\n")
        fh.write(f"# omega_vib_mH: {hartree_to_mh(extracted.omega_vib)!r}\n")
        fh.write(f"# mu_prime_au: {extracted.mu_prime!r}\n")
        fh.write(f"# alpha_e_au: {extracted.alpha_e!r}\n")
        fh.write("N,lambda_au,omega_LP_mH,omega_UP_mH,rabi_mH,midpoint_mH\n")
        for n in n_list:
            lam = lambda_1 if args.rescale == "none" else lambda_for_N(
                lambda_1, n, args.rescale
            )
            params = HarmonicEnsembleParams(
                n_molecules=n,
                omega_vib=extracted.omega_vib,
                mu_prime=extracted.mu_prime,
                mass=cfg.molecule.M,
                omega_cavity=cfg.cavity[0].omega,
                coupling=lam,
                alpha_e=extracted.alpha_e,
            )
            lp, up = polariton_prediction(params).polaritons()
            fh.write(
                f"{n},{lam:.17g},{hartree_to_mh(lp):.17g},"
                f"{hartree_to_mh(up):.17g},{hartree_to_mh(up - lp):.17g},"
                f"{hartree_to_mh(0.5 * (lp + up)):.17g}\n"
            )
    print(f"wrote {path}")
    return 0


def cmd_check_forces(args) -> int:
    cfg = load_config(args.config)
    worst = check_forces(cfg, n_samples=args.n_samples)
    print(f"max relative force error over {args.n_samples} configurations: "
          f"{worst:.3e}")
    if worst > 1e-4:
        return _fail(
            f"force mismatch: max relative error {worst:.3e} > 1e-4",
            "force-mismatch",
        )
    return 0


def check_forces(
    cfg: ExperimentConfig,
    n_samples: int = 10,
    fd_step_nuclear: float = 1e-4,
    fd_step_photon: float = 1e-2,
) -> float:
    """Max relative deviation of analytic forces from reconverged-energy
    finite differences over randomly drawn configurations.

    Relative errors are measured against the largest force of the same
    kind in each configuration; the photon step is wider because the
    energy is nearly exactly quadratic along q and the cancellation noise
    would otherwise dominate.
    """
    solver = cfg.build_solver()
    tight = ScfOptions(energy_tol=1e-11, max_iter=500)
    rng = np.random.default_rng(cfg.seed)
    n_mol = cfg.ensemble.n_molecules
    n_modes = len(cfg.cavity)
    worst = 0.0
    for _ in range(n_samples):
        if cfg.ensemble.orientation_mode == "random":
            orient = rng.standard_normal((n_mol, 3))
            orient /= np.linalg.norm(orient, axis=1, keepdims=True)
        else:
            orient = np.tile([0.0, 0.0, 1.0], (n_mol, 1))
        state = EnsembleState(
            positions=rng.uniform(-3.0, 3.0, n_mol),
            velocities=np.zeros(n_mol),
            q=rng.normal(0.0, 5.0, n_modes),
            p=np.zeros(n_modes),
            orientations=orient,
        )
        sol = solver.scf_solve(state, options=tight)
        f_nuc = solver.nuclear_forces(sol, state)
        f_ph = solver.photon_forces(sol, state)

        def energy_at(state_mod) -> float:
            return solver.scf_solve(state_mod, options=tight).energy.total

        fd_nuc = np.empty(n_mol)
        for n in range(n_mol):
            for sign, target in ((1, "plus"), (-1, "minus")):
                pos = state.positions.copy()
                pos[n] += sign * fd_step_nuclear
                val = energy_at(
                    EnsembleState(
                        positions=pos, velocities=state.velocities,
                        q=state.q, p=state.p, orientations=state.orientations,
                    )
                )
                if target == "plus":
                    e_plus = val
                else:
                    e_minus = val
            fd_nuc[n] = -(e_plus - e_minus) / (2.0 * fd_step_nuclear)
        fd_ph = np.empty(n_modes)
        for a in range(n_modes):
            q_plus = state.q.copy(); q_plus[a] += fd_step_photon
            q_minus = state.q.copy(); q_minus[a] -= fd_step_photon
            e_plus = energy_at(
                EnsembleState(
                    positions=state.positions, velocities=state.velocities,
                    q=q_plus, p=state.p, orientations=state.orientations,
                )
            )
            e_minus = energy_at(
                EnsembleState(
                    positions=state.positions, velocities=state.velocities,
                    q=q_minus, p=state.p, orientations=state.orientations,
                )
            )
            fd_ph[a] = -(e_plus - e_minus) / (2.0 * fd_step_photon)

        scale_nuc = max(np.max(np.abs(fd_nuc)), 1e-10)
        worst = max(worst, float(np.max(np.abs(f_nuc - fd_nuc)) / scale_nuc))
        if n_modes:
            scale_ph = max(np.max(np.abs(fd_ph)), 1e-10)
            worst = max(worst, float(np.max(np.abs(f_ph - fd_ph)) / scale_ph))
    return worst


def cmd_scaling_sweep(args) -> int:
    base = load_config(args.config)
    if len(base.cavity) != 1:
        raise ConfigError("scaling-sweep needs exactly one cavity mode")
    n_list = _parse_n_list(args.n_list)
    out = _out_dir(args, base)
    lambda_1 = base.cavity[0].coupling
    omega_cavity = (
        mh_to_hartree(args.omega_cavity)
        if args.omega_cavity is not None
        else base.cavity[0].omega
    )
    spec = WindowSpec(window_len=args.window)
    rows = []
    for n in n_list:
        lam = lambda_for_N(
            lambda_1, n, base.ensemble.orientation_mode
        ) if args.fixed_rabi else lambda_1
        cfg = _with_ensemble(base, n, lam)
        traj = run_trajectory(cfg)
        write_trajectory(traj, os.path.join(out, f"trajectory_N{n}.csv"))
        peaks = rabi_analysis(
            global_absorption(traj, spec), omega_cavity, args.min_prominence
        )
        rows.append((n, lam, peaks))
        print(
            f"N={n}: lambda={lam:.6g} rabi={hartree_to_mh(peaks.rabi):.4f} mH"
        )
    path = os.path.join(out, "scaling.csv")
    with open(path, "w") as fh:
        fh.write("# cavmd scaling v1\n")
        fh.write(f"# config_hash: {config_hash(base)}\n")
        fh.write(f"# seed: {base.seed}\n")
        fh.write(f"# version: {__version__}\n")
        fh.write(f"# fixed_rabi: {args.fixed_rabi}\n")
        fh.write("N,lambda_au,omega_LP_mH,omega_UP_mH,rabi_mH,midpoint_mH\n")
        for n, lam, peaks in rows:
            fh.write(
                f"{n},{lam:.17g},{hartree_to_mh(peaks.omega_lp):.17g},"
                f"{hartree_to_mh(peaks.omega_up):.17g},"
                f"{hartree_to_mh(peaks.rabi):.17g},"
                f"{hartree_to_mh(peaks.midpoint):.17g}\n"
            )
    print(f"wrote {path}")
    return 0


def _with_ensemble(cfg: ExperimentConfig, n: int, lam: float) -> ExperimentConfig:
    from dataclasses import replace

    mode = cfg.cavity[0]
    return replace(
        cfg,
        ensemble=replace(cfg.ensemble, n_molecules=n),
        cavity=(CavityMode(omega=mode.omega, coupling=lam),),
    )


if __name__ == "__main__":
    sys.exit(main())
