"""Cavity-Hartree molecular dynamics for molecular ensembles under
vibrational strong coupling."""

__version__ = "0.1.0"

from .analysis import (
    PolaritonPeaks,
    PolarizationStats,
    Spectrum1D,
    WindowSpec,
    find_peaks,
    global_absorption,
    local_absorption,
    polarization_stats,
    power_spectrum,
    rabi_analysis,
)
from .config import (
    ExperimentConfig,
    config_hash,
    dump_config,
    lambda_for_N,
    load_config,
    loads_config,
)
from .dynamics import (
    RngStreams,
    ThermostatParams,
    Trajectory,
    initialize,
    langevin_step,
    read_trajectory,
    rotation_step,
    run_trajectory,
    write_trajectory,
)
from .grid import (
    EigenDecomposition,
    Grid1D,
    diagonalize,
    expectation,
    kinetic_operator,
    make_grid,
)
from .harmonic import (
    HarmonicEnsembleParams,
    NormalModes,
    build_hessian,
    extract_molecule_params,
    polariton_prediction,
)
from .hartree import (
    CavityHartreeSolver,
    CavityMode,
    ElectronicSolution,
    EnergyBreakdown,
    EnsembleState,
    ScfOptions,
    dipole_dipole_energy,
    effective_coupling,
    nuclear_polarization,
)
from .shin_metiu import (
    ShinMetiuParams,
    bare_surface_energy,
    electron_nuclear_force_kernel,
    electron_potential,
    find_surface_minimum,
    molecular_dipole,
    nuclear_potential,
    nuclear_potential_gradient,
    soft_coulomb,
)
