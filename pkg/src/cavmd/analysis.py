"""Post-processing: vibrational absorption spectra, polariton peaks and
local-polarization statistics.

Spectra are Welch-style averages of Blackman-windowed periodograms of the
dipole signal.  Each window has its mean removed first, which keeps the
permanent-dipole offset from leaking into the low-frequency bins.
Intensities are in arbitrary units, normalized so that the mean intensity
over the reported bins equals the power of the windowed signal; only peak
positions and relative weights matter downstream.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.signal import find_peaks as _scipy_find_peaks

from .dynamics import Trajectory
from .errors import (
    MissingObservableError,
    PeaksNotFoundError,
    SignalTooShortError,
)
from .units import hartree_to_mh


@dataclass(frozen=True)
class WindowSpec:
    """Overlapping-window layout for the spectral estimate.

    The defaults (4096-step Blackman windows shifted by a third, aiming at
    33 windows) fit a 50000-step production run; shorter signals simply
    produce fewer windows and a warning.
    """

    window_len: int = 4096
    shift: int | None = None
    n_windows_target: int = 33

    def __post_init__(self):
        if self.window_len < 4:
            raise ValueError("window_len must be at least 4")
        if self.shift is not None and not 0 < self.shift <= self.window_len:
            raise ValueError("shift must be in (0, window_len]")

    @property
    def effective_shift(self) -> int:
        return self.shift if self.shift is not None else max(1, self.window_len // 3)


@dataclass(frozen=True)
class Spectrum1D:
    """One-sided spectrum; omega in hartree (angular frequency)."""

    omega: np.ndarray
    intensity: np.ndarray
    resolution: float  # bin width, 2*pi/(window_len*dt)

    @property
    def n_bins(self) -> int:
        return self.omega.shape[0]


@dataclass(frozen=True)
class PolaritonPeaks:
    omega_lp: float
    omega_up: float
    dark: float | None = None

    @property
    def rabi(self) -> float:
        return self.omega_up - self.omega_lp

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.omega_up + self.omega_lp)


@dataclass(frozen=True)
class PolarizationStats:
    mean_dr: float
    mean_abs_dr: float
    std_abs_dr: float
    n_molecules: int
    n_samples: int


def power_spectrum(signal, dt: float, spec: WindowSpec | None = None) -> Spectrum1D:
    """Averaged Blackman-window periodogram of a real time series.

    dt is the sampling interval in a.u.; the frequency axis is angular and
    therefore in hartree.  Raises SignalTooShortError if the signal does
    not fill one window.
    """
    spec = spec or WindowSpec()
    signal = np.asarray(signal, dtype=float)
    length = spec.window_len
    if signal.shape[0] < length:
        raise SignalTooShortError(
            f"signal of {signal.shape[0]} samples is shorter than one "
            f"window ({length})"
        )
    shift = spec.effective_shift
    n_windows = (signal.shape[0] - length) // shift + 1
    if n_windows < spec.n_windows_target:
        warnings.warn(
            f"only {n_windows} windows available "
            f"(target {spec.n_windows_target}); spectrum will be noisier",
            stacklevel=2,
        )
    taper = np.blackman(length)
    n_bins = length // 2 + 1
    # one-sided bins double except DC and Nyquist; scaled so the mean
    # intensity over the reported bins equals the windowed signal power
    weights = np.full(n_bins, 2.0)
    weights[0] = 1.0
    if length % 2 == 0:
        weights[-1] = 1.0
    accum = np.zeros(n_bins)
    for w in range(n_windows):
        seg = signal[w * shift : w * shift + length]
        seg = (seg - seg.mean()) * taper
        amp = np.fft.rfft(seg)
        accum += weights * np.abs(amp) ** 2
    intensity = accum * (n_bins / length**2) / n_windows
    omega = 2.0 * np.pi * np.arange(n_bins) / (length * dt)
    return Spectrum1D(
        omega=omega, intensity=intensity, resolution=2.0 * np.pi / (length * dt)
    )


def global_absorption(traj: Trajectory, spec: WindowSpec | None = None) -> Spectrum1D:
    """Spectrum of the total projected dipole (electronic + nuclear)."""
    if traj.dipole_total is None or traj.dipole_total.size == 0:
        raise MissingObservableError("trajectory has no total-dipole series")
    return power_spectrum(traj.dipole_total, traj.sample_interval, spec)


def local_absorption(traj: Trajectory, spec: WindowSpec | None = None) -> Spectrum1D:
    """Sum over molecules of each molecule's projected-dipole spectrum."""
    if traj.dipole_mol is None or traj.dipole_mol.size == 0:
        raise MissingObservableError("trajectory has no per-molecule dipoles")
    total = None
    for n in range(traj.dipole_mol.shape[1]):
        s = power_spectrum(traj.dipole_mol[:, n], traj.sample_interval, spec)
        total = s.intensity if total is None else total + s.intensity
    return Spectrum1D(omega=s.omega, intensity=total, resolution=s.resolution)


def find_peaks(spectrum: Spectrum1D, min_prominence: float = 0.05):
    """Local maxima above a prominence threshold (fraction of the max).

    Peak positions are refined to sub-bin accuracy with a three-point
    parabola.  Returns a list of (omega, intensity, prominence) tuples
    sorted by omega; empty when nothing qualifies.
    """
    intensity = spectrum.intensity
    if intensity.size == 0 or np.all(intensity == intensity[0]):
        return []
    threshold = min_prominence * float(intensity.max())
    idx, props = _scipy_find_peaks(intensity, prominence=threshold)
    peaks = []
    for i, prom in zip(idx, props["prominences"]):
        omega, height = _parabolic_refine(spectrum, int(i))
        peaks.append((omega, height, float(prom)))
    return sorted(peaks, key=lambda t: t[0])


def _parabolic_refine(spectrum: Spectrum1D, i: int) -> tuple[float, float]:
    y = spectrum.intensity
    if i == 0 or i == y.size - 1:
        return float(spectrum.omega[i]), float(y[i])
    denom = y[i - 1] - 2.0 * y[i] + y[i + 1]
    if denom == 0:
        return float(spectrum.omega[i]), float(y[i])
    delta = 0.5 * (y[i - 1] - y[i + 1]) / denom
    delta = float(np.clip(delta, -0.5, 0.5))
    omega = spectrum.omega[i] + delta * spectrum.resolution
    height = y[i] - 0.25 * (y[i - 1] - y[i + 1]) * delta
    return float(omega), float(height)


def rabi_analysis(
    spectrum: Spectrum1D, omega_cavity: float, min_prominence: float = 0.05
) -> PolaritonPeaks:
    """Identify lower/upper polaritons around the bare cavity frequency.

    Only peaks in the band [omega_cavity/2, 3*omega_cavity/2] compete:
    rotational diffusion of permanent dipoles floods the spectrum below
    ~1 mH with power that has nothing to do with the polaritons, and the
    prominence gate is referenced to the strongest in-band intensity for
    the same reason.  The most prominent in-band peaks below and above
    omega_cavity become LP and UP; a peak within one bin of omega_cavity
    is reported as the dark state and excluded from the assignment.
    """
    lo, hi = 0.5 * omega_cavity, 1.5 * omega_cavity
    in_band = (spectrum.omega >= lo) & (spectrum.omega <= hi)
    if not np.any(in_band):
        raise PeaksNotFoundError("spectrum does not cover the cavity band")
    band_max = float(spectrum.intensity[in_band].max())
    full_max = float(spectrum.intensity.max())
    effective = min_prominence * band_max / full_max if full_max > 0 else 0.0
    peaks = [
        p for p in find_peaks(spectrum, effective) if lo <= p[0] <= hi
    ]
    res = spectrum.resolution
    dark_candidates = [p for p in peaks if abs(p[0] - omega_cavity) <= res]
    dark = max(dark_candidates, key=lambda t: t[2])[0] if dark_candidates else None
    below = [p for p in peaks if p[0] < omega_cavity - res]
    above = [p for p in peaks if p[0] > omega_cavity + res]
    if not below or not above:
        raise PeaksNotFoundError(
            f"no pair of peaks bracketing omega={omega_cavity} found "
            f"({len(peaks)} in-band peaks)"
        )
    lp = max(below, key=lambda t: t[2])[0]
    up = max(above, key=lambda t: t[2])[0]
    return PolaritonPeaks(omega_lp=lp, omega_up=up, dark=dark)


def polarization_stats(traj: Trajectory) -> PolarizationStats:
    """Time-and-ensemble statistics of the local polarization shifts."""
    if traj.dr_mol is None or traj.dr_mol.size == 0:
        raise MissingObservableError(
            "trajectory has no polarization diagnostics (dr series)"
        )
    dr = traj.dr_mol
    per_mol_abs = np.abs(dr).mean(axis=0)
    ddof = 1 if per_mol_abs.size > 1 else 0
    return PolarizationStats(
        mean_dr=float(dr.mean()),
        mean_abs_dr=float(np.abs(dr).mean()),
        std_abs_dr=float(per_mol_abs.std(ddof=ddof)),
        n_molecules=dr.shape[1],
        n_samples=dr.shape[0],
    )


# ---------------------------------------------------------------------------
# CSV emitters (all carry a '#' metadata preamble and unit-suffixed columns)


def write_spectrum_csv(
    path,
    global_spec: Spectrum1D,
    local_spec: Spectrum1D | None = None,
    preamble: dict | None = None,
) -> None:
    with open(path, "w") as fh:
        _write_preamble(fh, "spectrum", preamble)
        if local_spec is not None:
            fh.write("omega_mH,intensity_global,intensity_local\n")
            for i in range(global_spec.n_bins):
                fh.write(
                    f"{hartree_to_mh(global_spec.omega[i]):.17g},"
                    f"{global_spec.intensity[i]:.17g},"
                    f"{local_spec.intensity[i]:.17g}\n"
                )
        else:
            fh.write("omega_mH,intensity_global\n")
            for i in range(global_spec.n_bins):
                fh.write(
                    f"{hartree_to_mh(global_spec.omega[i]):.17g},"
                    f"{global_spec.intensity[i]:.17g}\n"
                )


def write_peaks_csv(path, peaks: PolaritonPeaks, preamble: dict | None = None) -> None:
    with open(path, "w") as fh:
        _write_preamble(fh, "peaks", preamble)
        fh.write("omega_LP_mH,omega_UP_mH,rabi_mH,midpoint_mH,dark_mH\n")
        dark = hartree_to_mh(peaks.dark) if peaks.dark is not None else float("nan")
        fh.write(
            f"{hartree_to_mh(peaks.omega_lp):.17g},"
            f"{hartree_to_mh(peaks.omega_up):.17g},"
            f"{hartree_to_mh(peaks.rabi):.17g},"
            f"{hartree_to_mh(peaks.midpoint):.17g},"
            f"{dark:.17g}\n"
        )


def write_polarization_csv(path, rows, preamble: dict | None = None) -> None:
    """rows: iterable of (n_molecules, PolarizationStats)."""
    with open(path, "w") as fh:
        _write_preamble(fh, "polarization", preamble)
        fh.write("N,mean_dr_bohr,mean_abs_dr_bohr,std_abs_dr_bohr,n_samples\n")
        for n, stats in rows:
            fh.write(
                f"{n},{stats.mean_dr:.17g},{stats.mean_abs_dr:.17g},"
                f"{stats.std_abs_dr:.17g},{stats.n_samples}\n"
            )


def _write_preamble(fh, kind: str, preamble: dict | None) -> None:
    fh.write(f"# cavmd {kind} v1\n")
    for key, value in (preamble or {}).items():
        fh.write(f"# {key}: {value}\n")
