"""Structure-preservation observables: energy, momentum maps and spectra."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import SpectrumError
from .reduced import ReducedSystem
from .topology import degeneracy_analysis, in_rational_kernel

MIN_WINDOW_SAMPLES = 16
PEAK_FACTOR = 5.0


@dataclass
class DriftStats:
    max_deviation: float
    slope: float
    minimum: float
    maximum: float
    initial: float

    def to_dict(self):
        return {k: float(v) for k, v in self.__dict__.items()}


@dataclass
class DiagnosticsReport:
    t: np.ndarray
    energy: np.ndarray
    flux_sum: np.ndarray
    flux_sum_law: bool  # inductor column sums of K vanish
    momenta: np.ndarray  # (len(t), number of kernel vectors)
    energy_drift: DriftStats
    flux_drift: DriftStats
    spectra: dict = field(default_factory=dict)

    def summary(self):
        return {
            "energy": self.energy_drift.to_dict(),
            "flux_sum": self.flux_drift.to_dict(),
            "flux_sum_law": self.flux_sum_law,
            "momentum_max_deviation": (
                np.abs(self.momenta - self.momenta[0]).max(axis=0).tolist() if self.momenta.size else []
            ),
        }


def drift_stats(t, series) -> DriftStats:
    """Max deviation from the initial value and least-squares slope."""
    t = np.asarray(t, dtype=float)
    y = np.asarray(series, dtype=float)
    slope = float(np.polyfit(t, y, 1)[0]) if len(t) > 1 else 0.0
    return DriftStats(float(np.abs(y - y[0]).max()), slope, float(y.min()), float(y.max()), float(y[0]))


# --------------------------------------------------------------- series


def energy_series(traj, sys: ReducedSystem) -> np.ndarray:
    """1/2 v^T L v + 1/2 q^T C q per sample, evaluated in branch coordinates."""
    q, v, _ = traj.to_branch(sys)
    return 0.5 * np.einsum("ki,i,ki->k", v, sys.L, v) + 0.5 * np.einsum("ki,i,ki->k", q, sys.Cinv, q)


def energy_series_mesh(traj, sys: ReducedSystem) -> np.ndarray:
    """Same energy from the reduced quadratic forms (independent route)."""
    return 0.5 * np.einsum("ki,ij,kj->k", traj.v, sys.Lr, traj.v) + \
        0.5 * np.einsum("ki,ij,kj->k", traj.q, sys.Cr, traj.q)


def inductor_fluxes(traj, sys: ReducedSystem) -> np.ndarray:
    """Branch fluxes p = L v restricted to inductor branches, (len, n_L)."""
    _, _, p = traj.to_branch(sys)
    return p[:, sys.topo.has_L]


def flux_sum_series(traj, sys: ReducedSystem) -> np.ndarray:
    return inductor_fluxes(traj, sys).sum(axis=1)


def momentum_series(traj, sys: ReducedSystem, eta) -> np.ndarray:
    """eta^T p_L per sample; eta must lie in ker(K_L^T) exactly."""
    eta = np.asarray(eta)
    KL = sys.topo.K_L
    if eta.shape != (KL.shape[0],):
        raise ValueError(f"eta must have one entry per inductor branch ({KL.shape[0]})")
    if not in_rational_kernel(KL.T, eta):
        raise ValueError("eta is not in the kernel of K_L^T")
    return inductor_fluxes(traj, sys) @ eta.astype(float)


def diagnose(traj, sys: ReducedSystem) -> DiagnosticsReport:
    report = degeneracy_analysis(sys.spec, sys.topo)
    E = energy_series(traj, sys)
    S = flux_sum_series(traj, sys)
    P = inductor_fluxes(traj, sys)
    etas = report.conserved_momenta
    momenta = P @ etas.T.astype(float) if etas.size else np.zeros((len(traj.t), 0))
    return DiagnosticsReport(traj.t, E, S, report.flux_sum_conserved, momenta,
                             drift_stats(traj.t, E), drift_stats(traj.t, S))


# -------------------------------------------------------------- spectra


def _window_slice(t, window):
    t = np.asarray(t, dtype=float)
    a, b = window
    if not (b > a):
        raise SpectrumError(f"empty window [{a}, {b}]")
    ia = int(np.argmin(np.abs(t - a)))
    ib = int(np.argmin(np.abs(t - b)))
    if ib - ia < MIN_WINDOW_SAMPLES:
        raise SpectrumError(f"window [{a}, {b}] holds {ib - ia} samples; at least {MIN_WINDOW_SAMPLES} needed")
    return slice(ia, ib)


def spectrum(series, t, window=None):
    """Magnitude DFT of the mean-removed signal on a grid-aligned window.

    Window ends snap to the nearest samples ``ia``, ``ib`` and the half-open
    range ``[ia, ib)`` is used.  Returns ``(omega, magnitude)`` with omega in
    rad/s, ``omega_k = 2 pi k / (n_w h)``.
    """
    t = np.asarray(t, dtype=float)
    x = np.asarray(series, dtype=float)
    if window is None:
        window = (t[0], t[-1])
    sl = _window_slice(t, window)
    seg = x[sl] - x[sl].mean()
    h = t[1] - t[0]
    nw = len(seg)
    mag = np.abs(np.fft.rfft(seg))
    omega = 2 * np.pi * np.arange(len(mag)) / (nw * h)
    return omega, mag


def parseval_energy(mag, nw):
    """sum(x^2) recovered from one-sided DFT magnitudes of nw samples."""
    w = np.full(len(mag), 2.0)
    w[0] = 1.0
    if nw % 2 == 0:
        w[-1] = 1.0
    return float(np.sum(w * mag**2) / nw)


def detect_peaks(mag, factor=PEAK_FACTOR) -> np.ndarray:
    """Bins (k >= 1) that are local maxima above ``factor`` x median magnitude."""
    mag = np.asarray(mag, dtype=float)
    if len(mag) < 3:
        return np.array([], dtype=int)
    thresh = factor * np.median(mag)
    k = np.arange(1, len(mag) - 1)
    is_peak = (mag[k] > mag[k - 1]) & (mag[k] >= mag[k + 1]) & (mag[k] > thresh)
    return k[is_peak]


def equal_windows(t, k=3):
    """k consecutive grid-aligned windows with the same sample count."""
    t = np.asarray(t, dtype=float)
    n = (len(t) - 1) // k
    if n < MIN_WINDOW_SAMPLES:
        raise SpectrumError(f"{len(t)} samples cannot fill {k} windows of {MIN_WINDOW_SAMPLES}")
    return [(float(t[i * n]), float(t[(i + 1) * n])) for i in range(k)]


@dataclass
class PeakDrift:
    omega: float
    bin: int
    magnitudes: list
    ratios: list  # later windows over the first

    def to_dict(self):
        return {"omega": self.omega, "bin": self.bin, "magnitudes": self.magnitudes, "ratios": self.ratios}


def spectrum_drift(series, t, windows: Sequence) -> list:
    """Per-peak magnitude ratios of later windows against the first.

    Peaks are detected in the first window; windows must hold the same
    number of samples so that all share one frequency grid.
    """
    if len(windows) < 2:
        raise SpectrumError("need at least two windows")
    spectra = [spectrum(series, t, w) for w in windows]
    sizes = {len(m) for _, m in spectra}
    if len(sizes) != 1:
        raise SpectrumError("windows must have equal length")
    omega, first = spectra[0]
    peaks = detect_peaks(first)
    if len(peaks) == 0:
        raise SpectrumError("no spectral peaks detected in the first window")
    out = []
    for k in peaks:
        mags = [float(m[k]) for _, m in spectra]
        out.append(PeakDrift(float(omega[k]), int(k), mags, [x / mags[0] for x in mags[1:]]))
    return out


def spectrum_table(series, t, windows) -> tuple:
    """(omega, magnitudes (n_bins, n_windows)) for equal-length windows."""
    spectra = [spectrum(series, t, w) for w in windows]
    if len({len(m) for _, m in spectra}) != 1:
        raise SpectrumError("windows must have equal length")
    return spectra[0][0], np.column_stack([m for _, m in spectra])


def signal(traj, sys: ReducedSystem, name: str) -> np.ndarray:
    """Named signal of a trajectory: ``q<i>``, ``v<i>``, ``p<i>`` (branch,
    1-based), ``mq<j>``/``mv<j>``/``mp<j>`` (mesh), ``energy`` or ``fluxsum``."""
    if name == "energy":
        return energy_series(traj, sys)
    if name == "fluxsum":
        return flux_sum_series(traj, sys)
    kind, idx = name.rstrip("0123456789"), name[len(name.rstrip("0123456789")):]
    if not idx:
        raise ValueError(f"unknown signal {name!r}")
    i = int(idx) - 1
    if kind in ("q", "v", "p"):
        arrays = dict(zip("qvp", traj.to_branch(sys)))
        if not 0 <= i < sys.n:
            raise ValueError(f"branch index out of range in {name!r}")
        return arrays[kind][:, i]
    if kind in ("mq", "mv", "mp"):
        if not 0 <= i < sys.size:
            raise ValueError(f"mesh index out of range in {name!r}")
        return getattr(traj, kind[1])[:, i]
    raise ValueError(f"unknown signal {name!r}")
