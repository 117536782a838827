"""Flow-averaging (FLAVOR) integration of circuits with a stiff capacitor.

A macro step H is split into ``samples`` substeps of length delta = H /
samples.  Each substep is one legacy variational step of length tau on the
full circuit followed by one step of length delta - tau on the circuit with
the fast 1/C terms switched off.
"""

from __future__ import annotations

import logging
import time as _time
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigError
from .integrators import VI_SCHEMES, Trajectory, forcing_times, grid_currents_midpoint, scheme_matrices
from .netlist import CircuitSpec
from .reduced import MeshState, ReducedSystem, assemble
from .topology import TopologyMatrices

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class FlavorConfig:
    epsilon: float
    tau: float
    H: float
    samples: int
    fast_branches: tuple
    legacy: str = "vi_midpoint"

    def __post_init__(self):
        object.__setattr__(self, "fast_branches", tuple(int(i) for i in self.fast_branches))
        if not self.fast_branches:
            raise ConfigError("fast_branches must not be empty")
        if self.legacy not in VI_SCHEMES:
            raise ConfigError(f"legacy integrator must be one of {', '.join(VI_SCHEMES)}")
        if not (self.epsilon > 0 and self.tau > 0 and self.H > 0) or int(self.samples) < 1:
            raise ConfigError("epsilon, tau, H must be positive and samples at least 1")
        if self.tau >= self.delta:
            raise ConfigError(f"tau = {self.tau} must be smaller than delta = H/samples = {self.delta}")

    @property
    def delta(self) -> float:
        return self.H / self.samples

    def warnings(self) -> list:
        """Soft checks of the scale-separation conditions."""
        out = []
        ratio = self.tau / self.epsilon
        if ratio > 0.5:
            out.append(f"tau/epsilon = {ratio:.3g} > 0.5: the fine substep may not resolve the stiff scale")
        if self.delta > ratio:
            out.append(f"delta = {self.delta:.3g} exceeds tau/epsilon = {ratio:.3g}")
        return out


def split_potential(spec: CircuitSpec, fast_branches: Sequence[int], topo: TopologyMatrices = None):
    """(full system, system with 1/C = 0 on the fast branches)."""
    fast = [int(i) for i in fast_branches]
    if not fast:
        raise ConfigError("fast_branches must not be empty")
    for i in fast:
        if not 0 <= i < spec.n:
            raise ConfigError(f"fast branch index {i + 1} out of range")
        if not spec.branches[i].has_C:
            raise ConfigError(f"fast branch {i + 1} carries no capacitor")
    full = assemble(spec, topo)
    return full, assemble(spec, full.topo, zero_potential=fast)


def suggest_fast_branches(spec: CircuitSpec, ratio=1e-2) -> list:
    """Capacitor branches with C <= ratio * median C (heuristic only)."""
    caps = [(i, b.C) for i, b in enumerate(spec.branches) if b.has_C]
    if not caps:
        return []
    med = float(np.median([c for _, c in caps]))
    return [i for i, c in caps if c <= ratio * med]


def slow_meshes(sys: ReducedSystem, fast_branches) -> np.ndarray:
    """Meshes whose loop avoids every fast branch."""
    K2 = sys.topo.K2
    return np.flatnonzero(~np.any(K2[list(fast_branches)] != 0, axis=0))


def _affine(sys, scheme, h):
    mats = scheme_matrices(sys, scheme, h)
    S, G = mats.propagator()
    return S, G, mats.kappa


def flavor_simulate(sys_full: ReducedSystem, sys_off: ReducedSystem, ic: MeshState, cfg: FlavorConfig,
                    T: float) -> Trajectory:
    """FLAVOR run over [t0, t0 + T], sampled every macro step H."""
    for msg in cfg.warnings():
        log.warning(msg)
    n_macro = round(T / cfg.H)
    if n_macro < 1 or abs(n_macro * cfg.H - T) > 1e-9 * max(1.0, T):
        raise ConfigError(f"T = {T} is not an integer multiple of H = {cfg.H}")
    started = _time.perf_counter()
    scheme, tau, delta = cfg.legacy, cfg.tau, cfg.delta
    S_full, G_full, k1 = _affine(sys_full, scheme, tau)
    S_off, G_off, k2 = _affine(sys_off, scheme, delta - tau)
    P = S_off @ S_full
    r = sys_full.size
    z = np.concatenate([ic.q, ic.v, sys_full.Lr @ ic.v])
    if scheme == "vi_midpoint":
        z[r:2 * r] = 0.0
    t = ic.t + cfg.H * np.arange(n_macro + 1)
    Z = np.empty((n_macro + 1, 3 * r))
    Z[0] = z
    forced = sys_full.spec.has_sources
    if forced:
        G1 = S_off @ G_full
    with np.errstate(all="ignore"):
        for k in range(n_macro):
            for j in range(cfg.samples):
                if forced:
                    ts = t[k] + j * delta
                    z = P @ z + G1 @ sys_full.forcing(forcing_times(scheme, ts, tau)) \
                        + G_off @ sys_full.forcing(forcing_times(scheme, ts + tau, delta - tau))
                else:
                    z = P @ z
            Z[k + 1] = z
    if not np.isfinite(Z).all():
        from .errors import DivergenceError

        k = int(np.argmax(~np.isfinite(Z).all(axis=1)))
        raise DivergenceError(f"flavor: non-finite state at macro step {k}", step=k)
    q, v, p = Z[:, :r].copy(), Z[:, r:2 * r].copy(), Z[:, 2 * r:].copy()
    v_half = None
    if scheme == "vi_midpoint":
        v_half = v[1:].copy()
        v = grid_currents_midpoint(sys_full, p, v_half, ic.v)
    meta = {"kappa_full": k1, "kappa_off": k2, "wall_time": _time.perf_counter() - started,
            "macro_steps": n_macro, "delta": delta}
    return Trajectory("flavor:" + scheme, cfg.H, t, q, v, p, v_half, meta)


def relative_l2_error(approx, reference) -> float:
    approx = np.asarray(approx, dtype=float)
    reference = np.asarray(reference, dtype=float)
    den = np.linalg.norm(reference)
    return float(np.linalg.norm(approx - reference) / den) if den else float(np.linalg.norm(approx))


def slow_error(flavor: Trajectory, benchmark: Trajectory, sys: ReducedSystem, fast_branches) -> dict:
    """Relative L2 error of each slow mesh charge at the FLAVOR sample times."""
    idx = np.rint((flavor.t - benchmark.t[0]) / benchmark.h).astype(int)
    if np.any(np.abs(benchmark.t[idx] - flavor.t) > 1e-9 * max(1.0, flavor.t[-1])):
        raise ConfigError("benchmark grid does not contain the FLAVOR sample times")
    return {int(j): relative_l2_error(flavor.q[:, j], benchmark.q[idx, j]) for j in slow_meshes(sys, fast_branches)}
