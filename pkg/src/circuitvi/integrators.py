"""Discrete variational integrators for the reduced circuit equations, plus an
explicit RK4 baseline.

Every variational scheme is a constant linear one-step map

    A z_k = B z_{k-1} + F K2^T u_s(t*)

on the stacked mesh state z = (q, v, p), with the forcing evaluated at the
scheme's own time t* (t_k forward, t_{k-1} backward, t_{k+1/2} midpoint).
"""

from __future__ import annotations

import logging
import time as _time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg as sla
from scipy.linalg.lapack import dgetrs

from .errors import ConfigError, DivergenceError, GateError
from .reduced import MeshState, ReducedSystem
from .topology import Verdict, numerical_nullity

log = logging.getLogger(__name__)

VI_SCHEMES = ("vi_forward_euler", "vi_backward_euler", "vi_midpoint")
SCHEMES = VI_SCHEMES + ("rk4", "mna_bdf2")
KAPPA_WARN = 1e12


@dataclass(frozen=True)
class IntegratorConfig:
    scheme: str
    h: float
    T: float

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ConfigError(f"unknown scheme {self.scheme!r}; choose from {', '.join(SCHEMES)}")
        if not (self.h > 0 and self.T > 0):
            raise ConfigError("step size h and horizon T must be positive")
        N = round(self.T / self.h)
        if N < 1 or abs(N * self.h - self.T) > 1e-9 * max(1.0, self.T):
            raise ConfigError(f"T = {self.T} is not an integer multiple of h = {self.h}")

    @property
    def N(self) -> int:
        return round(self.T / self.h)


@dataclass
class Trajectory:
    """Mesh-space samples on the grid t_k = k h.

    ``v`` holds grid currents.  For the midpoint scheme the computed currents
    live on the half grid and are kept in ``v_half``; ``v`` is then the
    Legendre current Lr^{-1} p at the grid (or the average of neighbouring
    half-step currents when Lr is singular).
    """

    scheme: str
    h: float
    t: np.ndarray
    q: np.ndarray
    v: np.ndarray
    p: np.ndarray
    v_half: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.t)

    def state(self, k: int) -> MeshState:
        return MeshState(float(self.t[k]), self.q[k].copy(), self.v[k].copy(), self.p[k].copy())

    def to_branch(self, sys: ReducedSystem):
        """Branch charges, currents and fluxes (p = L v), each (N+1, n)."""
        q = self.q @ sys.K2.T
        v = self.v @ sys.K2.T
        return q, v, sys.L * v


# ---------------------------------------------------------------- gates


def gating_matrix(sys: ReducedSystem, scheme: str, h: float) -> np.ndarray:
    """Matrix whose regularity decides unique solvability of one step."""
    if scheme == "vi_forward_euler":
        return sys.Lr + h * sys.Rr
    if scheme == "vi_backward_euler":
        return sys.Lr.copy()
    if scheme == "vi_midpoint":
        return 2 * sys.Lr + h * sys.Rr + 0.5 * h * h * sys.Cr
    if scheme == "rk4":
        return sys.Lr.copy()
    raise ConfigError(f"no reduced gating matrix for scheme {scheme!r}")


def check_solvability(sys: ReducedSystem, scheme: str, h: float) -> Verdict:
    if scheme == "mna_bdf2":
        from .mna import mna_assemble, bdf_matrix

        M = bdf_matrix(mna_assemble(sys.spec), h, 1.5)
        k = numerical_nullity(M)
        return Verdict(scheme, k == 0, k, h)
    k = numerical_nullity(gating_matrix(sys, scheme, h), dim=max(sys.n, sys.size))
    return Verdict(scheme, k == 0, k, h)


def require_solvable(sys, scheme, h):
    verdict = check_solvability(sys, scheme, h)
    if not verdict.ok:
        what = {
            "vi_forward_euler": "K2^T (L + h diag(R)) K2",
            "vi_backward_euler": "K2^T L K2",
            "vi_midpoint": "K2^T (2L + h diag(R) + h^2/2 C) K2",
            "rk4": "K2^T L K2 (rk4 requires regular Lr)",
            "mna_bdf2": "the BDF2 iteration matrix",
        }[scheme]
        raise GateError(f"{scheme}: {what} is singular at h = {h} (nullity {verdict.nullity})", verdict.nullity)
    return verdict


# ------------------------------------------------------ scheme matrices


@dataclass(frozen=True, eq=False)
class SchemeMatrices:
    scheme: str
    h: float
    A: np.ndarray
    B: np.ndarray
    F: np.ndarray
    lu: tuple
    kappa: float

    def solve(self, rhs):
        x, info = dgetrs(self.lu[0], self.lu[1], rhs)
        return x

    def propagator(self):
        """(S, G) with z_k = S z_{k-1} + G g for mesh forcing g."""
        return sla.lu_solve(self.lu, self.B), sla.lu_solve(self.lu, self.F)


def scheme_matrices(sys: ReducedSystem, scheme: str, h: float, check=True) -> SchemeMatrices:
    if scheme not in VI_SCHEMES:
        raise ConfigError(f"{scheme!r} is not a variational scheme")
    if check:
        require_solvable(sys, scheme, h)
    r = sys.size
    I, Z = np.eye(r), np.zeros((r, r))
    Lr, Cr, Rr = sys.Lr, sys.Cr, sys.Rr
    if scheme == "vi_forward_euler":
        A = np.block([[I, Z, Z], [Z, Lr, -I], [h * Cr, h * Rr, I]])
        B = np.block([[I, h * I, Z], [Z, Z, Z], [Z, Z, I]])
    elif scheme == "vi_backward_euler":
        A = np.block([[I, -h * I, Z], [Z, Lr, -I], [Z, Z, I]])
        B = np.block([[I, Z, Z], [Z, Z, Z], [-h * Cr, -h * Rr, I]])
    else:
        A = np.block([[I, -h * I, Z], [Z, Lr, -0.5 * I], [0.5 * h * Cr, h * Rr, I]])
        B = np.block([[I, Z, Z], [Z, Z, 0.5 * I], [-0.5 * h * Cr, Z, I]])
    F = np.vstack([Z, Z, h * I])
    kappa = float(np.linalg.cond(A))
    if kappa > KAPPA_WARN:
        log.warning("%s iteration matrix is ill-conditioned at h = %g (kappa = %.3e)", scheme, h, kappa)
    return SchemeMatrices(scheme, h, A, B, F, sla.lu_factor(A), kappa)


def forcing_times(scheme: str, t_prev: float, h: float) -> float:
    """Time at which step t_prev -> t_prev + h evaluates the sources."""
    if scheme == "vi_forward_euler":
        return t_prev + h
    if scheme == "vi_backward_euler":
        return t_prev
    return t_prev + 0.5 * h


def _vi_step(state: MeshState, sys, h, scheme, t=None, mats=None) -> MeshState:
    if mats is None:
        mats = scheme_matrices(sys, scheme, h)
    z = np.concatenate([state.q, state.v, state.p])
    g = sys.forcing(forcing_times(scheme, state.t, h) if t is None else t)
    out = mats.solve(mats.B @ z + mats.F @ g)
    r = sys.size
    return MeshState(state.t + h, out[:r], out[r:2 * r], out[2 * r:])


def step_vi_forward_euler(state: MeshState, sys: ReducedSystem, h: float, t=None, mats=None) -> MeshState:
    """q_k = q_{k-1} + h v_{k-1};  Lr v_k = p_k;
    p_k = p_{k-1} - h Cr q_k - h Rr v_k + h K2^T u_s(t_k)."""
    return _vi_step(state, sys, h, "vi_forward_euler", t, mats)


def step_vi_backward_euler(state: MeshState, sys: ReducedSystem, h: float, t=None, mats=None) -> MeshState:
    """Explicit in p, implicit in q; sources at t_{k-1}.

    ``t`` overrides the forcing time (default: the scheme's own time).
    """
    return _vi_step(state, sys, h, "vi_backward_euler", t, mats)


def step_vi_midpoint(state: MeshState, sys: ReducedSystem, h: float, t=None, mats=None) -> MeshState:
    """One implicit-midpoint step; the returned ``v`` is v_{k+1/2}.

    The incoming ``state.v`` is not used (zero column of B).
    """
    return _vi_step(state, sys, h, "vi_midpoint", t, mats)


def init_p0(sys: ReducedSystem, v0) -> np.ndarray:
    return sys.Lr @ np.asarray(v0, dtype=float)


# ------------------------------------------------------------ simulation


def _check_finite(X, scheme):
    bad = ~np.isfinite(X).all(axis=1)
    if bad.any():
        k = int(np.argmax(bad))
        raise DivergenceError(f"{scheme}: non-finite state at step {k}", step=k)


def simulate(sys: ReducedSystem, ic: MeshState, config: IntegratorConfig) -> Trajectory:
    """Integrate from ``ic`` over N = T/h steps with the configured scheme."""
    if config.scheme == "rk4":
        return simulate_rk4(sys, ic, config)
    if config.scheme == "mna_bdf2":
        from .mna import simulate_mna

        return simulate_mna(sys, ic, config)
    scheme, h, N = config.scheme, config.h, config.N
    started = _time.perf_counter()
    mats = scheme_matrices(sys, scheme, h)
    r = sys.size
    t = ic.t + h * np.arange(N + 1)
    Z = np.empty((N + 1, 3 * r))
    p0 = sys.Lr @ ic.v
    Z[0] = np.concatenate([ic.q, ic.v, p0])
    if scheme == "vi_midpoint":
        Z[0, r:2 * r] = 0.0  # v_{-1/2} is a pseudo-variable
    B, lu, piv = mats.B, mats.lu[0], mats.lu[1]
    with np.errstate(all="ignore"):
        if sys.spec.has_sources:
            eval_t = np.array([forcing_times(scheme, tk, h) for tk in t[:-1]])
            rhs_f = sys.forcing(eval_t) @ mats.F.T
            for k in range(N):
                Z[k + 1] = dgetrs(lu, piv, B @ Z[k] + rhs_f[k])[0]
        else:
            for k in range(N):
                Z[k + 1] = dgetrs(lu, piv, B @ Z[k])[0]
    _check_finite(Z, scheme)
    q, v, p = Z[:, :r], Z[:, r:2 * r].copy(), Z[:, 2 * r:]
    v_half = None
    if scheme == "vi_midpoint":
        v_half = v[1:].copy()
        v = grid_currents_midpoint(sys, p, v_half, ic.v)
    elapsed = _time.perf_counter() - started
    return Trajectory(scheme, h, t, q.copy(), v, p.copy(), v_half,
                      {"kappa": mats.kappa, "wall_time": elapsed, "steps": N})


def grid_currents_midpoint(sys, p, v_half, v0):
    """Grid currents for a midpoint run (see :class:`Trajectory`)."""
    if sys.lr_regular:
        return sys.solve_Lr(p.T).T
    v = np.empty_like(p)
    v[0] = v0
    v[1:-1] = 0.5 * (v_half[:-1] + v_half[1:])
    v[-1] = v_half[-1]
    return v


# ------------------------------------------------------------------ RK4


def _rk4_operator(sys):
    require_solvable(sys, "rk4", 1.0)
    r = sys.size
    W = sla.lu_solve(sla.lu_factor(sys.Lr), np.eye(r))
    J = np.block([[np.zeros((r, r)), np.eye(r)], [-W @ sys.Cr, -W @ sys.Rr]])
    return J, W


def step_rk4(sys: ReducedSystem, state: MeshState, h: float, _op=None) -> MeshState:
    """Classical RK4 on q' = v, Lr v' = -Cr q - Rr v + K2^T u_s(t)."""
    J, W = _op if _op is not None else _rk4_operator(sys)
    r = sys.size
    t = state.t

    def f(tt, y):
        out = J @ y
        if sys.spec.has_sources:
            out[r:] += W @ sys.forcing(tt)
        return out

    y = np.concatenate([state.q, state.v])
    k1 = f(t, y)
    k2 = f(t + h / 2, y + h / 2 * k1)
    k3 = f(t + h / 2, y + h / 2 * k2)
    k4 = f(t + h, y + h * k3)
    y = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return MeshState(t + h, y[:r], y[r:], sys.Lr @ y[r:])


def simulate_rk4(sys: ReducedSystem, ic: MeshState, config: IntegratorConfig) -> Trajectory:
    started = _time.perf_counter()
    h, N = config.h, config.N
    op = _rk4_operator(sys)
    r = sys.size
    t = ic.t + h * np.arange(N + 1)
    Y = np.empty((N + 1, 2 * r))
    Y[0] = np.concatenate([ic.q, ic.v])
    J, W = op
    with np.errstate(all="ignore"):
        if sys.spec.has_sources:
            for k in range(N):
                s = step_rk4(sys, MeshState(t[k], Y[k, :r], Y[k, r:], None), h, op)
                Y[k + 1, :r], Y[k + 1, r:] = s.q, s.v
        else:
            # autonomous linear system: one RK4 step is a fixed matrix
            hJ = h * J
            S = np.eye(2 * r) + hJ @ (np.eye(2 * r) + hJ / 2 @ (np.eye(2 * r) + hJ / 3 @ (np.eye(2 * r) + hJ / 4)))
            for k in range(N):
                Y[k + 1] = S @ Y[k]
    _check_finite(Y, "rk4")
    q, v = Y[:, :r].copy(), Y[:, r:].copy()
    return Trajectory("rk4", h, t, q, v, v @ sys.Lr, None,
                      {"kappa": float(np.linalg.cond(sys.Lr)), "wall_time": _time.perf_counter() - started,
                       "steps": N})
