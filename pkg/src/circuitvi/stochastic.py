"""Noisy forward-Euler variational integrator and moment checks.

Each ensemble member j draws its normal variates from its own Philox
stream, seeded by ``SeedSequence(seed).spawn(M)[j]``.  Statistics are
accumulated chunk by chunk and merged in member order, so results do not
depend on how chunks are scheduled.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg as sla

from .errors import ConfigError, GateError
from .integrators import IntegratorConfig, require_solvable, scheme_matrices
from .reduced import MeshState, ReducedSystem

CHUNK = 2048


@dataclass(frozen=True, eq=False)
class NoiseSpec:
    """Per-branch noise amplitudes (n x n), seed and ensemble size."""

    Sigma: np.ndarray
    seed: int = 0
    M: int = 1

    def __post_init__(self):
        S = np.atleast_2d(np.asarray(self.Sigma, dtype=float))
        if S.ndim != 2 or S.shape[0] != S.shape[1]:
            raise ConfigError("Sigma must be a square matrix")
        if not np.all(np.isfinite(S)):
            raise ConfigError("Sigma must be finite")
        if int(self.M) < 1:
            raise ConfigError("ensemble size M must be at least 1")
        object.__setattr__(self, "Sigma", S)

    @classmethod
    def diagonal(cls, n, sigma, seed=0, M=1):
        return cls(np.diag(np.broadcast_to(np.asarray(sigma, dtype=float), (n,))), seed, M)


@dataclass
class EnsembleStats:
    """Empirical moments of x = (q~, p~) on the grid (population variance)."""

    t: np.ndarray
    mean: np.ndarray  # (N+1, 2r)
    cov: np.ndarray  # (N+1, 2r, 2r)
    M: int
    K2: np.ndarray

    @property
    def var(self) -> np.ndarray:
        return np.clip(np.einsum("kii->ki", self.cov), 0.0, None)

    def branch_cov(self) -> np.ndarray:
        return _to_branch(self.cov, self.K2)

    def branch_var(self) -> np.ndarray:
        """Variances of (q, p) in branch coordinates, (N+1, 2n)."""
        return np.clip(np.einsum("kii->ki", self.branch_cov()), 0.0, None)


@dataclass
class AnalyticMoments:
    t: np.ndarray
    mean: np.ndarray
    cov: np.ndarray
    A: np.ndarray
    Sigma_bar: np.ndarray
    K2: np.ndarray

    @property
    def var(self) -> np.ndarray:
        return np.clip(np.einsum("kii->ki", self.cov), 0.0, None)

    def branch_cov(self) -> np.ndarray:
        return _to_branch(self.cov, self.K2)

    def branch_var(self) -> np.ndarray:
        return np.clip(np.einsum("kii->ki", self.branch_cov()), 0.0, None)


def _to_branch(cov, K2):
    """blockdiag(K2, K2) D blockdiag(K2^T, K2^T)."""
    P = sla.block_diag(K2, K2)
    return np.einsum("ij,kjl,ml->kim", P, cov, P)


# ---------------------------------------------------------------- step


def noise_increment(sys: ReducedSystem, Sigma, xi, h):
    """sqrt(h) K2^T Sigma xi, for one draw (n,) or stacked draws (..., n)."""
    return np.sqrt(h) * (np.asarray(xi, dtype=float) @ (sys.K2.T @ Sigma).T)


def step_stochastic_forward_euler(state: MeshState, sys: ReducedSystem, xi, h: float, Sigma,
                                  t=None, mats=None) -> MeshState:
    """Forward-Euler step with sqrt(h) K2^T Sigma xi added to the p~ equation."""
    if mats is None:
        mats = scheme_matrices(sys, "vi_forward_euler", h)
    r = sys.size
    z = np.concatenate([state.q, state.v, state.p])
    g = sys.forcing(state.t + h if t is None else t)
    rhs = mats.B @ z + mats.F @ g
    rhs[2 * r:] += noise_increment(sys, np.asarray(Sigma, dtype=float), xi, h)
    out = mats.solve(rhs)
    return MeshState(state.t + h, out[:r], out[r:2 * r], out[2 * r:])


# ------------------------------------------------------------ ensemble


def member_generators(seed: int, M: int):
    return [np.random.Generator(np.random.Philox(s)) for s in np.random.SeedSequence(seed).spawn(M)]


def _run_chunk(sys, mats, ic, h, N, Sigma, gens, forcing_rhs):
    r = sys.size
    m = len(gens)
    xi = np.stack([g.standard_normal((N, sys.n)) for g in gens], axis=1)  # (N, m, n)
    kick = np.sqrt(h) * (xi @ (sys.K2.T @ Sigma).T)  # (N, m, r)
    Z = np.empty((3 * r, m))
    Z[:] = np.concatenate([ic.q, ic.v, sys.Lr @ ic.v])[:, None]
    X = np.empty((N + 1, m, 2 * r))
    X[0, :, :r] = Z[:r].T
    X[0, :, r:] = Z[2 * r:].T
    for k in range(N):
        rhs = mats.B @ Z
        if forcing_rhs is not None:
            rhs += forcing_rhs[k][:, None]
        rhs[2 * r:] += kick[k].T
        Z = sla.lu_solve(mats.lu, rhs)
        X[k + 1, :, :r] = Z[:r].T
        X[k + 1, :, r:] = Z[2 * r:].T
    mean = X.mean(axis=1)
    dev = X - mean[:, None, :]
    M2 = np.einsum("kmi,kmj->kij", dev, dev)
    return m, mean, M2, bool(np.isfinite(X).all())


def _merge(a, b):
    """Chan et al. pairwise merge of (count, mean, M2)."""
    na, ma, Sa = a
    nb, mb, Sb = b
    n = na + nb
    d = mb - ma
    mean = ma + d * (nb / n)
    M2 = Sa + Sb + np.einsum("ki,kj->kij", d, d) * (na * nb / n)
    return n, mean, M2


def run_ensemble(sys: ReducedSystem, ic: MeshState, config: IntegratorConfig, noise: NoiseSpec,
                 chunk: int = CHUNK, workers: int = 1) -> EnsembleStats:
    """M noisy forward-Euler runs from the same initial state."""
    if noise.Sigma.shape != (sys.n, sys.n):
        raise ConfigError(f"Sigma must be {sys.n} x {sys.n}")
    h, N = config.h, config.N
    mats = scheme_matrices(sys, "vi_forward_euler", h)
    t = ic.t + h * np.arange(N + 1)
    forcing_rhs = None
    if sys.spec.has_sources:
        forcing_rhs = sys.forcing(t[1:]) @ mats.F.T
    gens = member_generators(noise.seed, noise.M)
    pieces = [gens[i:i + chunk] for i in range(0, noise.M, chunk)]
    job = lambda g: _run_chunk(sys, mats, ic, h, N, noise.Sigma, g, forcing_rhs)
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(job, pieces))
    else:
        results = [job(g) for g in pieces]
    if not all(r[3] for r in results):
        from .errors import DivergenceError

        raise DivergenceError("stochastic ensemble produced non-finite states")
    acc = results[0][:3]
    for res in results[1:]:
        acc = _merge(acc, res[:3])
    count, mean, M2 = acc
    cov = M2 / count
    cov = 0.5 * (cov + np.transpose(cov, (0, 2, 1)))
    return EnsembleStats(t, mean, cov, count, sys.K2)


# ------------------------------------------------------------ analytic


def drift_matrix(sys: ReducedSystem) -> np.ndarray:
    """Drift of x = (q~, p~): q' = Lr^{-1} p, p' = -Cr q - Rr Lr^{-1} p."""
    require_solvable(sys, "rk4", 1.0)
    r = sys.size
    W = sla.lu_solve(sla.lu_factor(sys.Lr), np.eye(r))
    return np.block([[np.zeros((r, r)), W], [-sys.Cr, -sys.Rr @ W]])


def noise_matrix(sys: ReducedSystem, Sigma) -> np.ndarray:
    r, n = sys.size, sys.n
    out = np.zeros((2 * r, 2 * n))
    out[r:, n:] = sys.K2.T @ np.asarray(Sigma, dtype=float)
    return out


def lyapunov_rk4(A, Q, t, substeps=10):
    """D' = A D + D A^T + Q, D(t_0) = 0, by RK4 with ``substeps`` per grid step."""
    t = np.asarray(t, dtype=float)
    d = A.shape[0]
    out = np.zeros((len(t), d, d))
    D = np.zeros((d, d))
    f = lambda X: A @ X + X @ A.T + Q
    for k in range(1, len(t)):
        dt = (t[k] - t[k - 1]) / substeps
        for _ in range(substeps):
            k1 = f(D)
            k2 = f(D + 0.5 * dt * k1)
            k3 = f(D + 0.5 * dt * k2)
            k4 = f(D + dt * k3)
            D = D + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        out[k] = 0.5 * (D + D.T)
    return out


def analytic_moments(sys: ReducedSystem, noise: NoiseSpec, t, x0=None, substeps=10) -> AnalyticMoments:
    """Mean and covariance of the continuous linear SDE dx = (A x + b) dt + S dW.

    ``x0`` is the initial (q~, p~); default zero.  The homogeneous mean uses
    matrix exponentials; source forcing is added by RK4 at the covariance
    substep.
    """
    try:
        A = drift_matrix(sys)
    except GateError as exc:
        raise GateError("analytic moments need a regular Lr", exc.nullity) from None
    t = np.asarray(t, dtype=float)
    r = sys.size
    x0 = np.zeros(2 * r) if x0 is None else np.asarray(x0, dtype=float)
    mean = np.empty((len(t), 2 * r))
    for k, tk in enumerate(t):
        mean[k] = sla.expm(A * (tk - t[0])) @ x0
    if sys.spec.has_sources:
        y = np.zeros(2 * r)

        def b(tt):
            out = np.zeros(2 * r)
            out[r:] = sys.forcing(tt)
            return out

        for k in range(1, len(t)):
            dt = (t[k] - t[k - 1]) / substeps
            tt = t[k - 1]
            for _ in range(substeps):
                k1 = A @ y + b(tt)
                k2 = A @ (y + 0.5 * dt * k1) + b(tt + 0.5 * dt)
                k3 = A @ (y + 0.5 * dt * k2) + b(tt + 0.5 * dt)
                k4 = A @ (y + dt * k3) + b(tt + dt)
                y = y + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
                tt += dt
            mean[k] += y
    Sb = noise_matrix(sys, noise.Sigma)
    cov = lyapunov_rk4(A, Sb @ Sb.T, t, substeps)
    return AnalyticMoments(t, mean, cov, A, Sb, sys.K2)


def compare_moments(stats: EnsembleStats, analytic: AnalyticMoments, columns, floor=0.1) -> dict:
    """Max relative variance deviation per branch-space column.

    Only times where the analytic variance is at least ``floor`` times its
    final value are compared.
    """
    ev = stats.branch_var()
    av = analytic.branch_var()
    out = {}
    for c in columns:
        mask = av[:, c] >= floor * av[-1, c]
        rel = np.abs(ev[mask, c] - av[mask, c]) / av[mask, c]
        out[int(c)] = float(rel.max()) if rel.size else 0.0
    return out
