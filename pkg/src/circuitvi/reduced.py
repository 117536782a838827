"""Mesh-space (reduced) Lagrangian system and branch <-> mesh maps."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Optional, Sequence

import numpy as np
import scipy.linalg as sla

from .errors import InconsistentStateError
from .netlist import CircuitSpec
from .topology import TopologyMatrices, build_topology, numerical_nullity

KCL_TOLERANCE = 1e-9


def _congruence(K2, d):
    """K2^T diag(d) K2, symmetric to the last bit."""
    M = K2.T @ (d[:, None] * K2)
    return 0.5 * (M + M.T)


@dataclass(frozen=True, eq=False)
class ReducedSystem:
    """Reduced matrices Lr = K2^T L K2, Cr = K2^T C K2, Rr = K2^T diag(R) K2.

    ``Cinv`` is the reciprocal-capacitance diagonal (zero where a branch has
    no capacitor).
    """

    spec: CircuitSpec
    topo: TopologyMatrices
    L: np.ndarray
    Cinv: np.ndarray
    R: np.ndarray
    Lr: np.ndarray
    Cr: np.ndarray
    Rr: np.ndarray

    @property
    def n(self) -> int:
        return self.spec.n

    @property
    def size(self) -> int:
        """Number of meshes n - m."""
        return self.Lr.shape[0]

    @cached_property
    def K(self) -> np.ndarray:
        return self.topo.K.astype(float)

    @cached_property
    def K2(self) -> np.ndarray:
        return self.topo.K2.astype(float)

    @cached_property
    def _gram_cho(self):
        return sla.cho_factor(self.K2.T @ self.K2)

    @cached_property
    def lr_regular(self) -> bool:
        return numerical_nullity(self.Lr, dim=max(self.n, self.size)) == 0

    @cached_property
    def _lr_solver(self):
        if self.lr_regular:
            lu = sla.lu_factor(self.Lr)
            return lambda b: sla.lu_solve(lu, b)
        pinv = np.linalg.pinv(self.Lr)
        return lambda b: pinv @ b

    def solve_Lr(self, b):
        """Lr^{-1} b (least-squares solution when Lr is singular)."""
        return self._lr_solver(b)

    def forcing(self, t):
        """Mesh forcing K2^T u_s(t); shape ``(size,)`` or ``(len(t), size)``."""
        return self.spec.source_voltages(t) @ self.K2

    def pseudo_inverse(self, x):
        """K2^+ x = (K2^T K2)^{-1} K2^T x for vectors or row-stacked arrays."""
        x = np.asarray(x, dtype=float)
        rhs = x @ self.K2  # (..., n) -> (..., size)
        return sla.cho_solve(self._gram_cho, rhs.T).T


def assemble(spec: CircuitSpec, topo: Optional[TopologyMatrices] = None,
             zero_potential: Sequence[int] = ()) -> ReducedSystem:
    """Build the reduced system; branches in ``zero_potential`` get 1/C = 0."""
    if topo is None:
        topo = build_topology(spec)
    L = np.array([b.L for b in spec.branches], dtype=float)
    Cinv = np.array([b.reciprocal_capacitance for b in spec.branches], dtype=float)
    Cinv[list(zero_potential)] = 0.0
    R = np.array([b.R for b in spec.branches], dtype=float)
    K2 = topo.K2.astype(float)
    return ReducedSystem(spec, topo, L, Cinv, R, _congruence(K2, L), _congruence(K2, Cinv), _congruence(K2, R))


@dataclass
class MeshState:
    """Mesh charges q, currents v and flux linkages p at time t."""

    t: float
    q: np.ndarray
    v: np.ndarray
    p: np.ndarray

    @classmethod
    def initial(cls, sys: ReducedSystem, q, v=None, t=0.0) -> "MeshState":
        """Initial data with Legendre-consistent p = Lr v."""
        q = np.asarray(q, dtype=float).copy()
        v = np.zeros(sys.size) if v is None else np.asarray(v, dtype=float).copy()
        if q.shape != (sys.size,) or v.shape != (sys.size,):
            raise ValueError(f"mesh vectors must have length {sys.size}")
        return cls(float(t), q, v, sys.Lr @ v)


@dataclass
class BranchState:
    """Branch charges, currents, flux linkages and voltage drops at time t."""

    t: float
    q: np.ndarray
    v: np.ndarray
    p: np.ndarray
    u: np.ndarray


def branch_voltages(sys: ReducedSystem, q_mesh, v_mesh, t):
    """Branch voltage drops L dv/dt + C q + R v - u_s (satisfying KVL).

    dv/dt is recovered from the reduced equations, ``Lr dv~/dt = -Cr q~ -
    Rr v~ + K2^T u_s``, in the least-squares sense when Lr is singular.
    Works on single states or row-stacked arrays.
    """
    q_mesh = np.asarray(q_mesh, dtype=float)
    v_mesh = np.asarray(v_mesh, dtype=float)
    us = sys.spec.source_voltages(t)
    pdot = -q_mesh @ sys.Cr - v_mesh @ sys.Rr + us @ sys.K2
    vdot = sys.solve_Lr(pdot.T).T
    q = q_mesh @ sys.K2.T
    v = v_mesh @ sys.K2.T
    return sys.L * (vdot @ sys.K2.T) + sys.Cinv * q + sys.R * v - us


def mesh_to_branch(state: MeshState, sys: ReducedSystem) -> BranchState:
    """q = K2 q~, v = K2 v~, p = L v (Legendre transform of the full system)."""
    q = sys.K2 @ state.q
    v = sys.K2 @ state.v
    u = branch_voltages(sys, state.q, state.v, state.t)
    return BranchState(state.t, q, v, sys.L * v, u)


def check_kcl(sys: ReducedSystem, x, what="current"):
    x = np.asarray(x, dtype=float)
    res = np.abs(x @ sys.K).max(initial=0.0)
    scale = 1.0 + np.abs(x).max(initial=0.0)
    if res > KCL_TOLERANCE * scale:
        raise InconsistentStateError(
            f"branch {what} violates KCL: |K^T x|_inf = {res:.3e} (tolerance {KCL_TOLERANCE * scale:.3e})"
        )


def branch_to_mesh(state: BranchState, sys: ReducedSystem) -> MeshState:
    """q~ = K2^+ q, v~ = K2^+ v, p~ = K2^T p, after checking KCL consistency."""
    check_kcl(sys, state.v, "current")
    check_kcl(sys, state.q, "charge")
    return MeshState(state.t, sys.pseudo_inverse(state.q), sys.pseudo_inverse(state.v), sys.K2.T @ state.p)


def energy(state: BranchState, sys: ReducedSystem) -> float:
    """Magnetic plus electric energy 1/2 v^T L v + 1/2 q^T C q."""
    return 0.5 * float(state.v @ (sys.L * state.v)) + 0.5 * float(state.q @ (sys.Cinv * state.q))


def mesh_energy(state: MeshState, sys: ReducedSystem) -> float:
    return 0.5 * float(state.v @ sys.Lr @ state.v) + 0.5 * float(state.q @ sys.Cr @ state.q)


def kcl_residual(state: BranchState, sys: ReducedSystem) -> np.ndarray:
    return sys.K.T @ state.v


def full_system_residual(t, q, v, p, sys: ReducedSystem, h, difference="central"):
    """Residuals of the unreduced circuit equations along a branch trajectory.

    Returns a dict of per-sample infinity norms: ``kcl`` (K^T v), ``legendre``
    (p - L v) and ``kvl`` (K2^T(-C q - R v + u_s - dp/dt)).  ``dp/dt`` is a
    central difference on interior samples, or a backward difference from the
    second sample on when ``difference="backward"``.
    """
    t = np.asarray(t, dtype=float)
    q, v, p = (np.asarray(a, dtype=float) for a in (q, v, p))
    kcl = np.abs(v @ sys.K).max(axis=1, initial=0.0)
    legendre = np.abs(p - sys.L * v).max(axis=1, initial=0.0)
    drive = -sys.Cinv * q - sys.R * v + sys.spec.source_voltages(t)
    if difference == "central":
        pdot = (p[2:] - p[:-2]) / (2 * h)
        inner = drive[1:-1]
    elif difference == "backward":
        pdot = (p[1:] - p[:-1]) / h
        inner = drive[1:]
    else:
        raise ValueError("difference must be 'central' or 'backward'")
    kvl = np.abs((inner - pdot) @ sys.K2).max(axis=1, initial=0.0)
    return {"kcl": kcl, "legendre": legendre, "kvl": kvl}
