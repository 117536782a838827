"""Modified nodal analysis with a BDF2 stepper (non-variational baseline).

Branches carrying several elements are expanded into series chains of
single elements joined by internal nodes.  With x = (node potentials, inductor
currents, source currents) the circuit reads

    A (D x)' + G x + s(t) = 0

where D x stacks capacitor charges and inductor fluxes.  Element drops use
the same sign convention as the mesh formulation: an element between nodes
a -> b has drop u_a - u_b, and a source contributes drop -u_s.
"""

from __future__ import annotations

import time as _time
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .errors import DivergenceError, GateError
from .netlist import CircuitSpec
from .reduced import MeshState, ReducedSystem
from .topology import numerical_nullity


@dataclass(frozen=True, eq=False)
class MNASystem:
    spec: CircuitSpec
    n_nodes: int  # free nodes plus internal chain nodes
    elements: tuple  # (branch index, kind, value, tail column, head column); column -1 is ground
    A: np.ndarray
    D: np.ndarray
    G: np.ndarray
    source_rows: np.ndarray  # equation rows carrying u_s of source element j
    source_branches: np.ndarray
    cap_elements: np.ndarray
    ind_elements: np.ndarray
    res_elements: np.ndarray
    volt_elements: np.ndarray

    @property
    def size(self) -> int:
        return self.G.shape[0]

    def source_vector(self, t):
        s = np.zeros(self.size)
        if len(self.source_rows):
            s[self.source_rows] = self.spec.source_voltages(t)[self.source_branches]
        return s

    def element_drops(self, x):
        """Voltage drop across every expanded element, row-stacked over x."""
        x = np.atleast_2d(x)
        u = np.zeros((x.shape[0], len(self.elements)))
        for e, (_, _, _, a, b) in enumerate(self.elements):
            if a >= 0:
                u[:, e] += x[:, a]
            if b >= 0:
                u[:, e] -= x[:, b]
        return u


def mna_assemble(spec: CircuitSpec) -> MNASystem:
    cols = {x: j for j, x in enumerate(spec.free_nodes)}
    n_nodes = len(cols)
    elements = []
    for i, br in enumerate(spec.branches):
        chain = [(k, v) for k, v in (("L", br.L), ("C", br.C), ("R", br.R), ("V", br.has_V)) if v]
        tail = cols.get(br.tail, -1)
        for j, (kind, value) in enumerate(chain):
            if j == len(chain) - 1:
                head = cols.get(br.head, -1)
            else:
                head = n_nodes
                n_nodes += 1
            elements.append((i, kind, float(value), tail, head))
            tail = head
    kinds = np.array([e[1] for e in elements])
    ind = np.flatnonzero(kinds == "L")
    cap = np.flatnonzero(kinds == "C")
    res = np.flatnonzero(kinds == "R")
    volt = np.flatnonzero(kinds == "V")
    nE = len(elements)
    Kx = np.zeros((nE, n_nodes))
    for e, (_, _, _, a, b) in enumerate(elements):
        if a >= 0:
            Kx[e, a] += 1.0
        if b >= 0:
            Kx[e, b] -= 1.0
    values = np.array([e[2] for e in elements])
    nL, nV, nC = len(ind), len(volt), len(cap)
    size = n_nodes + nL + nV
    iL = slice(n_nodes, n_nodes + nL)
    iV = slice(n_nodes + nL, size)

    A = np.zeros((size, nC + nL))
    A[:n_nodes, :nC] = Kx[cap].T
    A[iL, nC:] = np.eye(nL)
    D = np.zeros((nC + nL, size))
    D[:nC, :n_nodes] = values[cap, None] * Kx[cap]
    D[nC:, iL] = np.diag(values[ind])
    G = np.zeros((size, size))
    KR = Kx[res]
    G[:n_nodes, :n_nodes] = KR.T @ (KR / values[res, None])
    G[:n_nodes, iL] = Kx[ind].T
    G[:n_nodes, iV] = Kx[volt].T
    G[iL, :n_nodes] = -Kx[ind]
    G[iV, :n_nodes] = Kx[volt]
    source_rows = np.arange(n_nodes + nL, size)
    source_branches = np.array([elements[e][0] for e in volt], dtype=int)
    return MNASystem(spec, n_nodes, tuple(elements), A, D, G, source_rows, source_branches,
                     cap, ind, res, volt)


def bdf_matrix(mna: MNASystem, h: float, lead: float) -> np.ndarray:
    """Iteration matrix (lead/h) A D + G; lead = 1 (Euler) or 3/2 (BDF2)."""
    return lead / h * (mna.A @ mna.D) + mna.G


def _factor(mna, h, lead):
    M = bdf_matrix(mna, h, lead)
    k = numerical_nullity(M)
    if k:
        raise GateError(
            f"MNA iteration matrix is singular at h = {h} (nullity {k}); the circuit likely has a "
            "loop of capacitors and sources or a cutset of inductors that leaves a state undetermined",
            k,
        )
    return sla.lu_factor(M)


def step_bdf2(mna: MNASystem, history, h: float, t: float, lu=None) -> np.ndarray:
    """Solve A(3d_k - 4d_{k-1} + d_{k-2})/(2h) + G x_k + s(t_k) = 0 for x_k.

    ``history`` is (d_{k-1}, d_{k-2}).
    """
    d1, d2 = history
    if lu is None:
        lu = _factor(mna, h, 1.5)
    rhs = mna.A @ (4 * d1 - d2) / (2 * h) - mna.source_vector(t)
    return sla.lu_solve(lu, rhs)


def step_backward_euler(mna: MNASystem, d_prev, h: float, t: float, lu=None) -> np.ndarray:
    if lu is None:
        lu = _factor(mna, h, 1.0)
    return sla.lu_solve(lu, mna.A @ d_prev / h - mna.source_vector(t))


def initial_storage(mna: MNASystem, sys: ReducedSystem, ic: MeshState) -> np.ndarray:
    """d_0 from mesh initial data: capacitor charges and inductor fluxes."""
    q = sys.K2 @ ic.q
    v = sys.K2 @ ic.v
    br = np.array([e[0] for e in mna.elements], dtype=int)
    vals = np.array([e[2] for e in mna.elements])
    return np.concatenate([q[br[mna.cap_elements]], vals[mna.ind_elements] * v[br[mna.ind_elements]]])


def simulate_mna(sys: ReducedSystem, ic: MeshState, config):
    """BDF2 run (one backward-Euler bootstrap step) returning a mesh Trajectory."""
    from .integrators import Trajectory

    started = _time.perf_counter()
    h, N = config.h, config.N
    mna = mna_assemble(sys.spec)
    lu1 = _factor(mna, h, 1.0)
    lu2 = _factor(mna, h, 1.5)
    t = ic.t + h * np.arange(N + 1)
    X = np.zeros((N + 1, mna.size))
    Dst = np.zeros((N + 1, mna.D.shape[0]))
    Dst[0] = initial_storage(mna, sys, ic)
    with np.errstate(all="ignore"):
        if N >= 1:
            X[1] = step_backward_euler(mna, Dst[0], h, t[1], lu1)
            Dst[1] = mna.D @ X[1]
        for k in range(2, N + 1):
            X[k] = step_bdf2(mna, (Dst[k - 1], Dst[k - 2]), h, t[k], lu2)
            Dst[k] = mna.D @ X[k]
    bad = ~np.isfinite(X).all(axis=1)
    if bad.any():
        k = int(np.argmax(bad))
        raise DivergenceError(f"mna_bdf2: non-finite state at step {k}", step=k)

    # branch currents, then charges integrated with the same difference formula
    n = sys.n
    vb = np.zeros((N + 1, n))
    vb[0] = sys.K2 @ ic.v
    drops = mna.element_drops(X)
    assigned = np.zeros(n, dtype=bool)
    nn = mna.n_nodes
    for j, e in enumerate(mna.ind_elements):
        b = mna.elements[e][0]
        vb[1:, b] = X[1:, nn + j]
        assigned[b] = True
    for j, e in enumerate(mna.volt_elements):
        b = mna.elements[e][0]
        if not assigned[b]:
            vb[1:, b] = X[1:, nn + len(mna.ind_elements) + j]
            assigned[b] = True
    for j, e in enumerate(mna.cap_elements):
        b = mna.elements[e][0]
        if not assigned[b]:
            qc = Dst[:, j]
            vb[1, b] = (qc[1] - qc[0]) / h
            vb[2:, b] = (3 * qc[2:] - 4 * qc[1:-1] + qc[:-2]) / (2 * h)
            assigned[b] = True
    for e in mna.res_elements:
        b, _, R = mna.elements[e][:3]
        if not assigned[b]:
            vb[1:, b] = drops[1:, e] / R
            assigned[b] = True
    qb = np.zeros((N + 1, n))
    qb[0] = sys.K2 @ ic.q
    if N >= 1:
        qb[1] = qb[0] + h * vb[1]
    for k in range(2, N + 1):
        qb[k] = (4 * qb[k - 1] - qb[k - 2] + 2 * h * vb[k]) / 3
    q = sys.pseudo_inverse(qb)
    v = sys.pseudo_inverse(vb)
    v[0] = ic.v
    q[0] = ic.q
    return Trajectory("mna_bdf2", h, t, q, v, v @ sys.Lr, None,
                      {"kappa": float(np.linalg.cond(bdf_matrix(mna, h, 1.5))),
                       "wall_time": _time.perf_counter() - started, "steps": N, "mna_size": mna.size})
