"""Kirchhoff constraint matrix, fundamental loop matrix and structural analysis."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

import numpy as np

from .errors import TopologyError
from .netlist import CircuitSpec


@dataclass(frozen=True)
class TopologyMatrices:
    """Integer incidence (K, n x m) and loop (K2, n x (n-m)) matrices.

    Boolean masks select the branch rows carrying each element kind.
    """

    K: np.ndarray
    K2: np.ndarray
    has_L: np.ndarray
    has_C: np.ndarray
    has_R: np.ndarray
    has_V: np.ndarray
    nodes: tuple = ()

    @property
    def n(self) -> int:
        return self.K.shape[0]

    @property
    def m(self) -> int:
        return self.K.shape[1]

    @property
    def meshes(self) -> int:
        return self.K2.shape[1]

    @property
    def K_L(self) -> np.ndarray:
        return self.K[self.has_L]

    @property
    def K_C(self) -> np.ndarray:
        return self.K[self.has_C]

    @property
    def K_R(self) -> np.ndarray:
        return self.K[self.has_R]

    @property
    def K_V(self) -> np.ndarray:
        return self.K[self.has_V]


@dataclass(frozen=True)
class Verdict:
    """Solvability verdict of one scheme's gating matrix."""

    scheme: str
    ok: bool
    nullity: int
    h: Optional[float] = None

    def __str__(self):
        return "ok" if self.ok else f"singular({self.nullity})"


@dataclass(frozen=True)
class StructureReport:
    degeneracy_rank_deficit: int
    flux_sum_conserved: bool
    conserved_momenta: np.ndarray  # rows are integer kernel vectors of K_L^T
    verdicts: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "degeneracy_rank_deficit": self.degeneracy_rank_deficit,
            "flux_sum_conserved": self.flux_sum_conserved,
            "conserved_momenta": self.conserved_momenta.tolist(),
            "verdicts": {k: str(v) for k, v in self.verdicts.items()},
        }


def numerical_nullity(M, dim=None) -> int:
    """Count singular values below ``dim * eps * sigma_max``.

    ``dim`` defaults to the larger matrix dimension.  A zero matrix has full
    nullity.
    """
    M = np.atleast_2d(np.asarray(M, dtype=float))
    k = min(M.shape)
    if k == 0:
        return 0
    s = np.linalg.svd(M, compute_uv=False)
    if s[0] == 0.0:
        return k
    if dim is None:
        dim = max(M.shape)
    tol = dim * np.finfo(float).eps * s[0]
    return int(np.sum(s <= tol))


def build_incidence(spec: CircuitSpec) -> np.ndarray:
    """K[i, j] = +1 if branch i leaves node j, -1 if it enters, else 0."""
    cols = {x: j for j, x in enumerate(spec.free_nodes)}
    K = np.zeros((spec.n, spec.m), dtype=np.int64)
    for i, b in enumerate(spec.branches):
        if b.tail == b.head:
            continue
        if b.tail in cols:
            K[i, cols[b.tail]] = 1
        if b.head in cols:
            K[i, cols[b.head]] = -1
    return K


def _bfs_tree(spec: CircuitSpec):
    """Spanning tree from ground; returns parent map node -> (parent, branch)."""
    incident = {x: [] for x in spec.nodes}
    for i, b in enumerate(spec.branches):
        if b.tail != b.head:
            incident[b.tail].append(i)
            incident[b.head].append(i)
    parent = {spec.ground: None}
    depth = {spec.ground: 0}
    tree = set()
    queue = deque([spec.ground])
    while queue:
        x = queue.popleft()
        for i in incident[x]:  # already in branch-index order
            b = spec.branches[i]
            y = b.head if b.tail == x else b.tail
            if y not in parent:
                parent[y] = (x, i)
                depth[y] = depth[x] + 1
                tree.add(i)
                queue.append(y)
    return parent, depth, tree


def build_loop_matrix(spec: CircuitSpec, K=None) -> np.ndarray:
    """Fundamental cycle matrix of the BFS spanning tree rooted at ground.

    Column j is the cycle closed by the j-th non-tree branch (in branch
    order), oriented along that branch.
    """
    if K is None:
        K = build_incidence(spec)
    n, m = spec.n, spec.m
    if n - m < 1:
        raise TopologyError(f"circuit has no independent loops (n = {n}, m = {m})")
    parent, depth, tree = _bfs_tree(spec)
    chords = [i for i in range(n) if i not in tree]
    K2 = np.zeros((n, len(chords)), dtype=np.int64)
    for j, c in enumerate(chords):
        b = spec.branches[c]
        K2[c, j] = 1
        # walk from head back to tail through the tree
        up_from_head, up_from_tail = [], []
        a, z = b.head, b.tail
        while depth[a] > depth[z]:
            up_from_head.append(a)
            a = parent[a][0]
        while depth[z] > depth[a]:
            up_from_tail.append(z)
            z = parent[z][0]
        while a != z:
            up_from_head.append(a)
            up_from_tail.append(z)
            a, z = parent[a][0], parent[z][0]
        for x in up_from_head:  # traversed x -> parent(x)
            p, i = parent[x]
            K2[i, j] += 1 if spec.branches[i].tail == x else -1
        for x in up_from_tail:  # traversed parent(x) -> x
            p, i = parent[x]
            K2[i, j] += 1 if spec.branches[i].head == x else -1
    if K2.shape[1] != n - m:
        raise TopologyError("loop count does not match n - m")
    return K2


def check_orthogonality(K, K2) -> bool:
    """True iff K2^T K vanishes in exact integer arithmetic."""
    K = np.asarray(K)
    K2 = np.asarray(K2)
    if K.ndim != 2 or K2.ndim != 2 or K.shape[0] != K2.shape[0]:
        raise ValueError(f"dimension mismatch: K {K.shape}, K2 {K2.shape}")
    return not np.any(K2.astype(np.int64).T @ K.astype(np.int64))


def validate_loop_matrix(K, K2) -> None:
    K2 = np.asarray(K2)
    n, m = K.shape
    if K2.shape != (n, n - m):
        raise TopologyError(f"loop matrix must be {n} x {n - m}, got {K2.shape[0]} x {K2.shape[1]}")
    if not np.all(np.isin(K2, (-1, 0, 1))):
        raise TopologyError("loop matrix entries must be -1, 0 or +1")
    if not check_orthogonality(K, K2):
        raise TopologyError("loop matrix is not orthogonal to K (K2^T K != 0)")
    if np.linalg.matrix_rank(K2.astype(float)) != n - m:
        raise TopologyError("loop matrix does not have full column rank")


def parse_loop_matrix(text: str) -> np.ndarray:
    rows = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        body = raw.split("#", 1)[0].split()
        if not body:
            continue
        try:
            rows.append([int(tok) for tok in body])
        except ValueError:
            raise TopologyError(f"loop matrix line {lineno}: integers expected") from None
    if not rows or len({len(r) for r in rows}) != 1:
        raise TopologyError("loop matrix rows must be non-empty and of equal length")
    return np.array(rows, dtype=np.int64)


def format_loop_matrix(K2) -> str:
    return "\n".join(" ".join(str(int(x)) for x in row) for row in np.asarray(K2)) + "\n"


def build_topology(spec: CircuitSpec, loop_override=None) -> TopologyMatrices:
    """Assemble K and K2; an override loop matrix is validated before use."""
    K = build_incidence(spec)
    if loop_override is None:
        K2 = build_loop_matrix(spec, K)
    else:
        K2 = np.asarray(loop_override, dtype=np.int64)
        validate_loop_matrix(K, K2)
    mask = lambda attr: np.array([getattr(b, attr) for b in spec.branches], dtype=bool)
    return TopologyMatrices(
        K=K, K2=K2,
        has_L=mask("has_L"), has_C=mask("has_C"), has_R=mask("has_R"), has_V=mask("has_V"),
        nodes=spec.free_nodes,
    )


def rational_kernel(M) -> list:
    """Basis of the right kernel of an integer/rational matrix, exactly.

    Gauss-Jordan elimination over ``Fraction``; each basis vector is scaled
    to coprime integers and returned as a list of ints.
    """
    rows = [[Fraction(x) for x in row] for row in np.atleast_2d(np.asarray(M).tolist())]
    ncols = len(rows[0]) if rows else 0
    pivots = []
    r = 0
    for c in range(ncols):
        pr = next((i for i in range(r, len(rows)) if rows[i][c] != 0), None)
        if pr is None:
            continue
        rows[r], rows[pr] = rows[pr], rows[r]
        piv = rows[r][c]
        rows[r] = [x / piv for x in rows[r]]
        for i in range(len(rows)):
            if i != r and rows[i][c] != 0:
                f = rows[i][c]
                rows[i] = [a - f * b for a, b in zip(rows[i], rows[r])]
        pivots.append(c)
        r += 1
        if r == len(rows):
            break
    free = [c for c in range(ncols) if c not in pivots]
    basis = []
    for fc in free:
        vec = [Fraction(0)] * ncols
        vec[fc] = Fraction(1)
        for i, pc in enumerate(pivots):
            vec[pc] = -rows[i][fc]
        basis.append(_to_integers(vec))
    return basis


def _to_integers(vec):
    from math import gcd, lcm

    den = 1
    for x in vec:
        den = lcm(den, x.denominator)
    ints = [int(x * den) for x in vec]
    g = 0
    for x in ints:
        g = gcd(g, abs(x))
    return [x // g for x in ints] if g else ints


def in_rational_kernel(M, vec) -> bool:
    """Exact test of ``M @ vec == 0`` (floats are converted exactly)."""
    M = np.atleast_2d(np.asarray(M))
    v = [Fraction(x) if not isinstance(x, np.integer) else Fraction(int(x)) for x in np.asarray(vec).tolist()]
    for row in M.tolist():
        if sum(Fraction(a) * b for a, b in zip(row, v)) != 0:
            return False
    return True


def degeneracy_analysis(spec: CircuitSpec, topo: TopologyMatrices, h=None) -> StructureReport:
    """Structural report: Legendre degeneracy, flux-sum law and momentum maps.

    When ``h`` is given the three variational schemes' solvability verdicts
    are included.
    """
    L = np.array([b.L for b in spec.branches])
    K2 = topo.K2.astype(float)
    Lr = K2.T @ (L[:, None] * K2)
    nullity = numerical_nullity(Lr, dim=max(spec.n, topo.meshes))
    K_L = topo.K_L
    flux_ok = bool(np.all(K_L.sum(axis=0) == 0))
    if K_L.shape[0]:
        kernel = rational_kernel(K_L.T)
        momenta = np.array(kernel, dtype=np.int64).reshape(len(kernel), K_L.shape[0])
    else:
        momenta = np.zeros((0, 0), dtype=np.int64)
    verdicts = {}
    if h is not None:
        from .reduced import assemble
        from .integrators import VI_SCHEMES, check_solvability

        sys = assemble(spec, topo)
        verdicts = {s: check_solvability(sys, s, h) for s in VI_SCHEMES}
    return StructureReport(nullity, flux_ok, momenta, verdicts)
