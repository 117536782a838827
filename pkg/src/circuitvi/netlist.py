"""Line-oriented netlist format for branch-lumped LCR circuits.

Each branch of the circuit graph may carry one inductor, one capacitor, one
resistor and one voltage source in series.  The document format is::

    # comment
    node a
    node b
    ground g
    branch a g L=1 C=1
    branch g b C=10 R=0.001 V=sine:1,2,0

Source specifications are ``dc:<value>``, ``sine:<amp>,<omega>,<phase>``
(``amp * sin(omega * t + phase)``) and ``pwl:<t0>:<v0>,<t1>:<v1>,...``.
"""

from __future__ import annotations

import math
import re
from collections import deque
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import NetlistError

_ID_RE = re.compile(r"^[A-Za-z0-9_.\-]+$")
_ELEMENT_KEYS = ("L", "C", "R", "V")


def format_float(x: float) -> str:
    """Print a float with 17 significant digits (exact round trip)."""
    return format(float(x), ".17g")


@dataclass(frozen=True)
class SourceWaveform:
    """Time-dependent branch voltage source.

    ``params`` holds ``(value,)`` for dc, ``(amplitude, omega, phase)`` for
    sine and the flattened ``(t0, v0, t1, v1, ...)`` knots for pwl.
    """

    kind: str
    params: tuple

    def __post_init__(self):
        if self.kind not in ("dc", "sine", "pwl"):
            raise ValueError(f"unknown source kind {self.kind!r}")
        if self.kind == "dc" and len(self.params) != 1:
            raise ValueError("dc source takes one value")
        if self.kind == "sine" and len(self.params) != 3:
            raise ValueError("sine source takes amplitude, omega, phase")
        if self.kind == "pwl":
            if len(self.params) < 2 or len(self.params) % 2:
                raise ValueError("pwl source needs (time, value) pairs")
            times = self.params[0::2]
            if any(b <= a for a, b in zip(times, times[1:])):
                raise ValueError("pwl knot times must be strictly increasing")

    @classmethod
    def dc(cls, value):
        return cls("dc", (float(value),))

    @classmethod
    def sine(cls, amplitude, omega, phase=0.0):
        return cls("sine", (float(amplitude), float(omega), float(phase)))

    @classmethod
    def pwl(cls, knots):
        flat = []
        for t, v in knots:
            flat.extend((float(t), float(v)))
        return cls("pwl", tuple(flat))

    def __call__(self, t):
        """Evaluate at scalar or array ``t``; pwl clamps outside its knots."""
        t = np.asarray(t, dtype=float)
        if self.kind == "dc":
            return np.full(t.shape, self.params[0])
        if self.kind == "sine":
            amp, omega, phase = self.params
            return amp * np.sin(omega * t + phase)
        return np.interp(t, self.params[0::2], self.params[1::2])

    def to_text(self) -> str:
        if self.kind == "dc":
            return "dc:" + format_float(self.params[0])
        if self.kind == "sine":
            return "sine:" + ",".join(format_float(x) for x in self.params)
        pairs = zip(self.params[0::2], self.params[1::2])
        return "pwl:" + ",".join(f"{format_float(t)}:{format_float(v)}" for t, v in pairs)


@dataclass(frozen=True)
class Branch:
    tail: str
    head: str
    L: float = 0.0
    C: float = 0.0
    R: float = 0.0
    source: Optional[SourceWaveform] = None

    @property
    def has_L(self) -> bool:
        return self.L > 0

    @property
    def has_C(self) -> bool:
        return self.C > 0

    @property
    def has_R(self) -> bool:
        return self.R > 0

    @property
    def has_V(self) -> bool:
        return self.source is not None

    @property
    def reciprocal_capacitance(self) -> float:
        return 1.0 / self.C if self.C > 0 else 0.0


@dataclass(frozen=True)
class CircuitSpec:
    """A connected directed graph with per-branch element values.

    ``nodes`` includes the ground node; ``branches`` order fixes every row
    ordering downstream.
    """

    nodes: tuple
    ground: str
    branches: tuple

    @property
    def n(self) -> int:
        return len(self.branches)

    @property
    def m(self) -> int:
        return len(self.nodes) - 1

    @property
    def free_nodes(self) -> tuple:
        """Non-ground nodes in declaration order (columns of K)."""
        return tuple(x for x in self.nodes if x != self.ground)

    @property
    def has_sources(self) -> bool:
        return any(b.has_V for b in self.branches)

    def source_voltages(self, t):
        """Branch source vector u_s(t); shape ``(n,)`` or ``(len(t), n)``."""
        t = np.asarray(t, dtype=float)
        out = np.zeros(t.shape + (self.n,))
        for i, b in enumerate(self.branches):
            if b.source is not None:
                out[..., i] = b.source(t)
        return out

    def replace_branch(self, index: int, **changes) -> "CircuitSpec":
        from dataclasses import replace

        branches = list(self.branches)
        branches[index] = replace(branches[index], **changes)
        return CircuitSpec(self.nodes, self.ground, tuple(branches))

    def validate(self) -> None:
        validate_spec(self)


def _parse_number(tok, line, col):
    try:
        x = float(tok)
    except ValueError:
        raise NetlistError(f"invalid number {tok!r}", line, col) from None
    if not math.isfinite(x):
        raise NetlistError(f"non-finite number {tok!r}", line, col)
    return x


def _parse_source(text, line, col):
    kind, sep, body = text.partition(":")
    if not sep:
        raise NetlistError(f"source must be kind:params, got {text!r}", line, col)
    try:
        if kind == "dc":
            return SourceWaveform.dc(_parse_number(body, line, col))
        if kind == "sine":
            parts = body.split(",")
            if len(parts) != 3:
                raise NetlistError("sine source needs amplitude,omega,phase", line, col)
            return SourceWaveform.sine(*(_parse_number(p, line, col) for p in parts))
        if kind == "pwl":
            knots = []
            for pair in body.split(","):
                tt, sep2, vv = pair.partition(":")
                if not sep2:
                    raise NetlistError(f"pwl knot must be time:value, got {pair!r}", line, col)
                knots.append((_parse_number(tt, line, col), _parse_number(vv, line, col)))
            return SourceWaveform.pwl(knots)
    except ValueError as exc:
        raise NetlistError(str(exc), line, col) from None
    raise NetlistError(f"unknown source kind {kind!r}", line, col)


def _tokens(raw):
    """Yield (token, 1-based column) pairs of a comment-stripped line."""
    body = raw.split("#", 1)[0]
    for match in re.finditer(r"\S+", body):
        yield match.group(0), match.start() + 1


def parse_netlist(text: str) -> CircuitSpec:
    """Parse a netlist document; branch order is file order."""
    nodes: list = []
    ground = None
    ground_line = None
    branches: list = []
    branch_lines: list = []

    for lineno, raw in enumerate(text.splitlines(), start=1):
        toks = list(_tokens(raw))
        if not toks:
            continue
        keyword, kcol = toks[0]
        args = toks[1:]
        if keyword in ("node", "ground"):
            if len(args) != 1:
                raise NetlistError(f"'{keyword}' takes exactly one identifier", lineno, kcol)
            ident, icol = args[0]
            if not _ID_RE.match(ident):
                raise NetlistError(f"invalid node identifier {ident!r}", lineno, icol)
            if keyword == "ground":
                if ground is not None:
                    raise NetlistError(
                        f"multiple grounds ({ground!r} declared on line {ground_line})", lineno, kcol
                    )
                ground, ground_line = ident, lineno
                if ident not in nodes:
                    nodes.append(ident)
            else:
                if ident in nodes and ident != ground:
                    raise NetlistError(f"node {ident!r} declared twice", lineno, icol)
                if ident not in nodes:
                    nodes.append(ident)
        elif keyword == "branch":
            if len(args) < 2:
                raise NetlistError("branch needs tail and head nodes", lineno, kcol)
            (tail, _), (head, _) = args[0], args[1]
            values = {}
            for tok, col in args[2:]:
                key, sep, val = tok.partition("=")
                if not sep or key not in _ELEMENT_KEYS:
                    raise NetlistError(f"expected L=, C=, R= or V=, got {tok!r}", lineno, col)
                if key in values:
                    raise NetlistError(f"element {key} given twice on one branch", lineno, col)
                if key == "V":
                    values[key] = _parse_source(val, lineno, col)
                else:
                    x = _parse_number(val, lineno, col)
                    if x < 0:
                        raise NetlistError(f"{key} must be non-negative", lineno, col)
                    values[key] = x
            branches.append(
                Branch(tail, head, values.get("L", 0.0), values.get("C", 0.0),
                       values.get("R", 0.0), values.get("V"))
            )
            branch_lines.append((lineno, args[0][1], args[1][1]))
        else:
            raise NetlistError(f"unknown keyword {keyword!r}", lineno, kcol)

    if ground is None:
        raise NetlistError("no ground declared")
    declared = set(nodes)
    for b, (lineno, tcol, hcol) in zip(branches, branch_lines):
        if b.tail not in declared:
            raise NetlistError(f"unknown node {b.tail!r}", lineno, tcol)
        if b.head not in declared:
            raise NetlistError(f"unknown node {b.head!r}", lineno, hcol)
        if not (b.has_L or b.has_C or b.has_R or b.has_V):
            raise NetlistError("branch carries no element (all-zero branch)", lineno, tcol)
    spec = CircuitSpec(tuple(nodes), ground, tuple(branches))
    validate_spec(spec)
    return spec


def validate_spec(spec: CircuitSpec) -> None:
    """Check the structural invariants of a CircuitSpec."""
    if not spec.branches:
        raise NetlistError("netlist has no branches")
    if spec.ground not in spec.nodes:
        raise NetlistError("ground is not in the node list")
    if len(set(spec.nodes)) != len(spec.nodes):
        raise NetlistError("duplicate node identifiers")
    declared = set(spec.nodes)
    adjacency = {x: [] for x in spec.nodes}
    for i, b in enumerate(spec.branches):
        for end in (b.tail, b.head):
            if end not in declared:
                raise NetlistError(f"branch {i + 1} references unknown node {end!r}")
        if not (b.has_L or b.has_C or b.has_R or b.has_V):
            raise NetlistError(f"branch {i + 1} carries no element")
        if min(b.L, b.C, b.R) < 0:
            raise NetlistError(f"branch {i + 1} has a negative element value")
        adjacency[b.tail].append(b.head)
        adjacency[b.head].append(b.tail)
    seen = {spec.ground}
    queue = deque([spec.ground])
    while queue:
        x = queue.popleft()
        for y in adjacency[x]:
            if y not in seen:
                seen.add(y)
                queue.append(y)
    if len(seen) != len(spec.nodes):
        missing = [x for x in spec.nodes if x not in seen]
        raise NetlistError(f"circuit graph is disconnected (unreachable: {', '.join(missing)})")


def serialize_netlist(spec: CircuitSpec) -> str:
    """Render a CircuitSpec; ``parse_netlist`` of the result equals ``spec``."""
    lines = []
    for x in spec.nodes:
        lines.append(f"ground {x}" if x == spec.ground else f"node {x}")
    for b in spec.branches:
        parts = ["branch", b.tail, b.head]
        if b.L:
            parts.append("L=" + format_float(b.L))
        if b.C:
            parts.append("C=" + format_float(b.C))
        if b.R:
            parts.append("R=" + format_float(b.R))
        if b.source is not None:
            parts.append("V=" + b.source.to_text())
        lines.append(" ".join(parts))
    return "\n".join(lines) + "\n"


def load_netlist(path) -> CircuitSpec:
    with open(path, encoding="utf-8") as fh:
        return parse_netlist(fh.read())
