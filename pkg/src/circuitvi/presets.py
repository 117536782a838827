"""Bundled example circuits with every numeric parameter fixed."""

from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources
from typing import Optional

from .errors import ConfigError


@dataclass(frozen=True)
class Preset:
    name: str
    description: str
    netlist: str  # bundled file stem
    q0: tuple
    v0: tuple
    scheme: str
    h: float
    T: float
    signal: str = "v1"
    extra: dict = field(default_factory=dict)

    def netlist_text(self) -> str:
        return _data(self.netlist + ".net")

    def loops_text(self) -> Optional[str]:
        try:
            return _data(self.netlist + ".loops")
        except FileNotFoundError:
            return None

    def ic_dict(self) -> dict:
        return {"coordinates": "mesh", "t0": 0.0, "q": list(self.q0), "v": list(self.v0)}

    def to_dict(self) -> dict:
        return {"name": self.name, "description": self.description, "ic": self.ic_dict(), "scheme": self.scheme,
                "h": self.h, "T": self.T, "signal": self.signal, **self.extra}


def _data(name):
    return resources.files("circuitvi").joinpath("data", name).read_text(encoding="utf-8")


_SQUARE_IC = dict(q0=(0.0, 0.0, 1.0), v0=(0.0, 0.0, 0.0))

PRESETS = {
    p.name: p
    for p in (
        Preset("rlc-square", "six-branch square LC circuit, unit L and C, no resistors",
               "rlc-square", scheme="vi_midpoint", h=0.1, T=200.0, signal="v1", **_SQUARE_IC),
        Preset("rlc-square-R", "square circuit with R = 0.001 on all six branches",
               "rlc-square-R", scheme="vi_midpoint", h=0.1, T=200.0, signal="v1", **_SQUARE_IC),
        Preset("lc-oscillator", "two-loop oscillator, L = (1, 1), C = (1, 10)",
               "lc-oscillator", q0=(1.0, 0.0), v0=(0.0, 0.0), scheme="vi_midpoint", h=0.1, T=200.0,
               signal="q3"),
        Preset("lc-transmission-line", "two-section LC ladder with three inductors",
               "lc-transmission-line", q0=(1.0, 0.0, 0.0), v0=(0.3, -0.2, 0.5), scheme="vi_midpoint",
               h=0.1, T=100.0, signal="fluxsum"),
        Preset("lc-noisy", "two-loop oscillator with white-noise branch voltages",
               "lc-oscillator", q0=(1.0, 0.0), v0=(0.0, 0.0), scheme="vi_forward_euler", h=0.1, T=30.0,
               signal="p1", extra={"sigma": 0.01, "M": 10000, "seed": 20240601}),
        Preset("lc-multiscale", "two-loop oscillator whose second capacitor is 1e-3 (stiff)",
               "lc-multiscale", q0=(0.0, 1.0), v0=(0.0, 0.0), scheme="vi_midpoint", h=1e-4, T=10.0,
               signal="q3",
               extra={"epsilon": 1e-3, "tau": 1e-4, "H": 0.1, "samples": 100, "fast": [4],
                      "legacy": "vi_midpoint"}),
    )
}


def preset_catalog() -> list:
    return [PRESETS[k] for k in PRESETS]


def get_preset(name: str) -> Preset:
    try:
        return PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(PRESETS)}") from None


def load_preset_system(name: str):
    """(spec, ReducedSystem, MeshState) for a preset."""
    from .netlist import parse_netlist
    from .reduced import assemble
    from .topology import build_topology, parse_loop_matrix
    from .io import initial_condition_from_dict

    p = get_preset(name)
    spec = parse_netlist(p.netlist_text())
    loops = p.loops_text()
    topo = build_topology(spec, parse_loop_matrix(loops) if loops else None)
    sys = assemble(spec, topo)
    return spec, sys, initial_condition_from_dict(p.ic_dict(), sys)
