"""Command-line front end: parse, assemble, integrate, diagnose, write CSV/JSON.

Exit codes: 0 ok, 2 usage/configuration, 3 input parse, 4 singular
iteration matrix, 5 runtime failure (divergence, spectral analysis).
"""

from __future__ import annotations

import argparse
import json
import os
import sys as _sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .errors import (CircuitError, ConfigError, DivergenceError, GateError, InconsistentStateError,
                     NetlistError, SpectrumError, TopologyError)

ENV_OUTPUT = "CIRCUITVI_OUTPUT_DIR"
DEFAULT_OUTPUT = "circuitvi-out"
EXIT_OK, EXIT_USAGE, EXIT_PARSE, EXIT_GATE, EXIT_RUNTIME = 0, 2, 3, 4, 5


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    """Everything a run needs; a manifest stores this verbatim."""

    command: str
    netlist: str
    loops: Optional[str] = None
    ic: dict = field(default_factory=dict)
    preset: Optional[str] = None
    source: Optional[str] = None
    schemes: list = field(default_factory=list)
    h: Optional[float] = None
    T: Optional[float] = None
    signal: Optional[str] = None
    windows: int = 3
    M: Optional[int] = None
    seed: Optional[int] = None
    sigma: object = None
    flavor: Optional[dict] = None
    benchmark_h: Optional[float] = None
    workers: int = 1
    out: Optional[str] = None


# ------------------------------------------------------------- parsing


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="circuitvi", description="Variational integrators for lumped LCR circuits.")
    p.add_argument("--version", action="version", version=f"circuitvi {__version__}")
    p.add_argument("--json-errors", action="store_true", help="report errors as JSON on stderr")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def circuit_args(sp, need_run=True):
        src = sp.add_mutually_exclusive_group(required=True)
        src.add_argument("--preset", help="bundled experiment (see 'presets')")
        src.add_argument("--netlist", help="netlist file")
        sp.add_argument("--loops", help="loop-matrix file overriding the spanning-tree construction")
        if need_run:
            sp.add_argument("--ic", help="initial-condition JSON file")
            sp.add_argument("--h", type=float, help="step size")
            sp.add_argument("--T", type=float, help="time horizon")
            sp.add_argument("--outdir", help=f"output directory (default ${ENV_OUTPUT} or ./{DEFAULT_OUTPUT})")
        sp.add_argument("--json-errors", action="store_true", default=argparse.SUPPRESS)

    sp = sub.add_parser("topology", help="print K, K2 and the structural report")
    circuit_args(sp, need_run=False)
    sp.add_argument("--h", type=float, help="also report scheme solvability at this step")

    sp = sub.add_parser("simulate", help="integrate with one scheme and write a trajectory CSV")
    circuit_args(sp)
    sp.add_argument("--scheme")
    sp.add_argument("--out", help="trajectory CSV file name (inside outdir unless absolute)")

    sp = sub.add_parser("compare", help="run several schemes and summarise energy behaviour")
    circuit_args(sp)
    sp.add_argument("--schemes", help="comma-separated list (default: all five)")

    sp = sub.add_parser("spectrum", help="windowed magnitude spectra of one signal")
    circuit_args(sp)
    sp.add_argument("--scheme")
    sp.add_argument("--signal", help="q<i>, v<i>, p<i> (branch), mq<j>/mv<j>/mp<j> (mesh), energy, fluxsum")
    sp.add_argument("--windows", type=int, default=3, help="number of equal windows (default 3)")

    sp = sub.add_parser("ensemble", help="noisy forward-Euler ensemble against analytic moments")
    circuit_args(sp)
    sp.add_argument("--M", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--sigma", help="scalar diagonal amplitude or a file holding an n x n matrix")
    sp.add_argument("--workers", type=int, default=1)

    sp = sub.add_parser("flavor", help="flow-averaging integration of a stiff circuit")
    circuit_args(sp)
    sp.add_argument("--epsilon", type=float)
    sp.add_argument("--tau", type=float)
    sp.add_argument("--H", type=float)
    sp.add_argument("--samples", type=int)
    sp.add_argument("--fast", help="comma-separated 1-based branch numbers")
    sp.add_argument("--legacy", help="variational scheme used for substeps")
    sp.add_argument("--benchmark-h", type=float, help="also run a plain midpoint benchmark at this step")

    sp = sub.add_parser("presets", help="list bundled experiments")
    sp.add_argument("--json-errors", action="store_true", default=argparse.SUPPRESS)

    sp = sub.add_parser("rerun", help="repeat a run from its manifest")
    sp.add_argument("manifest")
    sp.add_argument("--outdir")
    sp.add_argument("--json-errors", action="store_true", default=argparse.SUPPRESS)
    return p


def _read(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return fh.read()
    except OSError as exc:
        raise NetlistError(f"cannot read {path}: {exc.strerror}") from None


def _parse_sigma(value):
    try:
        return float(value)
    except ValueError:
        pass
    rows = [[float(x) for x in line.split()] for line in _read(value).splitlines() if line.strip()]
    return rows


def resolve(args) -> RunConfig:
    """Merge preset values with explicit flags; non-preset runs must give every number."""
    from .presets import get_preset

    preset = get_preset(args.preset) if getattr(args, "preset", None) else None
    if preset:
        netlist, loops, source = preset.netlist_text(), preset.loops_text(), "preset:" + preset.name
    else:
        netlist, loops, source = _read(args.netlist), None, args.netlist
    if getattr(args, "loops", None):
        loops = _read(args.loops)
    cfg = RunConfig(args.command, netlist, loops, preset=preset.name if preset else None, source=source)
    if args.command == "topology":
        cfg.h = args.h
        return cfg

    if args.ic:
        try:
            cfg.ic = json.loads(_read(args.ic))
        except json.JSONDecodeError as exc:
            raise NetlistError(f"initial-condition file is not valid JSON: {exc}") from None
    elif preset:
        cfg.ic = preset.ic_dict()
    else:
        cfg.ic = {"coordinates": "mesh"}

    def pick(name, flag, default_key=None):
        val = getattr(args, flag, None)
        if val is None and preset is not None:
            key = default_key or name
            val = getattr(preset, key, None) if hasattr(preset, key) else preset.extra.get(key)
        if val is None:
            raise UsageError(f"--{flag.replace('_', '-')} is required without a preset")
        return val

    cfg.h = float(pick("h", "h"))
    cfg.T = float(pick("T", "T"))
    cmd = args.command
    if cmd in ("simulate", "spectrum"):
        cfg.schemes = [pick("scheme", "scheme")]
        cfg.out = getattr(args, "out", None)
    if cmd == "compare":
        from .integrators import SCHEMES

        cfg.schemes = args.schemes.split(",") if args.schemes else list(SCHEMES)
    if cmd == "spectrum":
        cfg.signal = pick("signal", "signal")
        cfg.windows = int(args.windows)
    if cmd == "ensemble":
        cfg.schemes = ["vi_forward_euler"]
        cfg.M = int(pick("M", "M"))
        cfg.seed = int(pick("seed", "seed"))
        cfg.sigma = _parse_sigma(args.sigma) if args.sigma is not None else pick("sigma", "sigma")
        cfg.workers = int(args.workers)
    if cmd == "flavor":
        fl = {}
        for key in ("epsilon", "tau", "H", "samples", "legacy"):
            fl[key] = pick(key, key)
        fast = args.fast if args.fast is not None else pick("fast", "fast")
        if isinstance(fast, str):
            try:
                fast = [int(x) for x in fast.split(",") if x.strip()]
            except ValueError:
                raise UsageError("--fast expects comma-separated branch numbers") from None
        fl["fast"] = list(fast)
        cfg.flavor = fl
        cfg.benchmark_h = args.benchmark_h if args.benchmark_h is not None else (preset.h if preset else None)
    return cfg


# ------------------------------------------------------------ execution


def _system(cfg: RunConfig):
    from .netlist import parse_netlist
    from .reduced import assemble
    from .topology import build_topology, parse_loop_matrix

    spec = parse_netlist(cfg.netlist)
    topo = build_topology(spec, parse_loop_matrix(cfg.loops) if cfg.loops else None)
    return spec, topo, assemble(spec, topo)


def _outdir(explicit):
    d = Path(explicit or os.environ.get(ENV_OUTPUT) or DEFAULT_OUTPUT)
    d.mkdir(parents=True, exist_ok=True)
    return d


def _manifest(cfg, outdir, outputs, extra, started):
    from .io import write_json

    body = {
        "tool": "circuitvi",
        "version": __version__,
        "config": asdict(cfg),
        "outputs": [str(Path(o).name) for o in outputs],
        "wall_time": time.perf_counter() - started,
        **extra,
    }
    return write_json(Path(outdir) / "manifest.json", body)


def _energy_summary(traj, sys):
    from .diagnostics import diagnose

    rep = diagnose(traj, sys)
    s = rep.summary()
    E = rep.energy
    s["energy_ratio_final"] = float(E[-1] / E[0]) if E[0] else None
    s["kappa"] = traj.meta.get("kappa")
    s["runtime"] = traj.meta.get("wall_time")
    return s


def cmd_topology(cfg: RunConfig, outdir=None):
    from .topology import degeneracy_analysis

    spec, topo, _ = _system(cfg)
    rep = degeneracy_analysis(spec, topo, cfg.h)
    out = {"n": topo.n, "m": topo.m, "meshes": topo.meshes, "nodes": list(topo.nodes),
           "K": topo.K.tolist(), "K2": topo.K2.tolist(), **rep.to_dict()}
    print(json.dumps(out, indent=2))
    return [], {}


def _run_one(cfg, sys, ic, scheme):
    from .integrators import IntegratorConfig, simulate

    return simulate(sys, ic, IntegratorConfig(scheme, cfg.h, cfg.T))


def cmd_simulate(cfg: RunConfig, outdir):
    from .io import initial_condition_from_dict, write_json, write_trajectory_csv

    _, _, sys = _system(cfg)
    ic = initial_condition_from_dict(cfg.ic, sys)
    scheme = cfg.schemes[0]
    traj = _run_one(cfg, sys, ic, scheme)
    name = cfg.out or f"trajectory_{scheme}.csv"
    csv_path = write_trajectory_csv(Path(outdir) / name, traj, sys)
    summary = _energy_summary(traj, sys)
    diag = write_json(Path(outdir) / f"diagnostics_{scheme}.json", summary)
    print(f"{scheme}: {traj.meta['steps']} steps, energy ratio {summary['energy_ratio_final']}, -> {csv_path}")
    return [csv_path, diag], {"kappa": {scheme: traj.meta.get("kappa")}}


def cmd_compare(cfg: RunConfig, outdir):
    from .io import initial_condition_from_dict, write_json, write_trajectory_csv

    _, _, sys = _system(cfg)
    ic = initial_condition_from_dict(cfg.ic, sys)
    outputs, summary = [], {}
    for scheme in cfg.schemes:
        traj = _run_one(cfg, sys, ic, scheme)
        outputs.append(write_trajectory_csv(Path(outdir) / f"trajectory_{scheme}.csv", traj, sys))
        summary[scheme] = _energy_summary(traj, sys)
        print(f"{scheme:18s} E(T)/E(0) = {summary[scheme]['energy_ratio_final']!s:22s} "
              f"kappa = {summary[scheme]['kappa']:.3e}")
    outputs.append(write_json(Path(outdir) / "summary.json", summary))
    return outputs, {"kappa": {s: summary[s]["kappa"] for s in summary}}


def cmd_spectrum(cfg: RunConfig, outdir):
    from .diagnostics import equal_windows, signal, spectrum_drift, spectrum_table
    from .io import initial_condition_from_dict, write_json, write_table

    _, _, sys = _system(cfg)
    ic = initial_condition_from_dict(cfg.ic, sys)
    scheme = cfg.schemes[0]
    traj = _run_one(cfg, sys, ic, scheme)
    x = signal(traj, sys, cfg.signal)
    windows = equal_windows(traj.t, cfg.windows)
    omega, mags = spectrum_table(x, traj.t, windows)
    header = ["omega"] + [f"mag_w{i + 1}" for i in range(len(windows))]
    csv_path = write_table(Path(outdir) / f"spectrum_{cfg.signal}_{scheme}.csv", header,
                           np.column_stack([omega, mags]))
    peaks = {"windows": windows, "signal": cfg.signal, "scheme": scheme}
    if len(windows) >= 2:
        peaks["peaks"] = [p.to_dict() for p in spectrum_drift(x, traj.t, windows)]
    js = write_json(Path(outdir) / f"peaks_{cfg.signal}_{scheme}.json", peaks)
    for p in peaks.get("peaks", []):
        print(f"omega = {p['omega']:.4f}  ratios = {', '.join(f'{r:.3f}' for r in p['ratios'])}")
    return [csv_path, js], {"kappa": {scheme: traj.meta.get("kappa")}}


def cmd_ensemble(cfg: RunConfig, outdir):
    from .integrators import IntegratorConfig
    from .io import initial_condition_from_dict, write_json, write_table
    from .stochastic import NoiseSpec, analytic_moments, compare_moments, run_ensemble

    _, _, sys = _system(cfg)
    ic = initial_condition_from_dict(cfg.ic, sys)
    if isinstance(cfg.sigma, (int, float)):
        noise = NoiseSpec.diagonal(sys.n, cfg.sigma, cfg.seed, cfg.M)
    else:
        noise = NoiseSpec(np.asarray(cfg.sigma, dtype=float), cfg.seed, cfg.M)
    stats = run_ensemble(sys, ic, IntegratorConfig("vi_forward_euler", cfg.h, cfg.T), noise, workers=cfg.workers)
    x0 = np.concatenate([ic.q, sys.Lr @ ic.v])
    an = analytic_moments(sys, noise, stats.t, x0)
    r, n = sys.size, sys.n
    names = [f"mq{j}" for j in range(1, r + 1)] + [f"mp{j}" for j in range(1, r + 1)]
    bnames = [f"q{i}" for i in range(1, n + 1)] + [f"p{i}" for i in range(1, n + 1)]
    header = ["t"] + [f"mean_{s}" for s in names] + [f"var_{s}" for s in names] + [f"var_{s}" for s in bnames]
    rows = np.column_stack([stats.t, stats.mean, stats.var, stats.branch_var()])
    a_rows = np.column_stack([an.t, an.mean, an.var, an.branch_var()])
    out1 = write_table(Path(outdir) / "ensemble_stats.csv", header, rows)
    out2 = write_table(Path(outdir) / "analytic_moments.csv", header, a_rows)
    inductor_cols = [n + i for i in np.flatnonzero(sys.topo.has_L)]
    dev = compare_moments(stats, an, inductor_cols)
    comparison = {"M": stats.M, "seed": cfg.seed,
                  "max_relative_variance_deviation": {bnames[c]: v for c, v in dev.items()}}
    out3 = write_json(Path(outdir) / "ensemble_comparison.json", comparison)
    for k, v in comparison["max_relative_variance_deviation"].items():
        print(f"var({k}): max relative deviation {v:.4f}")
    return [out1, out2, out3], {}


def cmd_flavor(cfg: RunConfig, outdir):
    from .integrators import IntegratorConfig, simulate
    from .io import initial_condition_from_dict, write_json, write_trajectory_csv
    from .multiscale import FlavorConfig, flavor_simulate, slow_error, split_potential

    spec, topo, _ = _system(cfg)
    fl = cfg.flavor
    fast = [int(i) - 1 for i in fl["fast"]]
    full, off = split_potential(spec, fast, topo)
    ic = initial_condition_from_dict(cfg.ic, full)
    fcfg = FlavorConfig(float(fl["epsilon"]), float(fl["tau"]), float(fl["H"]), int(fl["samples"]), fast,
                        fl["legacy"])
    for w in fcfg.warnings():
        print("warning:", w, file=_sys.stderr)
    traj = flavor_simulate(full, off, ic, fcfg, cfg.T)
    outputs = [write_trajectory_csv(Path(outdir) / "flavor.csv", traj, full)]
    summary = {"flavor_wall_time": traj.meta["wall_time"], "kappa_full": traj.meta["kappa_full"],
               "kappa_off": traj.meta["kappa_off"]}
    if cfg.benchmark_h:
        bm = simulate(full, ic, IntegratorConfig("vi_midpoint", cfg.benchmark_h, cfg.T))
        outputs.append(write_trajectory_csv(Path(outdir) / "benchmark.csv", bm, full))
        summary["benchmark_wall_time"] = bm.meta["wall_time"]
        summary["wall_time_ratio"] = traj.meta["wall_time"] / bm.meta["wall_time"]
        summary["slow_mesh_relative_l2_error"] = {f"mq{j + 1}": e for j, e in slow_error(traj, bm, full, fast).items()}
        for k, e in summary["slow_mesh_relative_l2_error"].items():
            print(f"slow {k}: relative L2 error {e:.4f}; wall time ratio {summary['wall_time_ratio']:.3f}")
    outputs.append(write_json(Path(outdir) / "flavor_summary.json", summary))
    return outputs, {"kappa": {"full": traj.meta["kappa_full"], "off": traj.meta["kappa_off"]}}


def cmd_presets():
    from .presets import preset_catalog

    for p in preset_catalog():
        print(f"{p.name:22s} {p.description}")
        print(f"{'':22s} {json.dumps(p.to_dict(), sort_keys=True)}")


COMMANDS = {"topology": cmd_topology, "simulate": cmd_simulate, "compare": cmd_compare,
            "spectrum": cmd_spectrum, "ensemble": cmd_ensemble, "flavor": cmd_flavor}


def execute(cfg: RunConfig, outdir=None):
    started = time.perf_counter()
    if cfg.command == "topology":
        return cmd_topology(cfg)
    out = _outdir(outdir)
    outputs, extra = COMMANDS[cfg.command](cfg, out)
    _manifest(cfg, out, outputs, extra, started)
    return outputs, extra


def rerun(manifest_path, outdir=None):
    from .io import read_json

    data = read_json(manifest_path)
    try:
        cfg = RunConfig(**data["config"])
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"not a circuitvi manifest: {exc}") from None
    return execute(cfg, outdir or Path(manifest_path).parent)


# ------------------------------------------------------------------ main


def _exit_code(exc) -> int:
    if isinstance(exc, (UsageError, ConfigError)):
        return EXIT_USAGE
    if isinstance(exc, (NetlistError, TopologyError, InconsistentStateError, ValueError)):
        return EXIT_PARSE
    if isinstance(exc, GateError):
        return EXIT_GATE
    return EXIT_RUNTIME


def main(argv=None) -> int:
    argv = list(_sys.argv[1:] if argv is None else argv)
    json_errors = "--json-errors" in argv
    parser = build_parser()
    try:
        if not argv or argv == ["--json-errors"]:
            parser.print_usage(_sys.stderr)
            raise UsageError("a subcommand is required")
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_usage(_sys.stderr)
            raise UsageError("a subcommand is required")
        if args.command == "presets":
            cmd_presets()
        elif args.command == "rerun":
            rerun(args.manifest, args.outdir)
        else:
            execute(resolve(args), getattr(args, "outdir", None))
        return EXIT_OK
    except (UsageError, CircuitError, ValueError, OSError) as exc:
        code = _exit_code(exc) if not isinstance(exc, OSError) else EXIT_RUNTIME
        if json_errors:
            print(json.dumps({"error": type(exc).__name__, "message": str(exc), "exit_code": code}), file=_sys.stderr)
        else:
            print(f"circuitvi: error: {exc}", file=_sys.stderr)
        return code


if __name__ == "__main__":
    raise SystemExit(main())
