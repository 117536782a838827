import numpy as np
import pytest

from circuitvi.diagnostics import energy_series_mesh
from circuitvi.errors import ConfigError
from circuitvi.integrators import IntegratorConfig, simulate, step_vi_midpoint
from circuitvi.multiscale import (FlavorConfig, flavor_simulate, relative_l2_error, slow_error, slow_meshes,
                                  split_potential, suggest_fast_branches)
from circuitvi.netlist import parse_netlist
from circuitvi.presets import get_preset, load_preset_system
from circuitvi.reduced import MeshState


@pytest.fixture
def stiff():
    spec, sys, ic = load_preset_system("lc-multiscale")
    full, off = split_potential(spec, [3], sys.topo)
    return spec, full, off, ic


class TestConfig:
    def test_delta(self):
        assert FlavorConfig(1e-3, 1e-4, 0.1, 100, [3]).delta == pytest.approx(1e-3)

    @pytest.mark.parametrize("kwargs, match", [
        (dict(fast_branches=[]), "must not be empty"),
        (dict(legacy="rk4"), "legacy integrator"),
        (dict(tau=-1.0), "positive"),
        (dict(samples=0), "samples"),
        (dict(tau=2e-3), "smaller than delta"),
    ])
    def test_invalid(self, kwargs, match):
        base = dict(epsilon=1e-3, tau=1e-4, H=0.1, samples=100, fast_branches=[3])
        base.update(kwargs)
        with pytest.raises(ConfigError, match=match):
            FlavorConfig(**base)

    def test_warnings(self):
        assert FlavorConfig(1e-3, 1e-4, 0.1, 100, [3]).warnings() == []
        msgs = FlavorConfig(1e-4, 1e-4, 10.0, 5, [3]).warnings()
        assert any("tau/epsilon" in m for m in msgs) and any("exceeds" in m for m in msgs)


class TestSplit:
    def test_fast_potential_removed(self, stiff):
        spec, full, off, _ = stiff
        np.testing.assert_allclose(full.Cr - off.Cr, 1000.0 * np.outer(full.K2[3], full.K2[3]), rtol=1e-12)
        np.testing.assert_array_equal(full.Lr, off.Lr)

    def test_all_capacitors_fast(self):
        spec = parse_netlist(get_preset("lc-oscillator").netlist_text())
        _, off = split_potential(spec, [2, 3])
        assert not off.Cr.any()

    def test_bad_branches(self):
        spec = parse_netlist(get_preset("lc-oscillator").netlist_text())
        with pytest.raises(ConfigError, match="out of range"):
            split_potential(spec, [9])
        with pytest.raises(ConfigError, match="no capacitor"):
            split_potential(spec, [0])
        with pytest.raises(ConfigError):
            split_potential(spec, [])

    def test_suggest_and_slow_meshes(self, stiff):
        spec, full, _, _ = stiff
        assert suggest_fast_branches(spec) == [3]
        assert suggest_fast_branches(parse_netlist("ground g\nnode a\nbranch a g L=1\nbranch g a L=2\n")) == []
        assert slow_meshes(full, [3]).tolist() == [1]


def test_macro_step_is_composition_of_substeps(stiff):
    _, full, off, ic = stiff
    cfg = FlavorConfig(1e-3, 1e-4, 0.01, 10, [3])
    tr = flavor_simulate(full, off, ic, cfg, 0.02)
    s = MeshState(0.0, ic.q, np.zeros(2), ic.p)
    for _ in range(20):
        s = step_vi_midpoint(s, full, 1e-4)
        s = step_vi_midpoint(s, off, cfg.delta - 1e-4)
    np.testing.assert_allclose(tr.q[-1], s.q, rtol=1e-12)
    np.testing.assert_allclose(tr.p[-1], s.p, rtol=1e-12)
    assert tr.t.tolist() == pytest.approx([0.0, 0.01, 0.02])
    assert tr.meta["macro_steps"] == 2


def test_horizon_must_be_multiple(stiff):
    _, full, off, ic = stiff
    with pytest.raises(ConfigError, match="multiple of H"):
        flavor_simulate(full, off, ic, FlavorConfig(1e-3, 1e-4, 0.1, 100, [3]), 0.25)


def test_energy_bounded_and_slow_mesh_tracked(stiff):
    _, full, off, ic = stiff
    cfg = FlavorConfig(1e-3, 1e-4, 0.1, 100, [3])
    tr = flavor_simulate(full, off, ic, cfg, 2.0)
    E = energy_series_mesh(tr, full)
    assert E.max() < 2 * E[0]
    bench = simulate(full, ic, IntegratorConfig("vi_midpoint", 1e-4, 2.0))
    err = slow_error(tr, bench, full, [3])
    assert list(err) == [1] and err[1] < 0.05


def test_slow_error_needs_matching_grid(stiff):
    _, full, off, ic = stiff
    tr = flavor_simulate(full, off, ic, FlavorConfig(1e-3, 1e-4, 0.1, 100, [3]), 0.2)
    bench = simulate(full, ic, IntegratorConfig("vi_midpoint", 0.03, 0.3))
    with pytest.raises(ConfigError, match="benchmark grid"):
        slow_error(tr, bench, full, [3])


def test_relative_l2_error():
    assert relative_l2_error([1.0, 2.0], [1.0, 2.0]) == 0.0
    assert relative_l2_error([3.0, 4.0], [0.0, 0.0]) == 5.0
    assert relative_l2_error([1.1, 0.0], [1.0, 0.0]) == pytest.approx(0.1)
