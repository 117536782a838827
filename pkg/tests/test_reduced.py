import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from circuitvi.errors import InconsistentStateError
from circuitvi.integrators import IntegratorConfig, simulate
from circuitvi.netlist import parse_netlist
from circuitvi.presets import load_preset_system
from circuitvi.reduced import (BranchState, MeshState, assemble, branch_to_mesh, branch_voltages, energy,
                               full_system_residual, mesh_energy, mesh_to_branch)
from circuitvi.topology import build_topology
from strategies import circuits

# computed by hand from the bundled loop matrices
FROZEN = {
    "rlc-square": ([[3, -1, -1], [-1, 3, -1], [-1, -1, 2]], [[3, -1, -1], [-1, 3, -1], [-1, -1, 3]]),
    "lc-oscillator": ([[1, 0], [0, 1]], [[1.1, -1], [-1, 1]]),
    "lc-transmission-line": (np.eye(3), [[1, -1, 0], [-1, 2, -1], [0, -1, 1]]),
}


@pytest.mark.parametrize("name", sorted(FROZEN))
def test_reduced_matrices_frozen(name):
    _, sys, _ = load_preset_system(name)
    Lr, Cr = FROZEN[name]
    np.testing.assert_allclose(sys.Lr, Lr, atol=1e-15)
    np.testing.assert_allclose(sys.Cr, Cr, atol=1e-15)
    assert not sys.Rr.any()


def test_resistive_square():
    _, sys, _ = load_preset_system("rlc-square-R")
    _, base, _ = load_preset_system("rlc-square")
    np.testing.assert_allclose(sys.Rr, 0.001 * (base.Cr), rtol=1e-12)


def test_reduced_matrices_symmetric(lc_preset):
    _, sys, _ = lc_preset
    for M in (sys.Lr, sys.Cr, sys.Rr):
        assert np.array_equal(M, M.T)


def test_single_loop_energy_half():
    sys = assemble(parse_netlist("ground g\nnode a\nbranch a g L=1\nbranch g a C=1\n"))
    state = BranchState(0.0, np.array([1.0, 1.0]), np.zeros(2), np.zeros(2), np.zeros(2))
    assert energy(state, sys) == 0.5
    assert sys.Cinv.tolist() == [0.0, 1.0]


class TestMaps:
    def test_round_trip(self, lc_preset):
        _, sys, _ = lc_preset
        rng = np.random.default_rng(3)
        s = MeshState.initial(sys, rng.normal(size=sys.size), rng.normal(size=sys.size))
        b = mesh_to_branch(s, sys)
        back = branch_to_mesh(b, sys)
        np.testing.assert_allclose(back.q, s.q, atol=1e-13)
        np.testing.assert_allclose(back.v, s.v, atol=1e-13)
        np.testing.assert_allclose(back.p, s.p, atol=1e-13)

    def test_kcl_violation_rejected(self):
        _, sys, _ = load_preset_system("lc-oscillator")
        bad = BranchState(0.0, np.zeros(4), np.array([1.0, 0, 0, 0]), np.zeros(4), np.zeros(4))
        with pytest.raises(InconsistentStateError, match="current violates KCL"):
            branch_to_mesh(bad, sys)
        bad = BranchState(0.0, np.array([0, 1.0, 0, 0]), np.zeros(4), np.zeros(4), np.zeros(4))
        with pytest.raises(InconsistentStateError, match="charge"):
            branch_to_mesh(bad, sys)

    def test_energy_both_ways(self, lc_preset):
        _, sys, _ = lc_preset
        rng = np.random.default_rng(7)
        s = MeshState.initial(sys, rng.normal(size=sys.size), rng.normal(size=sys.size))
        assert energy(mesh_to_branch(s, sys), sys) == pytest.approx(mesh_energy(s, sys), rel=1e-13)

    def test_branch_voltages_satisfy_kvl(self, lc_preset):
        _, sys, _ = lc_preset
        rng = np.random.default_rng(11)
        q, v = rng.normal(size=(2, 5, sys.size))
        u = branch_voltages(sys, q, v, np.zeros(5))
        assert np.abs(u @ sys.K2).max() < 1e-12


@settings(max_examples=40, deadline=None)
@given(circuits(lc_only=True), st.integers(0, 2**32 - 1))
def test_energy_agrees_on_generated_circuits(spec, seed):
    sys = assemble(spec)
    rng = np.random.default_rng(seed)
    s = MeshState.initial(sys, rng.normal(size=sys.size), rng.normal(size=sys.size))
    assert energy(mesh_to_branch(s, sys), sys) == pytest.approx(mesh_energy(s, sys), rel=1e-10, abs=1e-12)


@pytest.mark.parametrize("name", ["rlc-square", "lc-oscillator", "lc-transmission-line"])
def test_loop_basis_does_not_change_branch_trajectory(name):
    """Bundled and tree-generated loop matrices give the same physics."""
    spec, bundled, ic = load_preset_system(name)
    tree = assemble(spec, build_topology(spec))
    q_branch = bundled.K2 @ ic.q
    v_branch = bundled.K2 @ ic.v
    ic2 = branch_to_mesh(BranchState(0.0, q_branch, v_branch, tree.L * v_branch, np.zeros(spec.n)), tree)
    ic2 = MeshState.initial(tree, ic2.q, ic2.v)
    cfg = IntegratorConfig("vi_midpoint", 0.1, 10.0)
    a = simulate(bundled, ic, cfg).to_branch(bundled)
    b = simulate(tree, ic2, cfg).to_branch(tree)
    for x, y in zip(a, b):
        np.testing.assert_allclose(x, y, atol=1e-11)


def test_zero_potential_branches():
    spec, full, _ = load_preset_system("lc-oscillator")
    sys = assemble(spec, full.topo, zero_potential=[3])
    assert sys.Cinv[3] == 0.0
    np.testing.assert_allclose(sys.Cr, [[1, -1], [-1, 1]])


def test_residual_difference_modes():
    _, sys, ic = load_preset_system("lc-oscillator")
    tr = simulate(sys, ic, IntegratorConfig("vi_midpoint", 0.01, 1.0))
    q, v, p = tr.to_branch(sys)
    central = full_system_residual(tr.t, q, v, p, sys, 0.01)
    backward = full_system_residual(tr.t, q, v, p, sys, 0.01, difference="backward")
    assert central["kvl"].shape == (len(tr.t) - 2,)
    assert backward["kvl"].shape == (len(tr.t) - 1,)
    assert central["kcl"].max() < 1e-12 and central["legendre"].max() == 0.0
    with pytest.raises(ValueError):
        full_system_residual(tr.t, q, v, p, sys, 0.01, difference="forward")
