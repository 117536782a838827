import numpy as np
import pytest
from scipy.integrate import quad_vec
from scipy.linalg import expm

from circuitvi.errors import ConfigError
from circuitvi.integrators import IntegratorConfig, simulate
from circuitvi.netlist import parse_netlist
from circuitvi.presets import load_preset_system
from circuitvi.reduced import MeshState, assemble
from circuitvi.stochastic import (NoiseSpec, analytic_moments, compare_moments, drift_matrix, lyapunov_rk4,
                                  member_generators, noise_increment, noise_matrix, run_ensemble,
                                  step_stochastic_forward_euler)

TWO_INDUCTORS = "ground g\nnode a\nbranch a g L=1\nbranch g a L=1\n"


@pytest.fixture
def osc():
    return load_preset_system("lc-oscillator")


def test_noise_spec_validation():
    with pytest.raises(ConfigError):
        NoiseSpec(np.ones((2, 3)))
    with pytest.raises(ConfigError):
        NoiseSpec(np.eye(2), M=0)
    with pytest.raises(ConfigError):
        NoiseSpec(np.array([[np.nan]]))
    assert NoiseSpec.diagonal(3, 0.5).Sigma.tolist() == (0.5 * np.eye(3)).tolist()


def test_sigma_shape_checked(osc):
    _, sys, ic = osc
    with pytest.raises(ConfigError, match="4 x 4"):
        run_ensemble(sys, ic, IntegratorConfig("vi_forward_euler", 0.1, 1.0), NoiseSpec.diagonal(3, 0.1))


def test_zero_noise_is_deterministic_path(osc):
    _, sys, ic = osc
    cfg = IntegratorConfig("vi_forward_euler", 0.1, 5.0)
    stats = run_ensemble(sys, ic, cfg, NoiseSpec.diagonal(4, 0.0, seed=1, M=5))
    det = simulate(sys, ic, cfg)
    np.testing.assert_allclose(stats.mean[:, :2], det.q, atol=1e-14)
    np.testing.assert_allclose(stats.mean[:, 2:], det.p, atol=1e-14)
    assert np.abs(stats.cov).max() < 1e-28


def test_one_step_increment(osc):
    _, sys, ic = osc
    Sigma = np.diag([0.1, 0.2, 0.3, 0.4])
    xi = np.array([1.0, -1.0, 0.5, 2.0])
    noisy = step_stochastic_forward_euler(ic, sys, xi, 0.1, Sigma)
    clean = step_stochastic_forward_euler(ic, sys, np.zeros(4), 0.1, Sigma)
    np.testing.assert_allclose(noisy.p - clean.p, np.sqrt(0.1) * sys.K2.T @ (Sigma @ xi), atol=1e-15)
    np.testing.assert_array_equal(noisy.q, clean.q)
    np.testing.assert_allclose(noise_increment(sys, Sigma, xi, 0.1), noisy.p - clean.p, atol=1e-15)


def test_seeded_runs_repeat(osc):
    _, sys, ic = osc
    cfg = IntegratorConfig("vi_forward_euler", 0.1, 3.0)
    noise = NoiseSpec.diagonal(4, 0.05, seed=42, M=50)
    a, b = run_ensemble(sys, ic, cfg, noise), run_ensemble(sys, ic, cfg, noise)
    np.testing.assert_array_equal(a.mean, b.mean)
    np.testing.assert_array_equal(a.cov, b.cov)
    c = run_ensemble(sys, ic, cfg, NoiseSpec.diagonal(4, 0.05, seed=43, M=50))
    assert not np.array_equal(a.mean, c.mean)


def test_member_streams_are_independent():
    g = member_generators(7, 3)
    draws = [x.standard_normal(4) for x in g]
    assert not np.array_equal(draws[0], draws[1])
    assert np.array_equal(member_generators(7, 3)[2].standard_normal(4), draws[2])


def test_single_member_has_zero_variance(osc):
    _, sys, ic = osc
    stats = run_ensemble(sys, ic, IntegratorConfig("vi_forward_euler", 0.1, 2.0), NoiseSpec.diagonal(4, 0.1, M=1))
    assert not stats.cov.any() and stats.M == 1


@pytest.mark.parametrize("workers", [1, 2])
def test_chunking_does_not_change_statistics(osc, workers):
    _, sys, ic = osc
    cfg = IntegratorConfig("vi_forward_euler", 0.1, 2.0)
    noise = NoiseSpec.diagonal(4, 0.1, seed=5, M=64)
    whole = run_ensemble(sys, ic, cfg, noise)
    split = run_ensemble(sys, ic, cfg, noise, chunk=7, workers=workers)
    np.testing.assert_allclose(split.mean, whole.mean, atol=1e-14)
    np.testing.assert_allclose(split.cov, whole.cov, atol=1e-14)


def test_covariance_is_positive_semidefinite(osc):
    _, sys, ic = osc
    stats = run_ensemble(sys, ic, IntegratorConfig("vi_forward_euler", 0.1, 3.0), NoiseSpec.diagonal(4, 0.1, M=200))
    for C in stats.cov[::5]:
        assert np.linalg.eigvalsh(C).min() > -1e-14
    assert stats.branch_cov().shape == (31, 8, 8)


def test_random_walk_variance():
    """Two inductors in a loop: no restoring force, so p~ is a random walk."""
    sys = assemble(parse_netlist(TWO_INDUCTORS))
    ic = MeshState.initial(sys, [0.0])
    sigma, h = 0.3, 0.1
    t = h * np.arange(21)
    am = analytic_moments(sys, NoiseSpec.diagonal(2, sigma), t)
    # K2^T Sigma Sigma^T K2 = 2 sigma^2; q~' = p~ / 2
    np.testing.assert_allclose(am.cov[:, 1, 1], 2 * sigma**2 * t, rtol=1e-12, atol=1e-15)
    np.testing.assert_allclose(am.cov[:, 0, 1], sigma**2 * t**2 / 2, rtol=1e-12, atol=1e-15)
    np.testing.assert_allclose(am.cov[:, 0, 0], sigma**2 * t**3 / 6, rtol=1e-12, atol=1e-15)
    stats = run_ensemble(sys, ic, IntegratorConfig("vi_forward_euler", h, 2.0), NoiseSpec.diagonal(2, sigma, M=4000))
    assert stats.var[-1, 1] == pytest.approx(2 * sigma**2 * 2.0, rel=0.1)


def test_lyapunov_matches_quadrature(osc):
    _, sys, _ = osc
    A = drift_matrix(sys)
    S = noise_matrix(sys, np.diag([0.1, 0.2, 0.3, 0.4]))
    Q = S @ S.T
    t = np.linspace(0.0, 3.0, 31)
    D = lyapunov_rk4(A, Q, t)
    ref, _ = quad_vec(lambda s: expm(A * s) @ Q @ expm(A * s).T, 0.0, 3.0, epsabs=1e-14)
    np.testing.assert_allclose(D[-1], ref, atol=1e-9)


def test_analytic_mean_follows_deterministic_flow(osc):
    _, sys, ic = osc
    x0 = np.concatenate([ic.q, ic.p])
    t = np.linspace(0.0, 5.0, 51)
    am = analytic_moments(sys, NoiseSpec.diagonal(4, 0.01), t, x0)
    ref = simulate(sys, ic, IntegratorConfig("rk4", 0.001, 5.0))
    np.testing.assert_allclose(am.mean[-1, :2], ref.q[-1], atol=1e-9)


def test_compare_moments_zero_for_identical(osc):
    _, sys, ic = osc
    t = 0.1 * np.arange(31)
    am = analytic_moments(sys, NoiseSpec.diagonal(4, 0.01), t)
    from circuitvi.stochastic import EnsembleStats

    fake = EnsembleStats(t, am.mean, am.cov, 10, sys.K2)
    assert compare_moments(fake, am, [4, 5]) == {4: 0.0, 5: 0.0}
