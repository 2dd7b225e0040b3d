import numpy as np
import pytest
from scipy import stats

from momentpi.control import MimoPIGains, ScalarPIGains, Setpoint
from momentpi.moments import (
    PlantParams,
    ReactionNetwork,
    build_affine_moment_system,
    gene_expression_network,
)
from momentpi.sim import SolverSettings, integrate
from momentpi.ssa import (
    SsaError,
    ensemble_moments,
    read_ssa_csv,
    simulate_ssa,
    ssa_closed_loop_ensemble,
)

PLANT = PlantParams(0.3, 0.03, 0.06, 0.0066)


def birth_death(k=5.0, g=1.0):
    return ReactionNetwork([[1, -1]], [[0.0], [g]], [k, 0.0])


def bare_gene_network(p=PLANT):
    # no nominal transcription or mRNA decay: both are supplied as inputs
    return ReactionNetwork([[1, -1, 0, 0], [0, 0, 1, -1]],
                           [[0, 0], [0, 0], [p.k_p, 0], [0, p.gamma_p]], [0, 0, 0, 0])


def test_birth_death_is_poisson():
    # from zero, the count at time t is Poisson with mean k/g (1 - exp(-g t))
    k, g, t = 5.0, 1.0, 1.0
    lam = k / g * (1 - np.exp(-g * t))
    _, X = ensemble_moments(birth_death(k, g), [0], [t], 10_000, 99, return_states=True)
    counts = X[0, :, 0]
    edges = np.arange(0, 10)
    obs = np.array([np.sum(counts == c) for c in edges[:-1]] + [np.sum(counts >= edges[-1])])
    pmf = stats.poisson.pmf(edges[:-1], lam)
    exp = 10_000 * np.append(pmf, 1 - pmf.sum())
    assert stats.chisquare(obs, exp).pvalue > 1e-3


def test_zero_propensity_stays_put():
    net = ReactionNetwork([[1, -1]], [[0.0], [0.0]], [0.0, 0.0])
    tr = simulate_ssa(net, [3], 100.0, 1)
    assert tr.n_events == 0
    np.testing.assert_array_equal(tr.states, [[3]])
    np.testing.assert_array_equal(tr.times, [0.0])


def test_fixed_seed_is_reproducible():
    net = gene_expression_network(PLANT)
    a = simulate_ssa(net, [0, 0], 500.0, 42)
    b = simulate_ssa(net, [0, 0], 500.0, 42)
    c = simulate_ssa(net, [0, 0], 500.0, 43)
    np.testing.assert_array_equal(a.times, b.times)
    np.testing.assert_array_equal(a.states, b.states)
    assert a.n_events != c.n_events or not np.array_equal(a.times, c.times)


def test_negative_propensity_names_reaction():
    net = ReactionNetwork([[1, -1]], [[0.0], [-1.0]], [1.0, 0.0])
    with pytest.raises(SsaError, match=r"reaction R2"):
        simulate_ssa(net, [2], 10.0, 0)
    with pytest.raises(SsaError, match=r"R2 .*in trajectory 0"):
        ensemble_moments(net, [2], [1.0], 2, 0)


@pytest.mark.parametrize("t_end", [0.0, -1.0, float("inf"), float("nan")])
def test_bad_horizon(t_end):
    with pytest.raises(ValueError):
        simulate_ssa(birth_death(), [0], t_end, 0)


def test_bad_inputs():
    with pytest.raises(ValueError):
        simulate_ssa(birth_death(), [-1], 1.0, 0)
    with pytest.raises(ValueError):
        simulate_ssa(birth_death(), [0.5], 1.0, 0)
    with pytest.raises(ValueError):
        ensemble_moments(birth_death(), [0], [1.0], 1, 0)
    with pytest.raises(ValueError):
        ensemble_moments(birth_death(), [0], [2.0, 1.0], 10, 0)


def test_trajectory_invariants():
    tr = simulate_ssa(gene_expression_network(PLANT), [0, 0], 2000.0, 5)
    assert tr.times[0] == 0 and np.all(np.diff(tr.times) > 0) and tr.times[-1] <= 2000.0
    steps = np.diff(tr.states, axis=0)
    allowed = {(1, 0), (-1, 0), (0, 1), (0, -1)}
    assert {tuple(s) for s in steps} <= allowed
    assert tr.states.min() >= 0
    np.testing.assert_array_equal(tr.state_at(2000.0), tr.states[-1])


def test_trajectory_csv_round_trip(tmp_path):
    tr = simulate_ssa(gene_expression_network(PLANT), [1, 2], 300.0, 8)
    path = tmp_path / "ssa.csv"
    tr.to_csv(path)
    assert path.read_text().splitlines()[0] == "time,X1,X2"
    t, X = read_ssa_csv(path)
    np.testing.assert_array_equal(t, tr.times)
    np.testing.assert_array_equal(X, tr.states)


def test_single_grid_time_matches_standalone_path():
    net = gene_expression_network(PLANT)
    _, X = ensemble_moments(net, [0, 0], [800.0], 4, 77, return_states=True)
    for i in range(4):
        tr = simulate_ssa(net, [0, 0], 800.0, 77, spawn_key=(i,))
        np.testing.assert_array_equal(X[0, i], tr.states[-1])


def test_two_trajectories_is_defined():
    m = ensemble_moments(birth_death(), [0], [1.0, 2.0], 2, 3)
    assert m.n == 2 and np.all(np.isfinite(m.cov)) and np.all(np.isfinite(m.se_cov))


def test_standard_error_scaling():
    net = gene_expression_network(PLANT)
    a = ensemble_moments(net, [0, 0], [1500.0], 4000, 1)
    b = ensemble_moments(net, [0, 0], [1500.0], 8000, 2)
    ratio = a.se_mean[0] / b.se_mean[0]
    np.testing.assert_allclose(ratio, np.sqrt(2), rtol=0.1)


def test_ensemble_agrees_with_moment_ode():
    net = gene_expression_network(PLANT)
    grid = np.array([250.0, 1000.0, 3000.0])
    ens = ensemble_moments(net, [0, 0], grid, 4000, 2024)
    ode = build_affine_moment_system(net)
    tr = integrate(ode, np.zeros(5), (0.0, grid[-1]), SolverSettings(dt_out=250.0))
    ref = np.array([tr.data[np.argmin(np.abs(tr.t - t)), :5] for t in grid])
    z = ens.z_scores(ref)
    assert np.abs(z).max() < 3


def test_z_scores_shape_check():
    m = ensemble_moments(birth_death(), [0], [1.0], 10, 0)
    with pytest.raises(ValueError):
        m.z_scores(np.zeros((2, 2)))


def test_closed_loop_mean_tracks_setpoint():
    net = gene_expression_network(PlantParams(0.0, 0.03, 0.06, 0.0066))
    r = ssa_closed_loop_ensemble(net, ScalarPIGains(0.005, 2e-5), Setpoint(10.0), 10.0, 5000, 6000, 7)
    m = r.moments
    assert abs(m.mean[-1, 1] - 10) < 3 * m.se_mean[-1, 1]
    assert r.inputs.min() >= 0
    assert r.input_names == ("u1",)


def test_closed_loop_mean_and_variance():
    g = MimoPIGains(k1=0.015, k2=1.3e-4, k7=-5.5e-4, k8=-1.25e-5)
    r = ssa_closed_loop_ensemble(bare_gene_network(), g, Setpoint(10.0, 30.0), 10.0, 5000, 8000, 7)
    m = r.moments
    assert abs(m.mean[-1, 1] - 10) < 3 * m.se_mean[-1, 1]
    assert abs(m.cov[-1, 1, 1] - 30) < 3 * m.se_cov[-1, 1, 1]
    assert r.inputs.min() >= 0


def test_closed_loop_zero_gains_is_open_loop_ensemble():
    net = gene_expression_network(PLANT)
    r = ssa_closed_loop_ensemble(net, ScalarPIGains(0.0, 0.0), Setpoint(10.0), 100.0, 200, 1000, 11)
    plain = ensemble_moments(net, [0, 0], r.times, 200, 11)
    np.testing.assert_array_equal(r.moments.mean, plain.mean)
    np.testing.assert_array_equal(r.moments.cov, plain.cov)
    assert np.all(r.inputs == 0)


def test_closed_loop_deterministic(tmp_path):
    net = gene_expression_network(PlantParams(0.0, 0.03, 0.06, 0.0066))
    args = (net, ScalarPIGains(0.005, 2e-5), Setpoint(10.0), 25.0, 300, 1000, 4)
    a, b = ssa_closed_loop_ensemble(*args), ssa_closed_loop_ensemble(*args)
    a.to_csv(tmp_path / "a.csv")
    b.to_csv(tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_closed_loop_validation():
    net = gene_expression_network(PLANT)
    with pytest.raises(ValueError):
        ssa_closed_loop_ensemble(birth_death(), ScalarPIGains(1, 1), Setpoint(1.0), 1.0, 10, 10, 0)
    with pytest.raises(ValueError):
        ssa_closed_loop_ensemble(net, ScalarPIGains(1, 1), Setpoint(1.0), 0.0, 10, 10, 0)
    with pytest.raises(ValueError):
        ssa_closed_loop_ensemble(net, MimoPIGains(), Setpoint(1.0), 1.0, 10, 10, 0)
