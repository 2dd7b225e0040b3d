import math

import numpy as np
import pytest

from momentpi.control import (
    InadmissibleSetpointError,
    MimoPIGains,
    RefSegment,
    ReferenceSignal,
    ScalarPIGains,
    Setpoint,
    mimo_closed_loop_equilibrium,
)
from momentpi.moments import (
    MomentODE,
    PlantParams,
    build_affine_moment_system,
    gene_expression_network,
    open_loop_equilibrium,
)
from momentpi.sim import (
    IntegrationError,
    SolverSettings,
    Trajectory,
    integrate,
    plateau_report,
    read_trajectory_csv,
    simulate_mean_control,
    simulate_mean_var_control,
)

MEAN_GAINS = ScalarPIGains(0.2, 0.0007)
MIMO_GAINS = MimoPIGains(k1=0.005, k2=7e-5, k7=-0.12, k8=-6.5e-4)


def decay():
    return MomentODE(dim=1, rhs=lambda t, x, u=None: -x)


def test_exponential_decay():
    traj = integrate(decay(), [1.0], (0.0, 5.0), SolverSettings(rtol=1e-10, atol=1e-12))
    np.testing.assert_allclose(traj["x1"], np.exp(-traj.t), atol=1e-8, rtol=0)


def test_halving_tolerance_shrinks_error():
    errs = []
    for rtol in (1e-4, 5e-5):
        tr = integrate(decay(), [1.0], (0.0, 10.0), SolverSettings(rtol=rtol, atol=rtol * 1e-3, method="RK45"))
        errs.append(np.abs(tr["x1"] - np.exp(-tr.t)).max())
    assert errs[1] < errs[0]


def test_settings_validation():
    for bad in (dict(rtol=0), dict(atol=-1), dict(max_step=0), dict(n_points=1), dict(dt_out=0)):
        with pytest.raises(ValueError):
            SolverSettings(**bad)


def test_dt_out_grid_hits_end():
    g = SolverSettings(dt_out=3.0).grid(0.0, 10.0)
    assert g[0] == 0 and g[-1] == 10 and np.allclose(np.diff(g)[:-1], 3)


def test_bad_spans():
    with pytest.raises(ValueError):
        integrate(decay(), [1.0], (1.0, 1.0))
    with pytest.raises(ValueError):
        integrate(decay(), [np.nan], (0.0, 1.0))


def test_stiff_failure_reports_time():
    blow = MomentODE(dim=1, rhs=lambda t, x, u=None: x * x)
    with pytest.raises(IntegrationError) as info:
        integrate(blow, [1.0], (0.0, 2.0))
    assert 0.9 < info.value.t <= 1.0 + 1e-6
    assert "t=" in str(info.value)


def test_open_loop_converges_to_equilibrium():
    p = PlantParams(0.3, 0.03, 0.06, 0.0066)
    ode = build_affine_moment_system(gene_expression_network(p))
    t_end = 20 / min(p.gamma_r, p.gamma_p)
    tr = integrate(ode, np.zeros(5), (0.0, t_end), SolverSettings(rtol=1e-10, atol=1e-12))
    ref = open_loop_equilibrium(p).as_array()
    final = tr.data[-1, :5]
    assert np.max(np.abs(final - ref) / np.abs(ref)) < 1e-6


def test_mean_tracking_on_plant(ref_plant):
    tr = simulate_mean_control(ref_plant, MEAN_GAINS, 10.0, t_span=(0, 6000))
    assert tr.final()["x2"] == pytest.approx(10.0, rel=1e-6)
    assert tr["u1"].min() >= 0
    assert tr.final()["u1"] == pytest.approx(10 * 0.0066 * 0.03 / 0.06, rel=1e-5)


def test_disturbance_below_bound_is_rejected(ref_plant):
    tr = simulate_mean_control(ref_plant, MEAN_GAINS, 10.0, disturbance=0.03, t_span=(0, 8000))
    assert tr.final()["x2"] == pytest.approx(10.0, rel=1e-6)
    assert tr.final()["u1"] == pytest.approx(0.033 - 0.03, rel=1e-4)


def test_disturbance_above_bound_leaves_offset(ref_plant):
    # the controller saturates at zero, leaving the open loop driven by the disturbance
    d = 0.04
    tr = simulate_mean_control(ref_plant, MEAN_GAINS, 10.0, disturbance=d, t_span=(0, 8000))
    offset = ref_plant.k_p * d / (ref_plant.gamma_r * ref_plant.gamma_p)
    assert tr.final()["x2"] == pytest.approx(offset, rel=1e-4)
    assert tr.final()["u1"] == 0.0


def test_normalized_mean_tracking(ref_normalized):
    ref = ReferenceSignal(2.0, (RefSegment(10000.0, "step", 4.0),))
    tr = simulate_mean_control(ref_normalized, ScalarPIGains(0.01, 0.0007), ref, t_span=(0, 20000),
                               settings=SolverSettings(dt_out=10.0))
    rep = plateau_report(tr, ref, "x2")
    assert [r["target"] for r in rep] == [2.0, 4.0]
    assert max(r["rel_error"] for r in rep) < 1e-6
    assert tr["u1"].min() >= 0


def test_mean_state_shape_check(ref_plant):
    with pytest.raises(ValueError):
        simulate_mean_control(ref_plant, MEAN_GAINS, 10.0, x0=np.zeros(5))


def test_mimo_converges_from_open_loop(ref_plant):
    sp = Setpoint(10.0, 30.0)
    tr = simulate_mean_var_control(ref_plant, MIMO_GAINS, (sp.mu, sp.var), x0=np.r_[np.zeros(5), 0, 0],
                                   t_span=(0, 20000), settings=SolverSettings(dt_out=50.0))
    f = tr.final()
    assert abs(f["x2"] - 10) / 10 < 1e-4 and abs(f["x5"] - 30) / 30 < 1e-4
    eq = mimo_closed_loop_equilibrium(ref_plant, sp, MIMO_GAINS)
    assert f["u1"] == pytest.approx(eq["u1"], rel=1e-3)
    assert f["u2"] == pytest.approx(eq["u2"], rel=1e-3)
    assert min(tr["u1"].min(), tr["u2"].min()) >= 0


def test_mimo_zero_gains_is_open_loop(ref_plant):
    # with zero inputs both channels are off and the state simply decays
    x0 = np.array([5.0, 10.0, 6.0, 20.0, 40.0, 0.0, 0.0])
    tr = simulate_mean_var_control(ref_plant, MimoPIGains(), (10.0, 30.0), x0=x0, t_span=(0, 500))
    assert np.all(tr["u1"] == 0) and np.all(tr["u2"] == 0)
    np.testing.assert_allclose(tr["x1"], 5.0, rtol=1e-9)


def test_mimo_starts_at_equilibrium_by_default(ref_plant):
    tr = simulate_mean_var_control(ref_plant, MIMO_GAINS, (10.0, 30.0), t_span=(0, 1000))
    np.testing.assert_allclose(tr.data[-1, :7], tr.data[0, :7], rtol=1e-7)


def test_inadmissible_reference_names_time(ref_plant):
    var = ReferenceSignal(30.0, (RefSegment(400.0, "step", 200.0),))
    with pytest.raises(InadmissibleSetpointError, match=r"t=400"):
        simulate_mean_var_control(ref_plant, MIMO_GAINS, (10.0, var), t_span=(0, 1000))


def test_zero_mean_setpoint_decays(ref_plant):
    x0 = np.array([2.0, 5.0, 3.0, 4.0, 9.0, 0.0])
    tr = simulate_mean_control(ref_plant, MEAN_GAINS, 0.0, x0=x0, t_span=(0, 5000))
    assert tr.final()["x2"] < 1e-6 and tr.final()["x1"] < 1e-6


def test_trajectory_csv_round_trip(tmp_path, ref_plant):
    tr = simulate_mean_control(ref_plant, MEAN_GAINS, 10.0, t_span=(0, 100),
                               settings=SolverSettings(n_points=37))
    path = tmp_path / "t.csv"
    tr.to_csv(path)
    back = read_trajectory_csv(path)
    assert back.names == tr.names
    np.testing.assert_array_equal(back.t, tr.t)
    np.testing.assert_array_equal(back.data, tr.data)


def test_trajectory_access():
    tr = Trajectory([0.0, 1.0], [[1, 2], [3, 4]], ("x1", "u1"))
    assert tr.input_names == ("u1",)
    assert tr.at(0.9)["x1"] == 3
    with pytest.raises(KeyError):
        tr["x9"]
    with pytest.raises(ValueError):
        Trajectory([1.0, 0.0], [[1], [2]], ("x1",))


def test_plateau_report_cuts_at_extra_breakpoints():
    tr = Trajectory(np.linspace(0, 10, 11), np.ones((11, 1)), ("x2",))
    rep = plateau_report(tr, ReferenceSignal.constant(1.0), "x2", extra_breakpoints=[4.0])
    assert [(r["t_start"], r["t_end"]) for r in rep] == [(0.0, 4.0), (4.0, 10.0)]
    assert all(r["rel_error"] == 0 for r in rep)
    assert math.isclose(rep[0]["t_sample"], 4.0)
