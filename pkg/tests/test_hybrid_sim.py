import dataclasses

import numpy as np
import pytest
from scipy.special import lambertw

from etconsensus.graph import build_graph, ring
from etconsensus.hybrid_sim import (
    DivergenceError,
    EventRecord,
    SimConfig,
    ZenoError,
    localize_event,
    rk4_step,
    run,
    zeno_monitor,
)
from etconsensus.synthesis import SystemModel

from conftest import make_scenario

SINGLE = SystemModel([[0.0]], [[1.0]])


def test_localize_linear_margin():
    t = localize_event(lambda s: s - 0.5, 0.0, 1.0, 1e-8)
    assert abs(t - 0.5) <= 1e-8
    assert t - 0.5 >= 0


def test_localize_requires_bracket():
    with pytest.raises(AssertionError):
        localize_event(lambda s: s + 1.0, 0.0, 1.0, 1e-8)
    with pytest.raises(AssertionError):
        localize_event(lambda s: -1.0, 0.0, 1.0, 1e-8)


def test_localize_exponential_gain_margin():
    # |d_tilde| = t against theta1 exp(-theta2 t) with theta1 = theta2 = 1
    oracle = float(np.real(lambertw(1.0)))
    t = localize_event(lambda s: s - np.exp(-s), 0.0, 1.0, 1e-8)
    assert t == pytest.approx(0.56714, abs=1e-5)
    assert abs(t - oracle) <= 1e-8


def test_localize_stays_bracketed_on_flat_margins():
    # nearly flat then steep: false position alone would stall on one side
    f = lambda s: np.tanh(50 * (s - 0.9)) + 0.999  # noqa: E731
    t = localize_event(f, 0.0, 1.0, 1e-10)
    root = 0.9 + np.arctanh(-0.999) / 50
    assert abs(t - root) <= 1e-10 and f(t) >= 0


def test_rk4_exact_for_cubic():
    y = rk4_step(lambda t, y: np.array([3 * t**2]), 0.0, np.array([0.0]), 0.7)
    assert y[0] == pytest.approx(0.7**3, abs=1e-15)


def test_zeno_monitor_empty():
    s = zeno_monitor([])
    assert not s.tripped and s.total_events == 0
    assert all(v == np.inf for v in s.min_gap_per_agent.values())


def test_zeno_monitor_trips_on_tiny_gaps():
    log = [EventRecord(0, k * 1e-12, "state", 0.0) for k in range(101)]
    assert zeno_monitor(log, min_gap=1e-9, consecutive=100).tripped
    assert not zeno_monitor(log[:50], min_gap=1e-9, consecutive=100).tripped


def test_config_problems():
    assert SimConfig(t_end=1.0, h=2.0).problems()
    assert SimConfig(t_end=1.0, h=1e-3, localization_tol=1e-2).problems()
    assert not SimConfig(t_end=1.0).problems()


def test_single_agent_is_trivial():
    sc = make_scenario(SystemModel([[0.0, 1.0], [-2.0, 0.3]], [[0.0], [1.0]]),
                       build_graph([], 1, undirected=True), "undirected", t_end=2.0)
    tr = run(sc)
    assert np.all(tr.consensus_error_norm == 0)
    assert np.all(tr.u == 0)
    assert np.all(tr.gain == tr.gain[0])


def test_sample_grid_and_event_rows():
    sc = make_scenario(SINGLE, build_graph([(1, 2)], 2, undirected=True), "undirected", t_end=3.0)
    tr = run(sc)
    grid = tr.times[~tr.is_event_sample]
    np.testing.assert_allclose(grid, np.round(grid, 2), atol=1e-12)
    np.testing.assert_allclose(np.diff(grid), 0.01, atol=1e-9)
    ev_rows = tr.times[tr.is_event_sample]
    assert {e.time for e in tr.events} == set(ev_rows)
    for name in ("x", "gain", "gain_hat", "eps", "u", "d_bar", "state_margin", "consensus_error_norm"):
        assert len(getattr(tr, name)) == len(tr.times)
    assert np.all(tr.eps > 0)


def test_determinism():
    sc = make_scenario(SINGLE, ring(4, undirected=True), "undirected", t_end=4.0, seed=7)
    a, b = run(sc), run(sc)
    assert [(e.agent, e.time, e.condition) for e in a.events] == [(e.agent, e.time, e.condition) for e in b.events]
    np.testing.assert_array_equal(a.x, b.x)
    np.testing.assert_array_equal(a.u, b.u)


def test_event_log_sorted():
    tr = run(make_scenario(SINGLE, ring(5), "directed", t_end=5.0, seed=2))
    times = [e.time for e in tr.events]
    assert times == sorted(times)
    for i in range(5):
        assert np.all(np.diff(tr.event_times(i)) > 0)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_reported():
    sc = make_scenario(SINGLE, build_graph([(1, 2)], 2, undirected=True), "undirected", t_end=1.0)
    bad = dataclasses.replace(sc, x0=np.array([[np.inf], [0.0]]))
    with pytest.raises(DivergenceError) as exc:
        run(bad)
    assert exc.value.last_valid_time == 0.0


def test_zeno_guard_aborts_run():
    sc = make_scenario(SINGLE, build_graph([(1, 2)], 2, undirected=True), "undirected", t_end=5.0)
    sc = dataclasses.replace(sc, sim=dataclasses.replace(sc.sim, zeno_event_budget=3))
    with pytest.raises(ZenoError) as exc:
        run(sc)
    assert exc.value.stats.tripped


def _gap(tr):
    return abs(tr.x[-1, 0, 0] - tr.x[-1, 1, 0]), abs(tr.x[0, 0, 0] - tr.x[0, 1, 0])


@pytest.fixture(scope="module")
def pair_runs():
    g = build_graph([(1, 2)], 2, undirected=True)
    coarse = run(make_scenario(SINGLE, g, "undirected", t_end=20.0))
    ref = run(make_scenario(SINGLE, g, "undirected", t_end=20.0, h=1e-5))
    return coarse, ref


@pytest.mark.slow
def test_two_single_integrators_match_fine_reference(pair_runs):
    coarse, ref = pair_runs
    gap, gap0 = _gap(coarse)
    assert abs(gap - _gap(ref)[0]) <= 1e-3
    assert gap < 1e-2 * gap0


@pytest.mark.slow
@pytest.mark.xfail(strict=True, reason="held inputs overshoot once the gap is below 2 sqrt(eps); "
                   "the gap then shrinks only like exp(-k t / 2)")
def test_two_single_integrators_thousandfold_decay(pair_runs):
    gap, gap0 = _gap(pair_runs[0])
    assert gap < 1e-3 * gap0
