import numpy as np
import pytest

from etconsensus.graph import build_graph, chain, ring, star
from etconsensus.protocols import (
    Protocol,
    ProtocolError,
    ProtocolParams,
    continuous_derivatives,
    control_input,
    eps_envelope,
    eps_rate,
    gain_bound,
    gain_rate,
    leader_follower_roles,
    trigger_margin,
    virtual_gain_rate,
)
from etconsensus.synthesis import GainSet, SystemModel, synthesize_gains

from conftest import EXAMPLE_A, EXAMPLE_B, STANDIN_EDGES


def scalar_gains(K=-1.0, Q=1.0):
    Qm = np.array([[Q]])
    Km = np.array([[K]])
    return GainSet(Q=Qm, P=1 / Qm, K=Km, Gamma=Km.T @ Km)


def test_zero_sampled_error_gives_zero_input():
    g = synthesize_gains(SystemModel(EXAMPLE_A, EXAMPLE_B))
    for variant in ("undirected", "directed", "comparison"):
        u = control_input(variant, np.zeros(3), 2.0, g)
        np.testing.assert_array_equal(u, [0.0])


def test_undirected_scalar_input():
    assert control_input("undirected", [2.0], 1.0, scalar_gains())[0] == -2.0


def test_directed_scalar_input():
    # rho = 2 * 1 * 2 = 4, u = (1 + 4) * 1 * (-1) * 2
    assert control_input("directed", [2.0], 1.0, scalar_gains(), mu=1.0)[0] == -10.0


def test_eps_decays_without_error():
    p = ProtocolParams.create(1)
    d = continuous_derivatives("undirected", SystemModel([[0.0]], [[1.0]]), scalar_gains(), p,
                               np.array([[1.0]]), np.array([[1.0]]), np.zeros((1, 1)), np.zeros((1, 1)), p.eps0)
    np.testing.assert_allclose(d["deps"], -p.k * p.eps0)
    np.testing.assert_array_equal(d["dgain"], [0.0])


def test_gain_rate_quadratic_form():
    assert gain_rate([3.0], np.array([[1.0]])) == 9.0


def test_eps_rate_weighting():
    W = np.diag([4.0, 1.0])
    assert eps_rate(1.0, [1.0, 1.0], 0.25, 0.5, W) == pytest.approx(-0.25 - 0.5 * 5)
    assert eps_rate(1.0, [1.0, 1.0], 0.25, 0.5) == pytest.approx(-0.25 - 0.5 * 2)


def test_margins_negative_after_reset():
    s, g = trigger_margin(np.zeros(2), 0.0, 0.3, 0.0, 1.0, 1.0, 1.0)
    assert s < 0 and g < 0


def test_state_margin_fire():
    s, _ = trigger_margin([1.0], 0.0, 0.5, 0.0, 1.0, 1.0, 1.0, np.array([[1.0]]))
    assert s == 0.5


def test_gain_margin_inclusive_boundary():
    t = 0.7
    _, g = trigger_margin([0.0], np.exp(-2.0 * t), 1.0, t, 1.0, 1.0, 2.0)
    assert g == 0.0


def test_leader_roles():
    assert leader_follower_roles(star(5)).informed_followers == frozenset({2, 3, 4, 5})
    assert leader_follower_roles(chain(3)).informed_followers == frozenset({2})


def test_virtual_gain_matches_gain_without_sampling_error():
    G = np.array([[2.0, 0.5], [0.5, 1.0]])
    xi = np.array([[0.3, -1.0], [1.0, 2.0]])
    np.testing.assert_array_equal(virtual_gain_rate(xi, G), gain_rate(xi, G))


def test_gain_bound_at_zero_is_positive_slack():
    g = ring(3, undirected=True)
    p = ProtocolParams.create(3)
    b = gain_bound(p.d0, p.d0, p.d0, g, p)
    # 2*1 - 1 + 1 + 4 * 2^2 * 3 * 0.4 / 0.25
    np.testing.assert_allclose(b, 2 + 16 * 3 * 1.6)


def test_eps_envelope_bounds():
    p = ProtocolParams.create(2, k=[0.25, 0.5], sigma=0.25, gamma=2.0, eps0=0.4)
    lo, hi = eps_envelope([0.0, 2.0], p)
    np.testing.assert_allclose(lo[0], hi[0])
    np.testing.assert_allclose(hi[1], 0.4 * np.exp(-2 * np.array([0.25, 0.5])))
    np.testing.assert_allclose(lo[1], 0.4 * np.exp(-2 * (np.array([0.25, 0.5]) + 0.5)))


def test_params_problems():
    p = ProtocolParams.create(2, mu=2.5)
    assert any("mu" in e for e in p.problems("directed"))
    assert not p.problems("undirected")
    assert ProtocolParams.create(2, c0=1.0, phi1=1.0).problems("comparison")
    assert ProtocolParams.create(2, d0=0.5).problems("undirected")


def _proto(variant, graph, model=None):
    model = model or SystemModel(EXAMPLE_A, EXAMPLE_B)
    mode = "output-feedback" if variant.startswith("output") else "state-feedback-lmi"
    return Protocol(variant, graph, model, synthesize_gains(model, mode), ProtocolParams.create(graph.n_nodes))


def test_protocol_rejects_wrong_graph_class():
    with pytest.raises(ProtocolError):
        _proto("undirected", ring(3))
    with pytest.raises(ProtocolError):
        _proto("directed", chain(3))


def test_event_resets_own_errors_and_updates_neighbors():
    proto = _proto("directed", build_graph(STANDIN_EDGES, 6))
    rng = np.random.default_rng(3)
    y, st = proto.initial(rng.uniform(-1, 1, (6, 3)))
    y = y + 0.01 * proto.derivatives(0.0, y, st)  # move away from the snapshots
    xi_before = st.xi_hat.copy()
    msg = proto.fire(0.01, y, st, 1)
    assert proto.reset_error(y, st, 1) == 0.0
    ms, mg = proto.margins(0.01, y, st)
    assert ms[1] == pytest.approx(-proto.params.gamma[1] * proto.eps(y)[1])
    assert mg[1] < 0
    assert set(msg.recipients) == {2, 4}  # 2 -> 3 and 2 -> 5, 0-based
    changed = np.flatnonzero(np.any(st.xi_hat != xi_before, axis=1))
    assert set(changed) <= {1, 2, 4}


def test_two_agent_chain_snapshot_delta():
    proto = _proto("leader_follower", chain(2))
    y, st = proto.initial(np.array([[1.0, 0.0, 0.0], [0.0, 0.0, 0.0]]))
    before = st.xi_hat[1].copy()
    y2 = y.copy()
    y2[proto._sx] += np.array([0.5, -0.25, 0.125, 0, 0, 0])
    proto.fire(0.1, y2, st, 0)
    np.testing.assert_allclose(st.xi_hat[1] - before, -np.array([0.5, -0.25, 0.125]))
    np.testing.assert_array_equal(st.u[0], [0.0])


def test_single_agent_broadcast_has_no_recipients():
    model = SystemModel([[0.0]], [[1.0]])
    proto = Protocol("undirected", build_graph([], 1, undirected=True), model,
                     synthesize_gains(model), ProtocolParams.create(1))
    y, st = proto.initial(np.array([[0.7]]))
    msg = proto.fire(0.2, y, st, 0)
    assert msg.recipients == ()
    np.testing.assert_array_equal(st.xi_hat, [[0.0]])


def test_leader_has_no_gain_dynamics():
    proto = _proto("leader_follower", star(4))
    y, st = proto.initial(np.random.default_rng(0).uniform(-1, 1, (4, 3)))
    dy = proto.derivatives(0.0, y, st)
    assert dy[proto._sg][0] == 0.0
    _, mg = proto.margins(0.0, y, st)
    assert mg[0] == -np.inf


def test_initial_virtual_gain_check():
    proto = _proto("undirected", ring(4, undirected=True))
    y, _ = proto.initial(np.zeros((4, 3)))
    np.testing.assert_array_equal(proto.gain(y) - proto.d_bar(y), 0.0)
