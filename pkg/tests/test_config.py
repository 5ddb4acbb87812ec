import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from etconsensus import bundled_scenario
from etconsensus.config import (
    ConfigError,
    build_scenario,
    format_scenario,
    load_scenario,
    parse_scenario,
    synthesis_mode,
    write_scenario,
)

from conftest import EXAMPLE_A, EXAMPLE_B, STANDIN_EDGES

BASE = """
[model]
A = [[0, 1], [0, 0]]
B = [[0], [1]]

[graph]
n = 3
edges = [[1, 2], [2, 3], [3, 1]]

[protocol]
variant = directed
"""


def test_bundled_scenario_matches_model():
    cfg = load_scenario(bundled_scenario())
    np.testing.assert_array_equal(np.array(cfg.model.A), EXAMPLE_A)
    np.testing.assert_array_equal(np.array(cfg.model.B), EXAMPLE_B)
    assert [tuple(e) for e in cfg.graph.edges] == STANDIN_EDGES
    p = cfg.protocol
    assert (p.mu, p.gamma, p.theta1, p.theta2, p.k, p.sigma, p.eps0) == (1, 1, 1, 1, 0.25, 0.25, 0.4)
    assert cfg.sim.t_end == 20 and cfg.sim.h == 1e-3


def test_defaults_filled():
    cfg = parse_scenario(BASE)
    assert cfg.protocol.k == 0.25 and cfg.sim.h == 1e-3 and cfg.model.synthesis == "auto"


def test_mu_out_of_range_rejected():
    with pytest.raises(ConfigError, match="mu"):
        parse_scenario(BASE + "mu = 2.5\n")


def test_leader_follower_without_root_tree_rejected():
    text = BASE.replace("variant = directed", "variant = leader_follower").replace(
        "[[1, 2], [2, 3], [3, 1]]", "[[2, 1], [2, 3]]"
    )
    with pytest.raises(ConfigError, match="spanning"):
        parse_scenario(text)


def test_all_errors_reported_together():
    text = BASE.replace("B = [[0], [1]]", "B = [[0], [1], [2]]") + "mu = 3\n\n[sim]\nh = 5\nt_end = 1\n"
    with pytest.raises(ConfigError) as exc:
        parse_scenario(text)
    msgs = " ".join(exc.value.errors)
    assert "B must have" in msgs and "mu" in msgs and "exceeds t_end" in msgs


def test_unknown_keys_and_sections():
    with pytest.raises(ConfigError) as exc:
        parse_scenario(BASE + "colour = 3\n\n[extra]\nx = 1\n")
    assert len(exc.value.errors) == 2


def test_variant_graph_mismatch():
    with pytest.raises(ConfigError, match="needs"):
        parse_scenario(BASE.replace("variant = directed", "variant = undirected"))


def test_parse_error_reported():
    with pytest.raises(ConfigError, match="parse"):
        parse_scenario("A = 1\n")


def test_initial_state_size_checked():
    with pytest.raises(ConfigError, match="x0"):
        parse_scenario(BASE + "\n[sim]\nx0 = [1, 2]\n")


def test_missing_file():
    with pytest.raises(ConfigError, match="cannot read"):
        load_scenario("/nonexistent/scenario.cfg")


def test_synthesis_routing():
    cfg = parse_scenario(BASE)
    assert synthesis_mode(cfg) == "state-feedback-lmi"
    assert synthesis_mode(cfg.replace(protocol={"variant": "comparison"})) == "state-feedback-care"
    sc = build_scenario(cfg)
    assert sc.gains.mode == "state-feedback-lmi"
    assert sc.params.n_agents == 3


def test_given_P_is_used():
    P = np.linalg.inv(np.array([[np.sqrt(3), 1.0], [1.0, np.sqrt(3)]]))
    cfg = parse_scenario(BASE).replace(model={"P": P.tolist()})
    sc = build_scenario(cfg)
    np.testing.assert_allclose(sc.gains.K, [[-1.0, -np.sqrt(3)]], atol=1e-12)


def test_round_trip_bundled(tmp_path):
    cfg = load_scenario(bundled_scenario())
    write_scenario(cfg, tmp_path / "s.cfg")
    assert load_scenario(tmp_path / "s.cfg") == cfg


@given(
    mu=st.floats(0.01, 1.99),
    k=st.lists(st.floats(0.01, 5.0), min_size=3, max_size=3),
    eps0=st.floats(0.01, 3.0),
    seed=st.integers(0, 2**31 - 1),
    h=st.floats(1e-4, 1e-2),
    plots=st.lists(st.sampled_from(["disagreement", "gains", "inputs", "events"]), unique=True),
)
@settings(max_examples=60, deadline=None)
def test_round_trip_property(mu, k, eps0, seed, h, plots):
    cfg = parse_scenario(BASE).replace(
        protocol={"mu": mu, "k": k, "eps0": eps0}, sim={"seed": seed, "h": h}, output={"plots": plots}
    )
    assert parse_scenario(format_scenario(cfg)) == cfg
