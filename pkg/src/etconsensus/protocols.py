"""Control laws, adaptive gains, internal trigger variables and event actions.

Everything here is evaluation only; time integration lives in
:mod:`etconsensus.hybrid_sim`.  Functions take stacked per-agent arrays (leading
axis = agent) but also work on a single agent's vectors.

Variants
--------
``undirected``         node-based adaptive gain, Gamma-weighted dynamic trigger
``directed``           adds the rho = xi_hat' Q xi_hat term and the mu factor,
                       unweighted trigger
``leader_follower``    directed law for followers; agent 1 only rebroadcasts
``output_undirected``  observer-based version of ``undirected``
``output_directed``    observer-based version of ``directed``
``comparison``         relative-state-measurement protocol with f1/f2 triggers
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .graph import (
    LEADER_SPANNING_TREE,
    STRONGLY_CONNECTED,
    UNDIRECTED_CONNECTED,
    DirectedGraph,
    GraphError,
    classify,
    leader_partition,
)
from .synthesis import GainSet, SystemModel

VARIANTS = (
    "undirected",
    "directed",
    "leader_follower",
    "output_undirected",
    "output_directed",
    "comparison",
)
DIRECTED = frozenset({"directed", "leader_follower", "output_directed"})
OBSERVER = frozenset({"output_undirected", "output_directed"})
GAMMA_WEIGHTED = frozenset({"undirected", "output_undirected"})

CONDITIONS = ("state", "gain", "f1", "f2")


class ProtocolError(ValueError):
    """Parameters or graph class incompatible with the chosen variant."""


def required_graph_classes(variant: str) -> tuple[str, ...]:
    if variant in ("undirected", "output_undirected"):
        return (UNDIRECTED_CONNECTED,)
    if variant == "leader_follower":
        return (LEADER_SPANNING_TREE,)
    # a connected undirected graph is also strongly connected as a digraph
    return (STRONGLY_CONNECTED, UNDIRECTED_CONNECTED)


def _per_agent(value, n_agents: int, name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        return np.full(n_agents, float(arr))
    if arr.shape != (n_agents,):
        raise ProtocolError(f"{name} needs {n_agents} entries, got {arr.shape}")
    return arr.copy()


@dataclass(frozen=True, eq=False)
class ProtocolParams:
    """Protocol constants.  Scalars given to :meth:`create` are broadcast per agent."""

    gamma: np.ndarray
    k: np.ndarray
    sigma: np.ndarray
    d0: np.ndarray
    eps0: np.ndarray
    theta1: float = 1.0
    theta2: float = 1.0
    mu: float = 1.0
    # relative-state comparison protocol
    kappa: np.ndarray = field(default=None)
    c0: np.ndarray = field(default=None)
    phi1: float = 1.0
    phi2: float = 1.0
    mu1: tuple[float, float] = (1.0, 0.25)  # amplitude, decay rate of mu_1i(t)
    mu2: tuple[float, float] = (1.0, 0.25)

    @classmethod
    def create(
        cls,
        n_agents: int,
        gamma=1.0,
        k=0.25,
        sigma=0.25,
        d0=1.0,
        eps0=0.4,
        theta1=1.0,
        theta2=1.0,
        mu=1.0,
        kappa=2.0,
        c0=2.0,
        phi1=1.0,
        phi2=1.0,
        mu1=(1.0, 0.25),
        mu2=(1.0, 0.25),
    ) -> "ProtocolParams":
        return cls(
            gamma=_per_agent(gamma, n_agents, "gamma"),
            k=_per_agent(k, n_agents, "k"),
            sigma=_per_agent(sigma, n_agents, "sigma"),
            d0=_per_agent(d0, n_agents, "d0"),
            eps0=_per_agent(eps0, n_agents, "eps0"),
            theta1=float(theta1),
            theta2=float(theta2),
            mu=float(mu),
            kappa=_per_agent(kappa, n_agents, "kappa"),
            c0=_per_agent(c0, n_agents, "c0"),
            phi1=float(phi1),
            phi2=float(phi2),
            mu1=(float(mu1[0]), float(mu1[1])),
            mu2=(float(mu2[0]), float(mu2[1])),
        )

    @property
    def n_agents(self) -> int:
        return len(self.gamma)

    def problems(self, variant: str) -> list[str]:
        """All range violations for ``variant`` (empty if admissible)."""
        errs = []
        if variant not in VARIANTS:
            return [f"unknown variant {variant!r}"]
        if variant == "comparison":
            if np.any(self.kappa <= 0):
                errs.append("kappa must be positive")
            if self.phi1 <= 0 or self.phi2 <= 0:
                errs.append("phi1 and phi2 must be positive")
            if np.any(self.c0 <= np.sqrt(2 * self.phi1)):
                errs.append(f"c0 must exceed sqrt(2*phi1) = {np.sqrt(2 * self.phi1):.6g}")
            for name, (amp, rate) in (("mu1", self.mu1), ("mu2", self.mu2)):
                if amp <= 0 or rate <= 0:
                    errs.append(f"{name} amplitude and rate must be positive (integrable threshold)")
            return errs
        for name in ("gamma", "k", "sigma", "eps0"):
            if np.any(getattr(self, name) <= 0):
                errs.append(f"{name} must be positive")
        if np.any(self.d0 < 1):
            errs.append("d0 must be >= 1")
        if self.theta1 <= 0 or self.theta2 <= 0:
            errs.append("theta1 and theta2 must be positive")
        if variant in DIRECTED and not (0 < self.mu < 2):
            errs.append(f"mu must lie in (0, 2), got {self.mu}")
        return errs


# -- pure evaluation functions ---------------------------------------------


def quad(v, W: Optional[np.ndarray] = None):
    """Row-wise quadratic form ``v' W v`` (identity weight when ``W`` is None)."""
    v = np.asarray(v, dtype=float)
    if W is None:
        return np.einsum("...i,...i->...", v, v)
    return np.einsum("...i,...i->...", v @ W, v)


def trigger_weight(variant: str, gains: GainSet) -> Optional[np.ndarray]:
    """Gamma for the undirected families, identity (None) for the directed ones."""
    return gains.Gamma if variant in GAMMA_WEIGHTED else None


def sampled_error(graph: DirectedGraph, snapshots: np.ndarray) -> np.ndarray:
    """``xi_hat_i = sum_j a_ij (s_i - s_j)`` over broadcast snapshots ``s``."""
    return graph.laplacian @ snapshots


def control_input(variant: str, xi_hat, gain_hat, gains: GainSet, mu: float = 1.0, rho=None):
    """Control from sampled quantities only, hence piecewise constant.

    ``rho`` defaults to ``xi_hat' Q xi_hat`` for the directed variants; for the
    comparison protocol it is the sampled ``rho_i(t_k)``, which is the same
    quantity evaluated on the sampled ``xi``.
    """
    xi_hat = np.asarray(xi_hat, dtype=float)
    gain_hat = np.asarray(gain_hat, dtype=float)
    if variant in DIRECTED:
        if rho is None:
            rho = quad(xi_hat, gains.Q)
        coeff = (gain_hat + rho) * mu
    elif variant == "comparison":
        if rho is None:
            rho = quad(xi_hat, gains.Q)
        coeff = gain_hat + rho
    else:
        coeff = gain_hat
    return np.asarray(coeff)[..., None] * (xi_hat @ gains.K.T)


def gain_rate(xi_hat, Gamma, kappa=1.0):
    """Adaptive gain derivative ``kappa * xi_hat' Gamma xi_hat`` (never negative)."""
    return kappa * quad(xi_hat, Gamma)


def eps_rate(eps, err, k, sigma, W=None):
    """Internal variable dynamics ``-k eps - sigma err' W err``."""
    return -k * eps - sigma * quad(err, W)


def state_dot(model: SystemModel, x, u):
    return np.asarray(x) @ model.A.T + np.asarray(u) @ model.B.T


def observer_dot(model: SystemModel, gains: GainSet, v, x, u):
    """``A v + B u + F (C v - y)`` with ``y = C x``."""
    v = np.asarray(v)
    return v @ model.A.T + np.asarray(u) @ model.B.T + (v - np.asarray(x)) @ (gains.F @ model.C).T


def continuous_derivatives(variant, model, gains, params, x, snapshot, xi_hat, u, eps, v=None, kappa=None):
    """Right-hand sides for one agent or a stack; returns a dict.

    Keys: ``dx``, ``dgain`` (d, e or c), ``deps`` and ``dv`` for observer variants.
    """
    out = {"dx": state_dot(model, x, u)}
    kap = 1.0 if variant != "comparison" else (params.kappa if kappa is None else kappa)
    out["dgain"] = gain_rate(xi_hat, gains.Gamma, kap)
    if variant == "comparison":
        out["deps"] = np.zeros_like(np.asarray(eps, dtype=float))
        return out
    src = v if variant in OBSERVER else x
    err = np.asarray(snapshot) - np.asarray(src)
    out["deps"] = eps_rate(eps, err, params.k, params.sigma, trigger_weight(variant, gains))
    if variant in OBSERVER:
        out["dv"] = observer_dot(model, gains, v, x, u)
    return out


def trigger_margin(err, gain_err, eps, since_event, gamma, theta1, theta2, W=None):
    """``(state_margin, gain_margin)``; an event is due once either is >= 0."""
    state = quad(err, W) - gamma * eps
    gain = np.abs(gain_err) - theta1 * np.exp(-theta2 * np.asarray(since_event))
    return state, gain


def threshold(t, amp_rate):
    amp, rate = amp_rate
    return amp * np.exp(-rate * t)


def comparison_margins(t, xi, xi_hat, c, c_hat, rho_hat, gains: GainSet, params: ProtocolParams):
    """``(f1, f2)`` of the relative-state protocol."""
    rho = quad(xi, gains.Q)
    base = quad(xi, gains.Gamma)
    f1 = (c + rho) ** 2 * quad(np.asarray(xi_hat) - xi, gains.Gamma) - params.phi1 * base - threshold(t, params.mu1)
    f2 = ((c_hat - c) + (rho_hat - rho)) ** 2 * quad(xi_hat, gains.Gamma) - params.phi2 * base - threshold(t, params.mu2)
    return f1, f2


@dataclass(frozen=True)
class LeaderRoles:
    leader: int  # 1-based
    informed_followers: frozenset


def leader_follower_roles(graph: DirectedGraph) -> LeaderRoles:
    cls = classify(graph)
    if cls.kind != LEADER_SPANNING_TREE or cls.root != 1:
        raise GraphError(f"leader-follower needs a spanning tree rooted at agent 1, got {cls}")
    leader_partition(graph, 1)
    return LeaderRoles(1, frozenset(int(j) + 1 for j in graph.out_neighbors(0)))


def virtual_gain_rate(true_xi, Gamma):
    """Integrand of the virtual gain ``d_bar``: uses the true, not sampled, error."""
    return quad(true_xi, Gamma)


def gain_bound(d_bar, d_bar0, d0, graph: DirectedGraph, params: ProtocolParams):
    """Upper bound on the adaptive gain along an undirected-variant run.

    ``2 d_bar - d_bar(0) + d(0) + 4 l_ii^2 sum_j gamma_j eps_j(0) / k_j``
    """
    lii = np.diag(graph.laplacian)
    budget = float(np.sum(params.gamma * params.eps0 / params.k))
    return 2 * np.asarray(d_bar) - d_bar0 + d0 + 4 * lii**2 * budget


def eps_envelope(t, params: ProtocolParams):
    """Lower and upper bounds on eps_i(t) implied by the trigger rule."""
    t = np.asarray(t, dtype=float)[..., None]
    lower = np.exp(-(params.k + params.sigma * params.gamma) * t) * params.eps0
    upper = np.exp(-params.k * t) * params.eps0
    return lower, upper


# -- stacked protocol used by the simulator ---------------------------------


@dataclass
class AgentStates:
    """Sampled (piecewise constant) part of every agent's state.

    ``snapshot`` is the last broadcast x_hat (v_hat for observer variants, the
    state at the last sampling instant for the comparison protocol).
    ``gain_hat`` is d_hat / e_hat / c_hat.  ``xi_hat`` is the cached sampled
    consensus error and ``rho`` its Q-quadratic form.
    """

    snapshot: np.ndarray
    gain_hat: np.ndarray
    last_event: np.ndarray
    xi_hat: np.ndarray
    rho: np.ndarray
    u: np.ndarray
    event_count: np.ndarray

    def copy(self) -> "AgentStates":
        return AgentStates(*(np.array(getattr(self, f)) for f in self.__dataclass_fields__))


@dataclass(frozen=True)
class BroadcastMessage:
    sender: int  # 0-based
    time: float
    recipients: tuple
    snapshot: np.ndarray
    gain: float


class Protocol:
    """Vectorized variant logic over all agents.

    The continuous state is a flat vector ``y`` laid out as
    ``[x (N*n), gain (N), eps (N), d_bar (N), v (N*n, observer only)]``.
    ``d_bar`` is the virtual gain driven by the true consensus error; it is a
    diagnostic and never feeds back into the control.
    """

    def __init__(self, variant: str, graph: DirectedGraph, model: SystemModel, gains: GainSet, params: ProtocolParams):
        if variant not in VARIANTS:
            raise ProtocolError(f"unknown variant {variant!r}")
        problems = params.problems(variant)
        if problems:
            raise ProtocolError("; ".join(problems))
        if params.n_agents != graph.n_nodes:
            raise ProtocolError("parameter arrays do not match the number of agents")
        cls = classify(graph)
        if cls.kind not in required_graph_classes(variant) or (
            variant == "leader_follower" and cls.root != 1
        ):
            raise ProtocolError(f"variant {variant} cannot run on a {cls} graph")
        if variant == "leader_follower":
            leader_partition(graph, 1)
        if variant in OBSERVER and gains.F is None:
            raise ProtocolError("observer variants need an observer gain F")
        self.variant = variant
        self.graph = graph
        self.model = model
        self.gains = gains
        self.params = params
        self.observer = variant in OBSERVER
        self.leader = 0 if variant == "leader_follower" else None
        self.W = trigger_weight(variant, gains)
        self.kappa = params.kappa if variant == "comparison" else np.ones(graph.n_nodes)
        N, n = graph.n_nodes, model.n
        self.N, self.n, self.p = N, n, model.p
        self._sx = slice(0, N * n)
        self._sg = slice(N * n, N * n + N)
        self._se = slice(N * n + N, N * n + 2 * N)
        self._sb = slice(N * n + 2 * N, N * n + 3 * N)
        self._sv = slice(N * n + 3 * N, 2 * N * n + 3 * N) if self.observer else None
        self.size = N * n + 3 * N + (N * n if self.observer else 0)
        self._out = [graph.out_neighbors(i) for i in range(N)]
        self._GammaT = gains.Gamma
        self._L = graph.laplacian
        self._BT = model.B.T
        self._AT = model.A.T
        self._FCT = (gains.F @ model.C).T if self.observer else None

    # views into y
    def x(self, y):
        return y[self._sx].reshape(self.N, self.n)

    def gain(self, y):
        return y[self._sg]

    def eps(self, y):
        return y[self._se]

    def d_bar(self, y):
        return y[self._sb]

    def v(self, y):
        return y[self._sv].reshape(self.N, self.n) if self.observer else None

    def broadcast_source(self, y):
        """The vector each agent broadcasts: observer state or true state."""
        return self.v(y) if self.observer else self.x(y)

    def true_error(self, y):
        """Consensus error of the broadcast source (xi, or eta for observers)."""
        return self.graph.laplacian @ self.broadcast_source(y)

    def initial(self, x0, v0=None) -> tuple[np.ndarray, AgentStates]:
        x0 = np.asarray(x0, dtype=float).reshape(self.N, self.n)
        y = np.zeros(self.size)
        y[self._sx] = x0.ravel()
        g0 = self.params.c0 if self.variant == "comparison" else self.params.d0
        y[self._sg] = g0
        y[self._se] = self.params.eps0 if self.variant != "comparison" else np.nan
        y[self._sb] = g0
        if self.observer:
            v0 = np.zeros_like(x0) if v0 is None else np.asarray(v0, dtype=float).reshape(self.N, self.n)
            y[self._sv] = v0.ravel()
        src = self.broadcast_source(y)
        st = AgentStates(
            snapshot=src.copy(),
            gain_hat=np.array(g0, dtype=float),
            last_event=np.zeros(self.N),
            xi_hat=np.zeros((self.N, self.n)),
            rho=np.zeros(self.N),
            u=np.zeros((self.N, self.p)),
            event_count=np.zeros(self.N, dtype=int),
        )
        if self.variant == "comparison":
            st.xi_hat[:] = self.graph.laplacian @ src
            self._refresh_controls(st, np.arange(self.N))
        else:
            self._refresh(st, np.arange(self.N))
        return y, st

    def _refresh(self, st: AgentStates, agents) -> None:
        agents = np.asarray(agents, dtype=int)
        st.xi_hat[agents] = self.graph.laplacian[agents] @ st.snapshot
        self._refresh_controls(st, agents)

    def _refresh_controls(self, st: AgentStates, agents) -> None:
        xi = st.xi_hat[agents]
        st.rho[agents] = quad(xi, self.gains.Q)
        st.u[agents] = control_input(self.variant, xi, st.gain_hat[agents], self.gains, self.params.mu, st.rho[agents])
        if self.leader is not None:
            st.u[self.leader] = 0.0

    def derivatives(self, t: float, y: np.ndarray, st: AgentStates) -> np.ndarray:
        X = y[self._sx].reshape(self.N, self.n)
        dy = np.empty_like(y)
        dy[self._sx] = (X @ self._AT + st.u @ self._BT).ravel()
        G = self._GammaT
        dg = self.kappa * ((st.xi_hat @ G) * st.xi_hat).sum(axis=1)
        if self.leader is not None:
            dg[self.leader] = 0.0
        dy[self._sg] = dg
        src = X
        if self.observer:
            V = y[self._sv].reshape(self.N, self.n)
            dy[self._sv] = (V @ self._AT + st.u @ self._BT + (V - X) @ self._FCT).ravel()
            src = V
        if self.variant == "comparison":
            dy[self._se] = 0.0
        else:
            err = st.snapshot - src
            werr = err if self.W is None else err @ self.W
            dy[self._se] = -self.params.k * y[self._se] - self.params.sigma * (werr * err).sum(axis=1)
        xi = self._L @ src
        dy[self._sb] = ((xi @ G) * xi).sum(axis=1)
        return dy

    def margins(self, t: float, y: np.ndarray, st: AgentStates) -> tuple[np.ndarray, np.ndarray]:
        """Per-agent ``(first, second)`` margins: state/gain, or f1/f2 for the comparison protocol."""
        if self.variant == "comparison":
            xi = self.graph.laplacian @ self.x(y)
            return comparison_margins(t, xi, st.xi_hat, self.gain(y), st.gain_hat, st.rho, self.gains, self.params)
        err = st.snapshot - self.broadcast_source(y)
        p = self.params
        ms, mg = trigger_margin(err, st.gain_hat - self.gain(y), self.eps(y), t - st.last_event, p.gamma, p.theta1, p.theta2, self.W)
        if self.leader is not None:
            mg[self.leader] = -np.inf
        return ms, mg

    def condition_names(self) -> tuple[str, str]:
        return ("f1", "f2") if self.variant == "comparison" else ("state", "gain")

    def fire(self, t: float, y: np.ndarray, st: AgentStates, i: int) -> BroadcastMessage:
        """Event of agent ``i`` at ``t``: resample and deliver to out-neighbors."""
        st.last_event[i] = t
        st.event_count[i] += 1
        st.gain_hat[i] = self.gain(y)[i]
        if self.variant == "comparison":
            # samples relative state from its neighbors; nothing is sent
            st.snapshot[i] = self.x(y)[i]
            st.xi_hat[i] = self.graph.laplacian[i] @ self.x(y)
            self._refresh_controls(st, [i])
            return BroadcastMessage(i, t, (), st.snapshot[i].copy(), float(st.gain_hat[i]))
        st.snapshot[i] = self.broadcast_source(y)[i]
        recipients = self._out[i]
        self._refresh(st, np.concatenate(([i], recipients)))
        return BroadcastMessage(i, t, tuple(int(j) for j in recipients), st.snapshot[i].copy(), float(st.gain_hat[i]))

    def reset_error(self, y: np.ndarray, st: AgentStates, i: int) -> float:
        """``|x_tilde_i| + |d_tilde_i|`` right after an event; zero by construction."""
        if self.variant == "comparison":
            return float(np.abs(st.snapshot[i] - self.x(y)[i]).sum() + abs(st.gain_hat[i] - self.gain(y)[i]))
        return float(np.abs(st.snapshot[i] - self.broadcast_source(y)[i]).sum() + abs(st.gain_hat[i] - self.gain(y)[i]))
