"""Post-run analysis: consensus error, event statistics and invariant checks."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg as la

from .graph import DirectedGraph
from .hybrid_sim import Scenario, Trajectory, zeno_monitor
from .protocols import GAMMA_WEIGHTED, OBSERVER, eps_envelope, gain_bound

CONSENSUS_DECAY = 1e-2
EPS_REL_SLACK = 1e-6
OBSERVER_RATE_MARGIN = 0.05


@dataclass(frozen=True)
class Violation:
    invariant: str
    time: float
    magnitude: float
    agent: Optional[int] = None  # 1-based

    def __str__(self):
        who = f" agent {self.agent}" if self.agent is not None else ""
        return f"{self.invariant}{who} at t={self.time:.12g} (magnitude {self.magnitude:.3g})"


def consensus_error(states, graph: DirectedGraph):
    """``xi = (L kron I) x`` for states stacked per agent, and its Euclidean norm.

    ``states`` may carry leading sample axes: shape ``(..., N, n)``.
    """
    states = np.asarray(states, dtype=float)
    xi = np.einsum("ij,...jk->...ik", graph.laplacian, states)
    return xi, np.sqrt(np.sum(xi**2, axis=(-2, -1)))


def decay_factor(traj: Trajectory) -> float:
    e0 = traj.consensus_error_norm[0]
    return float(traj.consensus_error_norm[-1] / e0) if e0 > 0 else 0.0


def gain_change(traj: Trajectory, window: float = 1.0) -> np.ndarray:
    """Per-agent change of the adaptive gain over the final ``window`` seconds."""
    t_end = traj.times[-1]
    i = int(np.searchsorted(traj.times, t_end - window - 1e-12))
    return traj.gain[-1] - traj.gain[i]


def observer_envelope(A_cl: np.ndarray, t_max: float, margin: float = OBSERVER_RATE_MARGIN, n_grid: int = 2001):
    """``(rate, c)`` such that ``||exp(A_cl t)|| <= c exp(rate t)`` on ``[0, t_max]``.

    ``rate`` is the spectral abscissa plus ``margin``; ``c`` is the worst
    transient ratio on a grid (1 for normal matrices).
    """
    rate = float(np.max(np.linalg.eigvals(A_cl).real)) + margin
    ts = np.linspace(0.0, t_max, n_grid)
    c = max(np.linalg.norm(la.expm(A_cl * t), 2) * np.exp(-rate * t) for t in ts)
    return rate, float(max(c, 1.0))


def controller_update_counts(traj: Trajectory, graph: DirectedGraph) -> np.ndarray:
    """How often each agent's control was recomputed.

    Own events always count; events of in-neighbors count too except for the
    comparison protocol, where agents only resample on their own events.
    """
    N = graph.n_nodes
    times: list[set] = [set() for _ in range(N)]
    for ev in traj.events:
        times[ev.agent].add(ev.time)
        if traj.variant != "comparison":
            for j in graph.out_neighbors(ev.agent):
                times[j].add(ev.time)
    return np.array([len(s) for s in times])


def verify_invariants(traj: Trajectory, scenario: Scenario) -> list[Violation]:
    """Evaluate every runtime invariant at every sample; returns all violations."""
    out: list[Violation] = []
    params, graph = scenario.params, scenario.graph
    t = traj.times
    slack = traj.localization_slack
    N = traj.n_agents

    def flag(name, mask, mag):
        for s, i in zip(*np.nonzero(mask)):
            out.append(Violation(name, float(t[s]), float(mag[s, i]), int(i) + 1))

    # event log ordering and reset
    times = np.array([e.time for e in traj.events])
    if times.size and np.any(np.diff(times) < 0):
        k = int(np.argmax(np.diff(times) < 0))
        out.append(Violation("event_order", float(times[k + 1]), float(times[k] - times[k + 1])))
    for i in range(N):
        ti = traj.event_times(i)
        bad = np.flatnonzero(np.diff(ti) <= 0)
        for k in bad:
            out.append(Violation("event_order", float(ti[k + 1]), float(ti[k] - ti[k + 1]), i + 1))
    for ev in traj.events:
        if ev.reset_error != 0.0:
            out.append(Violation("reset", ev.time, ev.reset_error, ev.agent + 1))

    # adaptive gains never decrease
    for name, series in (("gain_monotone", traj.gain), ("virtual_gain_monotone", traj.d_bar)):
        drop = -np.diff(series, axis=0)
        tol = 1e-12 * (1.0 + np.abs(series[1:]))
        mask = np.zeros_like(series, dtype=bool)
        mask[1:] = drop > tol
        mag = np.zeros_like(series)
        mag[1:] = drop
        flag(name, mask, mag)

    # threshold respect between events
    for name, series in (("threshold_first", traj.state_margin), ("threshold_second", traj.gain_margin)):
        flag(name, series > slack, series)

    if traj.variant != "comparison":
        eps = traj.eps
        flag("eps_positive", ~(eps > 0), eps)
        lower, upper = eps_envelope(t, params)
        # a trigger overshoot of `slack` can push eps below the lower envelope by at most this
        abs_slack = params.sigma * slack / (params.k + params.sigma * params.gamma)
        lo = lower * (1 - EPS_REL_SLACK) - abs_slack
        hi = upper * (1 + EPS_REL_SLACK)
        flag("eps_envelope", (eps < lo) | (eps > hi), np.where(eps < lo, lo - eps, eps - hi))

    if traj.variant in GAMMA_WEIGHTED:
        g0 = traj.gain[0]
        bound = gain_bound(traj.d_bar, traj.d_bar[0], g0, graph, params)
        excess = traj.gain - bound
        flag("gain_bound", excess > 1e-9 * (1 + np.abs(bound)), excess)

    # controls change only at events of the agent or one of its neighbors
    ev_by_agent = [traj.event_times(i) for i in range(N)]
    for i in range(N):
        sources = [ev_by_agent[i]]
        if traj.variant != "comparison":
            sources += [ev_by_agent[j] for j in graph.in_neighbors(i)]
        ev_t = np.sort(np.concatenate(sources)) if sources else np.array([])
        changed = np.flatnonzero(np.any(traj.u[1:, i] != traj.u[:-1, i], axis=-1))
        for s in changed:
            lo_t, hi_t = t[s], t[s + 1]
            k = np.searchsorted(ev_t, lo_t, side="right")
            if not (k < ev_t.size and ev_t[k] <= hi_t):
                mag = float(np.max(np.abs(traj.u[s + 1, i] - traj.u[s, i])))
                out.append(Violation("piecewise_constant", float(hi_t), mag, i + 1))

    if scenario.variant == "leader_follower":
        for ev in traj.events:
            if ev.agent == 0 and ev.condition != "state":
                out.append(Violation("leader_state_only", ev.time, ev.margin, 1))

    if traj.variant in OBSERVER:
        A_cl = scenario.model.A + scenario.gains.F @ scenario.model.C
        rate, c = observer_envelope(A_cl, float(t[-1]))
        zn = np.linalg.norm(traj.z, axis=-1)
        env = c * np.exp(rate * t)[:, None] * zn[0][None, :] * (1 + 1e-6) + 1e-12
        flag("observer_envelope", zn > env, zn - env)
    return out


@dataclass
class RunReport:
    variant: str
    t_end: float
    graph: str
    initial_consensus_error: float
    final_consensus_error: float
    decay_factor: float
    consensus_reached: bool
    event_counts: list
    update_counts: list
    min_gaps: list
    mean_gaps: list
    gain_final: list
    gain_change_last_second: list
    localization_slack: float
    zeno_tripped: bool
    violations: list = field(default_factory=list)

    @property
    def total_events(self) -> int:
        return int(sum(self.event_counts))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["violations"] = [asdict(v) if isinstance(v, Violation) else v for v in self.violations]
        return d

    def to_json(self) -> str:
        def fix(v):
            if isinstance(v, float) and not np.isfinite(v):
                return str(v)
            if isinstance(v, list):
                return [fix(x) for x in v]
            if isinstance(v, dict):
                return {k: fix(x) for k, x in v.items()}
            return v

        return json.dumps(fix(self.to_dict()), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "RunReport":
        d = dict(d)

        def unfix(v):
            if isinstance(v, str) and v in ("inf", "-inf", "nan"):
                return float(v)
            if isinstance(v, list):
                return [unfix(x) for x in v]
            return v

        d = {k: unfix(v) for k, v in d.items()}
        d["violations"] = [Violation(**v) for v in d.get("violations", [])]
        return cls(**d)

    def format_text(self) -> str:
        g = lambda v: f"{v:.12g}"  # noqa: E731
        lines = [
            f"variant                 {self.variant}",
            f"horizon                 {g(self.t_end)}",
            f"graph                   {self.graph}",
            f"consensus error         {g(self.initial_consensus_error)} -> {g(self.final_consensus_error)}",
            f"decay factor            {g(self.decay_factor)}",
            f"consensus reached       {self.consensus_reached}",
            f"total events            {self.total_events}",
            f"localization slack      {g(self.localization_slack)}",
            f"zeno guard tripped      {self.zeno_tripped}",
            "agent  events  updates  min_gap  mean_gap  gain_final  gain_change_1s",
        ]
        for i in range(len(self.event_counts)):
            lines.append(
                f"{i + 1:5d}  {self.event_counts[i]:6d}  {self.update_counts[i]:7d}  "
                f"{g(self.min_gaps[i])}  {g(self.mean_gaps[i])}  {g(self.gain_final[i])}  "
                f"{g(self.gain_change_last_second[i])}"
            )
        lines.append(f"invariant violations    {len(self.violations)}")
        lines += [f"  {v}" for v in self.violations[:50]]
        return "\n".join(lines)


def run_report(traj: Trajectory, scenario: Scenario, decay_threshold: float = CONSENSUS_DECAY) -> RunReport:
    N = traj.n_agents
    counts, min_gaps, mean_gaps = [], [], []
    for i in range(N):
        ti = traj.event_times(i)
        counts.append(int(ti.size))
        gaps = np.diff(ti)
        min_gaps.append(float(gaps.min()) if gaps.size else float("inf"))
        mean_gaps.append(float(gaps.mean()) if gaps.size else float("inf"))
    cfg = scenario.sim
    zeno = zeno_monitor(traj.events, cfg.zeno_min_gap, cfg.zeno_consecutive, cfg.zeno_event_budget)
    df = decay_factor(traj)
    return RunReport(
        variant=traj.variant,
        t_end=float(traj.times[-1]),
        graph=scenario.graph.fingerprint(),
        initial_consensus_error=float(traj.consensus_error_norm[0]),
        final_consensus_error=float(traj.consensus_error_norm[-1]),
        decay_factor=df,
        consensus_reached=bool(df <= decay_threshold),
        event_counts=counts,
        update_counts=[int(c) for c in controller_update_counts(traj, scenario.graph)],
        min_gaps=min_gaps,
        mean_gaps=mean_gaps,
        gain_final=[float(v) for v in traj.gain[-1]],
        gain_change_last_second=[float(v) for v in gain_change(traj)],
        localization_slack=float(traj.localization_slack),
        zeno_tripped=zeno.tripped,
        violations=verify_invariants(traj, scenario),
    )


@dataclass(frozen=True)
class ComparisonSummary:
    variant_a: str
    variant_b: str
    per_agent_ratio: list
    counts_a: list
    counts_b: list
    total_a: int
    total_b: int
    total_ratio: float
    decay_a: float
    decay_b: float

    def format_text(self) -> str:
        lines = [f"{'agent':>5}  {self.variant_a:>18}  {self.variant_b:>18}  ratio"]
        for i, (a, b, r) in enumerate(zip(self.counts_a, self.counts_b, self.per_agent_ratio)):
            lines.append(f"{i + 1:5d}  {a:18d}  {b:18d}  {r:.12g}")
        lines.append(f"total  {self.total_a:18d}  {self.total_b:18d}  {self.total_ratio:.12g}")
        lines.append(f"decay  {self.decay_a:18.12g}  {self.decay_b:18.12g}")
        return "\n".join(lines)


def _ratio(a: float, b: float) -> float:
    if b == 0:
        return 1.0 if a == 0 else float("inf")
    return a / b


def compare_protocols(report_a: RunReport, report_b: RunReport) -> ComparisonSummary:
    """Event-count ratios ``a / b`` per agent and in total, plus decay factors."""
    if not np.isclose(report_a.t_end, report_b.t_end, rtol=0, atol=1e-9):
        raise ValueError(f"horizons differ: {report_a.t_end} vs {report_b.t_end}")
    if report_a.graph != report_b.graph:
        raise ValueError("reports were produced on different topologies")
    return ComparisonSummary(
        variant_a=report_a.variant,
        variant_b=report_b.variant,
        per_agent_ratio=[_ratio(a, b) for a, b in zip(report_a.event_counts, report_b.event_counts)],
        counts_a=list(report_a.event_counts),
        counts_b=list(report_b.event_counts),
        total_a=report_a.total_events,
        total_b=report_b.total_events,
        total_ratio=_ratio(report_a.total_events, report_b.total_events),
        decay_a=report_a.decay_factor,
        decay_b=report_b.decay_factor,
    )
