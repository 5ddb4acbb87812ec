"""Fixed-step hybrid simulation with event localization.

Each grid step is integrated with classical RK4 while every sampled quantity
(snapshots, sampled gains, cached errors, controls) is held constant.  If any
trigger margin is nonnegative at the end of the step, the crossing is bracketed
and narrowed by re-taking the step from its start up to trial times.  Agents
whose crossings fall within the localization tolerance of the first one fire
together, in ascending agent order, then integration resumes from there
towards the same grid point.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .graph import DirectedGraph
from .protocols import AgentStates, Protocol, ProtocolParams
from .synthesis import GainSet, SystemModel

log = logging.getLogger(__name__)


class SimulationError(RuntimeError):
    pass


class ZenoError(SimulationError):
    def __init__(self, message: str, stats: "ZenoStats"):
        super().__init__(message)
        self.stats = stats


class DivergenceError(SimulationError):
    def __init__(self, message: str, last_valid_time: float):
        super().__init__(message)
        self.last_valid_time = last_valid_time


@dataclass(frozen=True)
class SimConfig:
    t_end: float
    h: float = 1e-3
    localization_tol: float = 1e-8
    sample_stride: int = 10
    zeno_event_budget: int = 1_000_000
    zeno_min_gap: float = 1e-9
    zeno_consecutive: int = 100
    rng_seed: int = 0

    def problems(self) -> list[str]:
        errs = []
        if not self.t_end > 0:
            errs.append("t_end must be positive")
        if not self.h > 0:
            errs.append("h must be positive")
        elif self.h > self.t_end:
            errs.append(f"step h={self.h} exceeds t_end={self.t_end}")
        if not 0 < self.localization_tol < self.h:
            errs.append("localization_tol must lie in (0, h)")
        if self.sample_stride < 1:
            errs.append("sample_stride must be >= 1")
        if self.zeno_event_budget < 1 or self.zeno_consecutive < 1:
            errs.append("Zeno thresholds must be positive")
        return errs


@dataclass(frozen=True, eq=False)
class Scenario:
    """Everything one run needs, already validated and synthesized."""

    model: SystemModel
    graph: DirectedGraph
    gains: GainSet
    variant: str
    params: ProtocolParams
    sim: SimConfig
    x0: Optional[np.ndarray] = None
    v0: Optional[np.ndarray] = None

    def initial_states(self) -> tuple[np.ndarray, Optional[np.ndarray]]:
        """Explicit initial states, else seeded uniform on [-1, 1]^n per agent."""
        N, n = self.graph.n_nodes, self.model.n
        if self.x0 is not None:
            x0 = np.asarray(self.x0, dtype=float).reshape(N, n)
        else:
            x0 = np.random.default_rng(self.sim.rng_seed).uniform(-1.0, 1.0, size=(N, n))
        v0 = None if self.v0 is None else np.asarray(self.v0, dtype=float).reshape(N, n)
        return x0, v0


@dataclass(frozen=True)
class EventRecord:
    agent: int  # 0-based
    time: float
    condition: str
    snapshot_norm: float
    margin: float = 0.0  # margin value when fired (localization overshoot)
    reset_error: float = 0.0


@dataclass
class Trajectory:
    variant: str
    times: np.ndarray
    x: np.ndarray  # (S, N, n)
    gain: np.ndarray  # (S, N) d, e or c
    gain_hat: np.ndarray
    eps: np.ndarray  # NaN for the comparison protocol
    u: np.ndarray  # (S, N, p)
    d_bar: np.ndarray
    state_margin: np.ndarray
    gain_margin: np.ndarray
    consensus_error_norm: np.ndarray
    is_event_sample: np.ndarray
    events: list[EventRecord]
    v: Optional[np.ndarray] = None
    localization_slack: float = 0.0
    clamped_events: int = 0
    h: float = 0.0
    stats: dict = field(default_factory=dict)

    @property
    def n_samples(self) -> int:
        return len(self.times)

    @property
    def n_agents(self) -> int:
        return self.x.shape[1]

    @property
    def z(self) -> Optional[np.ndarray]:
        return None if self.v is None else self.v - self.x

    def event_times(self, agent: int) -> np.ndarray:
        return np.array([e.time for e in self.events if e.agent == agent])


def rk4_step(f: Callable[[float, np.ndarray], np.ndarray], t: float, y: np.ndarray, h: float) -> np.ndarray:
    if h == 0.0:
        return y.copy()
    k1 = f(t, y)
    k2 = f(t + 0.5 * h, y + 0.5 * h * k1)
    k3 = f(t + 0.5 * h, y + 0.5 * h * k2)
    k4 = f(t + h, y + h * k3)
    return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def localize_event(margin_function: Callable[[float], float], t_lo: float, t_hi: float, tol: float) -> float:
    """Locate a sign change of ``margin_function`` on ``[t_lo, t_hi]``.

    Requires ``margin(t_lo) < 0 <= margin(t_hi)``.  The bracket is shrunk by
    Illinois false position with a bisection fallback whenever two iterations
    fail to halve it, so the bracket invariant holds throughout.  Returns the
    right end of a bracket no wider than ``tol``: a time within ``tol`` of the
    crossing at which the margin is already nonnegative.
    """
    if not t_lo < t_hi:
        raise AssertionError(f"empty bracket [{t_lo}, {t_hi}]")
    m_lo = margin_function(t_lo)
    m_hi = margin_function(t_hi)
    if not m_lo < 0:
        raise AssertionError("margin already nonnegative at the bracket start")
    if not m_hi >= 0:
        raise AssertionError("margin negative at the bracket end")
    guard = 0.5 * tol
    side = 0
    widths = [t_hi - t_lo, t_hi - t_lo]
    while t_hi - t_lo > tol:
        width = t_hi - t_lo
        if width > 0.5 * widths[-2] or not np.isfinite(m_hi - m_lo):
            mid = 0.5 * (t_lo + t_hi)
        else:
            mid = t_lo - m_lo * width / (m_hi - m_lo)
            mid = min(max(mid, t_lo + guard), t_hi - guard)
        if mid <= t_lo or mid >= t_hi:
            break
        widths.append(width)
        m = margin_function(mid)
        if m >= 0:
            t_hi, m_hi = mid, m
            if side == 1:
                m_lo *= 0.5
            side = 1
        else:
            t_lo, m_lo = mid, m
            if side == -1:
                m_hi *= 0.5
            side = -1
    return t_hi


@dataclass(frozen=True)
class ZenoStats:
    min_gap_per_agent: dict
    events_per_agent: dict
    total_events: int
    tripped: bool
    reason: str = ""


def zeno_monitor(
    event_log,
    min_gap: float = 1e-9,
    consecutive: int = 100,
    budget: int = 1_000_000,
) -> ZenoStats:
    """Per-agent minimum inter-event gap and counts; trips on budget or a run of tiny gaps."""
    last: dict = {}
    run: dict = {}
    gaps: dict = {}
    counts: dict = {}
    tripped, reason = False, ""
    for ev in event_log:
        a = ev.agent
        counts[a] = counts.get(a, 0) + 1
        if a in last:
            g = ev.time - last[a]
            gaps[a] = min(gaps.get(a, np.inf), g)
            run[a] = run.get(a, 0) + 1 if g < min_gap else 0
            if run[a] >= consecutive and not tripped:
                tripped, reason = True, f"agent {a + 1}: {run[a]} consecutive gaps below {min_gap:g}"
        last[a] = ev.time
    total = sum(counts.values())
    if total > budget and not tripped:
        tripped, reason = True, f"{total} events exceed the budget {budget}"
    return ZenoStats({a: gaps.get(a, np.inf) for a in counts}, counts, total, tripped, reason)


class _Recorder:
    def __init__(self, proto: Protocol):
        self.proto = proto
        self.rows = {k: [] for k in ("t", "x", "gain", "gain_hat", "eps", "u", "d_bar", "ms", "mg", "xi", "ev", "v")}

    def record(self, t, y, st: AgentStates, event: bool):
        p, r = self.proto, self.rows
        ms, mg = p.margins(t, y, st)
        r["t"].append(t)
        r["x"].append(p.x(y).copy())
        r["gain"].append(p.gain(y).copy())
        r["gain_hat"].append(st.gain_hat.copy())
        r["eps"].append(p.eps(y).copy())
        r["u"].append(st.u.copy())
        r["d_bar"].append(p.d_bar(y).copy())
        r["ms"].append(ms)
        r["mg"].append(mg)
        r["xi"].append(float(np.linalg.norm(p.graph.laplacian @ p.x(y))))
        r["ev"].append(event)
        if p.observer:
            r["v"].append(p.v(y).copy())

    def last_time(self):
        return self.rows["t"][-1] if self.rows["t"] else None

    def build(self, events, **extra) -> Trajectory:
        r = self.rows
        return Trajectory(
            variant=self.proto.variant,
            times=np.array(r["t"]),
            x=np.array(r["x"]),
            gain=np.array(r["gain"]),
            gain_hat=np.array(r["gain_hat"]),
            eps=np.array(r["eps"]),
            u=np.array(r["u"]),
            d_bar=np.array(r["d_bar"]),
            state_margin=np.array(r["ms"]),
            gain_margin=np.array(r["mg"]),
            consensus_error_norm=np.array(r["xi"]),
            is_event_sample=np.array(r["ev"], dtype=bool),
            events=events,
            v=np.array(r["v"]) if self.proto.observer else None,
            **extra,
        )


def _due(proto: Protocol, f, st: AgentStates, t0, y0, t_ev, ms, mg, t_tie) -> np.ndarray:
    """Agents firing at ``t_ev``: margin already >= 0, or crossing before ``t_tie``.

    Crossings closer together than the localization tolerance cannot be told
    apart, so they count as simultaneous.  Symmetric configurations produce such
    ties constantly, and resolving them by rounding noise would make the event
    sequence depend on the step size.
    """
    now = np.maximum(ms, mg) >= 0
    if t_tie > t_ev:
        a, b = proto.margins(t_tie, rk4_step(f, t0, y0, t_tie - t0), st)
        now |= np.maximum(a, b) >= 0
    return np.flatnonzero(now)


def run(scenario: Scenario) -> Trajectory:
    """Simulate one scenario; deterministic for a fixed scenario and seed."""
    cfg = scenario.sim
    problems = cfg.problems()
    if problems:
        raise SimulationError("; ".join(problems))
    proto = Protocol(scenario.variant, scenario.graph, scenario.model, scenario.gains, scenario.params)
    x0, v0 = scenario.initial_states()
    y, st = proto.initial(x0, v0)
    N = proto.N
    first_name, second_name = proto.condition_names()

    def f(t, yy):
        return proto.derivatives(t, yy, st)

    def max_margin(t, yy):
        a, b = proto.margins(t, yy, st)
        return max(float(np.max(a)), float(np.max(b)))

    rec = _Recorder(proto)
    rec.record(0.0, y, st, False)
    events: list[EventRecord] = []
    slack = 0.0
    clamps = 0
    run_len = np.zeros(N, dtype=int)
    n_steps = int(np.ceil(cfg.t_end / cfg.h - 1e-9))
    t = 0.0
    for k in range(n_steps):
        t_next = min((k + 1) * cfg.h, cfg.t_end)
        while t < t_next:
            y_try = rk4_step(f, t, y, t_next - t)
            if not np.all(np.isfinite(y_try[np.isfinite(y)])):
                raise DivergenceError(f"non-finite state after t={t:.12g}", t)
            if max_margin(t_next, y_try) < 0:
                t, y = t_next, y_try
                break
            t0, y0 = t, y
            if max_margin(t0, y0) >= 0:
                t_ev = t0  # only reachable right after a clamp
            else:
                t_ev = localize_event(
                    lambda tau: max_margin(tau, rk4_step(f, t0, y0, tau - t0)), t0, t_next, cfg.localization_tol
                )
            y_ev = rk4_step(f, t0, y0, t_ev - t0)
            ms, mg = proto.margins(t_ev, y_ev, st)
            due = _due(proto, f, st, t0, y0, t_ev, ms, mg, min(t_ev + cfg.localization_tol, t_next))
            gaps = t_ev - st.last_event[due]
            early = (st.event_count[due] > 0) & (gaps < cfg.localization_tol)
            if np.any(early):
                clamps += int(np.sum(early))
                t_ev = min(t_next, float(np.max(st.last_event[due][early])) + cfg.localization_tol)
                y_ev = rk4_step(f, t0, y0, t_ev - t0)
                ms, mg = proto.margins(t_ev, y_ev, st)
                due = _due(proto, f, st, t0, y0, t_ev, ms, mg, min(t_ev + cfg.localization_tol, t_next))
            t, y = t_ev, y_ev
            for i in due:
                first = ms[i] >= 0 or ms[i] >= mg[i]
                cond = first_name if first else second_name
                m = float(ms[i] if first else mg[i])
                slack = max(slack, m)
                gap = t - st.last_event[i]
                had_events = st.event_count[i] > 0
                proto.fire(t, y, st, int(i))
                events.append(
                    EventRecord(
                        int(i), t, cond, float(np.linalg.norm(st.snapshot[i])), m, proto.reset_error(y, st, int(i))
                    )
                )
                run_len[i] = run_len[i] + 1 if had_events and gap < cfg.zeno_min_gap else 0
                if run_len[i] >= cfg.zeno_consecutive or len(events) > cfg.zeno_event_budget:
                    stats = zeno_monitor(events, cfg.zeno_min_gap, cfg.zeno_consecutive, cfg.zeno_event_budget)
                    raise ZenoError(f"Zeno guard tripped at t={t:.12g}: {stats.reason}", stats)
            rec.record(t, y, st, True)
        if (k + 1) % cfg.sample_stride == 0 or k + 1 == n_steps:
            if rec.last_time() != t or not rec.rows["ev"][-1]:
                rec.record(t, y, st, False)
    log.debug("run %s: %d events, slack %.3g", scenario.variant, len(events), slack)
    return rec.build(events, localization_slack=slack, clamped_events=clamps, h=cfg.h)
