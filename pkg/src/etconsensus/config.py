"""Scenario files.

A scenario is an INI-style text file with the sections ``[model]``, ``[graph]``,
``[protocol]``, ``[sim]`` and ``[output]``.  Values are JSON literals, so
matrices are written row-major as nested lists; bare words are read as strings::

    [model]
    A = [[0, 1, 0], [-1, 0, 0], [0, 0, 0.1]]
    B = [[0], [1], [1]]

    [graph]
    n = 6
    edges = [[1, 2], [2, 3], [3, 1]]

    [protocol]
    variant = directed
    mu = 1.0

Edges ``[j, i]`` mean information flows from agent ``j`` to agent ``i``.
"""
from __future__ import annotations

import configparser
import dataclasses
import io
import json
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .graph import GraphError, build_graph, classify
from .hybrid_sim import Scenario, SimConfig
from .protocols import OBSERVER, VARIANTS, ProtocolParams, required_graph_classes
from .synthesis import MODES, SystemModel, gains_from_P, observer_gain, synthesize_gains

SECTIONS = ("model", "graph", "protocol", "sim", "output")
PLOTS = ("disagreement", "gains", "inputs", "events")


class ConfigError(ValueError):
    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("invalid scenario:\n  " + "\n  ".join(self.errors))


def _freeze(v):
    if isinstance(v, (list, tuple)):
        return tuple(_freeze(x) for x in v)
    if isinstance(v, bool) or v is None or isinstance(v, str):
        return v
    if isinstance(v, int):
        return v
    return float(v)


def _thaw(v):
    if isinstance(v, tuple):
        return [_thaw(x) for x in v]
    return v


Matrix = tuple


@dataclass(frozen=True)
class ModelBlock:
    A: Matrix
    B: Matrix
    C: Optional[Matrix] = None
    P: Optional[Matrix] = None
    synthesis: str = "auto"


@dataclass(frozen=True)
class GraphBlock:
    n: int
    edges: tuple = ()
    undirected: bool = False
    leader: Optional[int] = None


@dataclass(frozen=True)
class ProtocolBlock:
    variant: str
    gamma: Union[float, tuple] = 1.0
    k: Union[float, tuple] = 0.25
    sigma: Union[float, tuple] = 0.25
    d0: Union[float, tuple] = 1.0
    eps0: Union[float, tuple] = 0.4
    theta1: float = 1.0
    theta2: float = 1.0
    mu: float = 1.0
    kappa: Union[float, tuple] = 2.0
    c0: Union[float, tuple] = 2.0
    phi1: float = 1.0
    phi2: float = 1.0
    mu1: tuple = (1.0, 0.25)
    mu2: tuple = (1.0, 0.25)

    def params(self, n_agents: int) -> ProtocolParams:
        kw = {f.name: getattr(self, f.name) for f in fields(self) if f.name != "variant"}
        return ProtocolParams.create(n_agents, **kw)


@dataclass(frozen=True)
class SimBlock:
    t_end: float = 20.0
    h: float = 1e-3
    localization_tol: float = 1e-8
    sample_stride: int = 10
    zeno_event_budget: int = 1_000_000
    zeno_min_gap: float = 1e-9
    zeno_consecutive: int = 100
    seed: int = 0
    x0: Optional[Matrix] = None
    v0: Optional[Matrix] = None

    def sim_config(self) -> SimConfig:
        return SimConfig(
            t_end=self.t_end,
            h=self.h,
            localization_tol=self.localization_tol,
            sample_stride=self.sample_stride,
            zeno_event_budget=self.zeno_event_budget,
            zeno_min_gap=self.zeno_min_gap,
            zeno_consecutive=self.zeno_consecutive,
            rng_seed=self.seed,
        )


@dataclass(frozen=True)
class OutputBlock:
    directory: str = "runs/out"
    plots: tuple = PLOTS


@dataclass(frozen=True)
class ScenarioConfig:
    model: ModelBlock
    graph: GraphBlock
    protocol: ProtocolBlock
    sim: SimBlock = field(default_factory=SimBlock)
    output: OutputBlock = field(default_factory=OutputBlock)

    def replace(self, **sections) -> "ScenarioConfig":
        """Copy with per-section overrides, e.g. ``replace(sim={"h": 5e-4})``."""
        updated = {}
        for name, changes in sections.items():
            block = getattr(self, name)
            updated[name] = dataclasses.replace(block, **{k: _freeze(v) for k, v in changes.items()})
        return dataclasses.replace(self, **updated)


_BLOCKS = {
    "model": ModelBlock,
    "graph": GraphBlock,
    "protocol": ProtocolBlock,
    "sim": SimBlock,
    "output": OutputBlock,
}


def _parse_value(raw: str):
    raw = raw.strip()
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def parse_scenario(text: str, source: str = "<string>") -> ScenarioConfig:
    """Parse and validate; every problem found is reported at once."""
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError([f"parse error: {exc}"]) from None
    errors = []
    blocks = {}
    for name in cp.sections():
        if name not in _BLOCKS:
            errors.append(f"unknown section [{name}]")
    for name, cls in _BLOCKS.items():
        if not cp.has_section(name):
            if name in ("model", "graph", "protocol"):
                errors.append(f"missing section [{name}]")
            continue
        known = {f.name for f in fields(cls)}
        kw = {}
        for key, raw in cp.items(name):
            if key not in known:
                errors.append(f"[{name}] unknown key {key!r}")
                continue
            kw[key] = _freeze(_parse_value(raw))
        try:
            blocks[name] = cls(**kw)
        except TypeError as exc:
            errors.append(f"[{name}] {exc}")
    if errors:
        raise ConfigError(errors)
    cfg = ScenarioConfig(**blocks)
    validate(cfg)
    return cfg


def load_scenario(path) -> ScenarioConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError([f"cannot read {path}: {exc}"]) from None
    return parse_scenario(text, str(path))


def format_scenario(cfg: ScenarioConfig) -> str:
    buf = io.StringIO()
    for name in SECTIONS:
        block = getattr(cfg, name)
        buf.write(f"[{name}]\n")
        for f in fields(block):
            v = getattr(block, f.name)
            if v is None:
                continue
            if isinstance(v, str):
                buf.write(f"{f.name} = {v}\n")
            else:
                buf.write(f"{f.name} = {json.dumps(_thaw(v))}\n")
        buf.write("\n")
    return buf.getvalue()


def write_scenario(cfg: ScenarioConfig, path) -> None:
    Path(path).write_text(format_scenario(cfg))


def _matrix(v, name, errors):
    try:
        M = np.array(_thaw(v), dtype=float)
    except (TypeError, ValueError):
        errors.append(f"{name} is not a numeric matrix")
        return None
    if M.ndim == 1:
        M = M.reshape(-1, 1)
    if M.ndim != 2:
        errors.append(f"{name} must be a matrix")
        return None
    return M


def synthesis_mode(cfg: ScenarioConfig) -> str:
    mode = cfg.model.synthesis
    if mode != "auto":
        return mode
    v = cfg.protocol.variant
    if v in OBSERVER:
        return "output-feedback"
    if v == "comparison":
        return "state-feedback-care"
    return "state-feedback-lmi"


def validate(cfg: ScenarioConfig) -> None:
    errors = []
    A = _matrix(cfg.model.A, "A", errors)
    B = _matrix(cfg.model.B, "B", errors)
    n = None
    if A is not None:
        n = A.shape[0]
        if A.shape != (n, n):
            errors.append(f"A must be square, got {A.shape}")
        if B is not None and B.shape[0] != n:
            errors.append(f"B must have {n} rows, got {B.shape}")
        if cfg.model.C is not None:
            C = _matrix(cfg.model.C, "C", errors)
            if C is not None and C.shape[1] != n:
                errors.append(f"C must have {n} columns, got {C.shape}")
        if cfg.model.P is not None:
            P = _matrix(cfg.model.P, "P", errors)
            if P is not None and P.shape != (n, n):
                errors.append(f"P must be {n}x{n}, got {P.shape}")
    if cfg.model.synthesis != "auto" and cfg.model.synthesis not in MODES:
        errors.append(f"unknown synthesis mode {cfg.model.synthesis!r}")

    variant = cfg.protocol.variant
    if variant not in VARIANTS:
        errors.append(f"unknown variant {variant!r}; expected one of {', '.join(VARIANTS)}")
    if cfg.model.synthesis != "auto" and variant in OBSERVER and cfg.model.synthesis != "output-feedback":
        errors.append("observer variants need synthesis = output-feedback")

    N = cfg.graph.n
    graph = None
    if not isinstance(N, int) or N < 1:
        errors.append("graph n must be a positive integer")
    else:
        try:
            graph = build_graph(cfg.graph.edges, N, cfg.graph.undirected)
        except (GraphError, TypeError, ValueError) as exc:
            errors.append(f"graph: {exc}")
    if graph is not None and variant in VARIANTS:
        cls = classify(graph)
        needed = required_graph_classes(variant)
        if cls.kind not in needed:
            errors.append(f"variant {variant} needs a {' or '.join(needed)} graph, got {cls}")
        elif variant == "leader_follower":
            if cfg.graph.leader not in (None, 1):
                errors.append("the leader must be agent 1")
            if cls.root != 1:
                errors.append(f"no directed spanning tree rooted at agent 1 ({cls})")
            elif np.any(graph.adjacency[0] != 0):
                errors.append("the leader must not have in-neighbors")
    if isinstance(N, int) and N >= 1 and variant in VARIANTS:
        try:
            errors += cfg.protocol.params(N).problems(variant)
        except (ValueError, TypeError) as exc:
            errors.append(f"protocol: {exc}")

    errors += cfg.sim.sim_config().problems()
    if n is not None and isinstance(N, int):
        for name in ("x0", "v0"):
            v = getattr(cfg.sim, name)
            if v is not None and np.size(_thaw(v)) != N * n:
                errors.append(f"{name} needs {N} x {n} entries")
    for p in cfg.output.plots:
        if p not in PLOTS:
            errors.append(f"unknown plot {p!r}; expected some of {PLOTS}")
    if errors:
        raise ConfigError(errors)


def build_scenario(cfg: ScenarioConfig) -> Scenario:
    """Synthesize gains and assemble the runtime scenario."""
    model = SystemModel(
        _thaw(cfg.model.A), _thaw(cfg.model.B), None if cfg.model.C is None else _thaw(cfg.model.C)
    )
    graph = build_graph(cfg.graph.edges, cfg.graph.n, cfg.graph.undirected)
    mode = synthesis_mode(cfg)
    variant = cfg.protocol.variant
    if cfg.model.P is not None and variant != "comparison":
        gains = gains_from_P(model, _thaw(cfg.model.P))
        if variant in OBSERVER:
            gains = dataclasses.replace(gains, F=observer_gain(model.A, model.C), mode="given-P+observer")
    else:
        gains = synthesize_gains(model, mode)
    sim = cfg.sim
    return Scenario(
        model=model,
        graph=graph,
        gains=gains,
        variant=variant,
        params=cfg.protocol.params(cfg.graph.n),
        sim=sim.sim_config(),
        x0=None if sim.x0 is None else np.array(_thaw(sim.x0), dtype=float),
        v0=None if sim.v0 is None else np.array(_thaw(sim.v0), dtype=float),
    )
