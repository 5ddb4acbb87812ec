"""Static SVG figures: disagreement, gains, inputs and the event raster."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .hybrid_sim import Trajectory  # noqa: E402


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def plot_disagreement(traj: Trajectory, path: Path) -> Path:
    fig, axes = plt.subplots(traj.x.shape[2], 1, sharex=True, figsize=(6, 1.8 * traj.x.shape[2]), squeeze=False)
    diff = traj.x - traj.x[:, :1, :]
    for k, ax in enumerate(axes[:, 0]):
        if traj.n_agents == 1:
            ax.plot(traj.times, np.zeros_like(traj.times), lw=0.8, label="zero")
        for i in range(1, traj.n_agents):
            ax.plot(traj.times, diff[:, i, k], lw=0.8, label=f"x{i + 1}-x1")
        ax.set_ylabel(f"component {k + 1}")
    axes[-1, 0].set_xlabel("t [s]")
    axes[0, 0].legend(fontsize="x-small", ncol=3)
    return _save(fig, path)


def plot_gains(traj: Trajectory, path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(6, 3))
    for i in range(traj.n_agents):
        ax.plot(traj.times, traj.gain[:, i], lw=0.8, label=f"agent {i + 1}")
    ax.set_xlabel("t [s]")
    ax.set_ylabel("adaptive gain")
    ax.legend(fontsize="x-small", ncol=3)
    return _save(fig, path)


def plot_inputs(traj: Trajectory, path: Path) -> Path:
    p = traj.u.shape[2]
    fig, axes = plt.subplots(p, 1, sharex=True, figsize=(6, 2.5 * p), squeeze=False)
    for k, ax in enumerate(axes[:, 0]):
        for i in range(traj.n_agents):
            ax.step(traj.times, traj.u[:, i, k], where="post", lw=0.8, label=f"u{i + 1}")
        ax.set_ylabel(f"input {k + 1}")
    axes[-1, 0].set_xlabel("t [s]")
    axes[0, 0].legend(fontsize="x-small", ncol=3)
    return _save(fig, path)


def plot_events(traj: Trajectory, path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(6, 0.4 * traj.n_agents + 1.2))
    for i in range(traj.n_agents):
        ti = traj.event_times(i)
        ax.plot(ti, np.full(ti.shape, i + 1), "|", ms=6)
    ax.set_yticks(range(1, traj.n_agents + 1))
    ax.set_ylim(0.5, traj.n_agents + 0.5)
    ax.set_xlim(0, traj.times[-1])
    ax.set_xlabel("t [s]")
    ax.set_ylabel("agent")
    return _save(fig, path)


_PLOTTERS = {
    "disagreement": plot_disagreement,
    "gains": plot_gains,
    "inputs": plot_inputs,
    "events": plot_events,
}


def emit_plots(traj: Trajectory, directory, toggles=tuple(_PLOTTERS)) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    return [_PLOTTERS[name](traj, directory / f"{name}.svg") for name in toggles]
