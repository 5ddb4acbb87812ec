"""CSV export of trajectories and event logs.  Numbers use 12 significant digits."""
from __future__ import annotations

import csv
import io
import os
from pathlib import Path

import numpy as np

from .hybrid_sim import Trajectory


def _g(v) -> str:
    return f"{float(v):.12g}"


def trajectory_header(traj: Trajectory) -> list[str]:
    n, p = traj.x.shape[2], traj.u.shape[2]
    cols = ["t", "agent"] + [f"x{k + 1}" for k in range(n)] + ["d", "d_hat", "eps"] + [f"u{k + 1}" for k in range(p)]
    if traj.v is not None:
        cols += [f"v{k + 1}" for k in range(n)] + ["e", "z_norm"]
    return cols


def trajectory_csv(traj: Trajectory) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(trajectory_header(traj))
    z = traj.z
    for s, t in enumerate(traj.times):
        for i in range(traj.n_agents):
            row = [_g(t), str(i + 1)]
            row += [_g(v) for v in traj.x[s, i]]
            row += [_g(traj.gain[s, i]), _g(traj.gain_hat[s, i]), _g(traj.eps[s, i])]
            row += [_g(v) for v in traj.u[s, i]]
            if traj.v is not None:
                row += [_g(v) for v in traj.v[s, i]]
                row += [_g(traj.gain[s, i]), _g(np.linalg.norm(z[s, i]))]
            w.writerow(row)
    return buf.getvalue()


def events_csv(traj: Trajectory) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", "agent", "condition"])
    for ev in traj.events:
        w.writerow([_g(ev.time), ev.agent + 1, ev.condition])
    return buf.getvalue()


def write_atomic(path, text: str) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def read_events(path) -> list[tuple[float, int, str]]:
    with open(path, newline="") as fh:
        return [(float(r["t"]), int(r["agent"]), r["condition"]) for r in csv.DictReader(fh)]
