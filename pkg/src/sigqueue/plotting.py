"""PNG figures for the CLI report path (matplotlib, Agg backend, imported lazily)."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import numpy as np

MAX_LINES = 12  # more links than this are drawn as a sample


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def _pick(n: int) -> list:
    if n <= MAX_LINES:
        return list(range(n))
    return sorted({int(round(v)) for v in np.linspace(0, n - 1, MAX_LINES)})


def _save(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, dpi=110, metadata={"Software": None})
    _pyplot().close(fig)
    return path


def plot_trajectory(traj, path, labels: Sequence[str] = ()) -> Path:
    """Queue lengths and outflows against time."""
    plt = _pyplot()
    fig, (ax_x, ax_z) = plt.subplots(2, 1, figsize=(8, 6), sharex=True)
    t = np.asarray(traj.times) / traj.ticks_per_unit
    for i in _pick(traj.n_links):
        name = labels[i] if i < len(labels) else str(i)
        ax_x.plot(t, traj.x[:, i], lw=1, label=name)
        ax_z.step(t, traj.z[:, i], where="post", lw=1)
    ax_x.set_ylabel("queue [veh]")
    ax_z.set_ylabel("outflow [veh/s]")
    ax_z.set_xlabel("time [s]")
    ax_x.legend(fontsize="x-small", ncol=4, loc="upper right")
    return _save(fig, path)


def plot_orbits(orbits, path, labels: Sequence[str] = ()) -> Path:
    """One period of each link's periodic queue and outflow."""
    plt = _pyplot()
    fig, (ax_x, ax_z) = plt.subplots(2, 1, figsize=(8, 6), sharex=True)
    for i in _pick(len(orbits)):
        o = orbits[i]
        tpu = o.z_star.ticks_per_unit
        name = labels[i] if i < len(labels) else str(i)
        ax_x.plot(np.asarray(o.x_star.times) / tpu, o.x_star.values, lw=1, label=name)
        bps = list(o.z_star.breakpoints) + [o.z_star.end]
        vals = list(o.z_star.values) + [o.z_star.values[-1]]
        ax_z.step(np.asarray(bps) / tpu, vals, where="post", lw=1)
    ax_x.set_ylabel("periodic queue [veh]")
    ax_z.set_ylabel("periodic outflow [veh/s]")
    ax_z.set_xlabel("time within cycle [s]")
    ax_x.legend(fontsize="x-small", ncol=4, loc="upper right")
    return _save(fig, path)


def plot_rmse(table: np.ndarray, path, labels: Sequence[str] = ()) -> Path:
    """Per-link RMSE (rows = iterations, columns = links) on a log scale."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(7, 4.5))
    k = np.arange(1, table.shape[0] + 1)
    floor = 1e-16
    for i in _pick(table.shape[1]):
        name = labels[i] if i < len(labels) else str(i)
        ax.semilogy(k, np.maximum(table[:, i], floor), lw=1, label=name)
    ax.set_xlabel("iteration k")
    ax.set_ylabel("RMSE of queue vs simulated steady state [veh]")
    ax.legend(fontsize="x-small", ncol=4, loc="upper right")
    return _save(fig, path)
