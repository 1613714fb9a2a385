"""PNG report figures rendered from a simulation trace.

Uses the object-oriented Figure API with the Agg canvas, so nothing touches the
pyplot state machine or needs a display.
"""

from __future__ import annotations

from contextlib import contextmanager
from pathlib import Path

import matplotlib as mpl
import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure
from matplotlib.patches import Circle

from .scenarios import SimulationTrace

RC = {
    "font.size": 9,
    "axes.titlesize": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 7,
    "lines.linewidth": 1.2,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "savefig.dpi": 150,
}


@contextmanager
def style():
    with mpl.rc_context(RC):
        yield


def _save(fig: Figure, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    FigureCanvasAgg(fig)
    fig.savefig(path, bbox_inches="tight")
    return path


def _uav_colors(n):
    cmap = mpl.colormaps["tab10"]
    return [cmap(i % 10) for i in range(n)]


def plot_trajectories(trace: SimulationTrace, path) -> Path:
    """Top view of UAV and obstacle paths with start, final and reference markers."""
    cfg = trace.config
    uav = trace.uav_positions()
    obs = trace.obstacle_truth()
    with style():
        fig = Figure(figsize=(4.5, 4.5))
        ax = fig.add_subplot()
        for l in range(obs.shape[1]):
            ax.plot(obs[:, l, 0], obs[:, l, 1], ":", color="0.4", lw=0.8)
            ax.add_patch(Circle(obs[-1, l, :2], cfg.r_obs, color="0.5", alpha=0.5))
        for i, c in enumerate(_uav_colors(uav.shape[1])):
            ax.plot(uav[:, i, 0], uav[:, i, 1], color=c, label=f"UAV {i + 1}")
            ax.plot(*uav[0, i, :2], "o", color=c, ms=4)
            ax.add_patch(Circle(uav[-1, i, :2], cfg.r_rob, fill=False, color=c))
            ax.plot(*trace.references[i][:2], "x", color=c, ms=6)
        ax.set_aspect("equal")
        ax.set_xlabel("x [m]")
        ax.set_ylabel("y [m]")
        ax.legend(loc="upper right")
        return _save(fig, path)


def plot_snapshots(trace: SimulationTrace, path, times=(7.0, 9.0, 11.0, 13.0)) -> Path:
    cfg = trace.config
    uav = trace.uav_positions()
    obs = trace.obstacle_truth()
    t = trace.times
    times = [s for s in times if s <= t[-1]] or [t[-1]]
    lim = 1.1 * max(cfg.r_init, np.abs(uav[..., :2]).max(), np.abs(obs[..., :2]).max() if obs.size else 0)
    with style():
        fig = Figure(figsize=(2.6 * len(times), 2.8))
        for n, s in enumerate(times):
            k = int(np.argmin(np.abs(t - s)))
            ax = fig.add_subplot(1, len(times), n + 1)
            for l in range(obs.shape[1]):
                ax.add_patch(Circle(obs[k, l, :2], cfg.r_obs, color="0.4"))
            for i, c in enumerate(_uav_colors(uav.shape[1])):
                ax.plot(uav[: k + 1, i, 0], uav[: k + 1, i, 1], color=c, lw=0.7)
                ax.add_patch(Circle(uav[k, i, :2], cfg.r_rob, fill=False, color=c))
            ax.set_xlim(-lim, lim)
            ax.set_ylim(-lim, lim)
            ax.set_aspect("equal")
            ax.set_title(f"t = {t[k]:g} s")
        return _save(fig, path)


def plot_obstacle_distances(trace: SimulationTrace, path) -> Path:
    """UAV-to-obstacle center distances, one panel per UAV, minimum marked."""
    cfg = trace.config
    uav = trace.uav_positions()
    obs = trace.obstacle_truth()
    t = trace.times
    n = uav.shape[1]
    cols = 2 if n > 1 else 1
    rows = int(np.ceil(n / cols))
    floor = cfg.r_rob + cfg.r_obs
    with style():
        fig = Figure(figsize=(4.0 * cols, 2.4 * rows))
        for i in range(n):
            ax = fig.add_subplot(rows, cols, i + 1)
            if obs.shape[1]:
                d = np.linalg.norm(uav[:, i, None, :] - obs, axis=-1)
                ax.plot(t, d, lw=0.8)
                k, l = np.unravel_index(int(np.argmin(d)), d.shape)
                ax.plot(t[k], d[k, l], "o", color="red", ms=4)
                ax.annotate(f"{d[k, l]:.3f} m", (t[k], d[k, l]), textcoords="offset points", xytext=(4, 6))
            ax.axhline(floor, color="red", ls="--", lw=0.8)
            ax.set_title(f"UAV {i + 1}")
            ax.set_xlabel("t [s]")
            ax.set_ylabel("distance [m]")
        fig.tight_layout()
        return _save(fig, path)


def plot_inter_agent_distances(trace: SimulationTrace, path) -> Path:
    cfg = trace.config
    uav = trace.uav_positions()
    t = trace.times
    n = uav.shape[1]
    with style():
        fig = Figure(figsize=(5.0, 2.8))
        ax = fig.add_subplot()
        best = None
        for i in range(n):
            for j in range(i + 1, n):
                d = np.linalg.norm(uav[:, i] - uav[:, j], axis=1)
                ax.plot(t, d, lw=0.8, label=f"{i + 1}-{j + 1}")
                k = int(np.argmin(d))
                if best is None or d[k] < best[1]:
                    best = (t[k], d[k])
        if best is not None:
            ax.plot(*best, "o", color="red", ms=4)
            ax.annotate(f"{best[1]:.3f} m", best, textcoords="offset points", xytext=(4, 6))
        ax.axhline(2 * cfg.r_rob, color="red", ls="--", lw=0.8)
        ax.set_xlabel("t [s]")
        ax.set_ylabel("distance [m]")
        if n > 1:
            ax.legend(ncol=3)
        return _save(fig, path)


def plot_prediction_snapshot(trace: SimulationTrace, path, time=None, obstacle: int = 0) -> Path:
    """True path, noisy measurements, and each source's forecast at one instant."""
    obs = trace.obstacle_truth()
    t = trace.times
    if time is None:
        time = 0.5 * t[-1]
    k = int(np.argmin(np.abs(t - time)))
    with style():
        fig = Figure(figsize=(4.5, 4.0))
        ax = fig.add_subplot()
        if obs.shape[1]:
            ax.plot(obs[:, obstacle, 0], obs[:, obstacle, 1], ":", color="0.3", label="true path")
            lo = max(0, k - 200)
            for s in sorted(trace.records[k].measured):
                m = np.array([r.measured[s][obstacle] for r in trace.records[lo: k + 1]])
                ax.plot(m[:, 0], m[:, 1], ".", ms=1.5, alpha=0.4)
            for rec in trace.predictions:
                if rec.k == k and rec.obstacle == obstacle:
                    seg = np.vstack([trace.records[k].measured[rec.source][obstacle], rec.positions])
                    ax.plot(seg[:, 0], seg[:, 1], "-", lw=1.5, label=f"forecast {rec.source}")
            ax.plot(*obs[k, obstacle, :2], "k*", ms=7)
        uav = trace.uav_positions()
        ax.plot(uav[k, :, 0], uav[k, :, 1], "^", color="C3", label="UAVs")
        ax.set_aspect("equal")
        ax.set_title(f"t = {t[k]:g} s")
        ax.legend(loc="best")
        return _save(fig, path)


def render_report(trace: SimulationTrace, out_dir) -> list:
    out = Path(out_dir)
    paths = [plot_trajectories(trace, out / "trajectories.png")]
    if trace.config.n_obstacles:
        paths.append(plot_prediction_snapshot(trace, out / "prediction_snapshot.png"))
    if not trace.config.prediction_only:
        paths.append(plot_snapshots(trace, out / "snapshots.png"))
        paths.append(plot_obstacle_distances(trace, out / "uav_obstacle_distances.png"))
        if trace.config.n_uavs > 1:
            paths.append(plot_inter_agent_distances(trace, out / "inter_agent_distances.png"))
    return paths
