"""Static figures for trajectories and potential profiles."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .potential import v_eval, v_prime  # noqa: E402

STYLE = {
    "figure.figsize": (6.0, 3.6),
    "axes.grid": True,
    "grid.alpha": 0.3,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "legend.fontsize": 8,
    "svg.hashsalt": "platoon",  # stable element ids across runs
}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, metadata={"Date": None})
    plt.close(fig)
    return path


def _lines(ax, t, Y, label_fmt, first):
    for j in range(Y.shape[1]):
        ax.plot(t, Y[:, j], lw=1.2, label=label_fmt.format(j + first))
    ax.legend(ncol=2, frameon=False)


def plot_trajectory(traj, out_dir, fmt="svg", lam=None):
    """Write spacing, acceleration and speed figures; returns their paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    t = traj.times
    paths = []
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        _lines(ax, t, traj.spacings, "$s_{{{}}}$", 2)
        if lam is not None:
            ax.axhline(lam, color="k", ls=":", lw=0.8)
        ax.set(xlabel="time [s]", ylabel="inter-vehicle distance [m]")
        paths.append(_save(fig, out_dir / f"spacings.{fmt}"))

        fig, ax = plt.subplots()
        _lines(ax, t, traj.forces, "$F_{{{}}}$", 1)
        ax.set(xlabel="time [s]", ylabel="acceleration [m/s$^2$]")
        paths.append(_save(fig, out_dir / f"accelerations.{fmt}"))

        fig, ax = plt.subplots()
        _lines(ax, t, traj.speeds, "$v_{{{}}}$", 1)
        ax.set(xlabel="time [s]", ylabel="speed [m/s]")
        paths.append(_save(fig, out_dir / f"speeds.{fmt}"))
    return paths


def plot_potentials(specs, labels, out_path, s_max=None):
    """Potential values and slopes for several specs on shared axes."""
    with plt.rc_context(STYLE):
        fig, (ax0, ax1) = plt.subplots(1, 2, figsize=(10, 3.6))
        for spec, label in zip(specs, labels):
            s = np.linspace(spec.L + 0.5, s_max or spec.lam + 2, 2000)
            ax0.plot(s, v_eval(s, spec), label=label)
            ax1.plot(s, v_prime(s, spec), label=label)
        ax0.set(xlabel="spacing [m]", ylabel="V", yscale="symlog")
        ax1.set(xlabel="spacing [m]", ylabel="V' [m/s$^2$]")
        ax1.set_yscale("symlog", linthresh=1.0)
        ax0.legend(frameon=False)
        return _save(fig, out_path)
