"""Figure rendering for solve and trajectory reports.

Renders the standard diagnostic views next to the delimited output when
asked: per-mode phase portraits with markers at t = 0, 10, 20, and the
semilog convergence profile of the three iteration errors. Files are PNG;
everything goes through the Agg backend so no display is needed.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

MARKER_TIMES = (0.0, 10.0, 20.0)


def plot_phase_portraits(traj, path, title=None) -> None:
    n = traj.states.shape[1]
    fig, axes = plt.subplots(1, n, figsize=(4.2 * n, 4.0))
    if n == 1:
        axes = [axes]
    for j, ax in enumerate(axes):
        x = traj.coords[:, j, 0]
        y = traj.coords[:, j, 1]
        ax.plot(x, y, lw=0.7, color="tab:blue")
        for tm, marker, color in zip(MARKER_TIMES, ("o", "s", "^"), ("k", "tab:red", "tab:green")):
            if tm <= traj.times[-1] + 1e-12:
                i = int(np.argmin(np.abs(traj.times - tm)))
                ax.plot([x[i]], [y[i]], marker=marker, color=color, ms=6, label=f"t={tm:g}")
        ax.set_xlabel(f"$x_{{{j}}}$")
        ax.set_ylabel(f"$y_{{{j}}}$")
        ax.set_aspect("equal", adjustable="datalim")
        ax.legend(fontsize=8, loc="best")
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_convergence(history, path, title=None) -> None:
    rs = [rec.r for rec in history]
    fig, axes = plt.subplots(1, 3, figsize=(12.0, 3.6))
    panels = [
        ("coefficient step", [rec.step_norm for rec in history]),
        ("frequency step", [rec.freq_step for rec in history]),
        ("state step at t=10", [rec.state_step_at_t for rec in history]),
    ]
    for ax, (label, vals) in zip(axes, panels):
        positive = [max(v, 1e-300) for v in vals]
        ax.semilogy(rs, positive, "o-", lw=1.0)
        ax.set_xlabel("iteration")
        ax.set_title(label, fontsize=10)
        ax.grid(True, which="both", alpha=0.3)
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
