"""Figure rendering for the CLI reports.  CSV stays the contract; these are
thin views over the same rows, written next to them."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .meanfield import supermarket_tail  # noqa: E402

RC = {
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "svg.hashsalt": "elephant-sketch",
}


def new_figure(width=4.5, height=3.0):
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(width, height))
    return fig, ax


def save(fig, path) -> None:
    with plt.rc_context(RC):
        fig.tight_layout()
        fig.savefig(path, metadata={"Date": None} if str(path).endswith(".svg") else None)
    plt.close(fig)


def plot_sweep(rows, path) -> None:
    fig, ax = new_figure()
    r = [row.r for row in rows]
    ax.plot(r, [row.fpr for row in rows], "o-", label="false positive rate")
    ax.plot(r, [row.fnr for row in rows], "s-", label="false negative rate")
    ax.plot(r, [row.fluid_fp_bound for row in rows], "k--", lw=1, label="fluid bound")
    ax.set_xlabel("refresh threshold r")
    ax.set_ylabel("rate")
    ax.legend(frameon=False)
    save(fig, path)


def plot_wbar(wbar, path, d: int = 2, rho: float | None = None) -> None:
    """Pre-refresh tails on a log scale, optionally against the supermarket
    fixed point at load ``rho``."""
    k = np.arange(wbar.kmax + 1)
    tails = np.array([wbar.tail(int(i)) for i in k])
    fig, ax = new_figure()
    keep = tails > 0
    ax.semilogy(k[keep], tails[keep], "o-", label="pre-refresh tail")
    if rho is not None:
        ref = np.array([supermarket_tail(rho, d, int(i)) for i in k])
        keep = ref > 1e-300
        ax.semilogy(k[keep], ref[keep], "k:", label=f"supermarket, rho={rho:g}")
    ax.set_xlabel("counter value k")
    ax.set_ylabel("fraction of counters >= k")
    ax.legend(frameon=False)
    save(fig, path)


def plot_gaps(stats, path) -> None:
    idx = np.asarray(stats.refresh_packet_indices)
    fig, ax = new_figure()
    if len(idx) > 1:
        ax.plot(np.arange(1, len(idx)), np.diff(idx), ".-")
    ax.set_xlabel("refresh number")
    ax.set_ylabel("packets since previous refresh")
    save(fig, path)
