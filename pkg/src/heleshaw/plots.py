"""Headless SVG plots of run diagnostics.

All figures are written as standalone SVG files through the Agg-free
``svg`` backend; no display is ever required.  Data behind every figure
is also written as CSV by the callers so plots can be re-derived.
"""
from __future__ import annotations

import matplotlib

matplotlib.use("svg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)
import numpy as np  # noqa: E402

matplotlib.rcParams["svg.hashsalt"] = "heleshaw"

__all__ = ["plot_scalar_series", "plot_mode_decay", "plot_bench"]


def _save(fig, path):
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def plot_scalar_series(path, t, values, ylabel, title, reference=None):
    fig, ax = plt.subplots(figsize=(5.2, 3.4), constrained_layout=True)
    ax.plot(t, values, "k-", lw=1.2)
    if reference is not None:
        ax.axhline(reference, color="tab:orange", lw=0.8, ls="--")
    ax.set_xlabel("t")
    ax.set_ylabel(ylabel)
    ax.set_title(title, fontsize=10)
    _save(fig, path)


def plot_mode_decay(path, series, predictions, title):
    """Log-magnitude mode amplitudes vs time with predicted slopes.

    ``series``: dict label -> (t, amplitude); ``predictions``: dict
    label -> decay rate (the straight reference lines).
    """
    fig, ax = plt.subplots(figsize=(5.6, 3.8), constrained_layout=True)
    colors = plt.cm.viridis(np.linspace(0.0, 0.85, max(len(series), 1)))
    for color, (label, (t, amp)) in zip(colors, sorted(series.items())):
        mag = np.abs(amp)
        keep = mag > 0
        ax.semilogy(t[keep], mag[keep], ".", ms=3, color=color, label=label)
        rate = predictions.get(label)
        if rate is not None and np.any(keep):
            a0 = mag[keep][0]
            t0 = t[keep][0]
            ax.semilogy(t, a0 * np.exp(rate * (t - t0)), "-", lw=0.9, color=color,
                        label=f"{label} predicted ({rate:g})")
    ax.set_xlabel("t")
    ax.set_ylabel("|mode amplitude|")
    ax.set_title(title, fontsize=10)
    ax.legend(fontsize=7, loc="best")
    _save(fig, path)


def plot_bench(path, rows):
    """Per-step wall time by scheme; unstable schemes hatched."""
    fig, ax = plt.subplots(figsize=(5.2, 3.4), constrained_layout=True)
    names = [r["scheme"] for r in rows]
    times = [1e3 * r["wall_per_step"] for r in rows]
    hatches = ["//" if r["unstable"] else "" for r in rows]
    bars = ax.bar(names, times, color="tab:blue")
    for bar, h, r in zip(bars, hatches, rows):
        bar.set_hatch(h)
        if r["unstable"]:
            bar.set_color("tab:red")
    ax.set_ylabel("wall time per step [ms]")
    ax.set_title("scheme cost (hatched red = unstable)", fontsize=10)
    _save(fig, path)
