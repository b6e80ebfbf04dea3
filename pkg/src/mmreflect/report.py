"""PNG figures for training curves, RSSI traces, scheme comparisons, sweeps and heatmaps."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# No timestamps or version strings, so identical data gives identical files.
_PNG_META = {"Software": None}


def _save(fig, path) -> None:
    fig.tight_layout()
    fig.savefig(path, dpi=110, metadata=_PNG_META)
    plt.close(fig)


def plot_learning_curve(rows, path, title: str = "training") -> None:
    ep = np.array([r["episode"] for r in rows])
    reward = np.array([r["mean_reward"] for r in rows])
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(ep, reward, lw=0.8, alpha=0.5, label="episode mean")
    if len(reward) >= 10:
        k = max(len(reward) // 20, 5)
        smooth = np.convolve(reward, np.ones(k) / k, mode="valid")
        ax.plot(ep[k - 1:], smooth, lw=1.8, label=f"{k}-episode average")
    ax.set_xlabel("episode")
    ax.set_ylabel("mean RSSI reward (dBm)")
    ax.set_title(title)
    ax.legend(loc="lower right")
    _save(fig, path)


def plot_traces(reports: dict, path, title: str = "evaluation") -> None:
    """First evaluation run of each report, with its temporal mean as a dashed line."""
    fig, ax = plt.subplots(figsize=(7, 3.8))
    for name, rep in reports.items():
        line, = ax.plot(rep.step_means[0], lw=1.0, label=f"{name} ({rep.mean_dbm:.1f} dBm)")
        ax.axhline(rep.mean_dbm, ls="--", lw=0.8, color=line.get_color())
    ax.set_xlabel("step")
    ax.set_ylabel("mean user RSSI (dBm)")
    ax.set_title(title)
    ax.legend(fontsize=8, loc="lower right")
    _save(fig, path)


def plot_scheme_bars(summaries: list, path) -> None:
    names = [s["scheme"] for s in summaries]
    means = [s["mean_dbm"] for s in summaries]
    stds = [s["std_dbm"] for s in summaries]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.bar(names, means, yerr=stds, capsize=4, color="tab:blue", alpha=0.8)
    ax.set_ylabel("temporal mean RSSI (dBm)")
    ax.set_ylim(min(means) - max(stds) - 10, max(0.0, max(means) + 10))
    _save(fig, path)


def plot_sweep(keys, reports: dict, path, xlabel: str, reference: float | None = None) -> None:
    means = [reports[k].mean_dbm for k in keys]
    stds = [reports[k].std_dbm for k in keys]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.errorbar([str(k) for k in keys], means, yerr=stds, marker="o", capsize=4)
    if reference is not None:
        ax.axhline(reference, ls="--", color="gray", label="flat reflector")
        ax.legend()
    ax.set_xlabel(xlabel)
    ax.set_ylabel("temporal mean RSSI (dBm)")
    _save(fig, path)


def plot_heatmap(values, grid, users, path, title: str = "coverage") -> None:
    xs, ys = grid.axes()
    fig, ax = plt.subplots(figsize=(7, 2.8))
    extent = (xs[0] - grid.step / 2, xs[-1] + grid.step / 2, ys[0] - grid.step / 2, ys[-1] + grid.step / 2)
    im = ax.imshow(np.clip(values, -160, None), origin="lower", extent=extent, cmap="viridis", aspect="equal")
    ax.scatter(users[:, 0], users[:, 1], marker="x", color="red", label="users")
    fig.colorbar(im, ax=ax, label="RSSI (dBm)")
    ax.set_xlabel("x (m)")
    ax.set_ylabel("y (m)")
    ax.set_title(title)
    _save(fig, path)
