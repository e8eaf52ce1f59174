"""Figures for the report path; every function writes a file and returns its path."""

from __future__ import annotations

from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

plt.rcParams["figure.figsize"] = (5.0, 3.2)
plt.rcParams["figure.dpi"] = 150
plt.rcParams["savefig.bbox"] = "tight"
plt.rcParams["font.size"] = 9
plt.rcParams["axes.spines.top"] = False
plt.rcParams["axes.spines.right"] = False

__all__ = ["plot_accuracy", "plot_round_ratio", "plot_score_histograms", "plot_kv_correlation"]


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path)
    plt.close(fig)
    return path


def _label(m) -> str:
    return f"{m.selector}/{m.metric}" if m.metric else m.selector


def _by_label(runs):
    groups = defaultdict(list)
    for m in runs:
        groups[_label(m)].append(m)
    return groups


def plot_accuracy(runs, path, field: str = "test_acc") -> Path:
    """Mean accuracy curve per selector, with a band of +/- one std over seeds."""
    fig, ax = plt.subplots()
    for label, ms in sorted(_by_label(runs).items()):
        steps = [r.step for r in ms[0].evals]
        curves = np.array([[getattr(r, field) for r in m.evals] for m in ms if len(m.evals) == len(steps)])
        mu, sd = curves.mean(axis=0), curves.std(axis=0)
        ax.plot(steps, mu, label=label)
        ax.fill_between(steps, mu - sd, mu + sd, alpha=0.2)
    ax.set_xlabel("step")
    ax.set_ylabel(field.replace("_", " "))
    ax.legend(frameon=False)
    return _save(fig, path)


def plot_round_ratio(runs, path, field: str = "corrupted_ratio") -> Path:
    """Per-round selection ratio, averaged over seeds; rounds with no value are skipped."""
    fig, ax = plt.subplots()
    for label, ms in sorted(_by_label(runs).items()):
        per_round = defaultdict(list)
        for m in ms:
            for r in m.rounds:
                v = getattr(r, field)
                if v is not None:
                    per_round[r.round_index].append(v)
        if not per_round:
            continue
        xs = sorted(per_round)
        ax.plot(xs, [np.mean(per_round[x]) for x in xs], marker="o", label=label)
    ax.set_xlabel("selection round")
    ax.set_ylabel(field.replace("_", " "))
    ax.set_ylim(-0.02, 1.02)
    ax.legend(frameon=False)
    return _save(fig, path)


def plot_score_histograms(clean: dict, corrupted: dict, path, bins: int = 30) -> Path:
    """One panel per metric: score distributions of clean versus corrupted candidates."""
    metrics = list(clean)
    fig, axes = plt.subplots(1, len(metrics), figsize=(5.0 * len(metrics), 3.2), squeeze=False)
    for ax, metric in zip(axes[0], metrics):
        name = getattr(metric, "value", str(metric))
        both = np.concatenate([clean[metric], corrupted[metric]])
        edges = np.histogram_bin_edges(both, bins=bins) if both.size else bins
        ax.hist(clean[metric], bins=edges, alpha=0.6, label="clean")
        ax.hist(corrupted[metric], bins=edges, alpha=0.6, label="corrupted")
        ax.set_title(name.lower().replace("_", " "))
        ax.set_xlabel("alignment score")
        ax.legend(frameon=False)
    axes[0][0].set_ylabel("candidates")
    return _save(fig, path)


def plot_kv_correlation(results, path) -> Path:
    """Pearson correlation of repeated score estimates against the rollout count.

    ``results`` is a list of repeats, each a list of ``KvCorrelation``.
    """
    fig, ax = plt.subplots()
    for i, rep in enumerate(results):
        xs = [r.k_v for r in rep if r.correlation is not None]
        ys = [r.correlation for r in rep if r.correlation is not None]
        ax.plot(xs, ys, marker="o", alpha=0.7, label=f"repeat {i}")
    ax.set_xscale("log", base=2)
    ax.set_xlabel("rollouts per problem (k_v)")
    ax.set_ylabel("Pearson correlation")
    ax.legend(frameon=False)
    return _save(fig, path)
