"""Deterministic SVG charts of learning curves, scene-count sweeps and finetuning."""
from __future__ import annotations

import csv
from collections import defaultdict
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from pqclab.errors import FormatError  # noqa: E402

METHOD_COLORS = {
    "BatchPQC": "green",
    "OnlinePQC": "blue",
    "OnlinePQC_NoPenalty": "red",
    "OnlinePQC_OneAction": "cyan",
    "OnlinePQC_RelativePenalty": "orange",
    "DAGGER": "black",
    "DQfD_Dagger": "magenta",
    "DQN_OnPolicy": "purple",
    "DQN_Dagger": "grey",
    "ADET": "saddlebrown",
    "Finetune_DQN": "gold",
}
FALLBACK_COLORS = ("tab:olive", "tab:pink", "tab:brown", "tab:gray")


def _save(fig, path) -> None:
    with matplotlib.rc_context({"svg.hashsalt": "pqclab", "svg.fonttype": "path"}):
        fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def color_for(method: str, i: int = 0) -> str:
    return METHOD_COLORS.get(method, FALLBACK_COLORS[i % len(FALLBACK_COLORS)])


def plot_curves(rows: Sequence[dict], path, title: str = "") -> None:
    """Success vs training progress, train and holdout panels, mean over seeds."""
    series: dict[str, dict[float, list]] = defaultdict(lambda: defaultdict(list))
    for r in rows:
        try:
            series[r["method"]][float(r["progress"])].append(
                (float(r["train_success"]), float(r["holdout_success"])))
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"bad metrics row {r!r}") from exc
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.6), sharey=True)
    for k, (ax, name) in enumerate(zip(axes, ("train", "holdout"))):
        for i, method in enumerate(sorted(series)):
            pts = sorted(series[method].items())
            xs = [p for p, _ in pts]
            ys = [sum(v[k] for v in vals) / len(vals) for _, vals in pts]
            ax.plot(xs, ys, color=color_for(method, i), label=method, linewidth=1.5)
        ax.set_title(f"{name} scenes")
        ax.set_xlabel("training progress (epochs or episodes / budget)")
        ax.set_ylim(0, 1.02)
        ax.grid(alpha=0.3)
    axes[0].set_ylabel("success rate")
    if series:
        axes[1].legend(fontsize=7, loc="lower right")
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    _save(fig, path)


def _grouped_bars(groups: Sequence[str], pairs: Sequence[tuple[float, float]],
                  labels: tuple[str, str], colors: tuple[str, str], path, xlabel: str) -> None:
    fig, ax = plt.subplots(figsize=(5, 3.6))
    w = 0.38
    xs = range(len(groups))
    ax.bar([x - w / 2 for x in xs], [p[0] for p in pairs], w, color=colors[0], label=labels[0])
    ax.bar([x + w / 2 for x in xs], [p[1] for p in pairs], w, color=colors[1], label=labels[1])
    ax.set_xticks(list(xs))
    ax.set_xticklabels(groups)
    ax.set_xlabel(xlabel)
    ax.set_ylabel("success rate")
    ax.set_ylim(0, 1.02)
    if groups:
        ax.legend(fontsize=8)
    fig.tight_layout()
    _save(fig, path)


def _read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def plot_sweep(path_csv, path_svg) -> None:
    """Train (blue) vs holdout (red) success per training-scene count, mean over seeds."""
    acc: dict[int, list] = defaultdict(list)
    for r in _read_csv(path_csv):
        try:
            acc[int(r["scenes"])].append((float(r["train_success"]), float(r["holdout_success"])))
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"bad sweep row {r!r}") from exc
    counts = sorted(acc)
    pairs = [tuple(sum(v[k] for v in acc[n]) / len(acc[n]) for k in (0, 1)) for n in counts]
    _grouped_bars([str(n) for n in counts], pairs, ("train", "holdout"), ("blue", "red"),
                  path_svg, "training scenes")


def plot_finetune(path_csvs: Sequence, path_svg) -> None:
    """Before (red) vs after (yellow) finetuning, per evaluated set, mean over files."""
    acc: dict[str, dict[str, list]] = defaultdict(lambda: defaultdict(list))
    for p in path_csvs:
        for r in _read_csv(p):
            if r.get("scene_id") != "all":
                continue
            when, _, which = r["tag"].partition("_")
            if when not in ("before", "after"):
                raise FormatError(f"unexpected report tag {r['tag']!r}")
            acc[which][when].append(float(r["success_rate"]))
    groups = sorted(acc)
    pairs = [tuple(sum(acc[g][w]) / max(len(acc[g][w]), 1) for w in ("before", "after"))
             for g in groups]
    _grouped_bars(groups, pairs, ("before", "after"), ("red", "gold"), path_svg, "scene set")
