"""Delimited result tables and figures for grid and training runs."""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.figsize": (4.8, 3.2),
    "savefig.dpi": 120,
}

INIT_LABELS = {"scratch": "SC"}


def ratio_label(r: float) -> str:
    return f"{r * 100:g}%"


def _fmt(stat: dict, scale: float) -> str:
    if stat is None or stat.get("mean") is None:
        return "n/a"
    mean = stat["mean"] * scale
    if stat.get("std") is None:
        return f"{mean:.2f}"
    return f"{mean:.2f} ± {stat['std'] * scale:.2f}"


def grid_table(aggregate: list[dict], metric: str = "auc", scale: float = 100.0) -> list[list[str]]:
    """Rows = initialisations, columns = label ratios, cells = mean ± std.

    When a scratch row is present, a gain row per pre-trained init follows
    with the difference of means.
    """
    ratios = sorted({row["ratio"] for row in aggregate})
    inits = list(dict.fromkeys(row["init"] for row in aggregate))
    cell = {(row["init"], row["ratio"]): row[metric] for row in aggregate}
    table = [["init"] + [ratio_label(r) for r in ratios]]
    for init in inits:
        table.append([INIT_LABELS.get(init, init)] + [_fmt(cell.get((init, r)), scale) for r in ratios])
    if "scratch" in inits:
        for init in inits:
            if init == "scratch":
                continue
            row = [f"gain {init}"]
            for r in ratios:
                a, b = cell.get((init, r)), cell.get(("scratch", r))
                if a and b and a.get("mean") is not None and b.get("mean") is not None:
                    row.append(f"{(a['mean'] - b['mean']) * scale:+.2f}")
                else:
                    row.append("n/a")
            table.append(row)
    return table


def write_delimited(rows: list[list[str]], path: str | Path, delimiter: str = "\t") -> None:
    with open(path, "w", newline="") as fh:
        csv.writer(fh, delimiter=delimiter, lineterminator="\n").writerows(rows)


def read_delimited(path: str | Path, delimiter: str = "\t") -> list[list[str]]:
    with open(path, newline="") as fh:
        return list(csv.reader(fh, delimiter=delimiter))


def savefig(fig, path: str | Path) -> None:
    # fixed metadata keeps PNG bytes reproducible
    fig.savefig(path, bbox_inches="tight", pad_inches=0.05, metadata={"Software": None})
    plt.close(fig)


def plot_label_ratio(aggregate: list[dict], path: str | Path, metric: str = "auc", scale: float = 100.0) -> None:
    """Metric against label ratio, one line per initialisation, std as error bars."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        inits = list(dict.fromkeys(row["init"] for row in aggregate))
        for init in inits:
            rows = sorted((r for r in aggregate if r["init"] == init and r[metric]["mean"] is not None),
                          key=lambda r: r["ratio"])
            if not rows:
                continue
            xs = [r["ratio"] * 100 for r in rows]
            ys = [r[metric]["mean"] * scale for r in rows]
            es = [(r[metric]["std"] or 0.0) * scale for r in rows]
            ax.errorbar(xs, ys, yerr=es, marker="o", ms=4, capsize=3, label=INIT_LABELS.get(init, init))
        ax.set_xscale("log")
        ax.set_xlabel("labelled training nodes (%)")
        ax.set_ylabel(f"test {metric.upper()} (×{scale:g})" if scale != 1 else f"test {metric.upper()}")
        ax.legend(frameon=False)
        savefig(fig, path)


def plot_training_curves(epochs: list[dict], path: str | Path, title: str = "") -> None:
    """Training loss and, when present, the validation selection metric per epoch."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        xs = [e["epoch"] for e in epochs if e.get("loss") is not None]
        ax.plot(xs, [e["loss"] for e in epochs if e.get("loss") is not None], color="C0", label="train loss")
        ax.set_xlabel("epoch")
        ax.set_ylabel("loss")
        vals = [(e["epoch"], _val_score(e)) for e in epochs]
        vals = [(x, v) for x, v in vals if v is not None]
        if vals:
            ax2 = ax.twinx()
            ax2.plot([x for x, _ in vals], [v for _, v in vals], color="C1", label="validation")
            ax2.set_ylabel("validation score")
            ax2.spines["top"].set_visible(False)
        if title:
            ax.set_title(title)
        savefig(fig, path)


def _val_score(e: dict):
    val = e.get("val")
    if not isinstance(val, dict):
        return None
    if "score" in val:
        return val["score"]
    return val.get("auc") if val.get("auc") is not None else val.get("acc")
