"""Matplotlib rendering of the report tables, written next to the CSVs.

Everything goes through the Agg backend with fixed PNG metadata so that
identical inputs produce identical bytes.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)
import numpy as np  # noqa: E402

from .pipeline import read_csv  # noqa: E402

_SAVE_KWARGS = {"dpi": 120, "metadata": {"Software": "dememlab"}}


def _columns(path) -> dict[str, list[str]]:
    header, rows = read_csv(Path(path))
    return {name: [row[i] for row in rows] for i, name in enumerate(header)}


def _floats(values: list[str]) -> np.ndarray:
    return np.array([float(v) if v else np.nan for v in values])


def _tpr_columns(header: dict[str, list[str]]) -> list[str]:
    return sorted(c for c in header if c.startswith("tpr_at_") and c.endswith("_mean"))


def _save(fig, path) -> None:
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KWARGS)
    plt.close(fig)


def render_method_figure(methods_csv, path) -> None:
    """Accuracy and leakage bars per training method (comparison-table analog)."""
    cols = _columns(methods_csv)
    primary = "lira_online" if "lira_online" in cols["attack_name"] else cols["attack_name"][0]
    keep = [i for i, a in enumerate(cols["attack_name"]) if a == primary]
    labels = [cols["label"][i] for i in keep]
    nat = _floats(cols["nat_acc_mean"])[keep]
    rob = _floats(cols["rob_acc_mean"])[keep]
    tpr_cols = _tpr_columns(cols)

    fig, (ax_acc, ax_tpr) = plt.subplots(1, 2, figsize=(9, 3.6))
    x = np.arange(len(labels))
    width = 0.38
    ax_acc.bar(x - width / 2, nat, width, label="natural")
    ax_acc.bar(x + width / 2, rob, width, label="robust")
    ax_acc.set_xticks(x, labels, rotation=20, ha="right")
    ax_acc.set_ylabel("accuracy")
    ax_acc.set_ylim(0, 1)
    ax_acc.legend(fontsize=8)

    n = len(tpr_cols)
    for j, col in enumerate(tpr_cols):
        fpr = col[len("tpr_at_"):-len("_mean")]
        offset = (j - (n - 1) / 2) * 0.8 / max(n, 1)
        ax_tpr.bar(x + offset, _floats(cols[col])[keep], 0.8 / max(n, 1),
                   label=f"TPR@{fpr}")
    ax_tpr.set_xticks(x, labels, rotation=20, ha="right")
    ax_tpr.set_ylabel(f"TPR ({primary})")
    ax_tpr.legend(fontsize=8)
    _save(fig, path)


def render_bin_figure(bins_csv, path) -> None:
    """Leakage and test accuracy across memorization bins (per-bin analog)."""
    cols = _columns(bins_csv)
    labels = sorted(set(cols["label"]))
    fig, (ax_tpr, ax_acc) = plt.subplots(1, 2, figsize=(9, 3.6))
    for label in labels:
        idx = [i for i, v in enumerate(cols["label"]) if v == label]
        bins = _floats([cols["bin_index"][i] for i in idx])
        tpr = _floats([cols["tpr_mean"][i] for i in idx])
        acc = _floats([cols["test_acc_mean"][i] for i in idx])
        order = np.argsort(bins)
        ax_tpr.plot(bins[order], tpr[order], marker="o", ms=3, label=label)
        ax_acc.plot(bins[order], acc[order], marker="o", ms=3, label=label)
    ax_tpr.set_xlabel("memorization bin")
    ax_tpr.set_ylabel("per-bin TPR")
    ax_acc.set_xlabel("memorization bin")
    ax_acc.set_ylabel("per-bin test accuracy")
    ax_tpr.legend(fontsize=8)
    _save(fig, path)


def render_sweep_figure(sweep_csv, path) -> None:
    """Leakage and robust accuracy against the swept parameter."""
    cols = _columns(sweep_csv)
    param = cols["sweep_param"][0] if cols["sweep_param"] else "value"
    tpr_col = _tpr_columns(cols)[0]
    methods = sorted(set(cols["method"]))
    fig, (ax_tpr, ax_rob) = plt.subplots(1, 2, figsize=(9, 3.6))
    for method in methods:
        idx = [i for i, v in enumerate(cols["method"]) if v == method]
        raw = [cols["sweep_value"][i] for i in idx]
        try:
            x = np.array([float(v) for v in raw])
        except ValueError:
            x = np.arange(len(raw), dtype=float)
        tpr = _floats([cols[tpr_col][i] for i in idx])
        rob = _floats([cols["rob_acc_mean"][i] for i in idx])
        order = np.argsort(x)
        ax_tpr.plot(x[order], tpr[order], marker="o", ms=4, label=method)
        ax_rob.plot(x[order], rob[order], marker="o", ms=4, label=method)
    fpr = tpr_col[len("tpr_at_"):-len("_mean")]
    ax_tpr.set_xlabel(param)
    ax_tpr.set_ylabel(f"TPR@{fpr}")
    ax_rob.set_xlabel(param)
    ax_rob.set_ylabel("robust accuracy")
    ax_tpr.legend(fontsize=8)
    _save(fig, path)
