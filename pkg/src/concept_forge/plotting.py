"""SVG figures for training histories and result grids."""
import csv
from collections import defaultdict

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def _read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _save(fig, out_path, provenance):
    meta = {"Title": "concept-forge figure"}
    if provenance:
        meta["Description"] = " ".join(f"{k}={v}" for k, v in sorted(provenance.items()))
    fig.savefig(out_path, format="svg", metadata=meta)
    plt.close(fig)


def plot_history(rows, out_path, provenance=None):
    """Loss curves from history rows (``epoch``, ``total_loss``, ``ce_loss``, ``l1_loss``)."""
    epochs = [int(r["epoch"]) for r in rows]
    fig, ax = plt.subplots(figsize=(6, 4))
    for key in ("total_loss", "ce_loss", "l1_loss"):
        ax.plot(epochs, [float(r[key]) for r in rows], label=key)
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.legend()
    _save(fig, out_path, provenance)


def plot_results(rows, out_path, provenance=None):
    """Scatter of per-seed R² and MCC for every grid row."""
    groups = defaultdict(list)
    for r in rows:
        if r.get("status", "ok") == "ok" and r["r2"] != "":
            groups[f'{r["mixing"]} {r["n"]}/{r["d_z"]}/{r["d_x"]}'].append(r)
    fig, ax = plt.subplots(figsize=(7, 4))
    labels = list(groups)
    for x, label in enumerate(labels):
        cells = groups[label]
        ax.scatter([x - 0.1] * len(cells), [float(c["r2"]) for c in cells], color="C0",
                   label="R2" if x == 0 else None)
        ax.scatter([x + 0.1] * len(cells), [float(c["mcc"]) for c in cells], color="C1",
                   marker="s", label="MCC" if x == 0 else None)
    ax.set_xticks(range(len(labels)))
    ax.set_xticklabels(labels, rotation=20)
    ax.set_ylim(0, 1.05)
    if labels:
        ax.legend()
    _save(fig, out_path, provenance)


def plot_file(in_path, out_path, provenance=None):
    """Pick the chart type from the CSV header."""
    rows = _read_rows(in_path)
    with open(in_path, newline="") as fh:
        header = next(csv.reader(fh), [])
    if "total_loss" in header:
        plot_history(rows, out_path, provenance)
    elif "mcc" in header:
        plot_results(rows, out_path, provenance)
    else:
        raise ValueError(f"{in_path}: neither a history nor a results CSV")
