"""Deterministic report artifacts: JSON metrics, delimited tables, and the
matplotlib figures rendered next to them.

Metric JSON files contain no timestamps or wall-clock values so a rerun with
the same seed and config is byte-identical; timing goes to a separate file.
"""

from __future__ import annotations

import csv
import json
import os

import numpy as np

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        v = float(obj)
        return v if np.isfinite(v) else repr(v)
    if isinstance(obj, float) and not np.isfinite(obj):
        return repr(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def write_json(path, obj):
    """Stable-key JSON; numpy scalars/arrays converted, non-finite stringified."""
    with open(path, "w") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_table(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(float(v)) if isinstance(v, (float, np.floating))
                             else v for v in row])


def ensure_dir(path):
    os.makedirs(path, exist_ok=True)
    return path


# ---------------------------------------------------------------------------
# Figures
# ---------------------------------------------------------------------------

def render_history(history, path):
    """Train/validation loss curves for one run."""
    fig, ax = plt.subplots(figsize=(6, 4))
    epochs = np.arange(len(history.train_loss))
    ax.plot(epochs, history.train_loss, label="train loss")
    ax.plot(epochs, history.val_loss, label="val loss")
    if history.best_epoch >= 0:
        ax.axvline(history.best_epoch, color="gray", ls="--", lw=0.8,
                   label=f"best epoch {history.best_epoch}")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_robustness(curves, path):
    """W1(clean, perturbed) against integration depth, one line per kind."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for curve in curves:
        w1 = np.asarray(curve.w1, dtype=np.float64)
        se = np.asarray(curve.se, dtype=np.float64)
        label = f"{curve.kind} (rho={curve.rho}, spearman={curve.spearman:.2f})"
        ax.errorbar(curve.depths, w1, yerr=se, marker="o", capsize=3,
                    label=label)
    ax.set_xlabel("integration depth T")
    ax.set_ylabel("sliced W1 between readouts")
    ax.set_yscale("log")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_convergence(results, path):
    """log-log strong error vs step size with fitted slopes per scheme."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for scheme, (slope, pairs) in results.items():
        dts = [p[0] for p in pairs]
        errs = [p[1] for p in pairs]
        ax.loglog(dts, errs, marker="o", label=f"{scheme} (slope {slope:.2f})")
    ax.set_xlabel("step size dt")
    ax.set_ylabel("strong error at T")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_diffusion_comparison(results, path):
    """Per-epoch test loss for each diffusion variant; aborts marked."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for variant, res in results.items():
        losses = res["test_loss"]
        label = variant + (" (aborted)" if res["aborted"] else "")
        if losses:
            ax.plot(np.arange(len(losses)), losses, label=label)
        else:
            ax.plot([], [], label=label)
    ax.set_xlabel("epoch")
    ax.set_ylabel("test loss")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_missing_sweep(tables, path):
    """Accuracy vs missing rate, one line per model kind."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for kind, table in tables.items():
        rates = sorted(table)
        means = [table[r]["mean"] for r in rates]
        sds = [table[r]["sd"] for r in rates]
        ax.errorbar(rates, means, yerr=sds, marker="o", capsize=3, label=kind)
    ax.set_xlabel("missing rate")
    ax.set_ylabel("test accuracy")
    ax.set_ylim(0.0, 1.05)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
