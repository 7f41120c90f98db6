"""Matplotlib rendering of error tables, saved next to the CSV reports."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def render_error_table(table, png_path, title=None):
    """Grouped bar chart: one group per attack, one bar per (model, defense)."""
    attacks = sorted({a for _, _, a, _ in table.rows()})
    row_keys = sorted(table.cells)
    if not attacks or not row_keys:
        fig, ax = plt.subplots(figsize=(4, 3))
        ax.set_title(title or "empty table")
        fig.savefig(png_path, dpi=120)
        plt.close(fig)
        return
    width = 0.8 / len(row_keys)
    xs = np.arange(len(attacks))
    fig, ax = plt.subplots(figsize=(1.8 + 1.4 * len(attacks), 4))
    for i, key in enumerate(row_keys):
        rates = [table.cells[key].get(a, np.nan) for a in attacks]
        ax.bar(xs + i * width, rates, width, label=f"{key[0]}/{key[1]}")
    ax.set_xticks(xs + 0.4 - width / 2)
    ax.set_xticklabels(attacks)
    ax.set_ylabel("error rate")
    ax.set_ylim(0, 1)
    if title:
        ax.set_title(title)
    ax.legend(fontsize=7, loc="upper right")
    fig.tight_layout()
    fig.savefig(png_path, dpi=120)
    plt.close(fig)


def render_training_log(log, png_path, title=None):
    """Per-level loss curves from a cascade training log."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for level in log.get("levels", []):
        ax.plot(level["losses"], label=f"level {level['level']} ({level['attack']})")
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean batch loss")
    if title:
        ax.set_title(title)
    if log.get("levels"):
        ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(png_path, dpi=120)
    plt.close(fig)
