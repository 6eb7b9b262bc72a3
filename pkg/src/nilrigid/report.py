"""Report emission: machine JSON, fixed-column CSV, and rendered figures.

Every artifact starts with a header recording the seed and working precision
so runs are reproducible from the outputs alone.  Figures are rendered with
the non-interactive Agg backend and written next to the delimited output.
"""

from __future__ import annotations

import csv
import json
import os
from fractions import Fraction

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

VERSION = "0.1.0"


def run_header(config):
    return {
        "tool": "nilrigid",
        "version": VERSION,
        "command": config.command,
        "seed": config.seed,
        "precision_bits": config.precision_bits,
    }


def _jsonable(obj):
    if isinstance(obj, Fraction):
        return str(obj)
    if isinstance(obj, dict):
        return {_key(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if hasattr(obj, "__dataclass_fields__"):
        return {
            k: _jsonable(getattr(obj, k)) for k in obj.__dataclass_fields__
        }
    if isinstance(obj, (int, float, str, bool)) or obj is None:
        return obj
    return str(obj)


def _key(k):
    if isinstance(k, tuple):
        return ",".join(str(v) for v in k)
    return str(k)


def write_json(path, config, payload):
    doc = {"header": run_header(config), **_jsonable(payload)}
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def write_csv(path, config, columns, rows):
    """Fixed-column CSV; the header block rides in leading comment lines."""
    with open(path, "w", newline="") as fh:
        hdr = run_header(config)
        fh.write(f"# nilrigid {hdr['version']} {hdr['command']}\n")
        fh.write(f"# seed={hdr['seed']} precision_bits={hdr['precision_bits']}\n")
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow(row)
    return path


def ensure_out_dir(path):
    os.makedirs(path, exist_ok=True)
    return path


def figure_entropy(path, entropy_table, rank):
    """Haar-entropy enclosures over the n-box."""
    fig, ax = plt.subplots(figsize=(7, 4))
    items = [(n, v) for n, v in sorted(entropy_table.items()) if v is not None]
    if rank == 1:
        xs = [n[0] for n, _ in items]
        mids = [(v[0] + v[1]) / 2 for _, v in items]
        ax.plot(xs, mids, "o-")
        ax.set_xlabel("n")
    else:
        labels = [",".join(str(c) for c in n) for n, _ in items]
        mids = [(v[0] + v[1]) / 2 for _, v in items]
        ax.bar(range(len(items)), mids)
        step = max(1, len(items) // 24)
        ax.set_xticks(range(0, len(items), step))
        ax.set_xticklabels(labels[::step], rotation=90, fontsize=6)
        ax.set_xlabel("n (box order)")
    ax.set_ylabel("Haar entropy")
    ax.set_title("Haar entropy over the iterate box")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def figure_equivariance(path, per_n, n_range):
    """Per-iterate max rounding error as a heatmap over the n-grid."""
    import numpy as np

    side = 2 * n_range + 1
    grid = np.zeros((side, side))
    for (n1, n2), err in per_n.items():
        grid[n2 + n_range, n1 + n_range] = err
    fig, ax = plt.subplots(figsize=(5.5, 4.5))
    im = ax.imshow(
        grid, origin="lower",
        extent=(-n_range - 0.5, n_range + 0.5, -n_range - 0.5, n_range + 0.5),
    )
    fig.colorbar(im, ax=ax, label="max error")
    ax.set_xlabel("n1")
    ax.set_ylabel("n2")
    ax.set_title("Conjugation-identity error per iterate")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def figure_character_sums(path, y_sums, threshold):
    fig, ax = plt.subplots(figsize=(7, 4))
    items = sorted(y_sums.items())
    ax.bar(range(len(items)), [v for _, v in items])
    ax.axhline(threshold, color="red", linestyle="--",
               label=f"threshold {threshold}")
    step = max(1, len(items) // 30)
    ax.set_xticks(range(0, len(items), step))
    ax.set_xticklabels(
        [",".join(str(c) for c in k) for k, _ in items][::step],
        rotation=90, fontsize=6,
    )
    ax.set_ylabel("|mean e(k·y)|")
    ax.set_title("Character sums of the second-torus marginal")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def figure_drift_sweep(path, rows, slope, target):
    """Log-log drift envelope against scale, with the fitted slope."""
    fig, ax = plt.subplots(figsize=(6, 4.5))
    xs = [r[0] for r in rows if r[2] > 0]
    ys = [r[2] for r in rows if r[2] > 0]
    ax.loglog(xs, ys, "o-", label=f"fit slope {slope:.4f}")
    if xs:
        ref = [ys[0] * (x / xs[0]) ** target for x in xs]
        ax.loglog(xs, ref, "--", label=f"reference slope {target:.4f}")
    ax.set_xlabel("|v|")
    ax.set_ylabel("max |w_perp| on [0, T]")
    ax.set_title("Drift envelope vs vector size")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
