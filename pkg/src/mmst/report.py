"""Delimited reports and the figures rendered next to them.

All CSV output uses a fixed float format and deterministic row order
so identical runs produce identical bytes.  Figures go through the Agg
backend straight to files (SVG by default); artists carry ``gid``
attributes so the structure of an overlay is inspectable in the file.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .raster import LAYER_TYPES, Polygon, Polyline

matplotlib.rcParams["svg.hashsalt"] = "mmst"
_SVG_META = {"Date": None}

_LAYER_COLORS = {"road_segment": "#bbbbbb", "drivable_area": "#dddddd",
                 "lane": "#7799cc", "walkway": "#cc9977"}


def fmt_float(v) -> str:
    if isinstance(v, float):
        return format(v, ".9g")
    return str(v)


def write_csv(path: str | Path, rows: list[dict], columns: list[str]) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(fmt_float(row[c]) for c in columns) + "\n")


def _save(fig, path: str | Path) -> None:
    fig.savefig(path, metadata=_SVG_META if str(path).endswith(".svg") else None)
    plt.close(fig)


def plot_metric_curves(rows: list[dict], path: str | Path,
                       title: str = "displacement error vs k",
                       group_key: str | None = None) -> None:
    """minADE/minFDE against k, log-2 x axis, one line pair per group."""
    fig, ax = plt.subplots(figsize=(6, 4))
    groups = {}
    for row in rows:
        groups.setdefault(row.get(group_key, "") if group_key else "",
                          []).append(row)
    for label, grp in sorted(groups.items()):
        grp = sorted(grp, key=lambda r: r["k"])
        ks = [r["k"] for r in grp]
        suffix = f" [{label}]" if label else ""
        ax.plot(ks, [r["minADE"] for r in grp], marker="o",
                label=f"minADE{suffix}")
        ax.plot(ks, [r["minFDE"] for r in grp], marker="s", linestyle="--",
                label=f"minFDE{suffix}")
    ax.set_xscale("log", base=2)
    ax.set_xlabel("k samples")
    ax.set_ylabel("error (m)")
    ax.set_title(title)
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    _save(fig, path)


def plot_history(rows: list[dict], path: str | Path) -> None:
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.5))
    epochs = [r["epoch"] for r in rows if r["epoch"] > 0]
    ax1.plot(epochs, [r["train_mon"] for r in rows if r["epoch"] > 0],
             label="MoN term")
    ax1.plot(epochs, [r["train_kl"] for r in rows if r["epoch"] > 0],
             label="KL term")
    ax1.set_yscale("log")
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("loss term")
    ax1.legend(fontsize=8)
    ax1.grid(True, alpha=0.3)
    all_epochs = [r["epoch"] for r in rows]
    ax2.plot(all_epochs, [r["val_min_ade"] for r in rows], marker="o")
    ax2.set_xlabel("epoch")
    ax2.set_ylabel("val minADE (m)")
    ax2.grid(True, alpha=0.3)
    fig.tight_layout()
    _save(fig, path)


def plot_prediction_overlay(past: np.ndarray, truth: np.ndarray,
                            samples: np.ndarray, path: str | Path,
                            title: str = "") -> None:
    """Agent-frame overlay: k sampled trajectories, truth, and history.

    Every sampled path carries gid ``pred-<i>``; the ground truth is
    gid ``ground-truth`` and the observed history gid ``past``.
    """
    fig, ax = plt.subplots(figsize=(5, 5))
    for i, sample in enumerate(samples):
        (line,) = ax.plot(sample[:, 0], sample[:, 1], color="#5588cc",
                          alpha=0.4, linewidth=0.8)
        line.set_gid(f"pred-{i}")
    (gt,) = ax.plot(truth[:, 0], truth[:, 1], color="#cc3333", linewidth=2.0,
                    label="ground truth")
    gt.set_gid("ground-truth")
    (hist,) = ax.plot(past[:, 0], past[:, 1], color="#333333", linewidth=2.0,
                      linestyle="--", label="observed past")
    hist.set_gid("past")
    ax.scatter([0.0], [0.0], color="#000000", marker="^", zorder=5, s=40)
    ax.set_aspect("equal")
    ax.set_xlabel("forward (m)")
    ax.set_ylabel("left (m)")
    if title:
        ax.set_title(title)
    ax.legend(fontsize=8)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    _save(fig, path)


def plot_scene_overlay(semantic_map, tracks, path: str | Path,
                       title: str = "") -> None:
    """Map geometry plus tracks, for the rasterize debugging command."""
    fig, ax = plt.subplots(figsize=(6, 6))
    for name in LAYER_TYPES:
        color = _LAYER_COLORS[name]
        for j, geom in enumerate(semantic_map.layers[name]):
            if isinstance(geom, Polygon):
                patch = plt.Polygon(geom.ring, closed=True, facecolor=color,
                                    edgecolor="none", alpha=0.6)
                patch.set_gid(f"{name}-{j}")
                ax.add_patch(patch)
            elif isinstance(geom, Polyline):
                (line,) = ax.plot(geom.points[:, 0], geom.points[:, 1],
                                  color=color, linewidth=1.0)
                line.set_gid(f"{name}-{j}")
    for track in tracks:
        xy = np.array([[p.x, p.y] for p in track.poses])
        (line,) = ax.plot(xy[:, 0], xy[:, 1], linewidth=1.5)
        line.set_gid(f"track-{track.track_id}")
        ax.scatter(xy[:1, 0], xy[:1, 1], s=20, zorder=5)
    ax.set_aspect("equal")
    ax.autoscale_view()
    ax.set_xlabel("x (m)")
    ax.set_ylabel("y (m)")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    _save(fig, path)
