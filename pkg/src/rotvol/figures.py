"""Matplotlib figure rendering for the report path.

Every figure lands next to its CSV counterpart so runs remain inspectable
without re-running anything.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .evaluation import OcclusionMap
from .panorama import CameraSpec, Panorama, crop_to_pano_map


def plot_error_histogram(errors, path: Path, title: str = "Geodesic error histogram"):
    errors = np.asarray(list(errors), dtype=float)
    fig, ax = plt.subplots(figsize=(6, 4))
    edges = np.arange(0, 181, 10)
    ax.hist(np.clip(errors, 0, 180 - 1e-9), bins=edges, color="#4878b0", edgecolor="white")
    ax.set_xlabel("geodesic error (deg)")
    ax.set_ylabel("pairs")
    ax.set_title(title)
    ax.set_xticks(edges[::3])
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_error_cdf(errors, path: Path, title: str = "Geodesic error CDF"):
    errors = np.sort(np.asarray(list(errors), dtype=float))
    frac = np.arange(1, len(errors) + 1) / len(errors)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.step(np.concatenate([[0.0], errors]), np.concatenate([[0.0], frac]), where="post")
    ax.set_xlim(0, 180)
    ax.set_ylim(0, 1.02)
    ax.set_xlabel("geodesic error (deg)")
    ax.set_ylabel("fraction of pairs")
    ax.set_title(title)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_loss_curve(iters, losses, path: Path):
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(iters, losses, lw=0.8)
    ax.set_xlabel("iteration")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_occlusion_map(occ: OcclusionMap, path: Path):
    fig, axes = plt.subplots(1, 2, figsize=(9, 4))
    vmax = max(float(g.max()) for g in occ.grids)
    for k, (ax, grid) in enumerate(zip(axes, occ.grids)):
        im = ax.imshow(grid, cmap="inferno", vmin=0.0, vmax=max(vmax, 1e-6))
        ax.set_title(f"image {k + 1}")
        ax.set_xticks([])
        ax.set_yticks([])
        fig.colorbar(im, ax=ax, fraction=0.046)
    fig.suptitle(f"Occlusion sensitivity (window {occ.window}, stride {occ.stride}, "
                 f"baseline {occ.baseline_error_deg:.1f} deg)")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def _view_outline(cam: CameraSpec, pano_w: int, pano_h: int, samples_per_edge: int = 24):
    """Panorama-space polyline of the crop border, split at longitude wraps."""
    s = cam.size - 1
    t = np.linspace(0, s, samples_per_edge)
    border_u = np.concatenate([t, np.full_like(t, s), t[::-1], np.zeros_like(t)])
    border_v = np.concatenate([np.zeros_like(t), t, np.full_like(t, s), t[::-1]])
    map_x, map_y = crop_to_pano_map(cam, pano_w, pano_h)
    xs, ys = [], []
    for u, v in zip(border_u, border_v):
        iu, iv = int(round(u)), int(round(v))
        xs.append(map_x[iv, iu] % pano_w)
        ys.append(map_y[iv, iu])
    segments = []
    cur_x, cur_y = [xs[0]], [ys[0]]
    for x, y in zip(xs[1:], ys[1:]):
        if abs(x - cur_x[-1]) > pano_w / 2:
            segments.append((cur_x, cur_y))
            cur_x, cur_y = [x], [y]
        else:
            cur_x.append(x)
            cur_y.append(y)
    segments.append((cur_x, cur_y))
    return segments


def plot_pano_overlay(pano: Panorama, gt_cams: list[CameraSpec],
                      pred_cams: list[CameraSpec], path: Path):
    """Panorama with ground-truth view borders in red and predictions in yellow."""
    fig, ax = plt.subplots(figsize=(10, 5))
    ax.imshow(pano.pixels)
    for cams, color in ((gt_cams, "red"), (pred_cams, "yellow")):
        for cam in cams:
            for xs, ys in _view_outline(cam, pano.width, pano.height):
                ax.plot(xs, ys, color=color, lw=1.8)
    ax.set_xticks([])
    ax.set_yticks([])
    ax.set_xlim(0, pano.width)
    ax.set_ylim(pano.height, 0)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
