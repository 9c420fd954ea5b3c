"""PNG figures for pipeline reports (matplotlib, non-interactive backend)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def udf_slice(res: dict, path) -> Path:
    """Mid-z slice of the UDF with medial candidates in that slice."""
    udf = res["udf"]
    k = udf.dims[2] // 2
    fig, ax = plt.subplots(figsize=(5, 4.5))
    lo = udf.world([0, 0, k])
    hi = udf.world([udf.dims[0] - 1, udf.dims[1] - 1, k])
    h = udf.spacing[0] / 2
    im = ax.imshow(udf.data[:, :, k].T, origin="lower", cmap="magma",
                   extent=(lo[0] - h, hi[0] + h, lo[1] - h, hi[1] + h))
    fig.colorbar(im, ax=ax, label="UDF (voxels)")
    cloud = res["cloud"]
    sel = np.abs(cloud.centers[:, 2] - lo[2]) < 0.5 * udf.spacing[2]
    ax.scatter(cloud.centers[sel, 0], cloud.centers[sel, 1], s=6, c="cyan", label="candidates")
    ax.set(xlabel="x (mm)", ylabel="y (mm)", title=f"UDF, z = {lo[2]:.1f} mm")
    ax.legend(loc="upper right", fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return Path(path)


def skeleton_views(res: dict, path) -> Path:
    """Three axis-aligned projections of the skeleton with sphere outlines."""
    cx = res["complex"]
    fig, axes = plt.subplots(1, 3, figsize=(12, 4))
    t = np.linspace(0, 2 * np.pi, 48)
    for ax, (i, j) in zip(axes, ((0, 1), (0, 2), (1, 2))):
        for a, b, c in cx.triangles:
            ax.fill(cx.centers[[a, b, c], i], cx.centers[[a, b, c], j], color="tab:orange", alpha=0.3, lw=0)
        for a, b in cx.edges:
            ax.plot(cx.centers[[a, b], i], cx.centers[[a, b], j], color="tab:red", lw=1)
        for c, r in zip(cx.centers, cx.radii):
            ax.plot(c[i] + r * np.cos(t), c[j] + r * np.sin(t), color="0.6", lw=0.5)
        ax.scatter(cx.centers[:, i], cx.centers[:, j], s=10, c="k", zorder=3)
        for f in res["interfaces"]:
            ax.annotate("", xy=(f.center[i] + f.normal[i] * f.radius, f.center[j] + f.normal[j] * f.radius),
                        xytext=(f.center[i], f.center[j]), arrowprops={"arrowstyle": "->", "color": "tab:blue"})
        ax.set_aspect("equal")
        ax.set(xlabel="xyz"[i] + " (mm)", ylabel="xyz"[j] + " (mm)")
    fig.suptitle(f"skeleton: {cx.n_vertices} vertices, {len(cx.edges)} edges, {len(cx.triangles)} triangles")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return Path(path)


def refinement_residuals(res: dict, path) -> Path:
    """Histogram of |f - C| after refinement of the oriented cloud."""
    field, cloud = res["field"], res["cloud_refined"]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    if len(cloud):
        r = np.abs(field(cloud.points) - field.level)
        ax.hist(np.log10(np.maximum(r, 1e-16)), bins=40, color="tab:green")
    ax.set(xlabel="log10 |f - C|", ylabel="points", title="refinement residual")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return Path(path)


def overlap_slice(res: dict, path) -> Path:
    """Mid-z slice of input mask vs. voxelized reconstruction."""
    mask, vox = res["mask"], res["voxelized"]
    k = mask.dims[2] // 2
    a = np.asarray(mask.data[:, :, k]) > 0
    b = np.asarray(vox.data[:, :, k]) > 0
    rgb = np.zeros(a.shape + (3,))
    rgb[a & b] = (0.8, 0.8, 0.8)
    rgb[a & ~b] = (0.85, 0.2, 0.2)
    rgb[~a & b] = (0.2, 0.4, 0.9)
    fig, ax = plt.subplots(figsize=(4.5, 4.5))
    ax.imshow(np.transpose(rgb, (1, 0, 2)), origin="lower")
    ax.set(title=f"mask (red) vs. reconstruction (blue), Dice {res['dice']:.3f}", xlabel="i", ylabel="j")
    ax.title.set_fontsize(8)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return Path(path)


def render_all(res: dict, outdir) -> list[Path]:
    out = Path(outdir)
    return [
        udf_slice(res, out / "udf_slice.png"),
        skeleton_views(res, out / "skeleton.png"),
        refinement_residuals(res, out / "refine_residual.png"),
        overlap_slice(res, out / "overlap.png"),
    ]
