"""Static figures written next to the other CLI artifacts."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.tri import Triangulation  # noqa: E402

STYLE = {"figure.dpi": 120, "font.size": 9, "axes.titlesize": 9, "savefig.bbox": "tight"}


def _triangulation(mesh):
    # split every 9-node element into 8 triangles around its centre node
    c = mesh.conn
    ring = c[:, [0, 4, 1, 5, 2, 6, 3, 7]]
    tris = np.stack([np.column_stack([ring[:, k], ring[:, (k + 1) % 8], c[:, 8]]) for k in range(8)], axis=1)
    return Triangulation(mesh.vcoords[:, 0], mesh.vcoords[:, 1], tris.reshape(-1, 3))


def field_plot(path, mesh, values, title, cmap="viridis", outline=None):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(7, 3.6))
        tc = ax.tripcolor(_triangulation(mesh), np.real(values), shading="gouraud", cmap=cmap)
        fig.colorbar(tc, ax=ax, shrink=0.85)
        if outline is not None:
            _outline(ax, mesh, outline)
        ax.set_aspect("equal")
        ax.set_title(title)
        ax.set_xlabel("x [m]")
        ax.set_ylabel("y [m]")
        fig.savefig(path)
        plt.close(fig)


def _outline(ax, mesh, rho_elem):
    x = mesh.x_lines
    y = mesh.y_lines
    grid = np.real(rho_elem).reshape(mesh.ny, mesh.nx)
    xc = 0.5 * (x[:-1] + x[1:])
    yc = 0.5 * (y[:-1] + y[1:])
    ax.contour(xc, yc, grid, levels=[0.5], colors="k", linewidths=0.8)


def design_plot(path, mesh, rho_elem, title):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(7, 3.6))
        grid = np.real(rho_elem).reshape(mesh.ny, mesh.nx)
        ax.imshow(grid, origin="lower", cmap="gray_r", vmin=0, vmax=1,
                  extent=(mesh.x_lines[0], mesh.x_lines[-1], mesh.y_lines[0], mesh.y_lines[-1]))
        ax.set_title(title)
        ax.set_xlabel("x [m]")
        ax.set_ylabel("y [m]")
        fig.savefig(path)
        plt.close(fig)


def convergence_plot(path, run_log, title="convergence"):
    it = run_log.column("iter")
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(6, 3.5))
        ax.semilogy(it, run_log.column("f"), "k-", label="objective")
        ax.set_xlabel("iteration")
        ax.set_ylabel("compliance [J]")
        ax2 = ax.twinx()
        ax2.plot(it, run_log.column("DM"), "r--", label="DM")
        ax2.set_ylabel("DM [%]", color="r")
        ax.set_title(title)
        fig.savefig(path)
        plt.close(fig)


def gallery(path, mesh, designs, labels, ncols=3):
    n = len(designs)
    nrows = max(1, int(np.ceil(n / ncols)))
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(nrows, ncols, figsize=(3.2 * ncols, 1.9 * nrows), squeeze=False)
        for k, ax in enumerate(axes.ravel()):
            ax.axis("off")
            if k < n:
                ax.imshow(np.real(designs[k]).reshape(mesh.ny, mesh.nx), origin="lower", cmap="gray_r",
                          vmin=0, vmax=1)
                ax.set_title(labels[k])
        fig.savefig(path)
        plt.close(fig)


def derivative_comparison(path, mesh, raw, recovered, window, title):
    """Raw vs. recovered nodal derivative inside ``window = (x0, x1, y0, y1)``."""
    x0, x1, y0, y1 = window
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, 2, figsize=(8, 3.4))
        tri = _triangulation(mesh)
        for ax, vals, lab in zip(axes, (raw, recovered), ("raw", "recovered")):
            tc = ax.tripcolor(tri, np.real(vals), shading="gouraud", cmap="coolwarm")
            ax.set_xlim(x0, x1)
            ax.set_ylim(y0, y1)
            ax.set_aspect("equal")
            ax.set_title(f"{title} ({lab})")
            fig.colorbar(tc, ax=ax, shrink=0.8)
        fig.savefig(path)
        plt.close(fig)
