"""Artifact writers: legacy ASCII VTK, CSV, binary PGM and a hash manifest."""

from __future__ import annotations

import csv
import hashlib
from pathlib import Path

import numpy as np


class OutputDir:
    """Keeps every artifact under one root and records it for the manifest."""

    def __init__(self, root):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.files = []

    def path(self, name):
        p = (self.root / name).resolve()
        if self.root.resolve() not in p.parents and p != self.root.resolve():
            raise ValueError(f"artifact path {name!r} escapes the output directory")
        p.parent.mkdir(parents=True, exist_ok=True)
        if p not in self.files:
            self.files.append(p)
        return p

    def write_text(self, name, text):
        p = self.path(name)
        p.write_text(text)
        return p

    def write_manifest(self, name="manifest.txt"):
        lines = []
        for p in sorted(self.files):
            if p.exists() and p.name != name:
                lines.append(f"{p.relative_to(self.root.resolve())}={file_hash(p)}")
        out = self.root / name
        out.write_text("\n".join(lines) + "\n")
        return out


def file_hash(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, quoting=csv.QUOTE_MINIMAL)
        w.writerow(header)
        for r in rows:
            w.writerow(r)


def write_node_csv(path, mesh, fields):
    """One row per velocity-grid node; ``fields`` maps name -> nodal array."""
    names = list(fields)
    cols = [np.real(np.asarray(fields[k])) for k in names]
    rows = ([repr(float(x)), repr(float(y))] + [repr(float(c[i])) for c in cols]
            for i, (x, y) in enumerate(mesh.vcoords))
    write_csv(path, ["x", "y"] + names, rows)


def write_vtk(path, mesh, point_data=None, cell_data=None, title="tofsi"):
    """Legacy ASCII unstructured grid of 9-node quads (VTK_BIQUADRATIC_QUAD = 28)."""
    point_data = point_data or {}
    cell_data = cell_data or {}
    nv, ne = mesh.n_vnodes, mesh.n_elements
    with open(path, "w") as fh:
        fh.write(f"# vtk DataFile Version 3.0\n{title}\nASCII\nDATASET UNSTRUCTURED_GRID\n")
        fh.write(f"POINTS {nv} double\n")
        for x, y in mesh.vcoords:
            fh.write(f"{x:.12g} {y:.12g} 0\n")
        fh.write(f"CELLS {ne} {ne * 10}\n")
        for c in mesh.conn:
            fh.write("9 " + " ".join(str(int(v)) for v in c) + "\n")
        fh.write(f"CELL_TYPES {ne}\n")
        fh.write("28\n" * ne)
        if point_data:
            fh.write(f"POINT_DATA {nv}\n")
            _vtk_arrays(fh, point_data)
        if cell_data:
            fh.write(f"CELL_DATA {ne}\n")
            _vtk_arrays(fh, cell_data)


def _vtk_arrays(fh, data):
    for name, arr in data.items():
        a = np.real(np.asarray(arr, dtype=complex if np.iscomplexobj(arr) else float))
        if a.ndim == 2 and a.shape[1] == 2:
            fh.write(f"VECTORS {name} double\n")
            for u, v in a:
                fh.write(f"{u:.12g} {v:.12g} 0\n")
        else:
            fh.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
            fh.write("\n".join(f"{v:.12g}" for v in a.ravel()) + "\n")


def design_image(mesh, elements, rho, fill=1.0):
    """8-bit image over the bounding rectangle of ``elements``, one pixel per
    element, value round(255 (1 - rho)) so solid is dark.  Cells in the
    rectangle that are not listed (the non-design column) get ``fill``.  The
    top row comes first."""
    elements = np.asarray(elements)
    ex, ey = elements % mesh.nx, elements // mesh.nx
    w, h = ex.max() - ex.min() + 1, ey.max() - ey.min() + 1
    grid = np.full((h, w), float(fill))
    grid[ey - ey.min(), ex - ex.min()] = np.clip(np.real(rho), 0.0, 1.0)
    img = np.rint(255.0 * (1.0 - grid)).astype(np.uint8)
    return img[::-1]


def write_pgm(path, image):
    image = np.asarray(image, dtype=np.uint8)
    h, w = image.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(image.tobytes())


def read_pgm(path):
    data = Path(path).read_bytes()
    parts = data.split(maxsplit=4)
    if parts[0] != b"P5":
        raise ValueError(f"{path} is not a binary PGM")
    w, h, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    if maxval != 255:
        raise ValueError("only 8-bit PGM is supported")
    pix = np.frombuffer(parts[4][: w * h], dtype=np.uint8)
    return pix.reshape(h, w)


def save_design(path, mesh, rho_design_elements, rho_design, **fields):
    """Design field as .npz (element ids + values + mesh size) for cross-checks.

    Extra projected fields (``eroded=...``, ``dilated=...``) are stored as
    ``rho_<name>``.
    """
    extra = {f"rho_{k}": np.asarray(v, dtype=float) for k, v in fields.items() if v is not None}
    np.savez(path, nx=mesh.nx, ny=mesh.ny, elements=np.asarray(rho_design_elements),
             rho=np.asarray(rho_design, dtype=float), **extra)


def load_design(path):
    with np.load(path) as z:
        return int(z["nx"]), int(z["ny"]), z["elements"].copy(), z["rho"].copy()


def load_design_fields(path):
    """All stored projected fields by name; the main field is ``nominal``."""
    with np.load(path) as z:
        out = {"nominal": z["rho"].copy()}
        out.update({k[4:]: z[k].copy() for k in z.files if k.startswith("rho_")})
    return out
