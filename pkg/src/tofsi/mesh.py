"""Structured Q2Q1 channel mesh, region tags and degree-of-freedom numbering."""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field

import numpy as np

from tofsi.fem_core import NODE_ETA, NODE_XI

log = logging.getLogger(__name__)

FLUID, DESIGN, NONDESIGN = 0, 1, 2
REGION_NAMES = {FLUID: "fluid", DESIGN: "design", NONDESIGN: "nondesign"}

INTERIOR, INLET, OUTLET, WALL = 0, 1, 2, 3

_ALIGN_TOL = 1e-9


class MeshError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class StructuredMesh:
    nx: int
    ny: int
    lx: float
    ly: float
    x_lines: np.ndarray  # element boundary coordinates, (nx+1,)
    y_lines: np.ndarray  # (ny+1,)
    vcoords: np.ndarray  # (nv, 2)
    pcoords: np.ndarray  # (np, 2)
    conn: np.ndarray  # (ne, 9) velocity nodes
    pconn: np.ndarray  # (ne, 4) pressure nodes
    p2v: np.ndarray  # pressure node -> coincident velocity node
    node_tag: np.ndarray  # (nv,) INTERIOR/INLET/OUTLET/WALL
    region: np.ndarray = field(default=None)  # (ne,) FLUID/DESIGN/NONDESIGN

    @property
    def n_elements(self):
        return self.nx * self.ny

    @property
    def n_vnodes(self):
        return self.vcoords.shape[0]

    @property
    def n_pnodes(self):
        return self.pcoords.shape[0]

    @property
    def nvx(self):
        return 2 * self.nx + 1

    @property
    def hx(self):
        return self.lx / self.nx

    @property
    def hy(self):
        return self.ly / self.ny

    def element_coords(self, elements=None):
        conn = self.conn if elements is None else self.conn[elements]
        return self.vcoords[conn]

    def centroids(self):
        return self.vcoords[self.conn[:, 8]]

    def element_areas(self):
        from tofsi.fem_core import element_geometry

        geo = element_geometry(self.element_coords())
        return geo.wdet.sum(axis=1)

    def elements_in(self, region):
        return np.flatnonzero(self.region == region)

    @property
    def design_elements(self):
        return self.elements_in(DESIGN)

    @property
    def solid_elements(self):
        return np.flatnonzero(self.region != FLUID)

    def vnode_index(self, i, j):
        return j * self.nvx + i

    def nearest_vnode(self, x, y):
        d = np.hypot(self.vcoords[:, 0] - x, self.vcoords[:, 1] - y)
        return int(np.argmin(d))

    def with_regions(self, region):
        return dataclasses.replace(self, region=np.asarray(region, dtype=np.int8))


def build_channel_mesh(nx, ny, lx, ly):
    """Uniform ``nx`` x ``ny`` mesh of 9-node quads on ``[0, lx] x [0, ly]``."""
    if nx < 2 or ny < 2:
        raise MeshError(f"need nx, ny >= 2, got {nx}, {ny}")
    if not (lx > 0 and ly > 0):
        raise MeshError(f"channel dimensions must be positive, got {lx}, {ly}")
    nx, ny = int(nx), int(ny)
    x_lines = np.linspace(0.0, lx, nx + 1)
    y_lines = np.linspace(0.0, ly, ny + 1)
    return _assemble(nx, ny, float(lx), float(ly), x_lines, y_lines)


def _assemble(nx, ny, lx, ly, x_lines, y_lines, region=None):
    # velocity grid lines include element mid-lines
    xv = np.empty(2 * nx + 1)
    xv[0::2] = x_lines
    xv[1::2] = 0.5 * (x_lines[:-1] + x_lines[1:])
    yv = np.empty(2 * ny + 1)
    yv[0::2] = y_lines
    yv[1::2] = 0.5 * (y_lines[:-1] + y_lines[1:])
    X, Y = np.meshgrid(xv, yv, indexing="xy")
    vcoords = np.column_stack([X.ravel(), Y.ravel()])
    nvx = 2 * nx + 1

    ex, ey = np.meshgrid(np.arange(nx), np.arange(ny), indexing="xy")
    ex, ey = ex.ravel(), ey.ravel()
    li = (NODE_XI + 1).astype(int)
    lj = (NODE_ETA + 1).astype(int)
    conn = (2 * ey[:, None] + lj[None, :]) * nvx + (2 * ex[:, None] + li[None, :])

    npx = nx + 1
    pi = np.array([0, 1, 1, 0])
    pj = np.array([0, 0, 1, 1])
    pconn = (ey[:, None] + pj) * npx + (ex[:, None] + pi)
    PI, PJ = np.meshgrid(np.arange(nx + 1), np.arange(ny + 1), indexing="xy")
    p2v = (2 * PJ.ravel()) * nvx + 2 * PI.ravel()
    pcoords = vcoords[p2v].copy()

    tag = np.zeros(vcoords.shape[0], dtype=np.int8)
    I, J = np.meshgrid(np.arange(nvx), np.arange(2 * ny + 1), indexing="xy")
    I, J = I.ravel(), J.ravel()
    tag[I == 0] = INLET
    tag[I == nvx - 1] = OUTLET
    tag[(J == 0) | (J == 2 * ny)] = WALL
    if region is None:
        region = np.zeros(nx * ny, dtype=np.int8)
    return StructuredMesh(nx, ny, lx, ly, np.asarray(x_lines, float), np.asarray(y_lines, float),
                          vcoords, pcoords, conn.astype(np.int64), pconn.astype(np.int64),
                          p2v.astype(np.int64), tag, np.asarray(region, dtype=np.int8))


def _check_aligned(value, lines, what):
    k = np.argmin(np.abs(lines - value))
    if abs(lines[k] - value) > _ALIGN_TOL:
        raise MeshError(f"{what}={value!r} is not on an element boundary (nearest {lines[k]!r})")


def tag_regions(mesh, design_box, nondesign_boxes=()):
    """Classify elements by centroid; non-design boxes win over the design box.

    Boxes are ``(x0, y0, x1, y1)`` and must sit on element boundaries.
    """
    boxes = [("design", design_box)] if design_box is not None else []
    boxes += [("nondesign", b) for b in nondesign_boxes]
    for name, (x0, y0, x1, y1) in boxes:
        for val, lines, what in ((x0, mesh.x_lines, "x0"), (x1, mesh.x_lines, "x1"),
                                 (y0, mesh.y_lines, "y0"), (y1, mesh.y_lines, "y1")):
            _check_aligned(val, lines, f"{name} box {what}")
    c = mesh.centroids()
    region = np.full(mesh.n_elements, FLUID, dtype=np.int8)

    def inside(box):
        x0, y0, x1, y1 = box
        return (c[:, 0] > x0) & (c[:, 0] < x1) & (c[:, 1] > y0) & (c[:, 1] < y1)

    if design_box is not None:
        region[inside(design_box)] = DESIGN
    for b in nondesign_boxes:
        region[inside(b)] = NONDESIGN
    return mesh.with_regions(region)


def snap_box(mesh, box, min_elements=1):
    """Snap a box to the nearest element boundaries keeping at least one element per side."""
    x0, y0, x1, y1 = box
    out = []
    for lo, hi, lines in ((x0, x1, mesh.x_lines), (y0, y1, mesh.y_lines)):
        i0 = int(np.argmin(np.abs(lines - lo)))
        i1 = int(np.argmin(np.abs(lines - hi)))
        if i1 - i0 < min_elements:
            # keep the requested extent centred when it collapses
            width = max(min_elements, int(np.floor((hi - lo) / np.diff(lines).mean() + 0.5)))
            mid = 0.5 * (lo + hi)
            i0 = int(np.floor((mid - lines[0]) / np.diff(lines).mean() - 0.5 * width + 0.5))
            i0 = min(max(i0, 0), len(lines) - 1 - width)
            i1 = i0 + width
        out.append((lines[i0], lines[i1]))
    snapped = (out[0][0], out[1][0], out[0][1], out[1][1])
    if not np.allclose(snapped, box, atol=_ALIGN_TOL, rtol=0):
        log.warning("box %s snapped to %s (size %.6g x %.6g)", tuple(box), tuple(float(v) for v in snapped),
                    snapped[2] - snapped[0], snapped[3] - snapped[1])
    return tuple(float(v) for v in snapped)


def perturb_mesh(mesh, amplitude, seed=0, mode="lines"):
    """Randomly perturb interior nodes for tests.

    ``mode="lines"`` moves whole interior grid lines (elements stay axis-aligned
    rectangles of varying size).  ``mode="nodes"`` moves interior corner nodes
    independently and re-centres edge/centre nodes (straight-sided quads).
    Boundary nodes and nodes on region interfaces never move.  ``amplitude`` is
    a fraction of the local element size.
    """
    rng = np.random.default_rng(seed)
    locked_x, locked_y = _interface_lines(mesh)
    if mode == "lines":
        xl = mesh.x_lines.copy()
        yl = mesh.y_lines.copy()
        for lines, locked in ((xl, locked_x), (yl, locked_y)):
            h = np.diff(lines).min()
            for k in range(1, len(lines) - 1):
                if k not in locked:
                    lines[k] += amplitude * h * rng.uniform(-1.0, 1.0)
        return _assemble(mesh.nx, mesh.ny, mesh.lx, mesh.ly, xl, yl, mesh.region)
    if mode != "nodes":
        raise ValueError(f"unknown perturbation mode {mode!r}")
    coords = mesh.vcoords.copy()
    h = min(mesh.hx, mesh.hy)
    nvx = mesh.nvx
    region_nodes = _interface_nodes(mesh)
    for pj in range(1, mesh.ny):
        for pi in range(1, mesh.nx):
            v = (2 * pj) * nvx + 2 * pi
            if v in region_nodes:
                continue
            coords[v] += amplitude * h * rng.uniform(-1.0, 1.0, size=2)
    # mid-edge and centre nodes follow the corners (straight edges)
    for e in range(mesh.n_elements):
        c = mesh.conn[e]
        corners = coords[c[:4]]
        for k, (a, b) in zip(range(4, 8), ((0, 1), (1, 2), (2, 3), (3, 0))):
            coords[c[k]] = 0.5 * (corners[a] + corners[b])
        coords[c[8]] = corners.mean(axis=0)
    return dataclasses.replace(mesh, vcoords=coords, pcoords=coords[mesh.p2v].copy())


def _interface_lines(mesh):
    """Indices of grid lines that bound a region interface."""
    reg = mesh.region.reshape(mesh.ny, mesh.nx)
    lx, ly = set(), set()
    diff_x = reg[:, 1:] != reg[:, :-1]
    for k in np.flatnonzero(diff_x.any(axis=0)):
        lx.add(int(k) + 1)
    diff_y = reg[1:, :] != reg[:-1, :]
    for k in np.flatnonzero(diff_y.any(axis=1)):
        ly.add(int(k) + 1)
    return lx, ly


def _interface_nodes(mesh):
    seen = {}
    for e, c in enumerate(mesh.conn):
        for v in c[:4]:
            seen.setdefault(int(v), set()).add(int(mesh.region[e]))
    return {v for v, s in seen.items() if len(s) > 1}


class DirichletConflict(ValueError):
    pass


class DirichletSet:
    """Constrained global indices with a single prescribed value each."""

    def __init__(self):
        self._values = {}

    def add(self, indices, values):
        indices = np.atleast_1d(np.asarray(indices, dtype=np.int64))
        values = np.broadcast_to(np.asarray(values, dtype=float), indices.shape)
        for i, v in zip(indices.tolist(), values.tolist()):
            old = self._values.get(i)
            if old is not None and old != v:
                raise DirichletConflict(f"dof {i} prescribed twice: {old} vs {v}")
            self._values[i] = v
        return self

    @property
    def indices(self):
        return np.array(sorted(self._values), dtype=np.int64)

    @property
    def values(self):
        return np.array([self._values[i] for i in sorted(self._values)], dtype=float)

    def __len__(self):
        return len(self._values)


@dataclass(frozen=True)
class DofMap:
    """Block numbering: fluid ``[v1 | v2 | p]``, solid ``[u1 | u2]``."""

    n_vnodes: int
    n_pnodes: int

    @property
    def n_fluid(self):
        return 2 * self.n_vnodes + self.n_pnodes

    @property
    def n_solid(self):
        return 2 * self.n_vnodes

    def index(self, field, nodes):
        nodes = np.asarray(nodes)
        off = {"v1": 0, "u1": 0, "v2": self.n_vnodes, "u2": self.n_vnodes, "p": 2 * self.n_vnodes}
        try:
            return off[field] + nodes
        except KeyError:
            raise ValueError(f"unknown field {field!r}") from None

    def fluid_element_dofs(self, mesh):
        """(ne, 22) global fluid dofs per element: 9 v1, 9 v2, 4 p."""
        c = mesh.conn
        return np.hstack([c, c + self.n_vnodes, mesh.pconn + 2 * self.n_vnodes])

    def solid_element_dofs(self, mesh):
        """(ne, 18) global solid dofs per element: 9 u1 then 9 u2."""
        c = mesh.conn
        return np.hstack([c, c + self.n_vnodes])


def dofmap_for(mesh):
    return DofMap(mesh.n_vnodes, mesh.n_pnodes)
