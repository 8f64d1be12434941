"""Structured grids and the conservative discrete calculus on them.

Nodal fields are plain 1-D float arrays, one value per node, with node
``(i, j)`` stored at index ``j * nx + i``.  Edge fields hold one value per
axis-aligned neighbour pair.  The discrete divergence is defined as the
negative adjoint of the gradient under the node-volume and edge-volume
inner products, which is the discrete form of the zero-flux condition.
"""

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from ._validation import check_edge_field, check_field

__all__ = [
    "Mesh",
    "Grid",
    "build_grid",
    "gradient",
    "divergence",
    "lq_norm",
    "average",
    "nodal_field",
]


@dataclass(frozen=True, eq=False)
class Mesh:
    """Nodes with quadrature volumes joined by edges with lengths and volumes.

    The rectangle constructor :func:`build_grid` is the normal entry point;
    a bare ``Mesh`` is useful for tiny hand-built graphs (two nodes, say).
    """

    node_volume: np.ndarray
    edge_a: np.ndarray
    edge_b: np.ndarray
    edge_length: np.ndarray
    edge_volume: np.ndarray
    edge_axis: np.ndarray

    def __post_init__(self):
        for name in ("node_volume", "edge_length", "edge_volume"):
            arr = np.asarray(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        for name in ("edge_a", "edge_b", "edge_axis"):
            arr = np.asarray(getattr(self, name), dtype=np.intp)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if np.any(self.node_volume <= 0):
            raise ValueError("node volumes must be positive")
        if np.any(self.edge_length <= 0) or np.any(self.edge_volume <= 0):
            raise ValueError("edge lengths and volumes must be positive")
        n = self.node_volume.shape[0]
        if self.edge_a.size and (self.edge_a.max() >= n or self.edge_b.max() >= n):
            raise ValueError("edge endpoint out of range")

    @property
    def n_nodes(self):
        return self.node_volume.shape[0]

    @property
    def n_edges(self):
        return self.edge_a.shape[0]

    @property
    def volume(self):
        return float(self.node_volume.sum())

    @property
    def edges(self):
        """Edges as ``(node_a, node_b, orientation, edge_volume)`` tuples."""
        return [
            (int(a), int(b), "xy"[int(o)], float(v))
            for a, b, o, v in zip(self.edge_a, self.edge_b, self.edge_axis, self.edge_volume)
        ]

    @cached_property
    def difference_matrix(self):
        """Sparse E x N matrix ``D`` with ``(D u)_e = (u_b - u_a) / h_e``."""
        rows = np.repeat(np.arange(self.n_edges), 2)
        cols = np.column_stack([self.edge_a, self.edge_b]).ravel()
        inv_h = 1.0 / self.edge_length
        vals = np.column_stack([-inv_h, inv_h]).ravel()
        return sp.csr_matrix((vals, (rows, cols)), shape=(self.n_edges, self.n_nodes))

    def apply_transpose(self, y):
        """``D^T y`` with a fixed summation order."""
        z = y / self.edge_length
        n = self.n_nodes
        return np.bincount(self.edge_b, z, minlength=n) - np.bincount(self.edge_a, z, minlength=n)


@dataclass(frozen=True, eq=False)
class Grid(Mesh):
    """Structured node grid over ``[x0, x0 + lx] x [y0, y0 + ly]``."""

    nx: int = 2
    ny: int = 2
    x0: float = 0.0
    y0: float = 0.0
    lx: float = 1.0
    ly: float = 1.0
    hx: float = field(init=False)
    hy: float = field(init=False)

    def __post_init__(self):
        super().__post_init__()
        object.__setattr__(self, "hx", self.lx / (self.nx - 1))
        object.__setattr__(self, "hy", self.ly / (self.ny - 1))

    @property
    def shape(self):
        return (self.ny, self.nx)

    @property
    def diameter(self):
        return float(np.hypot(self.lx, self.ly))

    @cached_property
    def node_xy(self):
        x = self.x0 + self.hx * np.arange(self.nx)
        y = self.y0 + self.hy * np.arange(self.ny)
        xx, yy = np.meshgrid(x, y)
        return np.column_stack([xx.ravel(), yy.ravel()])

    @cached_property
    def edge_midpoints(self):
        xy = self.node_xy
        return 0.5 * (xy[self.edge_a] + xy[self.edge_b])

    @cached_property
    def cell_centers(self):
        x = self.x0 + self.hx * (np.arange(self.nx - 1) + 0.5)
        y = self.y0 + self.hy * (np.arange(self.ny - 1) + 0.5)
        xx, yy = np.meshgrid(x, y)
        return np.column_stack([xx.ravel(), yy.ravel()])

    @property
    def cell_volume(self):
        return self.hx * self.hy

    def cells_of_edge(self):
        """For each edge, the indices of the (one or two) cells sharing it; -1 where absent."""
        ncx, ncy = self.nx - 1, self.ny - 1
        out = np.full((self.n_edges, 2), -1, dtype=np.intp)
        i = self.edge_a % self.nx
        j = self.edge_a // self.nx
        xedge = self.edge_axis == 0
        # x-edge (i,j)-(i+1,j) borders cells (i, j-1) and (i, j)
        below = xedge & (j >= 1)
        above = xedge & (j <= ncy - 1)
        out[below, 0] = (j[below] - 1) * ncx + i[below]
        out[above, 1] = j[above] * ncx + i[above]
        left = ~xedge & (i >= 1)
        right = ~xedge & (i <= ncx - 1)
        out[left, 0] = j[left] * ncx + i[left] - 1
        out[right, 1] = j[right] * ncx + i[right]
        return out


def build_grid(nx, ny, x0=0.0, y0=0.0, lx=1.0, ly=1.0):
    """Build a structured ``nx`` by ``ny`` node grid with trapezoidal node volumes.

    Edge volumes are the dual areas ``h_x * h_y``, halved for edges running
    along the boundary, so that affine fields are integrated exactly.
    """
    if int(nx) != nx or int(ny) != ny:
        raise ValueError("node counts must be integers")
    nx, ny = int(nx), int(ny)
    if nx < 2 or ny < 2:
        raise ValueError(f"grid dimension too small: need nx, ny >= 2, got ({nx}, {ny})")
    if not (lx > 0 and ly > 0) or not (np.isfinite(lx) and np.isfinite(ly)):
        raise ValueError(f"non-positive extent: lx={lx}, ly={ly}")
    hx, hy = lx / (nx - 1), ly / (ny - 1)

    wx = np.full(nx, hx)
    wx[[0, -1]] *= 0.5
    wy = np.full(ny, hy)
    wy[[0, -1]] *= 0.5
    node_volume = np.outer(wy, wx).ravel()

    idx = np.arange(nx * ny).reshape(ny, nx)
    xa = idx[:, :-1].ravel()
    xb = idx[:, 1:].ravel()
    xvol = np.repeat(wy, nx - 1) * hx
    ya = idx[:-1, :].ravel()
    yb = idx[1:, :].ravel()
    yvol = np.tile(wx, ny - 1) * hy

    return Grid(
        node_volume=node_volume,
        edge_a=np.concatenate([xa, ya]),
        edge_b=np.concatenate([xb, yb]),
        edge_length=np.concatenate([np.full(xa.size, hx), np.full(ya.size, hy)]),
        edge_volume=np.concatenate([xvol, yvol]),
        edge_axis=np.concatenate([np.zeros(xa.size, int), np.ones(ya.size, int)]),
        nx=nx,
        ny=ny,
        x0=float(x0),
        y0=float(y0),
        lx=float(lx),
        ly=float(ly),
    )


def nodal_field(grid, func):
    """Evaluate ``func(x, y)`` (vectorised) at every grid node."""
    xy = grid.node_xy
    vals = np.broadcast_to(np.asarray(func(xy[:, 0], xy[:, 1]), dtype=float), (grid.n_nodes,))
    return np.array(vals)


def gradient(mesh, u):
    """Per-edge difference quotients ``(u_b - u_a) / h``."""
    u = check_field(mesh, u)
    return (u[mesh.edge_b] - u[mesh.edge_a]) / mesh.edge_length


def divergence(mesh, flux):
    """Nodal divergence of an edge field, the negative adjoint of :func:`gradient`.

    ``sum(div(F) * v * node_volume) == -sum(F * gradient(v) * edge_volume)``
    holds for every nodal ``v``.
    """
    flux = check_edge_field(mesh, flux)
    return -mesh.apply_transpose(flux * mesh.edge_volume) / mesh.node_volume


def lq_norm(mesh, u, q):
    """Discrete L^q norm under the node quadrature; ``q = inf`` gives the max norm."""
    if not q >= 1:
        raise ValueError(f"q must be >= 1, got {q}")
    u = check_field(mesh, u)
    a = np.abs(u)
    if np.isinf(q):
        return float(a.max())
    if q == 1:
        return float(np.dot(a, mesh.node_volume))
    if q == 2:
        return float(np.sqrt(np.dot(a * a, mesh.node_volume)))
    scale = a.max()
    if scale == 0:
        return 0.0
    return float(scale * np.dot((a / scale) ** q, mesh.node_volume) ** (1.0 / q))


def average(mesh, u):
    """Volume-weighted mean of a nodal field."""
    u = check_field(mesh, u)
    return float(np.dot(u, mesh.node_volume) / mesh.volume)
