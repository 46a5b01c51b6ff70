"""
Coarse Grid
Tensor coarse mesh over the box, node-to-cell assignment, patches and partition of unity
"""

import logging
from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class CoarseGrid:
    """Uniform tensor grid with m_k cells along axis k"""

    box: np.ndarray
    cells: np.ndarray

    @property
    def dim(self):
        return len(self.box)

    @property
    def H(self):
        return self.box / self.cells

    @property
    def n_cells(self):
        return int(np.prod(self.cells))

    @property
    def node_shape(self):
        return self.cells + 1

    @property
    def n_coarse_nodes(self):
        return int(np.prod(self.node_shape))

    def coarse_node_coords(self):
        index = np.indices(self.node_shape).reshape(self.dim, -1).T
        return index / self.cells * self.box

    def cell_multi_index(self, cell):
        return np.array(np.unravel_index(cell, self.cells))

    def cell_index(self, multi):
        return int(np.ravel_multi_index(tuple(multi), self.cells))

    def cell_bounds(self, cell):
        multi = self.cell_multi_index(cell)
        return multi * self.H, (multi + 1) * self.H

    def cell_centers(self):
        index = np.indices(self.cells).reshape(self.dim, -1).T
        return (index + 0.5) * self.H

    def incident_cells(self, coarse_node):
        """Cells whose closure contains coarse node y_i (at most 2^d)"""
        multi = np.unravel_index(coarse_node, self.node_shape)
        ranges = [[c for c in (j - 1, j) if 0 <= c < m] for j, m in zip(multi, self.cells)]
        grids = np.meshgrid(*ranges, indexing="ij")
        flat = [g.ravel() for g in grids]
        return tuple(sorted(int(c) for c in np.ravel_multi_index(flat, self.cells)))


def build_coarse_grid(box, m):
    box = np.asarray(box, dtype=float)
    cells = np.broadcast_to(np.asarray(m, dtype=np.int64), box.shape).copy()
    if np.any(cells < 2):
        raise ValueError(f"coarse grid needs at least 2 cells per axis, got {cells.tolist()}")
    box.setflags(write=False)
    cells.setflags(write=False)
    return CoarseGrid(box, cells)


@dataclass(frozen=True, eq=False)
class CellAssignment:
    owner: np.ndarray
    cell_nodes: tuple
    cell_capacity: np.ndarray

    @property
    def counts(self):
        return np.array([len(nodes) for nodes in self.cell_nodes])

    @property
    def active_cells(self):
        return np.flatnonzero(self.counts > 0)


def assign_nodes_to_cells(net, grid):
    """Owner cell floor(x_k / H_k), clamped so the last cell is closed"""
    index = np.floor(net.coords / grid.H).astype(np.int64)
    index = np.clip(index, 0, grid.cells - 1)
    owner = np.ravel_multi_index(tuple(index.T), grid.cells)
    order = np.argsort(owner, kind="stable")
    bounds = np.concatenate([[0], np.cumsum(np.bincount(owner, minlength=grid.n_cells))])
    cell_nodes = tuple(order[bounds[c]:bounds[c + 1]] for c in range(grid.n_cells))
    capacity = np.bincount(owner, weights=net.capacity, minlength=grid.n_cells)
    return CellAssignment(owner, cell_nodes, capacity)


@dataclass(frozen=True, eq=False)
class Patch:
    """Neighbourhood omega_i of coarse node y_i"""

    index: int
    cells: tuple
    nodes: np.ndarray
    chi: np.ndarray | None = None

    @property
    def active(self):
        return len(self.nodes) > 0

    def local_index(self, global_nodes):
        return np.searchsorted(self.nodes, global_nodes)


def build_patches(grid, assignment):
    patches = []
    for i in range(grid.n_coarse_nodes):
        cells = grid.incident_cells(i)
        nodes = np.sort(np.concatenate([assignment.cell_nodes[c] for c in cells]))
        patches.append(Patch(i, cells, nodes))
    inactive = [p.index for p in patches if not p.active]
    if inactive:
        logger.warning("%d patches contain no fine nodes and are inactive: %s", len(inactive), inactive[:10])
    return patches


def hat_values(grid, coarse_node, coords):
    """Multilinear hat of coarse node y_i evaluated at `coords`"""
    y = grid.coarse_node_coords()[coarse_node]
    return np.prod(np.maximum(0.0, 1.0 - np.abs(coords - y) / grid.H), axis=1)


def partition_of_unity(grid, net, patches):
    """Patches with chi_i filled at their member nodes"""
    return [replace(p, chi=hat_values(grid, p.index, net.coords[p.nodes])) for p in patches]


def pou_matrix(patches, n_nodes):
    """Sparse (coarse nodes x fine nodes) matrix of chi values"""
    rows = np.concatenate([np.full(len(p.nodes), p.index) for p in patches])
    cols = np.concatenate([p.nodes for p in patches])
    values = np.concatenate([p.chi for p in patches])
    return sp.csr_matrix((values, (rows, cols)), shape=(len(patches), n_nodes))
