"""
Upscaling
Flux-averaging homogenization into a coarse finite-volume network of cells
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

import config
from coarse_grid import assign_nodes_to_cells
from netcore import Network, ReducedSystem, components_from_edges, induced_subgraph, laplacian_from_edges
from network_generator import face_axis
from time_solver import LinearSolverConfig, fine_solve, jacobi_cg

logger = logging.getLogger(__name__)

DEGENERATE_DROP = 1e-14
LAYER_TOLERANCE = 1e-9


@dataclass(frozen=True, eq=False)
class FaceDomain:
    """Local domain of one coarse face: two cells, or one cell next to a labeled boundary"""

    index: int
    axis: int
    cells: tuple
    nodes: np.ndarray
    inflow: np.ndarray
    outflow: np.ndarray
    label: str | None = None

    @property
    def is_boundary(self):
        return self.label is not None

    @property
    def has_layers(self):
        return len(self.inflow) > 0 and len(self.outflow) > 0


@dataclass(frozen=True, eq=False)
class LocalFlow:
    """Solution of the local 1/0 problem; NaN on components with no Dirichlet node"""

    nodes: np.ndarray
    edges: np.ndarray
    u: np.ndarray
    solvable: bool
    reason: str = ""


@dataclass(frozen=True, eq=False)
class UpscaledModel:
    """
    Coarse network: active cells are the unknowns, interior faces carry w_bar, and
    boundary entries couple a cell to a Dirichlet value through w_bar_b.
    """

    grid: object
    cells: np.ndarray
    capacity: np.ndarray
    head: np.ndarray
    tail: np.ndarray
    weight: np.ndarray
    axis: np.ndarray
    boundary_cell: np.ndarray
    boundary_weight: np.ndarray
    boundary_label: tuple
    unsolvable_faces: tuple = ()

    @property
    def n_cells(self):
        return len(self.cells)

    def expand(self, values):
        """Per-active-cell values to a full per-cell vector (NaN for empty cells)"""
        full = np.full(self.grid.n_cells, np.nan)
        full[self.cells] = values
        return full

    def laplacian(self):
        keep = self.weight > 0
        return laplacian_from_edges(self.n_cells, self.head[keep], self.tail[keep], self.weight[keep])

    def to_network(self):
        """Cells at their centers as nodes; boundary-coupled cells carry the boundary label"""
        keep = self.weight > 0
        labels = {}
        for cell, label in zip(self.boundary_cell, self.boundary_label):
            labels.setdefault(label, []).append(cell)
        return Network.from_arrays(
            self.grid.box, self.grid.cell_centers()[self.cells],
            head=self.head[keep], tail=self.tail[keep],
            capacity=self.capacity, weight=self.weight[keep],
            labels={name: np.array(idx, dtype=np.int64) for name, idx in labels.items()},
        )


def _neighbour(grid, cell, axis):
    multi = grid.cell_multi_index(cell)
    if multi[axis] + 1 >= grid.cells[axis]:
        return None
    multi[axis] += 1
    return grid.cell_index(multi)


def _layer(nodes, distance, delta):
    """Nodes within delta of a face, widened to the nearest node row when delta holds none"""
    if len(nodes) == 0:
        return nodes
    reach = max(delta, float(distance.min()))
    if reach > delta:
        logger.debug("flow layer widened from %g to %g", delta, reach)
    return nodes[distance <= reach + LAYER_TOLERANCE * max(reach, 1.0)]


def face_domains(grid, assignment, net, bc=None, delta_factor=config.FLOW_LAYER_FACTOR):
    """
    Interior faces in axis-major order, then one boundary face per (label, adjacent cell) pair.

    Inflow is the layer within delta = delta_factor * H_k of the lower outer face of the
    two-cell domain, outflow the layer near the upper outer face. For boundary faces the
    labeled nodes are the inflow and the outflow layer sits at the opposite face of the cell.
    A layer that would be empty takes the node row closest to its face instead.
    """
    coords = net.coords
    faces = []
    for axis in range(grid.dim):
        delta = delta_factor * grid.H[axis]
        for cell in range(grid.n_cells):
            other = _neighbour(grid, cell, axis)
            if other is None:
                continue
            nodes = np.sort(np.concatenate([assignment.cell_nodes[cell], assignment.cell_nodes[other]]))
            lower = grid.cell_bounds(cell)[0][axis]
            upper = grid.cell_bounds(other)[1][axis]
            x = coords[nodes, axis]
            inflow = _layer(nodes, x - lower, delta)
            outflow = np.setdiff1d(_layer(nodes, upper - x, delta), inflow)
            faces.append(FaceDomain(len(faces), axis, (cell, other), nodes, inflow, outflow))

    labels = [] if bc is None else list(bc.dirichlet)
    for label in labels:
        axis, side = face_axis(label, grid.dim)
        delta = delta_factor * grid.H[axis]
        labeled = net.label_mask(label)
        for cell in range(grid.n_cells):
            if grid.cell_multi_index(cell)[axis] != (0 if side == 0 else grid.cells[axis] - 1):
                continue
            nodes = assignment.cell_nodes[cell]
            inflow = nodes[labeled[nodes]]
            if len(inflow) == 0:
                continue
            lo, hi = grid.cell_bounds(cell)
            rest = np.setdiff1d(nodes, inflow)
            x = coords[rest, axis]
            outflow = _layer(rest, (x - lo[axis]) if side == 1 else (hi[axis] - x), delta)
            faces.append(FaceDomain(len(faces), axis, (cell,), np.sort(nodes), inflow, outflow, label))
    return faces


def local_flow_solve(face, net, rtol=config.LOCAL_FLOW_RTOL):
    """L u = 0 on the face domain with u = 1 on inflow, u = 0 on outflow, zero flux elsewhere"""
    nodes, head, tail, edges = induced_subgraph(net, face.nodes)
    u = np.full(len(nodes), np.nan)
    if not face.has_layers:
        return LocalFlow(nodes, edges, u, False, "empty inflow or outflow layer")

    inflow = np.searchsorted(nodes, face.inflow)
    outflow = np.searchsorted(nodes, face.outflow)
    components = components_from_edges(len(nodes), head, tail)
    touches_in = np.zeros(components.count, dtype=bool)
    touches_out = np.zeros(components.count, dtype=bool)
    touches_in[components.ids[inflow]] = True
    touches_out[components.ids[outflow]] = True
    if not np.any(touches_in & touches_out):
        return LocalFlow(nodes, edges, u, False, "inflow and outflow are disconnected")

    dirichlet = np.zeros(len(nodes), dtype=bool)
    dirichlet[inflow] = True
    dirichlet[outflow] = True
    g = np.zeros(len(nodes))
    g[inflow] = 1.0
    determined = (touches_in | touches_out)[components.ids]
    free = np.flatnonzero(determined & ~dirichlet)
    u[dirichlet] = g[dirichlet]
    if len(free):
        L = laplacian_from_edges(len(nodes), head, tail, net.weight[edges])
        rows = L[free]
        A = rows[:, free].tocsr()
        b = -(rows[:, np.flatnonzero(dirichlet)] @ g[dirichlet])
        x, converged, iterations, residual = jacobi_cg(A, b, np.zeros(len(free)), rtol)
        if not converged:
            return LocalFlow(nodes, edges, u, False,
                             f"CG stalled at residual {residual:.2e} after {iterations} iterations")
        u[free] = x
    return LocalFlow(nodes, edges, u, True)


def _average(values, volumes):
    ok = np.isfinite(values)
    if not ok.any():
        return np.nan
    return float(np.sum(values[ok] * volumes[ok]) / np.sum(volumes[ok]))


def effective_weight(face, flow, net, assignment, weighted=True):
    """
    w_bar = q_bar / (u_bar_i - u_bar_j) from the local solution; NaN when the drop is degenerate.

    q_bar sums w (u_l - u_n) over fine edges from K_i to K_j (from the labeled nodes into the
    cell for boundary faces, where the drop is 1 - u_bar_i).
    """
    if not flow.solvable:
        return np.nan
    u = np.full(net.n_nodes, np.nan)
    u[flow.nodes] = flow.u
    volumes = net.capacity if weighted else np.ones(net.n_nodes)
    head, tail = net.head[flow.edges], net.tail[flow.edges]
    w = net.weight[flow.edges]
    cell_i = face.cells[0]
    nodes_i = assignment.cell_nodes[cell_i]
    mean_i = _average(u[nodes_i], volumes[nodes_i])

    if face.is_boundary:
        source = np.zeros(net.n_nodes, dtype=bool)
        source[face.inflow] = True
        forward = source[head] & ~source[tail]
        backward = source[tail] & ~source[head]
        drop = 1.0 - mean_i
    else:
        cell_j = face.cells[1]
        nodes_j = assignment.cell_nodes[cell_j]
        owner = assignment.owner
        forward = (owner[head] == cell_i) & (owner[tail] == cell_j)
        backward = (owner[head] == cell_j) & (owner[tail] == cell_i)
        drop = mean_i - _average(u[nodes_j], volumes[nodes_j])

    diff = u[head] - u[tail]
    flux = np.nansum(w[forward] * diff[forward]) - np.nansum(w[backward] * diff[backward])
    if not np.isfinite(drop) or abs(drop) < DEGENERATE_DROP:
        return np.nan
    return float(flux / drop)


def effective_capacity(assignment, net):
    """c_bar per cell: sum of member capacities (0 for empty cells)"""
    capacity = np.bincount(assignment.owner, weights=net.capacity, minlength=len(assignment.cell_nodes))
    empty = np.flatnonzero(capacity == 0)
    if len(empty):
        logger.warning("%d empty coarse cells are excluded from the coarse unknowns: %s",
                       len(empty), empty[:10].tolist())
    return capacity


def _face_weight(args):
    face, net, assignment, rtol, weighted = args
    flow = local_flow_solve(face, net, rtol)
    weight = effective_weight(face, flow, net, assignment, weighted)
    reason = flow.reason
    if flow.solvable and not (np.isfinite(weight) and weight > 0):
        reason = "degenerate cell-average drop"
        weight = np.nan
    return weight, reason


def upscale_network(net, grid, bc, delta_factor=config.FLOW_LAYER_FACTOR, rtol=config.LOCAL_FLOW_RTOL,
                    weighted=True, threads=config.THREADS, unsolvable_limit=config.UNSOLVABLE_FACE_LIMIT):
    """Build the upscaled coarse network for `net` on `grid` with Dirichlet coupling from `bc`"""
    assignment = assign_nodes_to_cells(net, grid)
    capacity = effective_capacity(assignment, net)
    active = np.flatnonzero(capacity > 0)
    cell_to_active = np.full(grid.n_cells, -1, dtype=np.int64)
    cell_to_active[active] = np.arange(len(active))

    faces = face_domains(grid, assignment, net, bc, delta_factor)
    faces = [f for f in faces if all(cell_to_active[c] >= 0 for c in f.cells)]
    if not any(f.is_boundary for f in faces):
        raise ValueError(f"no coarse cell contains nodes of the Dirichlet labels {list(bc.dirichlet)}")

    jobs = [(face, net, assignment, rtol, weighted) for face in faces]
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        results = list(pool.map(_face_weight, jobs))

    unsolvable = []
    for face, (weight, reason) in zip(faces, results):
        if not np.isfinite(weight):
            logger.warning("face %d (cells %s, axis %d) is unsolvable: %s; using w_bar = 0",
                           face.index, face.cells, face.axis, reason)
            unsolvable.append(face.index)
    interior = [f for f in faces if not f.is_boundary]
    blocked = len(set(unsolvable) & {f.index for f in interior})
    if interior and blocked / len(interior) > unsolvable_limit:
        raise ValueError(f"{blocked} of {len(interior)} interior faces are unsolvable; "
                         f"the coarse grid is too coarse for this network")

    weights = np.array([w if np.isfinite(w) else 0.0 for w, _ in results])
    is_boundary = np.array([f.is_boundary for f in faces], dtype=bool)
    inner = [f for f in faces if not f.is_boundary]
    outer = [f for f in faces if f.is_boundary]
    logger.info("upscaled %d cells: %d interior faces, %d boundary faces, %d unsolvable",
                len(active), len(inner), len(outer), len(unsolvable))
    return UpscaledModel(
        grid=grid,
        cells=active,
        capacity=capacity[active],
        head=np.array([cell_to_active[f.cells[0]] for f in inner], dtype=np.int64),
        tail=np.array([cell_to_active[f.cells[1]] for f in inner], dtype=np.int64),
        weight=weights[~is_boundary],
        axis=np.array([f.axis for f in inner], dtype=np.int64),
        boundary_cell=np.array([cell_to_active[f.cells[0]] for f in outer], dtype=np.int64),
        boundary_weight=weights[is_boundary],
        boundary_label=tuple(f.label for f in outer),
        unsolvable_faces=tuple(unsolvable),
    )


def coarse_fv_solve(model, bc, tg, f_bar=None, u0=None, solver_config=None, save_every=None):
    """
    Implicit Euler on the coarse network:
        c_bar_i (u_i^n - u_i^{n-1}) / tau + sum_j w_bar_ij (u_i^n - u_j^n) + w_bar_b (u_i^n - g) = f_bar_i
    """
    keep = model.weight > 0
    components = components_from_edges(model.n_cells, model.head[keep], model.tail[keep])
    if components.count != 1:
        raise ValueError(f"coarse network has {components.count} components, expected one")

    n = model.n_cells
    coupling = np.bincount(model.boundary_cell, weights=model.boundary_weight, minlength=n)
    values = np.array([bc.dirichlet[label] for label in model.boundary_label], dtype=float)
    rhs_bc = np.bincount(model.boundary_cell, weights=model.boundary_weight * values, minlength=n)
    L = (model.laplacian() + sp.diags(coupling)).tocsr()
    reduced = ReducedSystem(
        free_index=np.arange(n),
        global_to_free=np.arange(n),
        dirichlet_index=np.zeros(0, dtype=np.int64),
        L_free=L,
        C_free=sp.diags(model.capacity, format="csr"),
        f_free=np.zeros(n) if f_bar is None else np.asarray(f_bar, dtype=float),
        rhs_bc=rhs_bc,
        lift=np.zeros(n),
    )
    u0 = np.zeros(n) if u0 is None else u0
    return fine_solve(reduced, f_bar, u0, tg, solver_config or LinearSolverConfig(), save_every)


def prolong_piecewise_constant(u_bar, assignment):
    """Every fine node receives its owning cell's value (u_bar indexed by cell)"""
    return np.asarray(u_bar, dtype=float)[assignment.owner]
