"""
Network Core
Weighted network model, Laplacian/mass assembly, Dirichlet elimination and connectivity
"""

import logging
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp
from scipy.sparse import csgraph

logger = logging.getLogger(__name__)


class NodeRecord(NamedTuple):
    coords: np.ndarray
    capacity: float
    radius: float | None
    labels: frozenset


class EdgeRecord(NamedTuple):
    head: int
    tail: int
    weight: float
    length: float | None
    radius: float | None


class ComponentInfo(NamedTuple):
    ids: np.ndarray
    sizes: np.ndarray
    largest: int

    @property
    def count(self):
        return len(self.sizes)


def _readonly(values, dtype, shape=None):
    arr = np.array(values, dtype=dtype)
    if shape is not None:
        arr = arr.reshape(shape)
    arr.setflags(write=False)
    return arr


def _optional(values, n):
    """Per-item optional reals; missing entries are NaN"""
    if values is None:
        return _readonly(np.full(n, np.nan), float)
    return _readonly(values, float, (n,))


@dataclass(frozen=True, eq=False)
class Network:
    """Embedded weighted undirected graph (structure-of-arrays, immutable)"""

    box: np.ndarray
    coords: np.ndarray
    capacity: np.ndarray
    head: np.ndarray
    tail: np.ndarray
    weight: np.ndarray
    node_radius: np.ndarray
    edge_length: np.ndarray
    edge_radius: np.ndarray
    labels: dict = field(default_factory=dict)

    @classmethod
    def from_arrays(cls, box, coords, head=(), tail=(), capacity=None, weight=None,
                    node_radius=None, edge_length=None, edge_radius=None, labels=None):
        box = _readonly(box, float)
        coords = _readonly(coords, float, (-1, len(box)))
        n, m = len(coords), len(head)
        return cls(
            box=box,
            coords=coords,
            capacity=_readonly(np.ones(n) if capacity is None else capacity, float, (n,)),
            head=_readonly(head, np.int64, (m,)),
            tail=_readonly(tail, np.int64, (m,)),
            weight=_readonly(np.ones(m) if weight is None else weight, float, (m,)),
            node_radius=_optional(node_radius, n),
            edge_length=_optional(edge_length, m),
            edge_radius=_optional(edge_radius, m),
            labels={name: _readonly(np.unique(idx), np.int64) for name, idx in (labels or {}).items()},
        )

    @property
    def dim(self):
        return len(self.box)

    @property
    def n_nodes(self):
        return len(self.coords)

    @property
    def n_edges(self):
        return len(self.head)

    def node(self, i):
        radius = self.node_radius[i]
        labels = frozenset(name for name, idx in self.labels.items() if _contains(idx, i))
        return NodeRecord(self.coords[i].copy(), float(self.capacity[i]),
                          None if np.isnan(radius) else float(radius), labels)

    def edge(self, e):
        length, radius = self.edge_length[e], self.edge_radius[e]
        return EdgeRecord(int(self.head[e]), int(self.tail[e]), float(self.weight[e]),
                          None if np.isnan(length) else float(length),
                          None if np.isnan(radius) else float(radius))

    def node_label_lists(self):
        """Sorted label names per node"""
        lists = [[] for _ in range(self.n_nodes)]
        for name in sorted(self.labels):
            for i in self.labels[name]:
                lists[i].append(name)
        return lists

    def label_mask(self, name):
        mask = np.zeros(self.n_nodes, dtype=bool)
        mask[self.labels.get(name, [])] = True
        return mask

    def euclidean_lengths(self):
        return np.linalg.norm(self.coords[self.head] - self.coords[self.tail], axis=1)

    def with_coefficients(self, capacity=None, weight=None, node_radius=None,
                          edge_radius=None, edge_length=None):
        """Copy of the network with some coefficient arrays replaced"""
        n, m = self.n_nodes, self.n_edges
        changes = {}
        if capacity is not None:
            changes["capacity"] = _readonly(capacity, float, (n,))
        if weight is not None:
            changes["weight"] = _readonly(weight, float, (m,))
        if node_radius is not None:
            changes["node_radius"] = _readonly(node_radius, float, (n,))
        if edge_radius is not None:
            changes["edge_radius"] = _readonly(edge_radius, float, (m,))
        if edge_length is not None:
            changes["edge_length"] = _readonly(edge_length, float, (m,))
        return replace(self, **changes)

    def with_labels(self, labels):
        merged = dict(self.labels)
        for name, idx in labels.items():
            merged[name] = _readonly(np.unique(np.asarray(idx, dtype=np.int64)), np.int64)
        return replace(self, labels=merged)

    def subnetwork(self, nodes):
        """Induced subnetwork on `nodes`, reindexed in ascending global order"""
        nodes = np.unique(np.asarray(nodes, dtype=np.int64))
        keep = np.zeros(self.n_nodes, dtype=bool)
        keep[nodes] = True
        new_index = np.full(self.n_nodes, -1, dtype=np.int64)
        new_index[nodes] = np.arange(len(nodes))
        edges = np.flatnonzero(keep[self.head] & keep[self.tail])
        labels = {}
        for name, idx in self.labels.items():
            labels[name] = new_index[idx[keep[idx]]]
        return Network.from_arrays(
            self.box, self.coords[nodes],
            head=new_index[self.head[edges]], tail=new_index[self.tail[edges]],
            capacity=self.capacity[nodes], weight=self.weight[edges],
            node_radius=self.node_radius[nodes], edge_length=self.edge_length[edges],
            edge_radius=self.edge_radius[edges], labels=labels,
        )

    def validate(self, require_connected=False, capacity_bounds=None, weight_bounds=None):
        """Check the network invariants; raises ValueError naming the first offender"""
        if self.dim not in (2, 3):
            raise ValueError(f"dim must be 2 or 3, got {self.dim}")
        if not np.all(np.isfinite(self.box)) or np.any(self.box <= 0):
            raise ValueError(f"box lengths must be positive, got {self.box.tolist()}")
        outside = np.flatnonzero(np.any((self.coords < 0) | (self.coords > self.box), axis=1))
        if len(outside):
            raise ValueError(f"node {outside[0]} lies outside the box: {self.coords[outside[0]].tolist()}")
        check_capacities(self.capacity, capacity_bounds)
        if self.n_edges:
            bad = np.flatnonzero((self.head < 0) | (self.head >= self.n_nodes)
                                 | (self.tail < 0) | (self.tail >= self.n_nodes))
            if len(bad):
                raise ValueError(f"edge {bad[0]} references a missing node")
            loops = np.flatnonzero(self.head == self.tail)
            if len(loops):
                raise ValueError(f"edge {loops[0]} is a self-loop on node {self.head[loops[0]]}")
            duplicate = _first_duplicate_edge(self.head, self.tail)
            if duplicate is not None:
                raise ValueError(f"edge {duplicate} duplicates an earlier edge "
                                 f"({self.head[duplicate]}, {self.tail[duplicate]})")
        check_weights(self.weight, weight_bounds)
        for name, idx in self.labels.items():
            if len(idx) and (idx[0] < 0 or idx[-1] >= self.n_nodes):
                raise ValueError(f"label '{name}' references a missing node")
        if require_connected and self.n_nodes:
            components = connected_components(self)
            if components.count != 1:
                raise ValueError(f"network has {components.count} components, expected one")
        return self

    def summary(self):
        degree = np.bincount(self.head, minlength=self.n_nodes) + np.bincount(self.tail, minlength=self.n_nodes)
        components = connected_components(self) if self.n_nodes else None
        return {
            "dim": self.dim,
            "box": self.box.tolist(),
            "nodes": self.n_nodes,
            "edges": self.n_edges,
            "degree_min": int(degree.min()) if self.n_nodes else 0,
            "degree_max": int(degree.max()) if self.n_nodes else 0,
            "degree_mean": float(degree.mean()) if self.n_nodes else 0.0,
            "capacity_range": [float(self.capacity.min()), float(self.capacity.max())] if self.n_nodes else [],
            "weight_range": [float(self.weight.min()), float(self.weight.max())] if self.n_edges else [],
            "components": components.count if components else 0,
            "labels": {name: int(len(idx)) for name, idx in sorted(self.labels.items())},
        }


def _contains(sorted_idx, i):
    pos = np.searchsorted(sorted_idx, i)
    return pos < len(sorted_idx) and sorted_idx[pos] == i


def _first_duplicate_edge(head, tail):
    pairs = np.sort(np.column_stack([head, tail]), axis=1)
    _, first, counts = np.unique(pairs, axis=0, return_index=True, return_counts=True)
    if np.all(counts == 1):
        return None
    seen = np.zeros(len(pairs), dtype=bool)
    seen[first] = True
    return int(np.flatnonzero(~seen)[0])


def check_weights(weight, bounds=None):
    bad = np.flatnonzero(~np.isfinite(weight) | (weight <= 0))
    if len(bad):
        raise ValueError(f"edge {bad[0]} has nonpositive or nonfinite weight {weight[bad[0]]}")
    if bounds is not None:
        lower, upper = bounds
        bad = np.flatnonzero((weight < lower) | (weight > upper))
        if len(bad):
            raise ValueError(f"edge {bad[0]} weight {weight[bad[0]]} outside [{lower}, {upper}]")


def check_capacities(capacity, bounds=None):
    bad = np.flatnonzero(~np.isfinite(capacity) | (capacity <= 0))
    if len(bad):
        raise ValueError(f"node {bad[0]} has nonpositive or nonfinite capacity {capacity[bad[0]]}")
    if bounds is not None:
        lower, upper = bounds
        bad = np.flatnonzero((capacity < lower) | (capacity > upper))
        if len(bad):
            raise ValueError(f"node {bad[0]} capacity {capacity[bad[0]]} outside [{lower}, {upper}]")


def laplacian_from_edges(n, head, tail, weight):
    """Graph Laplacian of an edge list; the diagonal is the negated off-diagonal row sum"""
    rows = np.concatenate([head, tail])
    cols = np.concatenate([tail, head])
    values = np.concatenate([-weight, -weight]).astype(float)
    off = sp.csr_matrix((values, (rows, cols)), shape=(n, n))
    off.sort_indices()
    diagonal = -np.asarray(off.sum(axis=1)).ravel()
    L = (off + sp.diags(diagonal, format="csr")).tocsr()
    L.sort_indices()
    return L


def assemble_laplacian(net):
    """L = D - W with (Lu)_i = sum_j w_ij (u_i - u_j)"""
    check_weights(net.weight)
    return laplacian_from_edges(net.n_nodes, net.head, net.tail, net.weight)


def assemble_mass(net):
    check_capacities(net.capacity)
    return sp.diags(net.capacity, format="csr")


def degree_matrix(source):
    """Diagonal degree matrix from a Network or from an assembled Laplacian"""
    if isinstance(source, Network):
        degree = np.bincount(source.head, weights=source.weight, minlength=source.n_nodes)
        degree += np.bincount(source.tail, weights=source.weight, minlength=source.n_nodes)
    else:
        degree = sp.csr_matrix(source).diagonal()
    isolated = int(np.count_nonzero(degree == 0))
    if isolated:
        logger.debug("degree matrix has %d zero rows (isolated nodes)", isolated)
    return sp.diags(degree, format="csr")


def incidence_factorization(net):
    """B (N_v x N_e, +1 at head, -1 at tail) and M = diag(w), with B M B^T = L"""
    m = net.n_edges
    columns = np.arange(m)
    B = sp.csr_matrix(
        (np.concatenate([np.ones(m), -np.ones(m)]),
         (np.concatenate([net.head, net.tail]), np.concatenate([columns, columns]))),
        shape=(net.n_nodes, m),
    )
    B.sort_indices()
    return B, sp.diags(net.weight, format="csr")


@dataclass(frozen=True)
class BoundarySpec:
    """Dirichlet values per label; earlier labels take precedence on shared nodes"""

    dirichlet: dict = field(default_factory=dict)

    def dirichlet_values(self, net):
        value = np.full(net.n_nodes, np.nan)
        for name, g in reversed(list(self.dirichlet.items())):
            idx = net.labels.get(name)
            if idx is None or len(idx) == 0:
                logger.warning("boundary label '%s' has no nodes", name)
                continue
            value[idx] = float(g)
        nodes = np.flatnonzero(~np.isnan(value))
        return nodes, value[nodes]


@dataclass(frozen=True, eq=False)
class ReducedSystem:
    """Free-node system after eliminating Dirichlet nodes with a static lift"""

    free_index: np.ndarray
    global_to_free: np.ndarray
    dirichlet_index: np.ndarray
    L_free: sp.csr_matrix
    C_free: sp.csr_matrix
    f_free: np.ndarray
    rhs_bc: np.ndarray
    lift: np.ndarray

    @property
    def n_nodes(self):
        return len(self.lift)

    @property
    def n_free(self):
        return len(self.free_index)

    def embed(self, u_free):
        u = self.lift.copy()
        u[self.free_index] = u_free
        return u

    def restrict(self, u):
        return np.asarray(u, dtype=float)[self.free_index]

    def source(self, f):
        """Restrict a full-length source vector (None means zero)"""
        if f is None:
            return self.f_free
        return self.restrict(f)


def reduce_dirichlet(L, C, f, bc, net):
    """Eliminate Dirichlet nodes: the free system keeps L_free symmetric and moves g into rhs_bc"""
    L = sp.csr_matrix(L)
    C = sp.csr_matrix(C)
    n = L.shape[0]
    dirichlet, values = bc.dirichlet_values(net)
    if len(dirichlet) == n:
        raise ValueError("every node is a Dirichlet node; the free system is empty")
    lift = np.zeros(n)
    lift[dirichlet] = values
    is_dirichlet = np.zeros(n, dtype=bool)
    is_dirichlet[dirichlet] = True
    free = np.flatnonzero(~is_dirichlet)
    global_to_free = np.full(n, -1, dtype=np.int64)
    global_to_free[free] = np.arange(len(free))

    rows = L[free]
    L_free = rows[:, free].tocsr()
    L_free.sort_indices()
    C_free = C[free][:, free].tocsr()
    C_free.sort_indices()
    rhs_bc = -(rows[:, dirichlet] @ values) if len(dirichlet) else np.zeros(len(free))
    f_full = np.zeros(n) if f is None else np.asarray(f, dtype=float)
    return ReducedSystem(free, global_to_free, dirichlet, L_free, C_free,
                         f_full[free], np.asarray(rhs_bc, dtype=float), lift)


def induced_subgraph(net, nodes):
    """Edges with both endpoints in `nodes`, in local (sorted) numbering"""
    nodes = np.unique(np.asarray(nodes, dtype=np.int64))
    inside = np.zeros(net.n_nodes, dtype=bool)
    inside[nodes] = True
    edges = np.flatnonzero(inside[net.head] & inside[net.tail])
    local_head = np.searchsorted(nodes, net.head[edges])
    local_tail = np.searchsorted(nodes, net.tail[edges])
    return nodes, local_head, local_tail, edges


def components_from_edges(n, head, tail):
    """Component ids ordered by lowest member index; largest wins ties by lowest id"""
    if n == 0:
        return ComponentInfo(np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64), -1)
    adjacency = sp.coo_matrix((np.ones(len(head)), (head, tail)), shape=(n, n))
    _, labels = csgraph.connected_components(adjacency, directed=False)
    _, first = np.unique(labels, return_index=True)
    remap = np.empty(len(first), dtype=np.int64)
    remap[np.argsort(first)] = np.arange(len(first))
    ids = remap[labels]
    sizes = np.bincount(ids)
    return ComponentInfo(ids, sizes, int(np.argmax(sizes)))


def connected_components(net, nodes=None):
    """Components of the network, or of the subgraph induced by `nodes` (ids follow sorted `nodes`)"""
    if nodes is None:
        return components_from_edges(net.n_nodes, net.head, net.tail)
    nodes, local_head, local_tail, _ = induced_subgraph(net, nodes)
    return components_from_edges(len(nodes), local_head, local_tail)
