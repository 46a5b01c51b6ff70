"""
Multiscale Basis
Offline stage: patch subnetworks, main clusters, local spectral problems,
basis functions psi = chi * phi and the projection operator R
"""

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import NamedTuple

import numpy as np
import pandas as pd
import scipy.linalg
import scipy.sparse as sp
from scipy.sparse.linalg import ArpackNoConvergence, eigsh

import config
from coarse_grid import assign_nodes_to_cells, build_patches, partition_of_unity
from netcore import components_from_edges, induced_subgraph, laplacian_from_edges

logger = logging.getLogger(__name__)


class EigenSolveError(RuntimeError):
    """Local eigensolver failed on a patch"""


class BasisFormatError(ValueError):
    """Malformed or incompatible basis files"""


@dataclass(frozen=True, eq=False)
class LocalSubnetwork:
    patch_id: int
    nodes: np.ndarray
    head: np.ndarray
    tail: np.ndarray
    weight: np.ndarray
    mask: np.ndarray | None = None
    eta: np.ndarray | None = None
    n_components: int = 0

    @property
    def n_local(self):
        return len(self.nodes)

    @property
    def n_edges(self):
        return len(self.head)

    @property
    def cluster_size(self):
        return int(self.mask.sum())

    def laplacian(self):
        return laplacian_from_edges(self.n_local, self.head, self.tail, self.weight)


@dataclass(frozen=True, eq=False)
class LocalEigenSet:
    patch_id: int
    eigenvalues: np.ndarray
    vectors: np.ndarray  # n_local x M, zero off the main cluster

    @property
    def count(self):
        return len(self.eigenvalues)


@dataclass(frozen=True, eq=False)
class BasisSet:
    patch_id: int
    nodes: np.ndarray
    vectors: np.ndarray  # one row per basis function over the patch nodes
    kinds: tuple
    indices: tuple


class RowMeta(NamedTuple):
    patch: int
    basis_index: int
    kind: str


@dataclass(frozen=True, eq=False)
class ProjectionOperator:
    """R (coarse DOFs x free fine nodes) with per-row provenance"""

    R: sp.csr_matrix
    row_meta: tuple
    grid_cells: tuple = ()
    box: tuple = ()
    basis_counts: dict | None = None
    network_hash: str | None = None

    @property
    def n_rows(self):
        return self.R.shape[0]

    @property
    def n_cols(self):
        return self.R.shape[1]


class PatchDiagnostics(NamedTuple):
    patch: int
    nodes: int
    cluster_size: int
    satellites: int
    basis_count: int
    eigenvalues: list


def extract_subnetwork(net, patch):
    """Subnetwork of a patch: only edges with both endpoints inside are kept"""
    if not patch.active:
        raise ValueError(f"patch {patch.index} is inactive")
    nodes, head, tail, edges = induced_subgraph(net, patch.nodes)
    if len(edges) == 0:
        logger.warning("patch %d has no internal edges; only indicator/constant basis produced", patch.index)
    return LocalSubnetwork(patch.index, nodes, head, tail, net.weight[edges])


def main_cluster(sub):
    components = components_from_edges(sub.n_local, sub.head, sub.tail)
    mask = components.ids == components.largest
    return replace(sub, mask=mask, eta=(~mask).astype(float), n_components=components.count)


def _fix_signs(vectors):
    """Largest-magnitude entry of each column made positive (lowest index on ties)"""
    pivot = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[pivot, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


def local_eigensolve(sub, M, dense_limit=config.DENSE_EIGEN_LIMIT, tol=config.EIGEN_TOLERANCE):
    """Smallest M pairs of L phi = lambda D phi on the main cluster, D-orthonormal"""
    cluster = np.flatnonzero(sub.mask)
    n = len(cluster)
    if n == 0:
        raise ValueError(f"patch {sub.patch_id} has an empty main cluster")
    if M < 1:
        raise ValueError(f"patch {sub.patch_id}: basis count must be at least 1, got {M}")
    if M > n:
        logger.warning("patch %d: M=%d exceeds main cluster size %d; clamped", sub.patch_id, M, n)
        M = n

    local = np.full(sub.n_local, -1, dtype=np.int64)
    local[cluster] = np.arange(n)
    inside = sub.mask[sub.head] & sub.mask[sub.tail]
    L = laplacian_from_edges(n, local[sub.head[inside]], local[sub.tail[inside]], sub.weight[inside])
    degree = L.diagonal()

    if n == 1:
        values, phi = np.zeros(1), np.ones((1, 1))
    else:
        scale = sp.diags(1.0 / np.sqrt(degree))
        A = (scale @ L @ scale).tocsr()
        A = (A + A.T) * 0.5
        if n <= dense_limit or M >= n - 1:
            values, V = scipy.linalg.eigh(A.toarray(), subset_by_index=[0, M - 1])
        else:
            v0 = np.linspace(1.0, 2.0, n)
            try:
                values, V = eigsh(A, k=M, sigma=-1e-2, which="LM", tol=tol, v0=v0 / np.linalg.norm(v0))
            except ArpackNoConvergence as e:
                raise EigenSolveError(f"eigensolver did not converge on patch {sub.patch_id}: {e}") from e
            order = np.argsort(values)
            values, V = values[order], V[:, order]
        if values[0] < -1e-8:
            raise EigenSolveError(f"patch {sub.patch_id}: negative eigenvalue {values[0]}")
        values = np.maximum(values, 0.0)
        phi = V / np.sqrt(degree)[:, None]

    vectors = np.zeros((sub.n_local, M))
    vectors[cluster] = _fix_signs(phi)
    return LocalEigenSet(sub.patch_id, values, vectors)


def eigen_residuals(sub, eigenset):
    """(max |phi^T D phi - I|, max ||L phi - lambda D phi|| / ||D phi||) on the main cluster"""
    cluster = np.flatnonzero(sub.mask)
    inside = sub.mask[sub.head] & sub.mask[sub.tail]
    local = np.full(sub.n_local, -1, dtype=np.int64)
    local[cluster] = np.arange(len(cluster))
    L = laplacian_from_edges(len(cluster), local[sub.head[inside]], local[sub.tail[inside]], sub.weight[inside])
    degree = L.diagonal()
    phi = eigenset.vectors[cluster]
    if len(cluster) == 1:
        return 0.0, 0.0
    gram = phi.T @ (degree[:, None] * phi)
    orthogonality = float(np.abs(gram - np.eye(eigenset.count)).max())
    D_phi = degree[:, None] * phi
    residual = L @ phi - D_phi * eigenset.eigenvalues
    relative = np.linalg.norm(residual, axis=0) / np.linalg.norm(D_phi, axis=0)
    return orthogonality, float(relative.max())


def build_basis(patches, eigensets, subnetworks):
    """psi_1 = chi * eta (only when eta is nonzero), psi_{r+1} = chi * phi_r"""
    bases = []
    for patch, eigenset, sub in zip(patches, eigensets, subnetworks):
        rows, kinds, indices = [], [], []
        if sub.eta.any():
            rows.append(patch.chi * sub.eta)
            kinds.append("indicator")
            indices.append(0)
        for r in range(eigenset.count):
            rows.append(patch.chi * eigenset.vectors[:, r])
            kinds.append("eigen")
            indices.append(r + 1)
        bases.append(BasisSet(patch.index, patch.nodes, np.array(rows), tuple(kinds), tuple(indices)))
    return bases


def assemble_projection(bases, global_to_free, n_free):
    """Stack basis rows restricted to free nodes; rows that vanish there are dropped"""
    rows, cols, values, meta = [], [], [], []
    for basis in bases:
        free = global_to_free[basis.nodes]
        keep = free >= 0
        for vector, kind, index in zip(basis.vectors, basis.kinds, basis.indices):
            v = vector[keep]
            nonzero = v != 0
            if not nonzero.any():
                logger.warning("dropped all-zero %s basis %d of patch %d after Dirichlet restriction",
                               kind, index, basis.patch_id)
                continue
            rows.append(np.full(int(nonzero.sum()), len(meta)))
            cols.append(free[keep][nonzero])
            values.append(v[nonzero])
            meta.append(RowMeta(basis.patch_id, index, kind))
    if not meta:
        raise ValueError("projection operator has no rows")
    R = sp.csr_matrix((np.concatenate(values), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(len(meta), n_free))
    R.sort_indices()
    return ProjectionOperator(R, tuple(meta))


def _patch_eigenproblem(net, patch, count):
    sub = main_cluster(extract_subnetwork(net, patch))
    M = sub.cluster_size if count is None else count
    return sub, local_eigensolve(sub, M)


def offline_stage(net, grid, reduced, basis_count=config.BASIS_COUNT, overrides=None,
                  full_eigenbasis=False, threads=1, network_hash=None):
    """
    Build the multiscale space for `net` on `grid`.

    basis_count is the uniform M; overrides maps patch index -> M_i. With full_eigenbasis
    every patch keeps all eigenvectors of its main cluster. Patches are solved on a thread
    pool and merged in patch order, so the result does not depend on `threads`.
    """
    assignment = assign_nodes_to_cells(net, grid)
    patches = [p for p in partition_of_unity(grid, net, build_patches(grid, assignment)) if p.active]
    overrides = overrides or {}
    counts = [None if full_eigenbasis else overrides.get(p.index, basis_count) for p in patches]

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        results = list(pool.map(lambda item: _patch_eigenproblem(net, *item), zip(patches, counts)))
    subnetworks = [sub for sub, _ in results]
    eigensets = [eig for _, eig in results]

    bases = build_basis(patches, eigensets, subnetworks)
    projection = assemble_projection(bases, reduced.global_to_free, reduced.n_free)
    diagnostics = [
        PatchDiagnostics(p.index, p.nodes.size, sub.cluster_size, sub.n_components - 1,
                         eig.count, eig.eigenvalues.tolist())
        for p, sub, eig in zip(patches, subnetworks, eigensets)
    ]
    projection = replace(
        projection,
        grid_cells=tuple(int(m) for m in grid.cells),
        box=tuple(float(b) for b in grid.box),
        basis_counts={d.patch: d.basis_count for d in diagnostics},
        network_hash=network_hash,
    )
    logger.info("offline stage: %d patches, %d coarse DOFs", len(patches), projection.n_rows)
    return projection, diagnostics


def save_basis(projection, directory, diagnostics=None):
    """Write basis.json (header) and R.coo (sorted `row col value` triplets)"""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    coo = projection.R.tocoo()
    header = {
        "format_version": config.BASIS_FORMAT_VERSION,
        "grid_cells": list(projection.grid_cells),
        "box": list(projection.box),
        "basis_counts": {str(k): v for k, v in sorted((projection.basis_counts or {}).items())},
        "rows": [list(meta) for meta in projection.row_meta],
        "shape": list(projection.R.shape),
        "nnz": int(coo.nnz),
        "network_hash": projection.network_hash,
    }
    if diagnostics is not None:
        header["patches"] = [d._asdict() for d in diagnostics]
    with open(directory / "basis.json", "w", newline="\n") as f:
        json.dump(header, f, indent=2, sort_keys=True)
        f.write("\n")
    with open(directory / "R.coo", "w", newline="\n") as f:
        for row, col, value in zip(coo.row, coo.col, coo.data):
            f.write(f"{row} {col} {float(value):.17g}\n")
    logger.info("saved basis with %d rows (%d nonzeros) to %s", projection.n_rows, coo.nnz, directory)
    return directory


def load_basis(directory):
    directory = Path(directory)
    header_path = directory / "basis.json"
    try:
        with open(header_path) as f:
            header = json.load(f)
    except FileNotFoundError as e:
        raise BasisFormatError(f"{header_path} not found") from e
    except json.JSONDecodeError as e:
        raise BasisFormatError(f"{header_path} line {e.lineno}: {e.msg}") from e
    version = header.get("format_version")
    if version != config.BASIS_FORMAT_VERSION:
        raise BasisFormatError(f"{header_path}: format version {version} refused "
                               f"(expected {config.BASIS_FORMAT_VERSION})")
    try:
        n_rows, n_cols = (int(v) for v in header["shape"])
        nnz = int(header["nnz"])
        row_meta = tuple(RowMeta(int(p), int(i), str(k)) for p, i, k in header["rows"])
    except (KeyError, TypeError, ValueError) as e:
        raise BasisFormatError(f"{header_path}: incomplete header ({e})") from e
    if len(row_meta) != n_rows:
        raise BasisFormatError(f"{header_path}: {len(row_meta)} row records for {n_rows} rows")

    coo_path = directory / "R.coo"
    try:
        entries = pd.read_csv(coo_path, sep=" ", header=None, names=["row", "col", "value"],
                              dtype={"row": np.int64, "col": np.int64, "value": float}, float_precision="round_trip")
    except FileNotFoundError as e:
        raise BasisFormatError(f"{coo_path} not found") from e
    except pd.errors.EmptyDataError:
        entries = pd.DataFrame({"row": [], "col": [], "value": []})
    except ValueError as e:
        raise BasisFormatError(f"{coo_path}: expected 'row col value' lines ({e})") from e
    rows = entries["row"].to_numpy(dtype=np.int64)
    cols = entries["col"].to_numpy(dtype=np.int64)
    values = entries["value"].to_numpy(dtype=float)

    outside = np.flatnonzero((rows < 0) | (rows >= n_rows) | (cols < 0) | (cols >= n_cols))
    if len(outside):
        i = outside[0]
        raise BasisFormatError(f"{coo_path} line {i + 1}: entry ({rows[i]}, {cols[i]}) outside {n_rows}x{n_cols}")
    unsorted = np.flatnonzero(np.diff(rows * n_cols + cols) <= 0)
    if len(unsorted):
        raise BasisFormatError(f"{coo_path} line {unsorted[0] + 2}: entries not sorted by (row, col)")
    if len(values) != nnz:
        raise BasisFormatError(f"{coo_path}: truncated, {len(values)} of {nnz} entries present")

    R = sp.csr_matrix((values, (rows, cols)), shape=(n_rows, n_cols))
    R.sort_indices()
    return ProjectionOperator(
        R, row_meta,
        grid_cells=tuple(header.get("grid_cells", ())),
        box=tuple(header.get("box", ())),
        basis_counts={int(k): int(v) for k, v in header.get("basis_counts", {}).items()},
        network_hash=header.get("network_hash"),
    )
