"""
Network Generator
Builds structured regular, structured irregular and unstructured networks with
Hagen-Poiseuille, high-contrast or raster-field coefficients
"""

import logging
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.spatial import cKDTree

import config
from netcore import Network, connected_components

logger = logging.getLogger(__name__)

FAMILIES = ("structured_regular", "structured_irregular", "unstructured")
PROPERTY_MODES = ("poiseuille_random", "high_contrast", "external_field")
THROAT_RULES = ("random_uniform", "harmonic_of_pores")
FIELD_MODES = ("both", "capacity", "weight_scale")

# Face names per axis as (lower, upper); the last axis is always bottom/top
FACE_NAMES = {
    2: (("left", "right"), ("bottom", "top")),
    3: (("left", "right"), ("front", "back"), ("bottom", "top")),
}


def face_axis(name, dim):
    """(axis, side) of a face label, side 0 = lower face, 1 = upper face"""
    for axis, names in enumerate(FACE_NAMES[dim]):
        if name in names:
            return axis, names.index(name)
    raise ValueError(f"'{name}' is not a face label of a {dim}D box")


@dataclass(frozen=True)
class GeneratorConfig:
    """Network family and size; the seed fully determines the output"""

    family: str
    dims: tuple
    seed: int
    dim: int | None = None
    box: tuple | None = None
    removal_prob: float = config.REMOVAL_PROB
    knn: int = config.KNN

    @property
    def ndim(self):
        if self.dim is not None:
            return self.dim
        if self.box is not None:
            return len(self.box)
        return len(self.dims)

    @property
    def box_lengths(self):
        if self.box is not None:
            return np.array(self.box, dtype=float)
        return np.full(self.ndim, config.BOX_LENGTH)

    @property
    def n_points(self):
        return int(np.prod(self.dims))

    @property
    def spacing(self):
        if self.family == "unstructured":
            return float((np.prod(self.box_lengths) / self.n_points) ** (1.0 / self.ndim))
        return self.box_lengths / (np.array(self.dims) - 1)

    def validate(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family '{self.family}', expected one of {FAMILIES}")
        if self.ndim not in (2, 3) or len(self.box_lengths) != self.ndim:
            raise ValueError(f"dimension must be 2 or 3 with a matching box, got {self.ndim}")
        if self.family == "unstructured":
            if self.n_points < 8:
                raise ValueError(f"unstructured networks need at least 8 points, got {self.n_points}")
            if self.knn < 4:
                raise ValueError(f"knn must be at least 4, got {self.knn}")
        else:
            if len(self.dims) != self.ndim or min(self.dims) < 2:
                raise ValueError(f"lattice dims must give at least 2 nodes on each of {self.ndim} axes, "
                                 f"got {tuple(self.dims)}")
            if not 0 <= self.removal_prob < 1:
                raise ValueError(f"removal_prob must lie in [0, 1), got {self.removal_prob}")
        return self


@dataclass(frozen=True)
class PropertyConfig:
    """How capacities and weights are assigned"""

    mode: str = "poiseuille_random"
    d_min: float = config.DIAMETER_MIN
    d_max: float = config.DIAMETER_MAX
    throat_rule: str = "random_uniform"
    viscosity: float = config.VISCOSITY
    contrast_boxes: tuple = ()
    d_in: float = 10.0
    d_out: float = 1.0
    field_path: str | None = None
    field_mode: str = "both"
    seed: int = 0

    def validate(self):
        if self.mode not in PROPERTY_MODES:
            raise ValueError(f"unknown property mode '{self.mode}', expected one of {PROPERTY_MODES}")
        if self.throat_rule not in THROAT_RULES:
            raise ValueError(f"unknown throat rule '{self.throat_rule}'")
        if not 0 < self.d_min <= self.d_max:
            raise ValueError(f"diameters need 0 < d_min <= d_max, got [{self.d_min}, {self.d_max}]")
        if self.viscosity <= 0:
            raise ValueError(f"viscosity must be positive, got {self.viscosity}")
        if self.mode == "external_field" and not self.field_path:
            raise ValueError("external_field mode needs a field file")
        if self.field_mode not in FIELD_MODES:
            raise ValueError(f"unknown field mode '{self.field_mode}'")
        return self


def seed_streams(seed):
    """Independent (geometry, properties) generators spawned from one run seed"""
    geometry, properties = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(geometry), np.random.default_rng(properties)


def _lattice(cfg):
    dims = np.array(cfg.dims)
    box = cfg.box_lengths
    index = np.indices(dims).reshape(len(dims), -1).T
    coords = index / (dims - 1) * box
    heads, tails = [], []
    for axis in range(len(dims)):
        stride = int(np.prod(dims[axis + 1:]))
        lower = np.flatnonzero(index[:, axis] < dims[axis] - 1)
        heads.append(lower)
        tails.append(lower + stride)
    return Network.from_arrays(box, coords, head=np.concatenate(heads), tail=np.concatenate(tails))


def _largest_component(net, nodes=None):
    nodes = np.arange(net.n_nodes) if nodes is None else np.asarray(nodes)
    components = connected_components(net, nodes)
    main = nodes[components.ids == components.largest]
    if components.count > 1:
        logger.info("kept main cluster of %d nodes, dropped %d smaller clusters",
                    len(main), components.count - 1)
    return net.subnetwork(main)


def gen_structured_regular(cfg):
    return _lattice(cfg.validate())


def gen_structured_irregular(cfg):
    """Lattice with random edge then node removal, reduced to its main cluster"""
    cfg = cfg.validate()
    lattice = _lattice(cfg)
    rng, _ = seed_streams(cfg.seed)
    edge_keep = rng.random(lattice.n_edges) >= cfg.removal_prob
    node_keep = rng.random(lattice.n_nodes) >= cfg.removal_prob
    pruned = Network.from_arrays(lattice.box, lattice.coords,
                                 head=lattice.head[edge_keep], tail=lattice.tail[edge_keep])
    net = _largest_component(pruned, np.flatnonzero(node_keep))
    if net.n_nodes < config.MIN_COMPONENT_NODES:
        raise ValueError(f"main cluster has only {net.n_nodes} nodes; lower removal_prob "
                         f"(currently {cfg.removal_prob})")
    return net


def gen_unstructured(cfg):
    """Uniform random points joined by symmetrized k-nearest-neighbour edges"""
    cfg = cfg.validate()
    rng, _ = seed_streams(cfg.seed)
    box = cfg.box_lengths
    n, d = cfg.n_points, cfg.ndim
    points = rng.uniform(size=(n, d)) * box
    for attempt in range(config.DUPLICATE_POINT_RETRIES + 1):
        distance, _ = cKDTree(points).query(points, k=2)
        duplicate = distance[:, 1] == 0
        if not duplicate.any():
            break
        if attempt == config.DUPLICATE_POINT_RETRIES:
            raise ValueError(f"could not separate duplicate points after {attempt} redraws")
        points[duplicate] = rng.uniform(size=(int(duplicate.sum()), d)) * box

    k = cfg.knn
    if k > n - 1:
        logger.warning("knn=%d exceeds n-1=%d; clamped", k, n - 1)
        k = n - 1
    _, neighbours = cKDTree(points).query(points, k=k + 1)
    pairs = np.column_stack([np.repeat(np.arange(n), k), neighbours[:, 1:].ravel()])
    pairs = np.unique(np.sort(pairs, axis=1), axis=0)
    net = Network.from_arrays(box, points, head=pairs[:, 0], tail=pairs[:, 1])
    return _largest_component(net)


def poiseuille_coefficients(net, pore_diameter, throat_diameter, viscosity):
    """c_i = 4/3 pi R_i^3 and w_ij = pi R_ij^4 / (8 mu L_ij) with center-to-center L_ij"""
    pore_radius = np.asarray(pore_diameter, dtype=float) / 2
    throat_radius = np.asarray(throat_diameter, dtype=float) / 2
    lengths = np.maximum(net.euclidean_lengths(), 1e-12 * net.box.min())
    if not np.all(lengths > 0):
        raise ValueError(f"edge {int(np.argmin(lengths))} has zero length")
    capacity = 4.0 / 3.0 * math.pi * pore_radius ** 3
    weight = math.pi * throat_radius ** 4 / (8.0 * viscosity * lengths)
    return net.with_coefficients(capacity=capacity, weight=weight, node_radius=pore_radius,
                                 edge_radius=throat_radius, edge_length=lengths)


def _harmonic(a, b):
    return 2.0 * a * b / (a + b)


def assign_poiseuille(net, cfg):
    cfg = cfg.validate()
    _, rng = seed_streams(cfg.seed)
    pore = rng.uniform(cfg.d_min, cfg.d_max, size=net.n_nodes)
    d_head, d_tail = pore[net.head], pore[net.tail]
    if cfg.throat_rule == "harmonic_of_pores":
        throat = _harmonic(d_head, d_tail)
    else:
        throat = rng.uniform(cfg.d_min, np.minimum(d_head, d_tail))
    return poiseuille_coefficients(net, pore, throat, cfg.viscosity)


def assign_high_contrast(net, cfg):
    """Pore diameter d_in inside the contrast boxes, d_out elsewhere, harmonic throats"""
    inside = np.zeros(net.n_nodes, dtype=bool)
    for lower, upper in cfg.contrast_boxes:
        lower, upper = np.asarray(lower, dtype=float), np.asarray(upper, dtype=float)
        if len(lower) != net.dim or np.any(lower < 0) or np.any(upper > net.box) or np.any(lower > upper):
            raise ValueError(f"contrast box {lower.tolist()}-{upper.tolist()} is not inside the domain")
        inside |= np.all((net.coords >= lower) & (net.coords <= upper), axis=1)
    pore = np.where(inside, cfg.d_in, cfg.d_out)
    throat = _harmonic(pore[net.head], pore[net.tail])
    return poiseuille_coefficients(net, pore, throat, cfg.viscosity)


def read_raster(path):
    """Raster field file: `dim n1 n2 [n3]`, box lengths, then capacity and weight_scale blocks"""
    try:
        header = np.loadtxt(path, max_rows=1, dtype=np.int64, ndmin=1)
        box = np.loadtxt(path, skiprows=1, max_rows=1, ndmin=1)
        values = np.loadtxt(path, skiprows=2, ndmin=1).ravel()
        dim, cells = int(header[0]), header[1:]
    except (ValueError, IndexError) as e:
        raise ValueError(f"{path}: invalid raster ({e})") from e
    if len(cells) != dim or len(box) != dim or np.any(cells < 1):
        raise ValueError(f"{path}: header declares dim {dim} with cells {cells.tolist()} and box {box.tolist()}")
    n_cells = int(np.prod(cells))
    if len(values) != 2 * n_cells:
        raise ValueError(f"{path}: expected {2 * n_cells} values for {cells.tolist()} cells, got {len(values)}")
    return box, cells, values[:n_cells].reshape(cells), values[n_cells:].reshape(cells)


def load_coefficient_field(net, path, mode="both"):
    """Sample a piecewise-constant raster at every node (half-open cells, last cell closed)"""
    if mode not in FIELD_MODES:
        raise ValueError(f"unknown field mode '{mode}'")
    box, cells, capacity_field, scale_field = read_raster(path)
    if len(box) != net.dim or not np.allclose(box, net.box, rtol=1e-12, atol=0):
        raise ValueError(f"raster box {box.tolist()} does not match the network box {net.box.tolist()}")
    outside = np.flatnonzero(np.any((net.coords < 0) | (net.coords > box), axis=1))
    if len(outside):
        raise ValueError(f"node {outside[0]} lies outside the raster")
    index = np.minimum(np.floor(net.coords / (box / cells)).astype(np.int64), cells - 1)
    cell = tuple(index.T)

    capacity, weight = None, None
    if mode in ("both", "capacity"):
        capacity = capacity_field[cell]
    if mode in ("both", "weight_scale"):
        scale = scale_field[cell]
        lengths = np.where(np.isnan(net.edge_length), net.euclidean_lengths(), net.edge_length)
        lengths = np.maximum(lengths, 1e-12 * net.box.min())
        area = np.where(np.isnan(net.edge_radius), 1.0, math.pi * net.edge_radius ** 2)
        weight = _harmonic(scale[net.head], scale[net.tail]) * area / lengths
    return net.with_coefficients(capacity=capacity, weight=weight)


def label_boundaries(net, tol, faces=None):
    """Label nodes within `tol` of the box faces (e.g. 'top' for the upper face of the last axis)"""
    if tol <= 0:
        raise ValueError(f"label tolerance must be positive, got {tol}")
    names = [name for pair in FACE_NAMES[net.dim] for name in pair] if faces is None else list(faces)
    labels = {}
    for name in names:
        axis, side = face_axis(name, net.dim)
        x = net.coords[:, axis]
        mask = x <= tol if side == 0 else x >= net.box[axis] - tol
        if not mask.any():
            logger.warning("no node within %g of face '%s'", tol, name)
        labels[name] = np.flatnonzero(mask)
    return net.with_labels(labels)


def estimate_spacing(net):
    return float((np.prod(net.box) / max(net.n_nodes, 1)) ** (1.0 / net.dim))


class NetworkGenerator:
    """Config-driven network generation with coefficient assignment and boundary labels"""

    def __init__(self, generator_config, property_config=None, label_tol=None):
        self.generator_config = generator_config.validate()
        self.property_config = property_config.validate() if property_config else None
        self.label_tol = label_tol

    def build_structure(self):
        family = self.generator_config.family
        if family == "structured_regular":
            return gen_structured_regular(self.generator_config)
        if family == "structured_irregular":
            return gen_structured_irregular(self.generator_config)
        return gen_unstructured(self.generator_config)

    def assign_properties(self, net):
        cfg = self.property_config
        if cfg is None:
            return net
        if cfg.mode == "poiseuille_random":
            return assign_poiseuille(net, cfg)
        if cfg.mode == "high_contrast":
            return assign_high_contrast(net, cfg)
        return load_coefficient_field(net, cfg.field_path, cfg.field_mode)

    def generate(self):
        net = self.build_structure()
        net = self.assign_properties(net)
        tol = self.label_tol
        if tol is None:
            tol = config.LABEL_TOLERANCE_FACTOR * estimate_spacing(net)
        net = label_boundaries(net, tol)
        return net.validate(require_connected=True)

    def describe(self):
        """Generator settings as stored in meta.json"""
        described = {"generator": asdict(self.generator_config)}
        if self.property_config is not None:
            described["properties"] = asdict(self.property_config)
        return described

    @staticmethod
    def format_statistics(net):
        stats = net.summary()
        lines = [
            f"Nodes: {stats['nodes']:,}",
            f"Connections: {stats['edges']:,}",
            f"Degree: {stats['degree_min']} - {stats['degree_max']} (mean {stats['degree_mean']:.2f})",
        ]
        if stats["capacity_range"]:
            lines.append("Capacity range: {:.4g} - {:.4g}".format(*stats["capacity_range"]))
        if stats["weight_range"]:
            lines.append("Weight range: {:.4g} - {:.4g}".format(*stats["weight_range"]))
        lines.append(f"Components: {stats['components']}")
        for name, count in stats["labels"].items():
            lines.append(f"Label '{name}': {count:,} nodes")
        return lines

    @staticmethod
    def show_network_statistics(net):
        for line in NetworkGenerator.format_statistics(net):
            print(f"   - {line}")
