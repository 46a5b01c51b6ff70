"""
Network File I/O
nodes.csv / edges.csv / meta.json network format and u.csv solution vectors
"""

import hashlib
import json
import logging
from pathlib import Path

import numpy as np
import pandas as pd

from netcore import Network

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.17g"
AXES = ("x", "y", "z")
EDGE_COLUMNS = ["head", "tail", "weight", "length", "radius"]


class NetworkFormatError(ValueError):
    """Malformed network or solution file"""


def _write_csv(df, path):
    df.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n", na_rep="")


def _read_csv(path, expected_columns):
    try:
        df = pd.read_csv(path, dtype=str, keep_default_na=False)
    except pd.errors.ParserError as e:
        raise NetworkFormatError(f"{path}: {e}") from e
    except pd.errors.EmptyDataError as e:
        raise NetworkFormatError(f"{path}: file is empty") from e
    if list(df.columns) != expected_columns:
        raise NetworkFormatError(f"{path} line 1: expected header {','.join(expected_columns)}, "
                                 f"got {','.join(df.columns)}")
    return df


def _numeric(df, column, path, optional=False, integer=False):
    """Parse one column, reporting the first bad value with its file line number"""
    raw = df[column].str.strip()
    values = pd.to_numeric(raw.replace("", np.nan) if optional else raw, errors="coerce")
    bad = values.isna() & ((raw != "") if optional else True)
    if bad.any():
        row = int(np.flatnonzero(bad.to_numpy())[0])
        raise NetworkFormatError(f"{path} line {row + 2}: invalid {column} value '{df[column].iloc[row]}'")
    values = values.to_numpy(dtype=float)
    if integer:
        if np.any(values != np.round(values)):
            row = int(np.flatnonzero(values != np.round(values))[0])
            raise NetworkFormatError(f"{path} line {row + 2}: {column} must be an integer")
        return values.astype(np.int64)
    return values


def write_network(net, directory, generator="", seed=None):
    """Write nodes.csv, edges.csv and meta.json into `directory`"""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)

    nodes = {"id": np.arange(net.n_nodes)}
    for k in range(net.dim):
        nodes[AXES[k]] = net.coords[:, k]
    nodes["capacity"] = net.capacity
    nodes["radius"] = net.node_radius
    nodes["labels"] = [";".join(names) for names in net.node_label_lists()]
    _write_csv(pd.DataFrame(nodes), directory / "nodes.csv")

    edges = pd.DataFrame({
        "head": net.head,
        "tail": net.tail,
        "weight": net.weight,
        "length": net.edge_length,
        "radius": net.edge_radius,
    })
    _write_csv(edges, directory / "edges.csv")

    meta = {
        "dim": net.dim,
        "box": net.box.tolist(),
        "generator": generator,
        "seed": seed,
        "counts": {"nodes": net.n_nodes, "edges": net.n_edges},
    }
    with open(directory / "meta.json", "w", newline="\n") as f:
        json.dump(meta, f, indent=2, sort_keys=True)
        f.write("\n")
    logger.info("wrote network (%d nodes, %d edges) to %s", net.n_nodes, net.n_edges, directory)
    return directory


def read_meta(directory):
    path = Path(directory) / "meta.json"
    try:
        with open(path) as f:
            meta = json.load(f)
    except json.JSONDecodeError as e:
        raise NetworkFormatError(f"{path} line {e.lineno}: {e.msg}") from e
    for key in ("dim", "box", "counts"):
        if key not in meta:
            raise NetworkFormatError(f"{path}: missing key '{key}'")
    return meta


def read_network(directory):
    """Load a network written by write_network and check its invariants"""
    directory = Path(directory)
    meta = read_meta(directory)
    dim = int(meta["dim"])
    if dim not in (2, 3) or len(meta["box"]) != dim:
        raise NetworkFormatError(f"{directory / 'meta.json'}: inconsistent dim/box")

    node_path = directory / "nodes.csv"
    node_columns = ["id", *AXES[:dim], "capacity", "radius", "labels"]
    nodes = _read_csv(node_path, node_columns)
    ids = _numeric(nodes, "id", node_path, integer=True)
    if np.any(ids != np.arange(len(ids))):
        row = int(np.flatnonzero(ids != np.arange(len(ids)))[0])
        raise NetworkFormatError(f"{node_path} line {row + 2}: node ids must be 0..N-1 in order")
    coords = np.column_stack([_numeric(nodes, axis, node_path) for axis in AXES[:dim]])
    labels = {}
    for i, field in enumerate(nodes["labels"]):
        for name in filter(None, field.split(";")):
            labels.setdefault(name, []).append(i)

    edge_path = directory / "edges.csv"
    edges = _read_csv(edge_path, EDGE_COLUMNS)
    net = Network.from_arrays(
        meta["box"], coords.reshape(-1, dim),
        head=_numeric(edges, "head", edge_path, integer=True),
        tail=_numeric(edges, "tail", edge_path, integer=True),
        capacity=_numeric(nodes, "capacity", node_path),
        weight=_numeric(edges, "weight", edge_path),
        node_radius=_numeric(nodes, "radius", node_path, optional=True),
        edge_length=_numeric(edges, "length", edge_path, optional=True),
        edge_radius=_numeric(edges, "radius", edge_path, optional=True),
        labels=labels,
    )
    counts = meta["counts"]
    if counts.get("nodes") != net.n_nodes or counts.get("edges") != net.n_edges:
        raise NetworkFormatError(f"{directory}: meta.json counts {counts} do not match the CSV files")
    return net.validate()


def network_hash(directory):
    """SHA-256 over nodes.csv followed by edges.csv"""
    digest = hashlib.sha256()
    for name in ("nodes.csv", "edges.csv"):
        digest.update((Path(directory) / name).read_bytes())
    return digest.hexdigest()


def write_solution(u, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    _write_csv(pd.DataFrame({"id": np.arange(len(u)), "value": np.asarray(u, dtype=float)}), path)
    return path


def read_solution(path):
    df = _read_csv(path, ["id", "value"])
    ids = _numeric(df, "id", path, integer=True)
    if np.any(ids != np.arange(len(ids))):
        row = int(np.flatnonzero(ids != np.arange(len(ids)))[0])
        raise NetworkFormatError(f"{path} line {row + 2}: ids must be 0..N-1 in order")
    return _numeric(df, "value", path)
