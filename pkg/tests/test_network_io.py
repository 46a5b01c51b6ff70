import json

import numpy as np
import pytest

from conftest import make_chain
from network_io import (NetworkFormatError, network_hash, read_meta, read_network, read_solution,
                        write_network, write_solution)


def test_network_round_trip(tmp_path, poiseuille_lattice):
    write_network(poiseuille_lattice, tmp_path, generator="structured_regular", seed=0)
    loaded = read_network(tmp_path)
    assert np.array_equal(loaded.coords, poiseuille_lattice.coords)
    assert np.array_equal(loaded.capacity, poiseuille_lattice.capacity)
    assert np.array_equal(loaded.weight, poiseuille_lattice.weight)
    assert np.array_equal(loaded.head, poiseuille_lattice.head)
    assert np.array_equal(loaded.edge_radius, poiseuille_lattice.edge_radius)
    assert sorted(loaded.labels) == sorted(poiseuille_lattice.labels)
    for name, idx in poiseuille_lattice.labels.items():
        assert np.array_equal(loaded.labels[name], idx)


def test_missing_optional_columns_stay_empty(tmp_path):
    write_network(make_chain(3, labels={"left": [0]}), tmp_path)
    lines = (tmp_path / "edges.csv").read_text().splitlines()
    assert lines[0] == "head,tail,weight,length,radius"
    assert lines[1] == "0,1,1,,"
    nodes = (tmp_path / "nodes.csv").read_text().splitlines()
    assert nodes[0] == "id,x,y,capacity,radius,labels"
    assert nodes[1].endswith(",left")
    loaded = read_network(tmp_path)
    assert np.isnan(loaded.edge_length).all()
    assert loaded.edge(0).length is None


def test_files_use_lf_line_endings(tmp_path):
    write_network(make_chain(4), tmp_path)
    for name in ("nodes.csv", "edges.csv", "meta.json"):
        assert b"\r" not in (tmp_path / name).read_bytes()


def test_meta_contents(tmp_path):
    write_network(make_chain(4), tmp_path, generator="chain", seed=11)
    meta = read_meta(tmp_path)
    assert meta["dim"] == 2
    assert meta["seed"] == 11
    assert meta["counts"] == {"nodes": 4, "edges": 3}


def test_writes_are_byte_identical(tmp_path, poiseuille_lattice):
    write_network(poiseuille_lattice, tmp_path / "a", seed=0)
    write_network(poiseuille_lattice, tmp_path / "b", seed=0)
    for name in ("nodes.csv", "edges.csv", "meta.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert network_hash(tmp_path / "a") == network_hash(tmp_path / "b")


def test_hash_changes_with_content(tmp_path):
    write_network(make_chain(4), tmp_path / "a")
    write_network(make_chain(4, weight=2.0), tmp_path / "b")
    assert network_hash(tmp_path / "a") != network_hash(tmp_path / "b")


def test_bad_value_reports_line(tmp_path):
    write_network(make_chain(4), tmp_path)
    path = tmp_path / "edges.csv"
    lines = path.read_text().splitlines()
    lines[2] = "1,2,abc,,"
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(NetworkFormatError, match="line 3"):
        read_network(tmp_path)


def test_bad_header_rejected(tmp_path):
    write_network(make_chain(4), tmp_path)
    path = tmp_path / "nodes.csv"
    text = path.read_text().replace("capacity", "volume", 1)
    path.write_text(text)
    with pytest.raises(NetworkFormatError, match="line 1"):
        read_network(tmp_path)


def test_count_mismatch_rejected(tmp_path):
    write_network(make_chain(4), tmp_path)
    meta = json.loads((tmp_path / "meta.json").read_text())
    meta["counts"]["edges"] = 5
    (tmp_path / "meta.json").write_text(json.dumps(meta))
    with pytest.raises(NetworkFormatError, match="counts"):
        read_network(tmp_path)


def test_invalid_network_rejected_on_read(tmp_path):
    write_network(make_chain(4), tmp_path)
    path = tmp_path / "edges.csv"
    path.write_text(path.read_text() + "1,0,1,,\n")
    meta = json.loads((tmp_path / "meta.json").read_text())
    meta["counts"]["edges"] = 4
    (tmp_path / "meta.json").write_text(json.dumps(meta))
    with pytest.raises(ValueError, match="duplicates"):
        read_network(tmp_path)


def test_solution_round_trip(tmp_path):
    u = np.array([0.1, 1.0 / 3.0, -2.5e-17, 1.0])
    path = write_solution(u, tmp_path / "u.csv")
    assert np.array_equal(read_solution(path), u)
    assert path.read_text().splitlines()[0] == "id,value"


def test_malformed_solution_reports_line(tmp_path):
    path = tmp_path / "u.csv"
    path.write_text("id,value\n0,1.0\n1,oops\n")
    with pytest.raises(NetworkFormatError, match="line 3"):
        read_solution(path)
