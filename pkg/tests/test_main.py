import json

import pytest

from error_metrics import read_report
from main import build_parser, main
from network_io import read_network, read_solution


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture
def lattice_dir(tmp_path):
    directory = tmp_path / "lattice"
    assert run("gen", "--family", "regular", "--dims", "6,6", "--seed", 1, "--out", directory) == 0
    return directory


@pytest.fixture
def unit_dir(tmp_path):
    directory = tmp_path / "unit"
    assert run("gen", "--family", "regular", "--dims", "6,6", "--seed", 1, "--properties", "unit",
               "--out", directory) == 0
    return directory


def test_gen_writes_network(capsys, lattice_dir):
    net = read_network(lattice_dir)
    assert net.n_nodes == 36
    assert net.n_edges == 60
    assert len(net.labels["top"]) == 6
    meta = json.loads((lattice_dir / "meta.json").read_text())
    assert meta["seed"] == 1
    assert meta["generator"] == "structured_regular"
    assert "Nodes: 36" in capsys.readouterr().out


def test_gen_unstructured(tmp_path):
    out = tmp_path / "points"
    assert run("gen", "--family", "unstructured", "--dims", 150, "--dim", 2, "--seed", 3, "--out", out) == 0
    assert read_network(out).dim == 2


def test_gen_requires_seed(tmp_path):
    with pytest.raises(SystemExit) as exc:
        run("gen", "--family", "regular", "--dims", "6,6", "--out", tmp_path)
    assert exc.value.code == 2


def test_unknown_command():
    with pytest.raises(SystemExit) as exc:
        build_parser().parse_args(["fly"])
    assert exc.value.code == 2


def test_solve_fine(lattice_dir, tmp_path):
    out = tmp_path / "fine"
    assert run("solve-fine", "--network", lattice_dir, "--out", out, "--steps", 5, "--save-every", 2) == 0
    u = read_solution(out / "u.csv")
    assert len(u) == 36
    assert u.max() == pytest.approx(1.0)
    assert u.min() >= -1e-8
    for step in (0, 2, 4, 5):
        assert (out / f"u_step{step:05d}.csv").exists()
    assert read_report(out / "report.json")[0].label == "fine"


def test_solve_fine_is_byte_reproducible(lattice_dir, tmp_path):
    out = tmp_path / "fine"
    argv = ("solve-fine", "--network", lattice_dir, "--out", out, "--steps", 3, "--no-timings")
    assert run(*argv) == 0
    first = {name: (out / name).read_bytes() for name in ("u.csv", "report.json")}
    assert run(*argv) == 0
    assert first == {name: (out / name).read_bytes() for name in ("u.csv", "report.json")}


def test_missing_network_fails(tmp_path, capsys):
    assert run("solve-fine", "--network", tmp_path / "nowhere", "--out", tmp_path / "fine") == 1
    assert "❌ Error" in capsys.readouterr().out


def test_basis_then_ms(lattice_dir, tmp_path):
    basis = tmp_path / "basis"
    assert run("basis", "--network", lattice_dir, "--out", basis, "--cells", 2, "-M", 2) == 0
    assert (basis / "basis.json").exists()
    assert (basis / "R.coo").exists()

    fine = tmp_path / "fine"
    assert run("solve-fine", "--network", lattice_dir, "--out", fine, "--steps", 5) == 0
    out = tmp_path / "ms"
    assert run("ms", "--network", lattice_dir, "--out", out, "--basis", basis, "--cells", 2, "--steps", 5,
               "--reference", fine / "u.csv") == 0
    assert len(read_solution(out / "u_ms.csv")) == 36
    summary = read_report(out / "report.json")[0]
    assert summary.M == 2
    assert summary.dof_H > 0
    assert summary.e1_h >= 0
    assert summary.e1_H is not None


def test_ms_without_basis_fails(lattice_dir, tmp_path, capsys):
    assert run("ms", "--network", lattice_dir, "--out", tmp_path / "ms", "--cells", 2) == 1
    assert "--basis" in capsys.readouterr().out


def test_ms_refuses_basis_of_other_network(lattice_dir, unit_dir, tmp_path):
    basis = tmp_path / "basis"
    assert run("basis", "--network", unit_dir, "--out", basis, "--cells", 2, "-M", 1) == 0
    assert run("ms", "--network", lattice_dir, "--out", tmp_path / "ms", "--basis", basis, "--cells", 2) == 1


def test_ms_sweep_writes_table(lattice_dir, tmp_path):
    fine = tmp_path / "fine"
    assert run("solve-fine", "--network", lattice_dir, "--out", fine, "--steps", 4, "--save-every", 2) == 0
    out = tmp_path / "sweep"
    assert run("ms", "--network", lattice_dir, "--out", out, "--cells", 2, "--steps", 4, "--save-every", 2,
               "--sweep-M", "1,2", "--reference", fine / "u.csv", "--per-step-errors") == 0
    for name in ("u_ms_M1.csv", "u_ms_M2.csv", "table.txt", "table.csv", "errors_per_step_M2.csv"):
        assert (out / name).exists()
    summaries = read_report(out / "report.json")
    assert [s.M for s in summaries] == [1, 2]
    assert summaries[1].dof_H > summaries[0].dof_H


def test_full_eigenbasis_reproduces_reference(unit_dir, tmp_path):
    fine = tmp_path / "fine"
    assert run("solve-fine", "--network", unit_dir, "--out", fine, "--steps", 5, "--solver", "dense_cholesky") == 0
    out = tmp_path / "ms"
    assert run("ms", "--network", unit_dir, "--out", out, "--cells", 2, "--steps", 5, "--build-basis",
               "--full-eigenbasis", "--reference", fine / "u.csv") == 0
    assert read_report(out / "report.json")[0].e1_h <= 1e-6


def test_upscale(unit_dir, tmp_path):
    layers = ("--dirichlet", "bottom=0", "--dirichlet", "top=1")
    fine = tmp_path / "fine"
    assert run("solve-fine", "--network", unit_dir, "--out", fine, "--steps", 5, *layers) == 0
    out = tmp_path / "up"
    assert run("upscale", "--network", unit_dir, "--out", out, "--cells", 3, "--steps", 5, "--delta-factor", 0.45,
               "--reference", fine / "u.csv", *layers) == 0
    assert len(read_solution(out / "u_bar.csv")) == 9
    assert len(read_solution(out / "u_up.csv")) == 36
    coarse = read_network(out / "coarse_network")
    assert coarse.n_nodes == 9
    assert coarse.n_edges == 12
    summary = read_report(out / "report.json")[0]
    assert summary.dof_H == 9
    assert summary.e1_H is not None


def test_compare(lattice_dir, tmp_path):
    fine = tmp_path / "fine"
    assert run("solve-fine", "--network", lattice_dir, "--out", fine, "--steps", 4) == 0
    sweep = tmp_path / "sweep"
    assert run("ms", "--network", lattice_dir, "--out", sweep, "--cells", 2, "--steps", 4, "--sweep-M", "1,3") == 0
    out = tmp_path / "cmp"
    assert run("compare", fine / "u.csv", sweep / "u_ms_M1.csv", sweep / "u_ms_M3.csv",
               "--network", lattice_dir, "--cells", 2, "--out", out) == 0
    summaries = read_report(out / "report.json")
    assert [s.M for s in summaries] == [1, 3]
    assert all(s.e2_h is not None for s in summaries)
    assert "u_ms_M3" in (out / "table.txt").read_text()


def test_compare_without_network(lattice_dir, tmp_path):
    fine = tmp_path / "fine"
    assert run("solve-fine", "--network", lattice_dir, "--out", fine, "--steps", 2) == 0
    out = tmp_path / "cmp"
    assert run("compare", fine / "u.csv", fine / "u.csv", "--out", out) == 0
    summary = read_report(out / "report.json")[0]
    assert summary.e1_h == 0.0
    assert summary.e2_h is None


def test_info(lattice_dir, capsys):
    assert run("info", "--network", lattice_dir, "--cells", 2) == 0
    out = capsys.readouterr().out
    assert "Content hash" in out
    assert "4 cells" in out


def test_ms_sweep_refuses_stored_basis(lattice_dir, tmp_path, capsys):
    basis = tmp_path / "basis"
    assert run("basis", "--network", lattice_dir, "--out", basis, "--cells", 2, "-M", 1) == 0
    assert run("ms", "--network", lattice_dir, "--out", tmp_path / "ms", "--cells", 2, "--basis", basis,
               "--sweep-M", "1,2") == 1
    assert "--sweep-M" in capsys.readouterr().out


def test_ms_refuses_basis_of_other_grid(lattice_dir, tmp_path, capsys):
    basis = tmp_path / "basis"
    assert run("basis", "--network", lattice_dir, "--out", basis, "--cells", 2, "-M", 1) == 0
    assert run("ms", "--network", lattice_dir, "--out", tmp_path / "ms", "--cells", 3, "--basis", basis) == 1
    assert "2x2 coarse grid" in capsys.readouterr().out


def test_outputs_do_not_depend_on_threads(tmp_path):
    def same_bytes(argv, out, names):
        assert run(*argv, "--threads", 1, "--no-timings") == 0
        first = {name: (out / name).read_bytes() for name in names}
        assert run(*argv, "--threads", 4, "--no-timings") == 0
        assert first == {name: (out / name).read_bytes() for name in names}

    net = tmp_path / "net"
    same_bytes(("gen", "--family", "irregular", "--dims", "12,12", "--seed", 5, "--removal-prob", 0.1,
                "--out", net), net, ("nodes.csv", "edges.csv", "meta.json"))
    layers = ("--dirichlet", "bottom=0", "--dirichlet", "top=1", "--steps", 4, "--cells", 3)
    fine = tmp_path / "fine"
    assert run("solve-fine", "--network", net, "--out", fine, *layers) == 0
    basis = tmp_path / "basis"
    same_bytes(("basis", "--network", net, "--out", basis, "-M", 3, *layers), basis, ("R.coo", "basis.json"))
    ms = tmp_path / "ms"
    same_bytes(("ms", "--network", net, "--out", ms, "--build-basis", "-M", 3, "--reference", fine / "u.csv",
                *layers), ms, ("u_ms.csv", "report.json"))
    up = tmp_path / "up"
    same_bytes(("upscale", "--network", net, "--out", up, "--reference", fine / "u.csv", *layers), up,
               ("u_bar.csv", "u_up.csv", "report.json"))


def test_gen_from_preset(tmp_path):
    out = tmp_path / "desk"
    assert run("gen", "--preset", "desk-regular", "--dims", "10,10", "--seed", 2, "--out", out) == 0
    net = read_network(out)
    assert net.n_nodes == 100
    assert json.loads((out / "meta.json").read_text())["generator"] == "structured_regular"


def test_gen_without_family_fails(tmp_path, capsys):
    assert run("gen", "--dims", "6,6", "--seed", 2, "--out", tmp_path) == 1
    assert "network.family" in capsys.readouterr().out


def test_unknown_preset_is_rejected(tmp_path):
    with pytest.raises(SystemExit) as exc:
        run("gen", "--preset", "test-9z", "--seed", 2, "--out", tmp_path)
    assert exc.value.code == 2
