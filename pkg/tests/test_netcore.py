import logging

import numpy as np
import pytest

from conftest import make_chain
from netcore import (BoundarySpec, Network, assemble_laplacian, assemble_mass, connected_components,
                     degree_matrix, incidence_factorization, induced_subgraph, reduce_dirichlet)


def path3():
    return Network.from_arrays([2.0, 1.0], [[0, 0], [1, 0], [2, 0]], head=[0, 1], tail=[1, 2], weight=[2.0, 3.0])


def test_two_node_laplacian():
    net = Network.from_arrays([1.0, 1.0], [[0, 0], [1, 0]], head=[0], tail=[1])
    assert np.array_equal(assemble_laplacian(net).toarray(), [[1, -1], [-1, 1]])


def test_path_laplacian_degrees():
    L = assemble_laplacian(path3()).toarray()
    assert np.array_equal(np.diag(L), [2, 5, 3])
    assert L[0, 1] == L[1, 0] == -2
    assert L[1, 2] == L[2, 1] == -3
    assert L[0, 2] == 0


def test_laplacian_energy_matches_edge_sum(random_graph):
    L = assemble_laplacian(random_graph)
    u = np.random.default_rng(0).normal(size=random_graph.n_nodes)
    edge_sum = np.sum(random_graph.weight * (u[random_graph.head] - u[random_graph.tail]) ** 2)
    assert u @ (L @ u) == pytest.approx(edge_sum, rel=1e-12)


def test_laplacian_diagonal_is_negated_row_sum(random_graph):
    L = assemble_laplacian(random_graph).tocsr()
    for i in range(L.shape[0]):
        row = L.getrow(i)
        off = sum(v for j, v in zip(row.indices, row.data) if j != i)
        assert L[i, i] == pytest.approx(-off, rel=1e-15, abs=0)
    assert np.abs(L @ np.ones(L.shape[0])).max() <= 1e-12 * np.abs(L.diagonal()).max()


def test_laplacian_is_symmetric_psd(random_graph):
    L = assemble_laplacian(random_graph)
    assert (L != L.T).nnz == 0
    rng = np.random.default_rng(1)
    for _ in range(100):
        u = rng.normal(size=L.shape[0])
        assert u @ (L @ u) >= -1e-12 * (u @ u)


def test_nonpositive_weight_rejected():
    net = Network.from_arrays([2.0, 1.0], [[0, 0], [1, 0], [2, 0]], head=[0, 1], tail=[1, 2], weight=[1.0, 0.0])
    with pytest.raises(ValueError, match="edge 1"):
        assemble_laplacian(net)


def test_mass_matrix():
    net = Network.from_arrays([2.0, 1.0], [[0, 0], [1, 0], [2, 0]], capacity=[1.0, 2.0, 3.0])
    assert np.array_equal(assemble_mass(net).toarray(), np.diag([1.0, 2.0, 3.0]))
    bad = Network.from_arrays([2.0, 1.0], [[0, 0], [1, 0]], capacity=[1.0, -1.0])
    with pytest.raises(ValueError, match="node 1"):
        assemble_mass(bad)


def test_degree_matrix_path_and_star():
    assert np.array_equal(degree_matrix(path3()).diagonal(), [2, 5, 3])
    star = Network.from_arrays([1.0, 1.0], np.zeros((5, 2)), head=[0, 0, 0, 0], tail=[1, 2, 3, 4])
    assert np.array_equal(degree_matrix(star).diagonal(), [4, 1, 1, 1, 1])
    assert np.array_equal(degree_matrix(assemble_laplacian(star)).diagonal(), [4, 1, 1, 1, 1])


def test_degree_matrix_isolated_node_is_zero():
    net = Network.from_arrays([1.0, 1.0], np.zeros((3, 2)), head=[0], tail=[1])
    assert degree_matrix(net).diagonal()[2] == 0


def test_incidence_factorization_single_edge():
    net = Network.from_arrays([1.0, 1.0], [[0, 0], [1, 0]], head=[0], tail=[1], weight=[2.0])
    B, M = incidence_factorization(net)
    assert np.array_equal(B.toarray(), [[1], [-1]])
    assert np.array_equal(M.toarray(), [[2]])
    assert np.array_equal((B @ M @ B.T).toarray(), [[2, -2], [-2, 2]])


def test_incidence_factorization_reproduces_laplacian(random_graph):
    B, M = incidence_factorization(random_graph)
    diff = (B @ M @ B.T - assemble_laplacian(random_graph)).toarray()
    assert np.abs(diff).max() <= 1e-14


def test_single_node_without_edges():
    net = Network.from_arrays([1.0, 1.0], [[0.5, 0.5]])
    assert np.array_equal(assemble_laplacian(net).toarray(), [[0]])


def test_reduce_dirichlet_two_node_chain():
    net = make_chain(2, labels={"right": [1]})
    net_L, net_C = assemble_laplacian(net), assemble_mass(net)
    reduced = reduce_dirichlet(net_L, net_C, None, BoundarySpec({"right": 1.0}), net)
    assert reduced.n_free == 1
    assert np.array_equal(reduced.L_free.toarray(), [[1]])
    assert np.array_equal(reduced.rhs_bc, [1.0])
    assert np.array_equal(reduced.lift, [0.0, 1.0])


def test_reduce_dirichlet_without_boundary_is_identity(random_graph):
    L, C = assemble_laplacian(random_graph), assemble_mass(random_graph)
    reduced = reduce_dirichlet(L, C, None, BoundarySpec(), random_graph)
    assert np.array_equal(reduced.L_free.toarray(), L.toarray())
    assert np.array_equal(reduced.C_free.toarray(), C.toarray())
    assert not reduced.rhs_bc.any()


def test_reduce_dirichlet_linear_profile():
    net = make_chain(5, weight=2.0, labels={"left": [0], "right": [4]})
    reduced = reduce_dirichlet(assemble_laplacian(net), assemble_mass(net), None,
                               BoundarySpec({"left": 1.0, "right": 0.0}), net)
    u = np.linalg.solve(reduced.L_free.toarray(), reduced.rhs_bc)
    assert np.allclose(u, [0.75, 0.5, 0.25], rtol=0, atol=1e-14)
    assert np.allclose(reduced.embed(u), [1.0, 0.75, 0.5, 0.25, 0.0], rtol=0, atol=1e-14)


def test_reduce_dirichlet_manufactured_residual(random_graph):
    net = random_graph.with_labels({"fixed": [0, 3, 5]})
    L = assemble_laplacian(net)
    reduced = reduce_dirichlet(L, assemble_mass(net), None, BoundarySpec({"fixed": 2.5}), net)
    u_free = np.random.default_rng(4).normal(size=reduced.n_free)
    full = (L @ reduced.embed(u_free))[reduced.free_index]
    assert np.allclose(full, reduced.L_free @ u_free - reduced.rhs_bc, rtol=0, atol=1e-12)


def test_reduce_dirichlet_all_nodes_fixed():
    net = make_chain(3, labels={"all": [0, 1, 2]})
    with pytest.raises(ValueError, match="every node"):
        reduce_dirichlet(assemble_laplacian(net), assemble_mass(net), None, BoundarySpec({"all": 1.0}), net)


def test_missing_boundary_label_warns(caplog):
    net = make_chain(3, labels={"left": [0]})
    with caplog.at_level(logging.WARNING):
        nodes, _ = BoundarySpec({"left": 1.0, "top": 0.0}).dirichlet_values(net)
    assert np.array_equal(nodes, [0])
    assert "top" in caplog.text


def test_earlier_label_wins_on_shared_nodes():
    net = make_chain(3, labels={"a": [0, 1], "b": [1, 2]})
    nodes, values = BoundarySpec({"a": 1.0, "b": 2.0}).dirichlet_values(net)
    assert np.array_equal(nodes, [0, 1, 2])
    assert np.array_equal(values, [1.0, 1.0, 2.0])


def test_two_triangles_are_two_components():
    net = Network.from_arrays([1.0, 1.0], np.zeros((6, 2)), head=[0, 1, 2, 3, 4, 5], tail=[1, 2, 0, 4, 5, 3])
    components = connected_components(net)
    assert components.count == 2
    assert np.array_equal(components.sizes, [3, 3])
    assert components.ids[0] == 0
    assert components.largest == 0


def test_components_invariant_under_edge_order(random_graph):
    order = np.random.default_rng(2).permutation(random_graph.n_edges)
    shuffled = Network.from_arrays(random_graph.box, random_graph.coords,
                                   head=random_graph.head[order], tail=random_graph.tail[order])
    assert np.array_equal(connected_components(random_graph).ids, connected_components(shuffled).ids)


def test_components_of_node_subset():
    net = make_chain(5)
    components = connected_components(net, [0, 1, 3, 4])
    assert components.count == 2
    assert np.array_equal(components.ids, [0, 0, 1, 1])


def test_induced_subgraph_keeps_inner_edges_only():
    nodes, head, tail, edges = induced_subgraph(make_chain(5), [3, 1, 2])
    assert np.array_equal(nodes, [1, 2, 3])
    assert np.array_equal(edges, [1, 2])
    assert np.array_equal(head, [0, 1])
    assert np.array_equal(tail, [1, 2])


@pytest.mark.parametrize("head, tail, message", [
    ([0, 1], [1, 0], "duplicates"),
    ([0, 1], [1, 1], "self-loop"),
    ([0, 1], [1, 5], "missing node"),
])
def test_validate_rejects_bad_edges(head, tail, message):
    net = Network.from_arrays([2.0, 1.0], [[0, 0], [1, 0], [2, 0]], head=head, tail=tail)
    with pytest.raises(ValueError, match=message):
        net.validate()


def test_validate_rejects_nodes_outside_box():
    net = Network.from_arrays([1.0, 1.0], [[0.5, 0.5], [1.5, 0.5]])
    with pytest.raises(ValueError, match="node 1"):
        net.validate()


def test_validate_connectivity():
    net = Network.from_arrays([1.0, 1.0], np.zeros((3, 2)), head=[0], tail=[1])
    net.validate()
    with pytest.raises(ValueError, match="2 components"):
        net.validate(require_connected=True)


def test_weight_bounds():
    with pytest.raises(ValueError, match="outside"):
        path3().validate(weight_bounds=(0.5, 2.5))


def test_records_and_summary():
    net = make_chain(3, labels={"left": [0]})
    assert net.node(0).labels == frozenset({"left"})
    assert net.node(1).radius is None
    assert net.edge(1) == (1, 2, 1.0, None, None)
    summary = net.summary()
    assert summary["nodes"] == 3
    assert summary["edges"] == 2
    assert summary["components"] == 1
    assert summary["labels"] == {"left": 1}


def test_subnetwork_reindexes():
    sub = make_chain(5, labels={"right": [4]}).subnetwork([2, 3, 4])
    assert sub.n_nodes == 3
    assert np.array_equal(sub.head, [0, 1])
    assert np.array_equal(sub.labels["right"], [2])
