import numpy as np
import pytest

from ontotemporal import autodiff as ad
from ontotemporal.autodiff import Tensor
from ontotemporal.compgcn import CompGcnLayer, CompGcnStack, EdgeIndex, compose, layer_forward, stack_forward
from ontotemporal.data import OntologyGraph
from ontotemporal.gradcheck import check_gradients

from conftest import T


def layer(W1, W2, rel, op="sub"):
    return CompGcnLayer(Tensor(np.asarray(W1, float), requires_grad=True),
                        Tensor(np.asarray(W2, float), requires_grad=True),
                        Tensor(np.asarray(rel, float), requires_grad=True), op)


@pytest.mark.parametrize("op,want", [("sub", [2, -1]), ("mult", [3, 2])])
def test_compose_basic(op, want):
    assert compose(op, T(3, 1), T(1, 2)).data.tolist() == want


def test_compose_corr():
    assert compose("corr", T(1, 0), T(0, 1)).data.tolist() == [0, 1]


def test_compose_unknown():
    with pytest.raises(ValueError):
        compose("add", T(1, 0), T(0, 1))


def test_no_edges_self_identity(rng):
    g = OntologyGraph(2, 1, 1, np.empty((0, 3), dtype=np.int64))
    H = Tensor(rng.uniform(0, 1, size=(3, 2)))
    out = layer_forward(layer(np.zeros((2, 2)), np.eye(2), np.zeros((1, 2))), g, H)
    assert np.array_equal(out.data, H.data)


def test_single_edge_hand_value():
    g = OntologyGraph(1, 1, 1, np.array([[0, 0, 1]]))
    H = T([[1, 2], [0, 0]])
    out = layer_forward(layer(np.eye(2), np.zeros((2, 2)), np.zeros((1, 2))), g, H)
    assert out.data[1].tolist() == [1, 2]


def test_parallel_edges_normalised():
    H = T([[1, 2], [0, 0]])
    lay = layer(np.eye(2), np.zeros((2, 2)), np.zeros((1, 2)))
    one = layer_forward(lay, OntologyGraph(1, 1, 1, np.array([[0, 0, 1]])), H)
    two = layer_forward(lay, OntologyGraph(1, 1, 1, np.array([[0, 0, 1], [0, 0, 1]])), H)
    np.testing.assert_allclose(one.data, two.data)


def small_graph(rng, n_ent=4, n_con=3, n_facts=8, n_rel=2):
    src = rng.integers(0, n_ent + n_con, size=n_facts)
    dst = rng.integers(n_ent, n_ent + n_con, size=n_facts)
    return OntologyGraph(n_ent, n_con, n_rel, np.stack([src, rng.integers(0, n_rel, n_facts), dst], 1))


def test_stack_depths(rng):
    g = small_graph(rng)
    H0 = Tensor(rng.normal(size=(7, 4)))
    assert np.array_equal(stack_forward(CompGcnStack([]), g, H0).data, H0.data)
    st = CompGcnStack.init(rng, 4, 2, 2, "corr")
    np.testing.assert_array_equal(stack_forward(CompGcnStack(st.layers[:1]), g, H0).data,
                                  layer_forward(st.layers[0], g, H0).data)
    manual = layer_forward(st.layers[1], g, layer_forward(st.layers[0], g, H0))
    np.testing.assert_array_equal(stack_forward(st, g, H0).data, manual.data)


def test_layers_have_independent_relation_tables(rng):
    st = CompGcnStack.init(rng, 4, 3, 2)
    assert st.layers[0].rel_emb is not st.layers[1].rel_emb
    assert not np.array_equal(st.layers[0].rel_emb.data, st.layers[1].rel_emb.data)


@pytest.mark.parametrize("op", ["sub", "mult", "corr"])
def test_permutation_equivariance(op, rng):
    g = small_graph(rng)
    n = g.num_nodes
    st = CompGcnStack.init(rng, 4, 2, 2, op)
    H0 = rng.normal(size=(n, 4))
    perm = rng.permutation(n)  # new id of old node i is perm[i]
    f = g.facts.copy()
    f[:, 0], f[:, 2] = perm[f[:, 0]], perm[f[:, 2]]
    H0p = np.empty_like(H0)
    H0p[perm] = H0
    out = st.propagate(Tensor(H0), EdgeIndex.from_graph(g)).data
    outp = st.propagate(Tensor(H0p), EdgeIndex(f[:, 0], f[:, 1], f[:, 2], n)).data
    np.testing.assert_allclose(outp[perm], out, atol=1e-12)


def test_sub_with_zero_relations_ignores_relation_ids(rng):
    g = small_graph(rng)
    lay = layer(rng.normal(size=(4, 4)), rng.normal(size=(4, 4)), np.zeros((2, 4)))
    H = Tensor(rng.normal(size=(7, 4)))
    g2 = OntologyGraph(4, 3, 2, g.facts[:, [0, 1, 2]] * [1, 0, 1] + [0, 1, 0])
    np.testing.assert_array_equal(layer_forward(lay, g, H).data, layer_forward(lay, g2, H).data)


@pytest.mark.parametrize("op", ["sub", "mult", "corr"])
def test_stack_gradients_fd(op, rng):
    for _ in range(3):
        g = small_graph(rng, n_facts=10)
        st = CompGcnStack.init(rng, 5, 2, 2, op)
        H0 = Tensor(rng.normal(size=(g.num_nodes, 5)), requires_grad=True)
        w = Tensor(rng.normal(size=(g.num_nodes, 5)))
        params = [H0] + [p for lay in st.layers for p in (lay.W1, lay.W2, lay.rel_emb)]
        assert check_gradients(lambda: ad.total(ad.mul(stack_forward(st, g, H0), w)), params) < 1e-4


def test_layer_shape_check(rng):
    g = small_graph(rng)
    lay = CompGcnLayer.init(rng, 4, 2)
    with pytest.raises(ad.ShapeError):
        layer_forward(lay, g, Tensor(np.zeros((3, 4))))
