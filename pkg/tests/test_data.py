from pathlib import Path

import numpy as np
import pytest

from ontotemporal.data import (
    BUCKET_LABELS,
    DataError,
    OntologyGraph,
    Quadruple,
    augment_inverse,
    augment_ontology,
    bucket_of,
    degree_bucket,
    load_dataset,
    nhop_subgraph,
    parse_quadruple,
    save_dataset,
    snapshots,
)


def write_dataset(root: Path, train, valid, test, stat="10\t3", onto=("0\t0\t10",)):
    root.mkdir(parents=True, exist_ok=True)
    for name, rows in (("train", train), ("valid", valid), ("test", test)):
        (root / f"{name}.txt").write_text("".join("\t".join(map(str, r)) + "\n" for r in rows))
    (root / "stat.txt").write_text(stat + "\n")
    (root / "ontology.txt").write_text("".join(line + "\n" for line in onto))
    return root


def test_parse_quadruple():
    assert parse_quadruple("4\t2\t7\t0") == Quadruple(4, 2, 7, 0)


def test_parse_quadruple_rejects_junk():
    with pytest.raises(DataError):
        parse_quadruple("4\t2\tx\t0")
    with pytest.raises(DataError):
        parse_quadruple("4\t2")


def test_relation_out_of_range(tmp_path):
    write_dataset(tmp_path, [(1, 5, 2, 0)], [(1, 0, 2, 1)], [(1, 0, 2, 2)])
    with pytest.raises(DataError, match="relation"):
        load_dataset(tmp_path)


def test_entity_out_of_range(tmp_path):
    write_dataset(tmp_path, [(1, 0, 10, 0)], [(1, 0, 2, 1)], [(1, 0, 2, 2)])
    with pytest.raises(DataError, match="entity"):
        load_dataset(tmp_path)


def test_timestamps_ranked(tmp_path):
    write_dataset(tmp_path, [(1, 0, 2, 0)], [(1, 0, 2, 24)], [(1, 0, 2, 48)])
    b = load_dataset(tmp_path)
    assert [b.train[0, 3], b.valid[0, 3], b.test[0, 3]] == [0, 1, 2]
    assert b.raw_timestamps.tolist() == [0, 24, 48]


def test_split_order_enforced(tmp_path):
    write_dataset(tmp_path, [(1, 0, 2, 5)], [(1, 0, 2, 1)], [(1, 0, 2, 9)])
    with pytest.raises(DataError):
        load_dataset(tmp_path)


def test_ontology_target_must_be_concept(tmp_path):
    write_dataset(tmp_path, [(1, 0, 2, 0)], [(1, 0, 2, 1)], [(1, 0, 2, 2)], onto=("0\t0\t3",))
    with pytest.raises(DataError):
        load_dataset(tmp_path)


def test_missing_file(tmp_path):
    with pytest.raises(DataError):
        load_dataset(tmp_path)


def test_inverse_fact_added(tmp_path):
    write_dataset(tmp_path, [(4, 2, 7, 0)], [(1, 0, 2, 1)], [(1, 0, 2, 2)])
    b = augment_inverse(load_dataset(tmp_path))
    assert b.train.tolist() == [[4, 2, 7, 0], [7, 5, 4, 0]]
    assert b.relation_count == 6 and b.base_relation_count == 3


def test_augment_doubles_facts(tiny_raw):
    b = augment_inverse(tiny_raw)
    for name in ("train", "valid", "test"):
        assert len(b.split(name)) == 2 * len(tiny_raw.split(name))
    with pytest.raises(DataError):
        augment_inverse(b)


def test_ontology_inverse():
    g = OntologyGraph(10, 10, 2, np.array([[0, 0, 19]]))
    aug = augment_ontology(g)
    assert aug.facts.tolist() == [[0, 0, 19], [19, 2, 0]]
    assert aug.original_facts.tolist() == [[0, 0, 19]]


def test_in_degree_counts_targets():
    g = OntologyGraph(2, 2, 1, np.array([[0, 0, 2], [1, 0, 2], [2, 0, 3]]))
    assert g.in_degree.tolist() == [0, 0, 2, 1]


def _bundle_from(quads, n_ent=10, n_rel=3):
    from ontotemporal.data import DatasetBundle, _degrees

    q = np.array(quads, dtype=np.int64)
    g = OntologyGraph(n_ent, 1, 1, np.array([[0, 0, n_ent]]))
    empty = np.empty((0, 4), dtype=np.int64)
    T = int(q[:, 3].max()) + 1 if len(q) else 0
    return DatasetBundle(q, empty, empty, n_ent, n_rel, T, g, _degrees(q, n_ent))


def test_snapshot_sizes_keep_gaps():
    b = augment_inverse(_bundle_from([(1, 0, 2, 0), (3, 0, 4, 0), (5, 1, 6, 2)]))
    # the inverse copies double every count
    assert [len(s) for s in snapshots(b, "train")] == [4, 0, 2]


def test_snapshot_sizes_counting_oracle(rng):
    t = rng.integers(0, 6, size=30)
    quads = [(int(rng.integers(10)), 0, int(rng.integers(10)), int(x)) for x in t]
    b = augment_inverse(_bundle_from(quads))
    snaps = snapshots(b, "train")
    want = np.bincount(t, minlength=6)[t.min() :] * 2
    assert [len(s) for s in snaps] == want.tolist()
    assert sum(len(s) for s in snaps) == 2 * len(quads)


def test_empty_split_no_snapshots(tiny_bundle):
    from dataclasses import replace

    b = replace(tiny_bundle, valid=np.empty((0, 4), dtype=np.int64))
    assert snapshots(b, "valid") == []


def test_snapshot_adjacency():
    b = augment_inverse(_bundle_from([(4, 2, 7, 0)]))
    out, inc = snapshots(b, "train")[0].adjacency
    assert (2, 7) in out[4]
    assert (2, 4) in inc[7]


def chain():
    # e0 - c1 - c2 (ids: entity 0, concepts 1 and 2)
    return augment_ontology(OntologyGraph(1, 2, 2, np.array([[0, 0, 1], [1, 1, 2]])))


def test_nhop_one_hop():
    sg = nhop_subgraph(chain(), 0, 1)
    assert sg.nodes.tolist() == [0, 1]
    assert sorted(map(tuple, sg.facts[:, [0, 2]].tolist())) == [(0, 1), (1, 0)]


def test_nhop_zero():
    sg = nhop_subgraph(chain(), 0, 0)
    assert sg.nodes.tolist() == [0] and len(sg.facts) == 0


def flood_fill(g, seed):
    comp, stack = {seed}, [seed]
    while stack:
        u = stack.pop()
        for a, _, b in g.facts.tolist():
            for x, y in ((a, b), (b, a)):
                if x == u and y not in comp:
                    comp.add(y)
                    stack.append(y)
    return sorted(comp)


def test_nhop_full_component_and_monotone(tiny_bundle):
    g = tiny_bundle.ontology
    for seed in (0, 7, 13):
        prev = set()
        for hops in range(6):
            nodes = set(nhop_subgraph(g, seed, hops).nodes.tolist())
            assert prev <= nodes
            prev = nodes
        assert nhop_subgraph(g, seed, None).nodes.tolist() == flood_fill(g, seed)
        assert nhop_subgraph(g, seed, 10).nodes.tolist() == flood_fill(g, seed)


def test_nhop_rejects_concept_seed():
    with pytest.raises(DataError):
        nhop_subgraph(chain(), 1, 1)


@pytest.mark.parametrize("deg,label", [(0, "[0,10]"), (9, "[0,10]"), (10, "[10,20]"), (55, "[50,100]"),
                                       (99, "[50,100]"), (100, "[100,max]"), (10**6, "[100,max]")])
def test_buckets(deg, label):
    assert bucket_of(deg) == label


def test_buckets_partition():
    labels = [bucket_of(d) for d in range(300)]
    assert set(labels) == set(BUCKET_LABELS)


def test_degree_bucket_uses_train_degree(tiny_raw):
    e = int(np.argmax(tiny_raw.train_degree))
    assert degree_bucket(tiny_raw, e) == bucket_of(int(tiny_raw.train_degree[e]))


def test_round_trip(tiny_raw, tmp_path):
    save_dataset(tiny_raw, tmp_path / "a")
    b = load_dataset(tmp_path / "a")
    save_dataset(b, tmp_path / "b")
    for f in ("train.txt", "valid.txt", "test.txt", "stat.txt", "ontology.txt", "ontology_names.txt"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    for name in ("train", "valid", "test"):
        assert np.array_equal(b.split(name), tiny_raw.split(name))
    assert np.array_equal(b.ontology.facts, tiny_raw.ontology.facts)
    assert b.names == tiny_raw.names
