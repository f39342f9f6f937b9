import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from popgraph.data import FeatureSchema, PatientRecord, SyntheticConfig, generate_synthetic
from popgraph.graph import (
    GraphFeatureLayout,
    PopulationGraph,
    build_population_graphs,
    combined_matrix,
    combined_similarity,
    component_matrices,
    compute_structural,
    feature_descriptors,
    graph_from_similarity,
    knn_edges,
    load_graphs,
    neighbor_mean_labels,
    path_nodes,
    save_graphs,
    sim_cognitive,
    sim_demographics,
    sim_imaging,
    sim_measurements,
    similarity_breakdown,
)

import oracles

STATIC = FeatureSchema(
    static_discrete=(("gender", 2), ("apoe4", 3), ("age", 100), ("MMSE", 31)),
    static_continuous=("img0",),
    max_timesteps=1,
    graph_features=("gender", "apoe4", "age", "MMSE", "img0"),
    roles={"gender": "gender", "apoe4": "apoe4", "age": "age"},
)
TS = FeatureSchema(ts_continuous=("m",), max_timesteps=4, graph_features=("m",))


def srec(rid, gender=0, apoe4=0, age=40, mmse=0, img=0.0):
    return PatientRecord(
        rid, np.array([gender, apoe4, age, mmse]), np.array([img]), np.zeros((0, 1), np.int64),
        np.zeros((0, 1)), np.zeros((0, 1), bool), np.zeros((0, 1), bool),
    )


def trec(rid, values, observed=None):
    v = np.asarray(values, dtype=float)[None, :]
    o = np.ones_like(v, bool) if observed is None else np.asarray(observed)[None, :]
    return PatientRecord(rid, np.zeros(0, np.int64), np.zeros(0), np.zeros((0, v.shape[1]), np.int64), v, np.zeros((0, v.shape[1]), bool), o)


# ------------------------------------------------------------------ components


def test_measurement_distance_examples():
    a = trec("a", [1, 1, 1, 1])
    b = trec("b", [2, 2, 2, 2])
    assert sim_measurements(a, a, TS) == 0.0
    # descriptors (1, 0, 1, 1) and (2, 0, 2, 2)
    assert sim_measurements(a, b, TS) == pytest.approx(math.sqrt(3))


def test_descriptors_of_unobserved_feature_are_zero():
    d = feature_descriptors(np.array([[3.0, 4.0]]), np.array([[False, False]]))
    assert d.tolist() == [[0.0, 0.0, 0.0, 0.0]]


def test_demographic_examples():
    assert sim_demographics(srec("a"), srec("b"), STATIC) == 1.0
    assert sim_demographics(srec("a", 0, 0, 40), srec("b", 1, 1, 60), STATIC) == 0.0
    assert sim_demographics(srec("a", 1, 0, 40), srec("b", 1, 2, 41), STATIC) == pytest.approx(2 / 3)


def test_demographics_need_designated_roles():
    with pytest.raises(ValueError, match="roles"):
        sim_demographics(trec("a", [1]), trec("b", [1]), TS)


def test_cognitive_examples():
    assert sim_cognitive(srec("a", mmse=7), srec("b", mmse=7), STATIC) == 0.0
    assert sim_cognitive(srec("a", mmse=0), srec("b", mmse=30), STATIC) == 1.0


def test_imaging_examples():
    assert sim_imaging(srec("a", img=0.3), srec("b", img=0.3), STATIC) == 0.5
    assert sim_imaging(srec("a", img=0.0), srec("b", img=1.0), STATIC) == pytest.approx(0.7310585786)
    assert sim_imaging(srec("a", img=0.0), srec("b", img=100.0), STATIC) == pytest.approx(1.0)


def test_combined_identity_static_and_ts():
    a = srec("a", 1, 2, 50, 10, 0.4)
    b = similarity_breakdown(a, a, STATIC)
    assert combined_similarity(b, cog_max=1.0) == pytest.approx((1 + 1 + 0.5) / 3)
    t = trec("t", [1, 2, 3, 4])
    assert combined_similarity(similarity_breakdown(t, t, TS), meas_max=2.0) == 1.0


def test_combined_maximum_attained_by_identical_pair():
    recs = [srec("a", 0, 1, 40, 3, 0.1), srec("b", 1, 2, 70, 20, 2.0), srec("c", 0, 1, 41, 5, 0.3), srec("a2", 0, 1, 40, 3, 0.1)]
    sim = combined_matrix(component_matrices(recs, STATIC))
    assert sim[0, 3] == sim.max()


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_similarities_are_symmetric(seed):
    rng = np.random.default_rng(seed)
    a = srec("a", *rng.integers(0, 2, 1), *rng.integers(0, 3, 1), *rng.integers(0, 100, 1), *rng.integers(0, 31, 1), rng.normal())
    b = srec("b", *rng.integers(0, 2, 1), *rng.integers(0, 3, 1), *rng.integers(0, 100, 1), *rng.integers(0, 31, 1), rng.normal())
    for f in (sim_demographics, sim_cognitive, sim_imaging):
        assert f(a, b, STATIC) == f(b, a, STATIC)
    x = trec("x", rng.normal(size=4), rng.uniform(size=4) < 0.7)
    y = trec("y", rng.normal(size=4), rng.uniform(size=4) < 0.7)
    assert sim_measurements(x, y, TS) == sim_measurements(y, x, TS)


def _oracle_components(records, schema):
    lay = GraphFeatureLayout.from_schema(schema)
    n = len(records)
    comps = {}
    if lay.dem is not None:
        comps["s_dem"] = [[oracles.dem_similarity(a, b, lay.dem["apoe4"], lay.dem["gender"], lay.dem["age"]) for b in records] for a in records]
    if lay.cog_cols:
        comps["s_cog"] = [[oracles.cog_distance(a, b, lay.cog_cols, lay.cog_max) for b in records] for a in records]
    if lay.img_cols:
        comps["s_img"] = [[oracles.img_distance(a, b, lay.img_cols) for b in records] for a in records]
    if lay.meas_cols:
        comps["sim_meas"] = [[oracles.meas_distance(a, b, lay.meas_cols) for b in records] for a in records]
    assert all(len(v) == n for v in comps.values())
    return comps


def test_six_handcrafted_records_order_matches_oracle():
    recs = [
        srec("a", 0, 0, 40, 0, 0.0), srec("b", 0, 0, 41, 2, 0.1), srec("c", 1, 2, 80, 30, 3.0),
        srec("d", 1, 1, 60, 15, 1.0), srec("e", 0, 1, 43, 5, 0.2), srec("f", 1, 2, 79, 29, 2.9),
    ]
    sim = combined_matrix(component_matrices(recs, STATIC))
    ref = oracles.combined(_oracle_components(recs, STATIC))
    pairs = [(i, j) for i in range(6) for j in range(i + 1, 6)]
    assert len(pairs) == 15
    ours = sorted(pairs, key=lambda p: (-sim[p], p))
    theirs = sorted(pairs, key=lambda p: (-ref[p[0]][p[1]], p))
    assert ours == theirs


# ------------------------------------------------------------------ k-NN and structure


def test_knn_tie_break_prefers_smaller_index():
    sim = np.array([[0, 1, 1, 1], [1, 0, 1, 1], [1, 1, 0, 1], [1, 1, 1, 0]], dtype=float)
    assert knn_edges(sim, 2).tolist() == [[1, 2], [0, 2], [0, 1], [0, 1]]


def test_six_node_handcrafted_top2_matches_oracle():
    rng = np.random.default_rng(0)
    sim = np.round(rng.uniform(size=(6, 6)), 1)
    sim = (sim + sim.T) / 2
    g = graph_from_similarity([str(i) for i in range(6)], sim, k=2)
    edges = {(i, j) for i, j, _ in g.edge_list()}
    assert edges == oracles.symmetric_edges(oracles.knn(sim.tolist(), 2))
    assert (g.adjacency.sum(axis=1) >= 2).all()


def test_k_not_below_group_size_is_an_error():
    with pytest.raises(ValueError, match="k=3"):
        knn_edges(np.zeros((3, 3)), 3)


def _path_graph(w12=0.3, w23=0.7):
    sim = np.zeros((3, 3))
    adj = np.zeros((3, 3), bool)
    adj[0, 1] = adj[1, 0] = adj[1, 2] = adj[2, 1] = True
    w = np.zeros((3, 3))
    w[0, 1] = w[1, 0] = w12
    w[1, 2] = w[2, 1] = w23
    return compute_structural(PopulationGraph(["1", "2", "3"], 1, w, adj, np.array([[1], [0], [1]]), max_spd=5))


def test_path_graph_spd_and_path_features():
    g = _path_graph()
    assert g.spd[0, 2] == 2
    assert g.path_features[0, 2, :2].tolist() == [0.3, 0.7]
    assert g.path_len[0, 2] == 2
    assert path_nodes(g, 0, 2) == [0, 1, 2]


def test_disconnected_pair_gets_sentinel():
    adj = np.zeros((3, 3), bool)
    adj[0, 1] = adj[1, 0] = True
    g = compute_structural(PopulationGraph(["a", "b", "c"], 1, adj * 0.5, adj, np.array([[1], [0], [0]]), max_spd=5))
    assert g.spd[0, 2] == 6 and not g.reachable[0, 2]
    assert g.path_len[0, 2] == 0


def _random_graph(n, seed, k=3):
    rng = np.random.default_rng(seed)
    sim = rng.uniform(size=(n, n))
    sim = (sim + sim.T) / 2
    return compute_structural(graph_from_similarity([f"n{i}" for i in range(n)], sim, k))


@pytest.mark.parametrize("seed", range(5))
def test_spd_matches_floyd_warshall_on_30_nodes(seed):
    g = _random_graph(30, seed, k=2)
    edges = {(i, j) for i, j, _ in g.edge_list()}
    fw = oracles.floyd_warshall(30, edges)
    for i in range(30):
        for j in range(30):
            if fw[i][j] == float("inf"):
                assert not g.reachable[i, j]
            else:
                assert g.spd[i, j] == fw[i][j]


@pytest.mark.parametrize("seed", range(3))
def test_stored_paths_are_lexicographically_smallest(seed):
    g = _random_graph(20, seed, k=2)
    edges = {(i, j) for i, j, _ in g.edge_list()}
    fw = oracles.floyd_warshall(20, edges)
    for s in range(20):
        for t in range(20):
            ref = oracles.smallest_shortest_path(20, edges, fw, s, t)
            assert path_nodes(g, s, t) == ref
            feats = [g.weights[a, b] for a, b in zip(ref, ref[1:])]
            assert g.path_features[s, t, : len(feats)].tolist() == feats


def test_spd_triangle_inequality_and_symmetry():
    g = _random_graph(25, 9)
    d = np.where(g.reachable, g.spd, 10**6)
    assert (d == d.T).all() and (np.diag(d) == 0).all()
    for m in range(25):
        assert (d <= d[:, m : m + 1] + d[m : m + 1, :]).all()


def test_long_paths_truncate_to_cap():
    n = 8
    adj = np.zeros((n, n), bool)
    for i in range(n - 1):
        adj[i, i + 1] = adj[i + 1, i] = True
    w = adj * np.arange(1, n + 1)[:, None] * 0.1
    w = np.maximum(w, w.T)
    g = compute_structural(PopulationGraph([str(i) for i in range(n)], 1, w, adj, np.zeros((n, 1), int), max_spd=3))
    assert g.spd[0, 7] == 7
    assert g.path_len[0, 7] == 3


# ------------------------------------------------------------------ builder


def test_single_graph_when_n_fits(small_cohort):
    schema, records, _ = small_cohort
    graphs = build_population_graphs(records, schema, k=5, subgraph_size=60)
    assert len(graphs) == 1 and graphs[0].n == 60
    assert (graphs[0].degree >= 5).all()


def test_partition_is_deterministic_and_mixes(small_cohort, tmp_path):
    schema, records, _ = small_cohort
    a = build_population_graphs(records, schema, k=3, subgraph_size=25, seed=4)
    b = build_population_graphs(records, schema, k=3, subgraph_size=25, seed=4)
    assert [g.node_ids for g in a] == [g.node_ids for g in b]
    assert sorted(i for g in a for i in g.node_ids) == sorted(r.id for r in records)
    assert all(g.n <= 25 for g in a)
    save_graphs(a, tmp_path / "g.json")
    back = load_graphs(tmp_path / "g.json")
    save_graphs(back, tmp_path / "h.json")
    assert (tmp_path / "g.json").read_bytes() == (tmp_path / "h.json").read_bytes()
    np.testing.assert_array_equal(back[0].spd, a[0].spd)


def test_builder_rejects_k_too_large(small_cohort):
    schema, records, _ = small_cohort
    with pytest.raises(ValueError):
        build_population_graphs(records[:5], schema, k=5)


def test_neighbor_mean_labels():
    g = _path_graph()
    assert neighbor_mean_labels(g, np.array([1.0, 0.0, 1.0]), 0.5).tolist() == [0, 1, 0]


def test_permute_relabels_all_tables():
    g = _random_graph(10, 2)
    perm = np.random.default_rng(0).permutation(10)
    p = g.permute(perm)
    np.testing.assert_array_equal(p.spd, g.spd[np.ix_(perm, perm)])
    again = compute_structural(graph_from_similarity(p.node_ids, g.weights[np.ix_(perm, perm)] , 3))
    np.testing.assert_array_equal(again.spd, p.spd)
