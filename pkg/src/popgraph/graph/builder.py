from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from popgraph.data.records import PatientRecord
from popgraph.data.schema import FeatureSchema
from popgraph.graph.similarity import combined_matrix, component_matrices

GRAPH_FORMAT = "popgraph.graphs/1"
DEFAULT_MAX_SPD = 20


@dataclass
class PopulationGraph:
    """k-NN patient graph over one sub-group, plus structural tables.

    ``spd`` holds hop counts; unreachable pairs hold ``max_spd + 1`` (or one
    more than the longest finite hop, if that exceeds the cap).
    ``path_features[i, j, p]`` is the edge feature of the p-th edge on the
    lexicographically smallest shortest path from i to j (first
    ``max_spd`` edges only); ``path_len[i, j]`` counts the stored edges.
    """

    node_ids: list[str]
    k: int
    weights: np.ndarray  # (n, n) edge feature, 0 where no edge
    adjacency: np.ndarray  # (n, n) bool, symmetric
    knn: np.ndarray  # (n, k) out-neighbours before symmetrisation
    max_spd: int = DEFAULT_MAX_SPD
    degree: np.ndarray | None = None
    spd: np.ndarray | None = None
    reachable: np.ndarray | None = None
    path_features: np.ndarray | None = None
    path_len: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return len(self.node_ids)

    @property
    def has_structure(self) -> bool:
        return self.spd is not None

    def edge_list(self) -> list[tuple[int, int, float]]:
        """Undirected edges (i < j) with their features."""
        ii, jj = np.nonzero(np.triu(self.adjacency, 1))
        return [(int(i), int(j), float(self.weights[i, j])) for i, j in zip(ii, jj)]

    def permute(self, perm) -> PopulationGraph:
        """Relabel nodes so that new node a is old node ``perm[a]``."""
        p = np.asarray(perm)
        inv = np.argsort(p)
        g = replace(
            self,
            node_ids=[self.node_ids[i] for i in p],
            weights=self.weights[np.ix_(p, p)],
            adjacency=self.adjacency[np.ix_(p, p)],
            knn=inv[self.knn[p]],
        )
        if self.has_structure:
            g.degree = self.degree[p]
            g.spd = self.spd[np.ix_(p, p)]
            g.reachable = self.reachable[np.ix_(p, p)]
            g.path_features = self.path_features[np.ix_(p, p)]
            g.path_len = self.path_len[np.ix_(p, p)]
        return g


def knn_edges(sim: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k most similar other nodes per row.

    Ties are broken by the smaller node index.
    """
    n = sim.shape[0]
    if k >= n:
        raise ValueError(f"k={k} must be smaller than the group size {n}")
    s = sim.astype(np.float64, copy=True)
    np.fill_diagonal(s, -np.inf)
    order = np.argsort(-s, axis=1, kind="stable")
    return order[:, :k]


def graph_from_similarity(node_ids: list[str], sim: np.ndarray, k: int, max_spd: int = DEFAULT_MAX_SPD) -> PopulationGraph:
    n = len(node_ids)
    nbrs = knn_edges(sim, k)
    adj = np.zeros((n, n), dtype=bool)
    rows = np.repeat(np.arange(n), k)
    adj[rows, nbrs.reshape(-1)] = True
    adj |= adj.T
    weights = np.where(adj, sim, 0.0)
    return PopulationGraph(list(node_ids), k, weights, adj, nbrs, max_spd=max_spd)


def partition(ids: list[str], subgraph_size: int, rng: np.random.Generator) -> list[list[str]]:
    """Random near-equal groups of at most ``subgraph_size`` ids.

    Members keep their dataset order inside a group.
    """
    n = len(ids)
    if n == 0:
        return []
    groups = -(-n // subgraph_size)
    perm = rng.permutation(n)
    return [[ids[i] for i in np.sort(chunk)] for chunk in np.array_split(perm, groups)]


def build_population_graphs(
    records: list[PatientRecord],
    schema: FeatureSchema,
    k: int = 5,
    subgraph_size: int = 500,
    seed: int = 0,
    max_spd: int = DEFAULT_MAX_SPD,
) -> list[PopulationGraph]:
    """Partition patients into sub-graphs and connect each to its k nearest."""
    if k < 1:
        raise ValueError("k must be >= 1")
    by_id = {r.id: r for r in records}
    rng = np.random.default_rng(seed)
    graphs = []
    for members in partition([r.id for r in records], subgraph_size, rng):
        if k >= len(members):
            raise ValueError(f"k={k} must be smaller than the group size {len(members)}")
        group = [by_id[m] for m in members]
        sim = combined_matrix(component_matrices(group, schema))
        g = graph_from_similarity(members, sim, k, max_spd=max_spd)
        graphs.append(compute_structural(g))
    return graphs


# ------------------------------------------------------------------ structure


def bfs_distances(adjacency: np.ndarray) -> np.ndarray:
    """All-pairs hop counts by frontier expansion; -1 where unreachable."""
    n = adjacency.shape[0]
    a = adjacency.astype(np.float64)
    dist = np.full((n, n), -1, dtype=np.int64)
    np.fill_diagonal(dist, 0)
    reached = np.eye(n, dtype=bool)
    frontier = np.eye(n)
    hop = 0
    while True:
        hop += 1
        nxt = (frontier @ a > 0) & ~reached
        if not nxt.any():
            break
        dist[nxt] = hop
        reached |= nxt
        frontier = nxt.astype(np.float64)
    return dist


def next_hops(adjacency: np.ndarray, dist: np.ndarray) -> np.ndarray:
    """next[s, t]: smallest neighbour of s that is one hop closer to t.

    Following ``next`` from s yields the lexicographically smallest shortest
    path to t. Entries are -1 where t == s or t is unreachable.
    """
    n = adjacency.shape[0]
    out = np.full((n, n), -1, dtype=np.int64)
    for s in range(n):
        nb = np.flatnonzero(adjacency[s])
        if nb.size == 0:
            continue
        want = dist[s] - 1
        ok = (dist[nb] == want[None, :]) & (dist[s] > 0)[None, :]
        has = ok.any(axis=0)
        out[s, has] = nb[np.argmax(ok[:, has], axis=0)]
    return out


def compute_structural(graph: PopulationGraph) -> PopulationGraph:
    n, cap = graph.n, graph.max_spd
    adj = graph.adjacency
    dist = bfs_distances(adj)
    reachable = dist >= 0
    finite_max = int(dist.max()) if n else 0
    spd = np.where(reachable, dist, max(cap, finite_max) + 1)
    nh = next_hops(adj, dist)

    length = np.where(reachable, np.minimum(dist, cap), 0)
    feats = np.zeros((n, n, cap))
    cur = np.repeat(np.arange(n)[:, None], n, axis=1)
    tgt = np.repeat(np.arange(n)[None, :], n, axis=0)
    for p in range(cap):
        active = p < length
        if not active.any():
            break
        nxt = np.where(active, nh[cur, tgt], cur)
        feats[..., p] = np.where(active, graph.weights[cur, nxt], 0.0)
        cur = nxt

    out = replace(graph)
    out.degree = adj.sum(axis=1).astype(np.int64)
    out.spd = spd
    out.reachable = reachable
    out.path_features = feats
    out.path_len = length
    return out


def path_nodes(graph: PopulationGraph, s: int, t: int) -> list[int]:
    """Node sequence of the stored shortest path from s to t (empty if unreachable)."""
    dist = bfs_distances(graph.adjacency)
    if dist[s, t] < 0:
        return []
    nh = next_hops(graph.adjacency, dist)
    path = [s]
    while path[-1] != t:
        path.append(int(nh[path[-1], t]))
    return path


# ------------------------------------------------------------------ io


def graphs_to_dict(graphs: list[PopulationGraph]) -> dict:
    out = []
    for g in graphs:
        out.append(
            {
                "nodes": g.node_ids,
                "k": g.k,
                "max_spd": g.max_spd,
                "knn": g.knn.tolist(),
                "edges": [[i, j, w] for i, j, w in g.edge_list()],
                "degrees": None if g.degree is None else g.degree.tolist(),
                "spd": None if g.spd is None else g.spd.tolist(),
            }
        )
    return {"format": GRAPH_FORMAT, "graphs": out}


def graphs_from_dict(obj: dict) -> list[PopulationGraph]:
    if obj.get("format") != GRAPH_FORMAT:
        raise ValueError(f"unsupported graph format {obj.get('format')!r}")
    graphs = []
    for e in obj["graphs"]:
        n = len(e["nodes"])
        adj = np.zeros((n, n), dtype=bool)
        w = np.zeros((n, n))
        for i, j, val in e["edges"]:
            adj[i, j] = adj[j, i] = True
            w[i, j] = w[j, i] = val
        g = PopulationGraph(
            list(e["nodes"]), int(e["k"]), w, adj, np.asarray(e["knn"], dtype=np.int64), max_spd=int(e["max_spd"])
        )
        graphs.append(compute_structural(g))
    return graphs


def save_graphs(graphs: list[PopulationGraph], path: str | Path) -> None:
    Path(path).write_text(json.dumps(graphs_to_dict(graphs), separators=(",", ":")) + "\n")


def load_graphs(path: str | Path) -> list[PopulationGraph]:
    return graphs_from_dict(json.loads(Path(path).read_text()))


def neighbor_mean_labels(graph: PopulationGraph, values: np.ndarray, threshold: float) -> np.ndarray:
    """1{mean of ``values`` over each node's graph neighbours > threshold}."""
    adj = graph.adjacency.astype(np.float64)
    deg = np.maximum(adj.sum(axis=1), 1.0)
    return ((adj @ values) / deg > threshold).astype(np.int64)
