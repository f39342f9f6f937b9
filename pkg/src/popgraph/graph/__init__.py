from popgraph.graph.builder import (
    DEFAULT_MAX_SPD,
    PopulationGraph,
    bfs_distances,
    build_population_graphs,
    compute_structural,
    graph_from_similarity,
    knn_edges,
    load_graphs,
    neighbor_mean_labels,
    partition,
    path_nodes,
    save_graphs,
)
from popgraph.graph.similarity import (
    GraphFeatureLayout,
    SimilarityBreakdown,
    combined_matrix,
    combined_similarity,
    component_matrices,
    feature_descriptors,
    sim_cognitive,
    sim_demographics,
    sim_imaging,
    sim_measurements,
    similarity_breakdown,
)

__all__ = [
    "DEFAULT_MAX_SPD",
    "GraphFeatureLayout",
    "PopulationGraph",
    "SimilarityBreakdown",
    "bfs_distances",
    "build_population_graphs",
    "combined_matrix",
    "combined_similarity",
    "component_matrices",
    "compute_structural",
    "feature_descriptors",
    "graph_from_similarity",
    "knn_edges",
    "load_graphs",
    "neighbor_mean_labels",
    "partition",
    "path_nodes",
    "save_graphs",
    "sim_cognitive",
    "sim_demographics",
    "sim_imaging",
    "sim_measurements",
    "similarity_breakdown",
]
