"""Preprocessed per-sub-graph arrays for one fold."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from popgraph.data.preprocess import NormStats, interpolate_missing, normalize_continuous
from popgraph.data.records import FeatureArrays, PatientRecord, stack_records
from popgraph.data.schema import FeatureSchema
from popgraph.graph.builder import PopulationGraph
from popgraph.model.network import GraphTables, ModelConfig, ModelInputs


@dataclass
class GraphBatch:
    graph: PopulationGraph
    arrays: FeatureArrays
    inputs: ModelInputs
    tables: GraphTables | None

    @property
    def ids(self) -> list[str]:
        return self.graph.node_ids

    def mask_for(self, ids) -> np.ndarray:
        ids = set(ids)
        return np.array([i in ids for i in self.ids], dtype=bool)


@dataclass
class Workspace:
    schema: FeatureSchema
    batches: list[GraphBatch]
    norm: NormStats
    train_ids: list[str]

    def masks(self, ids) -> list[np.ndarray]:
        return [b.mask_for(ids) for b in self.batches]


def prepare_workspace(
    schema: FeatureSchema,
    records: list[PatientRecord],
    graphs: list[PopulationGraph],
    train_ids,
    model_config: ModelConfig,
) -> Workspace:
    """Interpolate, min-max scale on ``train_ids`` and stack each sub-graph.

    Only feature arrays are kept; label maps never reach the workspace.
    """
    filled = [interpolate_missing(r) for r in records]
    scaled, stats = normalize_continuous(filled, schema, train_ids)
    by_id = {r.id: r for r in scaled}
    batches = []
    for g in graphs:
        missing = [i for i in g.node_ids if i not in by_id]
        if missing:
            raise KeyError(f"graph nodes without records: {missing[:5]}")
        arrays = stack_records([by_id[i] for i in g.node_ids], schema)
        tables = GraphTables.from_graph(g, model_config) if model_config.backbone == "graphormer" else None
        batches.append(GraphBatch(g, arrays, ModelInputs.from_arrays(arrays), tables))
    return Workspace(schema, batches, stats, sorted(train_ids))


def label_arrays(records: list[PatientRecord], batches: list[GraphBatch], task: str) -> list[np.ndarray]:
    """Per-batch label vectors, -1 where a record has no label for ``task``."""
    lab = {r.id: r.labels.get(task, -1) for r in records}
    return [np.array([lab[i] for i in b.ids], dtype=np.int64) for b in batches]
