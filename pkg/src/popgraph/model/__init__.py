from popgraph.model.network import (
    BACKBONES,
    GraphTables,
    ModelConfig,
    ModelInputs,
    PopGraphModel,
    read_embeddings,
    write_embeddings,
)

__all__ = [
    "BACKBONES",
    "GraphTables",
    "ModelConfig",
    "ModelInputs",
    "PopGraphModel",
    "read_embeddings",
    "write_embeddings",
]
