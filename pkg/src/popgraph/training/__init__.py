from popgraph.training.checkpoint import (
    CheckpointMismatch,
    file_sha256,
    init_from_checkpoint,
    load_model,
    save_model,
    transfer_init,
    transferred_names,
)
from popgraph.training.grid import SCRATCH, GridConfig, aggregate, mean_std, run_experiment_grid
from popgraph.training.loops import (
    FINETUNE_LR,
    PHASES,
    PRETRAIN_LR,
    MetricsReport,
    TrainConfig,
    evaluate,
    finetune,
    predict_probs,
    pretrain,
    task_head,
)
from popgraph.training.workspace import GraphBatch, Workspace, label_arrays, prepare_workspace

__all__ = [
    "CheckpointMismatch",
    "FINETUNE_LR",
    "GraphBatch",
    "GridConfig",
    "MetricsReport",
    "PHASES",
    "PRETRAIN_LR",
    "SCRATCH",
    "TrainConfig",
    "Workspace",
    "aggregate",
    "evaluate",
    "file_sha256",
    "finetune",
    "init_from_checkpoint",
    "label_arrays",
    "load_model",
    "mean_std",
    "predict_probs",
    "prepare_workspace",
    "pretrain",
    "run_experiment_grid",
    "save_model",
    "task_head",
    "transfer_init",
    "transferred_names",
]
