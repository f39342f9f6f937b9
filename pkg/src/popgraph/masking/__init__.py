from popgraph.masking.objectives import (
    DegenerateBatch,
    ImputationTally,
    LossReport,
    head_dim,
    head_name,
    pretrain_loss,
    pretrain_metrics,
    selection_score,
    split_outputs,
    tally_predictions,
)
from popgraph.masking.plan import (
    DEFAULT_MT_POOL,
    TASKS,
    MaskConfig,
    MaskingError,
    MaskPlan,
    apply_plan,
    build_plan,
    check_task,
    derive_treatment_task,
    mask_blocks,
    mask_patients,
    mask_static,
    mask_ts_features,
    masked_count,
    masked_inputs,
    plan_blocks,
    plan_patients,
    plan_static,
    plan_to_dict,
    plan_treatments,
    plan_ts_features,
    sample_multitask,
    treatment_labels,
)

__all__ = [
    "DEFAULT_MT_POOL",
    "DegenerateBatch",
    "ImputationTally",
    "LossReport",
    "MaskConfig",
    "MaskPlan",
    "MaskingError",
    "TASKS",
    "apply_plan",
    "build_plan",
    "check_task",
    "derive_treatment_task",
    "head_dim",
    "head_name",
    "mask_blocks",
    "mask_patients",
    "mask_static",
    "mask_ts_features",
    "masked_count",
    "masked_inputs",
    "plan_blocks",
    "plan_patients",
    "plan_static",
    "plan_to_dict",
    "plan_treatments",
    "plan_ts_features",
    "pretrain_loss",
    "pretrain_metrics",
    "sample_multitask",
    "selection_score",
    "split_outputs",
    "tally_predictions",
    "treatment_labels",
]
