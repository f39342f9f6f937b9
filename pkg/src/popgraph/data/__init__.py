from popgraph.data.folds import LABEL_RATIOS, FoldPlan, load_folds, make_folds, save_folds
from popgraph.data.preprocess import (
    NormStats,
    apply_norm,
    fit_norm_stats,
    interpolate_missing,
    invert_norm,
    normalize_continuous,
)
from popgraph.data.records import (
    FeatureArrays,
    PatientRecord,
    RecordError,
    load_dataset,
    load_records,
    save_records,
    stack_records,
    unstack_records,
)
from popgraph.data.schema import FeatureSchema, SchemaError, TaskSpec, load_schema, save_schema
from popgraph.data.synthetic import GENERATOR_VERSION, SyntheticConfig, generate_synthetic

__all__ = [
    "FeatureArrays",
    "FeatureSchema",
    "FoldPlan",
    "GENERATOR_VERSION",
    "LABEL_RATIOS",
    "NormStats",
    "PatientRecord",
    "RecordError",
    "SchemaError",
    "SyntheticConfig",
    "TaskSpec",
    "apply_norm",
    "fit_norm_stats",
    "generate_synthetic",
    "interpolate_missing",
    "invert_norm",
    "load_dataset",
    "load_folds",
    "load_records",
    "load_schema",
    "make_folds",
    "normalize_continuous",
    "save_folds",
    "save_records",
    "save_schema",
    "stack_records",
    "unstack_records",
]
