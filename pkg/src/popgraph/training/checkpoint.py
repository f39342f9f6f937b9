"""Model checkpoints and encoder transfer between schemas."""

from __future__ import annotations

import hashlib
import re
from pathlib import Path

import numpy as np

from popgraph.core.params import load_checkpoint, save_checkpoint
from popgraph.data.schema import FeatureSchema, schema_from_dict, schema_to_dict
from popgraph.model.network import ModelConfig, PopGraphModel

MODEL_CKPT_VERSION = 1

# parameters that survive a change of input schema
_TRANSFERABLE = re.compile(r"^(temporal\.ts_[dc]\.layers\.|graphormer\.|backbone\.)")
_POSITIONAL = re.compile(r"^temporal\.ts_[dc]\.pos$")


class CheckpointMismatch(ValueError):
    pass


def save_model(path: str | Path, model: PopGraphModel, phase: str, steps: int, extra: dict | None = None) -> str:
    """Write a checkpoint and return its sha256."""
    meta = {
        "version": MODEL_CKPT_VERSION,
        "model_config": model.config.to_dict(),
        "schema": schema_to_dict(model.schema),
        "schema_fingerprint": model.schema.fingerprint(),
        "phase": phase,
        "steps": int(steps),
        "heads": dict(sorted(model.heads.items())),
        "seed": model.seed,
    }
    if extra:
        meta["extra"] = extra
    save_checkpoint(path, model.params, meta)
    return file_sha256(path)


def file_sha256(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def load_model(path: str | Path) -> PopGraphModel:
    """Rebuild the exact model (heads included) stored in a checkpoint."""
    arrays, meta = load_checkpoint(path)
    schema = schema_from_dict(meta["schema"])
    model = PopGraphModel(schema, ModelConfig.from_dict(meta["model_config"]), seed=int(meta["seed"]))
    for name, dim in meta["heads"].items():
        model.add_head(name, int(dim))
    model.params.load_snapshot(arrays, strict=True)
    return model


def encoder_arrays(arrays: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    return {k: v for k, v in arrays.items() if not k.startswith("head.")}


def init_from_checkpoint(model: PopGraphModel, arrays: dict[str, np.ndarray], meta: dict) -> None:
    """Copy every encoder parameter; the schema and shapes must match exactly."""
    if meta.get("schema_fingerprint") != model.schema.fingerprint():
        raise CheckpointMismatch(
            "checkpoint was trained on a different schema; use transfer mode to reuse its backbone"
        )
    enc = encoder_arrays(arrays)
    mine = set(model.encoder_names())
    if set(enc) != mine:
        diff = sorted(set(enc) ^ mine)[:5]
        raise CheckpointMismatch(f"encoder parameters differ from checkpoint ({diff}); use transfer mode")
    for name, arr in enc.items():
        if model.params[name].shape != arr.shape:
            raise CheckpointMismatch(
                f"shape mismatch for {name}: model {model.params[name].shape} vs checkpoint {arr.shape}; "
                "use transfer mode"
            )
    model.params.load_snapshot(enc, strict=True)


def transfer_init(
    checkpoint: str | Path | tuple[dict, dict],
    new_schema: FeatureSchema,
    new_config: ModelConfig,
    seed: int = 0,
) -> PopGraphModel:
    """New model for ``new_schema`` whose backbone comes from ``checkpoint``.

    Temporal-transformer layers, graph-transformer parameters and the linear
    backbone are copied. Input encoders, upscale layers and heads keep their
    fresh initialisation. Positional tables are copied when their shapes agree.
    """
    arrays, meta = load_checkpoint(checkpoint) if not isinstance(checkpoint, tuple) else checkpoint
    old_cfg = ModelConfig.from_dict(meta["model_config"])
    old_schema = schema_from_dict(meta["schema"])
    old_w, new_w = old_cfg.width(old_schema), new_config.width(new_schema)
    if old_w != new_w:
        raise CheckpointMismatch(f"backbone width mismatch: checkpoint {old_w}, new model {new_w}")
    if old_cfg.backbone != new_config.backbone:
        raise CheckpointMismatch(f"backbone kind mismatch: checkpoint {old_cfg.backbone}, new {new_config.backbone}")
    for key in ("ts_d", "ts_c"):
        a = old_cfg.group_dims(old_schema).get(key)
        b = new_config.group_dims(new_schema).get(key)
        if a is not None and b is not None and a != b:
            raise CheckpointMismatch(f"temporal width mismatch for {key}: checkpoint {a}, new model {b}")

    model = PopGraphModel(new_schema, new_config, seed=seed)
    copy = {}
    for name, arr in arrays.items():
        if name not in model.params:
            continue
        if _TRANSFERABLE.match(name):
            if model.params[name].shape != arr.shape:
                raise CheckpointMismatch(f"shape mismatch for {name}: {model.params[name].shape} vs {arr.shape}")
            copy[name] = arr
        elif _POSITIONAL.match(name) and model.params[name].shape == arr.shape:
            copy[name] = arr
    model.params.load_snapshot(copy, strict=True)
    return model


def transferred_names(model: PopGraphModel) -> list[str]:
    return [n for n in model.params.names() if _TRANSFERABLE.match(n)]
