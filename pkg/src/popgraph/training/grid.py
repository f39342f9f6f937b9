"""Label-ratio experiment grid: {scratch, pre-trained inits} x ratios x folds x seeds."""

from __future__ import annotations

import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from popgraph.data.folds import FoldPlan
from popgraph.data.records import PatientRecord
from popgraph.data.schema import FeatureSchema
from popgraph.graph.builder import PopulationGraph
from popgraph.masking.plan import MaskConfig, check_task
from popgraph.model.network import ModelConfig, PopGraphModel
from popgraph.training.checkpoint import encoder_arrays, save_model
from popgraph.training.loops import TrainConfig, finetune, model_seed, pretrain
from popgraph.training.workspace import label_arrays, prepare_workspace

SCRATCH = "scratch"


@dataclass
class GridConfig:
    task: str = "outcome"
    inits: tuple[str, ...] = (SCRATCH, "MT")
    ratios: tuple[float, ...] = (0.01, 1.0)
    seeds: tuple[int, ...] = (0,)
    model: ModelConfig = field(default_factory=ModelConfig)
    mask: MaskConfig = field(default_factory=MaskConfig)
    pretrain: TrainConfig = field(default_factory=lambda: TrainConfig(phase="pretrain", task="MT"))
    scratch: TrainConfig = field(default_factory=lambda: TrainConfig(phase="finetune-scratch"))
    finetune: TrainConfig = field(default_factory=lambda: TrainConfig(phase="finetune-pretrained"))

    def to_dict(self) -> dict:
        return {
            "task": self.task,
            "inits": list(self.inits),
            "ratios": list(self.ratios),
            "seeds": list(self.seeds),
            "model": self.model.to_dict(),
            "mask": self.mask.to_dict(),
            "pretrain": self.pretrain.to_dict(),
            "scratch": self.scratch.to_dict(),
            "finetune": self.finetune.to_dict(),
        }

    @classmethod
    def from_dict(cls, obj: dict) -> GridConfig:
        return cls(
            task=obj["task"],
            inits=tuple(obj["inits"]),
            ratios=tuple(float(r) for r in obj["ratios"]),
            seeds=tuple(int(s) for s in obj["seeds"]),
            model=ModelConfig.from_dict(obj["model"]),
            mask=MaskConfig.from_dict(obj["mask"]),
            pretrain=TrainConfig.from_dict(obj["pretrain"]),
            scratch=TrainConfig.from_dict(obj["scratch"]),
            finetune=TrainConfig.from_dict(obj["finetune"]),
        )


def cell_key(init: str, ratio: float, fold: int, seed: int) -> str:
    return f"{init}|{ratio:g}|fold{fold}|seed{seed}"


def _run_unit(args) -> list[dict]:
    """All cells sharing one (fold, seed): pre-train once per init, then fine-tune."""
    schema, records, graphs, plan, seed, cfg, ckpt_dir = args
    out = []
    ws = prepare_workspace(schema, records, graphs, plan.train_ids, cfg.model)
    labels = label_arrays(records, ws.batches, cfg.task)
    spec = schema.task(cfg.task)
    encoders: dict[str, dict] = {}
    pre_reports: dict[str, dict] = {}
    for init in cfg.inits:
        if init == SCRATCH:
            continue
        try:
            m = PopGraphModel(schema, cfg.model, seed=model_seed(seed, "pretrain", init, plan.fold))
            pcfg = replace(cfg.pretrain, task=init, seed=seed)
            rep = pretrain(m, ws, plan.train_ids, plan.val_ids, pcfg, cfg.mask)
            encoders[init] = encoder_arrays(m.params.snapshot())
            info = {"best_epoch": rep.best_epoch, "best_score": rep.best_score, "steps": rep.steps}
            if ckpt_dir is not None:
                path = Path(ckpt_dir) / f"pretrain-{init}-fold{plan.fold}-seed{seed}.ckpt"
                info["checkpoint"] = path.name
                info["sha256"] = save_model(path, m, "pretrain", rep.steps, {"task": init, "fold": plan.fold})
            pre_reports[init] = info
        except Exception as exc:  # recorded per cell, grid continues
            pre_reports[init] = {"error": f"{type(exc).__name__}: {exc}"}

    for init in cfg.inits:
        for ratio in cfg.ratios:
            cell = {"init": init, "ratio": float(ratio), "fold": plan.fold, "seed": seed}
            try:
                if init != SCRATCH and init not in encoders:
                    raise RuntimeError(f"pre-training failed: {pre_reports[init].get('error')}")
                base = cfg.scratch if init == SCRATCH else cfg.finetune
                tcfg = replace(base, task=cfg.task, seed=seed, label_ratio=float(ratio))
                m = PopGraphModel(schema, cfg.model, seed=model_seed(seed, "finetune", init, ratio, plan.fold))
                if init != SCRATCH:
                    m.params.load_snapshot(encoders[init], strict=True)
                rep = finetune(
                    m, ws, labels, spec, plan.labeled_train_ids(ratio), plan.val_ids, plan.test_ids, tcfg
                )
                cell.update(
                    status="ok",
                    test=rep.test,
                    best_epoch=rep.best_epoch,
                    best_val=rep.best_score,
                    epochs_run=len(rep.epochs),
                    labeled=len(plan.labeled_train_ids(ratio)),
                )
                if init != SCRATCH:
                    cell["pretrain"] = pre_reports[init]
            except Exception as exc:
                cell.update(status="failed", error=f"{type(exc).__name__}: {exc}", trace=traceback.format_exc(limit=3))
            out.append(cell)
    return out


def run_experiment_grid(
    schema: FeatureSchema,
    records: list[PatientRecord],
    graphs: list[PopulationGraph],
    folds: list[FoldPlan],
    cfg: GridConfig,
    jobs: int = 1,
    checkpoint_dir: str | Path | None = None,
) -> dict:
    """Run every cell and return ``{"cells": [...], "aggregate": [...]}``.

    Cells come back in a fixed order regardless of ``jobs``. Pre-training is
    done once per (init, fold, seed) and reused for every label ratio.
    """
    for init in cfg.inits:
        if init != SCRATCH:
            check_task(init, schema)
    units = [
        (schema, records, graphs, plan, seed, cfg, checkpoint_dir) for plan in folds for seed in cfg.seeds
    ]
    if jobs > 1 and len(units) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_unit, units))
    else:
        results = [_run_unit(u) for u in units]
    cells = [c for unit in results for c in unit]
    order = {init: i for i, init in enumerate(cfg.inits)}
    cells.sort(key=lambda c: (order[c["init"]], c["ratio"], c["fold"], c["seed"]))
    return {"cells": cells, "aggregate": aggregate(cells)}


def mean_std(values) -> tuple[float | None, float | None]:
    """Mean and sample standard deviation (n - 1); std is None for one value."""
    vals = np.asarray([v for v in values if v is not None], dtype=np.float64)
    if vals.size == 0:
        return None, None
    std = float(vals.std(ddof=1)) if vals.size > 1 else None
    return float(vals.mean()), std


def aggregate(cells: list[dict]) -> list[dict]:
    """mean +- std of test metrics per (init, ratio), in first-seen order."""
    groups: dict[tuple, list[dict]] = {}
    for c in cells:
        groups.setdefault((c["init"], c["ratio"]), []).append(c)
    out = []
    for (init, ratio), members in groups.items():
        ok = [c for c in members if c.get("status") == "ok"]
        row = {"init": init, "ratio": ratio, "n": len(ok), "failed": len(members) - len(ok)}
        for metric in ("auc", "acc", "f1"):
            mean, std = mean_std([c["test"].get(metric) for c in ok])
            row[metric] = {"mean": mean, "std": std}
        out.append(row)
    return out
