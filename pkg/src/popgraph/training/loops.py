"""Pre-training and fine-tuning loops."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields

import numpy as np

from popgraph.core import tensor as T
from popgraph.core.optim import AdamState, PolynomialDecay, adam_step
from popgraph.core.tensor import backward, no_grad
from popgraph.data.schema import TaskSpec
from popgraph.masking.objectives import (
    ImputationTally,
    head_dim,
    head_name,
    pretrain_loss,
    selection_score,
    split_outputs,
    tally_predictions,
)
from popgraph.masking.plan import MaskConfig, build_plan, check_task, masked_inputs, sample_multitask
from popgraph.metrics import accuracy, macro_auc, macro_f1
from popgraph.model.network import PopGraphModel
from popgraph.seeding import derive_seed, rng_for
from popgraph.training.workspace import Workspace

PHASES = ("pretrain", "finetune-scratch", "finetune-pretrained", "transfer")

# learning-rate defaults: (start, end); end None = constant
PRETRAIN_LR = {
    "TFM": (1e-3, 1e-4),
    "BM": (1e-3, 1e-4),
    "TP": (5e-4, None),
    "PM": (5e-4, None),
    "MT": (5e-4, None),
    "SFM": (1e-5, None),
}
FINETUNE_LR = {"finetune-scratch": 1e-4, "finetune-pretrained": 1e-5, "transfer": 1e-4}


@dataclass
class TrainConfig:
    phase: str = "finetune-scratch"
    task: str = "outcome"
    epochs: int = 100
    short_epochs: int | None = None  # budget used at the 1% label ratio
    lr: float | None = None
    end_lr: float | None = None
    patience: int = 50
    seed: int = 0
    label_ratio: float = 1.0

    def validate(self) -> None:
        if self.phase not in PHASES:
            raise ValueError(f"phase must be one of {PHASES}, got {self.phase!r}")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.lr is not None and self.lr <= 0:
            raise ValueError("lr must be > 0")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")

    def resolved_lr(self) -> tuple[float, float | None]:
        if self.lr is not None:
            return self.lr, self.end_lr
        if self.phase == "pretrain":
            return PRETRAIN_LR.get(self.task, (5e-4, None))
        return FINETUNE_LR[self.phase], self.end_lr

    def epoch_budget(self) -> int:
        if self.short_epochs is not None and self.label_ratio <= 0.01 + 1e-12:
            return self.short_epochs
        return self.epochs

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, obj: dict) -> TrainConfig:
        known = {f.name for f in fields(cls)}
        extra = set(obj) - known
        if extra:
            raise ValueError(f"unknown training config keys: {sorted(extra)}")
        return cls(**obj)


@dataclass
class MetricsReport:
    phase: str
    task: str
    epochs: list[dict] = field(default_factory=list)
    best_epoch: int = -1
    best_score: float | None = None
    test: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    steps: int = 0
    warnings: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def _optimizer(cfg: TrainConfig, total_steps: int) -> AdamState:
    lr, end = cfg.resolved_lr()
    sched = PolynomialDecay(lr, end, total_steps) if end is not None else None
    return AdamState(lr=lr, lr_schedule=sched)


def _epoch_order(seed: int, epoch: int, count: int) -> np.ndarray:
    return rng_for(seed, "order", epoch).permutation(count)


# ------------------------------------------------------------------ evaluation


def evaluate(probs: np.ndarray, labels: np.ndarray, num_classes: int) -> dict:
    """Accuracy, AUC (binary, or macro one-vs-rest) and macro F1."""
    probs, labels = np.asarray(probs), np.asarray(labels)
    if labels.size == 0:
        raise ValueError("evaluate: no labelled nodes")
    pred = probs.argmax(axis=1)
    return {
        "acc": accuracy(pred, labels),
        "auc": macro_auc(probs, labels),
        "f1": macro_f1(pred, labels, num_classes),
        "n": int(labels.size),
    }


# ------------------------------------------------------------------ pre-training

VAL_MASK_SEED = 20240


def _pretrain_tasks(task: str, mask_cfg: MaskConfig) -> list[str]:
    return list(mask_cfg.mt_pool) if task == "MT" else [task]


def pretrain_validation(model: PopGraphModel, ws: Workspace, tasks: list[str], mask_cfg: MaskConfig, loss_masks) -> dict:
    """Per-task imputation metrics on fixed validation masks, plus their mean score."""
    out = {}
    scores = []
    with no_grad():
        for task in tasks:
            tally = ImputationTally()
            for gi, b in enumerate(ws.batches):
                if not loss_masks[gi].any():
                    continue
                plan = build_plan(task, b.arrays, ws.schema, mask_cfg, rng_for(VAL_MASK_SEED, task, gi), loss_masks[gi])
                h = model.encode(masked_inputs(b.arrays, plan, ws.schema), b.tables)
                preds = split_outputs(task, model.decode(head_name(task), h), ws.schema)
                tally.add(tally_predictions(preds, plan, ws.schema))
            m = tally.metrics()
            m["score"] = selection_score(m)
            out[task] = m
            if m["score"] is not None:
                scores.append(m["score"])
    out["score"] = float(np.mean(scores)) if scores else None
    return out


def pretrain(
    model: PopGraphModel,
    ws: Workspace,
    train_ids,
    val_ids,
    cfg: TrainConfig,
    mask_cfg: MaskConfig = MaskConfig(),
    log=None,
) -> MetricsReport:
    """Masked-imputation pre-training; restores the best validation snapshot.

    Losses use training-split nodes only. Selection uses the validation
    nodes under masks drawn from a fixed seed, or the training nodes when the
    fold has no validation split.
    """
    cfg.validate()
    check_task(cfg.task, ws.schema)
    tasks = _pretrain_tasks(cfg.task, mask_cfg)
    for t in tasks:
        check_task(t, ws.schema)
        if head_name(t) not in model.heads:
            model.add_head(head_name(t), head_dim(t, ws.schema))
    train_masks = ws.masks(train_ids)
    rep = MetricsReport("pretrain", cfg.task)
    val_masks = ws.masks(val_ids)
    if not any(m.any() for m in val_masks):
        val_masks = train_masks
        rep.warnings.append("no validation nodes; selecting on training nodes")

    epochs = cfg.epoch_budget()
    opt = _optimizer(cfg, epochs * len(ws.batches))
    best, best_score, stale = None, -np.inf, 0
    step = 0
    for epoch in range(epochs):
        losses = []
        counts = {t: 0 for t in tasks}
        for gi in _epoch_order(cfg.seed, epoch, len(ws.batches)):
            b = ws.batches[gi]
            if not train_masks[gi].any():
                continue
            task = sample_multitask(tasks, cfg.seed, step) if cfg.task == "MT" else cfg.task
            rng = rng_for(cfg.seed, "pretrain", step)
            plan = build_plan(task, b.arrays, ws.schema, mask_cfg, rng, train_masks[gi])
            if plan.valid_count() == 0:
                step += 1
                continue
            h = model.encode(masked_inputs(b.arrays, plan, ws.schema), b.tables, rng=rng)
            preds = split_outputs(task, model.decode(head_name(task), h), ws.schema)
            loss, lrep = pretrain_loss(preds, plan)
            backward(loss)
            adam_step(model.params, opt, skip_missing=True)
            losses.append(lrep.total)
            counts[task] += 1
            step += 1
        val = pretrain_validation(model, ws, tasks, mask_cfg, val_masks)
        rec = {"epoch": epoch, "loss": float(np.mean(losses)) if losses else None, "val": val, "task_counts": counts}
        rep.epochs.append(rec)
        if log:
            log(rec)
        score = val["score"] if val["score"] is not None else -np.inf
        if best is None or score > best_score:
            best, best_score, stale = model.params.snapshot(), score, 0
            rep.best_epoch = epoch
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    model.params.load_snapshot(best)
    rep.best_score = None if not np.isfinite(best_score) else float(best_score)
    rep.steps = step
    return rep


# ------------------------------------------------------------------ fine-tuning


def task_head(task: str) -> str:
    return f"task.{task}"


def predict_probs(model: PopGraphModel, ws: Workspace, task: str) -> list[np.ndarray]:
    """Class probabilities for every node of every batch (no dropout)."""
    out = []
    with no_grad():
        for b in ws.batches:
            logits = model.decode(task_head(task), model.encode(b.inputs, b.tables)).data
            z = logits - logits.max(axis=1, keepdims=True)
            e = np.exp(z)
            out.append(e / e.sum(axis=1, keepdims=True))
    return out


def _gather(values: list[np.ndarray], masks: list[np.ndarray]) -> np.ndarray:
    parts = [v[m] for v, m in zip(values, masks)]
    return np.concatenate(parts) if parts else np.zeros(0)


def finetune(
    model: PopGraphModel,
    ws: Workspace,
    labels: list[np.ndarray],
    spec: TaskSpec,
    labeled_ids,
    val_ids,
    test_ids,
    cfg: TrainConfig,
    log=None,
) -> MetricsReport:
    """Transductive node classification on ``labeled_ids``.

    The whole sub-graph is encoded each step; only labelled training nodes
    enter the loss. The best epoch is chosen on validation AUC (accuracy if
    AUC is undefined); without validation nodes the last epoch is kept.
    """
    cfg.validate()
    for name in [h for h in model.heads if h.startswith("pt.")]:
        model.drop_head(name)  # pre-training decoders are discarded
    model.add_head(task_head(spec.name), spec.num_classes)
    lab_masks = ws.masks(labeled_ids)
    for m, y in zip(lab_masks, labels):
        if (y[m] < 0).any():
            raise ValueError(f"labelled training node without a {spec.name} label")
    val_masks, test_masks = ws.masks(val_ids), ws.masks(test_ids)
    has_val = any(m.any() for m in val_masks)
    rep = MetricsReport(cfg.phase, spec.name)
    if not has_val:
        rep.warnings.append("no validation nodes; keeping the last epoch")

    epochs = cfg.epoch_budget()
    active = [gi for gi, m in enumerate(lab_masks) if m.any()]
    opt = _optimizer(cfg, epochs * len(active))
    best, best_score, stale, step = None, -np.inf, 0, 0
    for epoch in range(epochs):
        losses = []
        for gi in _epoch_order(cfg.seed, epoch, len(ws.batches)):
            if gi not in active:
                continue
            b = ws.batches[gi]
            rng = rng_for(cfg.seed, "finetune", step)
            logits = model.decode(task_head(spec.name), model.encode(b.inputs, b.tables, rng=rng))
            w = lab_masks[gi].astype(np.float64)
            loss = T.cross_entropy(logits, np.where(lab_masks[gi], labels[gi], 0), w)
            backward(loss)
            adam_step(model.params, opt)
            losses.append(float(loss.data))
            step += 1
        rec = {"epoch": epoch, "loss": float(np.mean(losses)) if losses else None}
        if has_val:
            probs = predict_probs(model, ws, spec.name)
            val = evaluate(_gather(probs, val_masks), _gather(labels, val_masks), spec.num_classes)
            rec["val"] = val
            score = val["auc"] if val["auc"] is not None else val["acc"]
        else:
            score = float(epoch)
        rep.epochs.append(rec)
        if log:
            log(rec)
        if best is None or score > best_score:
            best, best_score, stale = model.params.snapshot(), score, 0
            rep.best_epoch = epoch
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    model.params.load_snapshot(best)
    rep.best_score = float(best_score)
    rep.steps = step
    probs = predict_probs(model, ws, spec.name)
    if any(m.any() for m in test_masks):
        rep.test = evaluate(_gather(probs, test_masks), _gather(labels, test_masks), spec.num_classes)
    rep.train = evaluate(_gather(probs, lab_masks), _gather(labels, lab_masks), spec.num_classes)
    return rep


def model_seed(seed: int, *tags) -> int:
    """Parameter-initialisation seed for a run, kept within 32 bits for readability."""
    return derive_seed(seed, "model", *tags) % (2**32)
