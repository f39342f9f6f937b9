"""Decoder layouts, losses and metrics for the pre-training tasks."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from popgraph.core import tensor as T
from popgraph.core.tensor import Tensor
from popgraph.data.schema import FeatureSchema
from popgraph.masking.plan import MaskingError, MaskPlan


class DegenerateBatch(MaskingError):
    """No masked-and-observed target anywhere in the batch."""


def head_name(task: str) -> str:
    return f"pt.{task}"


def head_dim(task: str, schema: FeatureSchema) -> int:
    tau = schema.max_timesteps
    if task == "SFM":
        return len(schema.static_continuous) + sum(schema.static_cardinalities)
    if task in ("TFM", "BM", "PM"):
        return tau * (len(schema.ts_continuous) + sum(schema.ts_cardinalities))
    if task == "TP":
        return len(schema.treatment_features)
    raise MaskingError(f"unknown pre-training task {task!r}")


def split_outputs(task: str, out: Tensor, schema: FeatureSchema) -> dict:
    """Cut a head's flat output into per-group predictions.

    Keys: ``c`` (n, C), ``d`` list of (n, K_j), ``tc`` (n, S_c, tau),
    ``td`` list of (n, tau, K_j), ``tp`` (n, T).
    """
    n, tau = out.shape[0], schema.max_timesteps
    if out.shape[1] != head_dim(task, schema):
        raise ValueError(f"{task} head width {out.shape[1]} != {head_dim(task, schema)}")
    preds: dict = {}
    if task == "TP":
        preds["tp"] = out
        return preds
    pos = 0
    if task == "SFM":
        C = len(schema.static_continuous)
        if C:
            preds["c"] = T.index(out, (slice(None), slice(0, C)))
        pos = C
        preds["d"] = []
        for card in schema.static_cardinalities:
            preds["d"].append(T.index(out, (slice(None), slice(pos, pos + card))))
            pos += card
        return preds
    Sc = len(schema.ts_continuous)
    if Sc:
        preds["tc"] = T.reshape(T.index(out, (slice(None), slice(0, Sc * tau))), (n, Sc, tau))
    pos = Sc * tau
    preds["td"] = []
    for card in schema.ts_cardinalities:
        block = T.index(out, (slice(None), slice(pos, pos + tau * card)))
        preds["td"].append(T.reshape(block, (n, tau, card)))
        pos += tau * card
    return preds


@dataclass
class LossReport:
    task: str
    total: float
    mse: float | None = None
    ce: float | None = None
    bce: float | None = None
    n_mse: int = 0
    n_ce: int = 0
    n_bce: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def pretrain_loss(preds: dict, plan: MaskPlan) -> tuple[Tensor, LossReport]:
    """Unit-weighted sum of MSE, CE and BCE restricted to valid targets."""
    tg = plan.targets
    parts: list[Tensor] = []
    rep = LossReport(plan.task, 0.0)

    cont_p, cont_t, cont_w = [], [], []
    if "c" in preds and plan.valid_c.any():
        cont_p.append(T.reshape(preds["c"], (-1,)))
        cont_t.append(tg.c.reshape(-1))
        cont_w.append(plan.valid_c.reshape(-1))
    if "tc" in preds and plan.valid_tc.any():
        cont_p.append(T.reshape(preds["tc"], (-1,)))
        cont_t.append(tg.t_c.reshape(-1))
        cont_w.append(plan.valid_tc.reshape(-1))
    if cont_p:
        w = np.concatenate(cont_w).astype(np.float64)
        t = np.where(w > 0, np.nan_to_num(np.concatenate(cont_t)), 0.0)
        p = cont_p[0] if len(cont_p) == 1 else T.concat(cont_p, axis=0)
        mse = T.masked_mse(p, t, w)
        parts.append(mse)
        rep.mse, rep.n_mse = float(mse.data), int(w.sum())

    ce_terms, ce_count = [], 0
    for j, logits in enumerate(preds.get("d", [])):
        w = plan.valid_d[:, j].astype(np.float64)
        if w.any():
            ce_terms.append(T.mul(T.cross_entropy(logits, tg.d[:, j], w), w.sum()))
            ce_count += int(w.sum())
    for j, logits in enumerate(preds.get("td", [])):
        w = plan.valid_td[:, j, :].astype(np.float64)
        if w.any():
            ce_terms.append(T.mul(T.cross_entropy(logits, tg.t_d[:, j, :], w), w.sum()))
            ce_count += int(w.sum())
    if ce_terms:
        acc = ce_terms[0]
        for term in ce_terms[1:]:
            acc = T.add(acc, term)
        ce = T.mul(acc, 1.0 / ce_count)
        parts.append(ce)
        rep.ce, rep.n_ce = float(ce.data), ce_count

    if "tp" in preds and plan.label_valid is not None and plan.label_valid.any():
        w = plan.label_valid.astype(np.float64)
        bce = T.bce_with_logits(preds["tp"], plan.treatment_labels, w)
        parts.append(bce)
        rep.bce, rep.n_bce = float(bce.data), int(w.sum())

    if not parts:
        raise DegenerateBatch(f"{plan.task}: no masked and observed targets in batch")
    loss = parts[0]
    for p in parts[1:]:
        loss = T.add(loss, p)
    rep.total = float(loss.data)
    return loss, rep


@dataclass
class ImputationTally:
    """Running sums so that metrics can be pooled over several batches."""

    sq_err: float = 0.0
    n_cont: int = 0
    tp: int = 0
    fp: int = 0
    fn: int = 0
    n_bin: int = 0
    margin_hits: int = 0
    n_margin: int = 0

    def add(self, other: ImputationTally) -> None:
        for k in asdict(self):
            setattr(self, k, getattr(self, k) + getattr(other, k))

    def metrics(self) -> dict:
        out = {"rmse": None, "f1": None, "margin_acc": None}
        if self.n_cont:
            out["rmse"] = float(np.sqrt(self.sq_err / self.n_cont))
        if self.n_bin:
            denom = 2 * self.tp + self.fp + self.fn
            out["f1"] = 1.0 if denom == 0 else 2.0 * self.tp / denom
        if self.n_margin:
            out["margin_acc"] = self.margin_hits / self.n_margin
        return out


def _binary_counts(tally: ImputationTally, pred: np.ndarray, truth: np.ndarray) -> None:
    pred, truth = pred.astype(bool), truth.astype(bool)
    tally.tp += int((pred & truth).sum())
    tally.fp += int((pred & ~truth).sum())
    tally.fn += int((~pred & truth).sum())
    tally.n_bin += int(pred.size)


def tally_predictions(preds: dict, plan: MaskPlan, schema: FeatureSchema) -> ImputationTally:
    """Accumulate RMSE, treatment F1 and margin-accuracy counts over valid targets."""
    tg, t = plan.targets, ImputationTally()
    val = {k: (v.data if isinstance(v, Tensor) else v) for k, v in preds.items() if k not in ("d", "td")}
    if "c" in val and plan.valid_c.any():
        diff = (val["c"] - tg.c)[plan.valid_c]
        t.sq_err += float((diff * diff).sum())
        t.n_cont += int(diff.size)
    if "tc" in val and plan.valid_tc.any():
        diff = (val["tc"] - tg.t_c)[plan.valid_tc]
        t.sq_err += float((diff * diff).sum())
        t.n_cont += int(diff.size)
    for j, logits in enumerate(preds.get("d", [])):
        name = schema.static_discrete_names[j]
        v = plan.valid_d[:, j]
        if name in schema.margins and v.any():
            guess = np.asarray(getattr(logits, "data", logits)).argmax(axis=-1)
            hit = np.abs(guess[v] - tg.d[v, j]) <= schema.margins[name]
            t.margin_hits += int(hit.sum())
            t.n_margin += int(v.sum())
    treat = set(schema.treatment_indices())
    for j, logits in enumerate(preds.get("td", [])):
        v = plan.valid_td[:, j, :]
        if j in treat and v.any():
            guess = np.asarray(getattr(logits, "data", logits)).argmax(axis=-1)
            _binary_counts(t, guess[v] == 1, tg.t_d[:, j, :][v] == 1)
    if "tp" in val and plan.label_valid is not None:
        v = plan.label_valid
        _binary_counts(t, val["tp"][v] > 0, plan.treatment_labels[v] == 1)
    return t


def pretrain_metrics(preds: dict, plan: MaskPlan, schema: FeatureSchema) -> dict:
    return tally_predictions(preds, plan, schema).metrics()


def selection_score(metrics: dict) -> float | None:
    """Mean of (1 - RMSE, F1, margin-accuracy) over the metrics present."""
    vals = []
    if metrics.get("rmse") is not None:
        vals.append(1.0 - metrics["rmse"])
    for key in ("f1", "margin_acc"):
        if metrics.get(key) is not None:
            vals.append(metrics[key])
    return float(np.mean(vals)) if vals else None

