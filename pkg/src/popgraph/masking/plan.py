"""Mask plans for the self-supervised tasks.

The batch builders work on stacked ``FeatureArrays`` of one sub-graph. The
per-record functions (``mask_static`` and friends) are thin wrappers used for
inspection and tests.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from popgraph.data.records import FeatureArrays, PatientRecord, stack_records, unstack_records
from popgraph.data.schema import FeatureSchema
from popgraph.seeding import rng_for

TASKS = ("SFM", "TFM", "BM", "TP", "PM")
DEFAULT_MT_POOL = ("TFM", "BM", "TP", "PM")


class MaskingError(ValueError):
    pass


@dataclass(frozen=True)
class MaskConfig:
    sfm_ratio: float = 0.3
    tfm_ratio: float = 0.3
    bm_ratio: float = 1.0
    block_hours: int = 6
    pm_ratio: float = 0.1
    mt_pool: tuple[str, ...] = DEFAULT_MT_POOL

    def to_dict(self) -> dict:
        return {
            "sfm_ratio": self.sfm_ratio,
            "tfm_ratio": self.tfm_ratio,
            "bm_ratio": self.bm_ratio,
            "block_hours": self.block_hours,
            "pm_ratio": self.pm_ratio,
            "mt_pool": list(self.mt_pool),
        }

    @classmethod
    def from_dict(cls, obj: dict) -> MaskConfig:
        obj = dict(obj)
        if "mt_pool" in obj:
            obj["mt_pool"] = tuple(obj["mt_pool"])
        return cls(**obj)


@dataclass
class MaskPlan:
    """Which cells of one batch are hidden and what the loss may look at.

    ``keep_*`` arrays are False where masked. ``valid_*`` marks masked cells
    that were observed and belong to a node whose loss counts; static cells
    are always observed.
    """

    task: str
    keep_d: np.ndarray
    keep_c: np.ndarray
    keep_td: np.ndarray
    keep_tc: np.ndarray
    valid_d: np.ndarray
    valid_c: np.ndarray
    valid_td: np.ndarray
    valid_tc: np.ndarray
    targets: FeatureArrays
    ratio: float | None = None
    block_hours: int | None = None
    treatment_labels: np.ndarray | None = None  # (n, T) for TP
    label_valid: np.ndarray | None = None  # (n, T) loss-node mask for TP

    @property
    def n(self) -> int:
        return self.keep_d.shape[0]

    def masked(self, group: str) -> np.ndarray:
        return ~getattr(self, f"keep_{group}")

    def valid_count(self) -> int:
        total = int(self.valid_d.sum() + self.valid_c.sum() + self.valid_td.sum() + self.valid_tc.sum())
        if self.label_valid is not None:
            total += int(self.label_valid.sum())
        return total


def half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def masked_count(ratio: float, total: int) -> int:
    """round(ratio * total), half away from zero, never below one."""
    return max(1, half_up(ratio * total)) if total else 0


def _check_ratio(name: str, ratio: float, allow_one: bool) -> None:
    ok = 0.0 < ratio <= 1.0 if allow_one else 0.0 < ratio < 1.0
    if not ok:
        bound = "(0, 1]" if allow_one else "(0, 1)"
        raise MaskingError(f"{name} ratio {ratio} outside {bound}")


def _choose(rng: np.random.Generator, rows: int, pool: int, k: int) -> np.ndarray:
    """Boolean (rows, pool) with exactly k True per row, uniformly placed."""
    out = np.zeros((rows, pool), dtype=bool)
    if k == 0 or pool == 0:
        return out
    pick = np.argsort(rng.random((rows, pool)), axis=1)[:, :k]
    np.put_along_axis(out, pick, True, axis=1)
    return out


def _full_keep(a: FeatureArrays):
    return (
        np.ones(a.d.shape, dtype=bool),
        np.ones(a.c.shape, dtype=bool),
        np.ones(a.t_d.shape, dtype=bool),
        np.ones(a.t_c.shape, dtype=bool),
    )


def _finish(task, a: FeatureArrays, keep, loss_nodes, **extra) -> MaskPlan:
    kd, kc, ktd, ktc = keep
    ln = np.ones(a.n, dtype=bool) if loss_nodes is None else np.asarray(loss_nodes, dtype=bool)
    return MaskPlan(
        task,
        kd,
        kc,
        ktd,
        ktc,
        valid_d=~kd & ln[:, None],
        valid_c=~kc & ln[:, None],
        valid_td=~ktd & a.obs_d & ln[:, None, None],
        valid_tc=~ktc & a.obs_c & ln[:, None, None],
        targets=a.copy(),
        **extra,
    )


def _ts_split(sel: np.ndarray, sd: int):
    """Split a selection over [discrete | continuous] ts features."""
    return sel[:, :sd], sel[:, sd:]


# ------------------------------------------------------------------ batch builders


def plan_static(a: FeatureArrays, schema: FeatureSchema, ratio: float, rng, loss_nodes=None) -> MaskPlan:
    _check_ratio("SFM", ratio, allow_one=False)
    names = schema.maskable_static_names()
    if not names:
        raise MaskingError("SFM needs maskable static features")
    sd = schema.static_discrete_names
    cols = [("d", sd.index(n)) if n in sd else ("c", schema.static_continuous.index(n)) for n in names]
    sel = _choose(rng, a.n, len(cols), masked_count(ratio, len(cols)))
    kd, kc, ktd, ktc = _full_keep(a)
    for j, (grp, col) in enumerate(cols):
        (kd if grp == "d" else kc)[:, col] &= ~sel[:, j]
    return _finish("SFM", a, (kd, kc, ktd, ktc), loss_nodes, ratio=ratio)


def _require_ts(task: str, schema: FeatureSchema) -> None:
    if not schema.has_timeseries:
        raise MaskingError(f"{task} needs time-series features")


def plan_ts_features(a: FeatureArrays, schema: FeatureSchema, ratio: float, rng, loss_nodes=None) -> MaskPlan:
    _require_ts("TFM", schema)
    _check_ratio("TFM", ratio, allow_one=True)
    sd, total = len(schema.ts_discrete), schema.num_ts
    sel_d, sel_c = _ts_split(_choose(rng, a.n, total, masked_count(ratio, total)), sd)
    kd, kc, ktd, ktc = _full_keep(a)
    ktd &= ~sel_d[:, :, None]
    ktc &= ~sel_c[:, :, None]
    return _finish("TFM", a, (kd, kc, ktd, ktc), loss_nodes, ratio=ratio)


def plan_blocks(a: FeatureArrays, schema: FeatureSchema, ratio: float, hours: int, rng, loss_nodes=None) -> MaskPlan:
    _require_ts("BM", schema)
    _check_ratio("BM", ratio, allow_one=True)
    if hours < 1:
        raise MaskingError(f"block length must be >= 1, got {hours}")
    sd, total, tau = len(schema.ts_discrete), schema.num_ts, schema.max_timesteps
    width = min(hours, tau)
    sel = _choose(rng, a.n, total, masked_count(ratio, total))
    start = rng.integers(0, tau - width + 1, size=(a.n, total))
    steps = np.arange(tau)
    block = (steps >= start[..., None]) & (steps < start[..., None] + width) & sel[..., None]
    kd, kc, ktd, ktc = _full_keep(a)
    ktd &= ~block[:, :sd]
    ktc &= ~block[:, sd:]
    return _finish("BM", a, (kd, kc, ktd, ktc), loss_nodes, ratio=ratio, block_hours=width)


def treatment_labels(a: FeatureArrays, schema: FeatureSchema) -> np.ndarray:
    """(n, T) indicator that a treatment was active in any hour."""
    idx = schema.treatment_indices()
    return (a.t_d[:, idx, :] == 1).any(axis=-1).astype(np.int64)


def plan_treatments(a: FeatureArrays, schema: FeatureSchema, loss_nodes=None) -> MaskPlan:
    idx = schema.treatment_indices()
    if not idx:
        raise MaskingError("TP needs designated treatment features")
    kd, kc, ktd, ktc = _full_keep(a)
    ktd[:, idx, :] = False
    plan = _finish("TP", a, (kd, kc, ktd, ktc), loss_nodes)
    # the reconstruction targets are replaced by the per-treatment labels
    plan.valid_td[:] = False
    ln = np.ones(a.n, dtype=bool) if loss_nodes is None else np.asarray(loss_nodes, dtype=bool)
    plan.treatment_labels = treatment_labels(a, schema)
    plan.label_valid = np.repeat(ln[:, None], len(idx), axis=1)
    return plan


def plan_patients(a: FeatureArrays, schema: FeatureSchema, ratio: float, rng, loss_nodes=None) -> MaskPlan:
    _require_ts("PM", schema)
    _check_ratio("PM", ratio, allow_one=False)
    sel = _choose(rng, 1, a.n, masked_count(ratio, a.n))[0]
    kd, kc, ktd, ktc = _full_keep(a)
    ktd[sel] = False
    ktc[sel] = False
    return _finish("PM", a, (kd, kc, ktd, ktc), loss_nodes, ratio=ratio)


def check_task(task: str, schema: FeatureSchema) -> None:
    """Raise if ``task`` cannot run on ``schema``."""
    if task == "MT":
        return
    if task not in TASKS:
        raise MaskingError(f"unknown pre-training task {task!r}; choose from {TASKS + ('MT',)}")
    if task == "SFM" and not schema.maskable_static_names():
        raise MaskingError("SFM needs maskable static features")
    if task in ("TFM", "BM", "PM") and not schema.has_timeseries:
        raise MaskingError(f"{task} needs time-series features")
    if task == "TP" and not schema.treatment_features:
        raise MaskingError("TP needs designated treatment features")


def build_plan(
    task: str,
    a: FeatureArrays,
    schema: FeatureSchema,
    cfg: MaskConfig,
    rng: np.random.Generator,
    loss_nodes=None,
) -> MaskPlan:
    if task == "SFM":
        return plan_static(a, schema, cfg.sfm_ratio, rng, loss_nodes)
    if task == "TFM":
        return plan_ts_features(a, schema, cfg.tfm_ratio, rng, loss_nodes)
    if task == "BM":
        return plan_blocks(a, schema, cfg.bm_ratio, cfg.block_hours, rng, loss_nodes)
    if task == "TP":
        return plan_treatments(a, schema, loss_nodes)
    if task == "PM":
        return plan_patients(a, schema, cfg.pm_ratio, rng, loss_nodes)
    raise MaskingError(f"unknown pre-training task {task!r}")


def sample_multitask(pool, seed: int, batch_index: int) -> str:
    """Uniform task draw, fixed by (seed, batch_index)."""
    pool = list(pool)
    if not pool:
        raise MaskingError("multi-task pool is empty")
    return pool[int(rng_for(seed, "multitask", batch_index).integers(len(pool)))]


# ------------------------------------------------------------------ applying a plan


def apply_plan(a: FeatureArrays, plan: MaskPlan, schema: FeatureSchema) -> FeatureArrays:
    """Masked copy: continuous cells -> 0, discrete cells -> mask token (= cardinality)."""
    out = a.copy()
    tok_s = np.asarray(schema.static_cardinalities, dtype=np.int64)
    tok_t = np.asarray(schema.ts_cardinalities, dtype=np.int64)
    out.d = np.where(plan.keep_d, a.d, tok_s[None, :])
    out.c = np.where(plan.keep_c, a.c, 0.0)
    out.t_d = np.where(plan.keep_td, a.t_d, tok_t[None, :, None])
    out.t_c = np.where(plan.keep_tc, a.t_c, 0.0)
    return out


def masked_inputs(a: FeatureArrays, plan: MaskPlan, schema: FeatureSchema):
    """Model inputs for a masked batch, with the ts indicator channels set."""
    from popgraph.model.network import ModelInputs

    m = apply_plan(a, plan, schema)
    return ModelInputs.from_arrays(m, ind_d=~plan.keep_td, ind_c=~plan.keep_tc)


# ------------------------------------------------------------------ per-record wrappers


def _single(record: PatientRecord, schema: FeatureSchema, build) -> tuple[PatientRecord, MaskPlan]:
    a = stack_records([record], schema)
    plan = build(a)
    return unstack_records(apply_plan(a, plan, schema), [record])[0], plan


def mask_static(record, schema, ratio, seed):
    return _single(record, schema, lambda a: plan_static(a, schema, ratio, np.random.default_rng(seed)))


def mask_ts_features(record, schema, ratio, seed):
    return _single(record, schema, lambda a: plan_ts_features(a, schema, ratio, np.random.default_rng(seed)))


def mask_blocks(record, schema, ratio, hours, seed):
    return _single(record, schema, lambda a: plan_blocks(a, schema, ratio, hours, np.random.default_rng(seed)))


def derive_treatment_task(record, schema):
    masked, plan = _single(record, schema, lambda a: plan_treatments(a, schema))
    return masked, plan.treatment_labels[0]


def mask_patients(records, schema, ratio, seed):
    a = stack_records(records, schema)
    plan = plan_patients(a, schema, ratio, np.random.default_rng(seed))
    return unstack_records(apply_plan(a, plan, schema), records), plan


# ------------------------------------------------------------------ dump


def plan_to_dict(plan: MaskPlan, schema: FeatureSchema, node_ids=None) -> dict:
    """Structured summary of a plan for inspection."""
    ids = list(node_ids) if node_ids is not None else [str(i) for i in range(plan.n)]
    nodes = []
    for i, nid in enumerate(ids):
        entry = {
            "id": nid,
            "static": [schema.static_discrete_names[j] for j in np.flatnonzero(~plan.keep_d[i])]
            + [schema.static_continuous[j] for j in np.flatnonzero(~plan.keep_c[i])],
            "series": {},
            "valid_targets": int(
                plan.valid_d[i].sum() + plan.valid_c[i].sum() + plan.valid_td[i].sum() + plan.valid_tc[i].sum()
            ),
        }
        for names, keep in ((schema.ts_discrete_names, plan.keep_td), (schema.ts_continuous, plan.keep_tc)):
            for j, name in enumerate(names):
                steps = np.flatnonzero(~keep[i, j])
                if steps.size:
                    entry["series"][name] = steps.tolist()
        if plan.treatment_labels is not None:
            entry["treatment_labels"] = plan.treatment_labels[i].tolist()
        nodes.append(entry)
    return {
        "task": plan.task,
        "ratio": plan.ratio,
        "block_hours": plan.block_hours,
        "mask_tokens": {
            "static": dict(schema.static_discrete),
            "series": dict(schema.ts_discrete),
        },
        "nodes": nodes,
    }
