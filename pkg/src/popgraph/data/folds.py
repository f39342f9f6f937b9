from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from popgraph.data.records import PatientRecord

FOLDS_FORMAT = "popgraph.folds/1"
LABEL_RATIOS = (0.01, 0.05, 0.10, 0.50, 1.0)


@dataclass
class FoldPlan:
    """One cross-validation rotation.

    ``labeled`` maps each label ratio to its labelled training ids; the
    subsets are nested, so a larger ratio only adds ids.
    """

    fold: int
    fold_count: int
    train_ids: list[str]
    val_ids: list[str]
    test_ids: list[str]
    labeled: dict[float, list[str]]
    seed: int
    warnings: list[str] = field(default_factory=list)

    def labeled_train_ids(self, ratio: float) -> list[str]:
        key = _ratio_key(ratio)
        try:
            return self.labeled[key]
        except KeyError:
            raise KeyError(f"label ratio {ratio} not prepared; have {sorted(self.labeled)}") from None

    def to_dict(self) -> dict:
        return {
            "fold": self.fold,
            "fold_count": self.fold_count,
            "seed": self.seed,
            "train_ids": self.train_ids,
            "val_ids": self.val_ids,
            "test_ids": self.test_ids,
            "labeled": {f"{k:g}": v for k, v in sorted(self.labeled.items())},
            "warnings": self.warnings,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> FoldPlan:
        return cls(
            fold=int(obj["fold"]),
            fold_count=int(obj["fold_count"]),
            train_ids=list(obj["train_ids"]),
            val_ids=list(obj["val_ids"]),
            test_ids=list(obj["test_ids"]),
            labeled={_ratio_key(float(k)): list(v) for k, v in obj["labeled"].items()},
            seed=int(obj["seed"]),
            warnings=list(obj.get("warnings", [])),
        )


def _ratio_key(r: float) -> float:
    for allowed in LABEL_RATIOS:
        if abs(r - allowed) < 1e-9:
            return allowed
    raise ValueError(f"label ratio {r} not in {LABEL_RATIOS}")


def _label_of(rec: PatientRecord, task: str | None) -> int:
    if task is None:
        return 0
    return rec.labels.get(task, -1)


def _labeled_order(ids: list[str], labels: dict[str, int], rng: np.random.Generator) -> list[str]:
    """Order ids so that every prefix is approximately class-stratified.

    Each class's members are shuffled and given keys (i + 0.5) / n_class;
    the first member of every class is promoted to the front so any prefix
    of length >= number of classes contains each class at least once.
    """
    by_class: dict[int, list[str]] = {}
    for i in ids:
        by_class.setdefault(labels[i], []).append(i)
    keyed = []
    heads = []
    for cls in sorted(by_class):
        members = list(by_class[cls])
        rng.shuffle(members)
        k = len(members)
        for pos, m in enumerate(members):
            key = (pos + 0.5) / k
            (heads if pos == 0 and cls >= 0 else keyed).append((key, cls, m))
    heads.sort()
    keyed.sort()
    return [m for _, _, m in heads] + [m for _, _, m in keyed]


def make_folds(
    records: list[PatientRecord],
    fold_count: int,
    ratios=LABEL_RATIOS,
    seed: int = 0,
    task: str | None = None,
) -> list[FoldPlan]:
    """Rotation cross-validation with nested label-ratio subsets.

    Records are dealt into ``fold_count`` buckets (stratified by ``task``
    labels where present). Fold f tests on bucket f, validates on bucket
    f+1 and trains on the rest.
    """
    if fold_count < 2:
        raise ValueError("fold_count must be >= 2")
    ratios = sorted({_ratio_key(r) for r in ratios})
    rng = np.random.default_rng(seed)
    labels = {r.id: _label_of(r, task) for r in records}
    warnings = []
    by_class: dict[int, list[str]] = {}
    for r in records:
        by_class.setdefault(labels[r.id], []).append(r.id)
    buckets: list[list[str]] = [[] for _ in range(fold_count)]
    offset = 0
    for cls in sorted(by_class):
        members = by_class[cls]
        if task is not None and cls >= 0 and len(members) < fold_count:
            warnings.append(f"class {cls} of task {task} has {len(members)} members for {fold_count} folds")
        perm = rng.permutation(len(members))
        for j, p in enumerate(perm):
            buckets[(offset + j) % fold_count].append(members[p])
        offset = (offset + len(members)) % fold_count

    plans = []
    for f in range(fold_count):
        v = (f + 1) % fold_count
        test = sorted(buckets[f])
        val = sorted(buckets[v]) if fold_count > 2 else []
        held = set(test) | set(val)
        train = sorted(i for i in labels if i not in held)
        frng = np.random.default_rng([seed, f])
        labeled_pool = [i for i in train if labels[i] >= 0] if task is not None else train
        order = _labeled_order(labeled_pool, labels, frng)
        labeled = {}
        for r in ratios:
            k = int(round(r * len(train)))
            k = max(k, 1) if train else 0
            labeled[r] = sorted(order[: min(k, len(order))])
        plans.append(FoldPlan(f, fold_count, train, val, test, labeled, seed, list(warnings)))
    return plans


def save_folds(plans: list[FoldPlan], path: str | Path) -> None:
    obj = {"format": FOLDS_FORMAT, "folds": [p.to_dict() for p in plans]}
    Path(path).write_text(json.dumps(obj, indent=2) + "\n")


def load_folds(path: str | Path) -> list[FoldPlan]:
    obj = json.loads(Path(path).read_text())
    if obj.get("format") != FOLDS_FORMAT:
        raise ValueError(f"unsupported folds format {obj.get('format')!r}")
    return [FoldPlan.from_dict(p) for p in obj["folds"]]
