"""Patient records, the line-delimited record file, and batch stacking."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from popgraph.data.schema import FeatureSchema, SchemaError


class RecordError(ValueError):
    pass


@dataclass
class PatientRecord:
    """One patient. Unobserved continuous ts cells hold NaN until interpolated."""

    id: str
    d: np.ndarray  # (D,) int
    c: np.ndarray  # (C,) float
    t_d: np.ndarray  # (S_d, tau) int
    t_c: np.ndarray  # (S_c, tau) float
    obs_d: np.ndarray  # (S_d, tau) bool
    obs_c: np.ndarray  # (S_c, tau) bool
    labels: dict[str, int] = field(default_factory=dict)

    def copy(self) -> PatientRecord:
        return PatientRecord(
            self.id,
            self.d.copy(),
            self.c.copy(),
            self.t_d.copy(),
            self.t_c.copy(),
            self.obs_d.copy(),
            self.obs_c.copy(),
            dict(self.labels),
        )


_RECORD_KEYS = {"id", "d", "c", "t_d", "t_c", "labels"}


def _series(raw, n_rows: int, tau: int, rid: str, fieldname: str, discrete: bool, cards=None):
    if raw is None:
        raw = [[None] * tau for _ in range(n_rows)]
    if len(raw) != n_rows:
        raise RecordError(f"record {rid}: field {fieldname} has {len(raw)} rows, expected {n_rows}")
    vals = np.zeros((n_rows, tau), dtype=np.int64 if discrete else np.float64)
    obs = np.zeros((n_rows, tau), dtype=bool)
    for i, row in enumerate(raw):
        if len(row) != tau:
            raise RecordError(f"record {rid}: field {fieldname}[{i}] has length {len(row)}, expected {tau}")
        for t, v in enumerate(row):
            if v is None:
                if not discrete:
                    vals[i, t] = np.nan
                continue
            if discrete:
                if not float(v).is_integer() or not 0 <= int(v) < cards[i]:
                    raise RecordError(
                        f"record {rid}: field {fieldname}[{i}][{t}] value {v} outside [0, {cards[i]})"
                    )
                vals[i, t] = int(v)
            else:
                if not np.isfinite(v):
                    raise RecordError(f"record {rid}: field {fieldname}[{i}][{t}] is not finite")
                vals[i, t] = float(v)
            obs[i, t] = True
    return vals, obs


def record_from_dict(obj: dict, schema: FeatureSchema) -> PatientRecord:
    rid = obj.get("id")
    if not isinstance(rid, str) or not rid:
        raise RecordError(f"record without a string id: {str(obj)[:80]}")
    unknown = set(obj) - _RECORD_KEYS
    if unknown:
        raise RecordError(f"record {rid}: unknown fields {sorted(unknown)}")
    tau = schema.max_timesteps
    d_raw = obj.get("d", [])
    if len(d_raw) != len(schema.static_discrete):
        raise RecordError(f"record {rid}: field d has {len(d_raw)} entries, expected {len(schema.static_discrete)}")
    d = np.zeros(len(d_raw), dtype=np.int64)
    for i, ((name, card), v) in enumerate(zip(schema.static_discrete, d_raw)):
        if v is None or not float(v).is_integer() or not 0 <= int(v) < card:
            raise RecordError(f"record {rid}: field {name} value {v} outside [0, {card})")
        d[i] = int(v)
    c_raw = obj.get("c", [])
    if len(c_raw) != len(schema.static_continuous):
        raise RecordError(f"record {rid}: field c has {len(c_raw)} entries, expected {len(schema.static_continuous)}")
    for name, v in zip(schema.static_continuous, c_raw):
        if v is None or not np.isfinite(v):
            raise RecordError(f"record {rid}: field {name} must be a finite number, got {v}")
    c = np.asarray(c_raw, dtype=np.float64).reshape(-1)
    t_d, obs_d = _series(obj.get("t_d"), len(schema.ts_discrete), tau, rid, "t_d", True, schema.ts_cardinalities)
    t_c, obs_c = _series(obj.get("t_c"), len(schema.ts_continuous), tau, rid, "t_c", False)
    labels = {}
    for k, v in (obj.get("labels") or {}).items():
        if v is None:
            continue
        try:
            task = schema.task(k)
        except SchemaError as exc:
            raise RecordError(f"record {rid}: {exc}") from None
        if not float(v).is_integer() or not 0 <= int(v) < task.num_classes:
            raise RecordError(f"record {rid}: label {k}={v} outside [0, {task.num_classes})")
        labels[k] = int(v)
    return PatientRecord(rid, d, c, t_d, t_c, obs_d, obs_c, labels)


def record_to_dict(rec: PatientRecord) -> dict:
    def series(vals, obs, discrete):
        out = []
        for row_v, row_o in zip(vals, obs):
            out.append([(int(v) if discrete else float(v)) if o else None for v, o in zip(row_v, row_o)])
        return out

    return {
        "id": rec.id,
        "d": [int(v) for v in rec.d],
        "c": [float(v) for v in rec.c],
        "t_d": series(rec.t_d, rec.obs_d, True),
        "t_c": series(rec.t_c, rec.obs_c, False),
        "labels": {k: int(v) for k, v in sorted(rec.labels.items())},
    }


def load_records(path: str | Path, schema: FeatureSchema) -> list[PatientRecord]:
    out = []
    seen: set[str] = set()
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise RecordError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
            rec = record_from_dict(obj, schema)
            if rec.id in seen:
                raise RecordError(f"duplicate record id {rec.id!r} at line {lineno}")
            seen.add(rec.id)
            out.append(rec)
    return out


def save_records(records: list[PatientRecord], path: str | Path) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(record_to_dict(rec), separators=(",", ":")) + "\n")


def load_dataset(schema_path: str | Path, records_path: str | Path):
    from popgraph.data.schema import load_schema

    schema = load_schema(schema_path)
    return schema, load_records(records_path, schema)


@dataclass
class FeatureArrays:
    """Records of one sub-graph stacked along a leading node axis."""

    d: np.ndarray  # (n, D) int
    c: np.ndarray  # (n, C)
    t_d: np.ndarray  # (n, S_d, tau) int
    t_c: np.ndarray  # (n, S_c, tau)
    obs_d: np.ndarray  # (n, S_d, tau) bool
    obs_c: np.ndarray  # (n, S_c, tau) bool

    @property
    def n(self) -> int:
        return self.d.shape[0]

    def copy(self) -> FeatureArrays:
        return FeatureArrays(*(a.copy() for a in (self.d, self.c, self.t_d, self.t_c, self.obs_d, self.obs_c)))

    def take(self, idx) -> FeatureArrays:
        return FeatureArrays(*(a[idx] for a in (self.d, self.c, self.t_d, self.t_c, self.obs_d, self.obs_c)))


def stack_records(records: list[PatientRecord], schema: FeatureSchema) -> FeatureArrays:
    n, tau = len(records), schema.max_timesteps

    def st(attr, shape, dtype):
        if not records:
            return np.zeros((0,) + shape, dtype=dtype)
        return np.stack([getattr(r, attr) for r in records]).astype(dtype).reshape((n,) + shape)

    D, C = len(schema.static_discrete), len(schema.static_continuous)
    Sd, Sc = len(schema.ts_discrete), len(schema.ts_continuous)
    return FeatureArrays(
        st("d", (D,), np.int64),
        st("c", (C,), np.float64),
        st("t_d", (Sd, tau), np.int64),
        st("t_c", (Sc, tau), np.float64),
        st("obs_d", (Sd, tau), bool),
        st("obs_c", (Sc, tau), bool),
    )


def unstack_records(arrays: FeatureArrays, template: list[PatientRecord]) -> list[PatientRecord]:
    """Inverse of ``stack_records``: ids and labels come from ``template``."""
    return [
        PatientRecord(
            r.id,
            arrays.d[i].copy(),
            arrays.c[i].copy(),
            arrays.t_d[i].copy(),
            arrays.t_c[i].copy(),
            arrays.obs_d[i].copy(),
            arrays.obs_c[i].copy(),
            dict(r.labels),
        )
        for i, r in enumerate(template)
    ]
