from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from popgraph.data.records import PatientRecord
from popgraph.data.schema import FeatureSchema

NORM_FORMAT = "popgraph.normstats/1"


def _interp_row(values: np.ndarray, observed: np.ndarray) -> np.ndarray:
    idx = np.flatnonzero(observed)
    if idx.size == 0:
        return np.zeros_like(values, dtype=np.float64)
    # np.interp holds the end values constant outside [idx[0], idx[-1]]
    return np.interp(np.arange(values.size), idx, values[idx].astype(np.float64))


def _carry_row(values: np.ndarray, observed: np.ndarray) -> np.ndarray:
    idx = np.flatnonzero(observed)
    if idx.size == 0:
        return np.zeros_like(values)
    # nearest previous observation; leading gap takes the first observation
    pos = np.searchsorted(idx, np.arange(values.size), side="right") - 1
    return values[idx[np.clip(pos, 0, None)]]


def interpolate_missing(record: PatientRecord) -> PatientRecord:
    """Fill unobserved ts cells; observed flags are left untouched.

    Continuous series: linear interpolation between observed neighbours,
    constant extension of the nearest observation at the edges, zeros when
    nothing was observed. Discrete series carry the last observation forward
    (back-filling a leading gap) since interpolated categories are meaningless.
    """
    out = record.copy()
    for i in range(out.t_c.shape[0]):
        out.t_c[i] = _interp_row(record.t_c[i], record.obs_c[i])
    for i in range(out.t_d.shape[0]):
        out.t_d[i] = _carry_row(record.t_d[i], record.obs_d[i])
    return out


@dataclass
class NormStats:
    static_min: np.ndarray
    static_max: np.ndarray
    ts_min: np.ndarray
    ts_max: np.ndarray

    def to_dict(self) -> dict:
        return {
            "format": NORM_FORMAT,
            "static_min": self.static_min.tolist(),
            "static_max": self.static_max.tolist(),
            "ts_min": self.ts_min.tolist(),
            "ts_max": self.ts_max.tolist(),
        }

    @classmethod
    def from_dict(cls, obj: dict) -> NormStats:
        if obj.get("format") != NORM_FORMAT:
            raise ValueError(f"unsupported norm-stats format {obj.get('format')!r}")
        return cls(*(np.asarray(obj[k], dtype=np.float64) for k in ("static_min", "static_max", "ts_min", "ts_max")))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> NormStats:
        return cls.from_dict(json.loads(Path(path).read_text()))


def _scale(x, lo, hi):
    span = hi - lo
    safe = np.where(span > 0, span, 1.0)
    return np.where(span > 0, (x - lo) / safe, 0.0)


def _unscale(y, lo, hi):
    span = hi - lo
    return np.where(span > 0, y * span + lo, lo)


def fit_norm_stats(records: list[PatientRecord], schema: FeatureSchema) -> NormStats:
    C, Sc = len(schema.static_continuous), len(schema.ts_continuous)
    smin, smax = np.zeros(C), np.zeros(C)
    tmin, tmax = np.zeros(Sc), np.zeros(Sc)
    if records and C:
        allc = np.stack([r.c for r in records])
        smin, smax = allc.min(axis=0), allc.max(axis=0)
    for j in range(Sc):
        vals = [r.t_c[j][r.obs_c[j]] for r in records]
        vals = np.concatenate(vals) if vals else np.zeros(0)
        if vals.size:
            tmin[j], tmax[j] = vals.min(), vals.max()
    return NormStats(smin, smax, tmin, tmax)


def apply_norm(records: list[PatientRecord], stats: NormStats) -> list[PatientRecord]:
    """Min-max scale continuous features; out-of-range values are not clamped."""
    out = []
    for r in records:
        n = r.copy()
        n.c = _scale(r.c, stats.static_min, stats.static_max)
        n.t_c = _scale(r.t_c, stats.ts_min[:, None], stats.ts_max[:, None])
        out.append(n)
    return out


def invert_norm(records: list[PatientRecord], stats: NormStats) -> list[PatientRecord]:
    out = []
    for r in records:
        n = r.copy()
        n.c = _unscale(r.c, stats.static_min, stats.static_max)
        n.t_c = _unscale(r.t_c, stats.ts_min[:, None], stats.ts_max[:, None])
        out.append(n)
    return out


def normalize_continuous(
    records: list[PatientRecord], schema: FeatureSchema, train_ids
) -> tuple[list[PatientRecord], NormStats]:
    """Scale every record with min/max fitted on the ``train_ids`` records only."""
    train_ids = set(train_ids)
    stats = fit_norm_stats([r for r in records if r.id in train_ids], schema)
    return apply_norm(records, stats), stats
