"""Per-feature-type patient similarities and their combination.

Pairwise functions take two records; the ``*_matrix`` variants compute the
same quantities for every pair of a group at once and are what the graph
builder uses.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from popgraph.data.records import PatientRecord
from popgraph.data.schema import FeatureSchema

AGE_TOLERANCE = 2


@dataclass(frozen=True)
class GraphFeatureLayout:
    """Which schema columns feed each similarity component."""

    dem: dict[str, int] | None  # role -> column in d
    cog_cols: tuple[int, ...]
    cog_max: tuple[int, ...]
    img_cols: tuple[int, ...]
    meas_cols: tuple[int, ...]

    @classmethod
    def from_schema(cls, schema: FeatureSchema) -> GraphFeatureLayout:
        gf = set(schema.graph_features)
        sd = schema.static_discrete_names
        role_cols = {}
        for role in ("apoe4", "gender", "age"):
            name = schema.roles.get(role)
            if name is not None and name in gf:
                role_cols[role] = sd.index(name)
        dem = role_cols if len(role_cols) == 3 else None
        role_names = set(schema.roles.values()) if dem is not None else set()
        cog = [i for i, n in enumerate(sd) if n in gf and n not in role_names]
        if dem is None:
            # partial demographics fall back to ordinal comparison
            cog = [i for i, n in enumerate(sd) if n in gf]
        cards = schema.static_cardinalities
        return cls(
            dem=dem,
            cog_cols=tuple(cog),
            cog_max=tuple(cards[i] - 1 for i in cog),
            img_cols=tuple(i for i, n in enumerate(schema.static_continuous) if n in gf),
            meas_cols=tuple(i for i, n in enumerate(schema.ts_continuous) if n in gf),
        )


@dataclass
class SimilarityBreakdown:
    s_dem: float | None = None
    s_cog: float | None = None
    s_img: float | None = None
    sim_meas: float | None = None

    def present(self) -> list[str]:
        return [k for k in ("s_dem", "s_cog", "s_img", "sim_meas") if getattr(self, k) is not None]


# ------------------------------------------------------------------ descriptors


def feature_descriptors(values: np.ndarray, observed: np.ndarray) -> np.ndarray:
    """(mean, std, min, max) of the observed entries of each row; zeros if none.

    ``values``/``observed`` have shape (..., tau); result has shape (..., 4).
    """
    obs = observed.astype(bool)
    cnt = obs.sum(axis=-1)
    safe = np.where(obs, values, 0.0)
    # sums run sequentially over time so results do not depend on numpy's
    # pairwise-summation blocking
    total = np.zeros(values.shape[:-1])
    for t in range(values.shape[-1]):
        total = total + safe[..., t]
    mean = total / np.maximum(cnt, 1)
    dev = np.where(obs, values - mean[..., None], 0.0)
    sq = np.zeros(values.shape[:-1])
    for t in range(values.shape[-1]):
        sq = sq + dev[..., t] * dev[..., t]
    var = sq / np.maximum(cnt, 1)
    mn = np.where(obs, values, np.inf).min(axis=-1)
    mx = np.where(obs, values, -np.inf).max(axis=-1)
    desc = np.stack([mean, np.sqrt(var), mn, mx], axis=-1)
    return np.where((cnt > 0)[..., None], desc, 0.0)


def record_descriptors(rec: PatientRecord, layout: GraphFeatureLayout) -> np.ndarray:
    cols = list(layout.meas_cols)
    return feature_descriptors(rec.t_c[cols], rec.obs_c[cols])


# ------------------------------------------------------------------ pairwise


def sim_measurements(a: PatientRecord, b: PatientRecord, schema: FeatureSchema) -> float:
    """Mean over graph measurement features of the L2 distance of descriptors."""
    layout = GraphFeatureLayout.from_schema(schema)
    if not layout.meas_cols:
        raise ValueError("schema designates no time-series graph features")
    da, db = record_descriptors(a, layout), record_descriptors(b, layout)
    diff = da - db
    total = 0.0
    for f in range(diff.shape[0]):
        total += np.sqrt((diff[f] * diff[f]).sum())
    return float(total / diff.shape[0])


def sim_demographics(a: PatientRecord, b: PatientRecord, schema: FeatureSchema) -> float:
    layout = GraphFeatureLayout.from_schema(schema)
    if layout.dem is None:
        raise ValueError("schema must designate apoe4, gender and age roles among graph features")
    col = layout.dem
    score = float(a.d[col["apoe4"]] == b.d[col["apoe4"]])
    score += float(a.d[col["gender"]] == b.d[col["gender"]])
    score += float(abs(int(a.d[col["age"]]) - int(b.d[col["age"]])) <= AGE_TOLERANCE)
    return score / 3.0


def sim_cognitive(a: PatientRecord, b: PatientRecord, schema: FeatureSchema) -> float:
    """Summed absolute ordinal differences over the summed feature maxima."""
    layout = GraphFeatureLayout.from_schema(schema)
    cols = list(layout.cog_cols)
    if not cols:
        raise ValueError("schema designates no ordinal graph features")
    diff = 0.0
    for i in cols:
        diff += abs(float(a.d[i]) - float(b.d[i]))
    return float(diff / sum(layout.cog_max))


def sim_imaging(a: PatientRecord, b: PatientRecord, schema: FeatureSchema) -> float:
    layout = GraphFeatureLayout.from_schema(schema)
    cols = list(layout.img_cols)
    if not cols:
        raise ValueError("schema designates no continuous static graph features")
    total = 0.0
    for i in cols:
        total += abs(a.c[i] - b.c[i])
    return _sigmoid(float(total))


def similarity_breakdown(a: PatientRecord, b: PatientRecord, schema: FeatureSchema) -> SimilarityBreakdown:
    layout = GraphFeatureLayout.from_schema(schema)
    out = SimilarityBreakdown()
    if layout.dem is not None:
        out.s_dem = sim_demographics(a, b, schema)
    if layout.cog_cols:
        out.s_cog = sim_cognitive(a, b, schema)
    if layout.img_cols:
        out.s_img = sim_imaging(a, b, schema)
    if layout.meas_cols:
        out.sim_meas = sim_measurements(a, b, schema)
    if not out.present():
        raise ValueError("schema designates no graph features")
    return out


def combined_similarity(b: SimilarityBreakdown, cog_max: float | None = None, meas_max: float | None = None) -> float:
    """Average of the components, all oriented so that larger = more similar.

    ``cog_max`` and ``meas_max`` are the largest pairwise values of those
    distances within the group; a zero or missing maximum leaves the raw
    distance in place (identity still maps to 1).
    """
    parts: list[float] = []
    if b.s_dem is not None:
        parts.append(b.s_dem)
    if b.s_cog is not None:
        parts.append(1.0 - (b.s_cog / cog_max if cog_max else b.s_cog))
    if b.s_img is not None:
        parts.append(1.0 - b.s_img)
    if b.sim_meas is not None:
        parts.append(1.0 - (b.sim_meas / meas_max if meas_max else b.sim_meas))
    if not parts:
        raise ValueError("empty similarity breakdown")
    total = 0.0
    for p in parts:
        total += p
    return float(total / len(parts))


# ------------------------------------------------------------------ matrices


def _sigmoid(x: float) -> float:
    # libm exp on both the pairwise and matrix paths keeps them bit-identical
    return 1.0 / (1.0 + math.exp(-x))


def _pairwise_abs_sum(x: np.ndarray) -> np.ndarray:
    """sum_f |x[i, f] - x[j, f]| for all i, j."""
    out = np.zeros((x.shape[0], x.shape[0]))
    for f in range(x.shape[1]):
        out += np.abs(x[:, f][:, None] - x[:, f][None, :])
    return out


def component_matrices(records: list[PatientRecord], schema: FeatureSchema) -> dict[str, np.ndarray]:
    """Raw per-component pairwise matrices over a group of records."""
    layout = GraphFeatureLayout.from_schema(schema)
    out: dict[str, np.ndarray] = {}
    if layout.dem is not None:
        d = np.stack([r.d for r in records])
        col = layout.dem
        ap, ge, ag = d[:, col["apoe4"]], d[:, col["gender"]], d[:, col["age"]]
        out["s_dem"] = (
            (ap[:, None] == ap[None, :]).astype(float)
            + (ge[:, None] == ge[None, :])
            + (np.abs(ag[:, None] - ag[None, :]) <= AGE_TOLERANCE)
        ) / 3.0
    if layout.cog_cols:
        d = np.stack([r.d[list(layout.cog_cols)] for r in records]).astype(float)
        out["s_cog"] = _pairwise_abs_sum(d) / sum(layout.cog_max)
    if layout.img_cols:
        c = np.stack([r.c[list(layout.img_cols)] for r in records])
        out["s_img"] = np.vectorize(_sigmoid, otypes=[np.float64])(_pairwise_abs_sum(c))
    if layout.meas_cols:
        desc = np.stack([record_descriptors(r, layout) for r in records])  # (n, F, 4)
        n, nf = desc.shape[0], desc.shape[1]
        acc = np.zeros((n, n))
        for f in range(nf):
            diff = desc[:, None, f, :] - desc[None, :, f, :]
            acc += np.sqrt((diff * diff).sum(axis=-1))
        out["sim_meas"] = acc / nf
    if not out:
        raise ValueError("schema designates no graph features")
    return out


def combined_matrix(components: dict[str, np.ndarray]) -> np.ndarray:
    parts = []
    if "s_dem" in components:
        parts.append(components["s_dem"])
    if "s_cog" in components:
        m = components["s_cog"].max()
        parts.append(1.0 - (components["s_cog"] / m if m > 0 else components["s_cog"]))
    if "s_img" in components:
        parts.append(1.0 - components["s_img"])
    if "sim_meas" in components:
        m = components["sim_meas"].max()
        parts.append(1.0 - (components["sim_meas"] / m if m > 0 else components["sim_meas"]))
    total = np.zeros_like(parts[0])
    for p in parts:
        total = total + p
    return total / len(parts)
