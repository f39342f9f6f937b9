"""Synthetic EHR-like cohorts driven by a single latent severity.

Each patient draws ``z ~ U(0, 1)``. All features except gender and the
optional location coordinates are noisy increasing functions of ``z``;
treatment series switch on with an hourly probability that grows with ``z``.
Labels: ``outcome`` = 1{z > 0.5}, ``severity4`` = quartile of ``z``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from popgraph.data.records import PatientRecord
from popgraph.data.schema import DEFAULT_MARGINS, FeatureSchema, TaskSpec

GENERATOR_VERSION = "synthetic-ehr/1"

_COGNITIVE = [("CDRSB", 19), ("ADAS11", 107), ("MMSE", 11), ("RAVLT_immediate", 68)]
_AGE_CARD = 40


@dataclass
class SyntheticConfig:
    n: int = 600
    static_discrete: int = 3
    static_continuous: int = 2
    ts_discrete: int = 4
    ts_continuous: int = 8
    timesteps: int = 24
    missing_rate: float = 0.2
    noise: float = 0.3
    location_features: int = 0
    graph_on: str = "auto"  # auto | measurements | static | location

    def validate(self) -> None:
        if self.n < 1:
            raise ValueError("n must be >= 1")
        for name in ("static_discrete", "static_continuous", "ts_discrete", "ts_continuous", "location_features"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.timesteps < 1:
            raise ValueError("timesteps must be >= 1")
        if not 0.0 <= self.missing_rate < 1.0:
            raise ValueError("missing_rate must lie in [0, 1)")
        if self.noise < 0:
            raise ValueError("noise must be >= 0")
        if self.graph_on not in ("auto", "measurements", "static", "location"):
            raise ValueError(f"unknown graph_on {self.graph_on!r}")
        if self.graph_on == "location" and self.location_features == 0:
            raise ValueError("graph_on=location needs location_features > 0")
        if self.graph_on == "measurements" and self.ts_continuous == 0:
            raise ValueError("graph_on=measurements needs ts_continuous > 0")
        if self.static_discrete + self.static_continuous + self.ts_discrete + self.ts_continuous == 0:
            raise ValueError("at least one feature group must be non-empty")

    def to_dict(self) -> dict:
        return asdict(self)


def _static_discrete_spec(count: int) -> list[tuple[str, int]]:
    base = [("gender", 2), ("apoe4", 3), ("age", _AGE_CARD)] + _COGNITIVE
    out = base[:count]
    for i in range(len(out), count):
        out.append((f"score{i}", 10))
    return out


def build_schema(cfg: SyntheticConfig) -> FeatureSchema:
    sd = _static_discrete_spec(cfg.static_discrete)
    sc = [f"loc{i}" for i in range(cfg.location_features)] + [f"img{i}" for i in range(cfg.static_continuous)]
    td = [(f"treat{i}", 2) for i in range(cfg.ts_discrete)]
    tc = [f"meas{i}" for i in range(cfg.ts_continuous)]
    roles = {r: r for r in ("gender", "apoe4", "age") if r in dict(sd)}

    mode = cfg.graph_on
    if mode == "auto":
        mode = "location" if cfg.location_features else ("measurements" if tc else "static")
    if mode == "measurements":
        graph = tuple(tc)
    elif mode == "location":
        graph = tuple(f"loc{i}" for i in range(cfg.location_features))
    else:
        graph = tuple([n for n, _ in sd] + [s for s in sc if not s.startswith("loc")])

    names = {n for n, _ in sd}
    maskable = tuple(n for n, _ in sd if n not in ("gender", "age")) + tuple(
        s for s in sc if not s.startswith("loc")
    )
    return FeatureSchema(
        static_discrete=tuple(sd),
        static_continuous=tuple(sc),
        ts_discrete=tuple(td),
        ts_continuous=tuple(tc),
        max_timesteps=cfg.timesteps,
        treatment_features=tuple(n for n, _ in td),
        graph_features=graph,
        roles=roles,
        maskable_static=maskable,
        margins={k: v for k, v in DEFAULT_MARGINS.items() if k in names},
        tasks=(TaskSpec("outcome", 2, "binary"), TaskSpec("severity4", 4, "multiclass")),
    )


def generate_synthetic(cfg: SyntheticConfig, seed: int) -> tuple[FeatureSchema, list[PatientRecord], np.ndarray]:
    """Return (schema, records, latent severities). Deterministic in ``seed``."""
    cfg.validate()
    schema = build_schema(cfg)
    rng = np.random.default_rng(seed)
    n, tau, noise = cfg.n, cfg.timesteps, cfg.noise

    # per-feature generator parameters, drawn before any patient data
    img_slope = rng.uniform(0.5, 1.5, cfg.static_continuous)
    meas_slope = rng.uniform(0.5, 1.5, cfg.ts_continuous)
    meas_trend = rng.uniform(0.2, 0.8, cfg.ts_continuous)
    treat_rate = rng.uniform(0.08, 0.25, cfg.ts_discrete)
    treat_power = rng.uniform(1.0, 3.0, cfg.ts_discrete)

    z = rng.uniform(0.0, 1.0, n)

    D = cfg.static_discrete
    d = np.zeros((n, D), dtype=np.int64)
    for j, (name, card) in enumerate(schema.static_discrete):
        if name == "gender":
            d[:, j] = rng.integers(0, 2, n)
        else:
            raw = (card - 1) * z + rng.normal(0.0, noise * (card - 1) * 0.5, n)
            d[:, j] = np.clip(np.rint(raw), 0, card - 1).astype(np.int64)

    loc = rng.uniform(0.0, 1.0, (n, cfg.location_features))
    img = img_slope * z[:, None] + rng.normal(0.0, noise, (n, cfg.static_continuous))
    c = np.concatenate([loc, img], axis=1)

    t = np.arange(tau) / max(tau - 1, 1)
    base = meas_slope * z[:, None] + rng.normal(0.0, noise, (n, cfg.ts_continuous))
    trend = (meas_trend * (z[:, None] - 0.5))[:, :, None] * t[None, None, :]
    ar = np.zeros((n, cfg.ts_continuous, tau))
    eps = rng.normal(0.0, noise * 0.5, (n, cfg.ts_continuous, tau))
    for k in range(tau):
        ar[:, :, k] = (0.7 * ar[:, :, k - 1] if k else 0.0) + eps[:, :, k]
    t_c = base[:, :, None] + trend + ar

    p_hour = treat_rate[None, :] * z[:, None] ** treat_power[None, :]
    t_d = (rng.uniform(size=(n, cfg.ts_discrete, tau)) < p_hour[:, :, None]).astype(np.int64)

    obs_c = rng.uniform(size=t_c.shape) >= cfg.missing_rate
    obs_d = rng.uniform(size=t_d.shape) >= cfg.missing_rate

    outcome = (z > 0.5).astype(int)
    quart = np.clip(np.floor(z * 4), 0, 3).astype(int)

    width = len(str(n - 1))
    records = []
    for i in range(n):
        tc = np.where(obs_c[i], t_c[i], np.nan)
        td = np.where(obs_d[i], t_d[i], 0)
        records.append(
            PatientRecord(
                id=f"p{i:0{width}d}",
                d=d[i].copy(),
                c=c[i].copy(),
                t_d=td,
                t_c=tc,
                obs_d=obs_d[i].copy(),
                obs_c=obs_c[i].copy(),
                labels={"outcome": int(outcome[i]), "severity4": int(quart[i])},
            )
        )
    return schema, records, z
