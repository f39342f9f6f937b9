from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

SCHEMA_FORMAT = "popgraph.schema/1"

# Accuracy-within-margin tolerances for ordinal cognitive scores.
DEFAULT_MARGINS = {"CDRSB": 4, "ADAS11": 15, "MMSE": 2, "RAVLT_immediate": 5}

ROLE_NAMES = ("apoe4", "gender", "age")


class SchemaError(ValueError):
    pass


@dataclass(frozen=True)
class TaskSpec:
    name: str
    num_classes: int
    kind: str = "binary"

    def __post_init__(self):
        if self.num_classes < 2:
            raise SchemaError(f"task {self.name!r}: num_classes must be >= 2")
        if self.kind not in ("binary", "multiclass"):
            raise SchemaError(f"task {self.name!r}: kind must be binary or multiclass")
        if self.kind == "binary" and self.num_classes != 2:
            raise SchemaError(f"task {self.name!r}: binary tasks have exactly 2 classes")


@dataclass(frozen=True)
class FeatureSchema:
    static_discrete: tuple[tuple[str, int], ...] = ()
    static_continuous: tuple[str, ...] = ()
    ts_discrete: tuple[tuple[str, int], ...] = ()
    ts_continuous: tuple[str, ...] = ()
    max_timesteps: int = 1
    treatment_features: tuple[str, ...] = ()
    graph_features: tuple[str, ...] = ()
    roles: dict[str, str] = field(default_factory=dict)
    maskable_static: tuple[str, ...] | None = None
    margins: dict[str, int] = field(default_factory=dict)
    tasks: tuple[TaskSpec, ...] = ()

    def __post_init__(self):
        names = self.all_names()
        if len(set(names)) != len(names):
            dup = sorted({n for n in names if names.count(n) > 1})
            raise SchemaError(f"feature names must be unique; duplicated: {dup}")
        for name, card in self.static_discrete + self.ts_discrete:
            if card < 2:
                raise SchemaError(f"feature {name!r}: cardinality must be >= 2, got {card}")
        if self.max_timesteps < 1:
            raise SchemaError("max_timesteps must be >= 1")
        tsd = {n for n, _ in self.ts_discrete}
        extra = set(self.treatment_features) - tsd
        if extra:
            raise SchemaError(f"treatment features not among ts_discrete: {sorted(extra)}")
        unknown = set(self.graph_features) - set(names)
        if unknown:
            raise SchemaError(f"graph features not in schema: {sorted(unknown)}")
        for role, fname in self.roles.items():
            if role not in ROLE_NAMES:
                raise SchemaError(f"unknown role {role!r}")
            if fname not in self.static_discrete_names:
                raise SchemaError(f"role {role!r} must name a static discrete feature, got {fname!r}")
        if self.maskable_static is not None:
            bad = set(self.maskable_static) - set(self.static_discrete_names + self.static_continuous)
            if bad:
                raise SchemaError(f"maskable_static names unknown static features: {sorted(bad)}")
        tnames = [t.name for t in self.tasks]
        if len(set(tnames)) != len(tnames):
            raise SchemaError("task names must be unique")

    # ------------------------------------------------------------ views

    def all_names(self) -> list[str]:
        return (
            [n for n, _ in self.static_discrete]
            + list(self.static_continuous)
            + [n for n, _ in self.ts_discrete]
            + list(self.ts_continuous)
        )

    @property
    def static_discrete_names(self) -> tuple[str, ...]:
        return tuple(n for n, _ in self.static_discrete)

    @property
    def static_cardinalities(self) -> tuple[int, ...]:
        return tuple(c for _, c in self.static_discrete)

    @property
    def ts_discrete_names(self) -> tuple[str, ...]:
        return tuple(n for n, _ in self.ts_discrete)

    @property
    def ts_cardinalities(self) -> tuple[int, ...]:
        return tuple(c for _, c in self.ts_discrete)

    @property
    def num_ts(self) -> int:
        return len(self.ts_discrete) + len(self.ts_continuous)

    @property
    def has_timeseries(self) -> bool:
        return self.num_ts > 0

    def task(self, name: str) -> TaskSpec:
        for t in self.tasks:
            if t.name == name:
                return t
        raise SchemaError(f"unknown task {name!r}; schema defines {[t.name for t in self.tasks]}")

    def maskable_static_names(self) -> tuple[str, ...]:
        """Static features eligible for static feature masking.

        Defaults to every static feature except the gender and age roles.
        """
        if self.maskable_static is not None:
            return tuple(self.maskable_static)
        exempt = {self.roles.get("gender"), self.roles.get("age")}
        statics = self.static_discrete_names + self.static_continuous
        return tuple(n for n in statics if n not in exempt)

    def treatment_indices(self) -> list[int]:
        names = self.ts_discrete_names
        return [names.index(t) for t in self.treatment_features]

    def margin(self, name: str) -> int:
        return int(self.margins.get(name, 0))

    def fingerprint(self) -> str:
        import hashlib

        return hashlib.sha256(schema_to_json(self).encode("utf-8")).hexdigest()[:16]


def schema_to_dict(schema: FeatureSchema) -> dict:
    return {
        "format": SCHEMA_FORMAT,
        "static_discrete": [{"name": n, "cardinality": c} for n, c in schema.static_discrete],
        "static_continuous": list(schema.static_continuous),
        "ts_discrete": [{"name": n, "cardinality": c} for n, c in schema.ts_discrete],
        "ts_continuous": list(schema.ts_continuous),
        "max_timesteps": schema.max_timesteps,
        "treatment_features": list(schema.treatment_features),
        "graph_features": list(schema.graph_features),
        "roles": dict(sorted(schema.roles.items())),
        "maskable_static": None if schema.maskable_static is None else list(schema.maskable_static),
        "margins": dict(sorted(schema.margins.items())),
        "tasks": [{"name": t.name, "num_classes": t.num_classes, "kind": t.kind} for t in schema.tasks],
    }


_SCHEMA_KEYS = set(schema_to_dict(FeatureSchema()).keys())


def schema_from_dict(obj: dict) -> FeatureSchema:
    if obj.get("format") != SCHEMA_FORMAT:
        raise SchemaError(f"unsupported schema format {obj.get('format')!r}")
    unknown = set(obj) - _SCHEMA_KEYS
    if unknown:
        raise SchemaError(f"unknown schema fields: {sorted(unknown)}")
    ms = obj.get("maskable_static")
    return FeatureSchema(
        static_discrete=tuple((e["name"], int(e["cardinality"])) for e in obj.get("static_discrete", [])),
        static_continuous=tuple(obj.get("static_continuous", [])),
        ts_discrete=tuple((e["name"], int(e["cardinality"])) for e in obj.get("ts_discrete", [])),
        ts_continuous=tuple(obj.get("ts_continuous", [])),
        max_timesteps=int(obj.get("max_timesteps", 1)),
        treatment_features=tuple(obj.get("treatment_features", [])),
        graph_features=tuple(obj.get("graph_features", [])),
        roles=dict(obj.get("roles", {})),
        maskable_static=None if ms is None else tuple(ms),
        margins={k: int(v) for k, v in obj.get("margins", {}).items()},
        tasks=tuple(TaskSpec(t["name"], int(t["num_classes"]), t.get("kind", "binary")) for t in obj.get("tasks", [])),
    )


def schema_to_json(schema: FeatureSchema) -> str:
    return json.dumps(schema_to_dict(schema), indent=2) + "\n"


def save_schema(schema: FeatureSchema, path: str | Path) -> None:
    Path(path).write_text(schema_to_json(schema))


def load_schema(path: str | Path) -> FeatureSchema:
    return schema_from_dict(json.loads(Path(path).read_text()))
