"""Encoder (feature embeddings, temporal transformers, graph transformer) and heads."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from popgraph.core import tensor as T
from popgraph.core.params import Initializer, ParamStore
from popgraph.core.tensor import Tensor
from popgraph.data.records import FeatureArrays
from popgraph.data.schema import FeatureSchema
from popgraph.graph.builder import PopulationGraph
from popgraph.model import layers as nn
from popgraph.seeding import rng_for

BACKBONES = ("graphormer", "linear")


@dataclass
class ModelConfig:
    layers: int = 8
    static_discrete_dim: int = 32
    static_continuous_dim: int = 32
    ts_discrete_dim: int = 64
    ts_continuous_dim: int = 64
    heads: int = 4
    temporal_layers: int = 2
    dropout: float = 0.1
    backbone: str = "graphormer"
    max_spd: int = 20
    degree_cap: int = 32
    ffn_mult: int = 2

    def group_dims(self, schema: FeatureSchema) -> dict[str, int]:
        """Width of each present feature group, in concatenation order."""
        out = {}
        if schema.static_discrete:
            out["static_d"] = self.static_discrete_dim
        if schema.static_continuous:
            out["static_c"] = self.static_continuous_dim
        if schema.ts_discrete:
            out["ts_d"] = self.ts_discrete_dim
        if schema.ts_continuous:
            out["ts_c"] = self.ts_continuous_dim
        return out

    def width(self, schema: FeatureSchema) -> int:
        return sum(self.group_dims(schema).values())

    def validate(self, schema: FeatureSchema) -> None:
        if self.backbone not in BACKBONES:
            raise ValueError(f"backbone must be one of {BACKBONES}, got {self.backbone!r}")
        if self.layers < 1 or self.temporal_layers < 0:
            raise ValueError("layer counts must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if self.heads < 1:
            raise ValueError("heads must be >= 1")
        width = self.width(schema)
        if width == 0:
            raise ValueError("schema has no feature groups")
        if self.backbone == "graphormer" and width % self.heads:
            raise ValueError(f"heads ({self.heads}) must divide the node width {width}")
        for key in ("ts_d", "ts_c"):
            w = self.group_dims(schema).get(key)
            if w is not None and self.temporal_layers and w % self.heads:
                raise ValueError(f"heads ({self.heads}) must divide the {key} width {w}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, obj: dict) -> ModelConfig:
        known = {f.name for f in fields(cls)}
        extra = set(obj) - known
        if extra:
            raise ValueError(f"unknown model config keys: {sorted(extra)}")
        return cls(**obj)


@dataclass
class ModelInputs:
    """Masked feature arrays of one sub-graph plus mask indicator channels.

    ``ind_d`` / ``ind_c`` are 1.0 where a time-series cell is masked.
    Discrete cells that are masked already hold the mask token.
    """

    d: np.ndarray
    c: np.ndarray
    t_d: np.ndarray
    t_c: np.ndarray
    ind_d: np.ndarray
    ind_c: np.ndarray

    @property
    def n(self) -> int:
        return self.d.shape[0]

    @classmethod
    def from_arrays(cls, arrays: FeatureArrays, ind_d=None, ind_c=None) -> ModelInputs:
        t_c = np.nan_to_num(arrays.t_c, nan=0.0)
        return cls(
            arrays.d,
            arrays.c,
            arrays.t_d,
            t_c,
            np.zeros(arrays.t_d.shape) if ind_d is None else np.asarray(ind_d, dtype=np.float64),
            np.zeros(arrays.t_c.shape) if ind_c is None else np.asarray(ind_c, dtype=np.float64),
        )

    def take(self, idx) -> ModelInputs:
        return ModelInputs(*(a[idx] for a in (self.d, self.c, self.t_d, self.t_c, self.ind_d, self.ind_c)))


@dataclass
class GraphTables:
    """Per-graph index tables consumed by the graph transformer."""

    degree: np.ndarray  # (n,) clamped degree
    spatial: np.ndarray  # (n, n) SPD bucket; max_spd + 1 = unreachable
    edge: np.ndarray  # (n * n, max_spd) path edge features / path length

    @property
    def n(self) -> int:
        return self.degree.shape[0]

    @classmethod
    def from_graph(cls, graph: PopulationGraph, config: ModelConfig) -> GraphTables:
        if not graph.has_structure:
            raise ValueError("graph has no structural tables; run compute_structural first")
        cap = config.max_spd
        if graph.max_spd != cap:
            raise ValueError(f"graph path cap {graph.max_spd} differs from model max_spd {cap}")
        n = graph.n
        spatial = np.where(graph.reachable, np.minimum(graph.spd, cap), cap + 1)
        length = graph.path_len[..., None]
        edge = np.where(length > 0, graph.path_features / np.maximum(length, 1), 0.0)
        return cls(
            np.minimum(graph.degree, config.degree_cap).astype(np.int64),
            spatial.astype(np.int64),
            edge.reshape(n * n, cap),
        )


class PopGraphModel:
    """Parameters plus forward passes for one schema and configuration.

    Encoder parameters are drawn from a generator keyed on ``(seed, "encoder")``
    and each head from ``(seed, "head", name)``, so adding or dropping a head
    never shifts any other parameter.
    """

    def __init__(self, schema: FeatureSchema, config: ModelConfig, seed: int = 0):
        config.validate(schema)
        self.schema = schema
        self.config = config
        self.seed = seed
        self.width = config.width(schema)
        self.params = ParamStore()
        self.heads: dict[str, int] = {}
        self._init_encoder(Initializer(rng_for(seed, "encoder")))

    # -------------------------------------------------------------- init

    def _init_encoder(self, init: Initializer) -> None:
        ps, cfg, s = self.params, self.config, self.schema
        dims = cfg.group_dims(s)
        if "static_d" in dims:
            for j, (_, card) in enumerate(s.static_discrete):
                ps.add(f"embed.static_d.{j}", init.embedding(card + 1, dims["static_d"]))
        if "static_c" in dims:
            nn.init_linear(ps, init, "embed.static_c", len(s.static_continuous), dims["static_c"])
        if "ts_d" in dims:
            w = dims["ts_d"]
            for j, (_, card) in enumerate(s.ts_discrete):
                ps.add(f"temporal.ts_d.up.{j}", init.embedding(card + 1, w))
            nn.init_linear(ps, init, "temporal.ts_d.up.ind", len(s.ts_discrete), w, bias=False)
            self._init_temporal(init, "ts_d", w)
        if "ts_c" in dims:
            w = dims["ts_c"]
            nn.init_linear(ps, init, "temporal.ts_c.up", 2 * len(s.ts_continuous), w)
            self._init_temporal(init, "ts_c", w)

        F = self.width
        if cfg.backbone == "linear":
            nn.init_linear(ps, init, "backbone.linear", F, F)
            return
        h = cfg.heads
        ps.add("graphormer.degree", init.embedding(cfg.degree_cap + 1, F))
        ps.add("graphormer.spatial", init.zeros(cfg.max_spd + 2, h))
        ps.add("graphormer.edge", init.zeros(cfg.max_spd, h))
        for i in range(cfg.layers):
            nn.init_block(ps, init, f"graphormer.layers.{i}", F, cfg.ffn_mult * F)
        nn.init_layer_norm(ps, "graphormer.final_ln", F)

    def _init_temporal(self, init: Initializer, group: str, w: int) -> None:
        ps = self.params
        ps.add(f"temporal.{group}.pos", init.embedding(self.schema.max_timesteps, w))
        for i in range(self.config.temporal_layers):
            nn.init_block(ps, init, f"temporal.{group}.layers.{i}", w, self.config.ffn_mult * w)

    def add_head(self, name: str, out_dim: int) -> None:
        """Attach a freshly initialised linear head (replacing any old one)."""
        if out_dim < 1:
            raise ValueError(f"head {name!r}: output dimension must be >= 1")
        if name in self.heads:
            self.drop_head(name)
        init = Initializer(rng_for(self.seed, "head", name))
        nn.init_linear(self.params, init, f"head.{name}", self.width, out_dim)
        self.heads[name] = out_dim

    def drop_head(self, name: str) -> None:
        for suffix in (".w", ".b"):
            self.params._entries.pop(f"head.{name}{suffix}", None)
        self.heads.pop(name, None)

    def encoder_names(self) -> list[str]:
        return [n for n in self.params.names() if not n.startswith("head.")]

    # -------------------------------------------------------------- forward

    def embed_static_discrete(self, d: np.ndarray) -> Tensor:
        out = None
        for j in range(d.shape[1]):
            row = T.embedding(self.params[f"embed.static_d.{j}"], d[:, j])
            out = row if out is None else T.add(out, row)
        return out

    def embed_static_continuous(self, c: np.ndarray) -> Tensor:
        return nn.linear(self.params, "embed.static_c", c)

    def embed_timeseries(self, values: np.ndarray, indicator: np.ndarray, kind: str, rng=None, trace=None) -> Tensor:
        """(n, S, tau) series + indicator -> (n, S') mean of contextualised steps."""
        if values.ndim != 3 or values.shape[-1] == 0:
            raise ValueError(f"embed_timeseries: need (n, S, tau) with tau >= 1, got {values.shape}")
        tau = values.shape[-1]
        if tau > self.schema.max_timesteps:
            raise ValueError(f"embed_timeseries: tau={tau} exceeds max_timesteps={self.schema.max_timesteps}")
        ps = self.params
        ind = np.transpose(indicator, (0, 2, 1))  # (n, tau, S)
        if kind == "discrete":
            group = "ts_d"
            x = nn.linear(ps, f"temporal.{group}.up.ind", ind)
            for j in range(values.shape[1]):
                x = T.add(x, T.embedding(ps[f"temporal.{group}.up.{j}"], values[:, j, :]))
        elif kind == "continuous":
            group = "ts_c"
            x = nn.linear(ps, f"temporal.{group}.up", np.concatenate([np.transpose(values, (0, 2, 1)), ind], axis=-1))
        else:
            raise ValueError(f"unknown series kind {kind!r}")
        x = T.add(x, T.index(ps[f"temporal.{group}.pos"], slice(0, tau)))
        cfg = self.config
        for i in range(cfg.temporal_layers):
            x = nn.post_ln_block(ps, f"temporal.{group}.layers.{i}", x, cfg.heads, rng, cfg.dropout, trace=trace)
        return T.mean(x, axis=1)

    def node_embeddings(self, inputs: ModelInputs, rng=None, trace=None) -> Tensor:
        """Concatenated per-group embeddings, (n, F); no cross-node terms."""
        dims = self.config.group_dims(self.schema)
        parts = []
        if "static_d" in dims:
            parts.append(self.embed_static_discrete(inputs.d))
        if "static_c" in dims:
            parts.append(self.embed_static_continuous(inputs.c))
        if "ts_d" in dims:
            parts.append(self.embed_timeseries(inputs.t_d, inputs.ind_d, "discrete", rng, trace))
        if "ts_c" in dims:
            parts.append(self.embed_timeseries(inputs.t_c, inputs.ind_c, "continuous", rng, trace))
        return parts[0] if len(parts) == 1 else T.concat(parts, axis=-1)

    def attention_bias(self, tables: GraphTables) -> Tensor:
        """(heads, n, n) spatial + edge-encoding bias shared by every layer."""
        n, h = tables.n, self.config.heads
        spatial = T.embedding(self.params["graphormer.spatial"], tables.spatial)  # (n, n, h)
        edge = T.reshape(T.matmul(tables.edge, self.params["graphormer.edge"]), (n, n, h))
        return T.transpose(T.add(spatial, edge), (2, 0, 1))

    def graphormer_forward(self, x: Tensor, tables: GraphTables, rng=None, trace=None) -> Tensor:
        if tables is None:
            raise ValueError("graphormer_forward: missing structural tables")
        if tables.n != x.shape[0]:
            raise ValueError(f"graphormer_forward: {x.shape[0]} embeddings for a {tables.n}-node graph")
        ps, cfg = self.params, self.config
        x = T.add(x, T.embedding(ps["graphormer.degree"], tables.degree))
        bias = self.attention_bias(tables)
        for i in range(cfg.layers):
            x = nn.pre_ln_block(ps, f"graphormer.layers.{i}", x, cfg.heads, rng, cfg.dropout, bias=bias, trace=trace)
        return nn.layer_norm(ps, "graphormer.final_ln", x)

    def linear_backbone_forward(self, x: Tensor) -> Tensor:
        return nn.linear(self.params, "backbone.linear", x)

    def encode(self, inputs: ModelInputs, tables: GraphTables | None, rng=None, trace=None) -> Tensor:
        """Final per-node encoder vectors. ``rng`` enables dropout."""
        x = self.node_embeddings(inputs, rng, trace)
        if self.config.backbone == "linear":
            return self.linear_backbone_forward(x)
        return self.graphormer_forward(x, tables, rng, trace)

    def decode(self, name: str, h) -> Tensor:
        if name not in self.heads:
            raise KeyError(f"no decoder head {name!r}; have {sorted(self.heads)}")
        w = self.params[f"head.{name}.w"]
        if h.shape[-1] != w.shape[0]:
            raise ValueError(f"head {name!r} expects width {w.shape[0]}, got {h.shape[-1]}")
        return nn.linear(self.params, f"head.{name}", h)


def write_embeddings(path: str | Path, ids: list[str], vectors: np.ndarray) -> None:
    """Tab-delimited export: header row, then id followed by F values per node."""
    vectors = np.asarray(vectors)
    if vectors.shape[0] != len(ids):
        raise ValueError(f"{len(ids)} ids for {vectors.shape[0]} vectors")
    lines = ["id\t" + "\t".join(f"h{j}" for j in range(vectors.shape[1]))]
    for i, row in zip(ids, vectors):
        lines.append(i + "\t" + "\t".join(repr(float(v)) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def read_embeddings(path: str | Path) -> tuple[list[str], np.ndarray]:
    rows = Path(path).read_text().splitlines()[1:]
    ids, vals = [], []
    for line in rows:
        parts = line.split("\t")
        ids.append(parts[0])
        vals.append([float(v) for v in parts[1:]])
    return ids, np.asarray(vals)
