"""Command-line entry point: ``popgraph <subcommand> ...``.

Every command that writes results takes ``-o DIR`` and fills a fixed tree::

    DIR/manifest.json   resolved config, seeds, inputs and outputs
    DIR/metrics.json    metrics (training runs, grid, eval)
    DIR/checkpoints/    model checkpoints
    DIR/exports/        tables, figures, embeddings

A non-empty DIR is only reused with ``--force``. Failures print one line,
``error: <code>: <message>``, and exit with status 1 (2 for usage errors).
"""

from __future__ import annotations

import argparse
import datetime as _dt
import hashlib
import json
import shutil
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np
import yaml

from popgraph import __version__
from popgraph.data.folds import LABEL_RATIOS, load_folds, make_folds, save_folds
from popgraph.data.records import load_dataset, save_records
from popgraph.data.schema import save_schema
from popgraph.data.synthetic import GENERATOR_VERSION, SyntheticConfig, generate_synthetic
from popgraph.masking.plan import MaskConfig, build_plan, plan_to_dict
from popgraph.model.network import ModelConfig, PopGraphModel, write_embeddings
from popgraph.seeding import derive_seed
from popgraph.training.checkpoint import (
    CheckpointMismatch,
    init_from_checkpoint,
    load_model,
    save_model,
    transfer_init,
    transferred_names,
)
from popgraph.training.grid import SCRATCH, GridConfig, run_experiment_grid
from popgraph.training.loops import TrainConfig, evaluate, finetune, model_seed, predict_probs, pretrain, task_head
from popgraph.training.workspace import label_arrays, prepare_workspace

MANIFEST_FORMAT = "popgraph.manifest/1"
METRICS_FORMAT = "popgraph.metrics/1"

# configuration sections and their types; file values override these
SECTIONS = {
    "synthetic": SyntheticConfig,
    "model": ModelConfig,
    "mask": MaskConfig,
    "pretrain": TrainConfig,
    "finetune": TrainConfig,
    "scratch": TrainConfig,
}
SECTION_DEFAULTS = {
    "pretrain": {"phase": "pretrain", "task": "MT"},
    "finetune": {"phase": "finetune-pretrained"},
    "scratch": {"phase": "finetune-scratch"},
}
GRAPH_DEFAULTS = {"k": 5, "subgraph_size": 500}
FOLD_DEFAULTS = {"count": 5, "index": 0}


class CliError(Exception):
    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


# ------------------------------------------------------------------ helpers


def _json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def load_config(path: str | None) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.is_file():
        raise CliError("config", f"config file not found: {path}")
    try:
        text = p.read_text()
        obj = json.loads(text) if p.suffix == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise CliError("config", f"cannot parse {path}: {exc}".splitlines()[0]) from None
    obj = obj or {}
    if not isinstance(obj, dict):
        raise CliError("config", f"{path}: top level must be a mapping")
    known = set(SECTIONS) | {"graph", "folds", "grid"}
    unknown = sorted(set(obj) - known)
    if unknown:
        raise CliError("config", f"{path}: unknown sections {unknown}")
    return obj


def section(cfg: dict, name: str, overrides: dict | None = None):
    """Built-in defaults < config file < flags (``None`` flags are ignored)."""
    cls = SECTIONS[name]
    values = dict(SECTION_DEFAULTS.get(name, {}))
    values.update(cfg.get(name) or {})
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise CliError("config", f"unknown keys in section {name!r}: {unknown}")
    if name == "mask" and "mt_pool" in values:
        values["mt_pool"] = tuple(values["mt_pool"])
    try:
        obj = cls(**values)
        if hasattr(obj, "validate") and name != "model":
            obj.validate()
    except (TypeError, ValueError) as exc:
        raise CliError("config", f"section {name!r}: {exc}") from None
    return obj


def plain(cfg: dict, name: str, defaults: dict, overrides: dict | None = None) -> dict:
    values = dict(defaults)
    values.update(cfg.get(name) or {})
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return values


def prepare_output(path: str, force: bool) -> Path:
    out = Path(path)
    if out.exists() and not out.is_dir():
        raise CliError("output", f"{path} exists and is not a directory")
    if out.exists() and any(out.iterdir()):
        if not force:
            raise CliError("output-exists", f"{path} is not empty; pass --force to overwrite")
        for child in out.iterdir():
            shutil.rmtree(child) if child.is_dir() else child.unlink()
    out.mkdir(parents=True, exist_ok=True)
    return out


class Run:
    """Output directory plus its manifest, written before any training."""

    def __init__(self, out: Path, command: str, args: argparse.Namespace, config: dict, inputs: dict[str, str]):
        self.out = out
        self.manifest = {
            "format": MANIFEST_FORMAT,
            "version": __version__,
            "command": command,
            "seed": args.seed,
            "config": config,
            "inputs": {k: {"path": v, "sha256": _sha256(Path(v))} for k, v in sorted(inputs.items())},
            "outputs": {},
            "status": "running",
            "timestamps": {"started": _now()},
        }
        self.write_manifest()

    def path(self, *parts: str) -> Path:
        p = self.out.joinpath(*parts)
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def record(self, key: str, rel: str) -> None:
        self.manifest["outputs"][key] = {"path": rel, "sha256": _sha256(self.out / rel)}

    def write_manifest(self) -> None:
        (self.out / "manifest.json").write_text(_json(self.manifest))

    def write_metrics(self, metrics: dict) -> None:
        self.path("metrics.json").write_text(_json({"format": METRICS_FORMAT, **metrics}))
        self.record("metrics", "metrics.json")

    def finish(self, **extra) -> None:
        self.manifest.update(extra)
        self.manifest["status"] = "ok"
        self.manifest["timestamps"]["finished"] = _now()
        self.write_manifest()


def _data_inputs(args) -> tuple:
    data = Path(args.data)
    schema_p, records_p = data / "schema.json", data / "records.jsonl"
    for p in (schema_p, records_p):
        if not p.is_file():
            raise CliError("input", f"missing {p}")
    try:
        schema, records = load_dataset(schema_p, records_p)
    except (ValueError, KeyError) as exc:
        raise CliError("input", f"cannot load dataset from {data}: {exc}") from None
    return schema, records, {"schema": str(schema_p), "records": str(records_p)}


def _graphs(args, inputs: dict):
    from popgraph.graph.builder import load_graphs

    p = Path(args.graphs)
    if not p.is_file():
        raise CliError("input", f"missing graph file {p}")
    inputs["graphs"] = str(p)
    try:
        return load_graphs(p)
    except (ValueError, KeyError) as exc:
        raise CliError("input", f"cannot load graphs from {p}: {exc}") from None


def _folds(args, cfg: dict, records, task: str | None, ratios=LABEL_RATIOS):
    spec = plain(cfg, "folds", FOLD_DEFAULTS, {"count": getattr(args, "folds", None), "index": getattr(args, "fold", None)})
    if getattr(args, "fold_file", None):
        plans = load_folds(args.fold_file)
    else:
        seed = derive_seed(args.seed, "folds") % 2**32
        plans = make_folds(records, int(spec["count"]), ratios=ratios, seed=seed, task=task)
    if not 0 <= int(spec["index"]) < len(plans):
        raise CliError("config", f"fold index {spec['index']} out of range for {len(plans)} folds")
    return plans, spec


def _pick_task(schema, name: str):
    try:
        return schema.task(name)
    except KeyError as exc:
        raise CliError("config", str(exc).strip("'\"")) from None


def _epoch_log(stream):
    def log(rec):
        loss = rec.get("loss")
        val = rec.get("val") or {}
        score = val.get("score", val.get("auc"))
        print(
            f"epoch {rec['epoch']}\tloss {'n/a' if loss is None else f'{loss:.4f}'}"
            f"\tval {'n/a' if score is None else f'{score:.4f}'}",
            file=stream,
        )

    return log


def _parse_list(text: str | None, cast):
    if text is None:
        return None
    try:
        return tuple(cast(x.strip()) for x in text.split(",") if x.strip())
    except ValueError:
        raise CliError("usage", f"cannot parse list {text!r}") from None


# ------------------------------------------------------------------ commands


def cmd_synth(args, cfg):
    over = {"n": args.n, "timesteps": args.timesteps, "noise": args.noise}
    scfg = section(cfg, "synthetic", over)
    out = prepare_output(args.output, args.force)
    run = Run(out, "synth", args, {"synthetic": scfg.to_dict()}, {})
    run.manifest["generator_version"] = GENERATOR_VERSION
    schema, records, z = generate_synthetic(scfg, args.seed)
    save_schema(schema, run.path("schema.json"))
    save_records(records, run.path("records.jsonl"))
    with open(run.path("exports", "latent.tsv"), "w") as fh:
        fh.write("id\tseverity\n")
        for r, v in zip(records, z):
            fh.write(f"{r.id}\t{v!r}\n")
    for key, rel in (("schema", "schema.json"), ("records", "records.jsonl"), ("latent", "exports/latent.tsv")):
        run.record(key, rel)
    run.finish()
    print(f"wrote {len(records)} records to {out}")


def cmd_graph_build(args, cfg):
    from popgraph.graph.builder import build_population_graphs, save_graphs

    schema, records, inputs = _data_inputs(args)
    gcfg = plain(cfg, "graph", GRAPH_DEFAULTS, {"k": args.k, "subgraph_size": args.subgraph_size})
    mcfg = section(cfg, "model")
    out = prepare_output(args.output, args.force)
    run = Run(out, "graph build", args, {"graph": gcfg, "max_spd": mcfg.max_spd}, inputs)
    try:
        graphs = build_population_graphs(
            records, schema, k=int(gcfg["k"]), subgraph_size=int(gcfg["subgraph_size"]),
            seed=derive_seed(args.seed, "partition") % 2**32, max_spd=mcfg.max_spd,
        )
    except ValueError as exc:
        raise CliError("config", str(exc)) from None
    save_graphs(graphs, run.path("graphs.json"))
    run.record("graphs", "graphs.json")
    run.finish()
    print(f"wrote {len(graphs)} sub-graphs ({sum(g.n for g in graphs)} nodes) to {out / 'graphs.json'}")


def cmd_graph_inspect(args, cfg):
    inputs: dict = {}
    graphs = _graphs(args, inputs)
    if args.index is not None and not 0 <= args.index < len(graphs):
        raise CliError("usage", f"graph index {args.index} out of range ({len(graphs)} graphs)")
    chosen = range(len(graphs)) if args.index is None else [args.index]
    w = sys.stdout
    w.write("graph\tnodes\tedges\tk\tmean_degree\tmax_spd_seen\tunreachable_pairs\n")
    for gi in chosen:
        g = graphs[gi]
        spd = g.spd
        reach = spd[spd >= 0]
        w.write(
            f"{gi}\t{g.n}\t{len(g.edge_list())}\t{g.k}\t{g.degree.mean():.3f}\t{int(reach.max())}"
            f"\t{int((spd < 0).sum())}\n"
        )
    if args.node is not None:
        for gi in chosen:
            g = graphs[gi]
            if args.node not in g.node_ids:
                continue
            i = g.node_ids.index(args.node)
            w.write("\nneighbour\tweight\tdistance\n")
            for j in np.flatnonzero(g.adjacency[i]):
                w.write(f"{g.node_ids[j]}\t{g.weights[i, j]:.6f}\t{int(g.spd[i, j])}\n")
            return
        raise CliError("input", f"node {args.node!r} not found")


def cmd_mask_preview(args, cfg):
    from popgraph.data.records import stack_records
    from popgraph.seeding import rng_for

    schema, records, _ = _data_inputs(args)
    mcfg = section(cfg, "mask")
    records = records[: args.limit]
    arrays = stack_records(records, schema)
    try:
        plan = build_plan(args.task, arrays, schema, mcfg, rng_for(args.seed, "mask-preview", args.task))
    except ValueError as exc:
        raise CliError("config", str(exc)) from None
    sys.stdout.write(_json(plan_to_dict(plan, schema, [r.id for r in records])))


def _train_setup(args, cfg, task_for_folds, ratios=LABEL_RATIOS):
    schema, records, inputs = _data_inputs(args)
    graphs = _graphs(args, inputs)
    if args.fold_file:
        inputs["folds"] = args.fold_file
    mcfg = section(cfg, "model")
    try:
        mcfg.validate(schema)
    except ValueError as exc:
        raise CliError("config", f"section 'model': {exc}") from None
    plans, fspec = _folds(args, cfg, records, task_for_folds, ratios)
    return schema, records, graphs, inputs, mcfg, plans, int(fspec["index"])


def _write_split(run: Run, plans) -> None:
    save_folds(plans, run.path("folds.json"))
    run.record("folds", "folds.json")


def cmd_pretrain(args, cfg):
    schema, records, graphs, inputs, mcfg, plans, fi = _train_setup(args, cfg, None)
    tcfg = section(cfg, "pretrain", {"task": args.task, "epochs": args.epochs, "lr": args.lr, "seed": args.seed})
    mask = section(cfg, "mask")
    plan = plans[fi]
    out = prepare_output(args.output, args.force)
    config = {"model": mcfg.to_dict(), "pretrain": tcfg.to_dict(), "mask": mask.to_dict(), "fold": fi}
    run = Run(out, "pretrain", args, config, inputs)
    _write_split(run, plans)
    ws = prepare_workspace(schema, records, graphs, plan.train_ids, mcfg)
    model = PopGraphModel(schema, mcfg, seed=model_seed(args.seed, "pretrain", tcfg.task, fi))
    try:
        rep = pretrain(model, ws, plan.train_ids, plan.val_ids, tcfg, mask, log=_epoch_log(sys.stderr))
    except ValueError as exc:
        raise CliError("config", str(exc)) from None
    ws.norm.save(run.path("norm.json"))
    run.record("norm", "norm.json")
    save_model(run.path("checkpoints", "pretrain.ckpt"), model, "pretrain", rep.steps, {"task": tcfg.task, "fold": fi})
    run.record("checkpoint", "checkpoints/pretrain.ckpt")
    run.write_metrics({"kind": "pretrain", "report": rep.to_dict()})
    run.finish()
    print(f"best epoch {rep.best_epoch}\tscore {rep.best_score}")


def _finetune_run(args, cfg, command: str, phase: str, build_model):
    schema, records, graphs, inputs, mcfg, plans, fi = _train_setup(args, cfg, args.task)
    spec = _pick_task(schema, args.task)
    key = "scratch" if phase == "finetune-scratch" else "finetune"
    tcfg = section(
        cfg, key,
        {"phase": phase, "task": args.task, "epochs": args.epochs, "lr": args.lr, "seed": args.seed,
         "label_ratio": args.ratio},
    )
    if args.checkpoint:
        inputs["checkpoint"] = args.checkpoint
    plan = plans[fi]
    try:
        labeled = plan.labeled_train_ids(tcfg.label_ratio)
    except KeyError as exc:
        raise CliError("config", str(exc).strip("'\"")) from None
    out = prepare_output(args.output, args.force)
    config = {"model": mcfg.to_dict(), key: tcfg.to_dict(), "fold": fi}
    run = Run(out, command, args, config, inputs)
    _write_split(run, plans)
    model, info = build_model(schema, mcfg, fi)
    if info:
        run.manifest["init"] = info
        run.write_manifest()
    ws = prepare_workspace(schema, records, graphs, plan.train_ids, model.config)
    labels = label_arrays(records, ws.batches, spec.name)
    try:
        rep = finetune(model, ws, labels, spec, labeled, plan.val_ids, plan.test_ids, tcfg, log=_epoch_log(sys.stderr))
    except ValueError as exc:
        raise CliError("config", str(exc)) from None
    ws.norm.save(run.path("norm.json"))
    run.record("norm", "norm.json")
    save_model(run.path("checkpoints", "finetune.ckpt"), model, phase, rep.steps, {"task": spec.name, "fold": fi})
    run.record("checkpoint", "checkpoints/finetune.ckpt")
    run.write_metrics({"kind": "finetune", "labeled": len(labeled), "report": rep.to_dict()})
    run.finish()
    test = rep.test or {}
    print(f"test auc {test.get('auc')}\tacc {test.get('acc')}\tf1 {test.get('f1')}")


def _load_checkpoint_arrays(path: str):
    from popgraph.core.params import load_checkpoint

    if not Path(path).is_file():
        raise CliError("input", f"missing checkpoint {path}")
    try:
        return load_checkpoint(path)
    except (ValueError, KeyError, OSError) as exc:
        raise CliError("checkpoint", f"cannot read {path}: {exc}") from None


def cmd_finetune(args, cfg):
    phase = "finetune-pretrained" if args.checkpoint else "finetune-scratch"

    def build(schema, mcfg, fi):
        model = PopGraphModel(schema, mcfg, seed=model_seed(args.seed, "finetune", fi))
        if not args.checkpoint:
            return model, None
        arrays, meta = _load_checkpoint_arrays(args.checkpoint)
        if meta.get("model_config") != mcfg.to_dict():
            raise CliError("checkpoint", "model config differs from the checkpoint; match it or use transfer")
        try:
            init_from_checkpoint(model, arrays, meta)
        except CheckpointMismatch as exc:
            raise CliError("checkpoint", str(exc)) from None
        return model, {"mode": "pretrained", "checkpoint": args.checkpoint}

    _finetune_run(args, cfg, "finetune", phase, build)


def cmd_transfer(args, cfg):
    def build(schema, mcfg, fi):
        arrays, meta = _load_checkpoint_arrays(args.checkpoint)
        try:
            model = transfer_init((arrays, meta), schema, mcfg, seed=model_seed(args.seed, "transfer", fi))
        except CheckpointMismatch as exc:
            raise CliError("checkpoint", str(exc)) from None
        return model, {"mode": "transfer", "checkpoint": args.checkpoint, "copied": len(transferred_names(model))}

    _finetune_run(args, cfg, "transfer", "transfer", build)


def cmd_grid(args, cfg):
    g = cfg.get("grid") or {}
    inits = _parse_list(args.inits, str) or tuple(g.get("inits", (SCRATCH, "MT")))
    inits = tuple(SCRATCH if i.lower() == SCRATCH else i.upper() for i in inits)
    ratios = _parse_list(args.ratios, float) or tuple(float(r) for r in g.get("ratios", LABEL_RATIOS))
    seeds = _parse_list(args.seeds, int) or tuple(int(s) for s in g.get("seeds", (args.seed,)))
    for r in ratios:
        if not 0.0 < r <= 1.0:
            raise CliError("config", f"label ratio {r} outside (0, 1]")
    schema, records, graphs, inputs, mcfg, plans, _ = _train_setup(args, cfg, args.task, ratios)
    _pick_task(schema, args.task)
    fold_ids = _parse_list(args.fold_ids, int) or tuple(g.get("folds", range(len(plans))))
    try:
        chosen = [plans[i] for i in fold_ids]
    except IndexError:
        raise CliError("config", f"fold ids {list(fold_ids)} out of range for {len(plans)} folds") from None
    gcfg = GridConfig(
        task=args.task, inits=inits, ratios=ratios, seeds=seeds, model=mcfg, mask=section(cfg, "mask"),
        pretrain=section(cfg, "pretrain"), scratch=section(cfg, "scratch"), finetune=section(cfg, "finetune"),
    )
    out = prepare_output(args.output, args.force)
    run = Run(out, "grid", args, {"grid": gcfg.to_dict(), "folds": list(fold_ids)}, inputs)
    _write_split(run, plans)
    ckpt_dir = run.out / "checkpoints"
    ckpt_dir.mkdir()
    try:
        result = run_experiment_grid(schema, records, graphs, chosen, gcfg, jobs=args.jobs, checkpoint_dir=ckpt_dir)
    except ValueError as exc:
        raise CliError("config", str(exc)) from None
    for ck in sorted(run.out.joinpath("checkpoints").glob("*.ckpt")):
        run.record(f"checkpoint:{ck.name}", f"checkpoints/{ck.name}")
    for cell in result["cells"]:
        cell.pop("trace", None)
    run.write_metrics({"kind": "grid", "task": args.task, **result})
    failed = sum(1 for c in result["cells"] if c.get("status") != "ok")
    run.finish(failed_cells=failed)
    print(f"{len(result['cells'])} cells, {failed} failed; run `popgraph report {out}` for tables")


def cmd_eval(args, cfg):
    schema, records, graphs, inputs, _, plans, fi = _train_setup(args, cfg, args.task)
    inputs["checkpoint"] = args.checkpoint
    if not Path(args.checkpoint).is_file():
        raise CliError("input", f"missing checkpoint {args.checkpoint}")
    model = load_model(args.checkpoint)
    if model.schema.fingerprint() != schema.fingerprint():
        raise CliError("checkpoint", "checkpoint schema differs from the dataset schema")
    spec = _pick_task(schema, args.task)
    if task_head(spec.name) not in model.heads:
        raise CliError("checkpoint", f"checkpoint has no head for task {spec.name!r}; have {sorted(model.heads)}")
    plan = plans[fi]
    out = prepare_output(args.output, args.force)
    run = Run(out, "eval", args, {"fold": fi, "task": spec.name}, inputs)
    ws = prepare_workspace(schema, records, graphs, plan.train_ids, model.config)
    labels = label_arrays(records, ws.batches, spec.name)
    probs = predict_probs(model, ws, spec.name)
    result = {}
    for split, ids in (("train", plan.train_ids), ("val", plan.val_ids), ("test", plan.test_ids)):
        masks = ws.masks(ids)
        y = np.concatenate([lab[m] for lab, m in zip(labels, masks)])
        p = np.concatenate([pr[m] for pr, m in zip(probs, masks)])
        keep = y >= 0
        result[split] = evaluate(p[keep], y[keep], spec.num_classes) if keep.any() else None
    run.write_metrics({"kind": "eval", "task": spec.name, "splits": result})
    run.finish()
    for split, m in result.items():
        if m:
            print(f"{split}\tauc {m['auc']}\tacc {m['acc']}\tf1 {m['f1']}\tn {m['n']}")


def cmd_export(args, cfg):
    schema, records, inputs = _data_inputs(args)
    graphs = _graphs(args, inputs)
    inputs["checkpoint"] = args.checkpoint
    if not Path(args.checkpoint).is_file():
        raise CliError("input", f"missing checkpoint {args.checkpoint}")
    model = load_model(args.checkpoint)
    if model.schema.fingerprint() != schema.fingerprint():
        raise CliError("checkpoint", "checkpoint schema differs from the dataset schema")
    plans, fspec = _folds(args, cfg, records, None)
    plan = plans[int(fspec["index"])]
    out = prepare_output(args.output, args.force)
    run = Run(out, "export-embeddings", args, {"fold": int(fspec["index"])}, inputs)
    ws = prepare_workspace(schema, records, graphs, plan.train_ids, model.config)
    from popgraph.core.tensor import no_grad

    ids, vecs = [], []
    with no_grad():
        for b in ws.batches:
            ids.extend(b.ids)
            vecs.append(model.encode(b.inputs, b.tables).data)
    write_embeddings(run.path("exports", "embeddings.tsv"), ids, np.concatenate(vecs))
    run.record("embeddings", "exports/embeddings.tsv")
    run.finish()
    print(f"wrote {len(ids)} embeddings of width {model.width}")


def cmd_gradcheck(args, cfg):
    from popgraph.diagnostics import GRADCHECK_TOLERANCE, model_gradcheck

    res = model_gradcheck(seed=args.seed, samples=args.samples)
    print(f"max relative error {res.max_rel_error:.3e} over {res.samples} of {res.parameters} parameters")
    if not res.ok:
        raise CliError("gradcheck", f"max relative error {res.max_rel_error:.3e} exceeds {GRADCHECK_TOLERANCE:g}")


def cmd_report(args, cfg):
    from popgraph import report

    run_dir = Path(args.run)
    mpath = run_dir / "metrics.json"
    if not mpath.is_file():
        raise CliError("input", f"missing {mpath}")
    metrics = json.loads(mpath.read_text())
    exports = run_dir / "exports"
    exports.mkdir(exist_ok=True)
    delim = "," if args.format == "csv" else "\t"
    ext = "csv" if args.format == "csv" else "tsv"
    kind = metrics.get("kind")
    if kind == "grid":
        for metric in ("auc", "acc", "f1"):
            rows = report.grid_table(metrics["aggregate"], metric)
            report.write_delimited(rows, exports / f"table_{metric}.{ext}", delim)
            report.plot_label_ratio(metrics["aggregate"], exports / f"label_ratio_{metric}.png", metric)
        rows = report.grid_table(metrics["aggregate"], args.metric)
    elif kind in ("pretrain", "finetune"):
        rep = metrics["report"]
        report.plot_training_curves(rep["epochs"], exports / "curves.png", f"{rep['phase']} {rep['task']}")
        rows = [["split", "auc", "acc", "f1", "n"]]
        for split in ("train", "test"):
            m = rep.get(split) or {}
            if m:
                rows.append([split] + [_cell(m.get(k)) for k in ("auc", "acc", "f1", "n")])
        if kind == "pretrain":
            rows = [["epoch", "loss", "val_score"]] + [
                [str(e["epoch"]), _cell(e["loss"]), _cell((e.get("val") or {}).get("score"))] for e in rep["epochs"]
            ]
        report.write_delimited(rows, exports / f"summary.{ext}", delim)
    elif kind == "eval":
        rows = [["split", "auc", "acc", "f1", "n"]]
        for split, m in metrics["splits"].items():
            if m:
                rows.append([split] + [_cell(m.get(k)) for k in ("auc", "acc", "f1", "n")])
        report.write_delimited(rows, exports / f"summary.{ext}", delim)
    else:
        raise CliError("input", f"{mpath}: unsupported metrics kind {kind!r}")
    for row in rows:
        print(delim.join(row))


def _cell(v) -> str:
    if v is None:
        return "n/a"
    return str(v) if isinstance(v, int) else f"{v:.4f}"


# ------------------------------------------------------------------ parser


def _common(p: argparse.ArgumentParser, output: bool = True) -> None:
    p.add_argument("--seed", type=int, default=0, help="global seed; every random stream derives from it")
    p.add_argument("--config", help="YAML or JSON config file (flags override it)")
    if output:
        p.add_argument("-o", "--output", required=True, help="output directory")
        p.add_argument("--force", action="store_true", help="clear a non-empty output directory")


def _training(p: argparse.ArgumentParser, task_default: str | None = "outcome") -> None:
    p.add_argument("--data", required=True, help="directory with schema.json and records.jsonl")
    p.add_argument("--graphs", required=True, help="graph file from `graph build`")
    p.add_argument("--folds", type=int, help="number of rotation folds (default 5)")
    p.add_argument("--fold", type=int, help="fold index to train on (default 0)")
    p.add_argument("--fold-file", help="reuse a folds.json instead of deriving folds from the seed")
    if task_default is not None:
        p.add_argument("--task", default=task_default, help="downstream label name")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="popgraph", description="Masked-imputation pre-training and fine-tuning on patient population graphs."
    )
    parser.add_argument("--version", action="version", version=f"popgraph {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic cohort", description="Write schema.json and records.jsonl.")
    _common(p)
    p.add_argument("--n", type=int, help="number of patients")
    p.add_argument("--timesteps", type=int, help="hours per series")
    p.add_argument("--noise", type=float, help="noise scale of the generator")
    p.set_defaults(func=cmd_synth)

    gp = sub.add_parser("graph", help="build or inspect population graphs", description="Population-graph tools.")
    gsub = gp.add_subparsers(dest="graph_command", metavar="action", required=True)
    p = gsub.add_parser("build", help="partition patients and connect k nearest", description="Build sub-graphs.")
    _common(p)
    p.add_argument("--data", required=True, help="directory with schema.json and records.jsonl")
    p.add_argument("--k", type=int, help="neighbours per node (default 5)")
    p.add_argument("--subgraph-size", type=int, help="patients per sub-graph (default 500)")
    p.set_defaults(func=cmd_graph_build)
    p = gsub.add_parser("inspect", help="summarise a graph file", description="Print per-graph statistics.")
    _common(p, output=False)
    p.add_argument("graphs", help="graph file")
    p.add_argument("--index", type=int, help="only this sub-graph")
    p.add_argument("--node", help="also list this node's neighbours")
    p.set_defaults(func=cmd_graph_inspect)

    mp = sub.add_parser("mask", help="masking tools", description="Masking tools.")
    msub = mp.add_subparsers(dest="mask_command", metavar="action", required=True)
    p = msub.add_parser("preview", help="print one mask plan as JSON", description="Draw and print a mask plan.")
    _common(p, output=False)
    p.add_argument("--data", required=True, help="directory with schema.json and records.jsonl")
    p.add_argument("--task", default="TFM", help="SFM, TFM, BM, TP or PM")
    p.add_argument("--limit", type=int, default=5, help="number of records to mask")
    p.set_defaults(func=cmd_mask_preview)

    p = sub.add_parser("pretrain", help="masked-imputation pre-training", description="Pre-train one fold.")
    _common(p)
    _training(p, task_default=None)
    p.add_argument("--task", help="SFM, TFM, BM, TP, PM or MT (default MT)")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float, help="override the task's default learning rate")
    p.set_defaults(func=cmd_pretrain)

    for name, func, help_ in (
        ("finetune", cmd_finetune, "fine-tune from scratch or from a pre-trained checkpoint"),
        ("transfer", cmd_transfer, "fine-tune on a new schema from another schema's backbone"),
    ):
        p = sub.add_parser(name, help=help_, description=help_[0].upper() + help_[1:] + ".")
        _common(p)
        _training(p)
        p.add_argument("--checkpoint", required=name == "transfer", help="pre-trained checkpoint")
        p.add_argument("--ratio", type=float, help="label ratio (default 1.0)")
        p.add_argument("--epochs", type=int)
        p.add_argument("--lr", type=float)
        p.set_defaults(func=func)

    p = sub.add_parser("grid", help="label-ratio experiment grid", description="Run inits x ratios x folds x seeds.")
    _common(p)
    _training(p)
    p.add_argument("--inits", help="comma list, e.g. scratch,mt,tfm")
    p.add_argument("--ratios", help="comma list of label ratios, e.g. 0.01,1.0")
    p.add_argument("--seeds", help="comma list of run seeds (default: --seed)")
    p.add_argument("--fold-ids", help="comma list of folds to run (default: all)")
    p.add_argument("--jobs", type=int, default=1, help="worker processes")
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("eval", help="evaluate a fine-tuned checkpoint", description="Score train/val/test splits.")
    _common(p)
    _training(p)
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("export-embeddings", help="write encoder outputs", description="Export per-node embeddings.")
    _common(p)
    _training(p, task_default=None)
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("gradcheck", help="finite-difference check of the model", description="Check model gradients.")
    p.add_argument("--seed", type=int, default=0, help="global seed")
    p.add_argument("--config", help="unused; accepted for uniformity")
    p.add_argument("--samples", type=int, default=1500, help="parameter entries to probe")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("report", help="tables and figures for a run", description="Render a run's metrics.")
    p.add_argument("run", help="run directory containing metrics.json")
    p.add_argument("--metric", default="auc", choices=("auc", "acc", "f1"), help="table printed to stdout")
    p.add_argument("--format", default="tsv", choices=("tsv", "csv"))
    p.add_argument("--seed", type=int, default=0, help=argparse.SUPPRESS)
    p.add_argument("--config", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(getattr(args, "config", None))
        args.func(args, cfg)
    except CliError as exc:
        print(f"error: {exc.code}: {exc}", file=sys.stderr)
        return 2 if exc.code == "usage" else 1
    except (OSError, ValueError, KeyError) as exc:
        msg = str(exc).replace("\n", " ")
        print(f"error: {type(exc).__name__.lower()}: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
