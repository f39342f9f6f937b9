"""Brute-force reference implementations used as test oracles.

Written in plain Python loops, independent of the vectorised library code.
Sums run left to right in the same order as the documented formulas so that
float results can be compared exactly.
"""

import math


def descriptor(values, observed):
    obs = [v for v, o in zip(values, observed) if o]
    if not obs:
        return (0.0, 0.0, 0.0, 0.0)
    total = 0.0
    for v in obs:
        total += v
    mean = total / len(obs)
    sq = 0.0
    for v in obs:
        sq += (v - mean) * (v - mean)
    return (mean, math.sqrt(sq / len(obs)), min(obs), max(obs))


def meas_distance(a, b, cols):
    total = 0.0
    for j in cols:
        da = descriptor(list(a.t_c[j]), list(a.obs_c[j]))
        db = descriptor(list(b.t_c[j]), list(b.obs_c[j]))
        s = 0.0
        for x, y in zip(da, db):
            s += (x - y) * (x - y)
        total += math.sqrt(s)
    return total / len(cols)


def dem_similarity(a, b, apoe, gender, age):
    s = float(a.d[apoe] == b.d[apoe]) + float(a.d[gender] == b.d[gender]) + float(abs(int(a.d[age]) - int(b.d[age])) <= 2)
    return s / 3.0


def cog_distance(a, b, cols, maxima):
    diff = 0.0
    for i in cols:
        diff += abs(float(a.d[i]) - float(b.d[i]))
    return diff / sum(maxima)


def img_distance(a, b, cols):
    total = 0.0
    for i in cols:
        total += abs(float(a.c[i]) - float(b.c[i]))
    return 1.0 / (1.0 + math.exp(-total))


def combined(components):
    """``components``: ordered dict name -> n x n list; distances get inverted."""
    names = list(components)
    n = len(components[names[0]])
    out = [[0.0] * n for _ in range(n)]
    maxima = {k: max(max(row) for row in v) for k, v in components.items()}
    for i in range(n):
        for j in range(n):
            total = 0.0
            for k in names:
                v = components[k][i][j]
                if k == "s_dem":
                    p = v
                elif k == "s_img":
                    p = 1.0 - v
                else:
                    p = 1.0 - (v / maxima[k] if maxima[k] > 0 else v)
                total = total + p
            out[i][j] = total / len(names)
    return out


def knn(sim, k):
    n = len(sim)
    out = []
    for i in range(n):
        cands = sorted((j for j in range(n) if j != i), key=lambda j: (-sim[i][j], j))
        out.append(cands[:k])
    return out


def symmetric_edges(nbrs):
    edges = set()
    for i, row in enumerate(nbrs):
        for j in row:
            edges.add((min(i, j), max(i, j)))
    return edges


def floyd_warshall(n, edges):
    inf = float("inf")
    d = [[0 if i == j else inf for j in range(n)] for i in range(n)]
    for i, j in edges:
        d[i][j] = d[j][i] = 1
    for m in range(n):
        for i in range(n):
            for j in range(n):
                if d[i][m] + d[m][j] < d[i][j]:
                    d[i][j] = d[i][m] + d[m][j]
    return d


def smallest_shortest_path(n, edges, dist, s, t):
    """First path found by a sorted-neighbour DFS that only steps towards t."""
    nbrs = {i: sorted({b for a, b in edges if a == i} | {a for a, b in edges if b == i}) for i in range(n)}
    if dist[s][t] == float("inf"):
        return []

    def dfs(path):
        u = path[-1]
        if u == t:
            return path
        for v in nbrs[u]:
            if dist[v][t] == dist[u][t] - 1:
                found = dfs(path + [v])
                if found:
                    return found
        return None

    return dfs([s])


# ------------------------------------------------------------------ masking invariants


def masking_violations(task, arrays, schema, plan, masked, rng):
    """List of violated invariants for one plan; empty when all hold.

    ``masked`` is ``apply_plan`` output. Ratios are the pre-training defaults:
    30% of features for SFM/TFM, 100% of features in 6-step blocks for BM,
    10% of patients for PM.
    """
    import numpy as np

    from popgraph.core.tensor import Tensor
    from popgraph.masking import head_dim, pretrain_loss, split_outputs

    bad = []
    n, tau = arrays.n, schema.max_timesteps
    Sd, Sc = len(schema.ts_discrete), len(schema.ts_continuous)

    def near(count, ratio, total, what):
        if abs(count - ratio * total) > 1:
            bad.append(f"{what}: {count} masked of {total} at ratio {ratio}")

    # masked fraction and shape of the masked region
    if task == "SFM":
        names = schema.maskable_static_names()
        sd = schema.static_discrete_names
        for i in range(n):
            cnt = sum(
                (not plan.keep_d[i, sd.index(x)]) if x in sd else (not plan.keep_c[i, schema.static_continuous.index(x)])
                for x in names
            )
            near(cnt, 0.3, len(names), f"SFM row {i}")
        others = [j for j, x in enumerate(sd) if x not in names]
        if not plan.keep_d[:, others].all():
            bad.append("SFM masked a non-maskable static feature")
        if not (plan.keep_td.all() and plan.keep_tc.all()):
            bad.append("SFM touched time series")
    if task in ("TFM", "BM"):
        keep = np.concatenate([plan.keep_td, plan.keep_tc], axis=1)
        for i in range(n):
            hit = [j for j in range(Sd + Sc) if not keep[i, j].all()]
            near(len(hit), 0.3 if task == "TFM" else 1.0, Sd + Sc, f"{task} row {i}")
            for j in hit:
                steps = [t for t in range(tau) if not keep[i, j, t]]
                if task == "TFM" and len(steps) != tau:
                    bad.append(f"TFM partial feature {i},{j}")
                if task == "BM":
                    w = min(6, tau)
                    if len(steps) != w or steps != list(range(steps[0], steps[0] + w)) or steps[-1] >= tau:
                        bad.append(f"BM block {i},{j} = {steps}")
    if task == "TP":
        idx = schema.treatment_indices()
        if plan.keep_td[:, idx, :].any():
            bad.append("TP left a treatment step visible")
        rest = [j for j in range(Sd) if j not in idx]
        if not plan.keep_td[:, rest, :].all() or not plan.keep_tc.all():
            bad.append("TP masked a non-treatment feature")
        for i in range(n):
            for k, j in enumerate(idx):
                want = int(max(arrays.t_d[i, j, :]) == 1)
                if plan.treatment_labels[i, k] != want:
                    bad.append(f"TP label {i},{k}")
    if task == "PM":
        rows = [i for i in range(n) if not (plan.keep_td[i].all() and plan.keep_tc[i].all())]
        near(len(rows), 0.1, n, "PM patients")
        for i in rows:
            if plan.keep_td[i].any() or plan.keep_tc[i].any():
                bad.append(f"PM patient {i} partially masked")
    if task != "SFM" and not (plan.keep_d.all() and plan.keep_c.all()):
        bad.append(f"{task} touched static features")

    # unmasked cells bit-identical, masked cells hold the fill value
    tok_s = np.asarray(schema.static_cardinalities)
    tok_t = np.asarray(schema.ts_cardinalities)
    for name, keep, fill in (
        ("d", plan.keep_d, np.broadcast_to(tok_s[None, :], arrays.d.shape)),
        ("c", plan.keep_c, np.zeros(arrays.c.shape)),
        ("t_d", plan.keep_td, np.broadcast_to(tok_t[None, :, None], arrays.t_d.shape)),
        ("t_c", plan.keep_tc, np.zeros(arrays.t_c.shape)),
    ):
        a, b = getattr(arrays, name), getattr(masked, name)
        if a[keep].tobytes() != b[keep].tobytes():
            bad.append(f"unmasked {name} changed")
        if not np.array_equal(b[~keep], fill[~keep]):
            bad.append(f"masked {name} not filled")

    # validity is a subset of masked and of observed
    for v, keep in ((plan.valid_d, plan.keep_d), (plan.valid_c, plan.keep_c), (plan.valid_td, plan.keep_td), (plan.valid_tc, plan.keep_tc)):
        if (v & keep).any():
            bad.append("valid target outside mask")
    if (plan.valid_td & ~arrays.obs_d).any() or (plan.valid_tc & ~arrays.obs_c).any():
        bad.append("valid target unobserved")

    # loss ignores predictions outside masked-and-observed targets
    if plan.valid_count() == 0:
        return bad
    out = rng.normal(size=(n, head_dim(task, schema)))
    base, _ = pretrain_loss(split_outputs(task, Tensor(out), schema), plan)
    noise = rng.normal(0, 5, size=out.shape)
    preds = split_outputs(task, Tensor(out), schema)
    moved = split_outputs(task, Tensor(out + noise), schema)
    mixed = {}
    if "c" in preds:
        mixed["c"] = Tensor(np.where(plan.valid_c, preds["c"].data, moved["c"].data))
    if "d" in preds:
        mixed["d"] = [Tensor(np.where(plan.valid_d[:, j, None], p.data, q.data)) for j, (p, q) in enumerate(zip(preds["d"], moved["d"]))]
    if "tc" in preds:
        mixed["tc"] = Tensor(np.where(plan.valid_tc, preds["tc"].data, moved["tc"].data))
    if "td" in preds:
        mixed["td"] = [Tensor(np.where(plan.valid_td[:, j, :, None], p.data, q.data)) for j, (p, q) in enumerate(zip(preds["td"], moved["td"]))]
    if "tp" in preds:
        mixed["tp"] = Tensor(np.where(plan.label_valid, preds["tp"].data, moved["tp"].data))
    after, _ = pretrain_loss(mixed, plan)
    if float(after.data) != float(base.data):
        bad.append(f"loss moved: {float(base.data)!r} -> {float(after.data)!r}")
    return bad


def masking_trial(task, seed):
    """One seeded trial on a fresh small cohort; returns the violations."""
    import numpy as np

    from popgraph.data import SyntheticConfig, generate_synthetic, stack_records
    from popgraph.masking import MaskConfig, apply_plan, build_plan

    rng = np.random.default_rng(seed)
    cfg = SyntheticConfig(
        n=int(rng.integers(12, 40)),
        timesteps=int(rng.integers(2, 12)),
        ts_continuous=int(rng.integers(1, 8)),
        ts_discrete=int(rng.integers(1, 5)),
        static_discrete=7,
        missing_rate=0.3,
    )
    schema, records, _ = generate_synthetic(cfg, seed)
    arrays = stack_records(records, schema)
    loss_nodes = rng.random(arrays.n) < 0.7
    plan = build_plan(task, arrays, schema, MaskConfig(), rng, loss_nodes=loss_nodes)
    return masking_violations(task, arrays, schema, plan, apply_plan(arrays, plan, schema), rng)


# ------------------------------------------------------------------ metric fixtures

# Hand-computed values, written as fractions of pair or count tallies.
AUC_FIXTURES = [
    ([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0], (4, 4)),
    ([0.5, 0.5, 0.5, 0.5], [1, 0, 1, 0], (2, 4)),  # all ties: half credit per pair
    ([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1], (3, 4)),
    ([0.3, 0.3, 0.6, 0.1], [1, 0, 1, 0], (3.5, 4)),
]
# rows are class probabilities; per class OVR: 3/4, 2.5/3, 1 -> mean 31/36
MULTICLASS_AUC = (
    [[0.6, 0.3, 0.1], [0.2, 0.5, 0.3], [0.1, 0.2, 0.7], [0.15, 0.5, 0.35]],
    [0, 1, 2, 0],
    (31, 36),
)
# confusion: class 0 tp2 fp1 fn1, class 1 tp1 fp1 fn1, class 2 tp3 fp1 fn1
F1_FIXTURE = ([0, 0, 1, 1, 2, 2, 2, 2, 0], [0, 0, 0, 1, 1, 2, 2, 2, 2], (23, 36), (6, 9))
MARGIN_FIXTURES = [
    ("MMSE", [22, 23, 18, 17], [20, 20, 20, 20], (2, 4)),
    ("CDRSB", [7, 8], [3, 3], (1, 2)),
    ("ADAS11", [25, 26, -5], [10, 10, 10], (2, 3)),
    ("RAVLT_immediate", [35, 24, 30], [30, 30, 30], (2, 3)),
]


def metric_fixture_failures():
    """Exact comparisons of the library metrics against the fixtures above."""
    import numpy as np

    from popgraph.data.schema import DEFAULT_MARGINS
    from popgraph.metrics import accuracy, binary_auc, macro_auc, macro_f1, margin_accuracy

    bad = []

    def check(name, got, num, den):
        want = num / den
        if got != want:
            bad.append(f"{name}: {got!r} != {num}/{den}")

    for scores, labels, (num, den) in AUC_FIXTURES:
        check(f"auc {scores}", binary_auc(np.array(scores), np.array(labels)), num, den)
        probs = np.stack([1 - np.array(scores), np.array(scores)], axis=1)
        check(f"auc2 {scores}", macro_auc(probs, np.array(labels)), num, den)
    probs, labels, (num, den) = MULTICLASS_AUC
    check("macro auc", macro_auc(np.array(probs), np.array(labels)), num, den)
    pred, labels, (fn, fd), (an, ad) = F1_FIXTURE
    check("macro f1", macro_f1(np.array(pred), np.array(labels), 3), fn, fd)
    check("accuracy", accuracy(np.array(pred), np.array(labels)), an, ad)
    for feat, pred, truth, (num, den) in MARGIN_FIXTURES:
        check(f"margin {feat}", margin_accuracy(np.array(pred), np.array(truth), DEFAULT_MARGINS[feat]), num, den)
    if DEFAULT_MARGINS != {"CDRSB": 4, "ADAS11": 15, "MMSE": 2, "RAVLT_immediate": 5}:
        bad.append(f"margins {DEFAULT_MARGINS}")
    return bad


# ------------------------------------------------------------------ model equivariance


def permutation_gap(seed, n=None):
    """max |f(P x) - P f(x)| for the full encoder plus a decoder head."""
    import numpy as np

    from popgraph.data import SyntheticConfig, generate_synthetic, interpolate_missing, stack_records
    from popgraph.graph import combined_matrix, component_matrices, compute_structural, graph_from_similarity
    from popgraph.model import GraphTables, ModelConfig, ModelInputs, PopGraphModel

    rng = np.random.default_rng(seed)
    n = n or int(rng.integers(6, 20))
    schema, records, _ = generate_synthetic(SyntheticConfig(n=n, timesteps=5, ts_continuous=3, ts_discrete=2), seed)
    records = [interpolate_missing(r) for r in records]
    cfg = ModelConfig(layers=2, static_discrete_dim=4, static_continuous_dim=4, ts_discrete_dim=4, ts_continuous_dim=4, heads=2)
    graph = compute_structural(
        graph_from_similarity([r.id for r in records], combined_matrix(component_matrices(records, schema)), 2, cfg.max_spd)
    )
    model = PopGraphModel(schema, cfg, seed=seed)
    for name in ("graphormer.spatial", "graphormer.edge"):
        model.params[name].data[...] = rng.normal(size=model.params[name].data.shape)
    model.add_head("task.outcome", 2)
    perm = rng.permutation(n)

    def run(recs, g):
        h = model.encode(ModelInputs.from_arrays(stack_records(recs, schema)), GraphTables.from_graph(g, cfg))
        return model.decode("task.outcome", h).data

    base = run(records, graph)
    moved = run([records[i] for i in perm], graph.permute(perm))
    return float(np.abs(moved - base[perm]).max())
