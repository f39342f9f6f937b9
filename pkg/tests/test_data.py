import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from popgraph.data import (
    LABEL_RATIOS,
    FeatureSchema,
    NormStats,
    PatientRecord,
    RecordError,
    SchemaError,
    SyntheticConfig,
    TaskSpec,
    generate_synthetic,
    interpolate_missing,
    invert_norm,
    load_dataset,
    load_folds,
    load_records,
    load_schema,
    make_folds,
    normalize_continuous,
    save_folds,
    save_records,
    save_schema,
    stack_records,
    unstack_records,
)

SCHEMA = FeatureSchema(
    static_discrete=(("gender", 2), ("apoe4", 3)),
    static_continuous=("vol",),
    ts_discrete=(("vent", 2),),
    ts_continuous=("hr",),
    max_timesteps=4,
    treatment_features=("vent",),
    tasks=(TaskSpec("outcome", 2),),
)


def rec(rid, hr, obs=None, c=0.0):
    hr = np.asarray(hr, dtype=float)
    obs = np.isfinite(hr) if obs is None else np.asarray(obs)
    return PatientRecord(
        rid, np.array([0, 1]), np.array([c]), np.zeros((1, hr.size), dtype=np.int64),
        hr[None, :].copy(), np.ones((1, hr.size), bool), obs[None, :].copy(),
    )


def write_dataset(tmp_path, lines):
    save_schema(SCHEMA, tmp_path / "schema.json")
    (tmp_path / "records.jsonl").write_text("".join(json.dumps(x) + "\n" for x in lines))
    return tmp_path / "schema.json", tmp_path / "records.jsonl"


# ------------------------------------------------------------------ schema and loading


def test_schema_invariants():
    with pytest.raises(SchemaError, match="unique"):
        FeatureSchema(static_discrete=(("a", 2),), static_continuous=("a",))
    with pytest.raises(SchemaError, match="cardinality"):
        FeatureSchema(static_discrete=(("a", 1),))
    with pytest.raises(SchemaError, match="treatment"):
        FeatureSchema(ts_discrete=(("a", 2),), treatment_features=("b",))
    with pytest.raises(SchemaError):
        TaskSpec("x", 1)


def test_empty_records_file(tmp_path):
    schema, records = load_dataset(*write_dataset(tmp_path, []))
    assert records == [] and schema == SCHEMA


def test_discrete_value_equal_to_cardinality_is_rejected(tmp_path):
    line = {"id": "a", "d": [0, 3], "c": [1.0], "t_d": [[0, 0, 0, 0]], "t_c": [[1, 2, 3, 4]]}
    with pytest.raises(RecordError, match="apoe4"):
        load_dataset(*write_dataset(tmp_path, [line]))


def test_observed_masks_follow_explicit_nulls(tmp_path):
    lines = [
        {"id": "a", "d": [0, 1], "c": [1.0], "t_d": [[0, None, 1, 0]], "t_c": [[1.0, None, None, 4.0]]},
        {"id": "b", "d": [1, 2], "c": [2.0], "t_d": [[None] * 4], "t_c": [[None, 2.0, 3.0, None]]},
        {"id": "c", "d": [1, 0], "c": [3.0], "t_d": None, "t_c": None, "labels": {"outcome": 1}},
    ]
    _, records = load_dataset(*write_dataset(tmp_path, lines))
    assert len(records) == 3
    nulls = sum(int((~r.obs_c).sum() + (~r.obs_d).sum()) for r in records)
    hand = sum(sum(v is None for row in (x["t_c"] or [[None] * 4]) + (x["t_d"] or [[None] * 4]) for v in row) for x in lines)
    assert nulls == hand == 17
    assert records[0].obs_c.tolist() == [[True, False, False, True]]
    assert records[2].labels == {"outcome": 1}


def test_unknown_field_and_duplicate_id_rejected(tmp_path):
    base = {"id": "a", "d": [0, 1], "c": [1.0]}
    with pytest.raises(RecordError, match="unknown"):
        load_dataset(*write_dataset(tmp_path, [{**base, "extra": 1}]))
    with pytest.raises(RecordError, match="duplicate"):
        load_dataset(*write_dataset(tmp_path, [base, base]))


def test_save_load_is_byte_stable(tmp_path, small_cohort):
    schema, records, _ = small_cohort
    save_schema(schema, tmp_path / "s.json")
    save_records(records, tmp_path / "r.jsonl")
    schema2 = load_schema(tmp_path / "s.json")
    save_schema(schema2, tmp_path / "s2.json")
    save_records(load_records(tmp_path / "r.jsonl", schema2), tmp_path / "r2.jsonl")
    assert (tmp_path / "s.json").read_bytes() == (tmp_path / "s2.json").read_bytes()
    assert (tmp_path / "r.jsonl").read_bytes() == (tmp_path / "r2.jsonl").read_bytes()


def test_stack_unstack_roundtrip(small_cohort):
    schema, records, _ = small_cohort
    arrays = stack_records(records[:7], schema)
    assert arrays.t_c.shape == (7, len(schema.ts_continuous), schema.max_timesteps)
    back = unstack_records(arrays, records[:7])
    for a, b in zip(back, records[:7]):
        np.testing.assert_array_equal(a.d, b.d)
        np.testing.assert_array_equal(a.t_c, b.t_c)


# ------------------------------------------------------------------ interpolation


def test_interpolation_between_observations():
    out = interpolate_missing(rec("a", [2, np.nan, np.nan, np.nan, 6]))
    np.testing.assert_array_equal(out.t_c[0], [2, 3, 4, 5, 6])


def test_single_observation_extends_everywhere():
    out = interpolate_missing(rec("a", [np.nan, np.nan, 7, np.nan, np.nan]))
    np.testing.assert_array_equal(out.t_c[0], [7] * 5)


def test_no_observations_zero_fill_keeps_flags():
    out = interpolate_missing(rec("a", [np.nan] * 4))
    np.testing.assert_array_equal(out.t_c[0], [0, 0, 0, 0])
    assert not out.obs_c.any()


@settings(max_examples=60, deadline=None)
@given(st.lists(st.one_of(st.none(), st.floats(-100, 100)), min_size=1, max_size=12))
def test_interpolation_is_idempotent_and_finite(vals):
    r = rec("a", [np.nan if v is None else v for v in vals])
    once = interpolate_missing(r)
    twice = interpolate_missing(once)
    assert np.isfinite(once.t_c).all()
    np.testing.assert_array_equal(once.t_c, twice.t_c)
    np.testing.assert_array_equal(once.obs_c, r.obs_c)


# ------------------------------------------------------------------ normalisation


def test_min_max_on_train_split_and_no_clamping():
    recs = [rec(f"r{i}", [v, v, v, v], c=v) for i, v in enumerate([2.0, 4.0, 6.0, 8.0])]
    out, stats = normalize_continuous(recs, SCHEMA, ["r0", "r1", "r2"])
    assert [r.c[0] for r in out] == [0.0, 0.5, 1.0, 1.5]
    assert out[3].t_c[0, 0] == 1.5
    assert stats.static_min.tolist() == [2.0] and stats.static_max.tolist() == [6.0]


def test_constant_feature_maps_to_zero():
    recs = [rec("a", [5, 5, 5, 5], c=5.0), rec("b", [5, 5, 5, 5], c=5.0)]
    out, _ = normalize_continuous(recs, SCHEMA, ["a", "b"])
    assert [r.c[0] for r in out] == [0.0, 0.0]
    assert not out[0].t_c.any()


def test_normalisation_inverts(small_cohort, tmp_path):
    schema, records, _ = small_cohort
    filled = [interpolate_missing(r) for r in records]
    train = [r.id for r in filled[:40]]
    out, stats = normalize_continuous(filled, schema, train)
    stats.save(tmp_path / "norm.json")
    back = invert_norm(out, NormStats.load(tmp_path / "norm.json"))
    for a, b in zip(back[:40], filled[:40]):
        np.testing.assert_allclose(a.c, b.c, atol=1e-12)
        np.testing.assert_allclose(a.t_c, b.t_c, atol=1e-12)


# ------------------------------------------------------------------ synthetic generator


def test_generator_is_deterministic(tmp_path):
    cfg = SyntheticConfig(n=600)
    for name in ("a", "b"):
        _, records, _ = generate_synthetic(cfg, seed=11)
        save_records(records, tmp_path / f"{name}.jsonl")
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()


def test_zero_missing_rate_observes_everything():
    _, records, _ = generate_synthetic(SyntheticConfig(n=20, missing_rate=0.0), seed=0)
    assert all(r.obs_c.all() and r.obs_d.all() for r in records)


def test_binary_prevalence_and_quartile_labels():
    _, records, z = generate_synthetic(SyntheticConfig(n=10000, timesteps=2, ts_continuous=1, ts_discrete=1), seed=5)
    prev = np.mean([r.labels["outcome"] for r in records])
    assert abs(prev - 0.5) <= 0.02
    quart = np.array([r.labels["severity4"] for r in records])
    np.testing.assert_array_equal(quart, np.clip(np.floor(z * 4), 0, 3))


def test_monotone_features_correlate_with_severity():
    schema, records, z = generate_synthetic(SyntheticConfig(n=1000, timesteps=6), seed=2)
    for j, (name, _) in enumerate(schema.static_discrete):
        if name == "gender":
            continue
        assert np.corrcoef(z, [r.d[j] for r in records])[0, 1] > 0, name
    for j in range(len(schema.static_continuous)):
        assert np.corrcoef(z, [r.c[j] for r in records])[0, 1] > 0
    for j in range(len(schema.ts_continuous)):
        means = [np.nanmean(r.t_c[j]) if r.obs_c[j].any() else np.nan for r in records]
        ok = np.isfinite(means)
        assert np.corrcoef(z[ok], np.asarray(means)[ok])[0, 1] > 0
    for j in range(len(schema.ts_discrete)):
        assert np.corrcoef(z, [r.t_d[j].sum() for r in records])[0, 1] > 0


def test_invalid_generator_dims():
    with pytest.raises(ValueError):
        generate_synthetic(SyntheticConfig(n=0), seed=0)
    with pytest.raises(ValueError):
        generate_synthetic(SyntheticConfig(timesteps=0), seed=0)


# ------------------------------------------------------------------ folds


def _plain_records(n):
    return [rec(f"p{i:04d}", [1.0] * 4) for i in range(n)]


def test_ten_folds_partition_the_dataset():
    plans = make_folds(_plain_records(100), 10, seed=0)
    tests = [set(p.test_ids) for p in plans]
    assert all(len(t) == 10 for t in tests)
    assert set().union(*tests) == {f"p{i:04d}" for i in range(100)}
    assert sum(len(t) for t in tests) == 100
    for p in plans:
        assert not set(p.train_ids) & set(p.val_ids)
        assert not set(p.train_ids) & set(p.test_ids)


def test_full_ratio_labels_every_training_id():
    for p in make_folds(_plain_records(50), 5, seed=1):
        assert p.labeled_train_ids(1.0) == p.train_ids


def test_one_percent_label_count_follows_training_size():
    """Rotation folds leave 600 of 1000 ids for training, so 1% labels 6."""
    plans = make_folds(_plain_records(1000), 5, seed=0)
    for p in plans:
        assert len(p.train_ids) == 600
        assert len(p.labeled_train_ids(0.01)) == round(0.01 * len(p.train_ids)) == 6


def test_label_subsets_are_nested(small_cohort):
    _, records, _ = small_cohort
    for p in make_folds(records, 5, seed=4, task="outcome"):
        prev = set()
        for r in sorted(LABEL_RATIOS):
            cur = set(p.labeled_train_ids(r))
            assert prev <= cur
            prev = cur


def test_stratified_small_ratio_covers_both_classes(small_cohort):
    _, records, _ = small_cohort
    lab = {r.id: r.labels["outcome"] for r in records}
    for p in make_folds(records, 5, seed=4, task="outcome"):
        ids = p.labeled_train_ids(0.05)
        assert {lab[i] for i in ids} == {0, 1}


def test_rare_class_produces_warning_not_error():
    recs = _plain_records(20)
    for i, r in enumerate(recs):
        r.labels["outcome"] = int(i < 2)
    plans = make_folds(recs, 5, seed=0, task="outcome")
    assert any("class 1" in w for w in plans[0].warnings)


def test_fold_file_roundtrip(tmp_path, small_cohort):
    _, records, _ = small_cohort
    plans = make_folds(records, 5, seed=2, task="outcome")
    save_folds(plans, tmp_path / "f.json")
    again = load_folds(tmp_path / "f.json")
    save_folds(again, tmp_path / "g.json")
    assert (tmp_path / "f.json").read_bytes() == (tmp_path / "g.json").read_bytes()
    assert again[1].labeled_train_ids(0.1) == plans[1].labeled_train_ids(0.1)


def test_fold_count_below_two_rejected():
    with pytest.raises(ValueError):
        make_folds(_plain_records(10), 1)
