import filecmp
import json

import numpy as np
import pandas as pd
import pytest

from csicausal.ingest import (
    RULES,
    IngestError,
    SurveySchema,
    ingest,
    load_csv,
    load_schema,
    model_columns,
    preprocess,
    sample_path,
)

PERSONAL = "Vacation, leisure, or recreation"
WORK = "Conference or congress or fair"


@pytest.fixture(scope="module")
def schema():
    return load_schema()


@pytest.fixture(scope="module")
def raw(schema):
    return load_csv(sample_path(), schema)


def canonical(n, **cols):
    """Canonical-column frame of ``n`` valid personal-trip rows; ``cols`` override columns."""
    base = {
        "age_group": "25-34", "gender": "Female", "country": "Sweden", "purpose": PERSONAL, "nights": 3,
        "region": "Lapland", "quarter": 1, "transport": "Airplane", "accommodation": "Hotel",
        "reservation_months": 2.0, "travel_group": "alone", "secondary_nights": 0.0, "expenditure": 500.0,
        "weight": 1.0, "over_50km": 1,
    }
    base.update({f"exp_{k}": 0 for k in ("nature", "sports", "wellbeing", "culture", "city", "events",
                                         "shopping", "roadtrip")})
    f = pd.DataFrame({k: [v] * n for k, v in base.items()})
    for k, v in cols.items():
        f[k] = v
    return f


def test_bundled_sample_loads_cleanly(raw):
    table, rep = raw
    assert len(table) == 50 and rep.rows_read == 50 and rep.n_quarantined == 0
    assert table.nights.dtype.name == "Int64" and table.exp_nature.dtype.name == "Int64"


def test_bundled_sample_pipeline_counts(raw, schema):
    d0, d1, rep = preprocess(raw[0], schema)
    rep.check()
    assert [s["rule"] for s in rep.stages] == list(RULES)
    assert [s["dropped"] for s in rep.stages] == [2, 0, 0, 0, 0, 2, 2]
    assert rep.context_counts["final"] == {"0": 27, "1": 17}
    assert len(d0) == 27 and len(d1) == 17
    assert set(d0.gender) <= {"Male", "Other than male"}
    for d in (d0, d1):
        assert d.accommodation.nunique() <= 4
        assert d.nights.between(1, 15).all() and (d.expenditure > 0).all()
        assert not d.isna().any().any()
    assert rep.stages[3]["filled"] == 1


def test_extra_column_is_ignored_with_warning(tmp_path, schema):
    f = pd.read_csv(sample_path(), dtype=str, keep_default_na=False)
    f["Interviewer"] = "x"
    p = tmp_path / "s.csv"
    f.to_csv(p, index=False)
    with pytest.warns(UserWarning, match="Interviewer"):
        table, rep = load_csv(p, schema)
    assert rep.ignored_columns == ["Interviewer"] and "Interviewer" not in table


def test_malformed_cell_quarantined(tmp_path, schema):
    f = pd.read_csv(sample_path(), dtype=str, keep_default_na=False)
    f.loc[4, "Length of stay"] = "four"
    f.loc[9, "Experienced nature"] = "maybe"
    f.loc[12, "Quarter"] = "2.5"
    p = tmp_path / "s.csv"
    f.to_csv(p, index=False)
    table, rep = load_csv(p, schema)
    assert len(table) == 47 and rep.n_quarantined == 3
    q = {r["row"]: r for r in rep.quarantined}
    assert q[4]["column"] == "nights" and q[4]["value"] == "four" and q[4]["line"] == 6
    assert q[9]["column"] == "exp_nature" and q[12]["column"] == "quarter"


def test_missing_column_and_missing_file(tmp_path, schema):
    f = pd.read_csv(sample_path(), dtype=str, keep_default_na=False).drop(columns=["Expenditure"])
    p = tmp_path / "s.csv"
    f.to_csv(p, index=False)
    with pytest.raises(IngestError, match="expenditure"):
        load_csv(p, schema)
    with pytest.raises(IngestError, match="no such file"):
        load_csv(tmp_path / "nope.csv", schema)


def test_header_drift_handled_by_rename_map(tmp_path):
    f = pd.read_csv(sample_path(), dtype=str, keep_default_na=False).rename(columns={"Length of stay": "Nights"})
    p = tmp_path / "s.csv"
    f.to_csv(p, index=False)
    schema = load_schema()
    with pytest.raises(IngestError):
        load_csv(p, schema)
    rename = dict(schema.rename)
    rename["Nights"] = rename.pop("Length of stay")
    table, _ = load_csv(p, load_schema(rename=rename))
    assert len(table) == 50


def test_rule_excluded_purpose_and_context_mapping(schema):
    f = canonical(6, purpose=[PERSONAL, WORK, "Visiting friends or relatives", "Studying", "Astronaut training",
                              "Some other purpose"])
    d0, d1, rep = preprocess(f, schema)
    assert rep.dropped("drop_excluded_purpose") == 1
    assert rep.dropped("map_context") == 1 and rep.stages[1]["unmapped_purposes"] == ["Astronaut training"]
    assert len(d0) == 2 and len(d1) == 2
    assert set(d1.purpose) == {WORK, "Studying"}


def test_rule_gender_merge(schema):
    f = canonical(4, gender=["Male", "Female", "Other", "Don't want to say"])
    d0, _, rep = preprocess(f, schema)
    assert d0.gender.tolist() == ["Male"] + ["Other than male"] * 3


def test_rule_secondary_nights_fill(schema):
    f = canonical(3, secondary_nights=[np.nan, 2.0, np.nan])
    d0, _, rep = preprocess(f, schema)
    assert d0.secondary_nights.tolist() == [0.0, 2.0, 0.0] and rep.stages[3]["filled"] == 2


def test_rule_accommodation_top3_per_context(schema):
    acc0 = ["A"] * 4 + ["B"] * 3 + ["C"] * 2 + ["D"] + ["Other"]
    acc1 = ["D"] * 3 + ["E"] * 3 + ["F"] * 2 + ["A"] * 1 + ["G"] * 2
    f = pd.concat([canonical(len(acc0), accommodation=acc0), canonical(len(acc1), accommodation=acc1, purpose=WORK)])
    d0, d1, rep = preprocess(f, schema)
    assert d0.accommodation.value_counts().to_dict() == {"A": 4, "B": 3, "C": 2, "Other": 2}
    # ties between F and G (2 each) go to the alphabetically first
    assert d1.accommodation.value_counts().to_dict() == {"D": 3, "E": 3, "F": 2, "Other": 3}
    assert rep.merges["accommodation"]["1"]["G"] == "Other"


def test_rule_filter_x_y(schema):
    f = canonical(6, nights=[0, 1, 15, 16, 4, 4], expenditure=[10.0, 10.0, 10.0, 10.0, 0.0, -3.0])
    d0, _, rep = preprocess(f, schema)
    assert d0.nights.tolist() == [1, 15] and rep.dropped("filter_x_y") == 4


def test_rule_drop_missing(schema):
    f = canonical(3)
    f["region"] = ["Lapland", None, "Lapland"]
    f["reservation_months"] = [1.0, 1.0, np.nan]
    d0, _, rep = preprocess(f, schema)
    assert len(d0) == 1 and rep.dropped("drop_missing") == 2
    assert rep.context_counts["before_missing"]["0"] == 3


def test_preprocess_idempotent(raw, schema):
    d0, d1, _ = preprocess(raw[0], schema)
    both = pd.concat([d0, d1], ignore_index=True).drop(columns="context")
    e0, e1, rep = preprocess(both, schema)
    assert all(s["dropped"] == 0 for s in rep.stages)
    pd.testing.assert_frame_equal(e0, d0, check_dtype=False)
    pd.testing.assert_frame_equal(e1, d1, check_dtype=False)


def test_no_leakage_between_contexts(raw, schema):
    t = raw[0].copy()
    d0, _, _ = preprocess(t, schema)
    work = t.purpose.isin(schema.purposes["work"])
    t.loc[work, "accommodation"] = "Igloo"
    t.loc[work, "expenditure"] = t.loc[work, "expenditure"] * 3
    e0, e1, _ = preprocess(t, schema)
    pd.testing.assert_frame_equal(d0, e0)
    assert "Igloo" in set(e1.accommodation)


def test_ingest_deterministic(tmp_path, schema):
    a, b = tmp_path / "a", tmp_path / "b"
    ingest(sample_path(), a, schema)
    ingest(sample_path(), b, schema)
    for name in ("data_m0.csv", "data_m1.csv", "preprocess_report.json"):
        assert filecmp.cmp(a / name, b / name, shallow=False)
    rep = json.loads((a / "preprocess_report.json").read_text())
    assert rep["load"]["rows_read"] == 50 and rep["rows_out"] == 44


def test_schema_validation():
    d = json.loads(json.dumps(load_schema().to_dict()))
    d["columns"]["nights"]["type"] = "integer"
    with pytest.raises(IngestError, match="type"):
        SurveySchema.from_dict(d)
    d = load_schema().to_dict()
    d = json.loads(json.dumps(d))
    d["purposes"]["work"].append(PERSONAL)
    with pytest.raises(IngestError, match="both"):
        SurveySchema.from_dict(d)
    d = json.loads(json.dumps(load_schema().to_dict()))
    d["rename"]["Nights"] = "nights"
    with pytest.raises(IngestError, match="several"):
        SurveySchema.from_dict(d)


def test_model_columns_by_context(schema):
    c0, c1 = model_columns(schema, 0), model_columns(schema, 1)
    assert c0["group"] == c1["group"] == "country"
    assert "purpose" in c0["categorical"] and "purpose" in c1["categorical"]
    assert "accommodation" in c0["categorical"] and "accommodation" not in c1["categorical"]
    assert set(c0["numeric"]) == {"reservation_months", "secondary_nights"} and c1["numeric"] == []
    assert "exp_nature" in c0["categorical"] and "region" in c1["categorical"]
