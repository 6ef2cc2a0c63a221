"""Loading and preprocessing of the visitor-survey CSV.

A schema file names every canonical column with its type and causal role and
maps the source headers onto canonical names, so header drift between data
releases only needs a new rename map. Malformed rows are quarantined and
counted rather than dropped silently.
"""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import pandas as pd

log = logging.getLogger(__name__)

TYPES = ("str", "int", "float", "bool")
ROLES = ("D", "M", "X", "C", "S", "Z", "W", "Y", "weight")
TRUE = {"1", "yes", "true", "y", "kyllä"}
FALSE = {"0", "no", "false", "n", "ei"}
OTHER = "Other"


class IngestError(ValueError):
    pass


@dataclass
class SurveySchema:
    """Canonical columns, their types and roles, plus the header rename map."""

    columns: dict
    rename: dict = field(default_factory=dict)
    purposes: dict = field(default_factory=dict)
    gender: dict = field(default_factory=lambda: {"keep": "Male", "merged": "Other than male"})
    x_range: tuple = (1, 15)

    def __post_init__(self):
        for name, c in self.columns.items():
            if c.get("type") not in TYPES:
                raise IngestError(f"column {name}: type must be one of {TYPES}")
            if c.get("role") not in ROLES:
                raise IngestError(f"column {name}: role must be one of {ROLES}")
        targets = list(self.rename.values())
        dup = sorted({t for t in targets if targets.count(t) > 1})
        if dup:
            raise IngestError(f"several source headers map to {dup}")
        unknown = sorted(set(targets) - set(self.columns))
        if unknown:
            raise IngestError(f"rename map targets unknown columns {unknown}")
        for role in ("M", "X", "Y"):
            if len(self.by_role(role)) != 1:
                raise IngestError(f"schema needs exactly one column with role {role}")
        seen = {}
        for kind in ("excluded", "personal", "work"):
            for p in self.purposes.get(kind, []):
                if p in seen:
                    raise IngestError(f"purpose {p!r} listed as both {seen[p]} and {kind}")
                seen[p] = kind
        self.x_range = tuple(self.x_range)

    def by_role(self, role) -> list:
        return [k for k, c in self.columns.items() if c["role"] == role]

    def col(self, role) -> str:
        return self.by_role(role)[0]

    @property
    def weight(self):
        w = self.by_role("weight")
        return w[0] if w else None

    @classmethod
    def from_dict(cls, d) -> "SurveySchema":
        return cls(d["columns"], d.get("rename", {}), d.get("purposes", {}),
                   d.get("gender", {"keep": "Male", "merged": "Other than male"}), tuple(d.get("x_range", (1, 15))))

    def to_dict(self) -> dict:
        return {"columns": self.columns, "rename": self.rename, "purposes": self.purposes,
                "gender": self.gender, "x_range": list(self.x_range)}


def load_schema(path=None, rename=None) -> SurveySchema:
    """Read a schema JSON; the bundled one when ``path`` is None.

    ``rename`` (a dict or a JSON file) replaces the schema's header map.
    """
    if path is None:
        text = resources.files("csicausal.data").joinpath("survey_schema.json").read_text()
    else:
        text = Path(path).read_text()
    d = json.loads(text)
    if rename is not None:
        d["rename"] = rename if isinstance(rename, dict) else json.loads(Path(rename).read_text())
    return SurveySchema.from_dict(d)


def sample_path() -> Path:
    """Path of the bundled synthetic 50-row survey sample."""
    return Path(str(resources.files("csicausal.data").joinpath("survey_sample.csv")))


@dataclass
class LoadReport:
    rows_read: int = 0
    quarantined: list = field(default_factory=list)
    ignored_columns: list = field(default_factory=list)

    @property
    def n_quarantined(self) -> int:
        return len({q["row"] for q in self.quarantined})

    def to_dict(self):
        return {"rows_read": self.rows_read, "rows_quarantined": self.n_quarantined,
                "quarantined": self.quarantined, "ignored_columns": self.ignored_columns}


def _parse(values: pd.Series, kind):
    """Typed series plus a mask of unparseable non-empty cells."""
    empty = values.str.strip() == ""
    if kind == "str":
        return values.str.strip().where(~empty), np.zeros(len(values), bool)
    if kind == "bool":
        low = values.str.strip().str.lower()
        out = pd.Series(np.where(low.isin(TRUE), 1.0, np.where(low.isin(FALSE), 0.0, np.nan)), index=values.index)
        bad = ~empty & out.isna()
        return out.astype("Int64"), bad.to_numpy()
    num = pd.to_numeric(values.str.strip().where(~empty), errors="coerce")
    bad = ~empty & num.isna()
    if kind == "int":
        frac = num.notna() & (num != np.round(num))
        bad = bad | frac
        num = num.where(~frac).astype("Int64")
    return num, bad.to_numpy()


def load_csv(path, schema: SurveySchema | None = None):
    """Read the survey CSV into canonical, typed columns.

    Returns
    -------
    table : DataFrame
        One column per schema column; missing cells are NA.
    report : LoadReport
        Quarantined rows (with the offending column and value) and the
        source columns that were ignored.
    """
    schema = schema or load_schema()
    path = Path(path)
    if not path.exists():
        raise IngestError(f"no such file: {path}")
    raw = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    raw = raw.rename(columns=schema.rename)
    missing = [c for c in schema.columns if c not in raw.columns]
    if missing:
        raise IngestError(f"{path.name}: missing columns {missing}")
    report = LoadReport(rows_read=len(raw))
    extra = [c for c in raw.columns if c not in schema.columns]
    if extra:
        report.ignored_columns = extra
        warnings.warn(f"ignoring columns not in the schema: {extra}", stacklevel=2)
    out, bad_any = {}, np.zeros(len(raw), bool)
    for name, spec in schema.columns.items():
        out[name], bad = _parse(raw[name], spec["type"])
        for i in np.flatnonzero(bad):
            # +2: header line plus 1-based numbering
            report.quarantined.append({"row": int(i), "line": int(i) + 2, "column": name,
                                       "value": raw[name].iloc[i]})
        bad_any |= bad
    table = pd.DataFrame(out)[~bad_any].reset_index(drop=True)
    if report.quarantined:
        log.warning("quarantined %d malformed rows", report.n_quarantined)
    return table, report


@dataclass
class PreprocessReport:
    """Row counts per rule; counts telescope from input to output."""

    rows_in: int
    stages: list = field(default_factory=list)
    context_counts: dict = field(default_factory=dict)
    merges: dict = field(default_factory=dict)
    load: dict | None = None

    @property
    def rows_out(self) -> int:
        return self.stages[-1]["rows_out"] if self.stages else self.rows_in

    def dropped(self, rule) -> int:
        return next(s["dropped"] for s in self.stages if s["rule"] == rule)

    def check(self):
        n = self.rows_in
        for s in self.stages:
            if s["rows_in"] != n or s["rows_in"] - s["dropped"] != s["rows_out"]:
                raise AssertionError(f"counts do not telescope at {s['rule']}")
            n = s["rows_out"]

    def to_dict(self):
        d = {"rows_in": self.rows_in, "rows_out": self.rows_out, "stages": self.stages,
             "context_counts": self.context_counts, "merges": self.merges}
        if self.load is not None:
            d["load"] = self.load
        return d

    def to_json(self, path=None, extra=None):
        d = self.to_dict()
        d.update(extra or {})
        text = json.dumps(d, indent=2, sort_keys=True, default=str)
        if path:
            Path(path).write_text(text)
        return text


RULES = ("drop_excluded_purpose", "map_context", "merge_gender", "fill_secondary_nights",
         "merge_accommodation", "filter_x_y", "drop_missing")


def _top3(values: pd.Series) -> dict:
    counts = values.dropna()
    counts = counts[counts != OTHER].value_counts()
    order = sorted(counts.index, key=lambda k: (-counts[k], k))
    keep = set(order[:3])
    out = {k: (k if k in keep else OTHER) for k in order}
    if (values == OTHER).any():
        out[OTHER] = OTHER
    return out


def preprocess(raw: pd.DataFrame, schema: SurveySchema | None = None):
    """Apply the seven filtering and recoding rules in order.

    Returns ``(dataset_m0, dataset_m1, report)``. Both datasets keep every
    schema column plus an integer ``context`` column.
    """
    schema = schema or load_schema()
    df = raw.copy().reset_index(drop=True)
    rep = PreprocessReport(rows_in=len(df))
    purpose, x, y = schema.col("M"), schema.col("X"), schema.col("Y")

    def stage(rule, keep, **info):
        nonlocal df
        n = len(df)
        df = df[np.asarray(keep, dtype=bool)].reset_index(drop=True)
        rep.stages.append({"rule": rule, "rows_in": n, "dropped": n - len(df), "rows_out": len(df), **info})

    # 1
    stage(RULES[0], ~df[purpose].isin(schema.purposes.get("excluded", [])))
    # 2: purposes in neither list cannot be placed in a context
    cmap = {p: 0 for p in schema.purposes.get("personal", [])}
    cmap.update({p: 1 for p in schema.purposes.get("work", [])})
    ctx = df[purpose].map(cmap)
    unknown = sorted(df.loc[ctx.isna() & df[purpose].notna(), purpose].unique())
    df["context"] = ctx
    stage(RULES[1], ctx.notna(), unmapped_purposes=unknown)
    df["context"] = df["context"].astype(int)
    rep.merges["context"] = cmap
    # 3
    g = [c for c in schema.by_role("D") if c == "gender"]
    if g:
        keep, merged = schema.gender["keep"], schema.gender["merged"]
        seen = sorted(df[g[0]].dropna().unique())
        gmap = {v: (v if v == keep else merged) for v in seen}
        df[g[0]] = df[g[0]].map(gmap).where(df[g[0]].notna())
        rep.merges["gender"] = gmap
    stage(RULES[2], np.ones(len(df)))
    # 4
    if "secondary_nights" in df:
        filled = int(df["secondary_nights"].isna().sum())
        df["secondary_nights"] = df["secondary_nights"].fillna(0.0)
        stage(RULES[3], np.ones(len(df)), filled=filled)
    else:
        stage(RULES[3], np.ones(len(df)), filled=0)
    # 5
    if "accommodation" in df:
        rep.merges["accommodation"] = {}
        for m in (0, 1):
            rows = df["context"] == m
            amap = _top3(df.loc[rows, "accommodation"])
            df.loc[rows, "accommodation"] = df.loc[rows, "accommodation"].map(amap)
            rep.merges["accommodation"][str(m)] = amap
    stage(RULES[4], np.ones(len(df)))
    # 6
    lo, hi = schema.x_range
    xv, yv = df[x].astype("Float64"), df[y].astype("Float64")
    stage(RULES[5], ((xv >= lo) & (xv <= hi) & (yv > 0)).fillna(False).to_numpy())
    rep.context_counts["before_missing"] = {str(m): int((df["context"] == m).sum()) for m in (0, 1)}
    # 7
    cols = list(schema.columns)
    stage(RULES[6], df[cols].notna().all(axis=1).to_numpy())
    rep.context_counts["final"] = {str(m): int((df["context"] == m).sum()) for m in (0, 1)}
    rep.check()

    for c, s in schema.columns.items():
        if s["type"] in ("int", "bool"):
            df[c] = df[c].astype(int)
    d0 = df[df["context"] == 0].reset_index(drop=True)
    d1 = df[df["context"] == 1].reset_index(drop=True)
    return d0, d1, rep


def ingest(path, out_dir, schema: SurveySchema | None = None, extra=None):
    """Load, preprocess and write ``data_m0.csv``, ``data_m1.csv`` and ``preprocess_report.json``."""
    schema = schema or load_schema()
    raw, load_rep = load_csv(path, schema)
    d0, d1, rep = preprocess(raw, schema)
    rep.load = load_rep.to_dict()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    d0.to_csv(out / "data_m0.csv", index=False)
    d1.to_csv(out / "data_m1.csv", index=False)
    rep.to_json(out / "preprocess_report.json", extra)
    return d0, d1, rep


def model_columns(schema: SurveySchema, context: int) -> dict:
    """Covariates of the outcome model in one context, split by kind.

    Personal trips adjust for C, S, Z, W and D; work-related trips for C, S
    and D. The country column becomes the random-intercept group; the trip
    purpose enters as a fixed effect of its sub-categories.
    """
    roles = ("D", "C", "S", "Z", "W") if int(context) == 0 else ("D", "C", "S")
    cat, num = [schema.col("M")], []
    for r in roles:
        for c in schema.by_role(r):
            if c == "country":
                continue
            (num if schema.columns[c]["type"] == "float" else cat).append(c)
    return {"categorical": cat, "numeric": num, "group": "country" if "country" in schema.columns else None,
            "outcome": schema.col("Y"), "treatment": schema.col("X"), "weight": schema.weight}
