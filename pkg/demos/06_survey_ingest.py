"""
From the raw survey file to two analysis datasets
=================================================

The bundled 50-row file has the same layout as the open visitor survey.
The schema renames the headers, types every column and assigns its role in
the graph; preprocessing then applies the filtering rules and reports how
many rows each rule removed.
"""

# %%
from csicausal.ingest import load_csv, load_schema, model_columns, preprocess, sample_path

schema = load_schema()
raw, load_report = load_csv(sample_path(), schema)
print(load_report.to_dict()["rows_read"], load_report.n_quarantined)

# %%
d0, d1, report = preprocess(raw, schema)
for s in report.stages:
    print(f"{s['rule']:24s} {s['rows_in']:3d} -> {s['rows_out']:3d}")
print(report.context_counts)

# %%
print(report.merges["accommodation"])
print(model_columns(schema, 0))
print(d1.head())
