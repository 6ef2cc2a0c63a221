"""Command-line front end.

Every subcommand reads one JSON config, lets ``--seed``, ``--out-dir``,
``--graph``, ``--data-m0`` and ``--data-m1`` override it, writes its outputs
to the output directory and returns a stable exit code:

    0 success, 2 input error, 3 not identifiable, 4 sampler diagnostics failed
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import pandas as pd

from . import identify as ident
from . import ingest as ing
from . import scm as scm_mod
from . import sensitivity as sens
from .estimate import DataError, ModelSpec, PosteriorDraws, ace_table, counterfactual_difference, fit
from .estimate.fit import FitDiagnostics
from .ldag import FIXTURES, Ldag, LdagError, LdagSyntaxError, csi_separated, fixture, load_ldag, project, \
    serialize_ldag, validate
from .tables import config_hash, read_csv, write_csv, write_json

log = logging.getLogger("csicausal")

EXIT_OK, EXIT_INPUT, EXIT_NOT_IDENTIFIED, EXIT_DIAGNOSTICS = 0, 2, 3, 4

# fixed tags keep the random streams of different stages apart
_STREAM = {"simulate": 1, "fit": 2, "treatment": 3, "bias": 4, "oracle": 5}


class InputError(ValueError):
    pass


class NotIdentified(Exception):
    pass


@dataclass
class RunConfig:
    """Everything a run depends on; see ``configs/`` for annotated examples."""

    graph: str = "fixture:expenditure"
    context: str = "M"
    treatment: str = "X"
    outcome: str = "Y"
    data_m0: str | None = None
    data_m1: str | None = None
    raw: str | None = None
    schema: str | None = None
    rename: str | None = None
    simulate: dict | None = None
    model: dict = field(default_factory=dict)
    node_columns: dict = field(default_factory=dict)
    numeric: list = field(default_factory=list)
    categorical: list = field(default_factory=list)
    extra_categorical: list = field(default_factory=list)
    group: str | None = None
    xs: list | None = None
    sensitivity: dict = field(default_factory=dict)
    dsep: dict = field(default_factory=dict)
    seed: int = 0
    out_dir: str = "out"

    @classmethod
    def from_dict(cls, d) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        extra = sorted(set(d) - known)
        if extra:
            raise InputError(f"unknown config keys: {extra}")
        return cls(**d)

    def hash(self) -> str:
        d = asdict(self)
        d.pop("seed")
        d.pop("out_dir")
        return config_hash(d)

    def stamp(self) -> dict:
        return {"config_hash": self.hash(), "seed": self.seed}

    def seed_for(self, stage, context=0) -> list:
        return [int(self.seed), _STREAM[stage], int(context)]

    @property
    def out(self) -> Path:
        p = Path(self.out_dir)
        p.mkdir(parents=True, exist_ok=True)
        return p

    def data_path(self, m) -> Path:
        given = self.data_m0 if str(m) == "0" else self.data_m1
        return Path(given) if given else self.out / f"data_m{m}.csv"

    def column(self, node) -> list:
        return list(self.node_columns.get(node, [node]))


def _resolve_config(args) -> RunConfig:
    d = {}
    if args.config:
        try:
            d = json.loads(Path(args.config).read_text())
        except FileNotFoundError:
            raise InputError(f"config file not found: {args.config}") from None
        except json.JSONDecodeError as exc:
            raise InputError(f"config is not valid JSON: {exc}") from None
    for key in ("seed", "out_dir", "graph", "data_m0", "data_m1"):
        v = getattr(args, key, None)
        if v is not None:
            d[key] = v
    cfg = RunConfig.from_dict(d)
    if cfg.schema is not None or cfg.raw is not None:
        _apply_survey_defaults(cfg)
    return cfg


def _apply_survey_defaults(cfg: RunConfig):
    """Map graph nodes onto the survey columns named by the schema roles."""
    schema = ing.load_schema(cfg.schema, cfg.rename)
    cols = dict(cfg.node_columns)
    for role in ("D", "C", "S", "Z", "W", "X", "Y"):
        cols.setdefault(role, schema.by_role(role))
    cfg.node_columns = cols
    if not cfg.numeric:
        cfg.numeric = [c for c, s in schema.columns.items() if s["type"] == "float" and s["role"] in "DCSZW"]
    if cfg.group is None and "country" in schema.columns:
        cfg.group = "country"
    if not cfg.extra_categorical:
        cfg.extra_categorical = [schema.col("M")]


# -- graph helpers ----------------------------------------------------------------------


def _load_graph(cfg: RunConfig) -> Ldag:
    g = cfg.graph
    if g.startswith("fixture:"):
        name = g.split(":", 1)[1]
        if name not in FIXTURES:
            raise InputError(f"unknown fixture {name}; choose from {FIXTURES}")
        return fixture(name)
    return load_ldag(g)


def _context_levels(ldag: Ldag, cfg: RunConfig) -> list:
    if cfg.context in ldag.contexts:
        return list(ldag.contexts[cfg.context])
    return []


# -- subcommands --------------------------------------------------------------------------


def cmd_parse_graph(cfg: RunConfig) -> int:
    ldag = _load_graph(cfg)
    problems = validate(ldag)
    projections = {}
    for assignment in ldag.context_assignments():
        key = ",".join(f"{k}={v}" for k, v in sorted(assignment.items())) or "-"
        dag = project(ldag, assignment)
        projections[key] = sorted(f"{a}->{b}" for a, b in dag.edges)
    out = {
        "name": ldag.name,
        "observed": sorted(ldag.observed),
        "latent": sorted(ldag.latent),
        "contexts": {k: list(v) for k, v in ldag.contexts.items()},
        "canonical": serialize_ldag(ldag),
        "projections": projections,
        "violations": problems,
    }
    write_json(out, cfg.out / "graph.json", cfg.stamp())
    sys.stdout.write(out["canonical"])
    if problems:
        for p in problems:
            log.error(p)
        return EXIT_INPUT
    return EXIT_OK


def cmd_dsep(cfg: RunConfig) -> int:
    ldag = _load_graph(cfg)
    q = cfg.dsep
    a, b = q.get("a", []), q.get("b", [])
    if not a or not b:
        raise InputError("dsep needs non-empty --a and --b")
    given = q.get("given", [])
    ctx = {str(k): str(v) for k, v in q.get("context", {}).items()}
    sep = csi_separated(ldag, a, b, given, ctx)
    write_json({"a": a, "b": b, "given": given, "context": ctx, "separated": sep}, cfg.out / "dsep.json",
               cfg.stamp())
    print("separated" if sep else "connected")
    return EXIT_OK


def identify_all(cfg: RunConfig, ldag: Ldag):
    """Per-context results plus the recombined effect when every context is identified."""
    X, Y, M = cfg.treatment, cfg.outcome, cfg.context
    levels = _context_levels(ldag, cfg)
    if not levels:
        res = ident.combine_contexts(ldag, X, Y, None)
        return {}, res
    per = {}
    for m in levels:
        try:
            per[m] = ident.identify_context_effect(ldag, X, Y, {M: m})
        except ident.ContextDescendantError as exc:
            per[m] = ident._not_identified(str(exc), f"P({Y}|do({X}),{M}={m})", {M: m})
    combined = None
    if all(r.identified for r in per.values()) and not (ldag.label_contexts() - {M}):
        combined = ident.combine_contexts(ldag, X, Y, M)
    return per, combined


def cmd_identify(cfg: RunConfig) -> int:
    ldag = _load_graph(cfg)
    per, combined = identify_all(cfg, ldag)
    out = cfg.out
    stamp = cfg.stamp()
    witnesses = []
    for m, res in per.items():
        write_json(res.to_dict(), out / f"functional_m{m}.json", stamp)
        if res.identified:
            (out / f"functional_m{m}.txt").write_text(res.to_dict()["text"] + "\n")
        else:
            witnesses.append(res.witness)
    if combined is not None:
        write_json(combined.to_dict(), out / "functional_combined.json", stamp)
        if combined.identified:
            (out / "functional_combined.txt").write_text(combined.to_dict()["text"] + "\n")
        else:
            witnesses.append(combined.witness)
    summary = {
        "graph": ldag.name,
        "estimands": [r.to_dict() for r in per.values()] + ([combined.to_dict()] if combined else []),
        "adjustment_sets": {m: (sorted(r.adjustment_set) if r.adjustment_set is not None else None)
                            for m, r in per.items()},
        "identified": not witnesses,
        "caveat": ident.CAVEAT if per else None,
    }
    write_json(summary, out / "identify.json", stamp)
    if witnesses:
        (out / "witness.txt").write_text("\n".join(witnesses) + "\n")
        for w in witnesses:
            log.error("not identified: %s", w)
        return EXIT_NOT_IDENTIFIED
    for m, res in per.items():
        log.info("%s identified; adjustment set %s", res.estimand, summary["adjustment_sets"][m])
    return EXIT_OK


def _simulation_scm(cfg: RunConfig):
    from .synthetic import expenditure_gamma_scm

    sim = cfg.simulate or {}
    model = sim.get("model", "expenditure_gamma")
    if model == "expenditure_gamma":
        return expenditure_gamma_scm(**sim.get("params", {}))
    return scm_mod.load_scm(model)


def cmd_simulate(cfg: RunConfig) -> int:
    if cfg.simulate is None:
        raise InputError("config has no 'simulate' block")
    scm = _simulation_scm(cfg)
    n = int(cfg.simulate.get("n", 5000))
    M, X, Y = cfg.context, cfg.treatment, cfg.outcome
    data = scm_mod.simulate_observational(scm, n, cfg.seed_for("simulate"))
    stamp = {**cfg.stamp(), "scm_digest": scm.digest()}
    out = cfg.out
    (out / "scm.json").write_text(scm.to_json(indent=2) + "\n")
    levels = scm.ldag.contexts.get(M, ())
    for m in levels:
        part = data.frame[data.frame[M] == float(m)].reset_index(drop=True)
        write_csv(part, cfg.data_path(m), stamp)
        log.info("simulated %d rows for %s=%s", len(part), M, m)
    oracle_n = int(cfg.simulate.get("oracle_n", 0))
    if oracle_n:
        x_levels = scm.mechanisms[X].levels
        xs = cfg.xs or [int(v) for v in x_levels[:-1]]
        rows = []
        for m in levels:
            for x in xs:
                try:
                    o = scm_mod.oracle_counterfactual_difference(scm, X, x, M, m, oracle_n,
                                                                 cfg.seed_for("oracle", m), Y=Y)
                    rows.append([m, x, o.estimate, o.se, o.n_units])
                except scm_mod.ScmError:
                    rows.append([m, x, np.nan, np.nan, 0])
        write_csv(pd.DataFrame(rows, columns=["context", "x", "oracle", "se", "n"]), out / "oracle.csv", stamp)
    return EXIT_OK


def cmd_ingest(cfg: RunConfig) -> int:
    if not cfg.raw:
        raise InputError("config has no 'raw' survey file")
    schema = ing.load_schema(cfg.schema, cfg.rename)
    raw, load_rep = ing.load_csv(cfg.raw, schema)
    d0, d1, rep = ing.preprocess(raw, schema)
    rep.load = load_rep.to_dict()
    stamp = cfg.stamp()
    write_csv(d0, cfg.data_path(0), stamp)
    write_csv(d1, cfg.data_path(1), stamp)
    rep.to_json(cfg.out / "preprocess_report.json", stamp)
    log.info("ingest: %d rows read, %d quarantined, %d personal and %d work-related kept",
             load_rep.rows_read, load_rep.n_quarantined, len(d0), len(d1))
    return EXIT_OK


def _load_frame(cfg, m) -> pd.DataFrame:
    path = cfg.data_path(m)
    if not path.exists():
        raise InputError(f"data for context {m} not found: {path}")
    return read_csv(path)


def model_spec(cfg: RunConfig, ldag: Ldag, m, frame: pd.DataFrame) -> ModelSpec:
    """Outcome model for context ``m``: the identified adjustment set as covariates."""
    res = ident.identify_context_effect(ldag, cfg.treatment, cfg.outcome, {cfg.context: m})
    if not res.identified:
        raise NotIdentified(res.witness)
    if res.adjustment_set is None:
        raise NotIdentified(f"context {cfg.context}={m}: identified without a backdoor set; "
                            "the regression estimator needs one")
    order = [v for v in project(ldag, {cfg.context: m}).topological_order() if v in res.adjustment_set]
    cols = [c for v in order for c in cfg.column(v)]
    cols = list(dict.fromkeys(cfg.extra_categorical + cols))
    group = cfg.group
    cat, num = [], []
    for c in cols:
        if c == group:
            continue
        if c not in frame.columns:
            raise InputError(f"context {m}: column {c} required by the adjustment set is missing")
        if c in cfg.numeric:
            num.append(c)
        elif c in cfg.categorical:
            cat.append(c)
        else:
            v = frame[c]
            is_float = pd.api.types.is_float_dtype(v) and not np.all(np.mod(v.dropna(), 1) == 0)
            (num if is_float else cat).append(c)
    settings = dict(cfg.model)
    return ModelSpec(outcome=cfg.column(cfg.outcome)[0], treatment=cfg.column(cfg.treatment)[0],
                     categorical=tuple(cat), numeric=tuple(num),
                     group=group if group in frame.columns else None,
                     context=cfg.context, context_level=str(m), **settings)


def _draws_path(cfg, m, kind="draws"):
    return cfg.out / f"{kind}_m{m}.csv"


def cmd_fit(cfg: RunConfig) -> int:
    ldag = _load_graph(cfg)
    failed = []
    stamp = cfg.stamp()
    for m in _context_levels(ldag, cfg):
        frame = _load_frame(cfg, m)
        spec = model_spec(cfg, ldag, m, frame)
        log.info("fitting context %s=%s: %d rows, %d covariate columns", cfg.context, m, len(frame),
                 len(spec.categorical) + len(spec.numeric))
        res = fit(spec, frame, cfg.seed_for("fit", m))
        res.draws.to_csv(_draws_path(cfg, m), stamp=stamp)
        bad = res.diagnostics.failures()
        res.diagnostics.to_json(cfg.out / f"diagnostics_m{m}.json", {**stamp, "rhat_failures": bad})
        if bad:
            log.warning("context %s: R-hat >= 1.01 for %s", m, bad)
            failed.append(m)
    return EXIT_DIAGNOSTICS if failed else EXIT_OK


def _fit_failures(cfg, m, kind="diagnostics") -> list:
    p = cfg.out / f"{kind}_m{m}.json"
    if not p.exists():
        return []
    return json.loads(p.read_text()).get("rhat_failures", [])


def _load_fits(cfg, ldag):
    draws, frames = {}, {}
    for m in _context_levels(ldag, cfg):
        p = _draws_path(cfg, m)
        if not p.exists():
            raise InputError(f"no posterior draws for context {m}; run 'fit' first ({p})")
        draws[m] = PosteriorDraws.from_csv(p)
        frames[m] = _load_frame(cfg, m)
    return draws, frames


def _xs(cfg, draws):
    return cfg.xs if cfg.xs is not None else None


def cmd_effect(cfg: RunConfig) -> int:
    ldag = _load_graph(cfg)
    draws, frames = _load_fits(cfg, ldag)
    table = ace_table(draws, frames, _xs(cfg, draws))
    flagged = [m for m in draws if _fit_failures(cfg, m)]
    for m in flagged:
        sel = table["context"] == m
        table.loc[sel, "note"] = table.loc[sel, "note"].where(table.loc[sel, "note"] != "", "rhat>=1.01")
    write_csv(table, cfg.out / "ace.csv", cfg.stamp(), columns=list(table.columns))
    detail = []
    for m in draws:
        levels = cfg.xs if cfg.xs is not None else range(1, draws[m].spec.x_max)
        for x in levels:
            try:
                e = counterfactual_difference(draws[m], frames[m], x)
                detail.append([m, x, e.estimate, e.posterior_sd, e.covariate_se, e.n_stratum])
            except DataError:
                detail.append([m, x, np.nan, np.nan, np.nan, 0])
    write_csv(pd.DataFrame(detail, columns=["context", "x", "ace", "posterior_sd", "covariate_se", "n"]),
              cfg.out / "ace_detail.csv", cfg.stamp())
    return EXIT_DIAGNOSTICS if flagged else EXIT_OK


def cmd_sensitivity(cfg: RunConfig) -> int:
    ldag = _load_graph(cfg)
    draws, frames = _load_fits(cfg, ldag)
    config = sens.SensitivityConfig.from_dict(cfg.sensitivity) if cfg.sensitivity else sens.SensitivityConfig()
    stamp = cfg.stamp()
    biases, flagged, bias_frames = {}, [], []
    for m in draws:
        sd_y = sens.outcome_residual_sd(draws[m], frames[m])
        tr = sens.treatment_residual_sd(frames[m], draws[m].spec, cfg.seed_for("treatment", m))
        if tr.degenerate:
            raise InputError(f"context {m}: treatment is constant, bias undefined")
        bad = tr.diagnostics.failures(names=("alpha", "shape", "sigma_u"))
        tr.diagnostics.to_json(cfg.out / f"treatment_diagnostics_m{m}.json", {**stamp, "rhat_failures": bad})
        if bad or _fit_failures(cfg, m):
            flagged.append(m)
        biases[m] = sens.bias_draws(m, sd_y, tr.sd, config, cfg.seed_for("bias", m))
        bias_frames.append(biases[m].to_frame())
    write_csv(pd.concat(bias_frames, ignore_index=True), cfg.out / "bias_draws.csv", stamp)
    effects = sens_effects(cfg, draws, frames)
    table = sens.adjusted_ace(effects, biases)
    table["note"] = ["rhat>=1.01" if c in flagged else "" for c in table["context"]]
    write_csv(table, cfg.out / "ace_adjusted.csv", stamp)
    summary = {str(m): b.summary() for m, b in biases.items()}
    sens.write_histograms(cfg.out / "bias_histogram.json", biases, config.bins,
                          {**stamp, "summary": summary, "priors": config.to_dict()})
    for m, s in summary.items():
        log.info("context %s: mean bias %.3f [%.3f, %.3f]", m, s["mean"], s["lower"], s["upper"])
    return EXIT_DIAGNOSTICS if flagged else EXIT_OK


def sens_effects(cfg, draws, frames):
    from .estimate import effect_draws

    return effect_draws(draws, frames, cfg.xs)


def cmd_pipeline(cfg: RunConfig) -> int:
    code = cmd_identify(cfg)
    if code != EXIT_OK:
        return code
    ldag = _load_graph(cfg)
    missing = [m for m in _context_levels(ldag, cfg) if not cfg.data_path(m).exists()]
    if missing:
        if cfg.raw:
            cmd_ingest(cfg)
        elif cfg.simulate is not None:
            cmd_simulate(cfg)
        else:
            raise InputError(f"no data for contexts {missing} and nothing to ingest or simulate")
    codes = [cmd_fit(cfg), cmd_effect(cfg), cmd_sensitivity(cfg)]
    status = max(codes)
    diag = {"exit_status": status, "contexts": {}}
    for m in _context_levels(ldag, cfg):
        diag["contexts"][m] = {
            "outcome": json.loads((cfg.out / f"diagnostics_m{m}.json").read_text()),
            "treatment": json.loads((cfg.out / f"treatment_diagnostics_m{m}.json").read_text()),
        }
    diag["rhat_failures"] = {m: {k: c[k]["rhat_failures"] for k in ("outcome", "treatment")}
                             for m, c in diag["contexts"].items()
                             if c["outcome"]["rhat_failures"] or c["treatment"]["rhat_failures"]}
    write_json(diag, cfg.out / "diagnostics.json", cfg.stamp())
    return status


COMMANDS = {
    "parse-graph": cmd_parse_graph,
    "dsep": cmd_dsep,
    "identify": cmd_identify,
    "simulate": cmd_simulate,
    "ingest": cmd_ingest,
    "fit": cmd_fit,
    "effect": cmd_effect,
    "sensitivity": cmd_sensitivity,
    "pipeline": cmd_pipeline,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--seed", type=int)
    common.add_argument("--out-dir", dest="out_dir")
    common.add_argument("--graph", help="LDAG file or fixture:NAME")
    common.add_argument("--data-m0", dest="data_m0")
    common.add_argument("--data-m1", dest="data_m1")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="csicausal", description=__doc__.split("\n\n")[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name, parents=[common])
        if name == "dsep":
            sp.add_argument("--a", nargs="+", default=None)
            sp.add_argument("--b", nargs="+", default=None)
            sp.add_argument("--given", nargs="*", default=None)
            sp.add_argument("--context", nargs="*", default=None, metavar="VAR=LEVEL")
        if name == "simulate":
            sp.add_argument("--n", type=int)
        if name == "ingest":
            sp.add_argument("--raw")
            sp.add_argument("--schema")
            sp.add_argument("--rename")
    return p


def _apply_subcommand_flags(cfg: RunConfig, args):
    if args.command == "dsep":
        q = dict(cfg.dsep)
        for k in ("a", "b", "given"):
            if getattr(args, k) is not None:
                q[k] = getattr(args, k)
        if args.context is not None:
            try:
                q["context"] = dict(item.split("=", 1) for item in args.context)
            except ValueError:
                raise InputError("--context expects VAR=LEVEL pairs") from None
        cfg.dsep = q
    if args.command == "simulate" and args.n is not None:
        cfg.simulate = {**(cfg.simulate or {}), "n": args.n}
    if args.command == "ingest":
        for k in ("raw", "schema", "rename"):
            if getattr(args, k) is not None:
                setattr(cfg, k, getattr(args, k))
        _apply_survey_defaults(cfg)


INPUT_ERRORS = (InputError, LdagSyntaxError, LdagError, DataError, ing.IngestError, scm_mod.ScmError,
                sens.SensitivityError, FileNotFoundError, ValueError)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(stream=sys.stderr, level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _resolve_config(args)
        _apply_subcommand_flags(cfg, args)
        return COMMANDS[args.command](cfg)
    except (NotIdentified, ident.ContextDescendantError) as exc:
        log.error("not identifiable: %s", exc)
        return EXIT_NOT_IDENTIFIED
    except INPUT_ERRORS as exc:
        log.error("%s", exc)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
