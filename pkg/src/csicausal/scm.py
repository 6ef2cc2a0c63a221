"""Structural causal models over labelled DAGs.

Every node owns one exogenous uniform draw and a deterministic mechanism of its
parents and that draw, so counterfactual replay only needs the stored noise.
Mechanisms may branch on a context variable; in each branch they may only read
parents whose edge is present in that context.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np
import pandas as pd
from scipy import special, stats

from .functional import JointTable
from .graph import topological_sort
from .ldag import Ldag, parse_ldag, project, serialize_ldag


class ScmError(ValueError):
    pass


# -- mechanisms ---------------------------------------------------------------------


def _num(v) -> float:
    return float(v)


def _key(v) -> str:
    """Canonical text for a lookup key: ``2`` and ``2.0`` both become ``"2"``."""
    x = _num(v)
    return str(int(x)) if x.is_integer() else repr(x)


@dataclass(frozen=True)
class Linear:
    """``intercept + sum slope*parent + lookup[parent value] + a*mo(parent)``."""

    intercept: float = 0.0
    slopes: Mapping = field(default_factory=dict)
    lookups: Mapping = field(default_factory=dict)
    mo_parent: str | None = None
    mo_coef: float = 0.0
    mo_simplex: tuple = ()

    @property
    def parents(self) -> tuple:
        ps = list(self.slopes) + list(self.lookups)
        if self.mo_parent:
            ps.append(self.mo_parent)
        return tuple(dict.fromkeys(ps))

    def __call__(self, pv) -> np.ndarray:
        n = len(next(iter(pv.values()))) if pv else 1
        out = np.full(n, float(self.intercept))
        for p, b in self.slopes.items():
            out = out + float(b) * pv[p]
        for p, table in self.lookups.items():
            for value, b in table.items():
                out = out + float(b) * (pv[p] == _num(value))
        if self.mo_parent:
            steps = np.concatenate([[0.0], np.cumsum(self.mo_simplex)])
            x = pv[self.mo_parent].astype(int)
            if np.any(x < 1) or np.any(x > len(steps)):
                raise ScmError(f"{self.mo_parent} outside 1..{len(steps)} in monotonic term")
            out = out + self.mo_coef * steps[x - 1]
        return out

    def to_dict(self):
        d = {"intercept": self.intercept}
        if self.slopes:
            d["slopes"] = dict(self.slopes)
        if self.lookups:
            d["lookups"] = {p: {_key(k): v for k, v in t.items()} for p, t in self.lookups.items()}
        if self.mo_parent:
            d["mo"] = {"parent": self.mo_parent, "coef": self.mo_coef, "simplex": list(self.mo_simplex)}
        return d

    @classmethod
    def from_dict(cls, d):
        mo = d.get("mo") or {}
        return cls(
            d.get("intercept", 0.0),
            dict(d.get("slopes", {})),
            {p: {_num(k): v for k, v in t.items()} for p, t in d.get("lookups", {}).items()},
            mo.get("parent"),
            mo.get("coef", 0.0),
            tuple(mo.get("simplex", ())),
        )


class Mechanism:
    discrete = False

    @property
    def parents(self) -> tuple:
        raise NotImplementedError

    def sample(self, pv, u):
        raise NotImplementedError

    def parents_in(self, ctx_value=None) -> tuple:
        return self.parents


class _Discrete(Mechanism):
    discrete = True

    def pmf(self, pv, n) -> np.ndarray:
        raise NotImplementedError

    def sample(self, pv, u):
        p = self.pmf(pv, len(u))
        idx = (np.cumsum(p, axis=1) < u[:, None]).sum(axis=1)
        idx = np.minimum(idx, len(self.levels) - 1)
        return np.asarray(self.levels, dtype=float)[idx]


@dataclass(frozen=True)
class Cpt(_Discrete):
    """Conditional probability table; ``probs`` has shape ``(*parent cards, len(levels))``."""

    levels: tuple
    parent_names: tuple = ()
    parent_levels: tuple = ()
    probs: np.ndarray = None

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=float)
        object.__setattr__(self, "levels", tuple(_num(v) for v in self.levels))
        object.__setattr__(self, "parent_names", tuple(self.parent_names))
        object.__setattr__(self, "parent_levels", tuple(tuple(_num(v) for v in lv) for lv in self.parent_levels))
        object.__setattr__(self, "probs", probs)
        want = tuple(len(lv) for lv in self.parent_levels) + (len(self.levels),)
        if probs.shape != want:
            raise ScmError(f"CPT shape {probs.shape} does not match {want}")
        if np.any(probs < 0) or np.max(np.abs(probs.sum(axis=-1) - 1)) > 1e-12:
            raise ScmError("CPT rows must be non-negative and sum to 1")

    @property
    def parents(self):
        return self.parent_names

    def pmf(self, pv, n):
        idx = []
        for name, lv in zip(self.parent_names, self.parent_levels):
            vals = pv[name]
            pos = np.searchsorted(np.asarray(lv), vals) if list(lv) == sorted(lv) else None
            if pos is None or np.any(pos >= len(lv)) or np.any(np.asarray(lv)[np.minimum(pos, len(lv) - 1)] != vals):
                lookup = {v: i for i, v in enumerate(lv)}
                try:
                    pos = np.array([lookup[v] for v in vals])
                except KeyError as exc:
                    raise ScmError(f"value {exc.args[0]} of {name} not in CPT levels") from None
            idx.append(pos)
        if not idx:
            return np.broadcast_to(self.probs, (n, len(self.levels)))
        return self.probs[tuple(idx)]

    def __eq__(self, other):
        return (
            isinstance(other, Cpt)
            and self.levels == other.levels
            and self.parent_names == other.parent_names
            and self.parent_levels == other.parent_levels
            and np.array_equal(self.probs, other.probs)
        )

    __hash__ = None

    def to_dict(self):
        return {"type": "cpt", "levels": list(self.levels), "parents": list(self.parent_names),
                "parent_levels": [list(lv) for lv in self.parent_levels], "probs": self.probs.tolist()}


@dataclass(frozen=True)
class Logit(_Discrete):
    """Categorical draw with ``softmax(intercepts + linear terms)`` over ``levels``.

    ``slopes[p]`` is a per-level slope on the numeric parent ``p``;
    ``lookups[p][value]`` a per-level shift when parent ``p`` equals ``value``.
    """

    levels: tuple
    intercepts: tuple
    slopes: Mapping = field(default_factory=dict)
    lookups: Mapping = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "levels", tuple(_num(v) for v in self.levels))
        K = len(self.levels)
        if len(self.intercepts) != K:
            raise ScmError("one intercept per level required")
        for p, s in self.slopes.items():
            if len(s) != K:
                raise ScmError(f"slopes for {p} need one entry per level")
        for p, t in self.lookups.items():
            if any(len(v) != K for v in t.values()):
                raise ScmError(f"lookup rows for {p} need one entry per level")

    @property
    def parents(self):
        return tuple(dict.fromkeys(list(self.slopes) + list(self.lookups)))

    def pmf(self, pv, n):
        logits = np.tile(np.asarray(self.intercepts, dtype=float), (n, 1))
        for p, s in self.slopes.items():
            logits = logits + np.outer(pv[p], s)
        for p, t in self.lookups.items():
            for value, row in t.items():
                logits = logits + np.outer(pv[p] == _num(value), row)
        return special.softmax(logits, axis=1)

    def to_dict(self):
        return {"type": "logit", "levels": list(self.levels), "intercepts": list(self.intercepts),
                "slopes": {p: list(s) for p, s in self.slopes.items()},
                "lookups": {p: {_key(k): list(v) for k, v in t.items()} for p, t in self.lookups.items()}}


@dataclass(frozen=True)
class Constant(_Discrete):
    value: float
    levels: tuple = ()

    def __post_init__(self):
        levels = tuple(_num(v) for v in self.levels) or (_num(self.value),)
        object.__setattr__(self, "levels", levels)
        if _num(self.value) not in levels:
            raise ScmError(f"{self.value} is outside the support {levels}")

    @property
    def parents(self):
        return ()

    def pmf(self, pv, n):
        out = np.zeros((n, len(self.levels)))
        out[:, self.levels.index(_num(self.value))] = 1.0
        return out

    def to_dict(self):
        return {"type": "constant", "value": self.value, "levels": list(self.levels)}


@dataclass(frozen=True)
class Normal(Mechanism):
    mean: Linear
    sd: float = 1.0

    @property
    def parents(self):
        return self.mean.parents

    def sample(self, pv, u):
        return self.mean(pv) + self.sd * stats.norm.ppf(u)

    def expected(self, pv):
        return self.mean(pv)

    def to_dict(self):
        return {"type": "normal", "mean": self.mean.to_dict(), "sd": self.sd}


@dataclass(frozen=True)
class Gamma(Mechanism):
    """Gamma draw with mean ``exp(log_mean(parents))`` and fixed ``shape``."""

    log_mean: Linear
    shape: float = 1.0

    @property
    def parents(self):
        return self.log_mean.parents

    def expected(self, pv):
        return np.exp(self.log_mean(pv))

    def sample(self, pv, u):
        mu = self.expected(pv)
        return mu / self.shape * stats.gamma.ppf(u, self.shape)

    def to_dict(self):
        return {"type": "gamma", "log_mean": self.log_mean.to_dict(), "shape": self.shape}


@dataclass(frozen=True)
class ByContext(Mechanism):
    """Dispatch to ``branches[level]`` according to the value of ``context``."""

    context: str
    branches: Mapping

    def __post_init__(self):
        object.__setattr__(self, "branches", {str(k): v for k, v in self.branches.items()})
        kinds = {b.discrete for b in self.branches.values()}
        if len(kinds) > 1:
            raise ScmError("context branches must all be discrete or all continuous")
        if True in kinds:
            lv = {b.levels for b in self.branches.values()}
            if len(lv) > 1:
                raise ScmError("discrete context branches must share their levels")

    @property
    def discrete(self):
        return next(iter(self.branches.values())).discrete

    @property
    def levels(self):
        return next(iter(self.branches.values())).levels

    @property
    def parents(self):
        ps = [self.context]
        for b in self.branches.values():
            ps.extend(b.parents)
        return tuple(dict.fromkeys(ps))

    def parents_in(self, ctx_value=None):
        if ctx_value is None:
            return self.parents
        return self.branches[str(ctx_value)].parents

    def _masks(self, pv):
        c = pv[self.context]
        for key, branch in self.branches.items():
            yield c == _num(key), branch
        known = np.zeros(len(c), dtype=bool)
        for key in self.branches:
            known |= c == _num(key)
        if not known.all():
            raise ScmError(f"{self.context} takes a value without a branch")

    def _dispatch(self, pv, n, fn, width=None):
        out = np.zeros((n, width)) if width else np.zeros(n)
        for mask, branch in self._masks(pv):
            if mask.any():
                sub = {k: v[mask] for k, v in pv.items()}
                out[mask] = fn(branch, sub, mask)
        return out

    def sample(self, pv, u):
        return self._dispatch(pv, len(u), lambda b, sub, mask: b.sample(sub, u[mask]))

    def pmf(self, pv, n):
        return self._dispatch(pv, n, lambda b, sub, mask: b.pmf(sub, int(mask.sum())), len(self.levels))

    def expected(self, pv):
        n = len(pv[self.context])
        return self._dispatch(pv, n, lambda b, sub, mask: b.expected(sub))

    def to_dict(self):
        return {"type": "by_context", "context": self.context,
                "branches": {k: mechanism_to_dict(b) for k, b in self.branches.items()}}


def mechanism_to_dict(m: Mechanism) -> dict:
    return m.to_dict()


def mechanism_from_dict(d: dict) -> Mechanism:
    kind = d.get("type")
    if kind == "cpt":
        return Cpt(d["levels"], d.get("parents", ()), d.get("parent_levels", ()), d["probs"])
    if kind == "logit":
        return Logit(
            d["levels"], tuple(d["intercepts"]),
            {p: tuple(s) for p, s in d.get("slopes", {}).items()},
            {p: {_num(k): tuple(v) for k, v in t.items()} for p, t in d.get("lookups", {}).items()},
        )
    if kind == "constant":
        return Constant(d["value"], tuple(d.get("levels", ())))
    if kind == "normal":
        return Normal(Linear.from_dict(d["mean"]), d.get("sd", 1.0))
    if kind == "gamma":
        return Gamma(Linear.from_dict(d["log_mean"]), d.get("shape", 1.0))
    if kind == "by_context":
        return ByContext(d["context"], {k: mechanism_from_dict(b) for k, b in d["branches"].items()})
    raise ScmError(f"unknown mechanism type {kind!r}")


# -- the model ----------------------------------------------------------------------


@dataclass(frozen=True)
class ScmSpec:
    ldag: Ldag
    mechanisms: Mapping

    def __post_init__(self):
        object.__setattr__(self, "mechanisms", dict(self.mechanisms))
        problems = check_scm(self)
        if problems:
            raise ScmError("; ".join(problems))
        order = topological_sort(self.ldag.names, [(e.source, e.target) for e in self.ldag.edges])
        object.__setattr__(self, "_order", order)

    @property
    def order(self) -> tuple:
        return self._order

    def to_dict(self) -> dict:
        return {"graph": serialize_ldag(self.ldag),
                "mechanisms": {k: mechanism_to_dict(m) for k, m in sorted(self.mechanisms.items())}}

    @classmethod
    def from_dict(cls, d) -> "ScmSpec":
        graph = d["graph"]
        if "{" not in graph:
            graph = Path(graph).read_text("utf-8")
        return cls(parse_ldag(graph), {k: mechanism_from_dict(m) for k, m in d["mechanisms"].items()})

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, **kw)

    def digest(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()[:16]


def load_scm(path) -> ScmSpec:
    with open(path, encoding="utf-8") as fh:
        return ScmSpec.from_dict(json.load(fh))


def check_scm(scm: ScmSpec) -> list[str]:
    """Violations of the mechanism/graph consistency rules."""
    g = scm.ldag
    problems = []
    names = set(g.names)
    for v in sorted(names - set(scm.mechanisms)):
        problems.append(f"node {v} has no mechanism")
    for v in sorted(set(scm.mechanisms) - names):
        problems.append(f"mechanism for unknown node {v}")
    contexts = g.contexts
    full_parents = {v: {e.source for e in g.edges if e.target == v} for v in names}
    for v, mech in sorted(scm.mechanisms.items()):
        if v not in names:
            continue
        extra = set(mech.parents) - full_parents[v]
        if extra:
            problems.append(f"mechanism of {v} reads non-parents {sorted(extra)}")
            continue
        if v in contexts:
            if not mech.discrete or {str(int(x)) if float(x).is_integer() else str(x) for x in mech.levels} != set(contexts[v]):
                problems.append(f"context node {v} needs a discrete mechanism over its declared levels")
        for ctx in g.context_assignments():
            active = set(project(g, ctx).parents(v))
            for c, level in ctx.items():
                used = set(mech.parents_in(level)) if isinstance(mech, ByContext) and mech.context == c else set(mech.parents)
                if isinstance(mech, ByContext) and mech.context == c and level not in mech.branches:
                    problems.append(f"mechanism of {v} has no branch for {c}={level}")
                    continue
                bad = used - active
                if bad:
                    problems.append(f"mechanism of {v} reads {sorted(bad)} which are absent when {c}={level}")
    return problems


def _run(scm: ScmSpec, u: np.ndarray, overrides: Mapping | None = None) -> dict:
    overrides = overrides or {}
    n = u.shape[1]
    values = {}
    for i, v in enumerate(scm.order):
        mech = scm.mechanisms[v]
        if v in overrides:
            values[v] = np.broadcast_to(np.asarray(overrides[v], dtype=float), (n,)).copy()
            continue
        pv = {p: values[p] for p in mech.parents}
        values[v] = np.asarray(mech.sample(pv, u[i]), dtype=float)
    return values


def _noise(scm: ScmSpec, n: int, seed) -> np.ndarray:
    if n < 1:
        raise ScmError("n must be at least 1")
    rng = np.random.default_rng(seed)
    return rng.random((len(scm.order), n))


@dataclass
class SimDataset:
    frame: pd.DataFrame
    seed: int | None
    n: int
    scm_digest: str = ""

    def to_csv(self, path):
        path = Path(path)
        self.frame.to_csv(path, index=False)
        meta = {"seed": self.seed, "n": self.n, "scm_digest": self.scm_digest,
                "columns": list(self.frame.columns)}
        path.with_suffix(".meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True))


def simulate_observational(scm: ScmSpec, n: int, seed, include_latent=False, weights=None) -> SimDataset:
    """Ancestral sampling of ``n`` i.i.d. units; deterministic given ``seed``."""
    values = _run(scm, _noise(scm, n, seed))
    keep = [v for v in scm.order if include_latent or v in scm.ldag.observed]
    frame = pd.DataFrame({v: values[v] for v in sorted(keep)})
    frame["weight"] = 1.0 if weights is None else np.asarray(weights, dtype=float)
    return SimDataset(frame, seed, n, scm.digest())


def exact_joint(scm: ScmSpec, max_states: int = 10**6) -> JointTable:
    """Exact joint over every node (latents included) by enumeration."""
    order = scm.order
    for v in order:
        if not scm.mechanisms[v].discrete:
            raise ScmError(f"node {v} has a continuous mechanism")
    levels = {v: scm.mechanisms[v].levels for v in order}
    size = int(np.prod([len(levels[v]) for v in order], dtype=float))
    if size > max_states:
        raise ScmError(f"state space of {size} configurations exceeds {max_states}")
    grids = np.indices([len(levels[v]) for v in order]).reshape(len(order), -1)
    vals = {v: np.asarray(levels[v], dtype=float)[grids[i]] for i, v in enumerate(order)}
    prob = np.ones(grids.shape[1])
    for i, v in enumerate(order):
        mech = scm.mechanisms[v]
        pmf = mech.pmf({p: vals[p] for p in mech.parents}, grids.shape[1])
        prob = prob * pmf[np.arange(grids.shape[1]), grids[i]]
    probs = prob.reshape([len(levels[v]) for v in order])
    return JointTable(order, levels, probs)


def oracle_interventional(scm: ScmSpec, X: str, x) -> ScmSpec:
    """Mutilated model: ``X`` fixed to ``x`` and its incoming edges removed."""
    mech = scm.mechanisms[X]
    if mech.discrete and _num(x) not in mech.levels:
        raise ScmError(f"{x} is outside the support of {X}: {mech.levels}")
    g = scm.ldag
    edges = tuple(e for e in g.edges if e.target != X)
    new_graph = Ldag(g.nodes, edges, g.name + "_do")
    mechs = dict(scm.mechanisms)
    mechs[X] = Constant(x, mech.levels if mech.discrete else ())
    return ScmSpec(new_graph, mechs)


def interventional_marginal(scm: ScmSpec, X: str, x, keep) -> JointTable:
    """Exact ``P(keep | do(X=x))``."""
    return exact_joint(oracle_interventional(scm, X, x)).restrict(keep)


@dataclass(frozen=True)
class OracleEstimate:
    estimate: float
    se: float
    n_units: int


def counterfactual_replay(scm: ScmSpec, X, x_cf, n, seed, select=None):
    """Factual and counterfactual (``X := x_cf``) values for ``n`` units sharing noise.

    ``select`` optionally maps factual values to a boolean mask; only those
    units are replayed.
    """
    u = _noise(scm, n, seed)
    fact = _run(scm, u)
    mask = np.ones(n, dtype=bool) if select is None else np.asarray(select(fact), dtype=bool)
    if not mask.any():
        raise ScmError("no units in the selected stratum")
    cf = _run(scm, u[:, mask], {X: x_cf})
    return {k: v[mask] for k, v in fact.items()}, cf


def oracle_counterfactual_difference(scm: ScmSpec, X, x, M, m, n, seed, Y="Y", step=1) -> OracleEstimate:
    """Monte Carlo ground truth for ``E(Y_{x+step} - Y_x | X=x, M=m)``.

    Units are selected on their factual ``X`` and ``M``, then replayed with
    ``X := x + step`` holding every exogenous draw fixed. Returns the mean
    difference and its standard error.
    """
    mech = scm.mechanisms[X]
    x_cf = _num(x) + step
    if mech.discrete and x_cf not in mech.levels:
        raise ScmError(f"{x_cf} is outside the support of {X}")

    def select(v):
        keep = v[X] == _num(x)
        if M is not None:
            keep &= v[M] == _num(m)
        return keep

    try:
        fact, cf = counterfactual_replay(scm, X, x_cf, n, seed, select)
    except ScmError:
        raise ScmError(f"empty stratum {X}={x}, {M}={m}") from None
    diff = cf[Y] - fact[Y]
    k = len(diff)
    se = float(diff.std(ddof=1) / np.sqrt(k)) if k > 1 else float("nan")
    return OracleEstimate(float(diff.mean()), se, k)


# -- random models for testing ----------------------------------------------------------


def random_discrete_scm(ldag: Ldag, rng, card: int = 2, floor: float = 0.05) -> ScmSpec:
    """Random positive CPTs honouring every context-specific edge set.

    Nodes with labelled incoming edges get one table per level of the labelling
    context, each reading only the parents present in that context.
    """
    rng = np.random.default_rng(rng)
    contexts = ldag.contexts
    levels = {v: tuple(int(x) for x in contexts[v]) if v in contexts else tuple(range(card)) for v in ldag.names}

    def table(v, parents):
        shape = tuple(len(levels[p]) for p in parents) + (len(levels[v]),)
        raw = rng.uniform(floor, 1.0, size=shape)
        raw = raw / raw.sum(axis=-1, keepdims=True)
        return Cpt(levels[v], parents, tuple(levels[p] for p in parents), raw)

    mechs = {}
    for v in ldag.names:
        incoming = [e for e in ldag.edges if e.target == v]
        ctx_vars = sorted({c for e in incoming for c, _ in e.absent_in})
        if not ctx_vars:
            mechs[v] = table(v, tuple(sorted(e.source for e in incoming)))
            continue
        (c,) = ctx_vars
        branches = {}
        for level in contexts[c]:
            ps = tuple(sorted(e.source for e in incoming if e.present_in({c: level}) and e.source != c))
            branches[level] = table(v, ps)
        mechs[v] = ByContext(c, branches)
    return ScmSpec(ldag, mechs)


__all__ = [
    "ByContext", "Constant", "Cpt", "Gamma", "Linear", "Logit", "Normal", "OracleEstimate",
    "ScmError", "ScmSpec", "SimDataset", "check_scm", "counterfactual_replay", "exact_joint",
    "interventional_marginal", "load_scm", "oracle_counterfactual_difference",
    "oracle_interventional", "random_discrete_scm", "simulate_observational",
]
